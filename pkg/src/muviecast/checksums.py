"""Stable fingerprints of module parameters, used to prove frozen modules
stay frozen across a training run."""

import hashlib

import torch


def state_checksum(module: torch.nn.Module) -> str:
    """sha256 over the module's state dict, order-independent."""
    h = hashlib.sha256()
    state = module.state_dict()
    for key in sorted(state):
        h.update(key.encode())
        t = state[key].detach().cpu().contiguous()
        h.update(str(t.dtype).encode())
        h.update(str(tuple(t.shape)).encode())
        h.update(t.numpy().tobytes())
    return h.hexdigest()
