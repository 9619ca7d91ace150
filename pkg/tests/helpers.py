"""Independent numerical oracles used across the suite."""
import numpy as np
import torch


def central_diff(fn, tensors, h=1e-6, max_entries=None, rng=None):
    """Central-difference gradient of scalar ``fn()`` w.r.t. each tensor, in place.

    With ``max_entries`` only a random subset of entries per tensor is probed;
    returns ``[(flat_indices, fd_values)]``.
    """
    rng = rng or np.random.default_rng(0)
    out = []
    for t in tensors:
        flat = t.data.view(-1)
        n = flat.numel()
        idx = np.arange(n) if max_entries is None or n <= max_entries else \
            rng.choice(n, size=max_entries, replace=False)
        vals = np.empty(len(idx))
        for k, i in enumerate(idx):
            orig = flat[i].item()
            flat[i] = orig + h
            fp = float(fn().detach())
            flat[i] = orig - h
            fm = float(fn().detach())
            flat[i] = orig
            vals[k] = (fp - fm) / (2 * h)
        out.append((idx, vals))
    return out


def analytic_grad(fn, tensors):
    for t in tensors:
        t.grad = None
    fn().backward()
    return [t.grad.detach().clone() if t.grad is not None else torch.zeros_like(t) for t in tensors]


def grad_rel_error(fn, tensors, h=1e-6, max_entries=None, seed=0):
    """``||g_autograd - g_fd|| / max(||g_autograd||, ||g_fd||)`` over all probed entries.

    Joint rather than per tensor: some gradients are structurally zero (a key
    bias under softmax), where a per-tensor ratio would only measure FD noise.
    """
    ana = analytic_grad(fn, tensors)
    fds = central_diff(fn, tensors, h, max_entries, np.random.default_rng(seed))
    a = np.concatenate([g.reshape(-1).double().numpy()[idx] for g, (idx, _) in zip(ana, fds)])
    fd = np.concatenate([v for _, v in fds])
    denom = max(np.linalg.norm(a), np.linalg.norm(fd), 1e-12)
    return float(np.linalg.norm(a - fd) / denom)
