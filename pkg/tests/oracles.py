"""Independent reference computations shared by several test modules."""

import numpy as np
import torch

FD_EPS = 1e-3
ZERO_GRAD = 1e-9


def central_differences(tensors, loss_fn, eps=FD_EPS):
    """Numerical gradient of ``loss_fn()`` for every entry of every tensor.

    Entries are nudged in place (and restored), so ``loss_fn`` must read the
    tensors it is handed rather than copies of them.
    """
    out = {}
    with torch.no_grad():
        for name, t in tensors.items():
            flat = t.view(-1)
            g = np.zeros(flat.numel())
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = float(loss_fn())
                flat[i] = orig - eps
                down = float(loss_fn())
                flat[i] = orig
                g[i] = (up - down) / (2 * eps)
            out[name] = g.reshape(tuple(t.shape))
    return out


def relative_error(analytic, numeric):
    """Worst entry error scaled by the tensor's largest numerical gradient.

    A tensor whose true gradient vanishes (both sides below ``ZERO_GRAD``)
    counts as exact agreement.
    """
    a, n = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    scale = np.abs(n).max() if n.size else 0.0
    if scale < ZERO_GRAD:
        return 0.0 if np.abs(a).max(initial=0.0) < ZERO_GRAD else np.inf
    return float(np.abs(a - n).max() / scale)


def worst_gradient_error(tensors, loss_fn, analytic, eps=FD_EPS):
    numeric = central_differences(tensors, loss_fn, eps)
    errs = {k: relative_error(analytic[k].detach().numpy(), numeric[k]) for k in tensors}
    return max(errs.values()), errs


def union_find_components(n, edges):
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    return len({find(i) for i in range(n)})


def gaussian_marginal(m0, s0, m1, s1, t):
    """Mean and std of (1-t) x0 + t x1 for independent Gaussian endpoints."""
    mean = (1 - t) * m0 + t * m1
    std = np.sqrt(((1 - t) * s0) ** 2 + (t * s1) ** 2)
    return mean, std


def gaussian_velocity(m0, s0, m1, s1, t, x):
    """E[x1 - x0 | x_t = x] for the linear interpolant between Gaussians."""
    mean, std = gaussian_marginal(m0, s0, m1, s1, t)
    cov = t * s1 ** 2 - (1 - t) * s0 ** 2  # Cov(x1 - x0, x_t)
    return (m1 - m0) + cov / std ** 2 * (x - mean)
