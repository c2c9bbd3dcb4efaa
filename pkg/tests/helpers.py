"""Shared test oracles: scalar ZOH closed form and central-difference
gradients. These stay deliberately independent of the library code paths
they are used to check."""

import math

import torch


def zoh_scalar_oracle(a: float, b: float, dt: float, limit: float = 1e-8):
    """Elementwise ZOH via python-scalar math with the small-|dt*a| branch."""
    z = dt * a
    abar = math.exp(z)
    if abs(z) < limit:
        bbar = dt * b
    else:
        bbar = math.expm1(z) / a * b
    return abar, bbar


def central_diff(f, tensor: torch.Tensor, idx, eps: float = 1e-5) -> float:
    """Central-difference derivative of scalar f w.r.t. tensor[idx]."""
    with torch.no_grad():
        orig = tensor[idx].item()
        tensor[idx] = orig + eps
        hi = float(f())
        tensor[idx] = orig - eps
        lo = float(f())
        tensor[idx] = orig
    return (hi - lo) / (2 * eps)


def rel_err(a: float, b: float, floor: float = 1e-6) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def check_grads_against_fd(f, params, max_checks_per_tensor=None,
                           eps=1e-5, tol=1e-3, rng=None):
    """Compare autograd gradients of scalar f() against central differences.

    params: iterable of (name, tensor) with requires_grad set. Checks every
    element unless max_checks_per_tensor caps it (sampled with rng).
    Returns the worst relative error seen.
    """
    params = list(params)
    for _, p in params:
        p.grad = None
    loss = f()
    loss.backward()
    worst = 0.0
    for name, p in params:
        grad = p.grad
        assert grad is not None, f"no gradient reached {name}"
        flat_idx = list(range(p.numel()))
        if max_checks_per_tensor and len(flat_idx) > max_checks_per_tensor:
            assert rng is not None
            flat_idx = list(rng.choice(len(flat_idx), max_checks_per_tensor,
                                       replace=False))
        for fi in flat_idx:
            idx = torch.unravel_index(torch.tensor(fi), p.shape)
            fd = central_diff(lambda: f().item(), p.data, idx, eps)
            an = grad[idx].item()
            if abs(fd) < 1e-6 and abs(an) < 1e-6:
                continue  # both numerically zero; fd noise dominates
            err = rel_err(fd, an)
            assert err < tol, (f"{name}[{tuple(int(i) for i in idx)}]: "
                               f"fd={fd:.6g} analytic={an:.6g} rel={err:.3g}")
            worst = max(worst, err)
    return worst
