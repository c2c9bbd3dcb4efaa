"""Scan execution for discrete state-space systems.

Three routes to the same sequence map:

* ``ssm_scan_sequential``    - the plain recurrence, one step per token.
* ``ssm_scan_convolutional`` - causal convolution with the structured
                               kernel (C Bbar, C Abar Bbar, ...); valid for
                               time-invariant parameters only.
* ``selective_scan``         - the input-dependent variant where dt, B, C
                               are recomputed from every token, with ZOH
                               applied per token. Runs either sequentially
                               or as a blocked parallel associative scan.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

from .backend import linear_recurrence
from .params import DiscreteSSM, SelectiveParams, zoh_bbar_factor


def _check_discrete(d):
    if isinstance(d, SelectiveParams):
        raise TypeError(
            "time-varying (selective) parameters are not valid here; "
            "use selective_scan for the input-dependent mode")
    if not isinstance(d, DiscreteSSM):
        raise TypeError(f"expected DiscreteSSM, got {type(d).__name__}")


def _seq_to_tensor(x, dtype) -> tuple[torch.Tensor, bool]:
    t = torch.as_tensor(x, dtype=dtype)
    if t.ndim == 0:
        raise ValueError("input sequence must have at least one dimension")
    squeeze = t.ndim == 1
    if squeeze:
        t = t.unsqueeze(0)
    return t, squeeze


def ssm_scan_sequential(x, d: DiscreteSSM, h0: torch.Tensor | None = None,
                        impl: str = "auto"):
    """Run the recurrence h[k] = Abar h[k-1] + Bbar x[k], y = C h + D x.

    Args:
        x: scalar input sequence, shape (L,) or (B, L).
        d: discretized system.
        h0: optional initial state, shape (N,) or (B, N); zeros by default.
        impl: recurrence backend ("auto", "compiled", "python", "blocked").

    Returns:
        (y, h_last): outputs with x's shape, and the final state.
    """
    _check_discrete(d)
    x, squeeze = _seq_to_tensor(x, d.Abar.dtype)
    B, L = x.shape
    if L < 1:
        raise ValueError("sequence must have length >= 1")
    N = d.state_size
    if h0 is None:
        h0 = x.new_zeros(B, N)
    else:
        h0 = torch.as_tensor(h0, dtype=x.dtype)
        if h0.ndim == 1:
            h0 = h0.unsqueeze(0).expand(B, N)
    a = d.Abar.to(x.dtype).expand(B, L, N)
    b = d.Bbar.to(x.dtype) * x.unsqueeze(-1)            # (B, L, N)
    h = linear_recurrence(a, b, h0, impl=impl)
    y = h @ d.C.to(x.dtype) + d.D * x
    h_last = h[:, -1, :]
    if squeeze:
        return y[0], h_last[0]
    return y, h_last


def ssm_kernel(d: DiscreteSSM, L: int) -> torch.Tensor:
    """Structured convolution kernel (C Bbar, C Abar Bbar, ..., C Abar^{L-1} Bbar)."""
    _check_discrete(d)
    if L < 1:
        raise ValueError(f"kernel length must be >= 1, got {L}")
    N = d.state_size
    powers = torch.ones(L, N, dtype=d.Abar.dtype)
    if L > 1:
        powers[1:] = torch.cumprod(d.Abar.expand(L - 1, N), dim=0)
    return powers @ (d.C * d.Bbar)


def ssm_scan_convolutional(x, d: DiscreteSSM) -> torch.Tensor:
    """Causal convolution route: y = x * Kbar + D x (zero initial state).

    Only valid for time-invariant parameters; selective parameters raise
    TypeError. Matches ssm_scan_sequential up to accumulation error.
    """
    _check_discrete(d)
    x, squeeze = _seq_to_tensor(x, d.Abar.dtype)
    B, L = x.shape
    if L < 1:
        raise ValueError("sequence must have length >= 1")
    k = ssm_kernel(d, L)
    xf = F.pad(x.unsqueeze(1), (L - 1, 0))               # left pad: causal
    y = F.conv1d(xf, k.flip(0).reshape(1, 1, L)).squeeze(1)
    y = y + d.D * x
    return y[0] if squeeze else y


def selective_discretize(x: torch.Tensor, sel: SelectiveParams):
    """Per-token ZOH coefficients for the selective scan.

    Args:
        x: tokens, shape (B, L, d).
        sel: selective parameter record.

    Returns:
        (abar, bx, C, dt): abar and bx shaped (B, L, d, N), C (B, L, N),
        dt (B, L, d). bx already folds the token value into Bbar.
    """
    dt = F.softplus(x @ sel.w_dt.T + sel.b_dt)           # (B, L, d) > 0
    Bk = x @ sel.w_B.T                                   # (B, L, N)
    Ck = x @ sel.w_C.T                                   # (B, L, N)
    z = dt.unsqueeze(-1) * sel.A                         # (B, L, d, N)
    abar = torch.exp(z)
    bbar = dt.unsqueeze(-1) * zoh_bbar_factor(z) * Bk.unsqueeze(-2)
    bx = bbar * x.unsqueeze(-1)
    return abar, bx, Ck, dt


def selective_scan(x, sel: SelectiveParams, mode: str = "sequential",
                   impl: str | None = None) -> torch.Tensor:
    """Input-dependent scan: h[k] = Abar_k h[k-1] + Bbar_k x[k], y = C_k h + D x.

    Args:
        x: tokens, shape (L, d) or (B, L, d).
        sel: selective parameter record (see SelectiveParams).
        mode: "sequential" (stepwise recurrence) or "parallel" (blocked
            associative scan); both produce the same outputs to within
            accumulation tolerance.
        impl: backend override; defaults follow the mode.

    Returns:
        y with x's shape.
    """
    x = torch.as_tensor(x, dtype=sel.A.dtype) if not torch.is_tensor(x) \
        else x.to(sel.A.dtype)
    squeeze = x.ndim == 2
    if squeeze:
        x = x.unsqueeze(0)
    if x.shape[-1] != sel.token_dim:
        raise ValueError(
            f"token dim {x.shape[-1]} does not match parameters ({sel.token_dim})")
    if impl is None:
        if mode == "sequential":
            impl = "auto"
        elif mode == "parallel":
            impl = "blocked"
        else:
            raise ValueError(f"unknown selective scan mode {mode!r}")
    abar, bx, Ck, _ = selective_discretize(x, sel)
    # recurrence runs over (B, d, L, N) rows
    h = linear_recurrence(abar.permute(0, 2, 1, 3), bx.permute(0, 2, 1, 3),
                          impl=impl)
    y = torch.einsum("bdln,bln->bld", h, Ck) + sel.D * x
    return y[0] if squeeze else y
