"""Execution backends for the linear scan recurrence h[l] = a[l]*h[l-1] + b[l].

Three interchangeable implementations:

* ``compiled``  - Cython kernel with a hand-written adjoint backward,
                  wrapped in a torch.autograd.Function. Fastest sequential
                  path on CPU; built optionally at install time.
* ``python``    - plain per-step loop in torch ops. Always available; the
                  reference the other two are tested against.
* ``blocked``   - blocked parallel associative scan over (a, b) pairs with
                  the combiner (a2, b2) o (a1, b1) = (a2*a1, a2*b1 + b2).
                  Differentiable through torch autograd.

``linear_recurrence`` dispatches between them; "auto" means compiled when
the extension imported, else the python loop.
"""

from __future__ import annotations

import math

import torch

try:
    from . import _scan_cy

    HAS_COMPILED = True
except ImportError:  # extension not built; pure fallback
    _scan_cy = None
    HAS_COMPILED = False

IMPLS = ("compiled", "python", "blocked")


def available_impls() -> tuple[str, ...]:
    """Names of the recurrence implementations usable in this process."""
    return IMPLS if HAS_COMPILED else tuple(i for i in IMPLS if i != "compiled")


class _CompiledScan(torch.autograd.Function):
    """Autograd wrapper around the Cython forward/adjoint kernels."""

    @staticmethod
    def forward(ctx, a, b, h0):
        a = a.detach().contiguous()
        b = b.detach().contiguous()
        h0 = h0.detach().contiguous()
        h = torch.empty_like(a)
        _scan_cy.scan_forward(a.numpy(), b.numpy(), h0.numpy(), h.numpy())
        ctx.save_for_backward(a, h, h0)
        return h

    @staticmethod
    def backward(ctx, grad_h):
        a, h, h0 = ctx.saved_tensors
        grad_h = grad_h.detach().contiguous()
        grad_a = torch.empty_like(a)
        grad_b = torch.empty_like(a)
        grad_h0 = torch.empty_like(h0)
        _scan_cy.scan_backward(a.numpy(), h.numpy(), h0.numpy(),
                               grad_h.numpy(), grad_a.numpy(),
                               grad_b.numpy(), grad_h0.numpy())
        return grad_a, grad_b, grad_h0


def _scan_compiled(a, b, h0):
    M = a.shape[:-2].numel()
    L, N = a.shape[-2:]
    h = _CompiledScan.apply(a.reshape(M, L, N), b.reshape(M, L, N),
                            h0.reshape(M, N))
    return h.reshape(a.shape)


def _scan_python(a, b, h0):
    states = []
    h = h0
    for l in range(a.shape[-2]):
        h = a[..., l, :] * h + b[..., l, :]
        states.append(h)
    return torch.stack(states, dim=-2)


def _scan_blocked(a, b, h0, block: int | None = None):
    """Blocked associative scan: parallel within chunks, carry across them.

    Chunks are padded with identity pairs (a=1, b=0) at the end, which leave
    the causal prefixes untouched.
    """
    L = a.shape[-2]
    if block is None:
        block = max(8, 1 << max(0, math.isqrt(L).bit_length()))
    pad = (-L) % block
    if pad:
        shape = a.shape[:-2] + (pad, a.shape[-1])
        a = torch.cat([a, a.new_ones(shape)], dim=-2)
        b = torch.cat([b, b.new_zeros(shape)], dim=-2)
    nc = a.shape[-2] // block
    N = a.shape[-1]
    ac = a.reshape(a.shape[:-2] + (nc, block, N))
    bc = b.reshape(ac.shape)

    # pass 1: inclusive combine within each chunk, vectorized across chunks
    prod, part = [], []
    run_a = torch.ones_like(ac[..., 0, :])
    run_b = torch.zeros_like(run_a)
    for k in range(block):
        run_a = ac[..., k, :] * run_a
        run_b = ac[..., k, :] * run_b + bc[..., k, :]
        prod.append(run_a)
        part.append(run_b)
    prod = torch.stack(prod, dim=-2)   # cumulative products A_{c,k}
    part = torch.stack(part, dim=-2)   # zero-state chunk solutions S_{c,k}

    # pass 2: carry the state across chunk boundaries
    inits = []
    carry = h0
    for c in range(nc):
        inits.append(carry)
        carry = prod[..., c, -1, :] * carry + part[..., c, -1, :]
    inits = torch.stack(inits, dim=-2).unsqueeze(-2)   # (..., nc, 1, N)

    # pass 3: broadcast the chunk-entry state into every position
    h = prod * inits + part
    h = h.reshape(a.shape[:-2] + (nc * block, N))
    return h[..., :L, :]


def linear_recurrence(a: torch.Tensor, b: torch.Tensor,
                      h0: torch.Tensor | None = None,
                      impl: str = "auto") -> torch.Tensor:
    """All states of h[l] = a[l]*h[l-1] + b[l], shape (..., L, N).

    Args:
        a, b: coefficient/input tensors, shape (..., L, N).
        h0: initial state (..., N); zeros when omitted.
        impl: "auto", "compiled", "python", or "blocked".
    """
    if a.shape != b.shape:
        raise ValueError(f"a/b shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if h0 is None:
        h0 = a.new_zeros(a.shape[:-2] + a.shape[-1:])
    if impl == "auto":
        impl = "compiled" if HAS_COMPILED else "python"
    if impl == "compiled":
        if not HAS_COMPILED:
            raise RuntimeError("compiled scan kernel is not available")
        if a.is_cuda:
            raise RuntimeError("compiled scan kernel is CPU-only")
        return _scan_compiled(a, b, h0)
    if impl == "python":
        return _scan_python(a, b, h0)
    if impl == "blocked":
        return _scan_blocked(a, b, h0)
    raise ValueError(f"unknown scan impl {impl!r}")
