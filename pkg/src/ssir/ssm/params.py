"""Parameter records for diagonal state-space systems and ZOH discretization.

The continuous system  dh/dt = A h + B x,  y = C h + D x  is kept in
diagonal form: A is stored as its N diagonal entries, B and C as length-N
vectors, D as a scalar feedthrough. Zero-order hold over a step dt > 0
turns it into the discrete recurrence  h[k] = Abar h[k-1] + Bbar x[k].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

# below this |dt * A| the exact Bbar formula is replaced by its series limit
ZOH_LIMIT = 1e-8


def _as_vector(v) -> torch.Tensor:
    t = torch.as_tensor(v, dtype=torch.float64)
    if t.ndim == 0:
        t = t.unsqueeze(0)
    if t.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {tuple(t.shape)}")
    return t


@dataclass
class SSMParams:
    """Continuous-time diagonal system (A, B, C, D) with step size dt."""

    A: torch.Tensor          # (N,) diagonal entries
    B: torch.Tensor          # (N,)
    C: torch.Tensor          # (N,)
    D: float = 0.0
    dt: float = 1.0

    def __post_init__(self):
        self.A = _as_vector(self.A)
        self.B = _as_vector(self.B)
        self.C = _as_vector(self.C)
        if not (self.A.shape == self.B.shape == self.C.shape):
            raise ValueError("A, B, C must share the state size N")
        if not torch.isfinite(self.A).all():
            raise ValueError("A has non-finite entries")

    @property
    def state_size(self) -> int:
        return self.A.shape[0]

    def is_stable(self) -> bool:
        """True when every diagonal entry has non-positive real part.

        Advisory only: training is free to wander outside the stable set.
        """
        return bool((self.A <= 0).all())


@dataclass
class DiscreteSSM:
    """ZOH-discretized system: h[k] = Abar h[k-1] + Bbar x[k], y = C h + D x."""

    Abar: torch.Tensor       # (N,)
    Bbar: torch.Tensor       # (N,)
    C: torch.Tensor          # (N,)
    D: float = 0.0

    def __post_init__(self):
        self.Abar = _as_vector(self.Abar)
        self.Bbar = _as_vector(self.Bbar)
        self.C = _as_vector(self.C)
        if not (self.Abar.shape == self.Bbar.shape == self.C.shape):
            raise ValueError("Abar, Bbar, C must share the state size N")

    @property
    def state_size(self) -> int:
        return self.Abar.shape[0]


@dataclass
class SelectiveParams:
    """Weights of an input-dependent (selective) scan over d-dim tokens.

    Per token k the step size, input map, and output map are functions of
    the token itself:

        dt_k = softplus(w_dt @ x_k + b_dt)        (d,)  strictly positive
        B_k  = w_B @ x_k                          (N,)
        C_k  = w_C @ x_k                          (N,)

    A (d, N) and D (d,) are shared across tokens. ZOH is applied per token
    with the same limit handling as ``zoh_discretize``.
    """

    A: torch.Tensor                      # (d, N)
    w_dt: torch.Tensor                   # (d, d)
    b_dt: torch.Tensor                   # (d,)
    w_B: torch.Tensor                    # (N, d)
    w_C: torch.Tensor                    # (N, d)
    D: torch.Tensor = field(default=None)  # (d,), zeros when omitted

    def __post_init__(self):
        if self.D is None:
            self.D = torch.zeros(self.A.shape[0], dtype=self.A.dtype)
        d, n = self.A.shape
        expect = {"w_dt": (d, d), "b_dt": (d,), "w_B": (n, d),
                  "w_C": (n, d), "D": (d,)}
        for name, shape in expect.items():
            got = tuple(getattr(self, name).shape)
            if got != shape:
                raise ValueError(f"{name} has shape {got}, expected {shape}")

    @property
    def token_dim(self) -> int:
        return self.A.shape[0]

    @property
    def state_size(self) -> int:
        return self.A.shape[1]


def zoh_bbar_factor(z: torch.Tensor) -> torch.Tensor:
    """(exp(z) - 1) / z with the |z| < ZOH_LIMIT branch replaced by 1.

    Multiplying by dt*B turns this into the exact ZOH input matrix; expm1
    keeps full precision where the branch does not fire.
    """
    safe = torch.where(z.abs() < ZOH_LIMIT, torch.ones_like(z), z)
    factor = torch.expm1(safe) / safe
    return torch.where(z.abs() < ZOH_LIMIT, torch.ones_like(z), factor)


def zoh_discretize(params: SSMParams) -> DiscreteSSM:
    """Exact zero-order-hold discretization of a diagonal system.

        Abar = exp(dt * A)
        Bbar = ((exp(dt * A) - 1) / A) * B,  with the A -> 0 limit dt * B

    Raises ValueError when dt is not strictly positive.
    """
    if not params.dt > 0:
        raise ValueError(f"ZOH requires dt > 0, got {params.dt}")
    z = params.dt * params.A
    abar = torch.exp(z)
    bbar = params.dt * zoh_bbar_factor(z) * params.B
    return DiscreteSSM(Abar=abar, Bbar=bbar, C=params.C.clone(), D=params.D)
