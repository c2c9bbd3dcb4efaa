"""DDPM engine: noise schedule, forward noising, prediction-target algebra,
reverse posterior step, and the conditional sampling loop.

Conventions: images live in [0, 1]; the diffusion state lives in [-1, 1]
via x -> 2x - 1. Timesteps run t = 1..T with alpha_bar indexed 0..T and
alpha_bar[0] = 1. Schedule tables are float64; coefficients are cast to the
data dtype at the point of use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

TARGETS = ("noise", "image_start", "v_parameterization")

MAX_SAMPLING_STEPS = 100


class BudgetError(ValueError):
    """Raised when a sampling request exceeds the inference-step budget."""


@dataclass
class NoiseSchedule:
    """Per-timestep variance table and its cumulative signal fractions.

    beta[t-1] is the step variance for t = 1..T; alpha_bar[t] is the
    cumulative product of (1 - beta) with alpha_bar[0] = 1.
    """

    T: int
    beta: torch.Tensor         # (T,)
    alpha_bar: torch.Tensor    # (T+1,)

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("schedule needs T >= 1")
        if self.beta.shape != (self.T,) or self.alpha_bar.shape != (self.T + 1,):
            raise ValueError("schedule table shapes do not match T")
        if not ((self.beta > 0).all() and (self.beta < 1).all()):
            raise ValueError("beta must lie in (0, 1)")
        if self.alpha_bar[0] != 1.0:
            raise ValueError("alpha_bar[0] must be exactly 1")
        if not (self.alpha_bar[1:] < self.alpha_bar[:-1]).all():
            raise ValueError("alpha_bar must be strictly decreasing")

    def abar(self, t, like: torch.Tensor) -> torch.Tensor:
        """alpha_bar at (possibly per-batch) timestep t, broadcast to `like`."""
        return _gather(self.alpha_bar, t, like)

    def beta_at(self, t, like: torch.Tensor) -> torch.Tensor:
        return _gather(self.beta, torch.as_tensor(t) - 1, like)


def _gather(table: torch.Tensor, t, like: torch.Tensor) -> torch.Tensor:
    t = torch.as_tensor(t, dtype=torch.long)
    vals = table[t].to(like.dtype)
    if vals.ndim == 0:
        return vals
    return vals.reshape(vals.shape + (1,) * (like.ndim - vals.ndim))


@dataclass
class DiffusionSample:
    """One noised training example: clean image, timestep, noise, the
    noised state, and the rotated (velocity) target implied by them."""

    x0: torch.Tensor
    t: torch.Tensor
    eps: torch.Tensor
    xt: torch.Tensor
    v: torch.Tensor

    @classmethod
    def create(cls, x0: torch.Tensor, t, eps: torch.Tensor,
               schedule: "NoiseSchedule") -> "DiffusionSample":
        xt = q_sample(x0, t, eps, schedule)
        v = make_target("v_parameterization", x0, eps, t, schedule)
        return cls(x0=x0, t=torch.as_tensor(t), eps=eps, xt=xt, v=v)


def _check_t(t, T):
    t = torch.as_tensor(t)
    if ((t < 1) | (t > T)).any():
        raise ValueError(f"timestep out of range 1..{T}")


def build_cosine_schedule(T: int, s: float = 0.008,
                          max_beta: float = 0.999) -> NoiseSchedule:
    """Cosine schedule: alpha_bar(t) proportional to cos^2 of warped t/T.

    beta is derived from consecutive alpha_bar ratios, clipped at max_beta,
    and alpha_bar is rebuilt from the clipped betas so the cumulative
    product relation holds exactly.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    grid = torch.arange(T + 1, dtype=torch.float64) / T
    f = torch.cos((grid + s) / (1 + s) * math.pi / 2) ** 2
    abar_raw = f / f[0]
    beta = (1 - abar_raw[1:] / abar_raw[:-1]).clamp(max=max_beta)
    alpha_bar = torch.cat([torch.ones(1, dtype=torch.float64),
                           torch.cumprod(1 - beta, dim=0)])
    return NoiseSchedule(T=T, beta=beta, alpha_bar=alpha_bar)


def q_step(x_prev: torch.Tensor, t, schedule: NoiseSchedule,
           rng: torch.Generator | None = None) -> torch.Tensor:
    """One forward noising step: sqrt(1-beta_t) x_{t-1} + sqrt(beta_t) z."""
    _check_t(t, schedule.T)
    beta = schedule.beta_at(t, x_prev)
    z = torch.randn(x_prev.shape, generator=rng, dtype=x_prev.dtype)
    return torch.sqrt(1 - beta) * x_prev + torch.sqrt(beta) * z


def q_sample(x0: torch.Tensor, t, eps: torch.Tensor,
             schedule: NoiseSchedule) -> torch.Tensor:
    """Direct jump to timestep t: sqrt(abar_t) x0 + sqrt(1-abar_t) eps."""
    if eps.shape != x0.shape:
        raise ValueError("eps must match x0's shape")
    _check_t(t, schedule.T)
    abar = schedule.abar(t, x0)
    return torch.sqrt(abar) * x0 + torch.sqrt(1 - abar) * eps


def make_target(kind: str, x0: torch.Tensor, eps: torch.Tensor, t,
                schedule: NoiseSchedule) -> torch.Tensor:
    """Regression target implied by the configured prediction kind."""
    if kind == "noise":
        return eps
    if kind == "image_start":
        return x0
    if kind == "v_parameterization":
        abar = schedule.abar(t, x0)
        return torch.sqrt(abar) * eps - torch.sqrt(1 - abar) * x0
    raise ValueError(f"unknown prediction target {kind!r}")


def convert_prediction(pred: torch.Tensor, kind: str, x_t: torch.Tensor, t,
                       schedule: NoiseSchedule, clamp_x0: bool = True):
    """(eps_hat, x0_hat) implied by a raw model output under `kind`.

    x0_hat is clamped to [-1, 1] unless clamp_x0 is False (the conversions
    are exact bijections pre-clamp). After clamping, eps_hat is re-derived
    from the clamped x0_hat so the returned pair stays consistent with
    x_t = sqrt(abar) x0_hat + sqrt(1-abar) eps_hat; without that, few-step
    sampling re-injects the unclamped estimate and diverges at the
    near-zero-signal end of the schedule.
    """
    _check_t(t, schedule.T)
    abar = schedule.abar(t, x_t)
    sq, sq1m = torch.sqrt(abar), torch.sqrt(1 - abar)
    if kind == "noise":
        eps_hat = pred
        x0_hat = (x_t - sq1m * pred) / sq
    elif kind == "image_start":
        x0_hat = pred
        eps_hat = (x_t - sq * pred) / sq1m
    elif kind == "v_parameterization":
        x0_hat = sq * x_t - sq1m * pred
        eps_hat = sq * pred + sq1m * x_t
    else:
        raise ValueError(f"unknown prediction target {kind!r}")
    if clamp_x0:
        x0_hat = x0_hat.clamp(-1.0, 1.0)
        eps_hat = (x_t - sq * x0_hat) / sq1m
    return eps_hat, x0_hat


def posterior_step(x_t: torch.Tensor, t: int, eps_hat: torch.Tensor,
                   x0_hat: torch.Tensor, schedule: NoiseSchedule,
                   rng: torch.Generator | None = None,
                   deterministic: bool = False,
                   t_prev: int | None = None) -> torch.Tensor:
    """One reverse transition from timestep t down to t_prev (default t-1).

    Stochastic mode draws from the Gaussian posterior of the forward chain
    given (x_t, x0_hat), with the model covariance fixed to the posterior
    variance. Deterministic mode is the zero-noise implicit update
    sqrt(abar_prev) x0_hat + sqrt(1-abar_prev) eps_hat.
    """
    _check_t(t, schedule.T)
    if t_prev is None:
        t_prev = t - 1
    if not 0 <= t_prev < t:
        raise ValueError(f"t_prev must lie in [0, t), got {t_prev}")
    abar_prev = schedule.abar(t_prev, x_t)
    if deterministic:
        return torch.sqrt(abar_prev) * x0_hat + torch.sqrt(1 - abar_prev) * eps_hat
    abar_t = schedule.abar(t, x_t)
    beta_eff = 1 - abar_t / abar_prev
    var = (1 - abar_prev) / (1 - abar_t) * beta_eff
    mean = (torch.sqrt(abar_prev) * beta_eff / (1 - abar_t)) * x0_hat \
        + (torch.sqrt(abar_t / abar_prev) * (1 - abar_prev) / (1 - abar_t)) * x_t
    z = torch.randn(x_t.shape, generator=rng, dtype=x_t.dtype)
    return mean + torch.sqrt(var) * z


def sampling_timesteps(T: int, n_steps: int) -> list[int]:
    """Uniformly strided decreasing timesteps covering both endpoints T and 1."""
    if not 1 <= n_steps <= T:
        raise ValueError(f"n_steps must lie in 1..T={T}, got {n_steps}")
    if n_steps == 1:
        return [T]
    ts = torch.linspace(T, 1, n_steps).round().long().tolist()
    assert len(set(ts)) == n_steps, "strided timesteps collided"
    return ts


def sample_loop(model, cond: torch.Tensor, schedule: NoiseSchedule,
                n_steps: int = MAX_SAMPLING_STEPS, target: str = "noise",
                mode: str = "ancestral",
                rng: torch.Generator | None = None,
                allow_large_steps: bool = False,
                record_trajectory: bool = False):
    """Restore an image by reverse diffusion conditioned on `cond`.

    Args:
        model: callable model(x_t, t, cond_pm1) -> raw prediction, where
            cond_pm1 is the condition mapped to [-1, 1].
        cond: condition image batch in [0, 1], shape (B, 3, H, W).
        schedule: noise schedule.
        n_steps: number of model invocations; capped at 100 unless
            allow_large_steps is set.
        target: prediction target the model was trained for.
        mode: "ancestral" (stochastic posterior steps, the default) or
            "deterministic" (zero-noise implicit updates).
        rng: torch generator for x_T and the ancestral noise.
        record_trajectory: also return the intermediate states in [0, 1].

    Returns:
        Restored batch in [0, 1]; with record_trajectory, a (restored,
        frames) pair.
    """
    if mode not in ("deterministic", "ancestral"):
        raise ValueError(f"unknown sampling mode {mode!r}")
    if n_steps > MAX_SAMPLING_STEPS and not allow_large_steps:
        raise BudgetError(
            f"n_steps={n_steps} exceeds the {MAX_SAMPLING_STEPS}-step inference "
            "budget; pass allow_large_steps=True to override")
    ts = sampling_timesteps(schedule.T, n_steps)
    cond_pm1 = cond * 2 - 1
    x = torch.randn(cond.shape, generator=rng, dtype=cond.dtype)
    frames = []
    for i, t in enumerate(ts):
        pred = model(x, t, cond_pm1)
        eps_hat, x0_hat = convert_prediction(pred, target, x, t, schedule)
        t_prev = ts[i + 1] if i + 1 < len(ts) else 0
        x = posterior_step(x, t, eps_hat, x0_hat, schedule, rng=rng,
                           deterministic=(mode == "deterministic"),
                           t_prev=t_prev)
        if record_trajectory:
            frames.append(((x + 1) / 2).clamp(0, 1))
    out = ((x + 1) / 2).clamp(0, 1)
    return (out, frames) if record_trajectory else out
