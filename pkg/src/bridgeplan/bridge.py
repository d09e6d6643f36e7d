"""Brownian bridge transition math, with and without user-feedback perturbation.

The standard bridge between a start latent ``z0`` (time 0) and an end latent
``zT`` (time T) has the Gaussian transition

    z_t ~ N( (1 - t/T) z0 + (t/T) zT,  t (T - t) / T )

with a scalar (isotropic) variance.  Feedback perturbs it in two ways: a
feedback vector ``zu`` shifts the mean together with the start point, and an
engagement scalar ``delta_u`` in [0, 1] widens the variance through a decay
schedule that fades as t approaches T:

    mean     (1 - t/T) (z0 + zu) + (t/T) zT
    variance t (T - t) / T + phi(delta_u, t)

where phi is either ``delta_u * (1 - t/T)`` (linear) or
``delta_u * exp(-t / (lambda T))`` (exponential).  The perturbed form is
defined for interior times; evaluating it at t = 0 or t = T extends the same
affine formulas to the endpoints (mean z0 + zu at t = 0, mean zT at t = T).

All arithmetic is float64.  Sampling uses an explicit Box-Muller transform
over the caller's generator so trajectories are bit-reproducible for a seed
regardless of the numpy normal-sampling implementation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DECAY_KINDS = ("linear", "exponential")


@dataclass
class BridgeConfig:
    """Latent dimension and decay schedule for the perturbed bridge."""

    d: int = 16
    decay_kind: str = "linear"
    lam: float = 0.5
    pin_final: bool = True

    def __post_init__(self) -> None:
        if self.d < 1:
            raise ValueError(f"latent dimension must be >= 1, got {self.d}")
        if self.decay_kind not in DECAY_KINDS:
            raise ValueError(f"decay_kind must be one of {DECAY_KINDS}, got {self.decay_kind!r}")
        if not 0.0 < self.lam < 1.0:
            raise ValueError(f"lam must lie in (0, 1), got {self.lam}")


@dataclass
class GaussParams:
    """Isotropic Gaussian: mean vector plus one shared scalar variance."""

    mu: np.ndarray
    var: float

    def __post_init__(self) -> None:
        self.mu = np.asarray(self.mu, dtype=np.float64)
        if self.var < 0.0:
            raise ValueError(f"variance must be >= 0, got {self.var}")


def _check_time(t: int, T: int) -> None:
    if T < 1:
        raise ValueError(f"horizon T must be >= 1, got {T}")
    if not 0 <= t <= T:
        raise ValueError(f"time index t={t} outside [0, {T}]")


def standard_bridge(z0: np.ndarray, zT: np.ndarray, t: int, T: int) -> GaussParams:
    """Transition distribution of the unperturbed bridge at time t of T."""
    _check_time(t, T)
    z0 = np.asarray(z0, dtype=np.float64)
    zT = np.asarray(zT, dtype=np.float64)
    if z0.shape != zT.shape:
        raise ValueError(f"endpoint dimensions differ: {z0.shape} vs {zT.shape}")
    w = t / T
    mu = (1.0 - w) * z0 + w * zT
    var = t * (T - t) / T
    return GaussParams(mu=mu, var=var)


def decay(delta_u: float, t: int, T: int, cfg: BridgeConfig) -> float:
    """Feedback uncertainty at time t: fades to 0 (linear) or toward 0 (exponential)."""
    _check_time(t, T)
    if not 0.0 <= delta_u <= 1.0:
        raise ValueError(f"delta_u must lie in [0, 1], got {delta_u}")
    if cfg.decay_kind == "linear":
        return delta_u * (1.0 - t / T)
    return delta_u * float(np.exp(-t / (cfg.lam * T)))


def perturbed_bridge(
    z0: np.ndarray,
    zT: np.ndarray,
    zu: np.ndarray,
    delta_u: float,
    t: int,
    T: int,
    cfg: BridgeConfig,
) -> GaussParams:
    """Bridge transition with the feedback vector and engagement perturbations.

    Reduces exactly to :func:`standard_bridge` when ``zu`` is zero and
    ``delta_u`` is zero.
    """
    _check_time(t, T)
    z0 = np.asarray(z0, dtype=np.float64)
    zT = np.asarray(zT, dtype=np.float64)
    zu = np.asarray(zu, dtype=np.float64)
    if not z0.shape == zT.shape == zu.shape:
        raise ValueError(
            f"latent dimensions differ: z0 {z0.shape}, zT {zT.shape}, zu {zu.shape}"
        )
    w = t / T
    mu = (1.0 - w) * (z0 + zu) + w * zT
    var = t * (T - t) / T + decay(delta_u, t, T, cfg)
    return GaussParams(mu=mu, var=var)


def box_muller(rng: np.random.Generator, n: int) -> np.ndarray:
    """n standard normals via Box-Muller on the generator's uniform stream.

    Pairs are produced as (r cos, r sin) from consecutive uniform draws and
    interleaved in that order, then truncated to n; this ordering is part of
    the reproducibility contract.
    """
    if n == 0:
        return np.zeros(0, dtype=np.float64)
    pairs = (n + 1) // 2
    u1 = rng.random(pairs)
    u2 = rng.random(pairs)
    radius = np.sqrt(-2.0 * np.log1p(-u1))  # 1 - u1 in (0, 1], log is finite
    angle = 2.0 * np.pi * u2
    out = np.empty(2 * pairs, dtype=np.float64)
    out[0::2] = radius * np.cos(angle)
    out[1::2] = radius * np.sin(angle)
    return out[:n]


def sample_point(
    p: GaussParams, rng: np.random.Generator, n: int | None = None
) -> np.ndarray:
    """Draw from an isotropic Gaussian; a zero-variance draw is the mean exactly.

    With ``n`` given, returns an (n, d) array of independent draws (one pass
    over the generator, same stream as n successive single draws would not
    be; batch size is part of the call contract).
    """
    d = p.mu.shape[0]
    if n is None:
        if p.var == 0.0:
            return p.mu.copy()
        eps = box_muller(rng, d)
        return p.mu + np.sqrt(p.var) * eps
    if p.var == 0.0:
        return np.tile(p.mu, (n, 1))
    eps = box_muller(rng, n * d).reshape(n, d)
    return p.mu + np.sqrt(p.var) * eps


def sample_trajectory(
    z0: np.ndarray,
    zT: np.ndarray,
    zu: np.ndarray,
    delta_u: float,
    T: int,
    cfg: BridgeConfig,
    rng: np.random.Generator,
) -> list[np.ndarray]:
    """Sample latents at times 1..T, independently per time index.

    With ``cfg.pin_final`` the last point is set to ``zT`` exactly, which
    only matters under exponential decay (linear decay already has zero
    variance at t = T).
    """
    if T < 1:
        raise ValueError(f"trajectory length T must be >= 1, got {T}")
    points = []
    for t in range(1, T + 1):
        params = perturbed_bridge(z0, zT, zu, delta_u, t, T, cfg)
        points.append(sample_point(params, rng))
    if cfg.pin_final:
        points[-1] = np.asarray(zT, dtype=np.float64).copy()
    return points


def alignment_score(z_st: np.ndarray, p: GaussParams) -> float:
    """Log-density shape term: -||z - mu||^2 / (2 var), always <= 0."""
    if p.var <= 0.0:
        raise ValueError("alignment score undefined for zero variance")
    z_st = np.asarray(z_st, dtype=np.float64)
    diff = z_st - p.mu
    return float(-(diff @ diff) / (2.0 * p.var))
