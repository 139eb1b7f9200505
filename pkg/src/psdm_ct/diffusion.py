"""VE-SDE noise schedule, analytic score functions, DSM loss and the PC sampler.

A score function is any callable ``score(x, t) -> array`` returning an array
shaped like ``x``. Implementations here are stateless (or lock-protected) so
they can be evaluated from several threads.
"""
from __future__ import annotations

import json
import math
import os
import threading
from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy.special import logsumexp

from .errors import IndexOutOfRange, OutOfRange, ShapeMismatch

__all__ = [
    "NoiseSchedule",
    "ScoreFunction",
    "sigma_at",
    "oracle_score",
    "gmm_score",
    "GmmPrior",
    "ZeroScore",
    "OracleScore",
    "GaussianScore",
    "GmmScore",
    "NoisyScore",
    "CountingScore",
    "dsm_loss",
    "dsm_loss_terms",
    "predictor_step",
    "corrector_step",
    "denoise_step",
    "pc_sample",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Geometric schedule ``sigma(t) = sigma_min (sigma_max / sigma_min)^t``."""

    sigma_min: float = 0.01
    sigma_max: float = 1.0
    n_steps: int = 1000

    def __post_init__(self):
        if not 0 < self.sigma_min < self.sigma_max:
            raise ValueError("need 0 < sigma_min < sigma_max")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError("n_steps must be a positive integer")

    def sigma(self, t):
        return self.sigma_min * (self.sigma_max / self.sigma_min) ** np.asarray(t, dtype=float)

    @property
    def times(self) -> np.ndarray:
        if self.n_steps == 1:
            return np.zeros(1)
        return np.arange(self.n_steps) / (self.n_steps - 1)

    @property
    def sigmas(self) -> np.ndarray:
        return self.sigma(self.times)


def sigma_at(sched: NoiseSchedule, t: float) -> float:
    if not 0.0 <= t <= 1.0:
        raise OutOfRange(f"t={t} outside [0, 1]")
    return float(sched.sigma(t))


class ScoreFunction(Protocol):
    def __call__(self, x: np.ndarray, t: float) -> np.ndarray: ...


def _same_shape(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes {a.shape} and {b.shape} differ")
    return a, b


def oracle_score(x, x_true, sched: NoiseSchedule, t: float):
    """Score of a point mass at ``x_true`` diffused to time ``t``."""
    x, x_true = _same_shape(x, x_true)
    return (x_true - x) / sigma_at(sched, t) ** 2


@dataclass
class GmmPrior:
    """Isotropic Gaussian mixture over images: weights, mean images, base stds."""

    weights: np.ndarray
    means: list
    stds: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.stds = np.asarray(self.stds, dtype=float)
        self.means = [np.asarray(m, dtype=float) for m in self.means]
        k = len(self.means)
        if k == 0 or self.weights.shape != (k,) or self.stds.shape != (k,):
            raise ValueError("weights, means and stds need one entry per component")
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be positive and sum to 1")
        if np.any(self.stds <= 0):
            raise ValueError("base stds must be positive")
        if any(m.shape != self.means[0].shape for m in self.means):
            raise ValueError("all component means need the same shape")

    @property
    def shape(self):
        return self.means[0].shape

    def save(self, path):
        """Write a JSON description plus one LACT1 file per component mean."""
        from .lact_io import write_lact

        base = os.path.splitext(os.fspath(path))[0]
        comps = []
        for k, (w, m, s) in enumerate(zip(self.weights, self.means, self.stds)):
            ref = f"{base}.mean{k}.lact"
            write_lact(ref, m)
            comps.append({"weight": float(w), "mean": os.path.basename(ref), "base_std": float(s)})
        with open(path, "w") as fh:
            json.dump({"format": "gmm-prior/1", "components": comps}, fh, indent=2)

    @classmethod
    def load(cls, path):
        from .lact_io import read_lact

        with open(path) as fh:
            doc = json.load(fh)
        root = os.path.dirname(os.fspath(path))
        comps = doc["components"]
        means = [read_lact(os.path.join(root, c["mean"])).data.astype(float) for c in comps]
        return cls([c["weight"] for c in comps], means, [c["base_std"] for c in comps])


def gmm_score(x, prior: GmmPrior, sched: NoiseSchedule, t: float):
    """Exact score of the mixture convolved with ``N(0, sigma(t)^2 I)``.

    ``x`` may carry leading batch axes in front of the prior's image shape;
    each leading index is then scored as an independent image.
    """
    x = np.asarray(x, dtype=float)
    nd = len(prior.shape)
    if x.shape[x.ndim - nd:] != prior.shape or x.ndim < nd:
        raise ShapeMismatch(f"x shape {x.shape} does not end with prior shape {prior.shape}")
    axes = tuple(range(x.ndim - nd, x.ndim))
    var = prior.stds**2 + sigma_at(sched, t) ** 2
    d = math.prod(prior.shape)
    sq = np.stack([np.sum((x - m) ** 2, axis=axes) for m in prior.means], axis=-1)
    logits = np.log(prior.weights) - 0.5 * d * np.log(2 * np.pi * var) - sq / (2 * var)
    resp = np.exp(logits - logsumexp(logits, axis=-1, keepdims=True))
    out = np.zeros_like(x)
    expand = (...,) + (None,) * nd
    for k, (m, v) in enumerate(zip(prior.means, var)):
        out += resp[..., k][expand] * (m - x) / v
    return out


class ZeroScore:
    def __call__(self, x, t):
        return np.zeros(np.shape(x))


class OracleScore:
    """Point-mass prior at a known image."""

    def __init__(self, x_true, sched: NoiseSchedule):
        self.x_true = np.asarray(x_true, dtype=float)
        self.sched = sched

    def __call__(self, x, t):
        return oracle_score(x, self.x_true, self.sched, t)


class GaussianScore:
    """Prior ``N(mean, std^2 I)``; ``std = 0`` gives the oracle score."""

    def __init__(self, mean, std, sched: NoiseSchedule):
        self.mean = np.asarray(mean, dtype=float)
        self.std = float(std)
        self.sched = sched

    def __call__(self, x, t):
        x = np.asarray(x, dtype=float)
        return (self.mean - x) / (self.std**2 + sigma_at(self.sched, t) ** 2)


class GmmScore:
    def __init__(self, prior: GmmPrior, sched: NoiseSchedule):
        self.prior = prior
        self.sched = sched

    def __call__(self, x, t):
        return gmm_score(x, self.prior, self.sched, t)


class NoisyScore:
    """Wraps a score with additive error ``level * xi / sigma(t)``.

    ``xi`` is a standard normal field drawn from a generator seeded by
    ``(seed, t)``, so the error is reproducible and call-order independent.
    """

    def __init__(self, base: ScoreFunction, level: float, sched: NoiseSchedule, seed: int = 0):
        self.base = base
        self.level = float(level)
        self.sched = sched
        self.seed = int(seed)

    def __call__(self, x, t):
        key = int(round(float(t) * 2**40))
        xi = np.random.default_rng([self.seed, key]).standard_normal(np.shape(x))
        return self.base(x, t) + self.level * xi / sigma_at(self.sched, t)


class CountingScore:
    """Counts evaluations of the wrapped score."""

    def __init__(self, base: ScoreFunction):
        self.base = base
        self.calls = 0
        self._lock = threading.Lock()

    def __call__(self, x, t):
        with self._lock:
            self.calls += 1
        return self.base(x, t)


def _as_rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def dsm_loss_terms(score: ScoreFunction, clean, sched: NoiseSchedule, n_draws: int, seed=0):
    """Per-draw values of ``sigma^2 ||s(x0 + sigma z, t) + z / sigma||^2``.

    ``t`` is uniform on [0, 1], ``x0`` uniform over ``clean`` and ``z``
    standard normal. Equal seeds give equal ``(x0, t, z)`` draws.
    """
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    clean = [np.asarray(c, dtype=float) for c in clean]
    rng = np.random.default_rng(seed)
    out = np.empty(n_draws)
    for n in range(n_draws):
        x0 = clean[rng.integers(len(clean))]
        t = float(rng.uniform(0.0, 1.0))
        z = rng.standard_normal(x0.shape)
        sig = sigma_at(sched, t)
        r = score(x0 + sig * z, t) + z / sig
        out[n] = sig**2 * float(np.vdot(r, r))
    return out


def dsm_loss(score: ScoreFunction, clean, sched: NoiseSchedule, n_draws: int, seed=0) -> float:
    """Monte Carlo denoising score matching loss with weight ``sigma(t)^2``."""
    return float(np.mean(dsm_loss_terms(score, clean, sched, n_draws, seed)))


def predictor_step(x, score: ScoreFunction, i: int, sched: NoiseSchedule, rng=None,
                   stochastic: bool = True):
    """Reverse-SDE step from noise level ``sigma_i`` down to ``sigma_{i-1}``."""
    if not 1 <= i <= sched.n_steps - 1:
        raise IndexOutOfRange(f"predictor index {i} outside [1, {sched.n_steps - 1}]")
    sig = sched.sigmas
    t = sched.times[i]
    dvar = sig[i] ** 2 - sig[i - 1] ** 2
    x = np.asarray(x, dtype=float)
    out = x + dvar * score(x, t)
    if stochastic:
        out = out + math.sqrt(dvar) * _as_rng(rng).standard_normal(x.shape)
    return out


def corrector_step(x, score: ScoreFunction, i: int, sched: NoiseSchedule, rng=None,
                   snr: float = 0.16):
    """One Langevin step at noise level ``sigma_i`` with step set by ``snr``."""
    if snr < 0:
        raise ValueError("snr must be nonnegative")
    if not 0 <= i <= sched.n_steps - 1:
        raise IndexOutOfRange(f"corrector index {i} outside [0, {sched.n_steps - 1}]")
    x = np.asarray(x, dtype=float)
    if snr == 0:
        return x.copy()
    z = _as_rng(rng).standard_normal(x.shape)
    s = score(x, sched.times[i])
    s_norm = float(np.linalg.norm(s))
    if s_norm == 0.0:
        return x.copy()
    eps = 2.0 * (snr * float(np.linalg.norm(z)) / s_norm) ** 2
    return x + eps * s + math.sqrt(2.0 * eps) * z


def denoise_step(x, score: ScoreFunction, sched: NoiseSchedule):
    """Noise-free final step ``x + sigma_0^2 s(x, t_0)`` (Tweedie estimate)."""
    x = np.asarray(x, dtype=float)
    return x + sched.sigmas[0] ** 2 * score(x, sched.times[0])


def pc_sample(score: ScoreFunction, shape, sched: NoiseSchedule, rng=None, snr: float = 0.16,
              stochastic: bool = True):
    """Predictor-corrector sampling from ``N(0, sigma_max^2 I)`` down to ``sigma_min``.

    For ``i = I-1 .. 1`` a predictor step to level ``i - 1`` is followed by a
    corrector step at that level.
    """
    rng = _as_rng(rng)
    x = sched.sigma_max * rng.standard_normal(shape)
    for i in range(sched.n_steps - 1, 0, -1):
        x = predictor_step(x, score, i, sched, rng, stochastic)
        x = corrector_step(x, score, i - 1, sched, rng, snr)
    return x
