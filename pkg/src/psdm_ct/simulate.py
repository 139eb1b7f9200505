"""Phantoms, unit conversion and the pre-log Poisson/Gaussian measurement model."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .tomo import ScanGeometry, forward_project, pixel_centres

__all__ = [
    "PhantomKind",
    "PhantomSpec",
    "UnitMap",
    "UNIT_MAPS",
    "MU_WATER",
    "NoiseModel",
    "make_phantom",
    "shepp_logan_value",
    "simulate_measurement",
    "simulate_counts",
    "hu_to_attenuation",
    "attenuation_to_hu",
]

# Linear attenuation of water at ~70 keV, 1/mm.
MU_WATER = 0.02


class PhantomKind(str, enum.Enum):
    SHEPP_LOGAN = "shepp-logan"
    ELLIPSE_CARDIAC = "ellipse-cardiac"


@dataclass(frozen=True)
class UnitMap:
    """Affine map between normalised [0, 1] values and attenuation (1/mm)."""

    scale: float
    offset: float = 0.0

    def to_attenuation(self, x):
        return self.offset + self.scale * np.asarray(x, dtype=float)

    def to_normalized(self, mu):
        return (np.asarray(mu, dtype=float) - self.offset) / self.scale


# Shepp-Logan: 1.0 -> 0.02/mm (skull ~ water-equivalent scale).
# Cardiac: 0.5 -> water, so 0 is air and 1.0 is +1000 HU.
UNIT_MAPS = {
    PhantomKind.SHEPP_LOGAN: UnitMap(scale=0.02),
    PhantomKind.ELLIPSE_CARDIAC: UnitMap(scale=2 * MU_WATER),
}


def hu_to_attenuation(hu):
    return MU_WATER * (1.0 + np.asarray(hu, dtype=float) / 1000.0)


def attenuation_to_hu(mu):
    return 1000.0 * (np.asarray(mu, dtype=float) - MU_WATER) / MU_WATER


@dataclass(frozen=True)
class PhantomSpec:
    kind: PhantomKind = PhantomKind.SHEPP_LOGAN
    size: int = 128
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", PhantomKind(self.kind))
        if int(self.size) != self.size or self.size < 8:
            raise ValueError("phantom size must be an integer >= 8")


# (value, semi-axis a, semi-axis b, x0, y0, rotation in degrees); modified
# (Toft) contrast so that the sum lies in [0, 1].
SHEPP_LOGAN_ELLIPSES = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
)


def _inside(x, y, a, b, x0, y0, deg):
    phi = np.deg2rad(deg)
    dx, dy = x - x0, y - y0
    u = dx * np.cos(phi) + dy * np.sin(phi)
    v = -dx * np.sin(phi) + dy * np.cos(phi)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def shepp_logan_value(x, y):
    """Ellipse-sum of the phantom at normalised coordinates in [-1, 1]^2."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    out = np.zeros(np.broadcast(x, y).shape)
    for val, a, b, x0, y0, deg in SHEPP_LOGAN_ELLIPSES:
        out = out + val * _inside(x, y, a, b, x0, y0, deg)
    return out


def _norm_grid(n):
    x, y = pixel_centres((n, n), 1.0)
    return np.meshgrid(x / (n / 2.0), y / (n / 2.0))


def _cardiac(n, seed):
    rng = np.random.default_rng(seed)
    X, Y = _norm_grid(n)
    img = np.zeros((n, n))
    img[_inside(X, Y, 0.88, 0.66, 0, 0, 0)] = 0.5  # soft tissue
    for side in (-1, 1):
        img[_inside(X, Y, 0.3, 0.45, side * 0.45, 0.05, side * 8.0)] = 0.1  # lungs
    img[_inside(X, Y, 0.1, 0.1, 0.0, -0.5, 0)] = 0.95  # vertebra
    hx, hy = rng.uniform(-0.06, 0.06), rng.uniform(0.0, 0.12)
    tilt = rng.uniform(-35, 35)
    img[_inside(X, Y, 0.36, 0.3, hx, hy, tilt)] = 0.52  # myocardium / pericardial mass
    t = np.deg2rad(tilt)
    rot = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
    chambers = [(0.17, 0.13, 0.12, -0.05), (0.13, 0.11, -0.13, 0.08), (0.1, 0.08, -0.02, 0.17)]
    n_ch = rng.integers(2, 4)
    for a, b, cx, cy in chambers[:n_ch]:
        off = rot @ np.array([cx, cy]) + rng.uniform(-0.02, 0.02, 2)
        img[_inside(X, Y, a, b, hx + off[0], hy + off[1], tilt + rng.uniform(-15, 15))] = 0.68
    # thin contrast-filled vessels as arcs around the heart
    width = max(1.5, 0.012 * n) / (n / 2.0)
    for _ in range(rng.integers(2, 4)):
        r = rng.uniform(0.3, 0.42)
        a0 = rng.uniform(0, 2 * np.pi)
        span = rng.uniform(0.5, 1.2)
        ang = np.mod(np.arctan2(Y - hy, X - hx) - a0, 2 * np.pi)
        rad = np.hypot(X - hx, Y - hy)
        img[(np.abs(rad - r) <= width / 2) & (ang <= span)] = 0.85
    return img


def make_phantom(spec: PhantomSpec) -> np.ndarray:
    """Normalised phantom image with values in [0, 1]."""
    if spec.kind is PhantomKind.SHEPP_LOGAN:
        X, Y = _norm_grid(spec.size)
        img = shepp_logan_value(X, Y)
    else:
        img = _cardiac(spec.size, spec.seed)
    return np.clip(img, 0.0, 1.0)


@dataclass(frozen=True)
class NoiseModel:
    """Incident photons per ray, electronic noise std (counts) and log floor."""

    i0: float = 1e5
    sigma_e: float = 10.0
    epsilon: float = 0.5

    def __post_init__(self):
        if not self.i0 > 0 or self.sigma_e < 0 or not 0 < self.epsilon <= self.i0:
            raise ValueError("need i0 > 0, sigma_e >= 0 and 0 < epsilon <= i0")


def _as_rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.Generator(np.random.Philox(0 if rng is None else rng))


def simulate_counts(line_integrals, nm: NoiseModel, rng=None):
    """Pre-log counts ``Poisson(i0 exp(-l)) + N(0, sigma_e^2)``."""
    rng = _as_rng(rng)
    mean = nm.i0 * np.exp(-np.asarray(line_integrals, dtype=float))
    counts = rng.poisson(mean).astype(float)
    if nm.sigma_e > 0:
        counts += nm.sigma_e * rng.standard_normal(counts.shape)
    return counts


def simulate_measurement(img, geom: ScanGeometry, nm: NoiseModel | None = None, rng=None,
                         pixel_size: float = 1.0):
    """Post-log sinogram of an attenuation image.

    Without a noise model the clean line integrals are returned. Otherwise
    counts are drawn per ray and ``y = -ln(max(c, epsilon) / i0)``. ``rng``
    is a Generator or a seed for a counter-based (Philox) generator.
    """
    ell = forward_project(img, geom, pixel_size)
    if nm is None:
        return ell
    counts = simulate_counts(ell, nm, rng)
    return -np.log(np.maximum(counts, nm.epsilon) / nm.i0)
