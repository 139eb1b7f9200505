"""Centred 2D DFTs, missing-wedge masks and Fourier fusion.

Masks are 0/1 float arrays in centred (``fftshift``) layout; a bin is 1 when
its frequency orientation lies in the wedge that no view measured.
"""
from __future__ import annotations

import logging
import warnings

import numpy as np

from .errors import NonNegligibleImaginary, ShapeMismatch, UnsupportedGeometry
from .tomo import Beam, ScanGeometry

logger = logging.getLogger(__name__)

__all__ = [
    "centered_dft2",
    "inverse_centered_dft2",
    "build_missing_wedge_mask",
    "frequency_orientation",
    "fourier_fuse",
    "FanWedgeApproximation",
]

IMAG_TOL = 1e-9


class FanWedgeApproximation(UserWarning):
    """The parallel-beam wedge is only approximate for fan data."""


def centered_dft2(img):
    """Unitary 2D DFT with DC moved to index ``(ny // 2, nx // 2)``."""
    return np.fft.fftshift(np.fft.fft2(np.asarray(img, dtype=float), norm="ortho"))


def inverse_centered_dft2(g, tol: float = IMAG_TOL):
    """Inverse of :func:`centered_dft2`; rejects a non-negligible imaginary part."""
    g = np.asarray(g)
    out = np.fft.ifft2(np.fft.ifftshift(g), norm="ortho")
    scale = float(np.linalg.norm(g))
    resid = float(np.linalg.norm(out.imag))
    if resid > tol * max(scale, np.finfo(float).tiny):
        raise NonNegligibleImaginary(
            f"imaginary residue {resid:.3e} exceeds {tol:g} * ||g|| = {tol * scale:.3e}"
        )
    return out.real.copy()


def frequency_orientation(shape) -> np.ndarray:
    """Orientation in [0, pi) of every centred bin in physical ``(kx, ky)``.

    Rows run towards -y, so the row frequency is negated.
    """
    ny, nx = shape
    kx = np.fft.fftshift(np.fft.fftfreq(nx))
    ky = -np.fft.fftshift(np.fft.fftfreq(ny))
    KX, KY = np.meshgrid(kx, ky)
    return np.mod(np.arctan2(KY, KX), np.pi)


def _mirror_centered(m):
    """``m[-u, -v]`` in centred layout with DFT (modular) index arithmetic."""
    un = np.fft.ifftshift(m)
    mirrored = np.roll(un[::-1, ::-1], 1, axis=(0, 1))
    return np.fft.fftshift(mirrored)


def build_missing_wedge_mask(geom: ScanGeometry, shape) -> np.ndarray:
    """Indicator of frequencies not sampled by the scan.

    A view at angle ``theta`` samples the central line at orientation
    ``theta + pi/2``; bins whose orientation falls outside
    ``{theta + pi/2 : theta in [angle_start, angle_end]}`` are set to 1.
    The DC bin is always 0 and the mask is made point symmetric under DFT
    index negation, so fused images stay real.
    """
    if geom.n_angles == 0:
        raise UnsupportedGeometry("geometry has no views")
    if geom.beam is Beam.FAN:
        warnings.warn("fan-beam wedge approximated by the parallel-beam wedge of equal arc",
                      FanWedgeApproximation, stacklevel=2)
    ny, nx = int(shape[0]), int(shape[1])
    if geom.arc >= np.pi * (1 - 1e-12):
        return np.zeros((ny, nx))
    phi = frequency_orientation((ny, nx))
    delta = np.mod(phi - (geom.angle_start + np.pi / 2), np.pi)
    measured = (delta <= geom.arc + 1e-12) | (delta >= np.pi - 1e-12)
    mask = (~measured).astype(float)
    mask = mask * _mirror_centered(mask)
    mask[ny // 2, nx // 2] = 0.0
    return mask


def fourier_fuse(x_dn, x_lact, mask, complement_lact: bool = False):
    """``F^-1{ M F(x_dn) + F(x_lact) }``.

    With ``complement_lact`` the LACT spectrum is restricted to ``1 - M``
    instead of being added in full.
    """
    x_dn = np.asarray(x_dn, dtype=float)
    x_lact = np.asarray(x_lact, dtype=float)
    mask = np.asarray(mask, dtype=float)
    if not (x_dn.shape == x_lact.shape == mask.shape):
        raise ShapeMismatch(f"x_dn {x_dn.shape}, x_lact {x_lact.shape}, mask {mask.shape}")
    lact = centered_dft2(x_lact)
    if complement_lact:
        lact = (1.0 - mask) * lact
    return inverse_centered_dft2(mask * centered_dft2(x_dn) + lact)
