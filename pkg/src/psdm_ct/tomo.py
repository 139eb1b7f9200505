"""Scan geometry, Joseph projector with matched adjoint, FBP and operator norms.

Coordinates: pixel ``(i, j)`` of an ``(ny, nx)`` image sits at
``x = (j - (nx - 1) / 2) * d`` and ``y = ((ny - 1) / 2 - i) * d`` (row 0 on
top). A view at angle ``theta`` has rays travelling along
``(cos theta, sin theta)``; the detector coordinate of a point ``r`` is
``s = -x sin theta + y cos theta``.

Fan-beam rays are mapped to their parallel equivalents (direction angle
``beta + gamma``, offset ``R sin gamma``), so both beams share one ray tracer.
"""
from __future__ import annotations

import enum
import logging
import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy import ndimage

from .errors import GeometryMismatch, InvalidGeometry, NoConvergence

logger = logging.getLogger(__name__)

__all__ = [
    "Beam",
    "ScanGeometry",
    "build_geometry",
    "default_parallel_geometry",
    "clinical_fan_geometry",
    "system_matrix",
    "forward_project",
    "back_project",
    "fbp",
    "fov_mask",
    "operator_norm",
    "CLINICAL_DET_PITCH_MM",
    "CLINICAL_SRC_TO_ORIGIN_MM",
    "CLINICAL_SRC_TO_DET_MM",
]

CLINICAL_N_DET = 835
CLINICAL_DET_PITCH_MM = 1.095
# 53.852 cm in the simulation study, 538.5 mm for the clinical scanner.
CLINICAL_SRC_TO_ORIGIN_MM = 538.52
CLINICAL_SRC_TO_DET_MM = 946.7
CLINICAL_FOV_RADIUS_MM = 250.0


class Beam(str, enum.Enum):
    PARALLEL = "parallel"
    FAN = "fan"


@dataclass(frozen=True)
class ScanGeometry:
    """Immutable acquisition description.

    ``det_spacing`` is in mm for parallel beams and in radians for the
    equiangular fan. ``angle_end`` is the open end of the scanned arc.
    """

    beam: Beam
    angles: tuple
    n_det: int
    det_spacing: float
    fov_radius: float
    angle_start: float
    angle_end: float
    src_to_origin: float | None = None
    src_to_det: float | None = None

    @property
    def n_angles(self) -> int:
        return len(self.angles)

    @property
    def angle_step(self) -> float:
        return (self.angle_end - self.angle_start) / self.n_angles

    @property
    def arc(self) -> float:
        return self.angle_end - self.angle_start

    @property
    def sino_shape(self) -> tuple[int, int]:
        return (self.n_angles, self.n_det)

    def detector_offsets(self) -> np.ndarray:
        """Detector cell centres: mm (parallel) or fan angles in rad (fan)."""
        return (np.arange(self.n_det) - (self.n_det - 1) / 2.0) * self.det_spacing

    def ray_parameters(self) -> tuple[np.ndarray, np.ndarray]:
        """Parallel-equivalent ``(direction angle, offset)`` of every ray."""
        ang = np.asarray(self.angles)[:, None]
        off = self.detector_offsets()[None, :]
        if self.beam is Beam.PARALLEL:
            return np.broadcast_to(ang, self.sino_shape), np.broadcast_to(off, self.sino_shape)
        return ang + off, np.broadcast_to(self.src_to_origin * np.sin(off), self.sino_shape)

    def to_dict(self) -> dict:
        return {
            "beam": self.beam.value,
            "angle_start": self.angle_start,
            "angle_end": self.angle_end,
            "n_angles": self.n_angles,
            "n_det": self.n_det,
            "det_spacing": self.det_spacing,
            "src_to_origin": self.src_to_origin,
            "src_to_det": self.src_to_det,
            "fov_radius": self.fov_radius,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScanGeometry":
        return build_geometry(
            d["beam"],
            d["angle_start"],
            d["angle_end"],
            d["n_angles"],
            d["n_det"],
            d["det_spacing"],
            src_to_origin=d.get("src_to_origin"),
            src_to_det=d.get("src_to_det"),
            fov_radius=d["fov_radius"],
        )


def build_geometry(
    beam,
    angle_start: float,
    angle_end: float,
    n_angles: int,
    n_det: int,
    det_spacing: float,
    src_to_origin: float | None = None,
    src_to_det: float | None = None,
    fov_radius: float = 128.0,
) -> ScanGeometry:
    """Validate parameters and return a geometry with equispaced views.

    The ``n_angles`` view angles are ``angle_start + k * step`` with
    ``step = (angle_end - angle_start) / n_angles``.
    """
    try:
        beam = Beam(beam.value if isinstance(beam, Beam) else str(beam).lower())
    except ValueError:
        raise InvalidGeometry(f"unknown beam type {beam!r}") from None
    if int(n_angles) != n_angles or n_angles < 1:
        raise InvalidGeometry(f"n_angles must be a positive integer, got {n_angles}")
    if int(n_det) != n_det or n_det < 1:
        raise InvalidGeometry(f"n_det must be a positive integer, got {n_det}")
    if not angle_end > angle_start:
        raise InvalidGeometry("angle_end must exceed angle_start")
    if angle_end - angle_start > 2 * np.pi * (1 + 1e-12):
        raise InvalidGeometry("angular span exceeds 2*pi")
    if not det_spacing > 0 or not fov_radius > 0:
        raise InvalidGeometry("det_spacing and fov_radius must be positive")
    if beam is Beam.FAN:
        if src_to_origin is None or src_to_det is None:
            raise InvalidGeometry("fan beam needs src_to_origin and src_to_det")
        if not (src_to_det > src_to_origin > fov_radius):
            raise InvalidGeometry("fan beam needs src_to_det > src_to_origin > fov_radius")
        if (n_det - 1) / 2.0 * det_spacing >= np.pi / 2:
            raise InvalidGeometry("fan angle must stay below pi")
    else:
        src_to_origin = src_to_det = None
    n_angles, n_det = int(n_angles), int(n_det)
    step = (angle_end - angle_start) / n_angles
    angles = tuple(float(angle_start + k * step) for k in range(n_angles))
    return ScanGeometry(
        beam=beam,
        angles=angles,
        n_det=n_det,
        det_spacing=float(det_spacing),
        fov_radius=float(fov_radius),
        angle_start=float(angle_start),
        angle_end=float(angle_end),
        src_to_origin=None if src_to_origin is None else float(src_to_origin),
        src_to_det=None if src_to_det is None else float(src_to_det),
    )


def default_parallel_geometry(arc=np.pi, n_angles=180, n_det=256, det_spacing=1.0,
                              fov_radius=128.0, angle_start=0.0):
    """Desk-scale default: parallel beam, 256 bins of 1 mm."""
    return build_geometry(Beam.PARALLEL, angle_start, angle_start + arc, n_angles,
                          n_det, det_spacing, fov_radius=fov_radius)


def clinical_fan_geometry(arc=2 * np.pi / 3, n_angles=120, angle_start=0.0):
    """Equiangular fan mirroring the clinical scanner (835 cells, 1.095 mm pitch).

    Image grids used with it should span the 500 mm FOV, e.g. 128 pixels of
    500/128 mm.
    """
    return build_geometry(
        Beam.FAN,
        angle_start,
        angle_start + arc,
        n_angles,
        CLINICAL_N_DET,
        CLINICAL_DET_PITCH_MM / CLINICAL_SRC_TO_DET_MM,
        src_to_origin=CLINICAL_SRC_TO_ORIGIN_MM,
        src_to_det=CLINICAL_SRC_TO_DET_MM,
        fov_radius=CLINICAL_FOV_RADIUS_MM,
    )


def pixel_centres(shape, pixel_size=1.0):
    ny, nx = shape
    x = (np.arange(nx) - (nx - 1) / 2.0) * pixel_size
    y = ((ny - 1) / 2.0 - np.arange(ny)) * pixel_size
    return x, y


def fov_mask(shape, pixel_size, fov_radius) -> np.ndarray:
    """Boolean mask of pixel centres inside the circular field of view."""
    x, y = pixel_centres(shape, pixel_size)
    return (x[None, :] ** 2 + y[:, None] ** 2) <= fov_radius**2 * (1 + 1e-12)


def _check_extent(shape, pixel_size, geom):
    half = max(shape) * pixel_size / 2.0
    if half > geom.fov_radius * (1 + 1e-9):
        raise GeometryMismatch(
            f"image half-width {half:g} mm exceeds FOV radius {geom.fov_radius:g} mm"
        )


def _joseph_triplets(phi, s, ny, nx, d):
    """Joseph interpolation weights for rays given by direction angle and offset.

    Returns (ray index, pixel index, weight). Rays step one pixel along
    their dominant axis and interpolate linearly across the other one.
    """
    phi = np.ravel(phi)
    s = np.ravel(s)
    c, sn = np.cos(phi), np.sin(phi)
    ex, ey = -sn, c
    ray_ids = np.arange(phi.size)
    horiz = np.abs(c) >= np.abs(sn)
    xs, ys = pixel_centres((ny, nx), d)
    rows, cols, vals = [], [], []

    def emit(rid, along, frac, w, n_frac, along_is_col):
        lo = np.floor(frac)
        w_hi = frac - lo
        lo = lo.astype(np.int64)
        for idx, wt in ((lo, 1.0 - w_hi), (lo + 1, w_hi)):
            ok = (idx >= 0) & (idx < n_frac) & (wt > 0)
            if along_is_col:
                pix = idx * nx + along
            else:
                pix = along * nx + idx
            rr = np.broadcast_to(rid[:, None], idx.shape)
            rows.append(rr[ok])
            cols.append(pix[ok])
            vals.append((wt * w[:, None])[ok])

    if horiz.any():
        r = ray_ids[horiz]
        cc, ss, off = c[horiz], sn[horiz], s[horiz]
        t = (xs[None, :] - off[:, None] * ex[horiz][:, None]) / cc[:, None]
        y = off[:, None] * ey[horiz][:, None] + t * ss[:, None]
        frac = (ny - 1) / 2.0 - y / d
        along = np.broadcast_to(np.arange(nx)[None, :], frac.shape)
        emit(r, along, frac, d / np.abs(cc), ny, True)
    vert = ~horiz
    if vert.any():
        r = ray_ids[vert]
        cc, ss, off = c[vert], sn[vert], s[vert]
        t = (ys[None, :] - off[:, None] * ey[vert][:, None]) / ss[:, None]
        x = off[:, None] * ex[vert][:, None] + t * cc[:, None]
        frac = x / d + (nx - 1) / 2.0
        along = np.broadcast_to(np.arange(ny)[None, :], frac.shape)
        emit(r, along, frac, d / np.abs(ss), nx, False)
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


class _Operator:
    __slots__ = ("A", "AT")

    def __init__(self, A):
        self.A = A
        self.AT = A.T.tocsr()


@lru_cache(maxsize=16)
def _operator(geom: ScanGeometry, shape: tuple, pixel_size: float) -> _Operator:
    ny, nx = shape
    phi, s = geom.ray_parameters()
    chunk = max(1, 2_000_000 // (geom.n_det * max(ny, nx)))
    parts = []
    phi, s = np.ascontiguousarray(phi).ravel(), np.ascontiguousarray(s).ravel()
    for v0 in range(0, geom.n_angles, chunk):
        sl = slice(v0 * geom.n_det, min(geom.n_angles, v0 + chunk) * geom.n_det)
        r, cidx, w = _joseph_triplets(phi[sl], s[sl], ny, nx, pixel_size)
        parts.append(sp.csr_matrix((w, (r, cidx)), shape=(sl.stop - sl.start, ny * nx)))
    A = parts[0] if len(parts) == 1 else sp.vstack(parts, format="csr")
    A.sum_duplicates()
    mask = fov_mask(shape, pixel_size, geom.fov_radius).ravel()
    if not mask.all():
        A = sp.csr_matrix(A @ sp.diags(mask.astype(float)))
    A.eliminate_zeros()
    logger.debug("assembled system matrix %s with %d nonzeros", A.shape, A.nnz)
    return _Operator(A)


def system_matrix(geom: ScanGeometry, shape, pixel_size: float = 1.0) -> sp.csr_matrix:
    """Sparse ``(n_angles * n_det, ny * nx)`` matrix of the discrete projector."""
    shape = (int(shape[0]), int(shape[1]))
    _check_extent(shape, pixel_size, geom)
    return _operator(geom, shape, float(pixel_size)).A


def forward_project(img: np.ndarray, geom: ScanGeometry, pixel_size: float = 1.0) -> np.ndarray:
    """Line integrals of ``img`` along every ray; returns ``(n_angles, n_det)``."""
    img = np.asarray(img, dtype=float)
    if img.ndim != 2:
        raise GeometryMismatch(f"expected a 2D image, got shape {img.shape}")
    _check_extent(img.shape, pixel_size, geom)
    op = _operator(geom, img.shape, float(pixel_size))
    return (op.A @ img.ravel()).reshape(geom.sino_shape)


def back_project(sino: np.ndarray, geom: ScanGeometry, shape, pixel_size: float = 1.0) -> np.ndarray:
    """Exact transpose of :func:`forward_project`."""
    sino = np.asarray(sino, dtype=float)
    if sino.shape != geom.sino_shape:
        raise GeometryMismatch(f"sinogram shape {sino.shape} != geometry {geom.sino_shape}")
    shape = (int(shape[0]), int(shape[1]))
    _check_extent(shape, pixel_size, geom)
    op = _operator(geom, shape, float(pixel_size))
    return (op.AT @ sino.ravel()).reshape(shape)


# ---------------------------------------------------------------- FBP

FILTERS = ("ramlak", "shepplogan", "hann")


def _normalise_filter(name: str) -> str:
    key = str(name).lower().replace("-", "").replace("_", "").replace(" ", "")
    if key not in FILTERS:
        raise ValueError(f"unknown filter {name!r}; choose from {FILTERS}")
    return key


def ramp_filter(n_det: int, spacing: float, name: str = "ramlak") -> np.ndarray:
    """Frequency response of the band-limited ramp, padded to 2 * next pow2."""
    name = _normalise_filter(name)
    size = max(64, 2 * int(2 ** math.ceil(math.log2(n_det))))
    n = np.concatenate([np.arange(0, size // 2 + 1), np.arange(-size // 2 + 1, 0)])
    h = np.zeros(size)
    h[0] = 0.25 / spacing**2
    odd = n % 2 == 1
    h[odd] = -1.0 / (np.pi * n[odd] * spacing) ** 2
    H = np.real(np.fft.fft(h)) * spacing
    f = np.fft.fftfreq(size)
    if name == "shepplogan":
        H = H * np.sinc(f)
    elif name == "hann":
        H = H * (0.5 + 0.5 * np.cos(2 * np.pi * f))
    return H


def _filter_views(sino, spacing, name):
    H = ramp_filter(sino.shape[1], spacing, name)
    padded = np.zeros((sino.shape[0], H.size))
    padded[:, : sino.shape[1]] = sino
    return np.real(np.fft.ifft(np.fft.fft(padded, axis=1) * H, axis=1))[:, : sino.shape[1]]


def _pixel_backprojection(q, angles, det_spacing, shape, pixel_size, weight):
    x, y = pixel_centres(shape, pixel_size)
    X, Y = np.meshgrid(x, y)
    n_det = q.shape[1]
    grid = np.arange(n_det, dtype=float)
    out = np.zeros(shape)
    for view, th in zip(q, angles):
        k = (-X * np.sin(th) + Y * np.cos(th)) / det_spacing + (n_det - 1) / 2.0
        out += np.interp(k, grid, view, left=0.0, right=0.0)
    return out * weight


def _rebin_fan(sino, geom):
    """Resample an equiangular fan sinogram onto parallel rays."""
    R = geom.src_to_origin
    gammas = geom.detector_offsets()
    gmax = gammas[-1]
    n = geom.n_det
    ds = R * math.sin(gmax) / ((n - 1) / 2.0) if n > 1 else R * geom.det_spacing
    s = (np.arange(n) - (n - 1) / 2.0) * ds
    dbeta = geom.angle_step
    full = geom.arc >= 2 * np.pi * (1 - 1e-9)
    if full:
        thetas = np.asarray(geom.angles)
    else:
        n_th = int(math.ceil((geom.arc - dbeta + 2 * gmax) / dbeta)) + 1
        thetas = geom.angle_start - gmax + dbeta * np.arange(n_th)
    gam = np.arcsin(np.clip(s / R, -1, 1))
    beta = thetas[:, None] - gam[None, :]
    bi = (beta - geom.angle_start) / dbeta
    if full:
        bi = np.mod(bi, geom.n_angles)
    ki = np.broadcast_to(gam[None, :] / geom.det_spacing + (n - 1) / 2.0, bi.shape)
    mode = "grid-wrap" if full else "constant"
    par = ndimage.map_coordinates(sino, [bi, ki], order=1, mode=mode, cval=0.0)
    return par, thetas, ds


def fbp(sino: np.ndarray, geom: ScanGeometry, filter: str = "ramlak", shape=(128, 128),
        pixel_size: float = 1.0) -> np.ndarray:
    """Filtered backprojection with a ramp-family filter.

    Fan data are rebinned to parallel rays first. Arcs longer than pi are
    down-weighted by ``pi / arc`` to account for redundant rays; shorter arcs
    simply leave the missing wedge empty. Output is zero outside the FOV.
    """
    sino = np.asarray(sino, dtype=float)
    if sino.shape != geom.sino_shape:
        raise GeometryMismatch(f"sinogram shape {sino.shape} != geometry {geom.sino_shape}")
    shape = (int(shape[0]), int(shape[1]))
    _check_extent(shape, pixel_size, geom)
    if geom.beam is Beam.FAN:
        par, thetas, ds = _rebin_fan(sino, geom)
    else:
        par, thetas, ds = sino, np.asarray(geom.angles), geom.det_spacing
    weight = geom.angle_step * min(1.0, np.pi / geom.arc)
    q = _filter_views(par, ds, filter)
    out = _pixel_backprojection(q, thetas, ds, shape, pixel_size, weight)
    out[~fov_mask(shape, pixel_size, geom.fov_radius)] = 0.0
    return out


# ---------------------------------------------------------------- operator norm

NORM_MODES = ("combined", "tomography", "gradient", "identity", "identity_combined")


def operator_norm(geom: ScanGeometry | None, shape, tol: float = 1e-6, max_iter: int = 1000,
                  mode: str = "combined", pixel_size: float = 1.0, seed: int = 0) -> float:
    """Power-iteration estimate of the spectral norm of a stacked operator.

    ``mode`` selects the operator: ``combined`` is ``(A, grad)``,
    ``tomography`` is ``A`` alone, ``gradient`` is ``grad`` alone,
    ``identity`` is ``I`` and ``identity_combined`` is ``(I, grad)`` as used
    by ROF denoising. Warns with :class:`NoConvergence` (and returns the last
    estimate) if successive estimates never agree to ``tol``.
    """
    from .variational import div, grad

    if not tol > 0 or max_iter < 1:
        raise ValueError("tol must be > 0 and max_iter >= 1")
    if mode not in NORM_MODES:
        raise ValueError(f"mode must be one of {NORM_MODES}")
    shape = (int(shape[0]), int(shape[1]))
    if mode in ("combined", "tomography"):
        if geom is None:
            raise InvalidGeometry(f"mode {mode!r} needs a geometry")
        _check_extent(shape, pixel_size, geom)
        op = _operator(geom, shape, float(pixel_size))

    def normal(x):
        out = np.zeros_like(x)
        if mode in ("combined", "tomography"):
            out += (op.AT @ (op.A @ x.ravel())).reshape(shape)
        if mode in ("identity", "identity_combined"):
            out += x
        if mode in ("combined", "gradient", "identity_combined"):
            out -= div(grad(x))
        return out

    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape)
    x /= np.linalg.norm(x)
    est = prev = 0.0
    for it in range(max_iter):
        y = normal(x)
        est = math.sqrt(max(float(np.vdot(x, y)), 0.0))
        ny_ = np.linalg.norm(y)
        if ny_ == 0:
            return 0.0
        x = y / ny_
        if it > 0 and abs(est - prev) <= tol * est:
            return est
        prev = est
    warnings.warn(f"power iteration did not reach tol={tol} in {max_iter} iterations",
                  NoConvergence, stacklevel=2)
    return est
