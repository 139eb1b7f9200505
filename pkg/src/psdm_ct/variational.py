"""Discrete gradient/divergence and the PDHG (Chambolle-Pock) TV solver.

Solves ``min_x 1/2 ||A x - y||^2 + lam * sum |grad x|`` with ``K = (A, grad)``
and duals ``p`` (sinogram shaped) and ``q`` (vector field). Vector fields are
arrays of shape ``(2, ny, nx)``: component 0 is the horizontal (column)
difference, component 1 the vertical (row) difference.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFinite, ShapeMismatch
from .lact_io import atomic_write_bytes
from .tomo import ScanGeometry, _check_extent, _operator

logger = logging.getLogger(__name__)

__all__ = [
    "grad",
    "div",
    "dual_update_p",
    "dual_update_q",
    "PdhgParams",
    "PdhgState",
    "PdhgDiagnostics",
    "pdhg_tv",
    "tv_objective",
    "default_lambda",
]


def grad(img: np.ndarray) -> np.ndarray:
    """Forward differences with Neumann boundary; returns ``(2, ny, nx)``."""
    img = np.asarray(img, dtype=float)
    g = np.zeros((2,) + img.shape)
    g[0, :, :-1] = img[:, 1:] - img[:, :-1]
    g[1, :-1, :] = img[1:, :] - img[:-1, :]
    return g


def div(vf: np.ndarray) -> np.ndarray:
    """Negative adjoint of :func:`grad`."""
    vf = np.asarray(vf, dtype=float)
    if vf.ndim != 3 or vf.shape[0] != 2:
        raise ShapeMismatch(f"vector field must have shape (2, ny, nx), got {vf.shape}")
    h, v = vf
    out = np.zeros(h.shape)
    out[:, :-1] += h[:, :-1]
    out[:, 1:] -= h[:, :-1]
    out[:-1, :] += v[:-1, :]
    out[1:, :] -= v[:-1, :]
    return out


def dual_update_p(p, Ax_bar, y, sigma):
    """Prox of the conjugate data term: ``(p + sigma (A x_bar - y)) / (1 + sigma)``."""
    p, Ax_bar, y = (np.asarray(a, dtype=float) for a in (p, Ax_bar, y))
    if not (p.shape == Ax_bar.shape == y.shape):
        raise ShapeMismatch(f"p {p.shape}, Ax_bar {Ax_bar.shape}, y {y.shape} differ")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return (p + sigma * (Ax_bar - y)) / (1.0 + sigma)


def dual_update_q(q, grad_x_bar, sigma, lam):
    """Project ``q + sigma grad x_bar`` pointwise onto the ball of radius ``lam``."""
    q, g = np.asarray(q, dtype=float), np.asarray(grad_x_bar, dtype=float)
    if q.shape != g.shape or q.ndim != 3 or q.shape[0] != 2:
        raise ShapeMismatch(f"q {q.shape} and grad {g.shape} must match as (2, ny, nx)")
    if not sigma > 0 or not lam > 0:
        raise ValueError("sigma and lambda must be positive")
    s = q + sigma * g
    mag = np.sqrt(s[0] ** 2 + s[1] ** 2)
    return lam * s / np.maximum(lam, mag)


def tv_norm(img):
    g = grad(img)
    return float(np.sum(np.sqrt(g[0] ** 2 + g[1] ** 2)))


def tv_objective(residual, img, lam):
    return 0.5 * float(np.vdot(residual, residual)) + lam * tv_norm(img)


@dataclass(frozen=True)
class PdhgParams:
    tau: float
    sigma: float
    lam: float
    n_iters: int
    theta: float = 1.0

    def __post_init__(self):
        if not (self.tau > 0 and self.sigma > 0 and self.lam > 0):
            raise ValueError("tau, sigma and lam must be positive")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if int(self.n_iters) != self.n_iters or self.n_iters < 0:
            raise ValueError("n_iters must be a nonnegative integer")

    @classmethod
    def from_norm(cls, L: float, lam: float, n_iters: int, theta: float = 1.0):
        """Step sizes ``tau = sigma = 1 / L``."""
        return cls(tau=1.0 / L, sigma=1.0 / L, lam=lam, n_iters=n_iters, theta=theta)


@dataclass
class PdhgState:
    x: np.ndarray
    x_bar: np.ndarray
    p: np.ndarray
    q: np.ndarray
    iter: int = 0


@dataclass
class PdhgDiagnostics:
    objective: list = field(default_factory=list)
    primal_change: list = field(default_factory=list)
    residual: list = field(default_factory=list)
    max_dual_norm: list = field(default_factory=list)
    state: PdhgState | None = None

    def write_csv(self, path):
        buf = io.StringIO(newline="")
        w = csv.writer(buf)
        w.writerow(["iteration", "objective", "primal_change", "residual"])
        for k, row in enumerate(zip(self.objective, self.primal_change, self.residual), 1):
            w.writerow([k, *(repr(float(v)) for v in row)])
        atomic_write_bytes(path, buf.getvalue().encode())


def _linear_maps(op_mode, geom, shape, pixel_size):
    if op_mode == "identity":
        return (lambda x: x), (lambda p: p)
    if geom is None:
        raise ValueError("tomography mode needs a geometry")
    _check_extent(shape, pixel_size, geom)
    op = _operator(geom, shape, float(pixel_size))
    return (
        lambda x: (op.A @ x.ravel()).reshape(geom.sino_shape),
        lambda p: (op.AT @ p.ravel()).reshape(shape),
    )


def pdhg_tv(y, geom: ScanGeometry | None, params: PdhgParams, warm_start=None,
            op_mode: str = "tomography", shape=None, pixel_size: float = 1.0,
            init_state: PdhgState | None = None, literal_init: bool = False,
            diagnostics_path=None):
    """Run exactly ``params.n_iters`` PDHG iterations for TV-regularised least squares.

    Parameters
    ----------
    y : ndarray
        Measured sinogram, or the noisy image in ``identity`` mode.
    geom : ScanGeometry or None
        Ignored in ``identity`` mode (``A = I``, i.e. ROF denoising).
    warm_start : ndarray, optional
        Initial primal iterate; zeros when omitted.
    shape : tuple, optional
        Image shape when no warm start is given in tomography mode.
    init_state : PdhgState, optional
        Resume from given primal and dual variables instead of zero duals.
    literal_init : bool
        Start with ``x = 0`` and only the extrapolated iterate at
        ``warm_start`` instead of warm-starting both.

    Returns
    -------
    x : ndarray
        Final primal iterate.
    diagnostics : PdhgDiagnostics
        Per-iteration objective, primal change norm, relative residual and
        the largest dual magnitude ``max |q|``; ``state`` holds the final
        variables.
    """
    op_mode = str(op_mode).lower()
    if op_mode not in ("tomography", "identity"):
        raise ValueError("op_mode must be 'tomography' or 'identity'")
    y = np.asarray(y, dtype=float)
    if shape is not None and warm_start is not None and tuple(shape) != np.shape(warm_start):
        raise ShapeMismatch(f"warm start shape {np.shape(warm_start)} != requested {tuple(shape)}")
    if op_mode == "identity":
        shape = y.shape
    elif init_state is not None:
        shape = init_state.x.shape
    elif warm_start is not None:
        shape = np.shape(warm_start)
    elif shape is None:
        raise ShapeMismatch("tomography mode needs warm_start or shape")
    shape = (int(shape[0]), int(shape[1]))
    if op_mode == "tomography" and y.shape != geom.sino_shape:
        raise ShapeMismatch(f"sinogram shape {y.shape} != geometry {geom.sino_shape}")
    if warm_start is not None and np.shape(warm_start) != shape:
        raise ShapeMismatch(f"warm start shape {np.shape(warm_start)} != {shape}")
    fwd, adj = _linear_maps(op_mode, geom, shape, pixel_size)
    tau, sigma, lam, theta = params.tau, params.sigma, params.lam, params.theta

    if init_state is not None:
        x = np.array(init_state.x, dtype=float)
        x_bar = np.array(init_state.x_bar, dtype=float)
        p = np.array(init_state.p, dtype=float)
        q = np.array(init_state.q, dtype=float)
    else:
        start = np.zeros(shape) if warm_start is None else np.array(warm_start, dtype=float)
        x_bar = start
        x = np.zeros(shape) if literal_init else start.copy()
        p = np.zeros(y.shape)
        q = np.zeros((2,) + shape)
    Ax = fwd(x)
    Ax_bar = Ax.copy() if np.array_equal(x, x_bar) else fwd(x_bar)
    y_norm = float(np.linalg.norm(y)) or 1.0

    diag = PdhgDiagnostics()
    for n in range(params.n_iters):
        p = dual_update_p(p, Ax_bar, y, sigma)
        q = dual_update_q(q, grad(x_bar), sigma, lam)
        x_new = x - tau * adj(p) + tau * div(q)
        if not np.isfinite(x_new).all():
            raise NonFinite(f"non-finite primal iterate at iteration {n}", iteration=n)
        Ax_new = fwd(x_new)
        x_bar = x_new + theta * (x_new - x)
        Ax_bar = Ax_new + theta * (Ax_new - Ax)
        res = Ax_new - y
        diag.objective.append(tv_objective(res, x_new, lam))
        diag.primal_change.append(float(np.linalg.norm(x_new - x)))
        diag.residual.append(float(np.linalg.norm(res)) / y_norm)
        diag.max_dual_norm.append(float(np.sqrt(q[0] ** 2 + q[1] ** 2).max()))
        x, Ax = x_new, Ax_new
    diag.state = PdhgState(x=x, x_bar=x_bar, p=p, q=q, iter=params.n_iters)
    if diagnostics_path is not None:
        diag.write_csv(diagnostics_path)
    return x, diag


def default_lambda(y, fbp_image, scale: float = 1e-2) -> float:
    """Data-adaptive TV weight ``scale * mean|y| / mean|grad fbp|``."""
    g = grad(fbp_image)
    mg = float(np.mean(np.sqrt(g[0] ** 2 + g[1] ** 2)))
    my = float(np.mean(np.abs(y)))
    if mg == 0 or my == 0:
        return scale
    return scale * my / mg
