"""Command-line interface: ``psdm-ct <subcommand> ...``.

Options can also come from a JSON file (``--config``); explicit flags win
over file values, which win over built-in defaults. Images on disk are in
attenuation units (1/mm). ``simulate`` writes the scan geometry next to the
sinogram (``<output>.json``) and ``reconstruct`` picks it up from there.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .diffusion import GmmPrior, GmmScore, NoiseSchedule, OracleScore, ZeroScore
from .errors import PsdmError
from .fusion import build_missing_wedge_mask
from .lact_io import Kind, atomic_write_bytes, read_lact, write_lact, write_png
from .metrics import evaluate
from .pipeline import PsdmConfig, psdm_reconstruct
from .simulate import (UNIT_MAPS, NoiseModel, PhantomKind, PhantomSpec, hu_to_attenuation,
                       make_phantom, simulate_measurement)
from .tomo import ScanGeometry, build_geometry, clinical_fan_geometry, fbp, operator_norm
from .variational import PdhgParams, default_lambda, pdhg_tv

logger = logging.getLogger(__name__)

DEFAULT_HU_WINDOW = (-540.0, 1000.0)

GEOMETRY_DEFAULTS = {
    "preset": None,
    "beam": "parallel",
    "start_deg": 0.0,
    "arc_deg": 120.0,
    "views": 120,
    "det": 256,
    "det_spacing": 1.0,
    "src_to_origin": None,
    "src_to_det": None,
    "fov_radius": 128.0,
}

DEFAULTS = {
    "phantom": {"kind": "shepp-logan", "size": 128, "seed": 0, "pixel_size": 1.0,
                "units": "attenuation", "png": None},
    "simulate": {**GEOMETRY_DEFAULTS, "noiseless": False, "i0": 1e5, "sigma_e": 10.0,
                 "epsilon": 0.5, "seed": 0, "phantom_kind": None},
    "reconstruct": {**GEOMETRY_DEFAULTS, "method": "fbp", "filter": "ramlak", "size": None,
                    "pixel_size": None, "phantom_kind": "shepp-logan", "lam": None,
                    "iters": 500, "steps": 1000, "inner": 30, "snr": 0.16,
                    "sigma_min": 0.01, "sigma_max": 1.0, "ff_window": [0.4, 0.8],
                    "no_ff": False, "complement_lact": False, "seed": 0,
                    "deterministic": False, "score": "oracle", "reference": None,
                    "lact_filter": "hann", "trace": None, "metrics": None, "png": None,
                    "window": None, "hu": False, "jobs": 1, "geometry": None, "output": None},
    "evaluate": {"range": None, "bins": 256, "output": None},
    "mask": {**GEOMETRY_DEFAULTS, "size": 128, "png": None, "geometry": None},
    "render": {"window": None, "hu": False},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage().strip()}\n{self.prog}: error: {message}")


def _add_geometry(p):
    g = p.add_argument_group("geometry")
    g.add_argument("--preset", choices=["clinical-fan"],
                   help="835-cell equiangular fan; --arc-deg/--views/--start-deg still apply")
    g.add_argument("--beam", choices=["parallel", "fan"])
    g.add_argument("--start-deg", type=float, dest="start_deg")
    g.add_argument("--arc-deg", type=float, dest="arc_deg", help="angular coverage in degrees")
    g.add_argument("--views", type=int)
    g.add_argument("--det", type=int, help="number of detector cells")
    g.add_argument("--det-spacing", type=float, dest="det_spacing",
                   help="mm (parallel) or radians (fan)")
    g.add_argument("--src-to-origin", type=float, dest="src_to_origin")
    g.add_argument("--src-to-det", type=float, dest="src_to_det")
    g.add_argument("--fov-radius", type=float, dest="fov_radius")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="psdm-ct", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def cmd(name, help_):
        p = sub.add_parser(name, help=help_, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="JSON file with option values")
        return p

    p = cmd("phantom", "generate a phantom image")
    p.add_argument("--kind", choices=[k.value for k in PhantomKind])
    p.add_argument("--size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--pixel-size", type=float, dest="pixel_size")
    p.add_argument("--units", choices=["attenuation", "normalized"])
    p.add_argument("--png")
    p.add_argument("-o", "--output", required=True)

    p = cmd("simulate", "project a phantom and add measurement noise")
    p.add_argument("-i", "--input", required=True)
    _add_geometry(p)
    p.add_argument("--noiseless", action="store_true")
    p.add_argument("--i0", type=float)
    p.add_argument("--sigma-e", type=float, dest="sigma_e")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--output", required=True)

    p = cmd("reconstruct", "reconstruct an image from a sinogram")
    p.add_argument("-i", "--input")
    p.add_argument("--geometry", help="geometry JSON (default: <input>.json)")
    _add_geometry(p)
    p.add_argument("--method", choices=["fbp", "pdhg_tv", "psdm"])
    p.add_argument("--filter", choices=["ramlak", "shepplogan", "hann"])
    p.add_argument("--size", type=int)
    p.add_argument("--pixel-size", type=float, dest="pixel_size")
    p.add_argument("--phantom-kind", dest="phantom_kind", choices=[k.value for k in PhantomKind],
                   help="selects the normalised/attenuation unit map")
    p.add_argument("--lambda", type=float, dest="lam")
    p.add_argument("--iters", type=int, help="PDHG-TV iterations (pdhg_tv)")
    p.add_argument("--steps", type=int, help="reverse diffusion steps I")
    p.add_argument("--inner", type=int, help="PDHG iterations per step N")
    p.add_argument("--snr", type=float)
    p.add_argument("--sigma-min", type=float, dest="sigma_min")
    p.add_argument("--sigma-max", type=float, dest="sigma_max")
    p.add_argument("--ff-window", type=float, nargs=2, dest="ff_window", metavar=("LO", "HI"))
    p.add_argument("--no-ff", action="store_true", dest="no_ff")
    p.add_argument("--complement-lact", action="store_true", dest="complement_lact")
    p.add_argument("--lact-filter", dest="lact_filter", choices=["ramlak", "shepplogan", "hann"])
    p.add_argument("--seed", type=int)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--score", help="oracle | zero | gmm:PATH")
    p.add_argument("--reference")
    p.add_argument("--trace")
    p.add_argument("--metrics")
    p.add_argument("--png")
    p.add_argument("--window", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--hu", action="store_true", help="interpret --window in HU")
    p.add_argument("--jobs", type=int)
    p.add_argument("-o", "--output")

    p = cmd("evaluate", "compare an image against a reference")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--range", type=float)
    p.add_argument("--bins", type=int)
    p.add_argument("-o", "--output")

    p = cmd("mask", "export the missing-wedge frequency mask")
    p.add_argument("--geometry")
    _add_geometry(p)
    p.add_argument("--size", type=int)
    p.add_argument("--png")
    p.add_argument("-o", "--output", required=True)

    p = cmd("render", "render a LACT1 file as PNG")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--window", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--hu", action="store_true")
    p.add_argument("-o", "--output", required=True)
    return parser


def _options(command, ns) -> dict:
    opts = dict(DEFAULTS[command])
    given = {k: v for k, v in vars(ns).items() if k not in ("command", "verbose")}
    path = given.pop("config", None)
    explicit = set()
    if path:
        with open(path) as fh:
            file_opts = json.load(fh)
        file_opts.update(file_opts.pop("noise", None) or {})
        geom = file_opts.pop("geometry", None)
        if isinstance(geom, dict):
            file_opts.update(geom)
        elif geom is not None:
            file_opts["geometry"] = geom
        opts.update(file_opts)
        explicit.update(file_opts)
    opts.update(given)
    explicit.update(given)
    opts["_explicit"] = tuple(explicit)
    return opts


def _build_geometry(vals: dict) -> ScanGeometry:
    start = np.deg2rad(vals["start_deg"])
    arc = np.deg2rad(vals["arc_deg"])
    if vals.get("preset") == "clinical-fan":
        return clinical_fan_geometry(arc, vals["views"], start)
    return build_geometry(vals["beam"], start, start + arc, vals["views"], vals["det"],
                          vals["det_spacing"], src_to_origin=vals["src_to_origin"],
                          src_to_det=vals["src_to_det"], fov_radius=vals["fov_radius"])


def _flags_from_dict(d: dict) -> dict:
    return {
        "beam": d["beam"],
        "start_deg": math.degrees(d["angle_start"]),
        "arc_deg": math.degrees(d["angle_end"] - d["angle_start"]),
        "views": d["n_angles"],
        "det": d["n_det"],
        "det_spacing": d["det_spacing"],
        "src_to_origin": d.get("src_to_origin"),
        "src_to_det": d.get("src_to_det"),
        "fov_radius": d["fov_radius"],
    }


def _resolve_geometry(opts):
    """Geometry from defaults, then a geometry file or sidecar, then explicit options."""
    vals = dict(GEOMETRY_DEFAULTS)
    px = None
    path = opts.get("geometry")
    if path is None and opts.get("input") and os.path.exists(opts["input"] + ".json"):
        path = opts["input"] + ".json"
    if path is not None:
        with open(path) as fh:
            doc = json.load(fh)
        vals.update(_flags_from_dict(doc.get("geometry", doc)))
        px = doc.get("pixel_size")
    vals.update({k: opts[k] for k in opts.get("_explicit", ()) if k in GEOMETRY_DEFAULTS})
    if vals.get("preset") == "clinical-fan" and path is not None:
        vals["preset"] = None
    geom = _build_geometry(vals)
    if path is not None and geom != ScanGeometry.from_dict(doc.get("geometry", doc)):
        logger.info("geometry from %s overridden by options", path)
    return geom, px


def _write_json(path, doc):
    atomic_write_bytes(path, (json.dumps(doc, indent=2) + "\n").encode())


def _png_window(opts, img):
    window = opts.get("window")
    if opts.get("hu"):
        window = hu_to_attenuation(window if window is not None else DEFAULT_HU_WINDOW)
    return window


# ---------------------------------------------------------------- subcommands


def cmd_phantom(opts):
    kind = PhantomKind(opts["kind"])
    img = make_phantom(PhantomSpec(kind, opts["size"], opts["seed"]))
    if opts["units"] == "attenuation":
        img = UNIT_MAPS[kind].to_attenuation(img)
    write_lact(opts["output"], img, Kind.IMAGE, opts["pixel_size"])
    if opts.get("png"):
        write_png(opts["png"], img)


def cmd_simulate(opts):
    src = read_lact(opts["input"])
    geom = _build_geometry(opts)
    nm = None if opts["noiseless"] else NoiseModel(opts["i0"], opts["sigma_e"], opts["epsilon"])
    y = simulate_measurement(src.data.astype(float), geom, nm, opts["seed"], src.spacing)
    write_lact(opts["output"], y, Kind.SINOGRAM, geom.det_spacing)
    _write_json(opts["output"] + ".json", {"geometry": geom.to_dict(), "pixel_size": src.spacing})


def _make_score(opts, sched, shape, unit_map, reference):
    spec = str(opts["score"])
    if spec == "oracle":
        if reference is None:
            raise PsdmError("the oracle score needs --reference")
        return OracleScore(unit_map.to_normalized(reference), sched)
    if spec == "zero":
        return ZeroScore()
    if spec.startswith("gmm:"):
        prior = GmmPrior.load(spec[4:])
        if prior.shape != tuple(shape):
            raise PsdmError(f"GMM prior shape {prior.shape} != image shape {tuple(shape)}")
        return GmmScore(prior, sched)
    raise PsdmError(f"unknown score {spec!r}")


def run_reconstruction(opts) -> dict:
    """Execute one reconstruction; returns the metrics dict (or empty)."""
    if not opts.get("input") or not opts.get("output"):
        raise UsageError("reconstruct needs -i/--input and -o/--output")
    sino = read_lact(opts["input"])
    y = sino.data.astype(float)
    geom, sidecar_px = _resolve_geometry(opts)
    reference = None
    ref_px = None
    if opts.get("reference"):
        ref = read_lact(opts["reference"])
        reference, ref_px = ref.data.astype(float), ref.spacing
    size = opts["size"] or (reference.shape[0] if reference is not None else 128)
    shape = (size, size)
    px = opts["pixel_size"] or ref_px or sidecar_px or 1.0
    um = UNIT_MAPS[PhantomKind(opts["phantom_kind"])]
    method = opts["method"]

    if method == "fbp":
        img = fbp(y, geom, opts["filter"], shape, px)
    elif method == "pdhg_tv":
        y_n = y / um.scale if not um.offset else None
        if y_n is None:
            raise PsdmError("pdhg_tv in the CLI supports offset-free unit maps only")
        x_fbp = um.to_normalized(fbp(y, geom, opts["lact_filter"], shape, px))
        lam = opts["lam"] or default_lambda(y_n, x_fbp)
        L = operator_norm(geom, shape, tol=1e-7, max_iter=5000, pixel_size=px)
        params = PdhgParams.from_norm(L, lam, opts["iters"])
        x, _ = pdhg_tv(y_n, geom, params, shape=shape, pixel_size=px,
                       diagnostics_path=opts.get("trace"))
        img = um.to_attenuation(x)
    elif method == "psdm":
        sched = NoiseSchedule(opts["sigma_min"], opts["sigma_max"], opts["steps"])
        score = _make_score(opts, sched, shape, um, reference)
        cfg = PsdmConfig(
            sched=sched, n_inner=opts["inner"], lam=opts["lam"], snr=opts["snr"],
            ff_window=tuple(opts["ff_window"]), ff_enabled=not opts["no_ff"],
            complement_lact=opts["complement_lact"], seed=opts["seed"],
            deterministic=opts["deterministic"], lact_filter=opts["lact_filter"], unit_map=um,
        )
        img, trace = psdm_reconstruct(y, geom, score, cfg, shape, px, reference)
        if opts.get("trace"):
            trace.write_csv(opts["trace"])
    else:
        raise UsageError(f"unknown method {method!r}")

    write_lact(opts["output"], img, Kind.IMAGE, px)
    if opts.get("png"):
        write_png(opts["png"], img, _png_window(opts, img))
    report = {}
    if reference is not None:
        stored = read_lact(opts["output"]).data.astype(float)
        rep = evaluate(stored, reference)
        report = rep.__dict__
        if opts.get("metrics"):
            atomic_write_bytes(opts["metrics"], (rep.to_json() + "\n").encode())
    return report


def cmd_reconstruct(opts):
    runs = opts.pop("runs", None)
    if not runs:
        run_reconstruction(opts)
        return
    merged = [{**opts, **r, "_explicit": tuple(opts["_explicit"]) + tuple(r)} for r in runs]
    if opts.get("jobs", 1) > 1:
        with ProcessPoolExecutor(max_workers=opts["jobs"]) as pool:
            list(pool.map(run_reconstruction, merged))
    else:
        for r in merged:
            run_reconstruction(r)


def cmd_evaluate(opts):
    img = read_lact(opts["input"]).data.astype(float)
    ref = read_lact(opts["reference"]).data.astype(float)
    rep = evaluate(img, ref, opts["range"], opts["bins"])
    text = rep.to_json() + "\n"
    if opts.get("output"):
        atomic_write_bytes(opts["output"], text.encode())
    else:
        sys.stdout.write(text)


def cmd_mask(opts):
    geom, _ = _resolve_geometry(opts)
    mask = build_missing_wedge_mask(geom, (opts["size"], opts["size"]))
    write_lact(opts["output"], mask, Kind.IMAGE, 1.0)
    if opts.get("png"):
        write_png(opts["png"], mask, (0.0, 1.0))


def cmd_render(opts):
    img = read_lact(opts["input"]).data.astype(float)
    if img.ndim != 2:
        raise PsdmError("render supports 2D real grids only")
    write_png(opts["output"], img, _png_window(opts, img))


COMMANDS = {
    "phantom": cmd_phantom,
    "simulate": cmd_simulate,
    "reconstruct": cmd_reconstruct,
    "evaluate": cmd_evaluate,
    "mask": cmd_mask,
    "render": cmd_render,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        if not ns.command:
            raise UsageError(parser.format_usage().strip())
        opts = _options(ns.command, ns)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return 1
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[ns.command](opts)
    except UsageError as exc:
        sys.stderr.write(f"{parser.prog} {ns.command}: {exc}\n")
        return 1
    except (PsdmError, OSError, ValueError, KeyError) as exc:
        module = getattr(exc, "module", None) or ("lact_io" if isinstance(exc, OSError) else "cli")
        sys.stderr.write(f"{parser.prog} {ns.command}: error in {module}: "
                         f"{type(exc).__name__}: {exc}\n")
        return 2
    return 0


run_cli = main


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
