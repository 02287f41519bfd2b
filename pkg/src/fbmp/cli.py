"""Command-line entry point ``fbmp``.

Every numeric parameter can come from built-in defaults, a ``key = value``
config file (``--config``) or a flag, in increasing order of precedence.
Each command that writes an artifact also writes ``<artifact>.params``
recording the effective parameters and SHA-256 digests of its inputs.

Exit codes: 0 success, 1 usage or invalid input, 2 I/O, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import bench_kernel_priors, bench_priors
from .errors import DimensionError, FbmpError, FormatError, NumericalError, ParameterError
from .kernel_est import ESTIMATORS, KernelEstParams
from .metrics import DEFAULT_BORDER, evaluate
from .ops import check_kernel
from .pansharpen import PansharpenParams, pansharpen
from .raster import load_raster, save_raster
from .simulate import SyntheticKernelSpec, make_scene, simulate_lrms, synth_kernel
from .weights import SpectralWeightConfig, solve_weights

log = logging.getLogger("fbmp")

EXIT_USAGE, EXIT_IO, EXIT_NUMERICAL = 1, 2, 3


class UsageError(Exception):
    pass


# name -> (type, default); shared by flags and config files
PARAMS = {
    "lambda_omega": (float, 10.0),
    "l": (int, 4),
    "alpha1": (float, 1.0),
    "alpha2": (float, 0.006),
    "mu1": (float, 100.0),
    "mu2": (float, 100.0),
    "mu3": (float, 100.0),
    "rho": (float, 0.5),
    "t_max": (int, 10000),
    "th": (float, 1e-5),
    "n": (int, 29),
    "estimator": (str, "tgv"),
    "init": (str, "dirac"),
    "intensity_scale": (float, 255.0),
    "lam": (float, 2e-4),
    "r": (int, 1),
    "eps": (float, 1e-4),
    "cg_tol": (float, 5e-5),
    "cg_maxiter": (int, 2000),
    "prior": (str, "laplacian"),
    "border": (int, DEFAULT_BORDER),
    "c": (int, 4),
    "pan_bands": (str, ""),
    "seed": (int, 0),
    "threads": (int, 0),
}

KERNEL_KEYS = ("alpha1", "alpha2", "mu1", "mu2", "mu3", "rho", "t_max", "th", "n",
               "estimator", "init", "intensity_scale")
WEIGHT_KEYS = ("lambda_omega", "l", "pan_bands", "intensity_scale")
SHARPEN_KEYS = ("lam", "r", "eps", "cg_tol", "cg_maxiter", "prior", "threads")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def read_config(path) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    for no, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{no}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in PARAMS:
            raise UsageError(f"{path}:{no}: unknown parameter {key!r}")
        out[key] = val
    return out


def _convert(key, raw):
    typ = PARAMS[key][0]
    try:
        return typ(raw)
    except (TypeError, ValueError):
        raise UsageError(f"invalid value for {key}: {raw!r}") from None


def effective_params(args, keys, defaults=None) -> dict:
    """Resolve ``keys`` with precedence defaults < config file < flags."""
    conf = read_config(args.config) if getattr(args, "config", None) else {}
    defaults = defaults or {}
    out = {}
    for key in keys:
        val = getattr(args, key, None)
        if val is None:
            if key in conf:
                val = _convert(key, conf[key])
            else:
                val = defaults.get(key, PARAMS[key][1])
        out[key] = val
    return out


def _add_params(p, keys):
    for key in keys:
        typ, default = PARAMS[key]
        flag = "--" + key.replace("_", "-")
        p.add_argument(flag, dest=key, type=typ, default=None,
                       help=f"(default {default!r})")


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_sidecar(artifact, params: dict, inputs: dict) -> Path:
    lines = [f"{k} = {v}" for k, v in params.items()]
    lines += [f"digest.{name} = {sha256(p)}" for name, p in inputs.items()]
    side = Path(str(artifact) + ".params")
    side.write_text("\n".join(lines) + "\n")
    return side


def _pan_plane(path):
    pan = load_raster(path)
    if pan.shape[2] != 1:
        raise DimensionError(f"PAN raster {path} has {pan.shape[2]} bands, expected 1")
    return pan[:, :, 0].astype(np.float64)


def _kernel(path):
    k = load_raster(path)
    if k.shape[2] != 1:
        raise DimensionError(f"kernel raster {path} has {k.shape[2]} bands")
    return check_kernel(k[:, :, 0].astype(np.float64))


def _pan_bands(spec: str, n_bands: int) -> tuple:
    if not spec:
        return tuple(range(n_bands))
    try:
        idx = tuple(int(s) for s in spec.split(","))
    except ValueError:
        raise UsageError(f"--pan-bands must be comma-separated integers, got {spec!r}") from None
    bad = [i for i in idx if i < 0 or i >= n_bands]
    if bad:
        raise UsageError(f"--pan-bands {bad} out of range for {n_bands} LRMS bands")
    return idx


def _check_sizes(lrms, pan, c):
    h, w = lrms.shape[:2]
    if pan.shape != (c * h, c * w):
        raise DimensionError(
            f"PAN is {pan.shape[0]}x{pan.shape[1]} but must be {c}x the LRMS size {h}x{w}")


def _kernel_params(eff) -> KernelEstParams:
    if eff["estimator"] not in ESTIMATORS:
        raise UsageError(f"unknown estimator {eff['estimator']!r}")
    p = KernelEstParams(n=eff["n"], alpha1=eff["alpha1"], alpha2=eff["alpha2"],
                        mu1=eff["mu1"], mu2=eff["mu2"], mu3=eff["mu3"], rho=eff["rho"],
                        t_max=eff["t_max"], th=eff["th"], scale=eff["intensity_scale"])
    p.validate(allow_zero_weights=eff["estimator"] == "l2")
    return p


def _sharpen_params(eff) -> PansharpenParams:
    p = PansharpenParams(lam=eff["lam"], r=eff["r"], eps=eff["eps"], cg_tol=eff["cg_tol"],
                         cg_maxiter=eff["cg_maxiter"], prior_filter=eff["prior"])
    p.validate()
    return p


def _estimate(lrms, pan, eff):
    c = eff["c"]
    _check_sizes(lrms, pan, c)
    bands = _pan_bands(eff["pan_bands"], lrms.shape[2])
    cfg = SpectralWeightConfig(bands, l=eff["l"], lambda_omega=eff["lambda_omega"], c=c,
                               scale=eff["intensity_scale"])
    cfg.validate(lrms.shape[2])
    kp = _kernel_params(eff)
    subset = lrms[:, :, list(bands)]
    omega = solve_weights(subset, pan, cfg)
    log.info("spectral weights %s", np.array2string(omega, precision=4))
    k = ESTIMATORS[eff["estimator"]](subset, pan, omega, c, kp, init=eff["init"])
    return k, omega


# commands

def cmd_make_kernel(args):
    spec = SyntheticKernelSpec(sigma=args.sigma, cx=args.cx, cy=args.cy, d=args.d,
                               theta=args.theta, R=args.R)
    k = synth_kernel(spec)
    save_raster(k, args.out)
    pi, pj = np.unravel_index(np.argmax(k), k.shape)
    summary = {
        "sigma": spec.sigma, "cx": spec.cx, "cy": spec.cy, "d": spec.d,
        "theta": spec.theta, "R": spec.R, "size": k.shape[0],
        "sum": float(k.sum()), "peak_row": int(pi - spec.R), "peak_col": int(pj - spec.R),
    }
    write_sidecar(args.out, summary, {})
    for key, val in summary.items():
        print(f"{key} = {val}")


def cmd_make_scene(args):
    eff = effective_params(args, ("seed",))
    cube, pan, w = make_scene(args.size, args.bands, seed=eff["seed"], smooth=args.smooth)
    save_raster(cube, args.out_hrms)
    save_raster(pan, args.out_pan)
    params = {"size": args.size, "bands": args.bands, "smooth": args.smooth,
              "seed": eff["seed"], "pan_weights": ",".join(f"{v:.6g}" for v in w)}
    write_sidecar(args.out_hrms, params, {})
    write_sidecar(args.out_pan, params, {})


def cmd_simulate(args):
    eff = effective_params(args, ("c", "seed"))
    hrms = load_raster(args.hrms).astype(np.float64)
    k = _kernel(args.kernel)
    lrms = simulate_lrms(hrms, k, eff["c"], noise_psnr_db=args.noise_psnr, seed=eff["seed"])
    save_raster(lrms, args.out)
    write_sidecar(args.out, {**eff, "noise_psnr": args.noise_psnr},
                  {"hrms": args.hrms, "kernel": args.kernel})


def cmd_estimate_kernel(args):
    eff = effective_params(args, ("c",) + WEIGHT_KEYS + KERNEL_KEYS)
    lrms = load_raster(args.lrms).astype(np.float64)
    pan = _pan_plane(args.pan)
    k, omega = _estimate(lrms, pan, eff)
    save_raster(k, args.out)
    eff["omega"] = ",".join(f"{v:.10g}" for v in omega)
    write_sidecar(args.out, eff, {"lrms": args.lrms, "pan": args.pan})


def cmd_pansharpen(args):
    eff = effective_params(args, ("c",) + SHARPEN_KEYS)
    lrms = load_raster(args.lrms).astype(np.float64)
    pan = _pan_plane(args.pan)
    k = _kernel(args.kernel)
    _check_sizes(lrms, pan, eff["c"])
    out = pansharpen(lrms, pan, k, eff["c"], _sharpen_params(eff), threads=eff["threads"])
    save_raster(out, args.out)
    write_sidecar(args.out, eff, {"lrms": args.lrms, "pan": args.pan, "kernel": args.kernel})


def cmd_blind(args):
    eff = effective_params(args, ("c",) + WEIGHT_KEYS + KERNEL_KEYS + SHARPEN_KEYS)
    lrms = load_raster(args.lrms).astype(np.float64)
    pan = _pan_plane(args.pan)
    sp = _sharpen_params(eff)
    k, omega = _estimate(lrms, pan, eff)
    out = pansharpen(lrms, pan, k, eff["c"], sp, threads=eff["threads"])
    save_raster(out, args.out)
    save_raster(k, args.kernel_out)
    eff["omega"] = ",".join(f"{v:.10g}" for v in omega)
    inputs = {"lrms": args.lrms, "pan": args.pan}
    write_sidecar(args.out, eff, inputs)
    write_sidecar(args.kernel_out, eff, inputs)


def cmd_metrics(args):
    eff = effective_params(args, ("c", "border"))
    if args.ref is None and args.pan is None and args.kernel_truth is None:
        raise UsageError("metrics needs --ref, --pan or --kernel/--kernel-truth")
    if (args.kernel is None) != (args.kernel_truth is None):
        raise UsageError("--kernel and --kernel-truth must be given together")
    est = load_raster(args.est).astype(np.float64)
    ref = load_raster(args.ref).astype(np.float64) if args.ref else None
    pan = _pan_plane(args.pan) if args.pan else None
    kern = _kernel(args.kernel) if args.kernel else None
    truth = _kernel(args.kernel_truth) if args.kernel_truth else None
    rep = evaluate(est, ref=ref, pan=pan, c=eff["c"], peak=args.peak, border=eff["border"],
                   kernel=kern, kernel_truth=truth)
    text = rep.to_text()
    sys.stdout.write(text)
    inputs = {"est": args.est}
    for name in ("ref", "pan", "kernel", "kernel_truth"):
        if getattr(args, name):
            inputs[name] = getattr(args, name)
    if args.out:
        Path(args.out).write_text(text)
        write_sidecar(args.out, {**eff, "peak": args.peak}, inputs)
    if args.csv:
        Path(args.csv).write_text(rep.to_csv())


def _parse_psnrs(spec: str):
    vals = []
    for tok in spec.split(","):
        tok = tok.strip().lower()
        if not tok:
            continue
        if tok in ("inf", "none", "noiseless"):
            vals.append(None)
        else:
            try:
                vals.append(float(tok))
            except ValueError:
                raise UsageError(f"bad PSNR value {tok!r}") from None
    if not vals:
        raise UsageError("--psnr needs at least one noise level")
    return vals


def cmd_bench_kernel_priors(args):
    eff = effective_params(args, ("c", "seed"), {"seed": 1})
    psnrs = _parse_psnrs(args.psnr)
    rows = bench_kernel_priors(psnrs, size=args.size, c=eff["c"], seed=eff["seed"])
    lines = ["psnr_db,l2_pct,tv_pct,tgv_pct"]
    for r in rows:
        label = "inf" if r.psnr_db is None else f"{r.psnr_db:g}"
        lines.append(f"{label},{r.errors['l2']:.2f},{r.errors['tv']:.2f},{r.errors['tgv']:.2f}")
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)
        write_sidecar(args.out, {**eff, "psnr": args.psnr, "size": args.size}, {})


def cmd_bench_priors(args):
    eff = effective_params(args, ("c", "seed", "threads"), {"c": 2, "seed": 1})
    scores, lams = bench_priors(size=args.size, c=eff["c"], seed=eff["seed"],
                                threads=eff["threads"])
    names = list(scores)
    text = ("factor," + ",".join(names) + "\n"
            + f"x{eff['c']}," + ",".join(f"{scores[n]:.2f}" for n in names) + "\n"
            + "lambda," + ",".join(f"{lams[n]:g}" if lams[n] else "" for n in names) + "\n")
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)
        write_sidecar(args.out, {**eff, "size": args.size}, {})


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="fbmp", description="Blind multispectral pansharpening.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value parameter file")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("make-kernel", help="write a synthetic blur kernel")
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--cx", type=float, default=0.0)
    p.add_argument("--cy", type=float, default=0.0)
    p.add_argument("--d", type=float, default=0.0)
    p.add_argument("--theta", type=float, default=0.0, help="degrees")
    p.add_argument("--R", type=int, default=9)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_kernel)

    p = sub.add_parser("make-scene", parents=[common], help="write a synthetic HRMS cube and PAN")
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--bands", type=int, default=4)
    p.add_argument("--smooth", action="store_true")
    _add_params(p, ("seed",))
    p.add_argument("--out-hrms", required=True)
    p.add_argument("--out-pan", required=True)
    p.set_defaults(func=cmd_make_scene)

    p = sub.add_parser("simulate", parents=[common], help="blur, decimate and add noise")
    p.add_argument("--hrms", required=True)
    p.add_argument("--kernel", required=True)
    p.add_argument("--noise-psnr", type=float, default=None, help="dB, peak 1")
    _add_params(p, ("c", "seed"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate-kernel", parents=[common], help="spectral weights + kernel")
    p.add_argument("--lrms", required=True)
    p.add_argument("--pan", required=True)
    _add_params(p, ("c",) + WEIGHT_KEYS[:-1] + KERNEL_KEYS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate_kernel)

    p = sub.add_parser("pansharpen", parents=[common], help="fuse with a known kernel")
    p.add_argument("--lrms", required=True)
    p.add_argument("--pan", required=True)
    p.add_argument("--kernel", required=True)
    _add_params(p, ("c",) + SHARPEN_KEYS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pansharpen)

    p = sub.add_parser("blind", parents=[common], help="estimate the kernel then fuse")
    p.add_argument("--lrms", required=True)
    p.add_argument("--pan", required=True)
    _add_params(p, ("c",) + WEIGHT_KEYS[:-1] + KERNEL_KEYS + SHARPEN_KEYS)
    p.add_argument("--out", required=True)
    p.add_argument("--kernel-out", required=True)
    p.set_defaults(func=cmd_blind)

    p = sub.add_parser("metrics", parents=[common], help="quality report")
    p.add_argument("--est", required=True)
    p.add_argument("--ref")
    p.add_argument("--pan")
    p.add_argument("--kernel")
    p.add_argument("--kernel-truth")
    p.add_argument("--peak", type=float, default=1.0,
                   help="dynamic range of the rasters (1 for [0, 1] data)")
    _add_params(p, ("c", "border"))
    p.add_argument("--out", help="key = value report")
    p.add_argument("--csv", help="metric,value rows")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("bench-kernel-priors", parents=[common],
                       help="relative error of the l2/TV/TGV2 kernel regularizers")
    p.add_argument("--psnr", default="inf,40,30,20",
                   help="comma-separated noise levels in dB; inf = noiseless")
    p.add_argument("--size", type=int, default=128)
    _add_params(p, ("c", "seed"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench_kernel_priors)

    p = sub.add_parser("bench-priors", parents=[common],
                       help="PSNR of the LLP/LPP/HPF/LPF cross-channel priors")
    p.add_argument("--size", type=int, default=128)
    _add_params(p, ("c", "seed", "threads"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench_priors)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"fbmp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, OSError) as exc:
        print(f"fbmp: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as exc:
        print(f"fbmp: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DimensionError, ParameterError, FbmpError, ValueError) as exc:
        print(f"fbmp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
