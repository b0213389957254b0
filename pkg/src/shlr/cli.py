"""Command-line front end.

Every subcommand takes ``--config FILE`` with ``key=value`` lines; each key is
also a ``--key VALUE`` flag and flags win over the file. Each run writes
``<out>_manifest.txt`` holding the fully resolved configuration, which can be
fed back through ``--config`` to repeat the run.

Exit codes: 0 success, 2 missing file or bad configuration, 3 dimension
mismatch, 4 solver divergence.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time

import numpy as np

from shlr.metrics import MetricReport, append_metrics_row, evaluate, mssim, rlne
from shlr.operators import HankelConfig, fft2d_centered, hankel_dims, spirit_calibrate
from shlr.parammap import ParameterDataset, recon_param_dataset, t2_map
from shlr.sampling import (
    apply_partial_fourier,
    find_acs_region,
    mask_gauss_cartesian,
    mask_random2d,
    mask_uniform,
    mask_uniform_pep,
)
from shlr.solvers import AdmmConfig, DivergenceError, shlr_pi_reconstruct
from shlr.synth import PhantomSpec, Shape, default_shapes, export_phantom, gen_pi_phantom, gen_t2_phantom
from shlr.tensor_io import CplxFormatError, read_cplx, ssos, write_cplx

EXIT_OK, EXIT_INPUT, EXIT_DIMS, EXIT_DIVERGED = 0, 2, 3, 4

PI_METHODS = ("shlr", "shlr-s", "shlr-v", "shlr-sv")
PARAM_METHODS = ("shlr-p", "shlr-vp")


class InputError(Exception):
    pass


class DimensionError(Exception):
    pass


def _bool(text):
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text):
    if text is None or str(text).strip().lower() in ("", "none", "auto"):
        return None
    return int(text)


def _floats(text):
    if isinstance(text, (list, tuple)):
        return tuple(float(t) for t in text)
    return tuple(float(t) for t in str(text).replace(",", " ").split())


def _ints(text):
    if isinstance(text, (list, tuple)):
        return tuple(int(t) for t in text)
    return tuple(int(t) for t in str(text).replace(",", " ").split())


def _strs(text):
    if isinstance(text, (list, tuple)):
        return tuple(text)
    return tuple(t for t in str(text).replace(",", " ").split())


def _path(text):
    return None if text in (None, "", "none") else os.path.abspath(str(text))


def _fmt(value):
    if isinstance(value, (list, tuple)):
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return "none" if value is None else str(value)


# Keys are (type, default). Solver keys default to None so the method decides.
ADMM_KEYS = {
    "lam": (float, None),
    "lam1": (float, None),
    "lam2": (float, None),
    "beta": (float, None),
    "tau": (float, None),
    "max_outer": (int, None),
    "tol": (float, None),
    "cg_max": (int, None),
    "cg_tol": (float, None),
    "enable_spirit": (_bool, None),
    "enable_vc": (_bool, None),
    "d_init": (float, None),
    "x_update": (str, None),
    "normalize": (_bool, None),
}
HANKEL_KEYS = {
    "pencil": (_opt_int, None),
    "pencil_param": (_opt_int, None),
    "filter_taps": (_floats, (1.0, -1.0)),
}
COMMON_KEYS = {"out": (_path, None), "seed": (int, 0), "log_level": (str, "WARNING")}

SCHEMAS = {
    "mask": {
        **COMMON_KEYS,
        "kind": (str, "gauss"),
        "M": (_opt_int, None),
        "N": (int, 256),
        "L": (int, 1),
        "R": (int, 4),
        "acs": (int, 0),
        "rate": (float, 0.34),
        "center": (int, 0),
        "pf": (float, 1.0),
    },
    "phantom": {
        **COMMON_KEYS,
        "kind": (str, "pi"),
        "M": (int, 64),
        "N": (int, 64),
        "J": (int, 2),
        "L": (int, 15),
        "te_first": (float, 8.8),
        "te_spacing": (float, 8.8),
        "t2_values": (_floats, (50.0, 120.0)),
        "amplitudes": (_floats, (800.0, 1000.0)),
        "phase_smoothness": (float, 0.0),
        "noise_sigma": (float, 0.0),
    },
    "recon-pi": {
        **COMMON_KEYS,
        **ADMM_KEYS,
        **HANKEL_KEYS,
        "input": (_path, None),
        "mask": (_path, None),
        "method": (str, "shlr-sv"),
        "reference": (_path, None),
        "metrics": (_path, None),
        "dataset": (str, "data"),
        "kernel_size": (int, 5),
        "tikhonov": (float, 1e-4),
    },
    "recon-param": {
        **COMMON_KEYS,
        **ADMM_KEYS,
        **HANKEL_KEYS,
        "input": (_path, None),
        "tes": (_path, None),
        "mask": (_path, None),
        "method": (str, "shlr-vp"),
        "reference": (_path, None),
        "metrics": (_path, None),
        "dataset": (str, "data"),
        "t2map": (_bool, True),
        "roi_threshold": (float, 0.1),
        "t2_max": (float, 400.0),
        "workers": (int, 1),
    },
    "t2fit": {
        **COMMON_KEYS,
        "input": (_path, None),
        "tes": (_path, None),
        "roi_threshold": (float, 0.1),
        "t2_max": (float, 400.0),
    },
    "metrics": {
        **COMMON_KEYS,
        "reference": (_path, None),
        "input": (_path, None),
        "dataset": (str, "data"),
        "method": (str, "unknown"),
        "mask_label": (str, "unknown"),
        "runtime_s": (float, 0.0),
        "iters": (int, 0),
    },
    "bench": {
        **COMMON_KEYS,
        **ADMM_KEYS,
        **HANKEL_KEYS,
        "sizes": (_ints, (32, 64)),
        "methods": (_strs, ("shlr-sv",)),
        "J": (int, 2),
        "rate": (float, 0.5),
        "acs": (int, 8),
        "kernel_size": (int, 5),
        "tikhonov": (float, 1e-4),
    },
}


def read_config_file(path):
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    if not os.path.exists(path):
        raise InputError(f"config file not found: {path}")
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def resolve_config(command, file_values, flag_values):
    """Merge defaults, config file and flags; reject unknown keys."""
    schema = SCHEMAS[command]
    unknown = sorted(set(file_values) - set(schema))
    if unknown:
        raise InputError(f"unknown config keys for {command}: {', '.join(unknown)}")
    cfg = {}
    for key, (conv, default) in schema.items():
        raw = flag_values.get(key)
        if raw is None:
            raw = file_values.get(key)
        try:
            cfg[key] = default if raw is None else conv(raw)
        except (TypeError, ValueError) as exc:
            raise InputError(f"bad value for {key}: {raw!r} ({exc})") from None
    return cfg


def write_manifest(path, command, cfg):
    with open(path, "w") as fh:
        fh.write(f"# shlr {command}\n")
        for key, value in cfg.items():
            fh.write(f"{key}={_fmt(value)}\n")


def _require(cfg, *keys):
    for key in keys:
        if cfg.get(key) is None:
            raise InputError(f"missing required setting: {key}")


def _load(path, what):
    if path is None or not os.path.exists(path):
        raise InputError(f"{what} file not found: {path}")
    try:
        return read_cplx(path)
    except CplxFormatError as exc:
        raise InputError(str(exc)) from None


def _load_tes(path):
    if path is None or not os.path.exists(path):
        raise InputError(f"echo-time file not found: {path}")
    with open(path) as fh:
        lines = [line for line in fh if line.strip() and not line.lstrip().startswith("#")]
    try:
        return np.array([float(line) for line in lines])
    except ValueError as exc:
        raise InputError(f"bad echo-time file {path}: {exc}") from None


def _admm_config(method, cfg, record=True):
    """Method defaults plus overrides; with ``record`` the resolved values go back into ``cfg``."""
    overrides = {key: cfg[key] for key in ADMM_KEYS if cfg.get(key) is not None}
    try:
        acfg = AdmmConfig.for_method(method, **overrides)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    if record:
        cfg.update({key: getattr(acfg, key) for key in ADMM_KEYS})
    return acfg


def _hankel_config(cfg):
    try:
        return HankelConfig(pencil=cfg["pencil"], filter_taps=tuple(cfg["filter_taps"]), pencil_param=cfg["pencil_param"])
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _out(cfg, default):
    return cfg["out"] if cfg["out"] is not None else os.path.abspath(default)


def _kernels_from(Y, bits, kernel_size, tikhonov):
    rows, cols = find_acs_region(bits)
    try:
        return spirit_calibrate(Y[rows, cols], kernel_size, tikhonov)
    except ValueError as exc:
        raise InputError(f"SPIRiT calibration failed: {exc}") from None


# --------------------------------------------------------------------------
# subcommands


def cmd_mask(cfg):
    kind = cfg["kind"]
    N, seed = cfg["N"], cfg["seed"]
    try:
        if kind == "uniform":
            mask = mask_uniform(N, cfg["R"], cfg["acs"])
        elif kind == "gauss":
            mask = mask_gauss_cartesian(N, cfg["rate"], cfg["acs"], seed)
        elif kind == "random2d":
            mask = mask_random2d(cfg["M"] or N, N, cfg["rate"], cfg["center"], seed)
        elif kind == "uniform_pep":
            mask = mask_uniform_pep(N, cfg["L"], cfg["R"], cfg["acs"])
        else:
            raise InputError(f"unknown mask kind {kind!r}")
        if cfg["pf"] < 1.0:
            mask = apply_partial_fourier(mask, cfg["pf"], axis=0 if kind == "uniform_pep" else -1)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    if cfg["M"] is not None and mask.bits.ndim == 1:
        mask = mask.broadcast(cfg["M"])
    out = _out(cfg, "mask")
    mask.save(out + ".cplx")
    write_manifest(out + "_manifest.txt", "mask", cfg)
    return EXIT_OK


def cmd_phantom(cfg):
    out = _out(cfg, "phantom")
    M, N, J = cfg["M"], cfg["N"], cfg["J"]
    if cfg["kind"] == "pi":
        spec = PhantomSpec(M, N, J, default_shapes(M, N), cfg["phase_smoothness"], cfg["noise_sigma"])
        truth, kspace = gen_pi_phantom(spec, cfg["seed"])
        export_phantom(out, truth, kspace, spec, cfg["seed"])
    elif cfg["kind"] == "t2":
        L = cfg["L"]
        TEs = cfg["te_first"] + cfg["te_spacing"] * np.arange(L)
        t2s, amps = cfg["t2_values"], cfg["amplitudes"]
        if len(t2s) != len(amps):
            raise InputError("t2_values and amplitudes must have the same length")
        regions = [(s, a, t) for s, a, t in zip(t2_regions(M, N, len(t2s)), amps, t2s)]
        truth, t2 = gen_t2_phantom(M, N, L, J, TEs, regions, cfg["seed"])
        write_cplx(truth, out + "_truth.cplx")
        write_cplx(fft2d_centered(truth), out + "_kspace.cplx")
        write_cplx(t2, out + "_t2.cplx")
        with open(out + "_tes.txt", "w") as fh:
            fh.writelines(f"{float(te)!r}\n" for te in TEs)
    else:
        raise InputError(f"unknown phantom kind {cfg['kind']!r}")
    write_manifest(out + "_manifest.txt", "phantom", cfg)
    return EXIT_OK


def t2_regions(M, N, count):
    """Nested ellipses used by the T2 phantom: the first region is innermost."""
    shapes = []
    for i in range(count):
        frac = (i + 1) / count
        shapes.append(Shape("ellipse", (M / 2, N / 2), (0.45 * M * frac, 0.42 * N * frac)))
    return shapes[::-1]


def _mask_for_pi(bits, M, N):
    if bits.ndim == 1:
        if bits.shape[0] != N:
            raise DimensionError(f"line mask has {bits.shape[0]} entries, data have {N} PE lines")
        return np.broadcast_to(bits[None, :], (M, N)).copy()
    if bits.shape != (M, N):
        raise DimensionError(f"mask shape {bits.shape} does not match data {(M, N)}")
    return bits


def _reference_image(ref, shape2):
    ref = ref if ref.ndim == 2 else ssos(ref)
    ref = np.abs(ref)
    if ref.shape != shape2:
        raise DimensionError(f"reference shape {ref.shape} does not match {shape2}")
    return ref


def cmd_recon_pi(cfg):
    _require(cfg, "input", "mask")
    method = cfg["method"]
    if method not in PI_METHODS:
        raise InputError(f"method must be one of {PI_METHODS}, got {method!r}")
    Y = _load(cfg["input"], "input")
    mask_bits = np.real(_load(cfg["mask"], "mask")) != 0
    if Y.ndim != 3:
        raise DimensionError(f"input must be M x N x J, got shape {Y.shape}")
    M, N, J = Y.shape
    bits = _mask_for_pi(mask_bits, M, N)
    ref = _load(cfg["reference"], "reference") if cfg["reference"] else None

    acfg = _admm_config(method, cfg)
    hcfg = _hankel_config(cfg)
    g = _kernels_from(Y, bits, cfg["kernel_size"], cfg["tikhonov"]) if acfg.enable_spirit else None

    out = _out(cfg, "recon")
    write_manifest(out + "_manifest.txt", "recon-pi", cfg)
    t0 = time.perf_counter()
    X, info = shlr_pi_reconstruct(Y * bits[:, :, None], bits, g, hcfg, acfg, full_output=True)
    runtime = time.perf_counter() - t0
    image = ssos(X)
    write_cplx(X, out + "_recon.cplx")
    write_cplx(image, out + "_ssos.cplx")
    _write_iter_log(out + "_iterations.log", info.history)
    if ref is not None:
        report = evaluate(_reference_image(ref, (M, N)), image, runtime, info.iterations)
        mask_label = os.path.splitext(os.path.basename(cfg["mask"]))[0]
        append_metrics_row(cfg["metrics"] or out + "_metrics.csv", cfg["dataset"], method, mask_label, report)
    return EXIT_OK


def _write_iter_log(path, history):
    with open(path, "w") as fh:
        for entry in history:
            fh.write(" ".join(f"{k}={_fmt(v)}" for k, v in entry.items()) + "\n")


def cmd_recon_param(cfg):
    _require(cfg, "input", "tes", "mask")
    method = cfg["method"]
    if method not in PARAM_METHODS:
        raise InputError(f"method must be one of {PARAM_METHODS}, got {method!r}")
    K = _load(cfg["input"], "input")
    TEs = _load_tes(cfg["tes"])
    bits = np.real(_load(cfg["mask"], "mask")) != 0
    if K.ndim != 4:
        raise DimensionError(f"input must be M x N x L x J, got shape {K.shape}")
    M, N, L, J = K.shape
    if TEs.size != L:
        raise DimensionError(f"{TEs.size} echo times for {L} echoes")
    if bits.shape != (N, L):
        raise DimensionError(f"mask shape {bits.shape} does not match PE x echo plane {(N, L)}")
    ref = _load(cfg["reference"], "reference") if cfg["reference"] else None
    try:
        data = ParameterDataset(K, TEs)
    except ValueError as exc:
        raise InputError(str(exc)) from None

    acfg = _admm_config(method, cfg)
    hcfg = _hankel_config(cfg)
    out = _out(cfg, "recon")
    write_manifest(out + "_manifest.txt", "recon-param", cfg)
    t0 = time.perf_counter()
    images, infos = recon_param_dataset(data, bits, hcfg, acfg, workers=cfg["workers"], full_output=True)
    runtime = time.perf_counter() - t0
    write_cplx(images.data, out + "_recon.cplx")
    with open(out + "_iterations.log", "w") as fh:
        for m, info in enumerate(infos):
            fh.write(f"slice={m} iters={info.iterations} converged={info.converged}\n")
    combined = np.sqrt(np.sum(np.abs(images.data) ** 2, axis=-1))
    write_cplx(combined, out + "_ssos.cplx")
    if cfg["t2map"]:
        t2_map(images, cfg["roi_threshold"], (0.0, cfg["t2_max"])).save(out + "_t2.cplx")
    if ref is not None:
        if ref.shape != K.shape and ref.shape != combined.shape:
            raise DimensionError(f"reference shape {ref.shape} does not match data {K.shape}")
        ref_mag = np.sqrt(np.sum(np.abs(ref) ** 2, axis=-1)) if ref.ndim == 4 else np.abs(ref)
        ssim = [mssim(ref_mag[:, :, l], combined[:, :, l]) for l in range(L)] if min(M, N) >= 11 else [float("nan")]
        report = MetricReport(
            rlne(ref_mag, combined),
            float(np.mean(ssim)),
            runtime,
            max(info.iterations for info in infos),
        )
        mask_label = os.path.splitext(os.path.basename(cfg["mask"]))[0]
        append_metrics_row(cfg["metrics"] or out + "_metrics.csv", cfg["dataset"], method, mask_label, report)
    return EXIT_OK


def cmd_t2fit(cfg):
    _require(cfg, "input", "tes")
    data = _load(cfg["input"], "input")
    TEs = _load_tes(cfg["tes"])
    if data.ndim not in (3, 4) or data.shape[2] != TEs.size:
        raise DimensionError(f"images of shape {data.shape} do not match {TEs.size} echo times")
    out = _out(cfg, "t2")
    result = t2_map((data, TEs), cfg["roi_threshold"], (0.0, cfg["t2_max"]))
    result.save(out + ".cplx")
    write_manifest(out + "_manifest.txt", "t2fit", cfg)
    return EXIT_OK


def cmd_metrics(cfg):
    _require(cfg, "reference", "input")
    ref = _load(cfg["reference"], "reference")
    rec = _load(cfg["input"], "input")
    ref = ref if ref.ndim == 2 else ssos(ref)
    rec = rec if rec.ndim == 2 else ssos(rec)
    if ref.shape != rec.shape:
        raise DimensionError(f"reference {ref.shape} and input {rec.shape} differ")
    report = evaluate(np.abs(ref), np.abs(rec), cfg["runtime_s"], cfg["iters"])
    out = _out(cfg, "metrics")
    append_metrics_row(out + ".csv", cfg["dataset"], cfg["method"], cfg["mask_label"], report)
    write_manifest(out + "_manifest.txt", "metrics", cfg)
    return EXIT_OK


def peak_lifted_entries(M, N, J, p_rows, p_cols, vc):
    """Largest single lifted matrix (entries) among the row and column liftings."""
    r_rows, r_cols, _, _ = hankel_dims(M, N, J, p_rows, vc)
    c_rows, c_cols, _, _ = hankel_dims(N, M, J, p_cols, vc)
    return max(r_rows * r_cols, c_rows * c_cols)


BENCH_HEADER = ("size", "method", "iters", "wall_seconds", "peak_lifted_entries")


def cmd_bench(cfg):
    out = _out(cfg, "bench")
    write_manifest(out + "_manifest.txt", "bench", cfg)
    hcfg = _hankel_config(cfg)
    rows = []
    for size in cfg["sizes"]:
        spec = PhantomSpec(size, size, cfg["J"], default_shapes(size, size))
        _, kspace = gen_pi_phantom(spec, cfg["seed"])
        try:
            mask = mask_gauss_cartesian(size, cfg["rate"], cfg["acs"], cfg["seed"])
        except ValueError as exc:
            raise InputError(str(exc)) from None
        bits = mask.broadcast(size).bits
        Y = kspace * bits[:, :, None]
        for method in cfg["methods"]:
            if method not in PI_METHODS:
                raise InputError(f"bench supports {PI_METHODS}, got {method!r}")
            acfg = _admm_config(method, cfg, record=False)
            g = _kernels_from(Y, bits, cfg["kernel_size"], cfg["tikhonov"]) if acfg.enable_spirit else None
            t0 = time.perf_counter()
            _, info = shlr_pi_reconstruct(Y, bits, g, hcfg, acfg, full_output=True)
            wall = time.perf_counter() - t0
            peak = peak_lifted_entries(size, size, cfg["J"], hcfg.pencil_for(size), hcfg.pencil_for(size), acfg.enable_vc)
            rows.append((size, method, info.iterations, f"{wall:.6g}", peak))
    with open(out + ".csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BENCH_HEADER)
        writer.writerows(rows)
    return EXIT_OK


COMMANDS = {
    "mask": cmd_mask,
    "phantom": cmd_phantom,
    "recon-pi": cmd_recon_pi,
    "recon-param": cmd_recon_param,
    "t2fit": cmd_t2fit,
    "metrics": cmd_metrics,
    "bench": cmd_bench,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="shlr", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, schema in SCHEMAS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key=value configuration file")
        for key in schema:
            flags = ["--" + key]
            if "_" in key:
                flags.append("--" + key.replace("_", "-"))
            p.add_argument(*flags, dest=key, default=None, metavar="VALUE")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config") and v is not None}
    try:
        file_values = read_config_file(os.path.abspath(args.config)) if args.config else {}
        cfg = resolve_config(args.command, file_values, flags)
        logging.basicConfig(level=getattr(logging, str(cfg["log_level"]).upper(), logging.WARNING),
                            format="%(name)s %(message)s")
        return COMMANDS[args.command](cfg)
    except InputError as exc:
        print(f"shlr {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DimensionError as exc:
        print(f"shlr {args.command}: dimension mismatch: {exc}", file=sys.stderr)
        return EXIT_DIMS
    except DivergenceError as exc:
        print(f"shlr {args.command}: solver diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
