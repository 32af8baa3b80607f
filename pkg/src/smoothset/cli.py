"""Batch experiment runner.

Subcommands: gen, modulus, scaffold, eset, transform, boxdim, report.
Measurements exit 0; validation problems exit 2; bound-check subcommands
exit 3 when a bound is violated (so CI can gate on them); an unknown
subcommand exits 64. Identical configs and seeds produce byte-identical
CSV/JSON data files; the report manifest additionally records runtimes
and therefore varies run to run.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from math import pi
from pathlib import Path

import numpy as np

from . import __version__
from .generate import MartingaleSchedule, fixture, generate_martingale_set
from .grid import GridFormatError, load_grid, save_grid
from .maps import map_from_spec
from .modulus import estimate_modulus
from .scaffold import (
    StoppingSchedule,
    build_generations,
    estimate_density_level_set,
)
from .dimension import box_count, mask_box_count
from .transform import (
    check_concentric_gap,
    check_dilation_gap,
    check_intersecting_gap,
    check_map_image_gaps,
)
from .util import resolve_workers

EXIT_OK = 0
EXIT_BAD_CONFIG = 2
EXIT_CHECK_FAILED = 3
EXIT_UNKNOWN_COMMAND = 64


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_BAD_CONFIG):
        super().__init__(message)
        self.code = code


def _parse_scales(text: str) -> list[int]:
    if ".." in text:
        a, b = text.split("..", 1)
        return list(range(int(a), int(b) + 1))
    return [int(p) for p in text.split(",") if p]


def _float_repr(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_float_repr(v) for v in row])


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1)
        fh.write("\n")


def _load_config(args: argparse.Namespace) -> None:
    # config values override flags, per the documented precedence
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise CliError(f"bad config: {e}")
        for key, value in cfg.items():
            if not hasattr(args, key):
                raise CliError(f"bad config: unknown key {key!r}")
            setattr(args, key, value)


def _open_grid(path: str):
    try:
        return load_grid(path)
    except FileNotFoundError:
        raise CliError(f"missing input {path}")
    except GridFormatError as e:
        raise CliError(f"bad grid file {path}: {e}")


def _cmd_gen(argv: list[str]) -> int:
    p = argparse.ArgumentParser(prog="smoothset gen")
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--K", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", default="independent",
                   choices=["independent", "layered", "fixture"])
    p.add_argument("--phases", default="random", choices=["random", "aligned"])
    p.add_argument("--fixture", default=None,
                   help="fixture spec name:param, e.g. halfspace:0.5, checkerboard:3, constant:0.4")
    p.add_argument("--eps-scale", type=float, default=1.0,
                   help="multiply the default increment schedule")
    p.add_argument("--eps-decay", default=None,
                   help="override schedule: 'a/sqrt' or 'a*rho^k' as 'geom:a:rho' or 'const:a'")
    p.add_argument("--start", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    args = p.parse_args(argv)
    _load_config(args)

    if args.mode == "fixture":
        if not args.fixture:
            raise CliError("fixture mode needs --fixture name[:param]")
        name, _, param = args.fixture.partition(":")
        kwargs = {}
        if name == "halfspace":
            kwargs["c"] = float(param or 0.5)
        elif name == "checkerboard":
            kwargs["m"] = int(param or 1)
        elif name == "constant":
            kwargs["d"] = float(param or 0.5)
        try:
            grid = fixture(name, args.n, args.K, **kwargs)
        except (ValueError, KeyError) as e:
            raise CliError(f"bad fixture: {e}")
    else:
        eps = _schedule_from_args(args)
        sched = MartingaleSchedule(eps, seed=args.seed, start_density=args.start)
        try:
            grid = generate_martingale_set(sched, args.n, mode=args.mode, phases=args.phases)
        except ValueError as e:
            raise CliError(str(e))
    save_grid(grid, args.out)
    sidecar = {
        "schedule": grid.meta.get("eps"),
        "seed": grid.meta.get("seed"),
        "mode": args.mode,
        "undecidedMass": grid.meta.get("undecided_mass"),
        "fixture": grid.meta.get("fixture"),
        "n": grid.n,
        "K": grid.K,
    }
    _write_json(Path(args.out).with_suffix(".json"), sidecar)
    return EXIT_OK


def _schedule_from_args(args) -> tuple[float, ...]:
    K = args.K
    rule = args.eps_decay
    if rule is None:
        return tuple(min(0.4, 0.8 / np.sqrt(k)) * args.eps_scale for k in range(1, K + 1))
    parts = rule.split(":")
    if parts[0] == "const":
        return (float(parts[1]),) * K
    if parts[0] == "geom":
        a, rho = float(parts[1]), float(parts[2])
        return tuple(a * rho ** k for k in range(1, K + 1))
    raise CliError(f"bad --eps-decay {rule!r}")


def _cmd_modulus(argv: list[str]) -> int:
    p = argparse.ArgumentParser(prog="smoothset modulus")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--scales", default="2..7")
    p.add_argument("--mode", default="dyadic", choices=["dyadic", "lattice", "rotated"])
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--angle", type=float, default=pi / 6)
    p.add_argument("--samples", type=int, default=4096)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--witness-out", default=None)
    p.add_argument("--config", default=None)
    args = p.parse_args(argv)
    _load_config(args)
    grid = _open_grid(args.inp)
    scales = _parse_scales(args.scales)
    try:
        prof = estimate_modulus(
            grid, scales, mode=args.mode,
            stride=args.stride,
            angle=args.angle if args.mode == "rotated" else None,
            samples=args.samples, seed=args.seed,
            workers=resolve_workers(args.workers),
        )
    except ValueError as e:
        raise CliError(str(e))
    rows = [[prof.mode, s.level, s.scale, s.omega, s.pair_count] for s in prof.samples]
    out = Path(args.out) if args.out else Path(args.inp).with_suffix(".modulus.csv")
    _write_csv(out, ["mode", "j", "t", "omega", "pairCount"], rows)
    if args.witness_out:
        wit = []
        for s in prof.samples:
            if s.witness is None:
                wit.append(None)
            else:
                wit.append(
                    {
                        "level": s.level,
                        "stride": s.stride,
                        "axis": s.witness.axis,
                        "first": list(s.witness.first.corner),
                        "second": list(s.witness.second.corner),
                        "side": s.witness.first.side,
                        "omega": s.omega,
                    }
                )
        _write_json(Path(args.witness_out), wit)
    return EXIT_OK


def _cmd_scaffold(argv: list[str]) -> int:
    p = argparse.ArgumentParser(prog="smoothset scaffold")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--maxgen", type=int, default=4)
    p.add_argument("--scales", default=None, help="modulus scales (default 1..K)")
    p.add_argument("--c0", type=float, default=None, help="c_1 (default 2n+1)")
    p.add_argument("--c-step", type=float, default=1.0)
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None)
    args = p.parse_args(argv)
    _load_config(args)
    grid = _open_grid(args.inp)
    scales = _parse_scales(args.scales) if args.scales else list(range(1, grid.K + 1))
    prof = estimate_modulus(grid, scales, mode="dyadic")
    c0 = args.c0 if args.c0 is not None else 2 * grid.n + 1
    c_seq = tuple(c0 + k * args.c_step for k in range(args.maxgen))
    try:
        sched = StoppingSchedule.derive(prof, args.alpha, grid.n, args.maxgen, c_seq=c_seq)
        scaffold = build_generations(grid, sched, args.maxgen)
    except ValueError as e:
        raise CliError(str(e))
    out = Path(args.out) if args.out else Path(args.inp).with_suffix(".scaffold.json")
    _write_json(out, scaffold.to_json_dict())
    return EXIT_OK


def _cmd_eset(argv: list[str]) -> int:
    p = argparse.ArgumentParser(prog="smoothset eset")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--tau", type=float, default=0.1)
    p.add_argument("--settle", type=int, default=3)
    p.add_argument("--scales", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None)
    args = p.parse_args(argv)
    _load_config(args)
    grid = _open_grid(args.inp)
    try:
        est = estimate_density_level_set(grid, args.alpha, args.tau, args.settle)
    except ValueError as e:
        raise CliError(str(e))
    scales = _parse_scales(args.scales) if args.scales else None
    fit = mask_box_count(est.mask, grid.K, scales)
    out = Path(args.out) if args.out else Path(args.inp).with_suffix(".eset.json")
    _write_json(
        out,
        {
            "alpha": est.alpha,
            "tau": est.tau,
            "settleLevel": est.settle_level,
            "memberVolume": est.member_volume,
            "memberCells": est.member_count,
            "boxCounts": {"scales": list(fit.scales), "counts": list(fit.counts)},
            "slope": fit.slope,
            "flags": list(fit.flags),
        },
    )
    return EXIT_OK


def _cmd_transform(argv: list[str]) -> int:
    p = argparse.ArgumentParser(prog="smoothset transform")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--check", required=True,
                   choices=["dilation", "concentric", "intersecting", "image-gaps"])
    p.add_argument("--scales", default="3..6")
    p.add_argument("--lambda", dest="lam", type=float, default=1.5)
    p.add_argument("--t", type=float, default=1.5)
    p.add_argument("--map", dest="map_spec", default=None,
                   help='JSON map spec, e.g. {"kind":"shear","amplitude":0.1}')
    p.add_argument("--samples", type=int, default=4096)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None)
    args = p.parse_args(argv)
    _load_config(args)
    grid = _open_grid(args.inp)
    scales = _parse_scales(args.scales)
    prof = estimate_modulus(grid, scales, mode="lattice", stride=args.stride)
    rows: list[list] = []
    failed = False
    try:
        if args.check == "dilation":
            for r in check_dilation_gap(grid, args.lam, scales, prof):
                rows.append(["dilation_gap", r.level, r.gap, r.bound, 0.0, r.passed])
                failed |= not r.passed
        elif args.check == "concentric":
            for r in check_concentric_gap(grid, args.t, scales, prof):
                rows.append(["concentric_gap", r.level, r.measured, r.bound, 0.0, r.passed])
                failed |= not r.passed
        elif args.check == "intersecting":
            for r in check_intersecting_gap(grid, scales, prof, seed=args.seed):
                rows.append(["intersecting_gap", r.level, r.measured, r.bound, 0.0, r.passed])
                rows.append(
                    ["single_axis_gap", r.level, r.measured_single_axis,
                     r.bound_single_axis, 0.0, r.passed]
                )
                failed |= not r.passed
        else:
            spec = json.loads(args.map_spec) if args.map_spec else {"kind": "shear", "amplitude": 0.1}
            m = map_from_spec(spec)
            for r in check_map_image_gaps(grid, m, scales, samples=args.samples, seed=args.seed):
                rows.append(["image_volume_gap", r.level, r.max_volume_gap, "", r.stderr, True])
                rows.append(["image_mass_gap", r.level, r.max_mass_gap, "", r.stderr, True])
                rows.append(["tangent_residual", r.level, r.max_tangent_residual, "", r.stderr, True])
    except (ValueError, json.JSONDecodeError) as e:
        raise CliError(str(e))
    out = Path(args.out) if args.out else Path(args.inp).with_suffix(f".{args.check}.csv")
    _write_csv(out, ["check", "scale", "measured", "bound", "stderr", "pass"], rows)
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def _cmd_boxdim(argv: list[str]) -> int:
    p = argparse.ArgumentParser(prog="smoothset boxdim")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--band", default="0.25,0.75")
    p.add_argument("--scales", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None)
    args = p.parse_args(argv)
    _load_config(args)
    grid = _open_grid(args.inp)
    try:
        lo, hi = (float(x) for x in args.band.split(","))
        scales = _parse_scales(args.scales) if args.scales else None
        fit = box_count(grid, (lo, hi), scales)
    except ValueError as e:
        raise CliError(str(e))
    out = Path(args.out) if args.out else Path(args.inp).with_suffix(".boxdim.csv")
    rows = [
        [j, c, float(np.log2(c)) if c > 0 else ""]
        for j, c in zip(fit.scales, fit.counts)
    ]
    _write_csv(out, ["j", "count", "logCount"], rows)
    _write_json(
        out.with_suffix(".fit.json"),
        {"slope": fit.slope, "intercept": fit.intercept, "rsq": fit.rsq,
         "flags": list(fit.flags), "band": [lo, hi]},
    )
    return EXIT_OK


def _cmd_report(argv: list[str]) -> int:
    p = argparse.ArgumentParser(prog="smoothset report")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--scales", default="2..6")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None)
    args = p.parse_args(argv)
    _load_config(args)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    files: list[Path] = []

    rc = _cmd_modulus(["--in", args.inp, "--scales", args.scales,
                       "--out", str(outdir / "modulus_dyadic.csv"),
                       "--witness-out", str(outdir / "modulus_witness.json")])
    files += [outdir / "modulus_dyadic.csv", outdir / "modulus_witness.json"]
    rc |= _cmd_modulus(["--in", args.inp, "--scales", args.scales, "--mode", "lattice",
                        "--out", str(outdir / "modulus_lattice.csv")])
    files.append(outdir / "modulus_lattice.csv")
    rc |= _cmd_boxdim(["--in", args.inp, "--out", str(outdir / "boxdim.csv")])
    files += [outdir / "boxdim.csv", outdir / "boxdim.fit.json"]

    manifest = {
        "version": __version__,
        "input": args.inp,
        "seed": args.seed,
        "runtimeSeconds": time.time() - t0,
        "files": [
            {"path": f.name, "sha256": hashlib.sha256(f.read_bytes()).hexdigest()}
            for f in files
        ],
    }
    _write_json(outdir / "manifest.json", manifest)
    return rc


_COMMANDS = {
    "gen": _cmd_gen,
    "modulus": _cmd_modulus,
    "scaffold": _cmd_scaffold,
    "eset": _cmd_eset,
    "transform": _cmd_transform,
    "boxdim": _cmd_boxdim,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ("-h", "--help"):
        print("usage: smoothset {gen,modulus,scaffold,eset,transform,boxdim,report} ...")
        print(__doc__)
        return EXIT_OK
    cmd = argv[0]
    fn = _COMMANDS.get(cmd)
    if fn is None:
        print(f"unknown subcommand: {cmd}", file=sys.stderr)
        return EXIT_UNKNOWN_COMMAND
    try:
        return fn(argv[1:])
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except SystemExit as e:  # argparse errors
        return EXIT_BAD_CONFIG if e.code not in (0, None) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
