"""Command-line pipeline: phantom -> patterns -> acquire -> reconstruct, and sweep."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .analysis import SweepSpec, run_sweep
from .errors import CfmError, ConfigurationError, ShapeError, UnreadableFileError
from .phantoms import PhantomSpec, SpectralCube, generate_cube, generate_scene
from .recovery import SolverConfig, reconstruct_joint_spectral, reconstruct_l1, reconstruct_tv
from .sensing import ENSEMBLES, NOISE_KINDS, NoiseModel, generate_patterns, measure, measure_cube
from .transforms import TransformKind

log = logging.getLogger("cfmsim")

EXIT_CODES = """\
exit codes:
  0  success
  2  usage error (bad flags)
  3  io: unreadable or unwritable file
  4  format: container, CSV or sidecar does not parse
  5  dimension: shapes of scene, patterns or measurements disagree
  6  config: parameter out of range or unsupported combination
  7  solver: nonfinite data or iterates

On failure one line 'error:<category>: <message>' is written to stderr.
"""


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def cmd_phantom(a) -> None:
    spec = PhantomSpec(
        kind=a.kind,
        count=a.count,
        seed=a.seed,
        radius_px=a.radius,
        sigma_px_range=(a.sigma_min, a.sigma_max) if a.kind == "blobs" else None,
        amplitude_range=(a.amp_min, a.amp_max),
    )
    if a.channels == 1:
        obj = generate_scene(spec, a.width, a.height)
    else:
        obj = generate_cube(spec, a.width, a.height, a.channels, a.spectra,
                            center_jitter=a.center_jitter, linewidth=a.linewidth)
    io.write_cfm1(a.out, obj)


def cmd_patterns(a) -> None:
    p = generate_patterns(a.ensemble, a.m, a.n, a.seed, density=a.density,
                          differential=a.differential, permute=not a.no_permute)
    io.write_cfmp1(a.out, p)
    log.info("pattern hash 0x%016x, %d physical readings", p.content_hash, p.physical_m)


def cmd_acquire(a) -> None:
    scene = io.read_cfm1(a.scene)
    pats = io.read_cfmp1(a.patterns)
    noise = NoiseModel(a.noise, sigma=a.sigma, budget=a.budget, seed=a.seed)
    if isinstance(scene, SpectralCube):
        records = measure_cube(scene, pats, noise)
    else:
        records = [measure(scene, pats, noise)]
    io.write_measurements(a.out, records)


def _config(a) -> SolverConfig:
    lam = None if a.lam.upper() == "AUTO" else float(a.lam)
    return SolverConfig(
        lam=lam,
        max_iters=a.max_iters,
        tol=a.tol,
        nonnegative=a.nonneg,
        basis=TransformKind.parse(a.basis),
        acceleration=a.acceleration,
        centering=a.centering,
    )


def cmd_reconstruct(a) -> None:
    records = io.read_measurements(a.measurements)
    pats = [io.read_cfmp1(p) for p in a.patterns]
    if len(pats) not in (1, len(records)):
        raise ShapeError(f"{len(pats)} pattern files for {len(records)} channels")
    cfg = _config(a)
    n = pats[0].n
    width, height = a.width, a.height
    if (width is None) != (height is None):
        raise ConfigurationError("give both --width and --height or neither")
    dims = {} if width is None else {"width": width, "height": height}
    if width is not None and width * height != n:
        raise ShapeError(f"{width}x{height} does not match N={n}")

    def pat(c):
        return pats[0] if len(pats) == 1 else pats[c]

    if a.solver == "joint":
        res = reconstruct_joint_spectral(records, pats[0] if len(pats) == 1 else pats, cfg, **dims)
        results = [res]
        estimate = res.estimate
    else:
        solve = reconstruct_tv if a.solver == "tv" else reconstruct_l1
        results = [solve(rec, pat(c), cfg, **dims) for c, rec in enumerate(records)]
        if len(results) == 1:
            estimate = results[0].estimate
        else:
            first = results[0].estimate
            estimate = SpectralCube(first.width, first.height, len(results),
                                    np.concatenate([r.estimate.values for r in results]))
    io.write_cfm1(a.out, estimate)
    diag = a.diagnostics or str(a.out) + ".diag.csv"
    rows = [row for r in results for row in r.diagnostics_rows()]
    io.write_diagnostics(diag, rows)
    summary = {
        "solver": a.solver,
        "lambda": [r.lam for r in results],
        "lambda_rule": "auto" if cfg.lam is None else "given",
        "step": [r.step for r in results],
        "iterations": [r.iterations for r in results],
        "converged": [r.converged for r in results],
        "residual_norm": [r.residual_norm for r in results],
    }
    Path(str(diag) + ".json").write_text(json.dumps(summary, indent=2) + "\n")
    log.info("lambda=%s iterations=%s", summary["lambda"], summary["iterations"])


def cmd_sweep(a) -> None:
    try:
        spec_dict = json.loads(Path(a.spec).read_text())
    except OSError as exc:
        raise UnreadableFileError(f"cannot read {a.spec}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"sweep spec is not valid JSON: {exc}") from exc
    report = run_sweep(SweepSpec.from_dict(spec_dict), workers=a.workers)
    text = report.to_csv(timing=not a.no_timing)
    if a.out == "-":
        sys.stdout.write(text)
    else:
        Path(a.out).write_text(text)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="cfmsim",
        description="Compressive fluorescence microscopy simulator.",
        epilog=EXIT_CODES,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a scene or cube (CFM1)")
    p.add_argument("--kind", choices=("beads", "blobs", "spikes"), required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--radius", type=float, default=None, help="bead radius in pixels")
    p.add_argument("--sigma-min", type=float, default=1.0)
    p.add_argument("--sigma-max", type=float, default=2.0)
    p.add_argument("--amp-min", type=float, default=1.0)
    p.add_argument("--amp-max", type=float, default=1.0)
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--spectra", choices=("shared_support_random_spectra", "gaussian_emission_lines"),
                   default="shared_support_random_spectra")
    p.add_argument("--center-jitter", type=float, default=0.5)
    p.add_argument("--linewidth", type=float, default=2.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("patterns", help="generate illumination patterns (CFMP1)")
    p.add_argument("--ensemble", choices=ENSEMBLES, required=True)
    p.add_argument("--m", type=int, required=True, help="logical pattern count")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--density", type=float, default=0.5)
    p.add_argument("--differential", action="store_true")
    p.add_argument("--no-permute", action="store_true", help="hadamard_rows: take rows 0..M-1")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_patterns)

    p = sub.add_parser("acquire", help="simulate detector readings (CSV + sidecar)")
    p.add_argument("--scene", required=True)
    p.add_argument("--patterns", required=True)
    p.add_argument("--noise", choices=NOISE_KINDS, default="noiseless")
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--budget", type=float, default=None)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_acquire)

    p = sub.add_parser("reconstruct", help="recover a scene or cube (CFM1 + diagnostics CSV)")
    p.add_argument("--measurements", required=True)
    p.add_argument("--patterns", required=True, nargs="+", help="one file, or one per channel")
    p.add_argument("--solver", choices=("l1", "tv", "joint"), default="l1")
    p.add_argument("--basis", default="identity", help="identity, haar[:levels] or dct")
    p.add_argument("--lambda", dest="lam", default="AUTO", help="AUTO or a nonnegative number")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iters", type=int, default=5000)
    p.add_argument("--nonneg", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--acceleration", choices=("ista", "fista"), default="fista")
    p.add_argument("--centering", action="store_true", help="mean-removal for non-differential binary patterns")
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--diagnostics", default=None, help="default: <out>.diag.csv")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("sweep", help="run a ratio/noise sweep from a JSON spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", default="-")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-timing", action="store_true", help="write NA for wall time (byte-reproducible)")
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except CfmError as exc:
        print(f"error:{exc.category}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error:io: {exc}", file=sys.stderr)
        return UnreadableFileError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
