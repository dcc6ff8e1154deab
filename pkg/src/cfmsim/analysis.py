"""Reconstruction metrics and the undersampling-ratio sweep harness."""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import rng
from .errors import CfmError, ConfigurationError, ShapeError
from .io import format_float
from .phantoms import PhantomSpec, Scene, generate_scene
from .recovery import SolverConfig, reconstruct_l1, reconstruct_tv
from .sensing import ENSEMBLES, NoiseModel, generate_patterns, measure
from .transforms import TransformKind

CSV_HEADER = (
    "ratio,noise_kind,noise_param,trial,rel_error,psnr_db,support_f1,"
    "iterations,wall_ms,physical_M,logical_patterns,success"
)

# seed-schedule tags
_PHANTOM = 1
_PATTERNS = 2
_NOISE = 3


def _values(x) -> np.ndarray:
    return x.values if hasattr(x, "values") else np.asarray(x, dtype=np.float64).ravel()


def rel_error(truth, estimate) -> float:
    t, e = _values(truth), _values(estimate)
    if t.shape != e.shape:
        raise ShapeError("truth and estimate differ in shape")
    tn = float(np.linalg.norm(t))
    dn = float(np.linalg.norm(e - t))
    if tn == 0.0:
        return 0.0 if dn == 0.0 else math.inf
    return dn / tn


def psnr(truth, estimate, peak: float | None = None) -> float:
    """``10 log10(peak^2 / MSE)`` in dB; ``inf`` when the images agree.

    ``peak`` defaults to the largest truth value.
    """
    t, e = _values(truth), _values(estimate)
    if t.shape != e.shape:
        raise ShapeError("truth and estimate differ in shape")
    if peak is None:
        peak = float(t.max())
    if not peak > 0:
        raise ConfigurationError("peak must be positive")
    mse = float(np.mean((e - t) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def support_f1(truth, estimate, threshold: float = 0.0) -> float:
    """F1 score of ``{i: value > threshold}``; two empty supports score 1."""
    st = _values(truth) > threshold
    se = _values(estimate) > threshold
    if st.shape != se.shape:
        raise ShapeError("truth and estimate differ in shape")
    tp = int(np.count_nonzero(st & se))
    denom = int(np.count_nonzero(st)) + int(np.count_nonzero(se))
    if denom == 0:
        return 1.0
    return 2.0 * tp / denom


@dataclass
class SweepSpec:
    """One sweep over undersampling ratios and noise levels.

    Ratios are ``N / physical_M``. Trial ``t`` of every cell shares the same
    phantom and pattern seeds (common random numbers); noise seeds also
    depend on the cell. ``success_threshold=None`` selects 1e-3 for noiseless
    cells and 0.1 otherwise.
    """

    phantom: PhantomSpec
    width: int
    height: int
    ratios: list[float]
    noise_ladder: list[NoiseModel] = field(default_factory=lambda: [NoiseModel()])
    trials: int = 1
    solver: SolverConfig = field(default_factory=SolverConfig)
    ensemble: str = "bernoulli_binary"
    differential: bool = True
    density: float = 0.5
    decoder: str = "l1"
    success_threshold: float | None = None
    support_fraction: float = 1e-2
    fixed_phantom: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigurationError("trials must be at least 1")
        if not self.ratios or any(r < 1 for r in self.ratios):
            raise ConfigurationError("ratios must be >= 1")
        if not self.noise_ladder:
            raise ConfigurationError("noise ladder is empty")
        if self.ensemble not in ENSEMBLES:
            raise ConfigurationError(f"unknown ensemble {self.ensemble!r}")
        if self.decoder not in ("l1", "tv"):
            raise ConfigurationError(f"unknown decoder {self.decoder!r}")
        for r in self.ratios:
            self.pattern_counts(r)

    @property
    def n(self) -> int:
        return self.width * self.height

    def pattern_counts(self, ratio: float) -> tuple[int, int]:
        """``(physical_M, logical_patterns)`` for a ratio."""
        phys = self.n / ratio
        if phys != int(phys) or phys < 1:
            raise ConfigurationError(f"ratio {ratio} does not give an integer M for N={self.n}")
        phys = int(phys)
        if self.differential:
            if phys % 2:
                raise ConfigurationError(f"ratio {ratio} gives an odd physical M in differential mode")
            return phys, phys // 2
        return phys, phys

    def threshold(self, noise: NoiseModel) -> float:
        if self.success_threshold is not None:
            return self.success_threshold
        return 1e-3 if noise.kind == "noiseless" else 0.1

    def to_dict(self) -> dict:
        solver = asdict(self.solver)
        basis = self.solver.basis
        solver["basis"] = None if basis is None else (basis.tag if basis.levels is None else f"haar:{basis.levels}")
        return {
            "phantom": asdict(self.phantom),
            "width": self.width,
            "height": self.height,
            "ratios": list(self.ratios),
            "noise": [nm.to_dict() for nm in self.noise_ladder],
            "trials": self.trials,
            "solver": solver,
            "ensemble": self.ensemble,
            "differential": self.differential,
            "density": self.density,
            "decoder": self.decoder,
            "success_threshold": self.success_threshold,
            "support_fraction": self.support_fraction,
            "fixed_phantom": self.fixed_phantom,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> SweepSpec:
        try:
            ph = dict(d["phantom"])
            for key in ("amplitude_range", "sigma_px_range"):
                if ph.get(key) is not None:
                    ph[key] = tuple(ph[key])
            solver = dict(d.get("solver") or {})
            if solver.get("basis") is not None:
                solver["basis"] = TransformKind.parse(solver["basis"])
            kwargs = {
                k: d[k]
                for k in ("trials", "ensemble", "differential", "density", "decoder", "success_threshold",
                          "support_fraction", "fixed_phantom", "seed")
                if k in d
            }
            return cls(
                phantom=PhantomSpec(**ph),
                width=int(d["width"]),
                height=int(d["height"]),
                ratios=list(d["ratios"]),
                noise_ladder=[NoiseModel.from_dict(nm) for nm in d.get("noise", [{"kind": "noiseless"}])],
                solver=SolverConfig(**solver),
                **kwargs,
            )
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"bad sweep spec: {exc}") from exc


@dataclass
class SweepRow:
    ratio: float
    noise_kind: str
    noise_param: float
    trial: int
    rel_error: float
    psnr_db: float
    support_f1: float
    iterations: int
    wall_ms: float
    physical_m: int
    logical_patterns: int
    success: bool
    peak: float = 0.0
    truth_norm: float = 0.0
    error: str | None = None

    def csv_line(self, timing: bool = True) -> str:
        wall = format_float(self.wall_ms) if timing else "NA"
        return ",".join([
            format_float(self.ratio), self.noise_kind, format_float(self.noise_param), str(self.trial),
            format_float(self.rel_error), format_float(self.psnr_db), format_float(self.support_f1),
            str(self.iterations), wall, str(self.physical_m), str(self.logical_patterns),
            "1" if self.success else "0",
        ])


@dataclass
class SweepReport:
    rows: list[SweepRow]

    def cells(self) -> list[tuple[float, str, float]]:
        seen = []
        for r in self.rows:
            key = (r.ratio, r.noise_kind, r.noise_param)
            if key not in seen:
                seen.append(key)
        return seen

    def success_fraction(self, ratio: float, noise_kind: str | None = None, noise_param: float | None = None) -> float:
        sel = [r for r in self.rows if r.ratio == ratio
               and (noise_kind is None or r.noise_kind == noise_kind)
               and (noise_param is None or r.noise_param == noise_param)]
        if not sel:
            raise KeyError(f"no rows for ratio {ratio}")
        return sum(r.success for r in sel) / len(sel)

    def median_error(self, ratio: float, noise_param: float | None = None) -> float:
        sel = [r.rel_error for r in self.rows if r.ratio == ratio and (noise_param is None or r.noise_param == noise_param)]
        return float(np.median(sel))

    def to_csv(self, timing: bool = True) -> str:
        """The report as CSV text; ``timing=False`` writes ``NA`` for wall time."""
        return "\n".join([CSV_HEADER] + [r.csv_line(timing) for r in self.rows]) + "\n"


def _seed(*path) -> int:
    return int(rng.derive_key(*path)[0])


def _run_trial(spec: SweepSpec, ri: int, ni: int, trial: int) -> SweepRow:
    ratio = spec.ratios[ri]
    noise = spec.noise_ladder[ni]
    cell = ri * len(spec.noise_ladder) + ni
    phys, logical = spec.pattern_counts(ratio)
    ph_seed = spec.phantom.seed if spec.fixed_phantom else _seed(spec.seed, _PHANTOM, trial)
    pat_seed = _seed(spec.seed, _PATTERNS, trial)
    noise = replace(noise, seed=_seed(spec.seed, _NOISE, cell, trial))
    row = SweepRow(ratio, noise.kind, noise.param, trial, math.nan, math.nan, math.nan, 0, 0.0,
                   phys, logical, False)
    t0 = time.perf_counter()
    try:
        truth = generate_scene(replace(spec.phantom, seed=ph_seed), spec.width, spec.height)
        pats = generate_patterns(spec.ensemble, logical, spec.n, pat_seed, density=spec.density,
                                 differential=spec.differential)
        rec = measure(truth, pats, noise)
        if spec.decoder == "tv":
            res = reconstruct_tv(rec, pats, spec.solver, width=spec.width, height=spec.height)
        else:
            res = reconstruct_l1(rec, pats, spec.solver, width=spec.width, height=spec.height)
        est: Scene = res.estimate
        peak = float(truth.values.max())
        row.peak = peak
        row.truth_norm = float(np.linalg.norm(truth.values))
        row.rel_error = rel_error(truth, est)
        row.psnr_db = psnr(truth, est, peak) if peak > 0 else math.nan
        row.support_f1 = support_f1(truth, est, spec.support_fraction * peak)
        row.iterations = res.iterations
        row.success = row.rel_error <= spec.threshold(noise)
    except (CfmError, ArithmeticError, ValueError) as exc:
        row.error = f"{type(exc).__name__}: {exc}"
    row.wall_ms = 1e3 * (time.perf_counter() - t0)
    return row


def _run_task(args) -> SweepRow:
    return _run_trial(*args)


def run_sweep(spec: SweepSpec, workers: int = 1) -> SweepReport:
    """Run every (ratio, noise, trial) combination.

    Rows come back ordered by cell (ratio-major, then noise) and trial no
    matter how many worker processes ran them. A failing trial is recorded
    with NaN metrics and ``success = False``.
    """
    tasks = [(spec, ri, ni, t) for ri in range(len(spec.ratios))
             for ni in range(len(spec.noise_ladder)) for t in range(spec.trials)]
    if workers <= 1:
        rows = [_run_task(a) for a in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_task, tasks))
    return SweepReport(rows)
