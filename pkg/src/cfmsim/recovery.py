"""Sparse reconstruction from point-detector measurements.

Three decoders share one matrix-free operator layer:

* ``reconstruct_l1``: ``0.5 ||A Psi^T z - y||^2 + lam ||z||_1`` by ISTA or
  FISTA, optionally with ``x >= 0`` (identity basis only);
* ``reconstruct_tv``: ``0.5 ||A x - y||^2 + mu TV(x)`` with anisotropic TV,
  by ADMM whose TV step is split into exact 1-D row and column problems;
* ``reconstruct_joint_spectral``: an l2,1 penalty over the spectral fiber of
  every pixel, which shrinks whole fibers at once.

The l1 and joint decoders run the same proximal-gradient loop on ``(N, L)``
blocks; a single-channel joint problem therefore follows the l1 trajectory
bit for bit.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from . import rng
from .errors import ConfigurationError, ShapeError, SolverError
from .phantoms import Scene, SpectralCube
from .sensing import MeasurementRecord, PatternSet, apply_adjoint, apply_operator
from .transforms import TransformKind, haar_forward
from .tv1d import tv1d_rows

log = logging.getLogger(__name__)

POWER_ITERATIONS = 50
POWER_SAFETY = 1.05
POWER_SEED = 0x5EED
NOISELESS_LAMBDA_FRACTION = 1e-4


@dataclass
class SolverConfig:
    """Solver settings.

    ``lam=None`` selects the default rule (:func:`default_lambda`).
    ``nonnegative=None`` means on for the identity basis and off otherwise.
    ``centering`` removes the measurement mean from both sides, the
    alternative to differential pairs for a raw binary ensemble.
    """

    lam: float | None = None
    max_iters: int = 5000
    tol: float = 1e-6
    nonnegative: bool | None = None
    basis: TransformKind | None = None
    acceleration: str = "fista"
    restart: bool = True
    centering: bool = False
    window: int = 5
    continuation: bool = True
    continuation_factor: float = 0.3
    stage_tol: float = 1e-4
    admm_rho: float | None = None

    def __post_init__(self):
        if self.lam is not None and self.lam < 0:
            raise ConfigurationError("lambda must be nonnegative")
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be at least 1")
        if not self.tol > 0:
            raise ConfigurationError("tol must be positive")
        if self.acceleration not in ("ista", "fista"):
            raise ConfigurationError(f"unknown acceleration {self.acceleration!r}")
        if self.window < 1:
            raise ConfigurationError("window must be at least 1")
        if not 0.0 < self.continuation_factor < 1.0:
            raise ConfigurationError("continuation_factor must lie in (0, 1)")
        if self.nonnegative and self.basis is not None:
            raise ConfigurationError("nonnegativity is only separable in the identity basis")

    @property
    def project(self) -> bool:
        if self.nonnegative is None:
            return self.basis is None
        return self.nonnegative


@dataclass
class RecoveryResult:
    estimate: Scene | SpectralCube
    iterations: int
    objective_trace: np.ndarray
    residual_norm: float
    converged: bool
    lam: float
    step: float
    residual_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def diagnostics_rows(self):
        """``(iter, objective, residual)`` tuples, one per iteration."""
        return [(i + 1, float(f), float(r)) for i, (f, r) in enumerate(zip(self.objective_trace, self.residual_trace))]


def _default_dims(n: int) -> tuple[int, int]:
    k = int(round(math.log2(n)))
    if 2**k != n:
        raise ConfigurationError(f"cannot infer image dimensions for N={n}; pass width and height")
    width = 2 ** ((k + 1) // 2)
    return n // width, width


class SensingOperator:
    """``A Psi^T`` and its adjoint acting on ``(N, L)`` coefficient blocks.

    ``patterns`` may be one set shared by all columns or a list with one set
    per column. With ``centering`` the operator becomes ``C A`` where ``C``
    subtracts the mean over measurements.
    """

    def __init__(self, patterns, height: int, width: int, basis: TransformKind | None = None, centering: bool = False):
        self.shared = isinstance(patterns, PatternSet)
        self.patterns = patterns
        plist = [patterns] if self.shared else list(patterns)
        if not plist:
            raise ShapeError("no pattern sets given")
        self.n = plist[0].n
        if any(p.n != self.n for p in plist):
            raise ShapeError("pattern sets disagree on N")
        if height * width != self.n:
            raise ShapeError(f"{height}x{width} image does not match N={self.n}")
        self.m = plist[0].m
        if not self.shared and any(p.m != self.m for p in plist):
            raise ShapeError("per-channel pattern sets must share M")
        self.height, self.width = height, width
        self.basis = basis
        self.centering = centering

    def _pattern(self, c: int) -> PatternSet:
        return self.patterns if self.shared else self.patterns[c]

    def synthesize(self, z: np.ndarray) -> np.ndarray:
        """Pixel values from coefficients, column by column."""
        if self.basis is None:
            return z
        cols = [self.basis.inverse(z[:, c], self.height, self.width).ravel() for c in range(z.shape[1])]
        return np.stack(cols, axis=1)

    def analyze(self, x: np.ndarray) -> np.ndarray:
        if self.basis is None:
            return x
        cols = [self.basis.forward(x[:, c].reshape(self.height, self.width)) for c in range(x.shape[1])]
        return np.stack(cols, axis=1)

    def forward(self, z: np.ndarray) -> np.ndarray:
        x = self.synthesize(z)
        if self.shared:
            y = apply_operator(self.patterns, x)
        else:
            y = np.stack([apply_operator(self.patterns[c], x[:, c]) for c in range(x.shape[1])], axis=1)
        if self.centering:
            y = y - y.mean(axis=0)
        return y

    def adjoint(self, r: np.ndarray) -> np.ndarray:
        if self.centering:
            r = r - r.mean(axis=0)
        if self.shared:
            x = apply_adjoint(self.patterns, r)
        else:
            x = np.stack([apply_adjoint(self.patterns[c], r[:, c]) for c in range(r.shape[1])], axis=1)
        return self.analyze(x)

    def column_rms(self) -> float:
        """Root-mean-square column norm, ``||A||_F / sqrt(N)``."""
        sq = []
        for c in range(1 if self.shared else len(self.patterns)):
            p = self._pattern(c)
            if p.differential and not self.centering:
                sq.append(float(p.m))
                continue
            if self.centering:
                a = p.matrix() - p.matrix().mean(axis=0)
                sq.append(float((a * a).sum()) / p.n)
            else:
                sq.append(float(np.unpackbits(p.packed).sum()) / p.n)
        return math.sqrt(float(np.mean(sq)))


def power_norm_sq(forward, adjoint, n: int, iterations: int = POWER_ITERATIONS, seed: int = POWER_SEED) -> float:
    """Power-method estimate of ``||A||^2`` from a fixed pseudo-random start.

    Returns ``||A^T A v||`` for the final unit iterate ``v``, which
    approaches the top eigenvalue of ``A^T A`` from below.
    """
    v = rng.uniform(rng.derive_key(seed), np.arange(n, dtype=np.uint64)) - 0.5
    v = (v / np.linalg.norm(v))[:, None]
    est = 0.0
    for _ in range(iterations):
        w = adjoint(forward(v))
        est = float(np.linalg.norm(w))
        if est == 0.0:
            return 0.0
        v = w / est
    return est


def ritz_value(forward, adjoint, n: int, iterations: int, seed: int = POWER_SEED) -> float:
    """Rayleigh quotient ``v^T A^T A v`` after ``iterations`` power steps."""
    v = rng.uniform(rng.derive_key(seed), np.arange(n, dtype=np.uint64)) - 0.5
    v = (v / np.linalg.norm(v))[:, None]
    for _ in range(iterations):
        w = adjoint(forward(v))
        v = w / np.linalg.norm(w)
    return float(np.vdot(v, adjoint(forward(v))))


def estimate_step_size(patterns, basis: TransformKind | None = None, *, width: int | None = None,
                       height: int | None = None, centering: bool = False) -> float:
    """Gradient step ``1 / L`` with ``L = 1.05 * (50-step power estimate)``."""
    if width is None or height is None:
        height, width = _default_dims(patterns.n if isinstance(patterns, PatternSet) else patterns[0].n)
    plist = [patterns] if isinstance(patterns, PatternSet) else list(patterns)
    lips = 0.0
    for p in plist:
        op = SensingOperator(p, height, width, basis, centering)
        lips = max(lips, power_norm_sq(op.forward, op.adjoint, op.n))
    if lips == 0.0:
        raise SolverError("sensing operator is identically zero")
    return 1.0 / (POWER_SAFETY * lips)


def soft_threshold(v, t: float) -> np.ndarray:
    """``sign(v) * max(|v| - t, 0)``, elementwise."""
    if t < 0:
        raise ConfigurationError("threshold must be nonnegative")
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def group_soft_threshold(fibers, t: float) -> np.ndarray:
    """Scale each row of ``fibers`` by ``max(1 - t / ||row||, 0)``.

    Rows of length one reduce to :func:`soft_threshold`.
    """
    if t < 0:
        raise ConfigurationError("threshold must be nonnegative")
    g = np.asarray(fibers, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape[1] == 1:
        return soft_threshold(g, t)
    norms = np.sqrt((g * g).sum(axis=1, keepdims=True))
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norms > t, 1.0 - t / norms, 0.0)
    return g * scale


def _prox(v: np.ndarray, t: float, nonneg: bool) -> np.ndarray:
    if nonneg:
        v = np.maximum(v, 0.0)
    return group_soft_threshold(v, t)


def _penalty(z: np.ndarray) -> float:
    if z.shape[1] == 1:
        return float(np.abs(z).sum())
    return float(np.sqrt((z * z).sum(axis=1)).sum())


def _check_records(records) -> np.ndarray:
    ys = []
    for r in records:
        y = np.asarray(r.y if isinstance(r, MeasurementRecord) else r, dtype=np.float64)
        if not np.all(np.isfinite(y)):
            raise SolverError("measurements contain nonfinite values")
        ys.append(y)
    if len({y.shape for y in ys}) != 1:
        raise ShapeError("channels have different measurement counts")
    return np.stack(ys, axis=1)


def _noise_sigma(records) -> float | None:
    sig = []
    for r in records:
        if not isinstance(r, MeasurementRecord) or r.noise is None:
            return None
        sig.append(r.noise_sigma())
    return float(np.sqrt(np.mean(np.square(sig))))


def default_lambda(records, op: SensingOperator, y: np.ndarray | None = None) -> float:
    """Universal-threshold rule ``lam = sigma_hat * sqrt(2 ln N)``.

    ``sigma_hat`` is the noise level of one back-projected coefficient:
    the per-reading noise (from the noise model) times the RMS column norm.
    Without a noise model it is the median absolute deviation of the
    finest diagonal Haar band of ``A^T y``, divided by 0.6745. Group
    problems use ``sigma_hat * (sqrt(L) + sqrt(2 ln N))``. Noiseless
    records get ``1e-4 * max|A^T y|`` instead of zero.
    """
    if y is None:
        y = _check_records(records)
    n, channels = op.n, y.shape[1]
    sigma_y = _noise_sigma(records)
    back = op.adjoint(y)
    if sigma_y is None:
        details = []
        for c in range(channels):
            img = op.synthesize(back[:, [c]])[:, 0].reshape(op.height, op.width)
            coeffs = haar_forward(img, 1).reshape(op.height, op.width)
            details.append(coeffs[op.height // 2 :, op.width // 2 :].ravel())
        sigma_hat = float(np.median(np.abs(np.concatenate(details)))) / 0.6745
    else:
        sigma_hat = sigma_y * op.column_rms()
    width = math.sqrt(2.0 * math.log(n))
    lam = sigma_hat * (width if channels == 1 else math.sqrt(channels) + width)
    if lam == 0.0:
        norms = np.sqrt((back * back).sum(axis=1))
        lam = NOISELESS_LAMBDA_FRACTION * float(norms.max())
    return lam


def _proximal_gradient(op: SensingOperator, y: np.ndarray, lam: float, step: float, cfg: SolverConfig):
    """ISTA/FISTA on ``(N, L)`` blocks. Returns ``(z, trace, residuals, converged)``.

    With FISTA and ``cfg.continuation`` the weight starts near
    ``max ||A^T y||`` and shrinks geometrically to ``lam``, warm-starting
    each stage; the trace always reports the objective at the target
    ``lam``. ISTA runs a single stage so its trace stays monotone; an
    increase can only be round-off at a stationary point and ends the run.
    """
    n, channels = op.n, y.shape[1]
    nonneg = cfg.project
    fista = cfg.acceleration == "fista"
    stages = [lam]
    if fista and cfg.continuation:
        back = op.adjoint(y)
        top = 0.5 * float(np.sqrt((back * back).sum(axis=1)).max())
        # with lam near zero the schedule stops at the noiseless floor
        floor = max(lam, NOISELESS_LAMBDA_FRACTION * top)
        while top * cfg.continuation_factor > floor:
            stages.insert(-1, top)
            top *= cfg.continuation_factor
    stage_tol = max(cfg.tol, cfg.stage_tol)

    z = np.zeros((n, channels))
    az = np.zeros_like(y)
    trace: list[float] = []
    resid: list[float] = []
    best = (math.inf, z)
    converged = False
    for si, stage_lam in enumerate(stages):
        final = si == len(stages) - 1
        tol = cfg.tol if final else stage_tol
        z_prev, az_prev = z, az
        t = 1.0
        rel: list[float] = []
        f_prev = None
        while len(trace) < cfg.max_iters:
            if fista:
                t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
                beta = (t - 1.0) / t_next
                w = z + beta * (z - z_prev)
                aw = az + beta * (az - az_prev)
            else:
                w, aw = z, az
            grad = op.adjoint(aw - y)
            z_new = _prox(w - step * grad, step * stage_lam, nonneg)
            az_new = op.forward(z_new)
            r = az_new - y
            rnorm = math.sqrt(float((r * r).sum()))
            pen = _penalty(z_new)
            f = 0.5 * rnorm * rnorm + lam * pen
            f_stage = 0.5 * rnorm * rnorm + stage_lam * pen
            if not math.isfinite(f):
                raise SolverError("objective became nonfinite")
            if not fista and trace and f > trace[-1]:
                # a valid ISTA step cannot increase f; this is round-off at the minimizer
                converged = final
                break
            trace.append(f)
            resid.append(rnorm)
            if f < best[0]:
                best = (f, z_new)
            if fista:
                t = t_next
                if cfg.restart and float(np.vdot(w - z_new, z_new - z)) > 0.0:
                    t = 1.0
            z_prev, az_prev, z, az = z, az, z_new, az_new
            if f_prev is None:
                f_prev = 0.5 * float((y * y).sum()) if si == 0 else f_stage
            rel.append(abs(f_prev - f_stage) / max(abs(f_prev), abs(f_stage), 1e-300))
            f_prev = f_stage
            if len(rel) >= cfg.window and sum(rel[-cfg.window :]) / cfg.window < tol:
                converged = final
                break
        if len(trace) >= cfg.max_iters:
            break
    if fista:
        z = best[1]
    return z, np.array(trace), np.array(resid), converged


def _solve_block(records, op: SensingOperator, cfg: SolverConfig, lam: float | None, step: float | None):
    y = _check_records(records)
    if y.shape[0] != op.m:
        raise ShapeError(f"{y.shape[0]} readings for {op.m} patterns")
    if cfg.centering:
        y = y - y.mean(axis=0)
    if lam is None:
        lam = default_lambda(records, op, y)
    if step is None:
        step = estimate_step_size(op.patterns, op.basis, width=op.width, height=op.height, centering=op.centering)
    if not np.any(y):
        z = np.zeros((op.n, y.shape[1]))
        return z, np.zeros(1), np.zeros(1), True, lam, step, 0.0
    z, trace, resid, conv = _proximal_gradient(op, y, lam, step, cfg)
    r = op.forward(z) - y
    return z, trace, resid, conv, lam, step, float(np.linalg.norm(r))


def _patterns_match(record, patterns: PatternSet) -> None:
    if isinstance(record, MeasurementRecord) and record.patterns_ref != patterns.content_hash:
        raise ShapeError("measurement record was not produced by these patterns")


def reconstruct_l1(record: MeasurementRecord, patterns: PatternSet, cfg: SolverConfig | None = None, *,
                   width: int | None = None, height: int | None = None, step: float | None = None) -> RecoveryResult:
    """Solve ``min 0.5 ||A x - y||^2 + lam ||Psi x||_1`` (optionally ``x >= 0``)."""
    cfg = cfg or SolverConfig()
    if width is None or height is None:
        height, width = _default_dims(patterns.n)
    _patterns_match(record, patterns)
    op = SensingOperator(patterns, height, width, cfg.basis, cfg.centering)
    z, trace, resid, conv, lam, step, rn = _solve_block([record], op, cfg, cfg.lam, step)
    x = op.synthesize(z)[:, 0]
    return RecoveryResult(Scene(width, height, x), len(trace), trace, rn, conv, lam, step, resid)


def reconstruct_joint_spectral(records, patterns, cfg: SolverConfig | None = None, group_weight: float | None = None,
                               *, width: int | None = None, height: int | None = None,
                               step: float | None = None) -> RecoveryResult:
    """l2,1-regularized recovery of a cube, one record per channel.

    ``patterns`` is a single set shared by every channel or one set per
    channel. ``group_weight`` overrides ``cfg.lam``.
    """
    cfg = cfg or SolverConfig()
    records = list(records)
    if not records:
        raise ShapeError("no channels given")
    if not isinstance(patterns, PatternSet):
        patterns = list(patterns)
        if len(patterns) != len(records):
            raise ShapeError("need one pattern set per channel")
        if len(patterns) == 1:
            patterns = patterns[0]
    p0 = patterns if isinstance(patterns, PatternSet) else patterns[0]
    for c, rec in enumerate(records):
        _patterns_match(rec, patterns if isinstance(patterns, PatternSet) else patterns[c])
    if width is None or height is None:
        height, width = _default_dims(p0.n)
    op = SensingOperator(patterns, height, width, cfg.basis, cfg.centering)
    lam = group_weight if group_weight is not None else cfg.lam
    z, trace, resid, conv, lam, step, rn = _solve_block(records, op, cfg, lam, step)
    cube = SpectralCube.from_fibers(op.synthesize(z), width, height)
    return RecoveryResult(cube, len(trace), trace, rn, conv, lam, step, resid)


def tv_aniso(img: np.ndarray) -> float:
    """Sum of absolute horizontal and vertical differences inside the frame."""
    img = np.asarray(img, dtype=np.float64)
    return float(np.abs(np.diff(img, axis=1)).sum() + np.abs(np.diff(img, axis=0)).sum())


def reconstruct_tv(record: MeasurementRecord, patterns: PatternSet, cfg: SolverConfig | None = None,
                   tv_weight: float | None = None, *, width: int | None = None,
                   height: int | None = None) -> RecoveryResult:
    """Solve ``min 0.5 ||A x - y||^2 + mu TV_aniso(x)`` by ADMM.

    Splitting ``x = z_h = z_v`` separates horizontal from vertical TV; each
    split variable is updated by exact 1-D TV proximal steps along rows or
    columns, and the ``x`` step is a conjugate-gradient solve of
    ``(A^T A + 2 rho I) x = b``. The penalty ``rho`` defaults to
    ``min(10 mu, 0.1 ||A||^2)`` (the latter when ``mu = 0``). ``tv_weight`` (mu) defaults to ``cfg.lam``
    or the l1 default rule. With ``nonnegative`` the split variables are
    clipped at zero, which is exact for 1-D TV.
    """
    cfg = cfg or SolverConfig()
    if cfg.basis is not None:
        raise ConfigurationError("TV acts on pixels; use the identity basis")
    if width is None or height is None:
        height, width = _default_dims(patterns.n)
    _patterns_match(record, patterns)
    op = SensingOperator(patterns, height, width, None, cfg.centering)
    y = _check_records([record])[:, 0]
    if y.shape[0] != op.m:
        raise ShapeError(f"{y.shape[0]} readings for {op.m} patterns")
    if cfg.centering:
        y = y - y.mean()
    mu = tv_weight if tv_weight is not None else (cfg.lam if cfg.lam is not None else default_lambda([record], op, y[:, None]))
    if mu < 0:
        raise ConfigurationError("tv weight must be nonnegative")
    n = op.n
    if not np.any(y):
        return RecoveryResult(Scene(width, height, np.zeros(n)), 1, np.zeros(1), 0.0, True, mu, 0.0, np.zeros(1))

    step = estimate_step_size(patterns, None, width=width, height=height, centering=cfg.centering)
    lips = 1.0 / step
    rho = cfg.admm_rho if cfg.admm_rho is not None else (min(10.0 * mu, 0.1 * lips) if mu > 0 else 0.1 * lips)
    nonneg = cfg.project

    def fwd(v):
        return op.forward(v[:, None])[:, 0]

    def adj(v):
        return op.adjoint(v[:, None])[:, 0]

    normal = LinearOperator((n, n), matvec=lambda v: adj(fwd(v)) + 2.0 * rho * v, dtype=np.float64)
    aty = adj(y)
    x = np.zeros(n)
    zh = np.zeros((height, width))
    zv = np.zeros((height, width))
    uh = np.zeros((height, width))
    uv = np.zeros((height, width))
    trace, resid, rel = [], [], []
    f_prev = 0.5 * float(y @ y)
    converged = False
    for _ in range(cfg.max_iters):
        b = aty + rho * (zh - uh + zv - uv).ravel()
        x, _info = cg(normal, b, x0=x, rtol=1e-12, atol=0.0, maxiter=200)
        img = x.reshape(height, width)
        zh = tv1d_rows(img + uh, mu / rho)
        zv = tv1d_rows((img + uv).T, mu / rho).T
        if nonneg:
            zh = np.maximum(zh, 0.0)
            zv = np.maximum(zv, 0.0)
        uh += img - zh
        uv += img - zv
        r = fwd(x) - y
        rnorm = float(np.linalg.norm(r))
        f = 0.5 * rnorm * rnorm + mu * tv_aniso(img)
        if not math.isfinite(f):
            raise SolverError("objective became nonfinite")
        trace.append(f)
        resid.append(rnorm)
        rel.append(abs(f_prev - f) / max(abs(f_prev), abs(f), 1e-300))
        f_prev = f
        primal = math.sqrt(float(((img - zh) ** 2).sum() + ((img - zv) ** 2).sum()))
        scale = max(float(np.linalg.norm(x)), 1e-300)
        if (len(rel) >= cfg.window and sum(rel[-cfg.window :]) / cfg.window < cfg.tol
                and primal <= math.sqrt(cfg.tol) * scale):
            converged = True
            break
    est = np.maximum(x, 0.0) if nonneg else x
    rn = float(np.linalg.norm(fwd(est) - y))
    return RecoveryResult(Scene(width, height, est), len(trace), np.array(trace), rn, converged, mu, step, np.array(resid))


def smooth_gradient(patterns: PatternSet, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``A^T (A x - y)``, the gradient of ``0.5 ||A x - y||^2``."""
    return apply_adjoint(patterns, apply_operator(patterns, x) - y)

