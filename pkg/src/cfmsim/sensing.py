"""Structured-illumination acquisition with a single point detector.

A pattern set holds ``M`` binary mirror masks of ``N`` pixels. Each detector
reading is the inner product of a mask with the scene, plus noise. In
differential mode every logical pattern ``p`` is exposed together with its
complement ``1 - p`` and the two readings are subtracted, which turns binary
sensing into bipolar (+1/-1) sensing at the cost of two physical readings.

Noise draws are keyed by ``(seed, channel, pattern index, exposure)`` so they
do not depend on evaluation order.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numba
import numpy as np

from . import rng
from .errors import ConfigurationError, ShapeError
from .phantoms import Scene, SpectralCube
from .transforms import fwht, is_power_of_two

ENSEMBLES = ("bernoulli_binary", "hadamard_rows", "raster")
NOISE_KINDS = ("noiseless", "gaussian", "poisson", "poisson_plus_gaussian")

# substream tags
_BERNOULLI = 11
_HADAMARD = 12
_POISSON = 21
_GAUSS = 22

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


@numba.njit(cache=True)
def _fnv1a(data, h, prime):
    for b in data:
        h ^= np.uint64(b)
        h *= prime
    return h


def fnv1a64(data: bytes | np.ndarray) -> int:
    """64-bit FNV-1a (offset basis 0xcbf29ce484222325, prime 0x100000001b3)."""
    buf = np.frombuffer(bytes(data), dtype=np.uint8) if isinstance(data, (bytes, bytearray)) else data
    buf = np.ascontiguousarray(buf, dtype=np.uint8).ravel()
    return int(_fnv1a(buf, np.uint64(FNV_OFFSET), np.uint64(FNV_PRIME)))


@dataclass(eq=False)
class PatternSet:
    """Bit-packed binary illumination patterns.

    ``packed`` has shape ``(m, ceil(n / 8))``; bit ``j`` of row ``i`` is
    stored MSB-first. For ``hadamard_rows`` the selected Hadamard row indices
    are kept in ``rows`` so the operator can run through ``fwht``.
    """

    ensemble: str
    m: int
    n: int
    packed: np.ndarray
    differential: bool = False
    rows: np.ndarray | None = None
    density: float | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.ensemble not in ENSEMBLES:
            raise ConfigurationError(f"unknown ensemble {self.ensemble!r}")
        if self.m < 1 or self.n < 1:
            raise ConfigurationError("pattern sets need M >= 1 and N >= 1")
        self.packed = np.ascontiguousarray(self.packed, dtype=np.uint8)
        if self.packed.shape != (self.m, (self.n + 7) // 8):
            raise ShapeError("packed pattern array has the wrong shape")
        if self.ensemble == "hadamard_rows":
            if not is_power_of_two(self.n):
                raise ConfigurationError("hadamard_rows needs a power-of-two N")
            if self.rows is None:
                self.rows = _detect_hadamard_rows(self.binary())
            self.rows = np.asarray(self.rows, dtype=np.int64)
            if len(np.unique(self.rows)) != self.m:
                raise ConfigurationError("hadamard rows must be distinct")

    @property
    def physical_m(self) -> int:
        """Detector readings consumed: complementary pairs count twice."""
        return 2 * self.m if self.differential else self.m

    def binary(self) -> np.ndarray:
        """Dense ``(m, n)`` array of 0/1 mirror states."""
        if "binary" not in self._cache:
            bits = np.unpackbits(self.packed, axis=1, count=self.n)
            self._cache["binary"] = bits.astype(np.float64)
        return self._cache["binary"]

    def matrix(self) -> np.ndarray:
        """Dense sensing matrix: binary, or ``2p - 1`` in differential mode."""
        if "matrix" not in self._cache:
            b = self.binary()
            self._cache["matrix"] = 2.0 * b - 1.0 if self.differential else b
        return self._cache["matrix"]

    @functools.cached_property
    def content_hash(self) -> int:
        return fnv1a64(self.packed)

    def with_differential(self, differential: bool) -> PatternSet:
        return PatternSet(self.ensemble, self.m, self.n, self.packed, differential, self.rows, self.density)


def pack_rows(bits: np.ndarray) -> np.ndarray:
    """Pack a 0/1 ``(m, n)`` array MSB-first; pad bits are zero."""
    return np.packbits(np.asarray(bits, dtype=np.uint8), axis=1, bitorder="big")


def _hadamard_bits(rows: np.ndarray, n: int) -> np.ndarray:
    """Binary ``(1 + h) / 2`` for natural-order Hadamard rows."""
    j = np.arange(n, dtype=np.uint64)
    parity = np.bitwise_count(rows.astype(np.uint64)[:, None] & j[None, :]) & 1
    return (parity == 0).astype(np.uint8)


def _detect_hadamard_rows(binary: np.ndarray) -> np.ndarray:
    n = binary.shape[1]
    spectra = fwht(2.0 * binary - 1.0, axis=1)
    rows = np.argmax(spectra, axis=1)
    if not np.all(spectra[np.arange(len(rows)), rows] == n):
        raise ConfigurationError("patterns are not binary Hadamard rows")
    return rows


def generate_patterns(
    ensemble: str,
    m: int,
    n: int,
    seed: int = 0,
    *,
    density: float = 0.5,
    differential: bool = False,
    permute: bool = True,
) -> PatternSet:
    """Build ``m`` patterns of ``n`` pixels.

    ``bernoulli_binary``: mirror ``(i, j)`` is on when
    ``uniform(key, i * n + j) < density``; a prefix of rows is therefore
    independent of ``m``. ``hadamard_rows``: the first ``m`` entries of a
    seeded permutation of Hadamard row indices (or ``0..m-1`` with
    ``permute=False``), mapped to binary by ``(1 + h) / 2``. ``raster``:
    pattern ``i`` lights pixel ``i`` only.
    """
    if ensemble not in ENSEMBLES:
        raise ConfigurationError(f"unknown ensemble {ensemble!r}")
    if m < 1 or n < 1:
        raise ConfigurationError("need M >= 1 and N >= 1")
    if not 0 <= seed < 2**64:
        raise ConfigurationError("seed must be a 64-bit unsigned integer")

    if ensemble == "bernoulli_binary":
        if not 0.0 < density < 1.0:
            raise ConfigurationError("bernoulli density must lie in (0, 1)")
        key = rng.derive_key(seed, _BERNOULLI)
        packed = np.empty((m, (n + 7) // 8), dtype=np.uint8)
        chunk = max(1, (1 << 21) // n)
        for r0 in range(0, m, chunk):
            r1 = min(m, r0 + chunk)
            counters = np.arange(r0 * n, r1 * n, dtype=np.uint64)
            bits = (rng.uniform(key, counters) < density).reshape(r1 - r0, n)
            packed[r0:r1] = pack_rows(bits)
        return PatternSet(ensemble, m, n, packed, differential, density=density)

    if ensemble == "hadamard_rows":
        if not is_power_of_two(n):
            raise ConfigurationError("hadamard_rows needs a power-of-two N")
        if m > n:
            raise ConfigurationError(f"hadamard_rows needs M <= N, got M={m} N={n}")
        if permute:
            rows = rng.Stream(rng.derive_key(seed, _HADAMARD)).permutation(n)[:m]
        else:
            rows = np.arange(m)
        return PatternSet(ensemble, m, n, pack_rows(_hadamard_bits(rows, n)), differential, rows=rows)

    if m > n:
        raise ConfigurationError(f"raster needs M <= N, got M={m} N={n}")
    bits = np.zeros((m, n), dtype=np.uint8)
    bits[np.arange(m), np.arange(m)] = 1
    return PatternSet(ensemble, m, n, pack_rows(bits), differential)


def _binary_forward(p: PatternSet, x: np.ndarray) -> np.ndarray:
    if p.ensemble == "raster":
        return x[: p.m].copy()
    if p.ensemble == "hadamard_rows":
        return 0.5 * (x.sum(axis=0) + fwht(x)[p.rows])
    return p.binary() @ x


def apply_operator(patterns: PatternSet, x: np.ndarray) -> np.ndarray:
    """``A x`` for a length-N vector or an ``(N, L)`` block of columns.

    ``A`` is binary, or bipolar (``2p - 1``) for differential sets.
    Hadamard ensembles run in ``O(N log N)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != patterns.n:
        raise ShapeError(f"operator expects {patterns.n} rows, got {x.shape[0]}")
    p = patterns
    if not p.differential:
        return _binary_forward(p, x)
    if p.ensemble == "raster":
        return 2.0 * x[: p.m] - x.sum(axis=0)
    if p.ensemble == "hadamard_rows":
        return fwht(x)[p.rows]
    return p.matrix() @ x


def apply_adjoint(patterns: PatternSet, r: np.ndarray) -> np.ndarray:
    """``A^T r``, the exact adjoint of :func:`apply_operator`."""
    r = np.asarray(r, dtype=np.float64)
    p = patterns
    if r.shape[0] != p.m:
        raise ShapeError(f"adjoint expects {p.m} rows, got {r.shape[0]}")
    if p.ensemble == "bernoulli_binary":
        return p.matrix().T @ r
    if p.ensemble == "raster":
        out = np.zeros((p.n,) + r.shape[1:])
        if p.differential:
            out[: p.m] = 2.0 * r
            return out - r.sum(axis=0)
        out[: p.m] = r
        return out
    s = np.zeros((p.n,) + r.shape[1:])
    s[p.rows] = r
    hs = fwht(s)
    if p.differential:
        return hs
    return 0.5 * (r.sum(axis=0) + hs)


@dataclass(frozen=True)
class NoiseModel:
    """Detector noise.

    ``gaussian`` adds ``sigma`` in scene units. ``poisson`` scales the scene
    so that full illumination yields ``budget`` expected photons, draws
    photon counts, and reports them back in scene units.
    ``poisson_plus_gaussian`` adds read noise of ``sigma`` photon counts
    before rescaling.
    """

    kind: str = "noiseless"
    sigma: float = 0.0
    budget: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ConfigurationError(f"unknown noise kind {self.kind!r}")
        if self.sigma < 0:
            raise ConfigurationError("sigma must be nonnegative")
        if self.kind.startswith("poisson") and not (self.budget and self.budget > 0):
            raise ConfigurationError("poisson noise needs a positive photon budget")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")

    @property
    def param(self) -> float:
        """The level parameter reported in sweep tables."""
        if self.kind.startswith("poisson"):
            return float(self.budget)
        return float(self.sigma)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "sigma": self.sigma, "budget": self.budget, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> NoiseModel:
        return cls(d.get("kind", "noiseless"), float(d.get("sigma", 0.0) or 0.0), d.get("budget"), int(d.get("seed", 0)))


@dataclass
class MeasurementRecord:
    """Detector readings for one channel.

    ``y`` has one entry per logical pattern; in differential mode the two
    exposures of each pair are already subtracted (``combined``).
    ``photon_scale`` is photons per scene unit for Poisson models.
    """

    y: np.ndarray
    patterns_ref: int
    noise: NoiseModel
    combined: bool
    m: int
    physical_m: int
    photon_scale: float | None = None
    channel: int = 0

    def noise_sigma(self) -> float | None:
        """Per-reading noise standard deviation in scene units.

        ``None`` when the record carries no noise description.
        """
        nm = self.noise
        pairs = 2.0 if self.combined else 1.0
        var = 0.0
        if nm.kind == "gaussian":
            var = pairs * nm.sigma**2
        elif nm.kind.startswith("poisson"):
            s = self.photon_scale
            if not s:
                return 0.0
            if self.combined:
                # both exposures together collect the whole budget
                var = float(nm.budget) / s**2
            else:
                var = float(np.mean(np.maximum(self.y, 0.0))) / s
            if nm.kind == "poisson_plus_gaussian":
                var += pairs * (nm.sigma / s) ** 2
        return float(np.sqrt(var))


def _readings(mean_scene_units, noise: NoiseModel, scale, channel: int, exposure: int):
    m = mean_scene_units.shape[0]
    idx = np.arange(m, dtype=np.uint64)
    if noise.kind == "noiseless":
        return mean_scene_units
    if noise.kind == "gaussian":
        g = rng.standard_normal(rng.derive_key(noise.seed, _GAUSS, channel, idx, exposure))
        return mean_scene_units + noise.sigma * g
    if scale is None:
        return np.zeros(m)
    lam = np.maximum(mean_scene_units, 0.0) * scale
    counts = rng.poisson(lam, rng.derive_key(noise.seed, _POISSON, channel, idx, exposure)).astype(np.float64)
    if noise.kind == "poisson_plus_gaussian":
        counts = counts + noise.sigma * rng.standard_normal(
            rng.derive_key(noise.seed, _GAUSS, channel, idx, exposure)
        )
    return counts / scale


def measure(scene: Scene | np.ndarray, patterns: PatternSet, noise: NoiseModel | None = None, channel: int = 0) -> MeasurementRecord:
    """Simulate one acquisition of ``scene`` under ``patterns``."""
    noise = noise or NoiseModel()
    x = scene.values if isinstance(scene, Scene) else np.asarray(scene, dtype=np.float64).ravel()
    if x.size != patterns.n:
        raise ShapeError(f"scene has {x.size} pixels, patterns have {patterns.n}")
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise ConfigurationError("scene values must be finite and nonnegative")

    total = float(x.sum())
    scale = noise.budget / total if noise.kind.startswith("poisson") and total > 0 else None
    plus = _binary_forward(patterns, x)
    y = _readings(plus, noise, scale, channel, 0)
    if patterns.differential:
        minus = total - plus
        y = y - _readings(minus, noise, scale, channel, 1)
    return MeasurementRecord(
        y=np.asarray(y, dtype=np.float64),
        patterns_ref=patterns.content_hash,
        noise=noise,
        combined=patterns.differential,
        m=patterns.m,
        physical_m=patterns.physical_m,
        photon_scale=scale,
        channel=channel,
    )


def measure_cube(cube: SpectralCube, patterns, noise: NoiseModel | None = None) -> list[MeasurementRecord]:
    """One record per channel; ``patterns`` is shared or a per-channel list."""
    plist = patterns if isinstance(patterns, (list, tuple)) else [patterns] * cube.channels
    if len(plist) != cube.channels:
        raise ShapeError("need one pattern set per channel")
    frames = cube.frames
    return [measure(frames[c].ravel(), plist[c], noise, channel=c) for c in range(cube.channels)]
