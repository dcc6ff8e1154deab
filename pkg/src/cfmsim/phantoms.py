"""Synthetic fluorescent scenes and hyperspectral cubes.

Scenes are built from three object kinds: hard-disk beads, Gaussian blobs
truncated at four sigma, and single-pixel spikes. Objects that overlap add.
Generation reads one counter-based stream per phantom seed, so a given
(spec, width, height) always yields the same bytes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import ConfigurationError, ShapeError
from .transforms import is_power_of_two

# substream tags
_GEOMETRY = 1
_SPECTRA = 2


@dataclass
class Scene:
    """A ``height x width`` image stored as a flat row-major vector.

    Values are expected photons per pixel per unit exposure. Generated and
    measured scenes are nonnegative; reconstructions in a non-identity
    basis may not be.
    """

    width: int
    height: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64).ravel()
        if not (is_power_of_two(self.width) and is_power_of_two(self.height)):
            raise ConfigurationError(f"scene dimensions must be powers of two, got {self.width}x{self.height}")
        if self.values.size != self.width * self.height:
            raise ShapeError(f"{self.values.size} values for a {self.width}x{self.height} scene")

    @property
    def n(self) -> int:
        return self.width * self.height

    @property
    def image(self) -> np.ndarray:
        return self.values.reshape(self.height, self.width)

    @classmethod
    def from_image(cls, img) -> Scene:
        img = np.asarray(img, dtype=np.float64)
        return cls(img.shape[1], img.shape[0], img.ravel())


@dataclass
class SpectralCube:
    """``channels`` frames of ``height x width``, channel-major then row-major."""

    width: int
    height: int
    channels: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64).ravel()
        if not (is_power_of_two(self.width) and is_power_of_two(self.height)):
            raise ConfigurationError(f"cube dimensions must be powers of two, got {self.width}x{self.height}")
        if self.channels < 1:
            raise ConfigurationError("a cube needs at least one channel")
        if self.values.size != self.width * self.height * self.channels:
            raise ShapeError("value count does not match cube dimensions")

    @property
    def n(self) -> int:
        return self.width * self.height

    @property
    def frames(self) -> np.ndarray:
        return self.values.reshape(self.channels, self.height, self.width)

    @property
    def fibers(self) -> np.ndarray:
        """``(N, L)`` view: row ``i`` is the spectrum at pixel ``i``."""
        return self.values.reshape(self.channels, self.n).T

    def channel(self, c: int) -> Scene:
        return Scene(self.width, self.height, self.frames[c].ravel())

    @classmethod
    def from_fibers(cls, fibers: np.ndarray, width: int, height: int) -> SpectralCube:
        fibers = np.asarray(fibers, dtype=np.float64)
        return cls(width, height, fibers.shape[1], fibers.T.ravel())


@dataclass(frozen=True)
class PhantomSpec:
    """Recipe for a synthetic scene.

    ``kind`` is ``beads`` (needs ``radius_px``), ``blobs`` (needs
    ``sigma_px_range``) or ``spikes``. Amplitudes are uniform in
    ``amplitude_range``.
    """

    kind: str
    count: int
    seed: int = 0
    radius_px: float | None = None
    sigma_px_range: tuple[float, float] | None = None
    amplitude_range: tuple[float, float] = field(default=(1.0, 1.0))

    def __post_init__(self):
        if self.kind not in ("beads", "blobs", "spikes"):
            raise ConfigurationError(f"unknown phantom kind {self.kind!r}")
        if self.count < 0:
            raise ConfigurationError("object count must be nonnegative")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")
        lo, hi = self.amplitude_range
        if not 0 < lo <= hi:
            raise ConfigurationError("amplitude range must be positive and ordered")
        if self.kind == "beads" and not (self.radius_px and self.radius_px > 0):
            raise ConfigurationError("beads need a positive radius")
        if self.kind == "blobs":
            if self.sigma_px_range is None:
                raise ConfigurationError("blobs need a sigma range")
            s0, s1 = self.sigma_px_range
            if not 0 < s0 <= s1:
                raise ConfigurationError("sigma range must be positive and ordered")

    def half_extent(self, size: float) -> int:
        """Pixels an object reaches from its center."""
        if self.kind == "beads":
            return int(math.floor(size))
        if self.kind == "blobs":
            return int(math.floor(4.0 * size))
        return 0


def _rasterize(kind: str, size: float, cy: int, cx: int, height: int, width: int):
    """Pixel indices and unit-amplitude profile of one object."""
    if kind == "spikes":
        return np.array([cy * width + cx]), np.array([1.0])
    r = size if kind == "beads" else 4.0 * size
    ext = int(math.floor(r))
    yy, xx = np.mgrid[cy - ext : cy + ext + 1, cx - ext : cx + ext + 1]
    d2 = (yy - cy) ** 2 + (xx - cx) ** 2
    inside = d2 <= r * r
    if kind == "beads":
        prof = np.ones(int(inside.sum()))
    else:
        prof = np.exp(-d2[inside] / (2.0 * size * size))
    return (yy[inside] * width + xx[inside]).ravel(), prof


def _objects(spec: PhantomSpec, width: int, height: int):
    """Yield ``(pixel_indices, profile)`` per object, amplitude applied."""
    if not (is_power_of_two(width) and is_power_of_two(height)):
        raise ConfigurationError(f"scene dimensions must be powers of two, got {width}x{height}")
    if spec.kind == "spikes" and spec.count > width * height:
        raise ConfigurationError("more spikes than pixels")
    if spec.kind == "beads":
        max_size = spec.radius_px
    elif spec.kind == "blobs":
        max_size = spec.sigma_px_range[1]
    else:
        max_size = 0.0
    if 2 * spec.half_extent(max_size) + 1 > min(width, height):
        raise ConfigurationError("object larger than image")

    stream = rng.Stream(rng.derive_key(spec.seed, _GEOMETRY))
    used: set[int] = set()
    lo, hi = spec.amplitude_range
    for _ in range(spec.count):
        if spec.kind == "blobs":
            size = stream.uniform_range(*spec.sigma_px_range)
        else:
            size = spec.radius_px or 0.0
        ext = spec.half_extent(size)
        while True:
            cy = stream.integer(height)
            cx = stream.integer(width)
            if ext <= cy < height - ext and ext <= cx < width - ext:
                if spec.kind != "spikes" or cy * width + cx not in used:
                    break
        used.add(cy * width + cx)
        amp = stream.uniform_range(lo, hi)
        idx, prof = _rasterize(spec.kind, size, cy, cx, height, width)
        yield idx, amp * prof


def generate_scene(spec: PhantomSpec, width: int, height: int) -> Scene:
    values = np.zeros(width * height)
    for idx, prof in _objects(spec, width, height):
        np.add.at(values, idx, prof)
    return Scene(width, height, values)


def _spectrum(stream: rng.Stream, channels: int, spectra: str, center_jitter: float, linewidth: float):
    """Peak-normalized emission spectrum of one object."""
    if spectra == "shared_support_random_spectra":
        s = 1.0 - stream.uniform(channels)  # in (0, 1]
        return s / s.max()
    center = (channels - 1) * (0.5 + center_jitter * (stream.uniform() - 0.5))
    center = min(max(center, 0.0), channels - 1.0)
    d2 = (np.arange(channels) - center) ** 2
    if linewidth <= 0:
        s = np.zeros(channels)
        s[int(np.argmin(d2))] = 1.0
        return s
    # shift by the nearest channel so the peak never underflows
    return np.exp(-(d2 - d2.min()) / (2.0 * linewidth * linewidth))


def generate_cube(
    spec: PhantomSpec,
    width: int,
    height: int,
    channels: int,
    spectra: str = "shared_support_random_spectra",
    center_jitter: float = 0.5,
    linewidth: float = 2.0,
) -> SpectralCube:
    """Cube whose objects each carry one spectrum across all channels.

    Geometry is identical to ``generate_scene`` for the same spec; spectra
    come from a separate substream and are normalized to a peak of 1, so a
    single-channel cube equals the scene.

    ``gaussian_emission_lines`` centers each line at
    ``(L-1) * (0.5 + center_jitter * (u - 0.5))`` with Gaussian width
    ``linewidth`` channels; ``linewidth = 0`` puts each object in exactly
    one channel.
    """
    if channels < 1:
        raise ConfigurationError("a cube needs at least one channel")
    if spectra not in ("shared_support_random_spectra", "gaussian_emission_lines"):
        raise ConfigurationError(f"unknown spectra model {spectra!r}")
    if center_jitter < 0 or linewidth < 0:
        raise ConfigurationError("center_jitter and linewidth must be nonnegative")
    fibers = np.zeros((width * height, channels))
    stream = rng.Stream(rng.derive_key(spec.seed, _SPECTRA))
    for idx, prof in _objects(spec, width, height):
        s = _spectrum(stream, channels, spectra, center_jitter, linewidth)
        np.add.at(fibers, idx, prof[:, None] * s[None, :])
    return SpectralCube.from_fibers(fibers, width, height)


def sparsity(scene: Scene | np.ndarray, threshold: float = 0.0) -> int:
    """Number of values strictly above ``threshold``."""
    if threshold < 0:
        raise ConfigurationError("threshold must be nonnegative")
    v = scene.values if isinstance(scene, (Scene, SpectralCube)) else np.asarray(scene)
    return int(np.count_nonzero(v > threshold))
