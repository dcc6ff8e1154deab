"""Fast orthogonal transforms.

``fwht`` is the unnormalized Walsh-Hadamard transform in natural (Sylvester)
order; it backs the Hadamard pattern ensemble. The 2-D Haar and DCT-II pairs
are orthonormal and serve as sparsifying bases. Only power-of-two sizes are
accepted: padding would break exact adjoints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft

from .errors import ConfigurationError, LengthError


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class TransformKind:
    """A sparsifying basis: ``walsh_hadamard``, ``haar_wavelet`` or ``dct2``.

    ``levels`` is only meaningful for Haar; ``None`` means the maximum
    depth the image allows.
    """

    tag: str
    levels: int | None = None

    TAGS = ("walsh_hadamard", "haar_wavelet", "dct2")

    def __post_init__(self):
        if self.tag not in self.TAGS:
            raise ConfigurationError(f"unknown transform {self.tag!r}")
        if self.levels is not None:
            if self.tag != "haar_wavelet":
                raise ConfigurationError("levels apply to haar_wavelet only")
            if self.levels < 1:
                raise ConfigurationError("haar levels must be positive")

    @classmethod
    def parse(cls, name: str) -> TransformKind | None:
        """``identity``, ``haar``, ``haar:3``, ``dct`` or ``hadamard``."""
        name = name.strip().lower()
        if name in ("identity", "none", ""):
            return None
        if name in ("dct", "dct2"):
            return cls("dct2")
        if name in ("hadamard", "walsh_hadamard", "wht"):
            return cls("walsh_hadamard")
        if name.startswith("haar"):
            _, _, lv = name.partition(":")
            return cls("haar_wavelet", int(lv) if lv else None)
        raise ConfigurationError(f"unknown basis {name!r}")

    def forward(self, img: np.ndarray) -> np.ndarray:
        """Coefficients of a ``(height, width)`` image, flattened."""
        if self.tag == "haar_wavelet":
            return haar_forward(img, self.levels or max_haar_levels(*img.shape))
        if self.tag == "dct2":
            return dct2_forward(img)
        _check_dims(*img.shape)
        return fwht(img.ravel()) / np.sqrt(img.size)

    def inverse(self, coeffs: np.ndarray, height: int, width: int) -> np.ndarray:
        """Image of shape ``(height, width)`` from flattened coefficients."""
        if self.tag == "haar_wavelet":
            levels = self.levels or max_haar_levels(height, width)
            return haar_inverse(coeffs, levels, width, height)
        if self.tag == "dct2":
            return dct2_inverse(coeffs, width, height)
        _check_dims(height, width)
        if np.size(coeffs) != height * width:
            raise ConfigurationError("coefficient count does not match image")
        return (fwht(np.asarray(coeffs, dtype=float)) / np.sqrt(height * width)).reshape(height, width)


def fwht(v, axis: int = 0) -> np.ndarray:
    """Walsh-Hadamard transform ``H_N v`` along ``axis``.

    Natural ordering, no normalization, so ``fwht(fwht(v)) == N * v``.

    Raises
    ------
    LengthError
        If the transformed length is not a power of two.
    """
    a = np.moveaxis(np.array(v, dtype=np.float64, copy=True), axis, 0)
    n = a.shape[0]
    if not is_power_of_two(n):
        raise LengthError(f"fwht needs a power-of-two length, got {n}")
    rest = a.shape[1:]
    h = 1
    while h < n:
        a = a.reshape((n // (2 * h), 2, h) + rest)
        top = a[:, 0]
        bot = a[:, 1]
        a = np.stack((top + bot, top - bot), axis=1)
        h *= 2
    return np.moveaxis(a.reshape((n,) + rest), 0, axis)


def max_haar_levels(height: int, width: int) -> int:
    return int(np.log2(min(height, width)))


def _check_dims(height: int, width: int) -> None:
    if not (is_power_of_two(height) and is_power_of_two(width)):
        raise ConfigurationError(f"image dimensions must be powers of two, got {height}x{width}")


def _check_haar(height: int, width: int, levels: int) -> None:
    _check_dims(height, width)
    if levels < 1 or levels > max_haar_levels(height, width):
        raise ConfigurationError(
            f"haar levels must lie in [1, {max_haar_levels(height, width)}] for {height}x{width}"
        )


_R2 = np.sqrt(0.5)


def haar_forward(img, levels: int) -> np.ndarray:
    """Orthonormal multi-level 2-D Haar transform.

    Coefficients use the Mallat layout (approximation in the top-left
    corner) and are returned flattened row-major.
    """
    x = np.array(img, dtype=np.float64, copy=True)
    if x.ndim != 2:
        raise ConfigurationError("haar_forward expects a 2-D image")
    h, w = x.shape
    _check_haar(h, w, levels)
    for _ in range(levels):
        sub = x[:h, :w]
        lo = (sub[:, 0::2] + sub[:, 1::2]) * _R2
        hi = (sub[:, 0::2] - sub[:, 1::2]) * _R2
        sub = np.hstack((lo, hi))
        lo = (sub[0::2, :] + sub[1::2, :]) * _R2
        hi = (sub[0::2, :] - sub[1::2, :]) * _R2
        x[:h, :w] = np.vstack((lo, hi))
        h //= 2
        w //= 2
    return x.ravel()


def haar_inverse(coeffs, levels: int, width: int, height: int) -> np.ndarray:
    c = np.asarray(coeffs, dtype=np.float64)
    if c.size != width * height:
        raise ConfigurationError(f"{c.size} coefficients for a {height}x{width} image")
    _check_haar(height, width, levels)
    x = c.reshape(height, width).copy()
    for lv in reversed(range(levels)):
        h, w = height >> lv, width >> lv
        sub = x[:h, :w]
        lo, hi = sub[: h // 2], sub[h // 2 :]
        rows = np.empty_like(sub)
        rows[0::2] = (lo + hi) * _R2
        rows[1::2] = (lo - hi) * _R2
        lo, hi = rows[:, : w // 2], rows[:, w // 2 :]
        out = np.empty_like(sub)
        out[:, 0::2] = (lo + hi) * _R2
        out[:, 1::2] = (lo - hi) * _R2
        x[:h, :w] = out
    return x


def dct2_forward(img) -> np.ndarray:
    """Orthonormal 2-D DCT-II, flattened row-major."""
    x = np.asarray(img, dtype=np.float64)
    if x.ndim != 2:
        raise ConfigurationError("dct2_forward expects a 2-D image")
    _check_dims(*x.shape)
    return scipy.fft.dctn(x, type=2, norm="ortho").ravel()


def dct2_inverse(coeffs, width: int, height: int) -> np.ndarray:
    c = np.asarray(coeffs, dtype=np.float64)
    if c.size != width * height:
        raise ConfigurationError(f"{c.size} coefficients for a {height}x{width} image")
    _check_dims(height, width)
    return scipy.fft.idctn(c.reshape(height, width), type=2, norm="ortho")
