"""On-disk formats.

CFM1 (scenes, cubes, estimates)::

    CFM1 <width> <height> <channels>\\n
    width*height*channels little-endian float64, index c*(W*H) + row*W + col

CFMP1 (pattern sets)::

    CFMP1 <M> <N> <ensemble-tag> <differential 0|1>\\n
    M rows of ceil(N/8) bytes; bit j of row i is pattern value (i, j),
    MSB-first within each byte; trailing pad bits are zero

Measurements are a CSV with header ``index,value`` (``index = c*M + i`` for
multi-channel records) plus a JSON sidecar at ``<csv>.json``. Solver
diagnostics are a CSV with header ``iter,objective,residual``.
"""

from __future__ import annotations

import json
import math
import os
from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeError, UnreadableFileError
from .phantoms import Scene, SpectralCube
from .sensing import ENSEMBLES, MeasurementRecord, NoiseModel, PatternSet

MEASUREMENT_FORMAT = "cfm-measurements-1"


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise UnreadableFileError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _split_header(data: bytes, magic: str) -> tuple[list[str], bytes]:
    nl = data.find(b"\n")
    if nl < 0:
        raise FormatError(f"missing {magic} header line")
    try:
        fields = data[:nl].decode("ascii").split(" ")
    except UnicodeDecodeError as exc:
        raise FormatError("header is not ASCII") from exc
    if not fields or fields[0] != magic:
        raise FormatError(f"expected {magic} header, got {data[:16]!r}")
    return fields[1:], data[nl + 1 :]


def _positive_int(text: str, what: str) -> int:
    try:
        v = int(text)
    except ValueError as exc:
        raise FormatError(f"{what} is not an integer: {text!r}") from exc
    if v <= 0 or str(v) != text:
        raise FormatError(f"{what} must be a positive decimal integer, got {text!r}")
    return v


def encode_cfm1(width: int, height: int, channels: int, values) -> bytes:
    v = np.ascontiguousarray(values, dtype="<f8").ravel()
    if v.size != width * height * channels:
        raise ShapeError("value count does not match CFM1 dimensions")
    return f"CFM1 {width} {height} {channels}\n".encode("ascii") + v.tobytes()


def decode_cfm1(data: bytes) -> tuple[int, int, int, np.ndarray]:
    fields, payload = _split_header(data, "CFM1")
    if len(fields) != 3:
        raise FormatError("CFM1 header needs width, height and channels")
    w, h, c = (_positive_int(f, name) for f, name in zip(fields, ("width", "height", "channels")))
    if len(payload) != 8 * w * h * c:
        raise FormatError(f"CFM1 payload is {len(payload)} bytes, expected {8 * w * h * c}")
    return w, h, c, np.frombuffer(payload, dtype="<f8").astype(np.float64)


def write_cfm1(path, obj: Scene | SpectralCube) -> None:
    channels = obj.channels if isinstance(obj, SpectralCube) else 1
    Path(path).write_bytes(encode_cfm1(obj.width, obj.height, channels, obj.values))


def read_cfm1(path) -> Scene | SpectralCube:
    w, h, c, values = decode_cfm1(_read_bytes(path))
    if c == 1:
        return Scene(w, h, values)
    return SpectralCube(w, h, c, values)


def encode_cfmp1(p: PatternSet) -> bytes:
    header = f"CFMP1 {p.m} {p.n} {p.ensemble} {int(p.differential)}\n".encode("ascii")
    return header + _zero_pad(p.packed, p.n).tobytes()


def _zero_pad(packed: np.ndarray, n: int) -> np.ndarray:
    pad = (-n) % 8
    if pad == 0:
        return packed
    out = packed.copy()
    out[:, -1] &= np.uint8((0xFF << pad) & 0xFF)
    return out


def decode_cfmp1(data: bytes) -> PatternSet:
    fields, payload = _split_header(data, "CFMP1")
    if len(fields) != 4:
        raise FormatError("CFMP1 header needs M, N, ensemble and differential flag")
    m = _positive_int(fields[0], "M")
    n = _positive_int(fields[1], "N")
    tag = fields[2]
    if tag not in ENSEMBLES:
        raise FormatError(f"unknown ensemble tag {tag!r}")
    if fields[3] not in ("0", "1"):
        raise FormatError("differential flag must be 0 or 1")
    row_bytes = (n + 7) // 8
    if len(payload) != m * row_bytes:
        raise FormatError(f"CFMP1 payload is {len(payload)} bytes, expected {m * row_bytes}")
    packed = np.frombuffer(payload, dtype=np.uint8).reshape(m, row_bytes).copy()
    if not np.array_equal(packed, _zero_pad(packed, n)):
        raise FormatError("CFMP1 pad bits must be zero")
    return PatternSet(tag, m, n, packed, fields[3] == "1")


def write_cfmp1(path, p: PatternSet) -> None:
    Path(path).write_bytes(encode_cfmp1(p))


def read_cfmp1(path) -> PatternSet:
    return decode_cfmp1(_read_bytes(path))


def sidecar_path(csv_path) -> Path:
    return Path(str(csv_path) + ".json")


def write_measurements(path, records: MeasurementRecord | list[MeasurementRecord]) -> None:
    """CSV of readings plus a JSON sidecar describing noise and patterns."""
    records = [records] if isinstance(records, MeasurementRecord) else list(records)
    first = records[0]
    lines = ["index,value"]
    for c, rec in enumerate(records):
        if rec.m != first.m:
            raise ShapeError("channels have different measurement counts")
        lines.extend(f"{c * rec.m + i},{float(v)!r}" for i, v in enumerate(rec.y))
    Path(path).write_text("\n".join(lines) + "\n")
    side = {
        "format": MEASUREMENT_FORMAT,
        "channels": len(records),
        "m": first.m,
        "physical_m": first.physical_m,
        "combined": first.combined,
        "noise": first.noise.to_dict(),
        "pattern_hashes": [f"0x{r.patterns_ref:016x}" for r in records],
        "photon_scales": [r.photon_scale for r in records],
    }
    sidecar_path(path).write_text(json.dumps(side, indent=2) + "\n")


def read_measurements(path) -> list[MeasurementRecord]:
    text = _read_bytes(path).decode("ascii", errors="replace").splitlines()
    if not text or text[0].strip() != "index,value":
        raise FormatError("measurement CSV must start with 'index,value'")
    try:
        side = json.loads(_read_bytes(sidecar_path(path)))
    except json.JSONDecodeError as exc:
        raise FormatError(f"bad sidecar JSON: {exc}") from exc
    if side.get("format") != MEASUREMENT_FORMAT:
        raise FormatError("unrecognized measurement sidecar")
    values = []
    for k, line in enumerate(text[1:]):
        if not line.strip():
            continue
        idx, _, val = line.partition(",")
        try:
            if int(idx) != k:
                raise FormatError(f"row {k} has index {idx}")
            values.append(float(val))
        except ValueError as exc:
            raise FormatError(f"unparseable row {line!r}") from exc
    m, channels = int(side["m"]), int(side["channels"])
    if len(values) != m * channels:
        raise ShapeError(f"{len(values)} readings, sidecar promises {m * channels}")
    noise = NoiseModel.from_dict(side["noise"])
    y = np.array(values).reshape(channels, m)
    return [
        MeasurementRecord(
            y=y[c],
            patterns_ref=int(side["pattern_hashes"][c], 16),
            noise=noise,
            combined=bool(side["combined"]),
            m=m,
            physical_m=int(side["physical_m"]),
            photon_scale=side["photon_scales"][c],
            channel=c,
        )
        for c in range(channels)
    ]


def write_diagnostics(path, rows) -> None:
    lines = ["iter,objective,residual"]
    lines.extend(f"{i},{f!r},{r!r}" for i, f, r in rows)
    Path(path).write_text("\n".join(lines) + "\n")


def format_float(v: float) -> str:
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(float(v))


def atomic_write_text(path, text: str) -> None:
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
