"""Event streams, first-positive-event (FPE) maps, and timestamp physics.

An event camera pixel fires its first positive event when the integrated
photoelectric energy reaches the capacitor threshold, so the FPE timestamp
is inversely proportional to illuminance:

    eta * E * A * t_fpe = C * U_thd^2 / 2   =>   E = k / t_fpe,
    k = C * U_thd^2 / (2 * eta * A)

FPE maps store the timestamp in microseconds per pixel with NaN marking
pixels that never fired (MISSING).
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

from .raster import LinearRaster

MISSING = np.nan

EVTM_MAGIC = b"EVTM"
FPE1_MAGIC = b"FPE1"

#: luminance floor used when inverting E -> t to keep timestamps finite
DEFAULT_EPS_E = 1e-4


@dataclass(frozen=True)
class EventStream:
    """Unordered list of (x, y, t, p) events from a sensor of known geometry."""

    width: int
    height: int
    x: np.ndarray  # int, pixel column
    y: np.ndarray  # int, pixel row
    t: np.ndarray  # float, microseconds >= 0
    p: np.ndarray  # int, polarity in {+1, -1}

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.int64)
        y = np.asarray(self.y, dtype=np.int64)
        t = np.asarray(self.t, dtype=np.float64)
        p = np.asarray(self.p, dtype=np.int8)
        n = len(x)
        if not (len(y) == len(t) == len(p) == n):
            raise ValueError("event field arrays must have equal length")
        if n:
            if x.min() < 0 or x.max() >= self.width:
                raise ValueError("event x coordinate out of sensor bounds")
            if y.min() < 0 or y.max() >= self.height:
                raise ValueError("event y coordinate out of sensor bounds")
            if not np.all(np.isfinite(t)) or t.min() < 0:
                raise ValueError("event timestamps must be finite and non-negative")
            if not np.all(np.isin(p, (-1, 1))):
                raise ValueError("event polarity must be +1 or -1")
        for name, arr in (("x", x), ("y", y), ("t", t), ("p", p)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.x)


@dataclass(frozen=True)
class FpeMap:
    """Per-pixel first-positive-event timestamp raster; NaN = MISSING."""

    t_fpe: np.ndarray  # (h, w) float, microseconds

    def __post_init__(self):
        t = np.ascontiguousarray(self.t_fpe, dtype=np.float64)
        if t.ndim != 2:
            raise ValueError(f"FPE map must be 2-D, got shape {t.shape}")
        valid = t[~np.isnan(t)]
        if valid.size and (np.any(~np.isfinite(valid)) or valid.min() <= 0):
            raise ValueError("non-missing FPE timestamps must be finite and > 0")
        t.setflags(write=False)
        object.__setattr__(self, "t_fpe", t)

    @property
    def height(self) -> int:
        return self.t_fpe.shape[0]

    @property
    def width(self) -> int:
        return self.t_fpe.shape[1]

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.t_fpe)


@dataclass(frozen=True)
class IlluminanceMap:
    """Per-pixel illuminance in arbitrary linear units >= 0; NaN = MISSING."""

    E: np.ndarray  # (h, w) float

    def __post_init__(self):
        e = np.ascontiguousarray(self.E, dtype=np.float64)
        if e.ndim != 2:
            raise ValueError(f"illuminance map must be 2-D, got shape {e.shape}")
        valid = e[~np.isnan(e)]
        if valid.size and (np.any(~np.isfinite(valid)) or valid.min() < 0):
            raise ValueError("non-missing illuminance must be finite and >= 0")
        e.setflags(write=False)
        object.__setattr__(self, "E", e)

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.E)


@dataclass(frozen=True)
class SensorConstants:
    """Physical pixel constants; k = C * U_thd^2 / (2 * eta * A)."""

    eta: float = 1.0  # photoelectric conversion efficiency
    A: float = 1.0  # photosensitive area, m^2
    C: float = 2.0  # pixel capacitance, F
    U_thd: float = 1.0  # threshold voltage, V

    def __post_init__(self):
        for name in ("eta", "A", "C", "U_thd"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"sensor constant {name} must be > 0, got {v}")

    @property
    def k(self) -> float:
        return self.C * self.U_thd**2 / (2.0 * self.eta * self.A)


def extract_fpe(s: EventStream) -> FpeMap:
    """Per-pixel minimum timestamp over positive-polarity events."""
    t_fpe = np.full((s.height, s.width), np.inf)
    pos = s.p == 1
    np.minimum.at(t_fpe, (s.y[pos], s.x[pos]), s.t[pos])
    t_fpe[~np.isfinite(t_fpe)] = MISSING
    # a positive event at t=0 carries no energy information; treat as missing
    t_fpe[t_fpe == 0.0] = MISSING
    return FpeMap(t_fpe)


def illuminance_from_fpe(m: FpeMap, k: float) -> IlluminanceMap:
    """E = k / t_fpe; MISSING propagates."""
    if not (np.isfinite(k) and k > 0):
        raise ValueError(f"k must be > 0, got {k}")
    return IlluminanceMap(k / m.t_fpe)


def fpe_from_illuminance(E: IlluminanceMap, k: float, eps_E: float = DEFAULT_EPS_E) -> FpeMap:
    """t_fpe = k / max(E, eps_E); MISSING propagates."""
    if not (np.isfinite(k) and k > 0):
        raise ValueError(f"k must be > 0, got {k}")
    if not (np.isfinite(eps_E) and eps_E > 0):
        raise ValueError(f"eps_E must be > 0, got {eps_E}")
    return FpeMap(k / np.maximum(E.E, eps_E))


def simulate_fpe_map(
    gt: LinearRaster,
    sensor: SensorConstants,
    thresholds: np.ndarray,
    eps_E: float = DEFAULT_EPS_E,
) -> FpeMap:
    """Simulate FPE timestamps for a step shutter opening over a static scene.

    t_fpe(x, y) = k * c(x, y) / max(L(x, y), eps_E), with L the scene-linear
    luminance of `gt` and c the per-pixel contrast threshold.
    """
    L = gt.luminance()
    c = np.asarray(thresholds, dtype=np.float64)
    if c.shape != L.shape:
        raise ValueError(f"threshold field shape {c.shape} != image shape {L.shape}")
    if not np.all(np.isfinite(c)) or c.min() <= 0:
        raise ValueError("thresholds must be finite and > 0")
    return FpeMap(sensor.k * c / np.maximum(L, eps_E))


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

_EVTM_HEADER = struct.Struct("<4sHHQ")
_EVTM_RECORD = struct.Struct("<HHbBI")
_FPE1_HEADER = struct.Struct("<4sHH")


def save_events(s: EventStream, path) -> None:
    """Write an EVTM v1 binary event file (timestamps truncated to whole us)."""
    with open(path, "wb") as f:
        f.write(_EVTM_HEADER.pack(EVTM_MAGIC, s.width, s.height, len(s)))
        t_us = s.t.astype(np.uint32)
        for i in range(len(s)):
            f.write(_EVTM_RECORD.pack(int(s.x[i]), int(s.y[i]), int(s.p[i]), 0, int(t_us[i])))


def load_events(path) -> EventStream:
    """Read an EVTM v1 binary event file, or a CSV with header x,y,t,p."""
    with open(path, "rb") as f:
        head = f.read(4)
        if head != EVTM_MAGIC:
            return _load_events_csv(path)
        rest = f.read(_EVTM_HEADER.size - 4)
        if len(rest) != _EVTM_HEADER.size - 4:
            raise ValueError(f"truncated EVTM header in {path}")
        width, height, count = struct.unpack("<HHQ", rest)
        raw = f.read()
    if len(raw) != count * _EVTM_RECORD.size:
        raise ValueError(f"EVTM payload size mismatch in {path}")
    rec = np.frombuffer(
        raw,
        dtype=np.dtype([("x", "<u2"), ("y", "<u2"), ("p", "i1"), ("pad", "u1"), ("t", "<u4")]),
    )
    return EventStream(
        width=width,
        height=height,
        x=rec["x"].astype(np.int64),
        y=rec["y"].astype(np.int64),
        t=rec["t"].astype(np.float64),
        p=rec["p"].astype(np.int8),
    )


def _load_events_csv(path) -> EventStream:
    xs, ys, ts, ps = [], [], [], []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or set(reader.fieldnames) != {"x", "y", "t", "p"}:
            raise ValueError(f"{path}: not an EVTM file and CSV header is not x,y,t,p")
        for row in reader:
            xs.append(int(row["x"]))
            ys.append(int(row["y"]))
            ts.append(float(row["t"]))
            ps.append(int(row["p"]))
    width = max(xs) + 1 if xs else 1
    height = max(ys) + 1 if ys else 1
    return EventStream(width=width, height=height, x=np.array(xs, dtype=np.int64),
                       y=np.array(ys, dtype=np.int64), t=np.array(ts), p=np.array(ps, dtype=np.int8))


def save_fpe(m: FpeMap, path) -> None:
    """Write an FPE1 binary map (row-major float32, NaN = MISSING)."""
    with open(path, "wb") as f:
        f.write(_FPE1_HEADER.pack(FPE1_MAGIC, m.width, m.height))
        f.write(m.t_fpe.astype("<f4").tobytes())


def load_fpe(path) -> FpeMap:
    with open(path, "rb") as f:
        head = f.read(_FPE1_HEADER.size)
        if len(head) != _FPE1_HEADER.size:
            raise ValueError(f"truncated FPE1 header in {path}")
        magic, width, height = _FPE1_HEADER.unpack(head)
        if magic != FPE1_MAGIC:
            raise ValueError(f"{path} is not an FPE1 file")
        raw = f.read()
    if len(raw) != width * height * 4:
        raise ValueError(f"FPE1 payload size mismatch in {path}")
    t = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(height, width)
    return FpeMap(t)
