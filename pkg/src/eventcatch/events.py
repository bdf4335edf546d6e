"""Event data model, BEHI / event-volume encoders and the BEHI binary format.

Timestamps are integer microseconds everywhere. Events are held column-wise
in numpy arrays; :class:`Event` exists for convenience at the edges (CSV rows,
hand-written tests).
"""

from __future__ import annotations

import csv
import io
import math
import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

__all__ = [
    "Event",
    "SensorGeometry",
    "EventStream",
    "Behi",
    "EventVolume",
    "EventBoundsError",
    "BehiFormatError",
    "DegenerateVolumeError",
    "behi_from_events",
    "behi_update",
    "behi_resize",
    "event_volume_from_events",
    "representation_size_bits",
    "behi_serialize",
    "behi_deserialize",
    "read_events_csv",
    "write_events_csv",
    "BEHI_MAGIC",
    "BEHI_HEADER_SIZE",
]


class EventBoundsError(ValueError):
    """An event lies outside the sensor geometry."""

    def __init__(self, x: int, y: int, geometry: "SensorGeometry"):
        super().__init__(
            f"event at (x={x}, y={y}) outside {geometry.width}x{geometry.height} sensor"
        )
        self.x = x
        self.y = y


class BehiFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class DegenerateVolumeError(ValueError):
    pass


@dataclass(frozen=True)
class SensorGeometry:
    width: int
    height: int

    def __post_init__(self):
        if int(self.width) <= 0 or int(self.height) <= 0:
            raise ValueError(f"sensor geometry must be positive, got {self.width}x{self.height}")

    @property
    def shape(self) -> tuple[int, int]:
        """(rows, cols), i.e. numpy image shape."""
        return (self.height, self.width)

    @property
    def pixels(self) -> int:
        return self.width * self.height


@dataclass(frozen=True)
class Event:
    x: int
    y: int
    t: int
    p: int

    def __post_init__(self):
        if self.p not in (1, -1):
            raise ValueError(f"polarity must be +1 or -1, got {self.p}")
        if self.t < 0:
            raise ValueError(f"timestamp must be non-negative, got {self.t}")


class EventStream:
    """Time-ordered events for one sensor, stored as parallel arrays."""

    __slots__ = ("geometry", "t", "x", "y", "p")

    def __init__(self, geometry: SensorGeometry, t, x, y, p, *, validate: bool = True):
        self.geometry = geometry
        self.t = np.ascontiguousarray(t, dtype=np.int64)
        self.x = np.ascontiguousarray(x, dtype=np.int64)
        self.y = np.ascontiguousarray(y, dtype=np.int64)
        self.p = np.ascontiguousarray(p, dtype=np.int8)
        n = self.t.shape[0]
        if not (self.x.shape == self.y.shape == self.p.shape == (n,)):
            raise ValueError("event columns must be 1-D arrays of equal length")
        if validate and n:
            self._validate()
        for arr in (self.t, self.x, self.y, self.p):
            arr.flags.writeable = False

    def _validate(self):
        g = self.geometry
        bad = (self.x < 0) | (self.x >= g.width) | (self.y < 0) | (self.y >= g.height)
        if bad.any():
            i = int(np.argmax(bad))
            raise EventBoundsError(int(self.x[i]), int(self.y[i]), g)
        if not np.all((self.p == 1) | (self.p == -1)):
            raise ValueError("polarity must be +1 or -1")
        if self.t[0] < 0:
            raise ValueError("timestamps must be non-negative")
        if np.any(np.diff(self.t) < 0):
            raise ValueError("event timestamps must be non-decreasing")

    @classmethod
    def empty(cls, geometry: SensorGeometry) -> "EventStream":
        z = np.zeros(0, dtype=np.int64)
        return cls(geometry, z, z, z, z)

    @classmethod
    def from_events(cls, geometry: SensorGeometry, events: Iterable[Event]) -> "EventStream":
        events = list(events)
        if not events:
            return cls.empty(geometry)
        cols = np.array([(e.t, e.x, e.y, e.p) for e in events], dtype=np.int64)
        return cls(geometry, cols[:, 0], cols[:, 1], cols[:, 2], cols[:, 3])

    @classmethod
    def from_unsorted(cls, geometry: SensorGeometry, t, x, y, p) -> "EventStream":
        t = np.asarray(t, dtype=np.int64)
        order = np.argsort(t, kind="stable")
        return cls(geometry, t[order], np.asarray(x)[order], np.asarray(y)[order], np.asarray(p)[order])

    def __len__(self) -> int:
        return int(self.t.shape[0])

    def __iter__(self):
        for t, x, y, p in zip(self.t.tolist(), self.x.tolist(), self.y.tolist(), self.p.tolist()):
            yield Event(x, y, t, p)

    def __repr__(self):
        return f"EventStream({self.geometry.width}x{self.geometry.height}, n={len(self)})"

    def window(self, t_start: int, t_stop: int) -> "EventStream":
        """Events with t_start <= t < t_stop (a view, no copy)."""
        i0, i1 = np.searchsorted(self.t, [t_start, t_stop], side="left")
        return self._slice(i0, i1)

    def before(self, horizon: int) -> "EventStream":
        i1 = int(np.searchsorted(self.t, horizon, side="left"))
        return self._slice(0, i1)

    def _slice(self, i0, i1) -> "EventStream":
        return EventStream(
            self.geometry, self.t[i0:i1], self.x[i0:i1], self.y[i0:i1], self.p[i0:i1], validate=False
        )

    def merge(self, other: "EventStream") -> "EventStream":
        if other.geometry != self.geometry:
            raise ValueError("cannot merge streams from different sensor geometries")
        return EventStream.from_unsorted(
            self.geometry,
            np.concatenate([self.t, other.t]),
            np.concatenate([self.x, other.x]),
            np.concatenate([self.y, other.y]),
            np.concatenate([self.p, other.p]),
        )

    def concat(self, later: "EventStream") -> "EventStream":
        """Append a stream whose events all come at or after this one's."""
        return EventStream(
            self.geometry,
            np.concatenate([self.t, later.t]),
            np.concatenate([self.x, later.x]),
            np.concatenate([self.y, later.y]),
            np.concatenate([self.p, later.p]),
        )


# --------------------------------------------------------------------------
# BEHI
#
# A Behi is immutable from the outside, but successive updates share one
# pixel buffer so that an update costs O(new events) rather than O(W*H).
# The newest version owns the buffer; an older version keeps the list of
# pixels its successor set (all of which were 0 for it) and rebuilds a
# private copy on first read.


class _Node:
    __slots__ = ("buf", "fresh", "succ")

    def __init__(self, buf=None, fresh=None, succ=None):
        self.buf = buf  # owned flat bool buffer, or None
        self.fresh = fresh  # pixels set by successor (when buf is None)
        self.succ = succ  # successor Behi


_store_lock = threading.RLock()


class Behi:
    """Binary event history image: pixel set iff an event fired there before ``horizon``."""

    __slots__ = ("geometry", "horizon", "_node", "_fresh", "__weakref__")

    def __init__(self, geometry: SensorGeometry, bits, horizon: int):
        bits = np.asarray(bits)
        if bits.shape != geometry.shape:
            raise ValueError(f"bits shape {bits.shape} does not match geometry {geometry.shape}")
        if bits.dtype != np.bool_:
            if not np.all((bits == 0) | (bits == 1)):
                raise ValueError("BEHI cells must be 0 or 1")
        self.geometry = geometry
        self.horizon = int(horizon)
        self._node = _Node(buf=np.array(bits, dtype=np.bool_).ravel())
        self._fresh = np.flatnonzero(self._node.buf)

    @classmethod
    def _from_buffer(cls, geometry, buf, horizon, fresh) -> "Behi":
        obj = cls.__new__(cls)
        obj.geometry = geometry
        obj.horizon = int(horizon)
        obj._node = _Node(buf=buf)
        obj._fresh = fresh
        return obj

    @classmethod
    def zeros(cls, geometry: SensorGeometry, horizon: int = 0) -> "Behi":
        return cls._from_buffer(
            geometry, np.zeros(geometry.pixels, dtype=np.bool_), horizon, np.zeros(0, np.int64)
        )

    def _own_buffer(self) -> np.ndarray:
        # Caller holds _store_lock.
        node = self._node
        if node.buf is not None:
            return node.buf
        chain = []
        cur = self
        while cur._node.buf is None:
            chain.append(cur._node.fresh)
            cur = cur._node.succ
        buf = cur._node.buf.copy()
        for fresh in chain:
            buf[fresh] = False
        self._node = _Node(buf=buf)
        return buf

    @property
    def bits(self) -> np.ndarray:
        """Read-only (H, W) uint8 copy of the image."""
        with _store_lock:
            buf = self._own_buffer()
            out = buf.reshape(self.geometry.shape).astype(np.uint8)
        out.flags.writeable = False
        return out

    @property
    def fresh_pixels(self) -> np.ndarray:
        """Flat indices of pixels first set by the update that produced this image."""
        return self._fresh

    def fresh_mask(self) -> np.ndarray:
        m = np.zeros(self.geometry.pixels, dtype=np.bool_)
        m[self._fresh] = True
        return m.reshape(self.geometry.shape)

    def count(self) -> int:
        with _store_lock:
            return int(np.count_nonzero(self._own_buffer()))

    def __eq__(self, other):
        if not isinstance(other, Behi):
            return NotImplemented
        return (
            self.geometry == other.geometry
            and self.horizon == other.horizon
            and np.array_equal(self.bits, other.bits)
        )

    __hash__ = None

    def __repr__(self):
        return f"Behi({self.geometry.width}x{self.geometry.height}, T={self.horizon}, set={self.count()})"


def behi_from_events(stream: EventStream, horizon: int) -> Behi:
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    g = stream.geometry
    sub = stream.before(horizon)
    buf = np.zeros(g.pixels, dtype=np.bool_)
    buf[sub.y * g.width + sub.x] = True
    return Behi._from_buffer(g, buf, horizon, np.flatnonzero(buf))


def behi_update(image: Behi, new_events: EventStream, new_horizon: int) -> Behi:
    """Fold events from ``[image.horizon, new_horizon)`` into a new image."""
    if new_horizon < image.horizon:
        raise ValueError(
            f"new horizon {new_horizon} precedes current horizon {image.horizon}"
        )
    if new_events.geometry != image.geometry:
        raise ValueError("event stream geometry does not match image")
    t = new_events.t
    if t.shape[0] and (t[0] < image.horizon or t[-1] >= new_horizon):
        raise ValueError(
            f"new events must lie in [{image.horizon}, {new_horizon}), "
            f"got [{int(t[0])}, {int(t[-1])}]"
        )
    idx = new_events.y * image.geometry.width + new_events.x
    with _store_lock:
        buf = image._own_buffer()
        fresh = idx[~buf[idx]]
        buf[fresh] = True
        out = Behi._from_buffer(image.geometry, buf, new_horizon, fresh)
        image._node = _Node(fresh=fresh, succ=out)
    return out


def _pooling_ranges(n_src: int, n_dst: int) -> tuple[np.ndarray, np.ndarray]:
    """Per destination index, source range [lo, hi) it pools over.

    A source cell belongs to the destination cell its centre maps into;
    destinations left empty by upsampling take the source cell under their
    own centre.
    """
    i = np.arange(n_dst + 1, dtype=np.int64)
    # smallest k with (k + 0.5) * n_dst >= i * n_src
    lo = -((-(2 * i * n_src - n_dst)) // (2 * n_dst))
    lo = np.clip(lo, 0, n_src)
    start, stop = lo[:-1].copy(), lo[1:].copy()
    empty = stop <= start
    nn = ((2 * np.arange(n_dst) + 1) * n_src) // (2 * n_dst)
    start[empty] = nn[empty]
    stop[empty] = nn[empty] + 1
    return start, stop


def behi_resize(image: Behi, out_w: int, out_h: int) -> Behi:
    """Resize by max-pooling each destination cell's source footprint."""
    if out_w <= 0 or out_h <= 0:
        raise ValueError("output size must be positive")
    g = image.geometry
    bits = image.bits.astype(np.int64)
    sat = np.zeros((g.height + 1, g.width + 1), dtype=np.int64)
    sat[1:, 1:] = bits.cumsum(0).cumsum(1)
    r0, r1 = _pooling_ranges(g.height, out_h)
    c0, c1 = _pooling_ranges(g.width, out_w)
    box = (
        sat[r1[:, None], c1[None, :]]
        - sat[r0[:, None], c1[None, :]]
        - sat[r1[:, None], c0[None, :]]
        + sat[r0[:, None], c0[None, :]]
    )
    return Behi(SensorGeometry(out_w, out_h), box > 0, image.horizon)


# --------------------------------------------------------------------------
# Event volume


@dataclass(frozen=True, eq=False)
class EventVolume:
    """Events binned into ``bins`` temporal slices per polarity.

    ``data[0]`` accumulates positive events and ``data[1]`` negative ones,
    both non-negative; :attr:`signed` recovers the polarity-weighted form.
    """

    geometry: SensorGeometry
    bins: int
    data: np.ndarray  # (2, bins, H, W) float64
    t_first: int
    t_last: int

    @property
    def signed(self) -> np.ndarray:
        return self.data[0] - self.data[1]

    def channel_mass(self) -> tuple[float, float]:
        return float(self.data[0].sum()), float(self.data[1].sum())


def event_volume_from_events(stream: EventStream, bins: int) -> EventVolume:
    if bins < 2:
        raise ValueError("event volume needs at least two temporal bins")
    if len(stream) < 2:
        raise DegenerateVolumeError("event volume needs at least two events")
    t = stream.t
    t_first, t_last = int(t[0]), int(t[-1])
    if t_last == t_first:
        raise DegenerateVolumeError("all events share one timestamp; time normalisation undefined")
    g = stream.geometry
    tn = (bins - 1) * (t - t_first).astype(np.float64) / float(t_last - t_first)
    lower = np.minimum(np.floor(tn).astype(np.int64), bins - 1)
    frac = tn - lower
    channel = (stream.p < 0).astype(np.int64)
    pix = stream.y * g.width + stream.x
    plane = g.pixels
    base = channel * (bins * plane) + pix
    size = 2 * bins * plane
    flat = np.bincount(base + lower * plane, weights=1.0 - frac, minlength=size)
    upper = frac > 0
    flat += np.bincount(
        base[upper] + (lower[upper] + 1) * plane, weights=frac[upper], minlength=size
    )
    return EventVolume(g, bins, flat.reshape(2, bins, g.height, g.width), t_first, t_last)


def representation_size_bits(kind: str, geometry: SensorGeometry, channels_or_frames: int = 1) -> int:
    """Storage for one input sample.

    ``behi``: W*H; ``event_volume``: C*2*H*W*32 (float32 per polarity/bin);
    ``grayscale_stack``: H*W*N*8.
    """
    w, h = geometry.width, geometry.height
    if kind == "behi":
        return w * h
    if channels_or_frames <= 0:
        raise ValueError("channel / frame count must be positive")
    if kind == "event_volume":
        return channels_or_frames * 2 * h * w * 32
    if kind == "grayscale_stack":
        return h * w * channels_or_frames * 8
    raise ValueError(f"unknown representation kind {kind!r}")


# --------------------------------------------------------------------------
# Binary format: magic, W (u32), H (u32), horizon (i64), all little-endian,
# then row-major bits packed MSB first.

BEHI_MAGIC = b"BEHI"
_HEADER = struct.Struct("<4sIIq")
BEHI_HEADER_SIZE = _HEADER.size


def behi_serialize(image: Behi) -> bytes:
    g = image.geometry
    header = _HEADER.pack(BEHI_MAGIC, g.width, g.height, image.horizon)
    payload = np.packbits(image.bits.ravel(), bitorder="big")
    return header + payload.tobytes()


def behi_deserialize(data: bytes) -> Behi:
    data = bytes(data)
    if len(data) < len(BEHI_MAGIC):
        raise BehiFormatError("truncated header", len(data))
    if data[: len(BEHI_MAGIC)] != BEHI_MAGIC:
        raise BehiFormatError("bad magic", 0)
    if len(data) < BEHI_HEADER_SIZE:
        raise BehiFormatError("truncated header", len(data))
    _, w, h, horizon = _HEADER.unpack_from(data, 0)
    if w == 0 or h == 0:
        raise BehiFormatError("zero image dimension", 4 if w == 0 else 8)
    if horizon < 0:
        raise BehiFormatError("negative horizon", 12)
    need = math.ceil(w * h / 8)
    payload = data[BEHI_HEADER_SIZE:]
    if len(payload) < need:
        raise BehiFormatError(f"truncated payload, expected {need} bytes", len(data))
    if len(payload) > need:
        raise BehiFormatError("trailing bytes after payload", BEHI_HEADER_SIZE + need)
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), count=w * h, bitorder="big")
    g = SensorGeometry(w, h)
    return Behi(g, bits.reshape(g.shape).astype(np.bool_), horizon)


# --------------------------------------------------------------------------
# CSV interchange: header t_us,x,y,p


def read_events_csv(source, geometry: SensorGeometry) -> EventStream:
    if isinstance(source, (str, Path)):
        text = Path(source).read_text()
    else:
        text = source.read()
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["t_us", "x", "y", "p"]:
        raise ValueError("event CSV must start with header t_us,x,y,p")
    rows = [r for r in reader if r]
    if not rows:
        return EventStream.empty(geometry)
    arr = np.array(rows, dtype=np.int64)
    return EventStream(geometry, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])


def write_events_csv(stream: EventStream, target) -> None:
    buf = io.StringIO()
    buf.write("t_us,x,y,p\n")
    for t, x, y, p in zip(stream.t.tolist(), stream.x.tolist(), stream.y.tolist(), stream.p.tolist()):
        buf.write(f"{t},{x},{y},{p}\n")
    if isinstance(target, (str, Path)):
        Path(target).write_text(buf.getvalue())
    else:
        target.write(buf.getvalue())


