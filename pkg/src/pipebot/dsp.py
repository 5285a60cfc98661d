"""Eddy-current signal chain: lock-in demodulation, modulus, moving average, events."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, BlockAlignmentError, ParameterError
from .sensors import RawECSignal


@dataclass(frozen=True, eq=False)
class IQStream:
    t_us: np.ndarray
    i: np.ndarray
    q: np.ndarray
    demod_freq: float

    def __post_init__(self):
        if np.any(np.diff(self.t_us) <= 0):
            raise ValueError("IQ timestamps must be strictly increasing")

    @property
    def complex(self) -> np.ndarray:
        # phase convention: A sin(wt + phi) -> i + jq = A e^{j phi}
        return self.i + 1j * self.q

    @classmethod
    def from_complex(cls, t_us, values, demod_freq) -> "IQStream":
        values = np.asarray(values)
        return cls(np.asarray(t_us), values.real.copy(), values.imag.copy(), demod_freq)

    def __len__(self):
        return self.t_us.size


@dataclass(frozen=True, eq=False)
class Trace:
    """Real-valued stream with microsecond timestamps."""

    t_us: np.ndarray
    values: np.ndarray

    def __len__(self):
        return self.t_us.size


@dataclass(frozen=True)
class Event:
    t_us: int
    kind: str  # rising | falling | peak
    value: float


def lock_in_demodulate(raw: RawECSignal, f_demod: float | None = None, block: int = 40) -> IQStream:
    """Block-integrating lock-in.

    Each block of ``block`` samples must span a whole number of periods; the
    reference is ``sin``/``cos`` of absolute time so phase is preserved
    across blocks. Trailing samples that do not fill a block are dropped.
    """
    if f_demod is None:
        f_demod = raw.excitation_freq
    periods = block * f_demod / raw.sample_rate
    if block < 1 or abs(periods - round(periods)) > 1e-9 or round(periods) < 1:
        raise BlockAlignmentError(
            f"block of {block} samples spans {periods:g} periods of {f_demod} Hz"
        )
    nb = raw.samples.size // block
    n = nb * block
    t = raw.t_seconds[:n]
    s = raw.samples[:n]
    w = 2.0 * np.pi * f_demod * t
    i = (2.0 / block) * (s * np.sin(w)).reshape(nb, block).sum(axis=1)
    q = (2.0 / block) * (s * np.cos(w)).reshape(nb, block).sum(axis=1)
    t_block = raw.t_us[:n].reshape(nb, block)
    centers = np.rint((t_block[:, 0] + t_block[:, -1]) / 2.0).astype(np.int64)
    return IQStream(centers, i, q, f_demod)


def modulus(stream: IQStream) -> Trace:
    return Trace(stream.t_us, np.hypot(stream.i, stream.q))


def moving_average(stream, window: int = 15):
    """Causal mean of the last ``window`` samples; warm-up averages the available prefix.

    Accepts a :class:`Trace` (returns a Trace with unchanged timestamps) or a
    plain array.
    """
    if window < 1:
        raise ParameterError("moving-average window must be >= 1")
    values = stream.values if isinstance(stream, Trace) else np.asarray(stream, dtype=float)
    n = values.size
    sums = np.convolve(values, np.ones(window))[:n]
    counts = np.minimum(np.arange(1, n + 1), window)
    out = sums / counts
    if isinstance(stream, Trace):
        return Trace(stream.t_us, out)
    return out


def differential(stream_a: IQStream, stream_b: IQStream) -> IQStream:
    if stream_a.t_us.shape != stream_b.t_us.shape or np.any(stream_a.t_us != stream_b.t_us):
        raise AlignmentError("differential needs identically timestamped streams")
    return IQStream(
        stream_a.t_us, stream_a.i - stream_b.i, stream_a.q - stream_b.q, stream_a.demod_freq
    )


def detect_events(stream: Trace, threshold: float, hysteresis: float = 0.0) -> list[Event]:
    """Schmitt-trigger event detection.

    Rising when the value reaches ``threshold``, falling when it drops below
    ``threshold - hysteresis``; a peak event marks the maximum in between.
    A stream that ends while high yields rising and peak only.
    """
    if not threshold > hysteresis >= 0:
        raise ParameterError("need threshold > hysteresis >= 0")
    t, v = stream.t_us, stream.values
    low = threshold - hysteresis
    events: list[Event] = []
    high = False
    start = 0
    for k in range(v.size):
        if not high and v[k] >= threshold:
            high = True
            start = k
            events.append(Event(int(t[k]), "rising", float(v[k])))
        elif high and v[k] < low:
            high = False
            p = start + int(np.argmax(v[start:k]))
            events.append(Event(int(t[p]), "peak", float(v[p])))
            events.append(Event(int(t[k]), "falling", float(v[k])))
    if high:
        p = start + int(np.argmax(v[start:]))
        events.append(Event(int(t[p]), "peak", float(v[p])))
    return events


def refine_peak(points) -> float:
    """Vertex of the parabola through three (x, value) points around a maximum."""
    (x0, y0), (x1, y1), (x2, y2) = [(float(a), float(b)) for a, b in points[:3]]
    denom = (x0 - x1) * (x0 - x2) * (x1 - x2)
    if denom == 0:
        return x1
    a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / denom
    b = (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / denom
    if abs(a) < 1e-15 * max(abs(y0), abs(y1), abs(y2), 1.0):
        return x1
    return -b / (2.0 * a)
