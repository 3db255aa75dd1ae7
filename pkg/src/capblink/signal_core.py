"""Streaming primitives of the blink detection pipeline.

Three small state machines operate per sample, in order:

  lowpass_step   single-pole exponential smoothing of the raw counter signal
  diff_step      first difference of consecutive filtered samples ("variation")
  window_push    segmentation of the variation stream into half-overlapping
                 windows for peak detection

All state objects are plain values under a single-writer contract: they may
be handed between threads, but never mutated concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

DEFAULT_RATE_HZ = 60.0
DEFAULT_ALPHA = 0.57  # ~8 Hz cutoff at 60 Hz sampling; blink energy sits well below
DEFAULT_WINDOW_MS = 1000
DEFAULT_HOP_MS = 500

# Inter-sample jitter up to 20% of the nominal period is tolerated; anything
# larger is treated as a dropout, not a signal edge.
GAP_FACTOR = 1.2


@dataclass
class Sample:
    """One timestamped sensor reading, in counter counts."""

    t_ms: int
    raw: float


@dataclass
class FilterState:
    """Single-pole low-pass state. ``y_prev`` is None before the first sample."""

    alpha: float = DEFAULT_ALPHA
    y_prev: float | None = None

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")


@dataclass
class DiffState:
    """Differencing state: the previous filtered value, None before the first."""

    x_prev: float | None = None


def lowpass_step(state: FilterState, x: float) -> float:
    """Advance the low-pass filter by one sample and return the output.

    The first sample passes through unchanged, so the DC gain is exactly 1.
    Mutates ``state`` in place.
    """
    if not math.isfinite(x):
        raise ValueError(f"non-finite filter input: {x!r}")
    if state.y_prev is None:
        y = x
    else:
        y = state.alpha * x + (1.0 - state.alpha) * state.y_prev
    state.y_prev = y
    return y


def diff_step(state: DiffState, x_f: float) -> float | None:
    """Return the variation (difference to the previous filtered value).

    Yields None on the first call; mutates ``state`` in place. Differencing
    removes any constant offset, so baseline drift cancels here.
    """
    if not math.isfinite(x_f):
        raise ValueError(f"non-finite variation input: {x_f!r}")
    if state.x_prev is None:
        state.x_prev = x_f
        return None
    v = x_f - state.x_prev
    state.x_prev = x_f
    return v


def nominal_period_ms(rate_hz: float) -> float:
    return 1000.0 / rate_hz


def is_gap(prev_t_ms: int, t_ms: int, rate_hz: float) -> bool:
    """True when the step from prev_t_ms to t_ms exceeds jitter tolerance."""
    return (t_ms - prev_t_ms) > GAP_FACTOR * nominal_period_ms(rate_hz)


@dataclass
class Window:
    """One emitted analysis window over the variation stream.

    ``end_ms - start_ms`` equals the configured window length; a window
    flushed at a stream end or at a dropout may hold fewer samples than a
    steady-state window.
    """

    start_ms: int
    end_ms: int
    values: list[tuple[int, float]]


class WindowBuffer:
    """Splits a variation stream into fixed-length, half-overlapping windows.

    Window and hop sizes are given in milliseconds and converted to sample
    counts at the stream's nominal rate, so a window is emitted every time a
    full hop of samples has arrived. With 1000 ms windows, 500 ms hop and
    60 Hz sampling each window holds 60 samples and shares 30 with each
    neighbor; N pushed samples therefore emit floor((N - 60) / 30) + 1
    windows. ``flush()`` emits the pending partial window, if any.
    """

    def __init__(self, window_len_ms: int = DEFAULT_WINDOW_MS,
                 hop_ms: int = DEFAULT_HOP_MS, rate_hz: float = DEFAULT_RATE_HZ):
        if hop_ms > window_len_ms:
            raise ValueError(f"hop_ms {hop_ms} exceeds window_len_ms {window_len_ms}")
        if window_len_ms <= 0 or hop_ms <= 0:
            raise ValueError("window_len_ms and hop_ms must be positive")
        self.window_len_ms = window_len_ms
        self.hop_ms = hop_ms
        self.rate_hz = rate_hz
        self.win_n = max(1, round(window_len_ms * rate_hz / 1000.0))
        self.hop_n = max(1, round(hop_ms * rate_hz / 1000.0))
        self._values: list[tuple[int, float]] = []  # trailing win_n samples
        self._n_pushed = 0
        self._n_windows = 0
        self._flushed_at = -1
        self._last_t: int | None = None

    def push(self, t_ms: int, v: float) -> list[Window]:
        """Append one variation sample; return any window completed by it."""
        if self._last_t is not None and t_ms <= self._last_t:
            raise ValueError(
                f"out-of-order timestamp {t_ms} (previous was {self._last_t})")
        self._last_t = t_ms
        self._values.append((t_ms, v))
        if len(self._values) > self.win_n:
            del self._values[0]
        self._n_pushed += 1
        filled = self._n_pushed - self.win_n
        if filled >= 0 and filled % self.hop_n == 0:
            self._n_windows += 1
            return [self._make_window(list(self._values))]
        return []

    def flush(self) -> list[Window]:
        """Emit the pending partial window covering samples not yet windowed."""
        if self._n_pushed == self._flushed_at:
            return []
        self._flushed_at = self._n_pushed
        tail_start = self._n_windows * self.hop_n
        covered = 0
        if self._n_windows > 0:
            covered = (self._n_windows - 1) * self.hop_n + self.win_n
        if self._n_pushed <= covered or self._n_pushed <= tail_start:
            return []
        take = self._n_pushed - tail_start
        return [self._make_window(list(self._values[-take:]))]

    def _make_window(self, values: list[tuple[int, float]]) -> Window:
        start = values[0][0]
        return Window(start_ms=start, end_ms=start + self.window_len_ms,
                      values=values)
