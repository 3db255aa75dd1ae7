"""Streaming blink detection.

Pipeline per sample: low-pass -> difference -> robust stats update -> window
segmentation -> in-window positive peak capture -> cross-window dedup. Blinks
are keyed on the closing-phase positive peak of the variation stream only;
the opening-phase negative peak is deliberately ignored.

``BlinkDetector`` is the streaming form (one instance per stream, single
writer). ``detect_offline`` runs the same rules over whole arrays through the
batch kernels and emits an identical event set for any stream, provided the
streaming side is drained with ``finish()``.
"""

from __future__ import annotations

import math
from bisect import bisect_left, insort
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .signal_core import (DEFAULT_ALPHA, DEFAULT_HOP_MS, DEFAULT_RATE_HZ,
                          DEFAULT_WINDOW_MS, GAP_FACTOR, DiffState,
                          FilterState, Sample, Window, WindowBuffer,
                          diff_step, is_gap, lowpass_step, nominal_period_ms)

DEFAULT_K = 6.0
DEFAULT_STATS_WINDOW_MS = 5000
DEFAULT_THETA_MIN = 1.0
DEFAULT_REFRACTORY_MS = 200
DEFAULT_DEDUP_MS = 100


@dataclass
class DetectorConfig:
    """Pipeline parameters. ``threshold_mode`` is "fixed" or "adaptive".

    Fixed mode requires ``theta`` (counts). Adaptive mode tracks
    median(|v|) + k * MAD(|v|) over the trailing ``stats_window_ms``, floored
    at ``theta_min``; until the stats buffer holds a value, ``fallback_theta``
    applies (infinite by default, i.e. no detections while warming up).
    """

    window_len_ms: int = DEFAULT_WINDOW_MS
    hop_ms: int = DEFAULT_HOP_MS
    alpha: float = DEFAULT_ALPHA
    threshold_mode: str = "adaptive"
    theta: float | None = None
    k: float = DEFAULT_K
    stats_window_ms: int = DEFAULT_STATS_WINDOW_MS
    theta_min: float = DEFAULT_THETA_MIN
    fallback_theta: float = math.inf
    refractory_ms: int = DEFAULT_REFRACTORY_MS
    dedup_merge_ms: int = DEFAULT_DEDUP_MS

    def __post_init__(self):
        if self.threshold_mode not in ("fixed", "adaptive"):
            raise ValueError(f"unknown threshold_mode: {self.threshold_mode!r}")
        if self.hop_ms > self.window_len_ms:
            raise ValueError("hop_ms must not exceed window_len_ms")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.threshold_mode == "fixed":
            if self.theta is None or not self.theta > 0:
                raise ValueError("fixed mode requires theta > 0")
        if not self.k > 0:
            raise ValueError("k must be positive")
        if self.stats_window_ms <= 0:
            raise ValueError("stats_window_ms must be positive")
        if self.refractory_ms < 0 or self.dedup_merge_ms < 0:
            raise ValueError("refractory_ms and dedup_merge_ms must be >= 0")


@dataclass
class DetectedBlink:
    """A detected blink: time/height of the closing-phase positive peak."""

    peak_t_ms: int
    peak_v: float
    theta_at_detect: float


class RobustStats:
    """Ring buffer of recent |variation| with median/MAD on demand."""

    def __init__(self, stats_window_ms: int, rate_hz: float):
        self.maxlen = max(1, round(stats_window_ms * rate_hz / 1000.0))
        self._buf: deque[float] = deque(maxlen=self.maxlen)

    def push(self, abs_v: float) -> None:
        self._buf.append(abs_v)

    def __len__(self) -> int:
        return len(self._buf)

    def median_mad(self) -> tuple[float, float] | None:
        """Current (median, MAD) of the buffer, or None while empty."""
        if not self._buf:
            return None
        a = np.fromiter(self._buf, np.float64, len(self._buf))
        med = float(np.median(a))
        mad = float(np.median(np.abs(a - med)))
        return med, mad


def adaptive_threshold(stats: RobustStats, k: float,
                       theta_min: float = DEFAULT_THETA_MIN) -> float | None:
    """median + k * MAD of recent |variation|, floored at theta_min.

    Returns None while the stats buffer is still empty (warming up); callers
    fall back to their configured warm-up threshold.
    """
    mm = stats.median_mad()
    if mm is None:
        return None
    med, mad = mm
    return max(theta_min, med + k * mad)


def detect_in_window(window: Window, theta: float,
                     refractory_ms: int = DEFAULT_REFRACTORY_MS) -> list[DetectedBlink]:
    """Candidate positive peaks in one window.

    A candidate is a local maximum >= theta; plateau ties break toward the
    earlier sample. Candidates closer than refractory_ms to the previously
    kept one are suppressed. Negative peaks are never returned.
    """
    if not theta > 0:
        raise ValueError(f"theta must be positive, got {theta}")
    vals = window.values
    n = len(vals)
    out: list[DetectedBlink] = []
    last_kept: int | None = None
    for i in range(n):
        t, x = vals[i]
        if x < theta:
            continue
        if i > 0 and x <= vals[i - 1][1]:
            continue
        if i < n - 1 and x < vals[i + 1][1]:
            continue
        if last_kept is not None and (t - last_kept) < refractory_ms:
            continue
        last_kept = t
        out.append(DetectedBlink(peak_t_ms=t, peak_v=x, theta_at_detect=theta))
    return out


def dedup_merge(candidates: list[DetectedBlink], emitted_history: list[int],
                dedup_merge_ms: int = DEFAULT_DEDUP_MS) -> list[DetectedBlink]:
    """Drop candidates within dedup_merge_ms of any already-emitted peak.

    Half-overlapping windows see each impulse twice; this keeps one event per
    physical peak. ``emitted_history`` is a sorted list of emitted peak times
    and is extended in place with the survivors.
    """
    survivors: list[DetectedBlink] = []
    for cand in sorted(candidates, key=lambda c: c.peak_t_ms):
        t = cand.peak_t_ms
        pos = bisect_left(emitted_history, t)
        if pos < len(emitted_history) and emitted_history[pos] - t <= dedup_merge_ms:
            continue
        if pos > 0 and t - emitted_history[pos - 1] <= dedup_merge_ms:
            continue
        emitted_history.insert(pos, t)
        survivors.append(cand)
    return survivors


class BlinkDetector:
    """Streaming detector state: one instance per sample stream.

    ``process`` accepts samples with strictly increasing timestamps and
    returns the blinks emitted by any window the sample completed. Dropouts
    longer than 20% over the nominal period flush the pending window and
    restart the filter
    (a gap is not a blink edge). Call ``finish()`` at stream end to flush the
    final partial window. A rejected sample (non-finite value, stale
    timestamp) raises ValueError and leaves the state untouched.
    """

    def __init__(self, config: DetectorConfig | None = None,
                 rate_hz: float = DEFAULT_RATE_HZ):
        self.config = config or DetectorConfig()
        self.rate_hz = rate_hz
        self._filter = FilterState(alpha=self.config.alpha)
        self._diff = DiffState()
        self._windows = self._new_window_buffer()
        self.stats = RobustStats(self.config.stats_window_ms, rate_hz)
        self._theta_fixed = self.config.theta
        self._last_theta: float | None = None
        self._last_t: int | None = None
        self._emitted_times: list[int] = []
        self.events: list[DetectedBlink] = []  # all emitted, sorted by time
        self.last_v: float | None = None  # variation of the newest sample
        self._finished = False

    def _new_window_buffer(self) -> WindowBuffer:
        return WindowBuffer(self.config.window_len_ms, self.config.hop_ms,
                            self.rate_hz)

    @property
    def current_theta(self) -> float | None:
        """Threshold in effect: the fixed value, or the last adaptive one."""
        if self.config.threshold_mode == "fixed":
            return self._theta_fixed
        return self._last_theta

    def set_theta(self, theta: float) -> None:
        """Replace the fixed threshold (rejected in adaptive mode)."""
        if self.config.threshold_mode != "fixed":
            raise ValueError("set_theta: detector is in adaptive mode")
        if not theta > 0:
            raise ValueError(f"set_theta: theta must be positive, got {theta}")
        self._theta_fixed = theta

    def _window_theta(self) -> float:
        if self.config.threshold_mode == "fixed":
            return self._theta_fixed
        theta = adaptive_threshold(self.stats, self.config.k,
                                   self.config.theta_min)
        if theta is None:
            theta = self.config.fallback_theta
        return theta

    def _detect(self, windows: list[Window]) -> list[DetectedBlink]:
        emitted: list[DetectedBlink] = []
        for w in windows:
            theta = self._window_theta()
            if not math.isfinite(theta):
                continue  # warming up
            self._last_theta = theta
            cands = detect_in_window(w, theta, self.config.refractory_ms)
            survivors = dedup_merge(cands, self._emitted_times,
                                    self.config.dedup_merge_ms)
            for ev in survivors:
                insort(self.events, ev, key=lambda e: e.peak_t_ms)
            emitted.extend(survivors)
        return emitted

    def process(self, sample: Sample) -> list[DetectedBlink]:
        """Feed one sample; return blinks emitted by completed windows."""
        if self._finished:
            raise RuntimeError("detector already finished")
        t, x = sample.t_ms, sample.raw
        if self._last_t is not None and t <= self._last_t:
            raise ValueError(
                f"out-of-order timestamp {t} (previous was {self._last_t})")
        if not math.isfinite(x):
            raise ValueError(f"non-finite sample at t={t}: {x!r}")

        emitted: list[DetectedBlink] = []
        if self._last_t is not None and is_gap(self._last_t, t, self.rate_hz):
            emitted.extend(self._detect(self._windows.flush()))
            self._filter = FilterState(alpha=self.config.alpha)
            self._diff = DiffState()
            self._windows = self._new_window_buffer()
        self._last_t = t

        y = lowpass_step(self._filter, x)
        v = diff_step(self._diff, y)
        self.last_v = v
        if v is None:
            return emitted
        self.stats.push(abs(v))
        emitted.extend(self._detect(self._windows.push(t, v)))
        return emitted

    def finish(self) -> list[DetectedBlink]:
        """Flush the final partial window at end of stream."""
        if self._finished:
            return []
        self._finished = True
        return self._detect(self._windows.flush())


def _window_plan(seg_bounds, win_n: int, hop_n: int):
    """Emission-ordered (start, end) v-index ranges, full windows then the
    per-segment flush window, matching the streaming WindowBuffer."""
    starts, ends = [], []
    for s, e in seg_bounds:
        m = e - s
        if m <= 0:
            continue
        n_full = 0
        if m >= win_n:
            n_full = (m - win_n) // hop_n + 1
        for k in range(n_full):
            starts.append(s + k * hop_n)
            ends.append(s + k * hop_n + win_n)
        covered = (n_full - 1) * hop_n + win_n if n_full else 0
        tail_start = n_full * hop_n
        if m > covered and m > tail_start:
            starts.append(s + tail_start)
            ends.append(e)
    return starts, ends


def detect_offline(t_ms, raw, config: DetectorConfig | None = None,
                   rate_hz: float = DEFAULT_RATE_HZ, trace: dict | None = None):
    """Run the full detection pipeline over whole arrays (batch fast path).

    Emits the same events as a BlinkDetector fed sample by sample and then
    drained with finish(). Events are returned sorted by peak time. Pass a
    dict as ``trace`` to receive the intermediate streams (filtered signal,
    variation, per-window thresholds) for plotting.
    """
    config = config or DetectorConfig()
    t_ms = np.asarray(t_ms, np.int64)
    raw = np.asarray(raw, np.float64)
    if t_ms.size != raw.size:
        raise ValueError("t_ms and raw must have equal length")
    if t_ms.size:
        bad = np.nonzero(np.diff(t_ms) <= 0)[0]
        if bad.size:
            raise ValueError(
                f"out-of-order timestamp {t_ms[bad[0] + 1]} at record {bad[0] + 1}")
        if not np.isfinite(raw).all():
            i = int(np.nonzero(~np.isfinite(raw))[0][0])
            raise ValueError(f"non-finite sample at t={t_ms[i]}: {raw[i]!r}")

    gap_ms = GAP_FACTOR * nominal_period_ms(rate_hz)
    vt, v, seg_bounds = kernels.ema_diff(t_ms, raw, config.alpha, gap_ms)

    win_n = max(1, round(config.window_len_ms * rate_hz / 1000.0))
    hop_n = max(1, round(config.hop_ms * rate_hz / 1000.0))
    starts, ends = _window_plan(seg_bounds, win_n, hop_n)

    if config.threshold_mode == "fixed":
        thetas = np.full(len(starts), float(config.theta))
    else:
        stats_n = max(1, round(config.stats_window_ms * rate_hz / 1000.0))
        abs_v = np.abs(v)
        thetas = np.empty(len(starts))
        for i, e in enumerate(ends):
            a = abs_v[max(0, e - stats_n):e]
            med = float(np.median(a))
            mad = float(np.median(np.abs(a - med)))
            thetas[i] = max(config.theta_min, med + config.k * mad)

    idx, theta_at = kernels.scan_windows(vt, v, starts, ends, thetas,
                                         config.refractory_ms,
                                         config.dedup_merge_ms)
    events = [DetectedBlink(int(vt[i]), float(v[i]), float(th))
              for i, th in zip(idx, theta_at)]
    events.sort(key=lambda e: e.peak_t_ms)
    if trace is not None:
        trace["vt"] = vt
        trace["v"] = v
        trace["window_end_t"] = np.array(
            [int(vt[e - 1]) for e in ends], np.int64)
        trace["window_theta"] = thetas
    return events
