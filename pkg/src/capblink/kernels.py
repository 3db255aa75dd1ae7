"""Batch kernels for offline/file detection.

The hot inner loops (sequential low-pass + differencing, and the windowed
peak scan with refractory and cross-window dedup) are compiled with numba.
Setting ``CAPBLINK_NO_NUMBA=1`` in the environment selects the pure-numpy
fallback path instead; both paths produce identical results and are compared
by ``benchmarks/bench_kernels.py``.

All kernels operate on the variation stream conventions used by the
streaming detector, so batch and streaming detection emit identical events.
"""

from __future__ import annotations

import bisect
import os

import numpy as np
from scipy.signal import lfilter

NUMBA_DISABLED = os.environ.get("CAPBLINK_NO_NUMBA", "") not in ("", "0")

if not NUMBA_DISABLED:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a hard dep, but stay usable
        NUMBA_DISABLED = True

USE_NUMBA = not NUMBA_DISABLED


# ---------------------------------------------------------------------------
# low-pass + differencing, split into gap-free segments

def _ema_diff_numpy(t_ms, raw, alpha, gap_ms):
    dt = np.diff(t_ms)
    seg_starts = np.concatenate(([0], np.nonzero(dt > gap_ms)[0] + 1, [t_ms.size]))
    vt_parts, v_parts, bounds = [], [], []
    pos = 0
    b = np.array([alpha])
    a = np.array([1.0, -(1.0 - alpha)])
    for s, e in zip(seg_starts[:-1], seg_starts[1:]):
        x = raw[s:e]
        # first output is the first input exactly; the filter continues from
        # state (1-alpha)*x[0], which reproduces the scalar recurrence bitwise
        y = np.empty(x.size)
        y[0] = x[0]
        if x.size > 1:
            y[1:], _ = lfilter(b, a, x[1:], zi=np.array([(1.0 - alpha) * x[0]]))
        v = y[1:] - y[:-1]
        if v.size:
            vt_parts.append(t_ms[s + 1:e])
            v_parts.append(v)
        bounds.append((pos, pos + v.size))
        pos += v.size
    if not v_parts:
        return np.empty(0, np.int64), np.empty(0, np.float64), bounds
    return np.concatenate(vt_parts), np.concatenate(v_parts), bounds


if USE_NUMBA:

    @njit(cache=True)
    def _ema_diff_loop(t_ms, raw, alpha, gap_ms):
        n = t_ms.size
        vt = np.empty(n, np.int64)
        v = np.empty(n, np.float64)
        seg_end = np.empty(n + 1, np.int64)  # v-index where each segment ends
        m = 0
        nseg = 0
        y_prev = 0.0
        have_y = False
        prev_t = 0
        for i in range(n):
            if have_y and (t_ms[i] - prev_t) > gap_ms:
                seg_end[nseg] = m
                nseg += 1
                have_y = False
            if not have_y:
                y_prev = raw[i]
                have_y = True
            else:
                y = alpha * raw[i] + (1.0 - alpha) * y_prev
                vt[m] = t_ms[i]
                v[m] = y - y_prev
                y_prev = y
                m += 1
            prev_t = t_ms[i]
        seg_end[nseg] = m
        nseg += 1
        return vt[:m], v[:m], seg_end[:nseg]

    def _ema_diff_numba(t_ms, raw, alpha, gap_ms):
        vt, v, seg_end = _ema_diff_loop(t_ms, raw, alpha, gap_ms)
        bounds = []
        pos = 0
        for e in seg_end:
            bounds.append((pos, int(e)))
            pos = int(e)
        return vt, v, bounds


def ema_diff(t_ms, raw, alpha, gap_ms):
    """Filter and difference ``raw``, restarting at dropouts.

    Returns (vt, v, segment_bounds) where ``vt``/``v`` are the variation
    timestamps and values concatenated across segments, and
    ``segment_bounds`` is a list of (start, end) index pairs into ``v``.
    """
    t_ms = np.asarray(t_ms, np.int64)
    raw = np.asarray(raw, np.float64)
    if t_ms.size == 0:
        return np.empty(0, np.int64), np.empty(0, np.float64), []
    if USE_NUMBA:
        return _ema_diff_numba(t_ms, raw, alpha, gap_ms)
    return _ema_diff_numpy(t_ms, raw, alpha, gap_ms)


# ---------------------------------------------------------------------------
# windowed peak scan with refractory + cross-window dedup

if USE_NUMBA:

    @njit(cache=True)
    def _scan_windows_loop(vt, v, win_starts, win_ends, thetas,
                           refractory_ms, dedup_ms):
        cap = v.size + 1
        out_idx = np.empty(cap, np.int64)
        out_theta = np.empty(cap, np.float64)
        emitted = np.empty(cap, np.int64)  # emitted peak times, kept sorted
        n_out = 0
        for w in range(win_starts.size):
            s = win_starts[w]
            e = win_ends[w]
            theta = thetas[w]
            last_kept = np.int64(-1)
            have_kept = False
            for i in range(s, e):
                x = v[i]
                if x < theta:
                    continue
                if i > s and x <= v[i - 1]:
                    continue
                if i < e - 1 and x < v[i + 1]:
                    continue
                t = vt[i]
                if have_kept and (t - last_kept) < refractory_ms:
                    continue
                last_kept = t
                have_kept = True
                # binary search over previously emitted peaks
                lo, hi = 0, n_out
                while lo < hi:
                    mid = (lo + hi) // 2
                    if emitted[mid] < t:
                        lo = mid + 1
                    else:
                        hi = mid
                dup = False
                if lo < n_out and emitted[lo] - t <= dedup_ms:
                    dup = True
                if lo > 0 and t - emitted[lo - 1] <= dedup_ms:
                    dup = True
                if dup:
                    continue
                for j in range(n_out, lo, -1):
                    emitted[j] = emitted[j - 1]
                emitted[lo] = t
                out_idx[n_out] = i
                out_theta[n_out] = theta
                n_out += 1
        return out_idx[:n_out], out_theta[:n_out]


def _scan_windows_numpy(vt, v, win_starts, win_ends, thetas,
                        refractory_ms, dedup_ms):
    out_idx, out_theta = [], []
    emitted: list[int] = []
    for w in range(len(win_starts)):
        s, e = win_starts[w], win_ends[w]
        seg = v[s:e]
        theta = thetas[w]
        ok = seg >= theta
        if not ok.any():
            continue
        left = np.empty(seg.size, bool)
        left[0] = True
        left[1:] = seg[1:] > seg[:-1]
        right = np.empty(seg.size, bool)
        right[-1] = True
        right[:-1] = seg[:-1] >= seg[1:]
        cand = np.nonzero(ok & left & right)[0]
        last_kept = None
        for c in cand:
            i = s + int(c)
            t = int(vt[i])
            if last_kept is not None and (t - last_kept) < refractory_ms:
                continue
            last_kept = t
            pos = bisect.bisect_left(emitted, t)
            if pos < len(emitted) and emitted[pos] - t <= dedup_ms:
                continue
            if pos > 0 and t - emitted[pos - 1] <= dedup_ms:
                continue
            emitted.insert(pos, t)
            out_idx.append(i)
            out_theta.append(theta)
    return (np.asarray(out_idx, np.int64),
            np.asarray(out_theta, np.float64))


def scan_windows(vt, v, win_starts, win_ends, thetas, refractory_ms, dedup_ms):
    """Scan windows in emission order for super-threshold positive peaks.

    A candidate is a local maximum of ``v`` within its window (ties break
    toward the earlier sample) that clears the window's threshold. Within a
    window, candidates closer than ``refractory_ms`` to the last kept one are
    suppressed; across windows, candidates within ``dedup_ms`` of any emitted
    peak are dropped. Returns (indices into v, threshold at detection).
    """
    win_starts = np.asarray(win_starts, np.int64)
    win_ends = np.asarray(win_ends, np.int64)
    thetas = np.asarray(thetas, np.float64)
    if USE_NUMBA:
        return _scan_windows_loop(vt, v, win_starts, win_ends, thetas,
                                  np.int64(refractory_ms), np.int64(dedup_ms))
    return _scan_windows_numpy(vt, v, win_starts, win_ends, thetas,
                               refractory_ms, dedup_ms)


def warmup():
    """Force JIT compilation so later calls run at full speed."""
    t = np.arange(4, dtype=np.int64) * 17
    x = np.array([0.0, 1.0, 0.0, 0.0])
    vt, v, _ = ema_diff(t, x, 0.5, 20.0)
    scan_windows(vt, v, np.array([0]), np.array([v.size]), np.array([0.1]), 0, 0)
