"""Physics-informed blink signal simulator.

Chain: eyelid coverage profile -> electrode capacitance -> LC tank resonant
frequency -> counter counts, plus baseline drift, head-move steps, periodic
motion artifacts and white noise. Capacitance rises while the eyelid closes,
the resonant frequency drops, and counts are emitted proportional to the
*negative* frequency shift, so a blink is a positive excursion in the raw
stream followed by a symmetric return.

Scenario presets model one intentional-blink session and four everyday
activities. Blink rates for the involuntary presets, noise levels and
artifact shapes are plausible defaults chosen for this simulator, not
measured constants; every one of them can be overridden per scenario.
All randomness comes from a single seeded generator, so a scenario is fully
reproducible from its spec.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import kernels
from .signal_core import GAP_FACTOR, Sample, nominal_period_ms

PRESET_NAMES = ("intentional", "reading", "talking", "walking", "driving")


@dataclass
class BlinkKinematics:
    """Eyelid phase durations: close ~100 ms, brief hold, open ~200 ms."""

    t_close_ms: int = 100
    t_hold_ms: int = 50
    t_open_ms: int = 200

    def __post_init__(self):
        if self.t_close_ms <= 0 or self.t_open_ms <= 0 or self.t_hold_ms < 0:
            raise ValueError("phase durations must be positive (hold may be 0)")

    @property
    def span_ms(self) -> int:
        return self.t_close_ms + self.t_hold_ms + self.t_open_ms


@dataclass
class TankParams:
    """LC tank and electrode coupling.

    Inductance and baseline capacitance are typical evaluation-board tank
    values; dc_max_farads is sized so a full blink moves the counter by about
    100 counts at the default count scale. Only the ratios matter to the
    detector. ``fit_scale`` attenuates the blink-induced capacitance change to
    model how well the glasses frame fits the wearer (smaller = worse fit,
    weaker signal).
    """

    l_henries: float = 18e-6
    c0_farads: float = 33e-12
    dc_max_farads: float = 60e-15
    fit_scale: float = 1.0

    def __post_init__(self):
        if min(self.l_henries, self.c0_farads, self.dc_max_farads,
               self.fit_scale) <= 0:
            raise ValueError("tank parameters must be positive")


@dataclass
class GroundTruthEvent:
    """One scheduled blink with its phase boundaries."""

    onset_ms: int
    close_end_ms: int
    open_end_ms: int

    @property
    def closing_mid_ms(self) -> float:
        """Reference instant for event matching: middle of the closing phase."""
        return (self.onset_ms + self.close_end_ms) / 2.0


def frequency_from_capacitance(c_farads: float, l_henries: float) -> float:
    """Resonant frequency of the LC tank: f = 1 / (2*pi*sqrt(L*C))."""
    if not c_farads > 0:
        raise ValueError(f"capacitance must be positive, got {c_farads}")
    if not l_henries > 0:
        raise ValueError(f"inductance must be positive, got {l_henries}")
    return 1.0 / (2.0 * math.pi * math.sqrt(l_henries * c_farads))


def _default_count_scale() -> float:
    """Counts per hertz of downward frequency shift: full blink -> 100 counts."""
    p = TankParams()
    f0 = frequency_from_capacitance(p.c0_farads, p.l_henries)
    f1 = frequency_from_capacitance(p.c0_farads + p.dc_max_farads, p.l_henries)
    return 100.0 / (f0 - f1)


DEFAULT_COUNT_SCALE = _default_count_scale()


def blink_profile(t_ms: float, onset_ms: float,
                  kin: BlinkKinematics | None = None) -> float:
    """Eyelid coverage fraction in [0, 1] at time t for a blink at onset.

    Raised-cosine rise over the closing phase, plateau of 1 while held shut,
    raised-cosine fall over the opening phase; exactly 0 outside the blink.
    """
    kin = kin or BlinkKinematics()
    dt = t_ms - onset_ms
    if dt <= 0 or dt >= kin.span_ms:
        return 0.0
    if dt < kin.t_close_ms:
        return 0.5 * (1.0 - math.cos(math.pi * dt / kin.t_close_ms))
    if dt <= kin.t_close_ms + kin.t_hold_ms:
        return 1.0
    dt_open = dt - kin.t_close_ms - kin.t_hold_ms
    return 0.5 * (1.0 + math.cos(math.pi * dt_open / kin.t_open_ms))


def _profile_array(t_ms: np.ndarray, onsets, kin: BlinkKinematics) -> np.ndarray:
    """Sum of blink coverage profiles over a time grid (vectorized)."""
    g = np.zeros(t_ms.size)
    for onset in onsets:
        lo = np.searchsorted(t_ms, onset, side="right")
        hi = np.searchsorted(t_ms, onset + kin.span_ms, side="left")
        if lo >= hi:
            continue
        dt = t_ms[lo:hi].astype(np.float64) - onset
        seg = np.zeros(dt.size)
        rise = dt < kin.t_close_ms
        seg[rise] = 0.5 * (1.0 - np.cos(np.pi * dt[rise] / kin.t_close_ms))
        hold = (dt >= kin.t_close_ms) & (dt <= kin.t_close_ms + kin.t_hold_ms)
        seg[hold] = 1.0
        fall = dt > kin.t_close_ms + kin.t_hold_ms
        seg[fall] = 0.5 * (1.0 + np.cos(
            np.pi * (dt[fall] - kin.t_close_ms - kin.t_hold_ms) / kin.t_open_ms))
        g[lo:hi] += seg
    return g


def capacitance_at(t_ms: float, events, params: TankParams | None = None,
                   kin: BlinkKinematics | None = None,
                   drift_farads: float = 0.0) -> float:
    """Electrode capacitance at one instant: baseline + blink coverage + drift.

    ``events`` is an iterable of GroundTruthEvent or onset times. Scenario
    drift is normally modeled downstream in counts; ``drift_farads`` exists
    for callers that want it at the capacitance level.
    """
    params = params or TankParams()
    kin = kin or BlinkKinematics()
    g = 0.0
    for ev in events:
        onset = ev.onset_ms if isinstance(ev, GroundTruthEvent) else ev
        g += blink_profile(t_ms, onset, kin)
    c = params.c0_farads + params.fit_scale * params.dc_max_farads * g + drift_farads
    if c <= 0:
        raise ValueError(f"non-physical capacitance {c} at t={t_ms}")
    return c


def render_counts(f_trace, f_ref: float, count_scale: float = DEFAULT_COUNT_SCALE,
                  sigma_noise: float = 0.0, quantize: bool = True,
                  seed: int | None = None, drift_counts=None, rng=None):
    """Convert a resonant-frequency trace into counter counts.

    counts[n] = round((f_ref - f[n]) * count_scale + drift[n] + noise[n]).
    A blink raises capacitance and lowers frequency, so it shows up as a
    positive count excursion. Rounding is skipped when ``quantize`` is False.
    """
    if not count_scale > 0:
        raise ValueError("count_scale must be positive")
    f_trace = np.asarray(f_trace, np.float64)
    counts = (f_ref - f_trace) * count_scale
    if drift_counts is not None:
        counts = counts + np.asarray(drift_counts, np.float64)
    if sigma_noise > 0:
        if rng is None:
            rng = np.random.default_rng(seed)
        counts = counts + rng.normal(0.0, sigma_noise, counts.size)
    if quantize:
        counts = np.rint(counts)
    return counts


@dataclass
class ScenarioSpec:
    """Simulator preset: blink schedule, noise/drift/artifact levels, seed.

    ``blink_onsets`` pins an explicit schedule; otherwise a regular schedule
    (intentional preset) or a Poisson one with a minimum gap is drawn at
    ``blink_rate_per_min``. Sigma values are in counts; the artifact is a
    sinusoid modeling periodic body motion; head moves are smooth baseline
    steps of +-headmove_step_counts.
    """

    preset: str = "intentional"
    duration_ms: int = 480_000
    rate_hz: float = 60.0
    blink_rate_per_min: float = 10.0
    regular_schedule: bool = True
    blink_onsets: list[int] | None = None
    min_gap_ms: int = 500
    sigma_noise: float = 1.8
    sigma_drift: float = 0.3
    headmove_per_min: float = 2.0
    headmove_step_counts: float = 30.0
    headmove_ramp_min_ms: int = 250
    headmove_ramp_max_ms: int = 800
    artifact_hz: float = 0.0
    artifact_amp: float = 0.0
    seed: int = 0
    quantize: bool = True
    kinematics: BlinkKinematics = field(default_factory=BlinkKinematics)

    def __post_init__(self):
        if self.duration_ms < 0:
            raise ValueError("duration_ms must be >= 0")
        if not self.rate_hz > 0:
            raise ValueError("rate_hz must be positive")
        for name in ("sigma_noise", "sigma_drift", "artifact_amp",
                     "headmove_per_min", "blink_rate_per_min"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def cleaned(self) -> "ScenarioSpec":
        """Copy with all stochastic amplitudes zeroed (schedule unchanged)."""
        return replace(self, sigma_noise=0.0, sigma_drift=0.0,
                       headmove_per_min=0.0, artifact_amp=0.0)


# Involuntary blink rates and artifact shapes are simulator defaults, not
# reported values; walking adds a 2 Hz stride artifact, driving a smaller
# 8 Hz vibration.
PRESETS: dict[str, dict] = {
    "intentional": dict(blink_rate_per_min=10.0, regular_schedule=True,
                        sigma_noise=1.8),
    "reading": dict(blink_rate_per_min=8.0, regular_schedule=False,
                    sigma_noise=1.8),
    "talking": dict(blink_rate_per_min=16.0, regular_schedule=False,
                    sigma_noise=2.0),
    "walking": dict(blink_rate_per_min=18.0, regular_schedule=False,
                    sigma_noise=2.2, artifact_hz=2.0, artifact_amp=15.0),
    "driving": dict(blink_rate_per_min=14.0, regular_schedule=False,
                    sigma_noise=2.2, artifact_hz=8.0, artifact_amp=5.0),
}


def preset_spec(name: str, **overrides) -> ScenarioSpec:
    if name not in PRESETS:
        raise ValueError(
            f"unknown preset {name!r}; valid presets: {', '.join(PRESET_NAMES)}")
    kw = dict(PRESETS[name])
    kw.update(overrides)
    return ScenarioSpec(preset=name, **kw)


@dataclass
class SampleArray:
    """Column layout of a rendered stream: int timestamps + float counts."""

    t_ms: np.ndarray
    raw: np.ndarray

    def __len__(self) -> int:
        return self.t_ms.size

    def __iter__(self):
        for t, x in zip(self.t_ms, self.raw):
            yield Sample(int(t), float(x))


def _draw_schedule(spec: ScenarioSpec, rng: np.random.Generator) -> list[int]:
    span = spec.kinematics.span_ms
    last_onset = spec.duration_ms - span
    if last_onset < 0:
        return []
    if spec.blink_onsets is not None:
        onsets = sorted(int(o) for o in spec.blink_onsets)
        for a, b in zip(onsets, onsets[1:]):
            if b - a < max(spec.min_gap_ms, span):
                raise ValueError(
                    f"blink onsets {a} and {b} overlap (min gap "
                    f"{max(spec.min_gap_ms, span)} ms)")
        if onsets and (onsets[0] < 0 or onsets[-1] > last_onset):
            raise ValueError("blink onsets must lie in [0, duration - span]")
        return onsets
    if spec.blink_rate_per_min <= 0:
        return []
    mean_gap = 60_000.0 / spec.blink_rate_per_min
    if spec.regular_schedule:
        onsets = []
        t = mean_gap / 2.0
        while t <= last_onset:
            onsets.append(int(round(t)))
            t += mean_gap
        return onsets
    # Poisson with a refractory floor: exponential gaps shifted by min_gap,
    # mean preserved when the rate allows it.
    floor = max(spec.min_gap_ms, span)
    exp_mean = max(mean_gap - floor, 1.0)
    onsets = []
    t = rng.exponential(exp_mean)
    while t <= last_onset:
        onsets.append(int(round(t)))
        t += floor + rng.exponential(exp_mean)
    return onsets


def _headmove_counts(spec: ScenarioSpec, t_ms: np.ndarray,
                     rng: np.random.Generator) -> np.ndarray:
    out = np.zeros(t_ms.size)
    if spec.headmove_per_min <= 0 or t_ms.size == 0:
        return out
    mean_gap = 60_000.0 / spec.headmove_per_min
    t = rng.exponential(mean_gap)
    while t < spec.duration_ms:
        step = spec.headmove_step_counts * (1.0 if rng.random() < 0.5 else -1.0)
        # heads turn over a fraction of a second, not per-sample; only the
        # fastest turns produce variation spikes near the detection threshold
        ramp = rng.uniform(max(1, spec.headmove_ramp_min_ms),
                           max(1, spec.headmove_ramp_max_ms))
        dt = t_ms.astype(np.float64) - t
        frac = np.clip(dt / ramp, 0.0, 1.0)
        out += step * 0.5 * (1.0 - np.cos(np.pi * frac))
        t += rng.exponential(mean_gap)
    return out


def generate_scenario(spec: ScenarioSpec, params: TankParams | None = None,
                      count_scale: float = DEFAULT_COUNT_SCALE
                      ) -> tuple[SampleArray, list[GroundTruthEvent]]:
    """Render a scenario to counter samples plus its ground-truth events.

    Deterministic for a fixed spec (single seeded RNG, fixed draw order:
    schedule, noise, drift, head moves, artifact phase). The schedule
    guarantees whole blinks: every event's opening phase ends before the
    stream does.
    """
    if spec.preset not in PRESET_NAMES:
        raise ValueError(
            f"unknown preset {spec.preset!r}; valid presets: "
            f"{', '.join(PRESET_NAMES)}")
    params = params or TankParams()
    kin = spec.kinematics
    rng = np.random.default_rng(spec.seed)

    n = int(round(spec.duration_ms * spec.rate_hz / 1000.0))
    t_ms = np.rint(np.arange(n) * (1000.0 / spec.rate_hz)).astype(np.int64)

    onsets = _draw_schedule(spec, rng)
    truth = [GroundTruthEvent(o, o + kin.t_close_ms, o + kin.span_ms)
             for o in onsets]

    # Counter jitter is bounded, not Gaussian-tailed: model it as white
    # uniform noise with standard deviation sigma_noise.
    lim = spec.sigma_noise * math.sqrt(3.0)
    noise = rng.uniform(-lim, lim, n) if n else np.zeros(0)
    drift = np.cumsum(rng.normal(0.0, 1.0, n)) * spec.sigma_drift
    drift += _headmove_counts(spec, t_ms, rng)
    if spec.artifact_amp > 0 and spec.artifact_hz > 0:
        phase = rng.uniform(0.0, 2.0 * math.pi)
        drift += spec.artifact_amp * np.sin(
            2.0 * math.pi * spec.artifact_hz * t_ms / 1000.0 + phase)

    g = _profile_array(t_ms, onsets, kin)
    c = params.c0_farads + params.fit_scale * params.dc_max_farads * g
    f_ref = frequency_from_capacitance(params.c0_farads, params.l_henries)
    f_trace = 1.0 / (2.0 * math.pi * np.sqrt(params.l_henries * c))
    raw = render_counts(f_trace, f_ref, count_scale,
                        quantize=spec.quantize, drift_counts=drift + noise)
    return SampleArray(t_ms=t_ms, raw=raw), truth


def clean_variation_peak(params: TankParams | None = None,
                         kin: BlinkKinematics | None = None,
                         rate_hz: float = 60.0, alpha: float = 0.57,
                         count_scale: float = DEFAULT_COUNT_SCALE,
                         quantize: bool = True) -> float:
    """Peak of the variation stream for one noiseless blink.

    This is the calibration anchor for fixed thresholds: the acceptance
    protocol sets theta to half this value.
    """
    params = params or TankParams()
    kin = kin or BlinkKinematics()
    spec = ScenarioSpec(preset="intentional", duration_ms=4000, rate_hz=rate_hz,
                        blink_onsets=[1000], kinematics=kin,
                        quantize=quantize).cleaned()
    samples, _ = generate_scenario(spec, params, count_scale)
    _, v, _ = kernels.ema_diff(samples.t_ms, samples.raw, alpha,
                               GAP_FACTOR * nominal_period_ms(rate_hz))
    return float(v.max())
