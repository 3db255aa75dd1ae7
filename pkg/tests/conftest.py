import numpy as np
import pytest

from capblink import capsim
from capblink.detector import DetectorConfig


def make_random_stream(seed):
    """A short scenario with randomized preset, noise, fit and dropouts,
    paired with a randomized detector config. Used by the streaming/offline
    equivalence suites."""
    rng = np.random.default_rng(seed)
    preset = str(rng.choice(capsim.PRESET_NAMES))
    spec = capsim.preset_spec(
        preset,
        seed=int(rng.integers(1 << 31)),
        duration_ms=int(rng.integers(8_000, 20_000)),
        sigma_noise=float(rng.uniform(0.0, 2.5)),
        sigma_drift=float(rng.uniform(0.0, 0.6)),
    )
    params = capsim.TankParams(fit_scale=float(rng.uniform(0.5, 1.3)))
    samples, _ = capsim.generate_scenario(spec, params)
    t, raw = samples.t_ms.copy(), samples.raw.copy()

    # occasionally punch dropouts into the stream; a gap is not a blink edge
    if rng.random() < 0.4 and len(t) > 300:
        for _ in range(int(rng.integers(1, 3))):
            i = int(rng.integers(60, len(t) - 120))
            cut = int(rng.integers(5, 60))
            t = np.concatenate([t[:i], t[i + cut:]])
            raw = np.concatenate([raw[:i], raw[i + cut:]])

    if rng.random() < 0.5:
        cfg = DetectorConfig(threshold_mode="fixed",
                             theta=float(rng.uniform(3.0, 15.0)),
                             alpha=float(rng.uniform(0.3, 1.0)))
    else:
        cfg = DetectorConfig(threshold_mode="adaptive",
                             k=float(rng.uniform(4.0, 8.0)),
                             alpha=float(rng.uniform(0.3, 1.0)))
    return t, raw, cfg


@pytest.fixture(scope="session")
def clean_intentional():
    """Noiseless 8-minute scenario A: 80 regular blinks at 60 Hz."""
    spec = capsim.preset_spec("intentional", seed=1).cleaned()
    samples, truth = capsim.generate_scenario(spec)
    return samples, truth
