"""Eye-blink detection toolkit for capacitive sensing glasses.

Raw counter streams (or simulated ones) run through a low-pass filter,
first differencing, and windowed positive-peak thresholding to produce blink
events; an evaluation harness scores them against ground truth, and a live
gateway serves streams to a browser UI for threshold calibration and
labeling.
"""

from .capsim import (BlinkKinematics, GroundTruthEvent, SampleArray,
                     ScenarioSpec, TankParams, blink_profile, capacitance_at,
                     clean_variation_peak, frequency_from_capacitance,
                     generate_scenario, preset_spec)
from .detector import (BlinkDetector, DetectedBlink, DetectorConfig,
                       RobustStats, adaptive_threshold, dedup_merge,
                       detect_in_window, detect_offline)
from .evaluate import (EvalReport, MatchResult, build_report, match_events,
                       precision_recall)
from .signal_core import (DiffState, FilterState, Sample, Window,
                          WindowBuffer, diff_step, lowpass_step)
from .stream_io import (CapstreamError, EventRecord, LabelRecord, ReportRow,
                        StreamReader, read_stream, replay, write_samples,
                        write_stream)

__version__ = "0.1.0"
