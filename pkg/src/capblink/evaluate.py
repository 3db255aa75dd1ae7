"""Event-matching evaluation: precision/recall over tolerance-matched blinks.

Detections are matched one-to-one against ground truth by a greedy
chronological rule: walking both time-sorted lists, a detection pairs with
the earliest unmatched truth event whose reference instant lies within the
tolerance. The truth reference is the closing-phase midpoint when phase
timing is known, else the onset. For the one-sided interval structure used
here, greedy matching attains optimal matching cardinality.

Degenerate-case conventions (documented, deliberate): with no detections,
precision is 1 when there was also nothing to find, else 0; with no truth
events, recall is 1. Empty clean scenarios therefore score perfect instead
of crashing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .capsim import PRESET_NAMES, GroundTruthEvent
from .stream_io import LabelRecord, ReportRow


def _truth_ref(item) -> tuple[float, int]:
    """(reference instant, onset) of a truth item."""
    if isinstance(item, GroundTruthEvent):
        return item.closing_mid_ms, item.onset_ms
    if isinstance(item, LabelRecord):
        return item.ref_ms, item.onset_ms
    return float(item), int(item)


def _det_time(item) -> float:
    t = getattr(item, "peak_t_ms", None)
    if t is None:
        t = item
    return float(t)


@dataclass
class MatchResult:
    """One-to-one matching outcome; tp == len(pairs)."""

    tp: int
    fp: int
    fn: int
    pairs: list[tuple[int, float]] = field(default_factory=list)


def match_events(truth, detections, tol_ms: float = 300.0) -> MatchResult:
    """Greedily match detections to truth references within tol_ms.

    Both inputs must be time-sorted. Unmatched detections count as false
    positives, unmatched truth events as false negatives.
    """
    refs = [_truth_ref(x) for x in truth]
    dets = [_det_time(x) for x in detections]
    if any(b[0] < a[0] for a, b in zip(refs, refs[1:])):
        raise ValueError("truth events are not time-sorted")
    if any(b < a for a, b in zip(dets, dets[1:])):
        raise ValueError("detections are not time-sorted")

    pairs: list[tuple[int, float]] = []
    i = j = 0
    fp = fn = 0
    while i < len(refs) and j < len(dets):
        ref, onset = refs[i]
        d = dets[j]
        if abs(d - ref) <= tol_ms:
            pairs.append((onset, d))
            i += 1
            j += 1
        elif ref < d - tol_ms:
            fn += 1
            i += 1
        else:
            fp += 1
            j += 1
    fn += len(refs) - i
    fp += len(dets) - j
    return MatchResult(tp=len(pairs), fp=fp, fn=fn, pairs=pairs)


def precision_recall(m: MatchResult) -> tuple[float, float]:
    """(precision, recall) with vacuous-perfection conventions."""
    if m.tp + m.fp > 0:
        precision = m.tp / (m.tp + m.fp)
    else:
        precision = 1.0 if m.fn == 0 else 0.0
    recall = m.tp / (m.tp + m.fn) if m.tp + m.fn > 0 else 1.0
    return precision, recall


def _pct(x: float) -> int:
    """Integer percent, half rounded up, for table display."""
    return int(x * 100.0 + 0.5)


def _scenario_sort_key(name: str):
    try:
        return (0, PRESET_NAMES.index(name))
    except ValueError:
        return (1, name)


@dataclass
class EvalReport:
    """Per-(subject, scenario) precision/recall grid with marginal averages."""

    subjects: list[str]
    scenarios: list[str]
    cells: dict[tuple[str, str], tuple[float, float]]
    counts: dict[tuple[str, str], MatchResult]
    subject_avg: dict[str, tuple[float, float]]
    scenario_avg: dict[str, tuple[float, float]]
    overall: tuple[float, float]

    def render_text(self) -> str:
        """Aligned text table, one scenario per row, 'p/r' integer percents."""
        def cell(pr):
            return f"{_pct(pr[0])}/{_pct(pr[1])}"

        header = ["Scenario"] + self.subjects + ["Averaged"]
        rows = [header]
        for scn in self.scenarios:
            row = [scn]
            for sub in self.subjects:
                pr = self.cells.get((sub, scn))
                row.append(cell(pr) if pr else "-")
            row.append(cell(self.scenario_avg[scn]))
            rows.append(row)
        last = ["Averaged"]
        for sub in self.subjects:
            last.append(cell(self.subject_avg[sub]))
        last.append(cell(self.overall))
        rows.append(last)
        widths = [max(len(r[c]) for r in rows) for c in range(len(header))]
        lines = ["  ".join(val.ljust(w) for val, w in zip(r, widths)).rstrip()
                 for r in rows]
        return "\n".join(lines)

    def to_rows(self) -> list[ReportRow]:
        """Machine-readable form: one ReportRow per filled cell."""
        out = []
        for scn in self.scenarios:
            for sub in self.subjects:
                m = self.counts.get((sub, scn))
                if m is None:
                    continue
                p, r = self.cells[(sub, scn)]
                out.append(ReportRow(sub, scn, m.tp, m.fp, m.fn, p, r))
        return out


def _mean(prs: list[tuple[float, float]]) -> tuple[float, float]:
    n = len(prs)
    return (sum(p for p, _ in prs) / n, sum(r for _, r in prs) / n)


def build_report(results: dict[tuple[str, str], MatchResult]) -> EvalReport:
    """Assemble the grid report from per-cell match results.

    Row/column averages are arithmetic means over filled cells; the overall
    figure is the mean of the per-scenario averages.
    """
    if not results:
        raise ValueError("no evaluation results to report")
    subjects = sorted({sub for sub, _ in results})
    scenarios = sorted({scn for _, scn in results}, key=_scenario_sort_key)
    cells = {key: precision_recall(m) for key, m in results.items()}
    subject_avg = {
        sub: _mean([cells[(sub, scn)] for scn in scenarios
                    if (sub, scn) in cells])
        for sub in subjects}
    scenario_avg = {
        scn: _mean([cells[(sub, scn)] for sub in subjects
                    if (sub, scn) in cells])
        for scn in scenarios}
    overall = _mean([scenario_avg[scn] for scn in scenarios])
    return EvalReport(subjects=subjects, scenarios=scenarios, cells=cells,
                      counts=dict(results), subject_avg=subject_avg,
                      scenario_avg=scenario_avg, overall=overall)
