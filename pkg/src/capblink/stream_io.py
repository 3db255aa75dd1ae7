"""capstream file I/O and replay.

Newline-delimited, tab-separated text streams stand in for the radio link:
human-inspectable, bit-exact on round trip, and cheap at desk scale. Every
file starts with a header line

    capstream v1 rate_hz=<n> kind=<samples|labels|events|report>

followed by one record per line:

    samples   t_ms<TAB>raw
    labels    onset_ms<TAB>source[<TAB>close_end_ms<TAB>open_end_ms]
    events    peak_t_ms<TAB>peak_v<TAB>theta
    report    subject<TAB>scenario<TAB>tp<TAB>fp<TAB>fn<TAB>precision<TAB>recall

Timestamps are integer milliseconds. Consumers must use t_ms, never an
assumed period: 60 Hz streams legally step by 16/17 ms. Readers are lazy,
validate ordering, and fail stop: no record is yielded after an error.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from pathlib import Path

from .signal_core import Sample

FORMAT_VERSION = "v1"
KINDS = ("samples", "labels", "events", "report")
LABEL_SOURCES = ("simulator", "human")


class CapstreamError(Exception):
    """Malformed or inconsistent capstream data; message carries the line."""


@dataclass
class LabelRecord:
    """A ground-truth blink label, from the simulator or a human marker."""

    onset_ms: int
    source: str = "human"
    close_end_ms: int | None = None
    open_end_ms: int | None = None

    @property
    def ref_ms(self) -> float:
        """Matching reference: closing-phase midpoint when phases are known."""
        if self.close_end_ms is not None:
            return (self.onset_ms + self.close_end_ms) / 2.0
        return float(self.onset_ms)


@dataclass
class EventRecord:
    """A detected blink as persisted: peak time/height and threshold used."""

    peak_t_ms: int
    peak_v: float
    theta: float


@dataclass
class ReportRow:
    """One evaluation cell: match counts and precision/recall."""

    subject: str
    scenario: str
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float


def _fmt_float(x: float) -> str:
    if math.isinf(x):
        return "inf"
    return repr(float(x))


def _format_record(kind: str, rec) -> str:
    if kind == "samples":
        return f"{rec.t_ms}\t{_fmt_float(rec.raw)}"
    if kind == "labels":
        if rec.source not in LABEL_SOURCES:
            raise CapstreamError(f"unknown label source {rec.source!r}")
        if rec.close_end_ms is not None and rec.open_end_ms is not None:
            return (f"{rec.onset_ms}\t{rec.source}\t{rec.close_end_ms}"
                    f"\t{rec.open_end_ms}")
        return f"{rec.onset_ms}\t{rec.source}"
    if kind == "events":
        theta = getattr(rec, "theta", None)
        if theta is None:
            theta = rec.theta_at_detect  # detector.DetectedBlink
        return f"{rec.peak_t_ms}\t{_fmt_float(rec.peak_v)}\t{_fmt_float(theta)}"
    if kind == "report":
        return (f"{rec.subject}\t{rec.scenario}\t{rec.tp}\t{rec.fp}\t{rec.fn}"
                f"\t{_fmt_float(rec.precision)}\t{_fmt_float(rec.recall)}")
    raise CapstreamError(f"unknown stream kind {kind!r}")


def _record_time(kind: str, rec):
    if kind == "samples":
        return rec.t_ms
    if kind == "labels":
        return rec.onset_ms
    return None


def header_line(kind: str, rate_hz: float) -> str:
    if kind not in KINDS:
        raise CapstreamError(f"unknown stream kind {kind!r}")
    rate = int(rate_hz) if float(rate_hz) == int(rate_hz) else rate_hz
    return f"capstream {FORMAT_VERSION} rate_hz={rate} kind={kind}"


def write_stream(path_or_sink, records, kind: str, rate_hz: float = 60.0) -> int:
    """Write a header plus one line per record; returns the record count.

    Sample records must have strictly increasing t_ms and label records
    non-decreasing onset_ms; violations raise before anything further is
    written.
    """
    own = isinstance(path_or_sink, (str, Path))
    sink = open(path_or_sink, "w") if own else path_or_sink
    try:
        sink.write(header_line(kind, rate_hz) + "\n")
        count = 0
        last_t = None
        for rec in records:
            t = _record_time(kind, rec)
            if t is not None and last_t is not None:
                if kind == "samples" and t <= last_t:
                    raise CapstreamError(
                        f"unordered records: t_ms {t} after {last_t}")
                if kind == "labels" and t < last_t:
                    raise CapstreamError(
                        f"unordered records: onset_ms {t} after {last_t}")
            last_t = t if t is not None else last_t
            sink.write(_format_record(kind, rec) + "\n")
            count += 1
        return count
    finally:
        if own:
            sink.close()


def write_samples(path_or_sink, t_ms, raw, rate_hz: float = 60.0) -> int:
    """Array-based convenience writer for sample streams."""
    recs = (Sample(int(t), float(x)) for t, x in zip(t_ms, raw))
    return write_stream(path_or_sink, recs, "samples", rate_hz)


def _parse_int(token: str, line_no: int, what: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise CapstreamError(f"line {line_no}: bad {what} {token!r}") from None


def _parse_float(token: str, line_no: int, what: str) -> float:
    try:
        x = float(token)
    except ValueError:
        raise CapstreamError(f"line {line_no}: bad {what} {token!r}") from None
    if math.isnan(x):
        raise CapstreamError(f"line {line_no}: non-finite {what} {token!r}")
    return x


class StreamReader:
    """Lazy capstream reader; iterate to get records of the header's kind."""

    def __init__(self, source):
        self._own = isinstance(source, (str, Path))
        self._f = open(source, "r") if self._own else source
        self._line_no = 0
        header = self._next_line(required=True)
        parts = header.split()
        if len(parts) != 4 or parts[0] != "capstream":
            raise CapstreamError(f"line 1: not a capstream header: {header!r}")
        if parts[1] != FORMAT_VERSION:
            raise CapstreamError(
                f"line 1: unsupported capstream version {parts[1]!r} "
                f"(expected {FORMAT_VERSION})")
        if not parts[2].startswith("rate_hz=") or not parts[3].startswith("kind="):
            raise CapstreamError(f"line 1: malformed header: {header!r}")
        self.rate_hz = _parse_float(parts[2][8:], 1, "rate_hz")
        self.kind = parts[3][5:]
        if self.kind not in KINDS:
            raise CapstreamError(f"line 1: unknown stream kind {self.kind!r}")
        self.version = parts[1]

    def _next_line(self, required: bool = False) -> str | None:
        line = self._f.readline()
        self._line_no += 1
        if line == "":
            if required:
                raise CapstreamError("line 1: empty stream (missing header)")
            return None
        if not line.endswith("\n"):
            raise CapstreamError(f"line {self._line_no}: truncated line")
        return line[:-1]

    def __iter__(self):
        last_t = None
        while True:
            line = self._next_line()
            if line is None:
                break
            rec = self._parse(line, self._line_no)
            t = _record_time(self.kind, rec)
            if t is not None and last_t is not None:
                if self.kind == "samples" and t <= last_t:
                    raise CapstreamError(
                        f"line {self._line_no}: out-of-order t_ms {t} "
                        f"(previous was {last_t})")
                if self.kind == "labels" and t < last_t:
                    raise CapstreamError(
                        f"line {self._line_no}: out-of-order onset_ms {t} "
                        f"(previous was {last_t})")
            if t is not None:
                last_t = t
            yield rec
        if self._own:
            self._f.close()

    def _parse(self, line: str, n: int):
        parts = line.split("\t")
        if self.kind == "samples":
            if len(parts) != 2:
                raise CapstreamError(f"line {n}: expected 2 fields, got {len(parts)}")
            return Sample(_parse_int(parts[0], n, "t_ms"),
                          _parse_float(parts[1], n, "raw"))
        if self.kind == "labels":
            if len(parts) not in (2, 4):
                raise CapstreamError(f"line {n}: expected 2 or 4 fields, got {len(parts)}")
            if parts[1] not in LABEL_SOURCES:
                raise CapstreamError(f"line {n}: unknown label source {parts[1]!r}")
            rec = LabelRecord(_parse_int(parts[0], n, "onset_ms"), parts[1])
            if len(parts) == 4:
                rec.close_end_ms = _parse_int(parts[2], n, "close_end_ms")
                rec.open_end_ms = _parse_int(parts[3], n, "open_end_ms")
            return rec
        if self.kind == "events":
            if len(parts) != 3:
                raise CapstreamError(f"line {n}: expected 3 fields, got {len(parts)}")
            return EventRecord(_parse_int(parts[0], n, "peak_t_ms"),
                               _parse_float(parts[1], n, "peak_v"),
                               _parse_float(parts[2], n, "theta"))
        if len(parts) != 7:
            raise CapstreamError(f"line {n}: expected 7 fields, got {len(parts)}")
        return ReportRow(parts[0], parts[1],
                         _parse_int(parts[2], n, "tp"),
                         _parse_int(parts[3], n, "fp"),
                         _parse_int(parts[4], n, "fn"),
                         _parse_float(parts[5], n, "precision"),
                         _parse_float(parts[6], n, "recall"))


def read_stream(path_or_source) -> StreamReader:
    """Open a capstream file; header is validated eagerly, records lazily."""
    return StreamReader(path_or_source)


def replay(source, speed_factor=1.0):
    """Yield records from a sample stream paced by their timestamps.

    ``speed_factor`` scales inter-sample delays by its inverse; pass "max"
    (or math.inf) to disable pacing entirely. Delivery order is file order.
    """
    if speed_factor == "max":
        speed = math.inf
    else:
        speed = float(speed_factor)
        if not speed > 0:
            raise ValueError(f"speed_factor must be positive, got {speed_factor}")
    reader = source if isinstance(source, StreamReader) else read_stream(source)
    t0 = None
    wall0 = None
    for rec in reader:
        if math.isfinite(speed):
            if t0 is None:
                t0 = rec.t_ms
                wall0 = time.monotonic()
            else:
                target = wall0 + (rec.t_ms - t0) / 1000.0 / speed
                delay = target - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
        yield rec
