"""Live session gateway: stream -> detector -> websocket broadcast + files.

One session owns one detector and one sample source. Every sample is fed to
the detector, persisted, and broadcast to subscribers in small batches;
detections are persisted and broadcast as they are emitted. Subscribers may
send ``set_theta`` (fixed mode only) and ``label_mark`` messages back; labels
are persisted before they are acknowledged.

Messages are JSON texts over WebSocket, one message per frame ("capgw v1"):

    hello        {kind, seq, proto, session_id, rate_hz, threshold_mode,
                  theta, newest_t_ms}
    sample_batch {kind, seq, samples: [[t_ms, raw, v|null], ...], gap?}
    detection    {kind, seq, peak_t_ms, peak_v, theta}
    theta_update {kind, seq, theta}
    label_mark   client->server {kind, t_ms}; ack echoes it back with
                  {kind, seq, t_ms, label_seq, ack: true}
    error        {kind, seq, message}
    set_theta    client->server {kind, theta}

``seq`` is stamped from one global counter when a message is queued, so each
subscriber sees a strictly increasing subsequence of the global sequence.
A slow subscriber loses the oldest queued messages (never pacing the
detector); the next batch it does receive carries ``gap: true``.

Concurrency: everything runs on one asyncio loop. The ingest task is the
only writer of detector state; client control messages run as loop callbacks
between samples.
"""

from __future__ import annotations

import asyncio
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import wsproto
from .detector import BlinkDetector, DetectorConfig
from .signal_core import Sample
from .stream_io import LabelRecord, header_line

PROTO = "capgw v1"
BATCH_MAX_SAMPLES = 6
BATCH_MAX_SPAN_MS = 100
CLIENT_QUEUE_MAX = 64


@dataclass
class SessionSummary:
    session_id: str
    n_samples: int = 0
    n_events: int = 0
    n_labels: int = 0
    n_theta_changes: int = 0
    paths: dict = field(default_factory=dict)


class _Client:
    _ids = 0

    def __init__(self, conn: wsproto.WsConnection):
        _Client._ids += 1
        self.id = _Client._ids
        self.conn = conn
        self.queue: asyncio.Queue = asyncio.Queue(maxsize=CLIENT_QUEUE_MAX)
        self.dropped = False
        self.sender: asyncio.Task | None = None
        self.reader: asyncio.Task | None = None

    def enqueue(self, msg: dict) -> None:
        if self.queue.full():
            # drop-oldest: display completeness loses to detection fidelity
            try:
                self.queue.get_nowait()
                self.dropped = True
            except asyncio.QueueEmpty:
                pass
        self.queue.put_nowait(msg)


class GatewaySession:
    """Serve one replayed (or live) sample stream to any number of clients."""

    def __init__(self, config: DetectorConfig | None = None,
                 rate_hz: float = 60.0, record_dir=".",
                 session_id: str | None = None):
        self.config = config or DetectorConfig()
        self.rate_hz = rate_hz
        self.detector = BlinkDetector(self.config, rate_hz)
        self.session_id = session_id or f"session-{int(time.time())}"
        self.record_dir = Path(record_dir)
        self.clients: set[_Client] = set()
        self.bound_address: tuple[str, int] | None = None
        self.ready = asyncio.Event()
        self._seq = 0
        self._newest_t: int | None = None
        self._first_t: int | None = None
        self._label_seq = 0
        self._batch: list[list] = []
        self.summary = SessionSummary(self.session_id)
        self._sinks = {}
        self._log = None

    # ----- sequencing and fan-out

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def _broadcast(self, msg: dict) -> None:
        msg["seq"] = self._next_seq()
        for c in self.clients:
            c.enqueue(msg)

    def _send_to(self, client: _Client, msg: dict) -> None:
        msg["seq"] = self._next_seq()
        client.enqueue(msg)

    # ----- persistence

    def _open_sinks(self):
        self.record_dir.mkdir(parents=True, exist_ok=True)
        prefix = self.record_dir / self.session_id
        for kind, suffix in (("samples", ".samples"), ("events", ".events"),
                             ("labels", ".labels")):
            path = prefix.with_suffix(suffix)
            f = open(path, "w")
            f.write(header_line(kind, self.rate_hz) + "\n")
            self._sinks[kind] = f
            self.summary.paths[kind] = str(path)
        log_path = prefix.with_suffix(".log")
        self._log = open(log_path, "w")
        self.summary.paths["log"] = str(log_path)

    def _close_sinks(self):
        for f in self._sinks.values():
            f.close()
        if self._log:
            self._log.close()

    # ----- client lifecycle

    async def _handle_connection(self, reader, writer):
        try:
            await wsproto.server_handshake(reader, writer)
        except wsproto.WsError:
            writer.close()
            return
        conn = wsproto.WsConnection(reader, writer, client_side=False)
        client = _Client(conn)
        self.clients.add(client)
        self._send_to(client, {
            "kind": "hello", "proto": PROTO, "session_id": self.session_id,
            "rate_hz": self.rate_hz,
            "threshold_mode": self.config.threshold_mode,
            "theta": self.detector.current_theta,
            "newest_t_ms": self._newest_t,
        })
        client.sender = asyncio.create_task(self._sender_loop(client))
        client.reader = asyncio.create_task(self._reader_loop(client))

    async def _sender_loop(self, client: _Client):
        try:
            while True:
                msg = await client.queue.get()
                if msg is None:
                    await client.conn.close()
                    return
                if client.dropped and msg.get("kind") == "sample_batch":
                    msg = {**msg, "gap": True}
                    client.dropped = False
                await client.conn.send_text(json.dumps(msg, allow_nan=False))
        except (wsproto.WsError, ConnectionError):
            pass
        finally:
            self.clients.discard(client)

    async def _reader_loop(self, client: _Client):
        try:
            while True:
                text = await client.conn.recv_text()
                if text is None:
                    break
                self._handle_control(client, text)
        finally:
            self.clients.discard(client)
            if client.sender:
                client.sender.cancel()

    # ----- control messages

    def _error_to(self, client: _Client, message: str) -> None:
        self._send_to(client, {"kind": "error", "message": message})

    def _handle_control(self, client: _Client, text: str) -> None:
        try:
            msg = json.loads(text)
            kind = msg.get("kind")
        except (json.JSONDecodeError, AttributeError):
            self._error_to(client, "malformed message (expected JSON object)")
            return
        if kind == "set_theta":
            self._handle_set_theta(client, msg)
        elif kind == "label_mark":
            self._handle_label(client, msg)
        else:
            self._error_to(client, f"unknown kind {kind!r}")

    def _handle_set_theta(self, client: _Client, msg: dict) -> None:
        theta = msg.get("theta")
        if self.config.threshold_mode != "fixed":
            self._error_to(client,
                           "set_theta rejected: detector is in adaptive mode")
            return
        if not isinstance(theta, (int, float)) or not theta > 0:
            self._error_to(client, f"set_theta rejected: bad theta {theta!r}")
            return
        self.detector.set_theta(float(theta))
        self.summary.n_theta_changes += 1
        self._log.write(f"{self._newest_t}\tset_theta\t{theta}\n")
        self._log.flush()
        self._broadcast({"kind": "theta_update", "theta": float(theta)})

    def _handle_label(self, client: _Client, msg: dict) -> None:
        t = msg.get("t_ms")
        if not isinstance(t, int):
            self._error_to(client, f"label_mark rejected: bad t_ms {t!r}")
            return
        if self._first_t is None or t < self._first_t or t > self._newest_t:
            self._error_to(client,
                           f"label_mark rejected: t_ms {t} outside session "
                           f"bounds [{self._first_t}, {self._newest_t}]")
            return
        rec = LabelRecord(onset_ms=t, source="human")
        self._sinks["labels"].write(f"{rec.onset_ms}\t{rec.source}\n")
        self._sinks["labels"].flush()  # persisted before the ack goes out
        self._label_seq += 1
        self.summary.n_labels += 1
        self._send_to(client, {"kind": "label_mark", "t_ms": t,
                               "label_seq": self._label_seq, "ack": True})

    # ----- ingest

    def _flush_batch(self) -> None:
        if self._batch:
            self._broadcast({"kind": "sample_batch", "samples": self._batch})
            self._batch = []

    def _ingest_one(self, t: int, raw: float) -> None:
        events = self.detector.process(Sample(t, raw))
        if self._first_t is None:
            self._first_t = t
        self._newest_t = t
        self._sinks["samples"].write(f"{t}\t{raw!r}\n")
        self.summary.n_samples += 1
        if self._batch and t - self._batch[0][0] >= BATCH_MAX_SPAN_MS:
            self._flush_batch()
        self._batch.append([t, raw, self.detector.last_v])
        if len(self._batch) >= BATCH_MAX_SAMPLES:
            self._flush_batch()
        self._emit(events)

    def _emit(self, events) -> None:
        for ev in events:
            self._sinks["events"].write(
                f"{ev.peak_t_ms}\t{ev.peak_v!r}\t{ev.theta_at_detect!r}\n")
            self.summary.n_events += 1
            self._broadcast({"kind": "detection", "peak_t_ms": ev.peak_t_ms,
                             "peak_v": ev.peak_v,
                             "theta": ev.theta_at_detect})
        self._sinks["events"].flush()

    async def run(self, samples, listen=("127.0.0.1", 0), speed=1.0,
                  await_subscribers: int = 0) -> SessionSummary:
        """Serve until the sample source is exhausted; returns the summary.

        ``samples`` is any iterable of objects with t_ms/raw (SampleArray,
        StreamReader, list). ``speed`` scales replay pacing; "max" or inf
        disables pacing. ``await_subscribers`` delays ingest until that many
        clients are connected.
        """
        speed_f = math.inf if speed in ("max", None) else float(speed)
        if not speed_f > 0:
            raise ValueError(f"speed must be positive, got {speed}")
        self._open_sinks()
        server = await asyncio.start_server(
            self._handle_connection, listen[0], listen[1])
        self.bound_address = server.sockets[0].getsockname()[:2]
        self.ready.set()
        try:
            while len(self.clients) < await_subscribers:
                await asyncio.sleep(0.005)
            t0 = None
            wall0 = None
            for i, rec in enumerate(samples):
                t, raw = int(rec.t_ms), float(rec.raw)
                if math.isfinite(speed_f):
                    if t0 is None:
                        t0, wall0 = t, time.monotonic()
                    else:
                        delay = wall0 + (t - t0) / 1000.0 / speed_f - time.monotonic()
                        if delay > 0:
                            await asyncio.sleep(delay)
                elif i % 64 == 0:
                    await asyncio.sleep(0)  # let control traffic interleave
                self._ingest_one(t, raw)
            self._emit(self.detector.finish())
            self._flush_batch()
            await asyncio.sleep(0)  # let senders drain one more round
            return self.summary
        finally:
            self._close_sinks()
            for c in list(self.clients):
                c.enqueue(None)
            await asyncio.sleep(0.05)
            for c in list(self.clients):
                if c.sender:
                    c.sender.cancel()
                if c.reader:
                    c.reader.cancel()
                await c.conn.close()
            server.close()
            await server.wait_closed()


def run_session(samples, config: DetectorConfig | None = None,
                rate_hz: float = 60.0, listen=("127.0.0.1", 0), speed=1.0,
                record_dir=".", session_id: str | None = None) -> SessionSummary:
    """Synchronous wrapper: serve one session on a fresh event loop."""
    session = GatewaySession(config, rate_hz, record_dir, session_id)

    async def _main():
        return await session.run(samples, listen, speed)

    return asyncio.run(_main())
