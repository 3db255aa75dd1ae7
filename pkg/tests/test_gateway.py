import asyncio
import json

import numpy as np
import pytest

from capblink import capsim, wsproto
from capblink.detector import DetectorConfig, detect_offline
from capblink.gateway import GatewaySession
from capblink.stream_io import read_stream


class WsClient:
    """Scripted test subscriber speaking the gateway protocol."""

    def __init__(self):
        self.messages = []

    async def connect(self, address):
        self.conn = await wsproto.connect(address[0], address[1])

    async def recv(self, timeout=5.0):
        text = await asyncio.wait_for(self.conn.recv_text(), timeout)
        if text is None:
            return None
        msg = json.loads(text)
        self.messages.append(msg)
        return msg

    async def drain(self):
        while True:
            try:
                msg = await asyncio.wait_for(self.conn.recv_text(), 0.5)
            except asyncio.TimeoutError:
                return
            if msg is None:
                return
            self.messages.append(json.loads(msg))

    async def send(self, msg):
        await self.conn.send_text(json.dumps(msg))

    def of_kind(self, kind):
        return [m for m in self.messages if m["kind"] == kind]


def short_scenario(seed=2, duration=20_000, clean=True):
    spec = capsim.preset_spec("intentional", seed=seed, duration_ms=duration)
    if clean:
        spec = spec.cleaned()
    return capsim.generate_scenario(spec)


async def run_with_clients(session, samples, n_clients, speed="max",
                           script=None):
    task = asyncio.create_task(
        session.run(samples, speed=speed, await_subscribers=n_clients))
    await session.ready.wait()
    clients = []
    for _ in range(n_clients):
        c = WsClient()
        await c.connect(session.bound_address)
        clients.append(c)
    if script:
        await script(session, clients)
    summary = await task
    for c in clients:
        await c.drain()
    return summary, clients


class TestSessionBasics:
    def test_records_without_subscribers(self, tmp_path):
        samples, truth = short_scenario()
        session = GatewaySession(DetectorConfig(), 60.0, tmp_path, "s0")
        summary = asyncio.run(session.run(samples, speed="max"))
        assert summary.n_samples == len(samples)
        got = list(read_stream(summary.paths["samples"]))
        assert len(got) == len(samples)
        events = list(read_stream(summary.paths["events"]))
        assert len(events) == summary.n_events == len(truth)

    def test_subscriber_sees_every_detection(self, tmp_path):
        samples, truth = short_scenario()

        async def main():
            session = GatewaySession(DetectorConfig(), 60.0, tmp_path, "s1")
            return await run_with_clients(session, samples, 1)

        summary, (client,) = asyncio.run(main())
        assert len(client.of_kind("detection")) == len(truth)
        assert len(client.of_kind("hello")) == 1
        hello = client.of_kind("hello")[0]
        assert hello["proto"] == "capgw v1"
        assert hello["threshold_mode"] == "adaptive"

    def test_batches_bounded_and_seq_increasing(self, tmp_path):
        samples, _ = short_scenario()

        async def main():
            session = GatewaySession(DetectorConfig(), 60.0, tmp_path, "s2")
            return await run_with_clients(session, samples, 1)

        _, (client,) = asyncio.run(main())
        batches = client.of_kind("sample_batch")
        assert batches and all(len(b["samples"]) <= 6 for b in batches)
        seqs = [m["seq"] for m in client.messages]
        assert seqs == sorted(seqs) and len(set(seqs)) == len(seqs)
        # batch content mirrors the stream: [t_ms, raw, variation|null]
        flat = [s for b in batches for s in b["samples"]]
        assert flat[0][2] is None and flat[1][2] is not None

    def test_detector_isolated_from_subscriber_count(self, tmp_path):
        samples, _ = short_scenario(seed=5, clean=False)
        blobs = {}
        for n in (0, 1, 3):
            async def main(n=n):
                session = GatewaySession(DetectorConfig(), 60.0,
                                         tmp_path / f"d{n}", f"iso{n}")
                if n == 0:
                    return await session.run(samples, speed="max"), []
                return await run_with_clients(session, samples, n)

            summary = asyncio.run(main())[0]
            if isinstance(summary, tuple):
                summary = summary[0]
            with open(summary.paths["events"], "rb") as f:
                blobs[n] = f.read().split(b"\n", 1)[1]  # drop header
        assert blobs[0] == blobs[1] == blobs[3]

    def test_events_file_matches_offline_detector(self, tmp_path):
        samples, _ = short_scenario(seed=9, clean=False)
        session = GatewaySession(DetectorConfig(), 60.0, tmp_path, "s3")
        summary = asyncio.run(session.run(samples, speed="max"))
        offline = detect_offline(samples.t_ms, samples.raw, DetectorConfig())
        got = list(read_stream(summary.paths["events"]))
        assert sorted((e.peak_t_ms, e.peak_v) for e in got) == \
               [(e.peak_t_ms, e.peak_v) for e in offline]


class TestSetTheta:
    def test_round_trip_and_error_cases(self, tmp_path):
        samples, _ = short_scenario(duration=8000)
        cfg = DetectorConfig(threshold_mode="fixed", theta=11.0)

        async def script(session, clients):
            a, b = clients
            await a.send({"kind": "set_theta", "theta": 12.5})
            # collect until both see the theta_update echo
            for c in (a, b):
                while not c.of_kind("theta_update"):
                    if await c.recv() is None:
                        break
            await a.send({"kind": "set_theta", "theta": -1})
            while not a.of_kind("error"):
                if await a.recv() is None:
                    break

        async def main():
            session = GatewaySession(cfg, 60.0, tmp_path, "s4")
            return await run_with_clients(session, samples, 2, speed=60,
                                          script=script)

        _, (a, b) = asyncio.run(main())
        assert a.of_kind("theta_update")[0]["theta"] == 12.5
        assert b.of_kind("theta_update")[0]["theta"] == 12.5
        assert "bad theta" in a.of_kind("error")[0]["message"]
        assert not b.of_kind("error")

    def test_rejected_in_adaptive_mode(self, tmp_path):
        samples, _ = short_scenario(duration=6000)

        async def script(session, clients):
            (a,) = clients
            await a.send({"kind": "set_theta", "theta": 9.0})
            while not a.of_kind("error"):
                if await a.recv() is None:
                    break

        async def main():
            session = GatewaySession(DetectorConfig(), 60.0, tmp_path, "s5")
            return await run_with_clients(session, samples, 1, speed=60,
                                          script=script)

        _, (a,) = asyncio.run(main())
        assert "adaptive" in a.of_kind("error")[0]["message"]
        assert not a.of_kind("theta_update")

    def test_lowering_theta_increases_detections(self, tmp_path):
        samples, truth = short_scenario(seed=3, duration=60_000)

        def run(theta):
            cfg = DetectorConfig(threshold_mode="fixed", theta=theta)
            session = GatewaySession(cfg, 60.0, tmp_path / f"t{theta}", "s6")
            return asyncio.run(session.run(samples, speed="max"))

        high = run(1000.0)
        low = run(5.0)
        assert low.n_events > high.n_events
        assert low.n_events == len(truth)


class TestLabels:
    def test_mark_persisted_before_ack(self, tmp_path):
        samples, _ = short_scenario(duration=8000)
        marks = [1000, 2500, 2520]

        async def script(session, clients):
            (a,) = clients
            # wait until the stream has advanced past our mark times
            while True:
                m = await a.recv()
                if m is None:
                    return
                if m["kind"] == "sample_batch" and m["samples"][-1][0] > 3000:
                    break
            for t in marks:
                await a.send({"kind": "label_mark", "t_ms": t})
            while len(a.of_kind("label_mark")) < len(marks):
                if await a.recv() is None:
                    break

        async def main():
            session = GatewaySession(DetectorConfig(), 60.0, tmp_path, "s7")
            return await run_with_clients(session, samples, 1, speed=30,
                                          script=script)

        summary, (a,) = asyncio.run(main())
        acks = a.of_kind("label_mark")
        assert [m["t_ms"] for m in acks] == marks
        assert [m["label_seq"] for m in acks] == [1, 2, 3]
        labels = list(read_stream(summary.paths["labels"]))
        assert [l.onset_ms for l in labels] == marks  # 20 ms apart: no dedup
        assert all(l.source == "human" for l in labels)
        assert summary.n_labels == 3

    def test_mark_outside_bounds_rejected(self, tmp_path):
        samples, _ = short_scenario(duration=6000)

        async def script(session, clients):
            (a,) = clients
            while not a.of_kind("sample_batch"):
                if await a.recv() is None:
                    return
            await a.send({"kind": "label_mark", "t_ms": 999_999})
            while not a.of_kind("error"):
                if await a.recv() is None:
                    break

        async def main():
            session = GatewaySession(DetectorConfig(), 60.0, tmp_path, "s8")
            return await run_with_clients(session, samples, 1, speed=60,
                                          script=script)

        summary, (a,) = asyncio.run(main())
        assert "outside session bounds" in a.of_kind("error")[0]["message"]
        assert summary.n_labels == 0


class TestSlowSubscriberPolicy:
    def test_drop_oldest_sets_gap_notice(self):
        from capblink.gateway import CLIENT_QUEUE_MAX, _Client

        async def main():
            client = _Client(conn=None)
            n = CLIENT_QUEUE_MAX + 10
            for i in range(n):
                client.enqueue({"kind": "sample_batch", "seq": i, "samples": []})
            assert client.queue.qsize() == CLIENT_QUEUE_MAX
            assert client.dropped
            first = client.queue.get_nowait()
            assert first["seq"] == 10  # oldest ten were dropped
            # the sender marks the next batch it actually sends
            if client.dropped and first.get("kind") == "sample_batch":
                first = {**first, "gap": True}
                client.dropped = False
            assert first["gap"] is True
            second = client.queue.get_nowait()
            assert "gap" not in second and second["seq"] == 11

        asyncio.run(main())


class TestProtocolEdges:
    def test_unknown_kind_rejected(self, tmp_path):
        samples, _ = short_scenario(duration=4000)

        async def script(session, clients):
            (a,) = clients
            await a.send({"kind": "fly"})
            await a.send("not even an object")
            while len(a.of_kind("error")) < 2:
                if await a.recv() is None:
                    break

        async def main():
            session = GatewaySession(DetectorConfig(), 60.0, tmp_path, "s9")
            return await run_with_clients(session, samples, 1, speed=60,
                                          script=script)

        _, (a,) = asyncio.run(main())
        msgs = [m["message"] for m in a.of_kind("error")]
        assert any("unknown kind" in m for m in msgs)
        assert any("malformed" in m for m in msgs)
