"""Minimal WebSocket (RFC 6455) framing over asyncio streams.

Just enough protocol for the gateway and its browser/test clients: HTTP
upgrade handshake, unfragmented text frames, ping/pong, and close. Client
frames are masked as the RFC requires; server frames are not. Fragmented
messages are not supported (gateway messages are far below frame limits).
"""

from __future__ import annotations

import asyncio
import base64
import hashlib
import os
import struct

_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

OP_CONT = 0x0
OP_TEXT = 0x1
OP_BINARY = 0x2
OP_CLOSE = 0x8
OP_PING = 0x9
OP_PONG = 0xA


class WsError(Exception):
    """Handshake or framing violation."""


def accept_key(client_key: str) -> str:
    digest = hashlib.sha1((client_key + _GUID).encode()).digest()
    return base64.b64encode(digest).decode()


def _encode_frame(opcode: int, payload: bytes, mask: bool) -> bytes:
    head = bytearray([0x80 | opcode])
    n = len(payload)
    mask_bit = 0x80 if mask else 0x00
    if n < 126:
        head.append(mask_bit | n)
    elif n < 1 << 16:
        head.append(mask_bit | 126)
        head += struct.pack(">H", n)
    else:
        head.append(mask_bit | 127)
        head += struct.pack(">Q", n)
    if mask:
        key = os.urandom(4)
        head += key
        payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
    return bytes(head) + payload


async def _read_exact(reader: asyncio.StreamReader, n: int) -> bytes:
    try:
        return await reader.readexactly(n)
    except (asyncio.IncompleteReadError, ConnectionResetError):
        raise WsError("connection closed mid-frame") from None


async def _read_frame(reader: asyncio.StreamReader) -> tuple[int, bytes]:
    b0, b1 = await _read_exact(reader, 2)
    if not b0 & 0x80:
        raise WsError("fragmented frames are not supported")
    opcode = b0 & 0x0F
    masked = bool(b1 & 0x80)
    n = b1 & 0x7F
    if n == 126:
        (n,) = struct.unpack(">H", await _read_exact(reader, 2))
    elif n == 127:
        (n,) = struct.unpack(">Q", await _read_exact(reader, 8))
    key = await _read_exact(reader, 4) if masked else None
    payload = await _read_exact(reader, n)
    if key:
        payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
    return opcode, payload


class WsConnection:
    """One open WebSocket; ``recv_text`` returns None once the peer closes."""

    def __init__(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter,
                 client_side: bool):
        self._reader = reader
        self._writer = writer
        self._mask = client_side  # clients mask, servers do not
        self.closed = False

    async def send_text(self, text: str) -> None:
        if self.closed:
            raise WsError("connection is closed")
        self._writer.write(_encode_frame(OP_TEXT, text.encode(), self._mask))
        await self._writer.drain()

    async def recv_text(self) -> str | None:
        while not self.closed:
            try:
                opcode, payload = await _read_frame(self._reader)
            except WsError:
                await self._shutdown()
                return None
            if opcode == OP_TEXT:
                return payload.decode()
            if opcode == OP_PING:
                self._writer.write(_encode_frame(OP_PONG, payload, self._mask))
                await self._writer.drain()
            elif opcode == OP_CLOSE:
                if not self.closed:
                    self._writer.write(
                        _encode_frame(OP_CLOSE, payload[:2], self._mask))
                    try:
                        await self._writer.drain()
                    except ConnectionError:
                        pass
                await self._shutdown()
                return None
            elif opcode == OP_PONG:
                continue
            else:
                await self.close(1003)
                return None
        return None

    async def close(self, code: int = 1000) -> None:
        if self.closed:
            return
        try:
            self._writer.write(
                _encode_frame(OP_CLOSE, struct.pack(">H", code), self._mask))
            await self._writer.drain()
        except ConnectionError:
            pass
        await self._shutdown()

    async def _shutdown(self) -> None:
        self.closed = True
        try:
            self._writer.close()
            await self._writer.wait_closed()
        except (ConnectionError, OSError):
            pass


async def _read_http_head(reader: asyncio.StreamReader) -> list[str]:
    head = await reader.readuntil(b"\r\n\r\n")
    return head.decode("latin-1").split("\r\n")


async def server_handshake(reader: asyncio.StreamReader,
                           writer: asyncio.StreamWriter) -> str:
    """Answer an HTTP upgrade; returns the request path."""
    try:
        lines = await _read_http_head(reader)
    except (asyncio.IncompleteReadError, asyncio.LimitOverrunError):
        raise WsError("bad handshake: truncated request") from None
    request = lines[0].split()
    if len(request) != 3 or request[0] != "GET":
        raise WsError(f"bad handshake: {lines[0]!r}")
    headers = {}
    for line in lines[1:]:
        if ":" in line:
            k, v = line.split(":", 1)
            headers[k.strip().lower()] = v.strip()
    key = headers.get("sec-websocket-key")
    if headers.get("upgrade", "").lower() != "websocket" or not key:
        writer.write(b"HTTP/1.1 400 Bad Request\r\n\r\n")
        await writer.drain()
        raise WsError("bad handshake: not a websocket upgrade")
    writer.write((
        "HTTP/1.1 101 Switching Protocols\r\n"
        "Upgrade: websocket\r\n"
        "Connection: Upgrade\r\n"
        f"Sec-WebSocket-Accept: {accept_key(key)}\r\n\r\n").encode())
    await writer.drain()
    return request[1]


async def connect(host: str, port: int, path: str = "/") -> WsConnection:
    """Open a client connection and complete the upgrade handshake."""
    reader, writer = await asyncio.open_connection(host, port)
    key = base64.b64encode(os.urandom(16)).decode()
    writer.write((
        f"GET {path} HTTP/1.1\r\n"
        f"Host: {host}:{port}\r\n"
        "Upgrade: websocket\r\n"
        "Connection: Upgrade\r\n"
        f"Sec-WebSocket-Key: {key}\r\n"
        "Sec-WebSocket-Version: 13\r\n\r\n").encode())
    await writer.drain()
    lines = await _read_http_head(reader)
    if "101" not in lines[0]:
        writer.close()
        raise WsError(f"handshake rejected: {lines[0]!r}")
    expected = accept_key(key)
    got = [l.split(":", 1)[1].strip() for l in lines[1:]
           if l.lower().startswith("sec-websocket-accept:")]
    if got != [expected]:
        writer.close()
        raise WsError("handshake accept key mismatch")
    return WsConnection(reader, writer, client_side=True)
