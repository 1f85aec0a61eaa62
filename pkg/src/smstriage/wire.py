"""Line protocol for inbound/outbound SMS frames, a TCP server and file replay.

Wire format (one record per line)::

    IN|<msisdn>|<tower_id or ->|<ISO8601-UTC>|<body>
    OUT|<msisdn>|<body>
    SUB|<msisdn>      subscribe this connection to alerts for msisdn
    PING              answered with PONG
"""

from __future__ import annotations

import asyncio
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol

from .events import format_ts, parse_ts

log = logging.getLogger(__name__)

MSISDN_RE = re.compile(r"\+?[0-9]{7,15}")
GSM7_SUBSET = frozenset("ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 .,:()-+?")
MAX_BODY_IN = 480
MAX_BODY_OUT = 160


class MalformedFrame(ValueError):
    pass


class InvalidReply(ValueError):
    pass


@dataclass(frozen=True)
class InboundFrame:
    msisdn: str
    tower_id: Optional[str]
    received_at: int  # unix seconds
    body: str
    seq: int = 0


@dataclass(frozen=True)
class OutboundMessage:
    msisdn: str
    body: str
    in_reply_to: Optional[int] = None


class FrameHandler(Protocol):
    def handle_frame(self, frame: InboundFrame) -> list[OutboundMessage]: ...


def decode_frame(line: str, seq: int = 0) -> InboundFrame:
    line = line.rstrip("\r\n")
    parts = line.split("|", 4)
    if len(parts) != 5 or parts[0] != "IN":
        raise MalformedFrame(f"expected 5 fields, got {len(parts)}")
    _, msisdn, tower, ts, body = parts
    if not MSISDN_RE.fullmatch(msisdn):
        raise MalformedFrame(f"bad msisdn {msisdn!r}")
    try:
        received_at = parse_ts(ts)
    except (ValueError, OverflowError) as exc:
        raise MalformedFrame(f"bad timestamp {ts!r}") from exc
    if "|" in body:
        raise MalformedFrame("pipe in body")
    if not body.strip() or len(body) > MAX_BODY_IN:
        raise MalformedFrame("body empty or longer than 480 chars")
    if not tower:
        raise MalformedFrame("empty tower field")
    return InboundFrame(msisdn, None if tower == "-" else tower, received_at, body, seq)


def encode_frame(frame: InboundFrame) -> str:
    return f"IN|{frame.msisdn}|{frame.tower_id or '-'}|{format_ts(frame.received_at)}|{frame.body}\n"


def check_reply(msg: OutboundMessage) -> None:
    if not MSISDN_RE.fullmatch(msg.msisdn):
        raise InvalidReply(f"bad msisdn {msg.msisdn!r}")
    if not msg.body or len(msg.body) > MAX_BODY_OUT:
        raise InvalidReply(f"body length {len(msg.body)} outside 1..160")
    bad = set(msg.body) - GSM7_SUBSET
    if bad:
        raise InvalidReply(f"characters outside GSM-7 subset: {sorted(bad)!r}")


def encode_reply(msg: OutboundMessage) -> str:
    check_reply(msg)
    return f"OUT|{msg.msisdn}|{msg.body}\n"


def decode_reply(line: str) -> OutboundMessage:
    parts = line.rstrip("\r\n").split("|")
    if len(parts) != 3 or parts[0] != "OUT":
        raise InvalidReply("expected OUT|<msisdn>|<body>")
    msg = OutboundMessage(parts[1], parts[2])
    check_reply(msg)
    return msg


@dataclass(frozen=True)
class ReplaySummary:
    frames_in: int
    replies_out: int
    dropped: int


def replay_output_path(path: Path) -> Path:
    return path.with_name(path.stem + ".out" + path.suffix)


def replay_file(path, core: FrameHandler, out_path=None) -> ReplaySummary:
    """Feed every ``IN`` line of ``path`` to ``core`` in file order.

    Replies are written to ``out_path`` (default: ``<stem>.out<suffix>`` next
    to the input), which is truncated first so repeated runs are identical.
    If ``core`` has a ``finish()`` method its trailing replies are written too.
    """
    path = Path(path)
    out_path = Path(out_path) if out_path else replay_output_path(path)
    frames_in = replies_out = dropped = 0
    with open(path, encoding="utf-8", newline="\n") as src, \
            open(out_path, "w", encoding="utf-8", newline="\n") as out:
        for line in src:
            if not line.strip():
                continue
            try:
                frame = decode_frame(line, seq=frames_in)
            except MalformedFrame as exc:
                log.warning("dropped line: %s", exc)
                dropped += 1
                continue
            frames_in += 1
            for msg in core.handle_frame(frame):
                out.write(encode_reply(msg))
                replies_out += 1
        finish = getattr(core, "finish", None)
        if finish is not None:
            for msg in finish():
                out.write(encode_reply(msg))
                replies_out += 1
    return ReplaySummary(frames_in, replies_out, dropped)


class Gateway:
    """TCP front end. Connections are concurrent; the core sees one frame at a time."""

    def __init__(self, core: FrameHandler):
        self.core = core
        self.seq = 0
        self.subscribers: dict[str, set[asyncio.StreamWriter]] = {}
        self.queue: asyncio.Queue = asyncio.Queue()
        self.server: Optional[asyncio.AbstractServer] = None
        self._consumer: Optional[asyncio.Task] = None

    async def start(self, host: str, port: int) -> int:
        try:
            self.server = await asyncio.start_server(self._client, host, port)
        except OSError as exc:
            raise BindFailure(f"cannot bind {host}:{port}: {exc}") from exc
        self._consumer = asyncio.create_task(self._consume())
        return self.server.sockets[0].getsockname()[1]

    async def stop(self) -> None:
        if self.server is not None:
            self.server.close()
            await self.server.wait_closed()
        if self._consumer is not None:
            self._consumer.cancel()

    async def _client(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        try:
            while True:
                raw = await reader.readline()
                if not raw:
                    break
                line = raw.decode("utf-8", errors="replace").rstrip("\r\n")
                if line == "PING":
                    writer.write(b"PONG\n")
                    await writer.drain()
                elif line.startswith("SUB|"):
                    msisdn = line[4:]
                    if MSISDN_RE.fullmatch(msisdn):
                        self.subscribers.setdefault(msisdn, set()).add(writer)
                    else:
                        log.warning("bad SUB line %r", line)
                elif line.startswith("IN|"):
                    try:
                        frame = decode_frame(line, seq=self.seq)
                    except MalformedFrame as exc:
                        log.warning("dropped frame: %s", exc)
                        continue
                    self.seq += 1
                    await self.queue.put((frame, writer))
                elif line:
                    log.warning("dropped line %r", line[:60])
        except (ConnectionError, asyncio.IncompleteReadError, ValueError) as exc:
            log.info("connection closed: %s", exc)
        finally:
            for subs in self.subscribers.values():
                subs.discard(writer)
            writer.close()

    async def _consume(self) -> None:
        while True:
            frame, origin = await self.queue.get()
            try:
                replies = self.core.handle_frame(frame)
            except Exception:  # the loop must survive any frame
                log.exception("core failed on frame %d", frame.seq)
                replies = []
            for msg in replies:
                if msg.in_reply_to is not None:
                    targets = [origin]
                else:
                    targets = list(self.subscribers.get(msg.msisdn, ()))
                for w in targets:
                    if w.is_closing():
                        continue
                    try:
                        w.write(encode_reply(msg).encode("ascii"))
                        await w.drain()
                    except ConnectionError as exc:
                        log.info("write failed: %s", exc)
            self.queue.task_done()


class BindFailure(OSError):
    pass


def serve(host: str, port: int, core: FrameHandler) -> None:
    """Run the gateway until interrupted."""

    async def main():
        gw = Gateway(core)
        bound = await gw.start(host, port)
        log.info("listening on %s:%d", host, bound)
        try:
            await asyncio.Event().wait()
        finally:
            await gw.stop()

    try:
        asyncio.run(main())
    except KeyboardInterrupt:
        pass
