import asyncio

import pytest
from hypothesis import given, strategies as st

from smstriage.events import parse_ts
from smstriage.wire import (
    GSM7_SUBSET, Gateway, InboundFrame, InvalidReply, MalformedFrame, OutboundMessage,
    decode_frame, decode_reply, encode_frame, encode_reply, replay_file,
)


def test_decode_frame_fields():
    f = decode_frame("IN|+22462000001|GN-CKY-014|2014-10-20T08:15:00Z|fever vomiting kindia\n", seq=4)
    assert f.msisdn == "+22462000001"
    assert f.tower_id == "GN-CKY-014"
    assert f.received_at == parse_ts("2014-10-20T08:15:00Z")
    assert f.body == "fever vomiting kindia"
    assert f.seq == 4


def test_decode_frame_dash_tower():
    f = decode_frame("IN|+22462000002|-|2014-10-20T08:16:00Z|YES A3F2K9")
    assert f.tower_id is None
    assert f.body == "YES A3F2K9"


@pytest.mark.parametrize("line", [
    "IN|+224|x",
    "IN|+224|-|2014-10-20T08:16:00Z|fever",              # msisdn too short
    "IN|+22462000002|-|2014-13-20T08:16:00Z|fever",      # month 13
    "IN|+22462000002|-|2014-10-20 08:16:00|fever",       # not ISO / no zone
    "IN|+22462000002|-|2014-10-20T08:16:00Z|   ",        # blank body
    "IN|+22462000002|-|2014-10-20T08:16:00Z|a|b",        # pipe in body
    "IN|+22462000002||2014-10-20T08:16:00Z|fever",       # empty tower
    "OUT|+22462000002|hello",
    "IN|+22462000002|-|2014-10-20T08:16:00Z|" + "x" * 481,
])
def test_decode_frame_rejects(line):
    with pytest.raises(MalformedFrame):
        decode_frame(line)


def test_body_limit_480_accepted():
    assert len(decode_frame("IN|+22462000002|-|2014-10-20T08:16:00Z|" + "x" * 480).body) == 480


def test_encode_reply():
    assert encode_reply(OutboundMessage("+22462000001", "PONG")) == "OUT|+22462000001|PONG\n"


def test_encode_reply_limits():
    encode_reply(OutboundMessage("+22462000001", "A" * 160))
    with pytest.raises(InvalidReply):
        encode_reply(OutboundMessage("+22462000001", "A" * 161))
    with pytest.raises(InvalidReply):
        encode_reply(OutboundMessage("+22462000001", "A|B"))
    with pytest.raises(InvalidReply):
        encode_reply(OutboundMessage("+22462000001", "lowercase"))


gsm_bodies = st.text(alphabet=sorted(GSM7_SUBSET), min_size=1, max_size=160)
msisdns = st.from_regex(r"\+?[0-9]{7,15}", fullmatch=True)


@given(msisdns, gsm_bodies)
def test_reply_round_trip(msisdn, body):
    msg = OutboundMessage(msisdn, body)
    assert decode_reply(encode_reply(msg)) == msg


@given(msisdns, st.one_of(st.none(), st.from_regex(r"[A-Z]{2}-[A-Z0-9]{1,8}", fullmatch=True)),
       st.integers(0, 2 ** 31), st.text(alphabet="abcdefgh xyz019", min_size=1, max_size=480))
def test_frame_round_trip(msisdn, tower, ts, body):
    if not body.strip():
        return
    f = InboundFrame(msisdn, tower, ts, body, 0)
    assert decode_frame(encode_frame(f)) == f


class Echo:
    def __init__(self):
        self.seen = []

    def handle_frame(self, frame):
        self.seen.append(frame.seq)
        out = [OutboundMessage(frame.msisdn, f"ECHO {frame.seq}", frame.seq)]
        if frame.body == "alert":
            out.append(OutboundMessage("+22400000009", "ALERT", None))
        return out


def test_replay_empty(tmp_path):
    p = tmp_path / "empty.txt"
    p.write_text("")
    s = replay_file(p, Echo())
    assert (s.frames_in, s.replies_out, s.dropped) == (0, 0, 0)
    assert (tmp_path / "empty.out.txt").read_text() == ""


def test_replay_counts_and_output(tmp_path):
    p = tmp_path / "in.txt"
    p.write_text(
        "IN|+22462000001|-|2014-10-20T08:15:00Z|hello\n"
        "garbage\n"
        "\n"
        "IN|+22462000001|-|2014-10-20T08:16:00Z|alert\n"
    )
    core = Echo()
    s = replay_file(p, core)
    assert (s.frames_in, s.replies_out, s.dropped) == (2, 3, 1)
    assert core.seen == [0, 1]
    lines = (tmp_path / "in.out.txt").read_text().splitlines()
    assert lines == ["OUT|+22462000001|ECHO 0", "OUT|+22462000001|ECHO 1", "OUT|+22400000009|ALERT"]


def test_replay_twice_identical(tmp_path):
    p = tmp_path / "in.txt"
    p.write_text("IN|+22462000001|-|2014-10-20T08:15:00Z|hello\n" * 5)
    replay_file(p, Echo())
    first = (tmp_path / "in.out.txt").read_bytes()
    replay_file(p, Echo())
    assert (tmp_path / "in.out.txt").read_bytes() == first


def test_replay_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        replay_file(tmp_path / "nope.txt", Echo())


async def _session():
    core = Echo()
    gw = Gateway(core)
    port = await gw.start("127.0.0.1", 0)
    try:
        r1, w1 = await asyncio.open_connection("127.0.0.1", port)
        r2, w2 = await asyncio.open_connection("127.0.0.1", port)
        w1.write(b"PING\n")
        await w1.drain()
        pong = await asyncio.wait_for(r1.readline(), 5)

        w2.write(b"SUB|+22400000009\n")
        await w2.drain()
        await asyncio.sleep(0.05)
        w1.write(b"not a frame\nIN|+22462000001|-|2014-10-20T08:15:00Z|hello\n")
        await w1.drain()
        echo0 = await asyncio.wait_for(r1.readline(), 5)
        w2.write(b"IN|+22462000002|-|2014-10-20T08:15:01Z|alert\n")
        await w2.drain()
        echo1 = await asyncio.wait_for(r2.readline(), 5)
        alert = await asyncio.wait_for(r2.readline(), 5)
        for w in (w1, w2):
            w.close()
        return pong, echo0, echo1, alert, core.seen
    finally:
        await gw.stop()


def test_gateway_session():
    pong, echo0, echo1, alert, seen = asyncio.run(_session())
    assert pong == b"PONG\n"
    assert echo0 == b"OUT|+22462000001|ECHO 0\n"
    assert echo1 == b"OUT|+22462000002|ECHO 1\n"
    assert alert == b"OUT|+22400000009|ALERT\n"
    assert seen == [0, 1]


class Slow:
    """Detects overlapping deliveries."""

    def __init__(self):
        self.active = 0
        self.overlap = False
        self.seen = []

    def handle_frame(self, frame):
        self.active += 1
        if self.active > 1:
            self.overlap = True
        self.seen.append(frame.seq)
        self.active -= 1
        return [OutboundMessage(frame.msisdn, "OK", frame.seq)]


async def _many(n_conns, n_frames):
    core = Slow()
    gw = Gateway(core)
    port = await gw.start("127.0.0.1", 0)
    try:
        conns = [await asyncio.open_connection("127.0.0.1", port) for _ in range(n_conns)]
        for i in range(n_frames):
            for _, w in conns:
                w.write(f"IN|+2246200000{i % 10}|-|2014-10-20T08:15:00Z|f{i}\n".encode())
        for _, w in conns:
            await w.drain()
        for r, _ in conns:
            for i in range(n_frames):
                line = await asyncio.wait_for(r.readline(), 5)
                assert line == f"OUT|+2246200000{i % 10}|OK\n".encode()
        for _, w in conns:
            w.close()
        return core
    finally:
        await gw.stop()


def test_gateway_serialized_delivery():
    core = asyncio.run(_many(4, 25))
    assert not core.overlap
    assert core.seen == sorted(core.seen) == list(range(100))


def test_bind_failure():
    from smstriage.wire import BindFailure

    async def go():
        a = Gateway(Echo())
        port = await a.start("127.0.0.1", 0)
        b = Gateway(Echo())
        try:
            with pytest.raises(BindFailure):
                await b.start("127.0.0.1", port)
        finally:
            await a.stop()

    asyncio.run(go())
