"""Wire protocol: golden bytes, fuzzed roundtrips, stream codec."""

import io
import struct

import numpy as np
import pytest

from slwn.geometry import Box
from slwn.steerd import protocol as proto
from slwn.window import CellBatch, WindowQuery

GOLDEN_HANDSHAKE = b"SLWN" + bytes([1, 0]) + bytes([4, 3, 2, 1]) + bytes([4, 8])


class TestHandshake:
    def test_golden_bytes(self):
        assert proto.handshake_bytes() == GOLDEN_HANDSHAKE
        assert len(proto.handshake_bytes()) == 12

    def test_accepts_itself(self):
        proto.check_handshake(proto.handshake_bytes())

    def test_reversed_probe_rejected(self):
        bad = b"SLWN" + bytes([1, 0]) + bytes([1, 2, 3, 4]) + bytes([4, 8])
        with pytest.raises(proto.ProtocolError) as err:
            proto.check_handshake(bad)
        assert err.value.code == proto.ERR_HANDSHAKE

    def test_bad_magic_rejected(self):
        with pytest.raises(proto.ProtocolError):
            proto.check_handshake(b"NWLS" + GOLDEN_HANDSHAKE[4:])

    def test_bad_sizes_rejected(self):
        bad = GOLDEN_HANDSHAKE[:10] + bytes([8, 4])
        with pytest.raises(proto.ProtocolError):
            proto.check_handshake(bad)

    def test_wrong_version_rejected(self):
        bad = b"SLWN" + bytes([2, 0]) + GOLDEN_HANDSHAKE[6:]
        with pytest.raises(proto.ProtocolError):
            proto.check_handshake(bad)


class TestFrames:
    def test_layout(self):
        f = proto.Frame(proto.CMD_VIS, b"abc")
        data = f.encode()
        assert data[:1] == b"V"
        assert struct.unpack("<I", data[1:5])[0] == 3
        assert data[5:] == b"abc"

    def test_roundtrip_via_buffer(self):
        f = proto.Frame(proto.CMD_STEER, b"12345")
        got, used = proto.decode_frame(f.encode() + b"extra")
        assert got == f and used == 10

    def test_read_frame_stream(self):
        frames = [proto.Frame(proto.CMD_VIS, b"x" * 7),
                  proto.Frame(proto.CMD_QUIT, b"")]
        buf = io.BytesIO(b"".join(f.encode() for f in frames))
        assert proto.read_frame(buf) == frames[0]
        assert proto.read_frame(buf) == frames[1]
        with pytest.raises(EOFError):
            proto.read_frame(buf)

    def test_oversized_rejected(self):
        head = struct.pack("<BI", proto.CMD_VIS, proto.MAX_FRAME_BYTES + 1)
        with pytest.raises(proto.ProtocolError) as err:
            proto.read_frame(io.BytesIO(head))
        assert err.value.code == proto.ERR_OVERSIZED

    def test_truncated_payload_rejected(self):
        data = struct.pack("<BI", proto.CMD_VIS, 10) + b"short"
        with pytest.raises(proto.ProtocolError):
            proto.read_frame(io.BytesIO(data))

    def test_fuzz_roundtrip_10k(self):
        rng = np.random.default_rng(99)
        commands = list(proto.CLIENT_COMMANDS + proto.SERVER_COMMANDS)
        for _ in range(10000):
            cmd = int(rng.choice(commands))
            n = int(rng.integers(0, 64))
            payload = rng.integers(0, 256, n, dtype=np.uint8).tobytes()
            frame = proto.Frame(cmd, payload)
            got, used = proto.decode_frame(frame.encode())
            assert got == frame
            assert used == 5 + n


class TestQueryCodec:
    def test_roundtrip(self):
        q = WindowQuery(Box((0, 0.5, 0), (0.5, 1, 0.1)), 400, "pressure")
        frame = proto.encode_vis_query(q, sim_id=3)
        assert frame.command == proto.CMD_VIS
        got, sim_id = proto.decode_vis_query(frame.payload)
        assert sim_id == 3
        assert got == q

    def test_bad_quantity_code(self):
        q = WindowQuery(Box((0, 0, 0), (1, 1, 1)), 10)
        payload = bytearray(proto.encode_vis_query(q).payload)
        payload[8] = 200
        with pytest.raises(proto.ProtocolError) as err:
            proto.decode_vis_query(bytes(payload))
        assert err.value.code == proto.ERR_BAD_QUERY

    def test_zero_budget_rejected(self):
        q = WindowQuery(Box((0, 0, 0), (1, 1, 1)), 1)
        payload = bytearray(proto.encode_vis_query(q).payload)
        payload[9:13] = b"\0\0\0\0"
        with pytest.raises(proto.ProtocolError):
            proto.decode_vis_query(bytes(payload))


class TestSteerAndAck:
    def test_steer_roundtrip(self):
        cmd = {"kind": "set_viscosity", "value": 0.02}
        frame = proto.encode_steer(cmd)
        assert proto.decode_steer(frame.payload) == cmd

    def test_steer_requires_kind(self):
        with pytest.raises(proto.ProtocolError):
            proto.decode_steer(b'{"value": 1}')
        with pytest.raises(proto.ProtocolError):
            proto.decode_steer(b"not json")

    def test_ack_roundtrip(self):
        frame = proto.encode_ack(1234, 7)
        assert proto.decode_ack(frame.payload) == (1234, 7)

    def test_error_roundtrip(self):
        frame = proto.encode_error(proto.ERR_STALE, "re-query please")
        assert proto.decode_error(frame.payload) == (proto.ERR_STALE,
                                                     "re-query please")

    def test_metrics_roundtrip(self):
        frame = proto.encode_metrics_request(2)
        assert proto.decode_metrics_request(frame.payload) == 2
        reply = proto.encode_metrics_reply({"step": 5, "t": 0.25})
        assert proto.decode_metrics_reply(reply.payload) == {"step": 5, "t": 0.25}


def random_batch(rng, count, quantity="velocity"):
    arity = {"velocity": 3, "pressure": 1, "velocity_magnitude": 1}[quantity]
    return CellBatch(
        quantity,
        rng.normal(size=(count, 3)),
        np.abs(rng.normal(size=(count, 3))) + 0.01,
        rng.integers(0, 7, count).astype(np.uint8),
        rng.normal(size=(count, arity)),
        version=int(rng.integers(0, 100)),
        time=float(rng.uniform(0, 10)),
    )


class TestCellStream:
    @pytest.mark.parametrize("quantity", ["velocity", "pressure",
                                          "velocity_magnitude"])
    def test_roundtrip_bijective(self, rng, quantity):
        batch = random_batch(rng, 57, quantity)
        payload = proto.encode_cellstream(batch)
        got = proto.decode_cellstream(payload)
        assert got.quantity == batch.quantity
        assert got.count == batch.count
        assert got.version == batch.version
        assert got.time == batch.time
        np.testing.assert_array_equal(got.centers, batch.centers)
        np.testing.assert_array_equal(got.widths, batch.widths)
        np.testing.assert_array_equal(got.levels, batch.levels)
        np.testing.assert_array_equal(got.values, batch.values)

    def test_empty_stream_valid(self):
        batch = CellBatch("pressure", np.zeros((0, 3)), np.zeros((0, 3)),
                          np.zeros(0, dtype=np.uint8), np.zeros((0, 1)), 0, 0.0)
        got = proto.decode_cellstream(proto.encode_cellstream(batch))
        assert got.count == 0

    def test_compression_flag_and_threshold(self, rng):
        small = random_batch(rng, 10)
        large = random_batch(rng, 2000)  # 2000 * 73 bytes > 64 KiB
        p_small = proto.encode_cellstream(small)
        p_large = proto.encode_cellstream(large)
        assert p_small[1] & 1 == 0
        assert p_large[1] & 1 == 1
        got = proto.decode_cellstream(p_large)
        np.testing.assert_array_equal(got.values, large.values)

    def test_record_size(self, rng):
        batch = random_batch(rng, 3, "pressure")
        payload = proto.encode_cellstream(batch, compress=False)
        # header 22 bytes, record: 6*8 + 1 + 1*8 = 57
        assert len(payload) == 22 + 3 * 57

    def test_deterministic_bytes(self, rng):
        batch = random_batch(rng, 500)
        assert proto.encode_cellstream(batch) == proto.encode_cellstream(batch)

    def test_truncated_body_rejected(self, rng):
        payload = proto.encode_cellstream(random_batch(rng, 4), compress=False)
        with pytest.raises(proto.ProtocolError):
            proto.decode_cellstream(payload[:-3])
