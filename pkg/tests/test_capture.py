import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modbus_anomaly import capture
from modbus_anomaly.capture import (
    TCP_ACK,
    TCP_PSH,
    TCP_SYN,
    Frame,
    PacketRecord,
    RawCapture,
    build_mbap,
    build_tcp_frame,
    build_udp_frame,
    dissect,
    read_pcap,
    track_lost_segments,
    write_pcap,
)

MTU = ("02:00:00:00:00:01", "10.0.0.1")
RTU = ("02:00:00:00:01:01", "10.0.0.11")


def modbus_frame(**kw):
    mbap = build_mbap(kw.get("tid", 1), kw.get("unit", 1), kw.get("fc", 3), kw.get("data", b"\x00\x00\x00\x0a"))
    return build_tcp_frame(MTU[0], RTU[0], MTU[1], RTU[1], 40001, 502, 1000, 1, TCP_PSH | TCP_ACK, mbap)


def big_endian_twin(le: bytes) -> bytes:
    """Re-encode a little-endian pcap with every header field byte-swapped."""
    fields = struct.unpack_from("<IHHiIII", le, 0)
    out = bytearray(struct.pack(">IHHiIII", *fields))
    offset = 24
    while offset < len(le):
        sec, usec, incl, orig = struct.unpack_from("<IIII", le, offset)
        out += struct.pack(">IIII", sec, usec, incl, orig)
        out += le[offset + 16:offset + 16 + incl]
        offset += 16 + incl
    return bytes(out)


# pcap container

def test_empty_capture_is_bare_global_header():
    data = write_pcap(RawCapture())
    assert len(data) == 24
    assert read_pcap(data) == RawCapture()


def test_one_sixty_byte_frame_is_one_hundred_bytes():
    assert len(write_pcap(RawCapture((Frame(0, bytes(60)),)))) == 100


def test_three_frame_round_trip():
    cap = RawCapture(tuple(Frame(1_546_300_800_000_000 + i * 1500, modbus_frame(tid=i)) for i in range(3)))
    assert read_pcap(write_pcap(cap)) == cap


def test_big_endian_twin_decodes_identically():
    cap = RawCapture((Frame(1_600_000_000_123_456, modbus_frame()), Frame(1_600_000_001_000_001, bytes(14))))
    le = write_pcap(cap)
    be = big_endian_twin(le)
    assert be[:4] == bytes.fromhex("a1b2c3d4")
    assert read_pcap(be) == read_pcap(le) == cap


def test_bad_magic():
    with pytest.raises(capture.BadMagic):
        read_pcap(b"\x00" * 24)


def test_truncated_record():
    data = write_pcap(RawCapture((Frame(0, bytes(60)),)))
    with pytest.raises(capture.Truncated):
        read_pcap(data[:-1])
    with pytest.raises(capture.Truncated):
        read_pcap(data[:30])


def test_non_ethernet_link_type():
    data = bytearray(write_pcap(RawCapture()))
    data[20:24] = struct.pack("<I", 101)
    with pytest.raises(capture.UnsupportedLinkType):
        read_pcap(bytes(data))


frames = st.lists(
    st.tuples(st.integers(0, 2**32 - 1), st.integers(0, 999_999), st.binary(min_size=1, max_size=200)),
    max_size=12,
)


@given(frames)
def test_round_trip_property(items):
    cap = RawCapture(tuple(Frame(s * 1_000_000 + us, data) for s, us, data in items))
    assert read_pcap(write_pcap(cap)) == cap


# dissection

def test_minimal_ethernet_frame():
    rec = dissect(bytes(6) + bytes.fromhex("020000000001") + b"\x08\x06", 5, 1)
    assert rec.eth_src == "02:00:00:00:00:01" and rec.eth_dst == "00:00:00:00:00:00"
    assert rec.ip_src is None and rec.tcp_srcport is None and rec.udp_srcport is None
    assert rec.frame_len == 14 and rec.frame_time == 5 and rec.frame_number == 1


def test_modbus_frame_matches_reference_dissector():
    scapy_all = pytest.importorskip("scapy.all")
    data = build_tcp_frame(MTU[0], RTU[0], MTU[1], RTU[1], 40001, 502, 7, 1, TCP_PSH | TCP_ACK,
                           bytes.fromhex("0001 0000 0006 01 03 0000 000a"))
    rec = dissect(data, 0, 1)
    ref = scapy_all.Ether(data)
    assert rec.eth_src == ref.src and rec.eth_dst == ref.dst
    assert rec.ip_src == ref["IP"].src and rec.ip_dst == ref["IP"].dst and rec.ip_proto == ref["IP"].proto
    assert (rec.tcp_srcport, rec.tcp_dstport) == (ref["TCP"].sport, ref["TCP"].dport)
    assert rec.tcp_flags == int(ref["TCP"].flags) and rec.tcp_seq == ref["TCP"].seq
    payload = bytes(ref["TCP"].payload)
    assert rec.tcp_len == len(payload)
    tid, pid, length, unit, fc = struct.unpack(">HHHBB", payload[:8])
    assert rec.modbus == capture.ModbusAdu(1, 0, 6, 1, 3, bytes.fromhex("0000000a"))
    assert (tid, pid, length, unit, fc) == (1, 0, 6, 1, 3)


def test_udp_frame_has_no_tcp_fields():
    rec = dissect(build_udp_frame(MTU[0], RTU[0], MTU[1], RTU[1], 5353, 53, b"xyz"), 0, 1)
    assert (rec.udp_srcport, rec.udp_dstport) == (5353, 53)
    assert rec.tcp_srcport is None and rec.tcp_flags is None and rec.modbus is None


def test_modbus_needs_port_502_and_payload():
    bare = build_tcp_frame(MTU[0], RTU[0], MTU[1], RTU[1], 40001, 502, 1, 0, TCP_SYN)
    assert dissect(bare, 0, 1).modbus is None
    other = build_tcp_frame(MTU[0], RTU[0], MTU[1], RTU[1], 40001, 5020, 1, 0, TCP_PSH,
                            build_mbap(1, 1, 3, b"\x00\x00\x00\x01"))
    assert dissect(other, 0, 1).modbus is None


def test_too_short_frame_is_a_warning():
    rec = dissect(b"\x01" * 10, 0, 3)
    assert rec.eth_src is None and rec.warnings and "TooShort" in rec.warnings[0]


def test_ipv6_is_flagged():
    rec = dissect(bytes(12) + b"\x86\xdd" + bytes(40), 0, 1)
    assert rec.eth_src is not None and rec.ip_src is None
    assert any("IPv6" in w for w in rec.warnings)


def test_declared_length_beyond_frame_is_malformed():
    data = bytearray(modbus_frame())
    data[16:18] = struct.pack(">H", 1500)
    rec = dissect(bytes(data), 0, 1)
    assert rec.ip_src is None and any("MalformedHeader" in w for w in rec.warnings)


@settings(max_examples=300)
@given(st.binary(min_size=14, max_size=120))
def test_dissection_is_total(data):
    rec = dissect(data, 0, 1)
    assert rec.eth_src is not None
    assert rec.tcp_srcport is None or rec.udp_srcport is None


@settings(max_examples=200)
@given(
    src_mac=st.binary(min_size=6, max_size=6), dst_mac=st.binary(min_size=6, max_size=6),
    src_ip=st.integers(0, 2**32 - 1), dst_ip=st.integers(0, 2**32 - 1),
    sport=st.integers(0, 65535), dport=st.integers(0, 65535),
    seq=st.integers(0, 2**32 - 1), flags=st.integers(0, 255),
    payload=st.binary(max_size=40), udp=st.booleans(),
)
def test_field_faithfulness(src_mac, dst_mac, src_ip, dst_ip, sport, dport, seq, flags, payload, udp):
    import ipaddress
    macs = [":".join(f"{b:02x}" for b in m) for m in (src_mac, dst_mac)]
    ips = [str(ipaddress.IPv4Address(v)) for v in (src_ip, dst_ip)]
    if udp:
        data = build_udp_frame(macs[0], macs[1], ips[0], ips[1], sport, dport, payload)
    else:
        data = build_tcp_frame(macs[0], macs[1], ips[0], ips[1], sport, dport, seq, 0, flags, payload)
    rec = dissect(data, 42, 9)
    assert (rec.eth_src, rec.eth_dst, rec.ip_src, rec.ip_dst) == (macs[0], macs[1], ips[0], ips[1])
    assert rec.frame_len == len(data)
    if udp:
        assert (rec.ip_proto, rec.udp_srcport, rec.udp_dstport) == (17, sport, dport)
        assert rec.tcp_srcport is None
    else:
        assert (rec.ip_proto, rec.tcp_srcport, rec.tcp_dstport) == (6, sport, dport)
        assert (rec.tcp_seq, rec.tcp_flags, rec.tcp_len) == (seq, flags, len(payload))
        assert rec.udp_srcport is None


# lost segments

def seg(seq, length, src="10.0.0.1", flags=TCP_ACK):
    return PacketRecord(1, 0, 60, ip_src=src, ip_dst="10.0.0.2", tcp_srcport=1, tcp_dstport=502,
                        tcp_flags=flags, tcp_seq=seq, tcp_len=length)


def lost(records):
    return [r.lost_segment for r in track_lost_segments(records)]


def test_contiguous_flow_has_no_losses():
    assert lost([seg(1000, 100), seg(1100, 100), seg(1200, 0)]) == [False, False, False]


def test_gap_marks_the_segment_after_it():
    # expected next after 1000+100 is 1100
    assert lost([seg(1000, 100), seg(1200, 100)]) == [False, True]


def test_duplicate_segment_is_not_lost():
    assert lost([seg(1000, 100), seg(1100, 50), seg(1000, 100), seg(1150, 10)]) == [False] * 4


def test_flows_are_direction_sensitive():
    assert lost([seg(1000, 100), seg(5000, 10, src="10.0.0.9")]) == [False, False]


def test_syn_consumes_one_sequence_number():
    assert lost([seg(99, 0, flags=TCP_SYN), seg(100, 10)]) == [False, False]


def test_non_tcp_records_pass_through():
    rec = PacketRecord(1, 0, 60)
    assert track_lost_segments([rec]) == [rec]


@given(st.lists(st.tuples(st.integers(0, 3000), st.integers(0, 200)), max_size=30))
def test_loss_tracking_is_deterministic(pairs):
    recs = [seg(s, n) for s, n in pairs]
    assert track_lost_segments(recs) == track_lost_segments(list(recs))
