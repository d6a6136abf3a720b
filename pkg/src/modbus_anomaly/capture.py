"""Classic pcap I/O and Ethernet/IPv4/TCP/UDP/Modbus-TCP dissection.

Only what the feature extractor needs is decoded: link, network and
transport headers plus the Modbus application header (MBAP + function code).
Dissection never raises on garbage; problems are attached to the record as
warnings and the affected layers are left unset.
"""
from __future__ import annotations

import dataclasses
import ipaddress
import struct
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

PCAP_MAGIC = 0xA1B2C3D4
PCAP_VERSION = (2, 4)
PCAP_SNAPLEN = 65535
LINKTYPE_ETHERNET = 1

GLOBAL_HEADER = struct.Struct("<IHHiIII")
RECORD_HEADER_LE = struct.Struct("<IIII")
RECORD_HEADER_BE = struct.Struct(">IIII")

ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_IPV6 = 0x86DD
ETHERTYPE_VLAN = 0x8100
IPPROTO_TCP = 6
IPPROTO_UDP = 17
MODBUS_PORT = 502
MBAP_LEN = 7

TCP_FIN = 0x01
TCP_SYN = 0x02
TCP_RST = 0x04
TCP_PSH = 0x08
TCP_ACK = 0x10


class CaptureError(ValueError):
    """Base class for unrecoverable pcap container errors."""


class BadMagic(CaptureError):
    pass


class Truncated(CaptureError):
    pass


class UnsupportedLinkType(CaptureError):
    pass


@dataclass(frozen=True)
class Frame:
    """One captured frame. ``orig_len`` defaults to the captured length."""

    timestamp_us: int
    data: bytes
    orig_len: int = -1

    def __post_init__(self):
        if self.orig_len < 0:
            object.__setattr__(self, "orig_len", len(self.data))

    @property
    def ts_sec(self) -> int:
        return self.timestamp_us // 1_000_000

    @property
    def ts_usec(self) -> int:
        return self.timestamp_us % 1_000_000


@dataclass(frozen=True)
class RawCapture:
    frames: tuple[Frame, ...] = ()
    link_type: int = LINKTYPE_ETHERNET

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class ModbusAdu:
    transaction_id: int
    protocol_id: int
    length: int
    unit_id: int
    function_code: int
    payload: bytes


@dataclass(frozen=True)
class PacketRecord:
    frame_number: int
    frame_time: int
    frame_len: int
    eth_src: Optional[str] = None
    eth_dst: Optional[str] = None
    ip_src: Optional[str] = None
    ip_dst: Optional[str] = None
    ip_proto: Optional[int] = None
    tcp_srcport: Optional[int] = None
    tcp_dstport: Optional[int] = None
    tcp_flags: Optional[int] = None
    tcp_seq: Optional[int] = None
    tcp_len: Optional[int] = None
    udp_srcport: Optional[int] = None
    udp_dstport: Optional[int] = None
    modbus: Optional[ModbusAdu] = None
    lost_segment: bool = False
    warnings: tuple[str, ...] = field(default=(), compare=False)

    @property
    def is_tcp(self) -> bool:
        return self.tcp_srcport is not None


# --------------------------------------------------------------------------
# pcap container


def read_pcap(data: bytes) -> RawCapture:
    """Parse a classic pcap byte stream (either byte order, microsecond stamps)."""
    if len(data) < GLOBAL_HEADER.size:
        raise Truncated(f"global header needs 24 bytes, got {len(data)}")
    magic_le = struct.unpack_from("<I", data, 0)[0]
    if magic_le == PCAP_MAGIC:
        endian = "<"
    elif magic_le == 0xD4C3B2A1:
        endian = ">"
    else:
        raise BadMagic(f"unknown pcap magic 0x{magic_le:08x}")
    _, _, _, _, _, _, network = struct.unpack_from(endian + "IHHiIII", data, 0)
    if network != LINKTYPE_ETHERNET:
        raise UnsupportedLinkType(f"link type {network} is not Ethernet")

    rec = RECORD_HEADER_LE if endian == "<" else RECORD_HEADER_BE
    frames = []
    offset = GLOBAL_HEADER.size
    end = len(data)
    while offset < end:
        if offset + rec.size > end:
            raise Truncated(f"record header at offset {offset} is cut short")
        ts_sec, ts_usec, incl_len, orig_len = rec.unpack_from(data, offset)
        offset += rec.size
        if offset + incl_len > end:
            raise Truncated(
                f"record at offset {offset - rec.size} promises {incl_len} bytes, "
                f"{end - offset} remain"
            )
        frames.append(Frame(ts_sec * 1_000_000 + ts_usec,
                            bytes(data[offset:offset + incl_len]), orig_len))
        offset += incl_len
    return RawCapture(tuple(frames), network)


def write_pcap(capture: RawCapture) -> bytes:
    """Serialize to little-endian classic pcap, version 2.4, Ethernet."""
    out = bytearray(GLOBAL_HEADER.pack(PCAP_MAGIC, *PCAP_VERSION, 0, 0,
                                       PCAP_SNAPLEN, capture.link_type))
    for frame in capture.frames:
        if not frame.data:
            raise ValueError("cannot write an empty frame")
        out += RECORD_HEADER_LE.pack(frame.ts_sec, frame.ts_usec,
                                     len(frame.data), frame.orig_len)
        out += frame.data
    return bytes(out)


def load_pcap(path) -> RawCapture:
    with open(path, "rb") as fh:
        return read_pcap(fh.read())


def save_pcap(capture: RawCapture, path) -> None:
    with open(path, "wb") as fh:
        fh.write(write_pcap(capture))


# --------------------------------------------------------------------------
# dissection


def format_mac(raw: bytes) -> str:
    return ":".join(f"{b:02x}" for b in raw)


def format_ipv4(raw: bytes) -> str:
    return str(ipaddress.IPv4Address(raw))


def dissect(frame_bytes: bytes, timestamp: int, ordinal: int,
            frame_len: Optional[int] = None) -> PacketRecord:
    """Decode one Ethernet frame into a :class:`PacketRecord`.

    Layers are filled outside-in and decoding stops at the first layer whose
    header does not fit; the reason is recorded in ``warnings``.
    """
    fields: dict = {
        "frame_number": ordinal,
        "frame_time": timestamp,
        "frame_len": len(frame_bytes) if frame_len is None else frame_len,
    }
    warnings: list[str] = []

    def done() -> PacketRecord:
        return PacketRecord(**fields, warnings=tuple(warnings))

    if len(frame_bytes) < 14:
        warnings.append(f"TooShort: {len(frame_bytes)} bytes, Ethernet needs 14")
        return done()

    fields["eth_dst"] = format_mac(frame_bytes[0:6])
    fields["eth_src"] = format_mac(frame_bytes[6:12])
    ethertype = int.from_bytes(frame_bytes[12:14], "big")
    offset = 14
    if ethertype == ETHERTYPE_VLAN:
        if len(frame_bytes) < 18:
            warnings.append("MalformedHeader: truncated 802.1Q tag")
            return done()
        ethertype = int.from_bytes(frame_bytes[16:18], "big")
        offset = 18

    if ethertype == ETHERTYPE_IPV6:
        warnings.append("IPv6 frame dissected to Ethernet level only")
        return done()
    if ethertype != ETHERTYPE_IPV4:
        return done()

    ip = frame_bytes[offset:]
    if len(ip) < 20:
        warnings.append(f"MalformedHeader: IPv4 header needs 20 bytes, {len(ip)} present")
        return done()
    version, ihl = ip[0] >> 4, (ip[0] & 0x0F) * 4
    total_len = int.from_bytes(ip[2:4], "big")
    if version != 4 or ihl < 20 or total_len < ihl or total_len > len(ip):
        warnings.append(
            f"MalformedHeader: IPv4 version={version} ihl={ihl} "
            f"total_length={total_len} with {len(ip)} bytes present"
        )
        return done()
    proto = ip[9]
    fields["ip_proto"] = proto
    fields["ip_src"] = format_ipv4(ip[12:16])
    fields["ip_dst"] = format_ipv4(ip[16:20])
    # Ethernet padding beyond total_length is not part of the datagram.
    segment = ip[ihl:total_len]

    if proto == IPPROTO_UDP:
        if len(segment) < 8:
            warnings.append("MalformedHeader: UDP header truncated")
            return done()
        fields["udp_srcport"] = int.from_bytes(segment[0:2], "big")
        fields["udp_dstport"] = int.from_bytes(segment[2:4], "big")
        return done()
    if proto != IPPROTO_TCP:
        return done()

    if len(segment) < 20:
        warnings.append("MalformedHeader: TCP header truncated")
        return done()
    data_offset = (segment[12] >> 4) * 4
    if data_offset < 20 or data_offset > len(segment):
        warnings.append(
            f"MalformedHeader: TCP data offset {data_offset} with {len(segment)} bytes"
        )
        return done()
    sport = int.from_bytes(segment[0:2], "big")
    dport = int.from_bytes(segment[2:4], "big")
    payload = segment[data_offset:]
    fields.update(
        tcp_srcport=sport,
        tcp_dstport=dport,
        tcp_seq=int.from_bytes(segment[4:8], "big"),
        tcp_flags=segment[13],
        tcp_len=len(payload),
    )
    if payload and MODBUS_PORT in (sport, dport):
        adu = _parse_mbap(payload, warnings)
        if adu is not None:
            fields["modbus"] = adu
    return done()


def _parse_mbap(payload: bytes, warnings: list[str]) -> Optional[ModbusAdu]:
    if len(payload) < MBAP_LEN + 1:
        warnings.append(f"MalformedHeader: Modbus ADU needs 8 bytes, {len(payload)} present")
        return None
    tid, pid, length, unit = struct.unpack_from(">HHHB", payload, 0)
    if length < 2 or MBAP_LEN - 1 + length > len(payload):
        warnings.append(
            f"MalformedHeader: MBAP length {length} exceeds {len(payload) - 6} bytes"
        )
        return None
    if pid != 0:
        warnings.append(f"Modbus protocol id {pid} is not 0")
    return ModbusAdu(tid, pid, length, unit, payload[MBAP_LEN],
                     bytes(payload[MBAP_LEN + 1:MBAP_LEN - 1 + length]))


def dissect_capture(capture: RawCapture) -> tuple[list[PacketRecord], list[str]]:
    """Dissect every frame; returns records and the capture-wide warning list."""
    records = []
    warnings = []
    for number, frame in enumerate(capture.frames, start=1):
        rec = dissect(frame.data, frame.timestamp_us, number, frame.orig_len)
        records.append(rec)
        warnings.extend(f"frame {number}: {w}" for w in rec.warnings)
    return records, warnings


# --------------------------------------------------------------------------
# TCP loss tracking


def _seq_after(a: int, b: int) -> bool:
    """True when ``a`` is strictly ahead of ``b`` in 32-bit sequence space."""
    return 0 < ((a - b) & 0xFFFFFFFF) < 0x80000000


def track_lost_segments(records: Sequence[PacketRecord]) -> list[PacketRecord]:
    """Flag packets that jump past the flow's highest expected sequence number.

    Flows are direction-sensitive 4-tuples. Retransmissions and anything
    below the high-water mark leave the flag clear.
    """
    next_expected: dict[tuple, int] = {}
    out = []
    for rec in records:
        if rec.tcp_seq is None:
            out.append(rec)
            continue
        key = (rec.ip_src, rec.tcp_srcport, rec.ip_dst, rec.tcp_dstport)
        flags = rec.tcp_flags or 0
        advance = (rec.tcp_len or 0) + (1 if flags & TCP_SYN else 0) + (1 if flags & TCP_FIN else 0)
        end = (rec.tcp_seq + advance) & 0xFFFFFFFF
        expected = next_expected.get(key)
        lost = expected is not None and not flags & TCP_RST and _seq_after(rec.tcp_seq, expected)
        if expected is None or _seq_after(end, expected):
            next_expected[key] = end
        out.append(dataclasses.replace(rec, lost_segment=lost) if lost != rec.lost_segment else rec)
    return out


def records_from_capture(capture: RawCapture) -> tuple[list[PacketRecord], list[str]]:
    records, warnings = dissect_capture(capture)
    return track_lost_segments(records), warnings


# --------------------------------------------------------------------------
# frame construction, shared by the traffic generator and tests


def mac_bytes(mac: str) -> bytes:
    return bytes(int(part, 16) for part in mac.split(":"))


def ipv4_checksum(header: bytes) -> int:
    total = sum(struct.unpack(f">{len(header) // 2}H", header))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def build_mbap(transaction_id: int, unit_id: int, function_code: int,
               data: bytes, protocol_id: int = 0) -> bytes:
    return struct.pack(">HHHBB", transaction_id, protocol_id, len(data) + 2,
                       unit_id, function_code) + data


def build_tcp_frame(eth_src: str, eth_dst: str, ip_src: str, ip_dst: str,
                    sport: int, dport: int, seq: int, ack: int, flags: int,
                    payload: bytes = b"", ip_id: int = 0, window: int = 8192) -> bytes:
    tcp = struct.pack(">HHIIBBHHH", sport, dport, seq & 0xFFFFFFFF, ack & 0xFFFFFFFF,
                      5 << 4, flags, window, 0, 0) + payload
    return _ipv4_frame(eth_src, eth_dst, ip_src, ip_dst, IPPROTO_TCP, tcp, ip_id)


def build_udp_frame(eth_src: str, eth_dst: str, ip_src: str, ip_dst: str,
                    sport: int, dport: int, payload: bytes = b"", ip_id: int = 0) -> bytes:
    udp = struct.pack(">HHHH", sport, dport, 8 + len(payload), 0) + payload
    return _ipv4_frame(eth_src, eth_dst, ip_src, ip_dst, IPPROTO_UDP, udp, ip_id)


def _ipv4_frame(eth_src: str, eth_dst: str, ip_src: str, ip_dst: str,
                proto: int, body: bytes, ip_id: int) -> bytes:
    header = struct.pack(">BBHHHBBH4s4s", 0x45, 0, 20 + len(body), ip_id & 0xFFFF,
                         0x4000, 64, proto, 0,
                         ipaddress.IPv4Address(ip_src).packed,
                         ipaddress.IPv4Address(ip_dst).packed)
    header = header[:10] + struct.pack(">H", ipv4_checksum(header)) + header[12:]
    return (mac_bytes(eth_dst) + mac_bytes(eth_src)
            + ETHERTYPE_IPV4.to_bytes(2, "big") + header + body)


def iter_modbus(records: Iterable[PacketRecord]):
    return (r for r in records if r.modbus is not None)
