"""Labeled synthetic Modbus/TCP captures: MTU->RTU polling plus injected attacks.

Every RTU holds one TCP session with the MTU. A poll is a read-holding-
registers request, the RTU's response and the MTU's pure ACK. Attacks ride
the same sessions (a compromised master) so that, as in the original
traces, only timing and rate distinguish them from normal traffic.
"""
from __future__ import annotations

import heapq
import struct
from importlib import resources
from pathlib import Path
from dataclasses import dataclass, field, fields
from typing import Optional, Sequence

import numpy as np
import yaml

from .capture import (
    MODBUS_PORT,
    TCP_ACK,
    TCP_PSH,
    TCP_SYN,
    Frame,
    RawCapture,
    build_mbap,
    build_tcp_frame,
)
from .features import ANOMALOUS, LabelSidecar

SCAN_BURST = "scan_burst"
FAKE_COMMAND = "fake_command"
ATTACK_KINDS = (SCAN_BURST, FAKE_COMMAND)

FC_READ_HOLDING = 0x03
FC_WRITE_SINGLE = 0x06

US = 1_000_000


class ScenarioError(ValueError):
    pass


class InvalidWindow(ScenarioError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    rtu_count: int = 6
    duration_seconds: float = 180.0
    polling_interval_ms: float = 1000.0
    jitter_ms: float = 20.0
    mtu_mac: str = "02:00:00:00:00:01"
    mtu_ip: str = "10.0.0.1"
    rtu_macs: tuple[str, ...] = ()
    rtu_ips: tuple[str, ...] = ()
    base_port: int = MODBUS_PORT
    register_count: int = 10
    response_delay_ms: float = 4.0
    start_time: float = 1_546_300_800.0
    # Optional second polling regime from regime_start_second on.
    regime_start_second: Optional[float] = None
    regime_polling_interval_ms: Optional[float] = None
    regime_register_count: Optional[int] = None
    loss_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.rtu_count < 1:
            raise ScenarioError("rtu_count must be at least 1")
        if self.polling_interval_ms <= 0:
            raise ScenarioError("polling_interval_ms must be positive")
        if not 0 <= self.jitter_ms < self.polling_interval_ms:
            raise ScenarioError("jitter_ms must lie in [0, polling_interval_ms)")
        if self.duration_seconds <= 0:
            raise ScenarioError("duration_seconds must be positive")
        if not 0.0 <= self.loss_rate < 1.0:
            raise ScenarioError("loss_rate must lie in [0, 1)")
        if self.regime_polling_interval_ms is not None and self.regime_polling_interval_ms <= self.jitter_ms:
            raise ScenarioError("regime_polling_interval_ms must exceed jitter_ms")
        if not self.rtu_macs:
            object.__setattr__(self, "rtu_macs", tuple(
                f"02:00:00:00:01:{i + 1:02x}" for i in range(self.rtu_count)))
        if not self.rtu_ips:
            object.__setattr__(self, "rtu_ips", tuple(
                f"10.0.0.{i + 11}" for i in range(self.rtu_count)))
        object.__setattr__(self, "rtu_macs", tuple(self.rtu_macs))
        object.__setattr__(self, "rtu_ips", tuple(self.rtu_ips))
        if len(self.rtu_macs) != self.rtu_count or len(self.rtu_ips) != self.rtu_count:
            raise ScenarioError("rtu_macs/rtu_ips must list one address per RTU")

    @property
    def steady_rate(self) -> float:
        """Packets per second of normal polling in the first regime."""
        return 3 * self.rtu_count * 1000.0 / self.polling_interval_ms


@dataclass(frozen=True)
class AttackSpec:
    """One attack window.

    ``intensity`` is packets per second for a scan burst and the number of
    write commands (two packets each) for a fake command. While the window
    is open, scheduled polls are skipped when ``suspend_polling`` is set.
    """

    kind: str
    start_second: float
    duration_seconds: float
    intensity: float
    attacker_mac: Optional[str] = None
    attacker_ip: Optional[str] = None
    suspend_polling: bool = True

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ScenarioError(f"unknown attack kind {self.kind!r}")
        if self.duration_seconds <= 0 or self.intensity <= 0:
            raise ScenarioError("attack duration and intensity must be positive")

    @property
    def end_second(self) -> float:
        return self.start_second + self.duration_seconds

    def packet_count(self) -> int:
        if self.kind == SCAN_BURST:
            return int(round(self.intensity * self.duration_seconds))
        return 2 * int(self.intensity)


# --------------------------------------------------------------------------
# TCP session bookkeeping


@dataclass
class _Session:
    client_mac: str
    client_ip: str
    client_port: int
    server_mac: str
    server_ip: str
    server_port: int
    client_seq: int
    server_seq: int
    transaction_id: int = 0
    ip_id: int = 0

    def frame(self, from_client: bool, flags: int, payload: bytes = b"") -> tuple[bytes, int]:
        """Build one segment in the given direction; returns (frame, seq advance)."""
        self.ip_id = (self.ip_id + 1) & 0xFFFF
        if from_client:
            data = build_tcp_frame(self.client_mac, self.server_mac, self.client_ip, self.server_ip,
                                   self.client_port, self.server_port, self.client_seq,
                                   self.server_seq if flags & TCP_ACK else 0, flags, payload, self.ip_id)
        else:
            data = build_tcp_frame(self.server_mac, self.client_mac, self.server_ip, self.client_ip,
                                   self.server_port, self.client_port, self.server_seq,
                                   self.client_seq, flags, payload, self.ip_id)
        advance = len(payload) + (1 if flags & TCP_SYN else 0)
        if from_client:
            self.client_seq = (self.client_seq + advance) & 0xFFFFFFFF
        else:
            self.server_seq = (self.server_seq + advance) & 0xFFFFFFFF
        return data, advance


@dataclass(order=True)
class _Event:
    time_us: int
    order: int
    action: object = field(compare=False)
    anomalous: bool = field(compare=False, default=False)
    droppable: bool = field(compare=False, default=False)


class _Generator:
    def __init__(self, config: ScenarioConfig, attacks: Sequence[AttackSpec]):
        self.config = config
        self.attacks = list(attacks)
        self.rng = np.random.default_rng(config.seed)
        self.events: list[_Event] = []
        self.counter = 0
        self.t_start = int(round(config.start_time * US))
        self.sessions = [self._new_session(config.mtu_mac, config.mtu_ip, i)
                         for i in range(config.rtu_count)]
        self.attacker_sessions: dict = {}

    def _new_session(self, mac: str, ip: str, rtu: int) -> _Session:
        port = int(self.rng.integers(49152, 65535))
        return _Session(mac, ip, port, self.config.rtu_macs[rtu], self.config.rtu_ips[rtu],
                        self.config.base_port,
                        int(self.rng.integers(0, 2**32)), int(self.rng.integers(0, 2**32)))

    def push(self, offset_us: float, action, anomalous=False, droppable=False):
        self.counter += 1
        heapq.heappush(self.events, _Event(self.t_start + int(round(offset_us)), self.counter,
                                           action, anomalous, droppable))

    # transactions --------------------------------------------------------

    def _request_pdu(self, fc: int) -> tuple[bytes, int]:
        if fc == FC_READ_HOLDING:
            count = self._register_count_now
            addr = int(self.rng.integers(0, 1000))
            return struct.pack(">HH", addr, count), count
        addr = int(self.rng.integers(0, 1000))
        return struct.pack(">HH", addr, int(self.rng.integers(0, 65536))), 0

    def transaction(self, session: _Session, t_us: float, fc: int, anomalous: bool,
                    with_ack: bool = True, response: bool = True, droppable: bool = False):
        """Queue request, response and (optionally) the client's pure ACK.

        Transaction ids are taken when the request goes on the wire, so they
        increase in capture order whatever order transactions were queued in.
        """
        unit = self.config.rtu_ips.index(session.server_ip) + 1
        data, count = self._request_pdu(fc)
        if fc == FC_READ_HOLDING:
            reply_data = bytes([2 * count]) + self.rng.integers(0, 65536, size=count).astype(">u2").tobytes()
        else:
            reply_data = data
        delay = self.config.response_delay_ms * 1000 * (1.0 + 0.25 * self.rng.random())
        tid = [0]

        def request(s=session):
            s.transaction_id = (s.transaction_id + 1) & 0xFFFF
            tid[0] = s.transaction_id
            return s.frame(True, TCP_PSH | TCP_ACK, build_mbap(tid[0], unit, fc, data))

        self.push(t_us, request, anomalous, droppable)
        if response:
            self.push(t_us + delay,
                      lambda s=session: s.frame(False, TCP_PSH | TCP_ACK, build_mbap(tid[0], unit, fc, reply_data)),
                      anomalous, droppable)
        if with_ack:
            self.push(t_us + delay + 300, lambda s=session: s.frame(True, TCP_ACK), anomalous)

    def handshake(self, session: _Session, t_us: float, anomalous: bool = False):
        self.push(t_us, lambda s=session: s.frame(True, TCP_SYN), anomalous)
        self.push(t_us + 200, lambda s=session: s.frame(False, TCP_SYN | TCP_ACK), anomalous)
        self.push(t_us + 400, lambda s=session: s.frame(True, TCP_ACK), anomalous)

    # schedule ------------------------------------------------------------

    @property
    def _register_count_now(self) -> int:
        return self._regcount

    def _suspended(self, t_sec: float) -> bool:
        return any(a.suspend_polling and a.start_second <= t_sec < a.end_second
                   for a in self.attacks)

    def schedule_polling(self):
        cfg = self.config
        for i, session in enumerate(self.sessions):
            self.handshake(session, i * 2000)
        duration_us = cfg.duration_seconds * US
        t = cfg.polling_interval_ms * 1000.0
        gap_us = 2500.0
        while t < duration_us:
            in_regime = (cfg.regime_start_second is not None
                         and t >= cfg.regime_start_second * US)
            interval = (cfg.regime_polling_interval_ms if in_regime and cfg.regime_polling_interval_ms
                        else cfg.polling_interval_ms)
            self._regcount = (cfg.regime_register_count if in_regime and cfg.regime_register_count
                              else cfg.register_count)
            jitter = self.rng.uniform(0, cfg.jitter_ms * 1000.0)
            if not self._suspended(t / US):
                for i, session in enumerate(self.sessions):
                    self.transaction(session, t + jitter + i * gap_us, FC_READ_HOLDING,
                                     anomalous=False, droppable=cfg.loss_rate > 0)
            t += interval * 1000.0

    def schedule_attack(self, attack: AttackSpec):
        cfg = self.config
        if attack.start_second < 0 or attack.end_second > cfg.duration_seconds:
            raise InvalidWindow(
                f"attack window [{attack.start_second}, {attack.end_second}) "
                f"outside capture [0, {cfg.duration_seconds})")
        if attack.kind == SCAN_BURST and attack.intensity <= cfg.steady_rate:
            raise InvalidWindow(
                f"scan_burst intensity {attack.intensity}/s must exceed the steady "
                f"rate {cfg.steady_rate:.1f}/s")
        self._regcount = cfg.register_count
        budget = attack.packet_count()
        start_us = attack.start_second * US
        span_us = attack.duration_seconds * US

        sessions = self.sessions
        if attack.attacker_ip is not None:
            mac = attack.attacker_mac or "02:00:00:00:0f:01"
            key = (mac, attack.attacker_ip)
            if key not in self.attacker_sessions:
                self.attacker_sessions[key] = [self._new_session(mac, attack.attacker_ip, i)
                                               for i in range(cfg.rtu_count)]
                for i, s in enumerate(self.attacker_sessions[key]):
                    if budget >= 3:
                        self.handshake(s, start_us + i * 1000, anomalous=True)
                        budget -= 3
            sessions = self.attacker_sessions[key]

        per_unit = 3 if attack.kind == SCAN_BURST else 2
        fc = FC_READ_HOLDING if attack.kind == SCAN_BURST else FC_WRITE_SINGLE
        n_units, remainder = divmod(budget, per_unit)
        slots = n_units + (1 if remainder else 0)
        # keep the last exchange inside the window
        step = (span_us - 20_000) / max(slots, 1)
        for k in range(slots):
            t = start_us + 10_000 + k * step
            session = sessions[k % len(sessions)]
            if k < n_units:
                self.transaction(session, t, fc, anomalous=True, with_ack=per_unit == 3)
            elif remainder == 1:
                self.push(t, lambda s=session: s.frame(True, TCP_ACK), True)
            else:
                self.transaction(session, t, fc, anomalous=True, with_ack=False)

    def run(self) -> tuple[RawCapture, LabelSidecar]:
        for attack in self.attacks:
            self.schedule_attack(attack)
        self.schedule_polling()
        frames = []
        anomalous = {}
        loss = self.config.loss_rate
        while self.events:
            event = heapq.heappop(self.events)
            data, _ = event.action()
            if event.droppable and loss > 0 and self.rng.random() < loss:
                continue
            frames.append(Frame(event.time_us, data))
            if event.anomalous:
                anomalous[len(frames)] = ANOMALOUS
        return RawCapture(tuple(frames)), LabelSidecar(anomalous, default_normal=True)


def generate(config: ScenarioConfig, attacks: Sequence[AttackSpec] = ()) -> tuple[RawCapture, LabelSidecar]:
    """Build a labeled capture; identical inputs give bit-identical output."""
    return _Generator(config, attacks).run()


def mix(parts: Sequence[tuple[RawCapture, LabelSidecar]]) -> tuple[RawCapture, LabelSidecar]:
    """Concatenate captures on one timeline, renumbering frames and labels.

    Each part is shifted so its first frame lands on the previous part's
    last frame time.
    """
    if not parts:
        raise ValueError("mix needs at least one capture")
    frames: list[Frame] = []
    labels: dict[int, str] = {}
    for capture, sidecar in parts:
        if not capture.frames:
            continue
        shift = 0
        if frames:
            shift = frames[-1].timestamp_us - capture.frames[0].timestamp_us
        base = len(frames)
        for frame in capture.frames:
            frames.append(Frame(frame.timestamp_us + shift, frame.data, frame.orig_len))
        if not sidecar.default_normal:
            missing = set(range(1, len(capture.frames) + 1)) - set(sidecar.labels)
            if missing:
                raise ValueError(f"part without #default_normal leaves {len(missing)} frames unlabeled")
        for number, label in sidecar.labels.items():
            if label == ANOMALOUS:
                labels[base + number] = label
    return RawCapture(tuple(frames)), LabelSidecar(labels, default_normal=True)


# --------------------------------------------------------------------------
# scenario files


def _build(cls, mapping: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(mapping) - known
    if unknown:
        raise ScenarioError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in mapping.items()})


@dataclass(frozen=True)
class Scenario:
    """A single capture or, when ``parts`` is non-empty, a mix of captures."""

    name: str
    config: Optional[ScenarioConfig] = None
    attacks: tuple[AttackSpec, ...] = ()
    parts: tuple["Scenario", ...] = ()

    def with_seed(self, seed: int) -> "Scenario":
        if self.parts:
            states = np.random.SeedSequence(seed).spawn(len(self.parts))
            return Scenario(self.name, parts=tuple(
                p.with_seed(int(s.generate_state(1)[0])) for p, s in zip(self.parts, states)))
        cfg = {f.name: getattr(self.config, f.name) for f in fields(ScenarioConfig)}
        cfg["seed"] = seed
        return Scenario(self.name, ScenarioConfig(**cfg), self.attacks)

    def generate(self) -> tuple[RawCapture, LabelSidecar]:
        if self.parts:
            return mix([p.generate() for p in self.parts])
        return generate(self.config, self.attacks)


def scenario_from_dict(doc: dict, name: str = "scenario") -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a mapping")
    name = doc.get("name", name)
    if "mix" in doc:
        parts = tuple(scenario_from_dict(p, f"{name}[{i}]") for i, p in enumerate(doc["mix"]))
        if not parts:
            raise ScenarioError("mix must list at least one scenario")
        return Scenario(name, parts=parts)
    try:
        config = _build(ScenarioConfig, doc.get("scenario", {}) or {})
        attacks = tuple(_build(AttackSpec, a) for a in doc.get("attacks", []) or [])
    except TypeError as exc:
        raise ScenarioError(str(exc)) from exc
    return Scenario(name, config, attacks)


def builtin_path(name: str):
    """Path of a bundled file such as ``ds1`` (scenario) or ``naive_ds1`` (rules)."""
    stem = name[:-5] if name.endswith(".yaml") else name
    return resources.files("modbus_anomaly") / "scenarios" / f"{stem}.yaml"


def resolve_path(name_or_path):
    """An existing path is used as is; otherwise a bundled name is looked up."""
    path = Path(name_or_path)
    if path.exists() or path.parent != Path("."):
        return path
    bundled = builtin_path(str(name_or_path))
    return bundled if bundled.is_file() else path


def load_scenario(path) -> Scenario:
    path = resolve_path(path)
    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    return scenario_from_dict(doc, name=str(path))
