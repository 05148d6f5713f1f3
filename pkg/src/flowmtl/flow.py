"""Packet logs to segmented flows and normalized feature matrices.

Segmentation rules: a TCP flow ends at its first FIN-flagged packet
(inclusive); a UDP flow ends when the gap to the next packet on the same key
exceeds the inactivity timeout (15 s default).  A new flow on the same key
may start after termination.

Features per flow are two channels over the first k packets: inter-arrival
times and direction-signed lengths, clipped at configurable maxima
(1434 bytes / 1 s defaults) and scaled into [0, 1] and [-1, 1].
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from flowmtl.errors import DataFormatError

log = logging.getLogger(__name__)

PROTOCOLS = ("tcp", "udp")
DEFAULT_UDP_TIMEOUT = 15.0
DEFAULT_MAX_LEN = 1434.0
DEFAULT_MAX_IAT = 1.0
# Floor on flow duration so single-packet flows keep a finite bandwidth.
DURATION_EPSILON = 1e-3


@dataclass(frozen=True)
class PacketRecord:
    """One observed packet from a packet-log CSV row."""

    ts: float
    src: str
    dst: str
    sport: int
    dport: int
    proto: str  # "tcp" | "udp"
    length: int
    fin: bool = False
    label: int | None = None  # traffic class, when the corpus carries one


FlowKey = tuple[tuple[str, int], tuple[str, int], str]


def canonical_key(pkt: PacketRecord) -> FlowKey:
    """Order-normalized 5-tuple: both directions map to the same key."""
    a = (pkt.src, pkt.sport)
    b = (pkt.dst, pkt.dport)
    return (a, b, pkt.proto) if a <= b else (b, a, pkt.proto)


@dataclass
class FlowSample:
    """A segmented flow: ordered packets, computed bandwidth/duration, optional label."""

    key: FlowKey
    rel_times: np.ndarray      # seconds from the first packet, non-decreasing, [0] == 0
    signed_lengths: np.ndarray  # bytes, sign = direction (forward positive)
    first_packet_time: float
    last_packet_time: float
    total_bytes: int
    duration: float
    bandwidth: float           # kilobits per second
    traffic_label: int | None = None

    def __len__(self) -> int:
        return len(self.rel_times)

    @classmethod
    def from_packets(cls, key: FlowKey, packets: list[PacketRecord]) -> "FlowSample":
        if not packets:
            raise DataFormatError("cannot build a flow from zero packets")
        first = packets[0]
        forward_endpoint = (first.src, first.sport)  # first sender defines forward
        t0 = first.ts
        rel = np.array([p.ts - t0 for p in packets])
        signed = np.array([
            float(p.length) if (p.src, p.sport) == forward_endpoint else -float(p.length)
            for p in packets
        ])
        total = int(sum(p.length for p in packets))
        duration = max(packets[-1].ts - t0, DURATION_EPSILON)
        label = next((p.label for p in packets if p.label is not None), None)
        return cls(
            key=key,
            rel_times=rel,
            signed_lengths=signed,
            first_packet_time=t0,
            last_packet_time=packets[-1].ts,
            total_bytes=total,
            duration=duration,
            bandwidth=total * 8.0 / 1000.0 / duration,
            traffic_label=label,
        )


def compute_bandwidth_duration(flow: FlowSample) -> tuple[float, float]:
    """(bandwidth kbps, duration s) recomputed from the packet arrays."""
    if len(flow) == 0:
        raise DataFormatError("cannot compute bandwidth/duration of an empty flow")
    duration = max(float(flow.rel_times[-1] - flow.rel_times[0]), DURATION_EPSILON)
    total = float(np.abs(flow.signed_lengths).sum())
    return total * 8.0 / 1000.0 / duration, duration


def segment_flows(packets: list[PacketRecord],
                  udp_timeout: float = DEFAULT_UDP_TIMEOUT) -> list[FlowSample]:
    """Partition packets into flows by canonical 5-tuple, FIN, and UDP timeout.

    Packets are sorted defensively by timestamp (stable, so file order breaks
    ties).  Packets with an unknown protocol are rejected with a logged
    diagnostic and processing continues.
    """
    if udp_timeout <= 0:
        raise DataFormatError(f"udp_timeout must be positive, got {udp_timeout}")
    ordered = sorted(packets, key=lambda p: p.ts)

    by_key: dict[FlowKey, list[PacketRecord]] = {}
    for i, pkt in enumerate(ordered):
        if pkt.proto not in PROTOCOLS:
            log.warning("packet %d: unsupported protocol %r, record skipped", i, pkt.proto)
            continue
        by_key.setdefault(canonical_key(pkt), []).append(pkt)

    flows: list[FlowSample] = []
    for key, pkts in by_key.items():
        current: list[PacketRecord] = []
        for pkt in pkts:
            if current and key[2] == "udp" and pkt.ts - current[-1].ts > udp_timeout:
                flows.append(FlowSample.from_packets(key, current))
                current = []
            current.append(pkt)
            if key[2] == "tcp" and pkt.fin:  # FIN packet belongs to the flow it terminates
                flows.append(FlowSample.from_packets(key, current))
                current = []
        if current:
            flows.append(FlowSample.from_packets(key, current))

    flows.sort(key=lambda fl: (fl.first_packet_time, fl.key))
    return flows


@dataclass
class FeatureMatrix:
    """Model input: k inter-arrival values in [0,1] and k signed lengths in [-1,1]."""

    k: int
    channel_iat: np.ndarray
    channel_len: np.ndarray
    valid_len: int
    _stacked: np.ndarray | None = field(default=None, repr=False)

    def stacked(self) -> np.ndarray:
        """(k, 2) array, column 0 = inter-arrival channel, column 1 = length channel."""
        if self._stacked is None:
            self._stacked = np.ascontiguousarray(
                np.stack([self.channel_iat, self.channel_len], axis=1))
        return self._stacked


def extract_features(flow: FlowSample, k: int,
                     max_len: float = DEFAULT_MAX_LEN,
                     max_iat: float = DEFAULT_MAX_IAT) -> FeatureMatrix:
    """Normalized fixed-length features of the first k packets, zero-padded at the tail."""
    if k < 1:
        raise DataFormatError(f"k must be >= 1, got {k}")
    if max_len <= 0 or max_iat <= 0:
        raise DataFormatError("normalization maxima must be positive")
    n = len(flow)
    if n == 0:
        raise DataFormatError("cannot extract features from an empty flow")
    valid = min(n, k)

    iat = np.zeros(k)
    if valid > 1:
        gaps = np.diff(flow.rel_times[:valid])
        iat[1:valid] = np.minimum(gaps, max_iat) / max_iat  # first packet has no predecessor

    lens = np.zeros(k)
    segment = flow.signed_lengths[:valid]
    lens[:valid] = np.sign(segment) * np.minimum(np.abs(segment), max_len) / max_len

    return FeatureMatrix(k=k, channel_iat=iat, channel_len=lens, valid_len=valid)


def features_for_flows(flows: list[FlowSample], k: int,
                       max_len: float = DEFAULT_MAX_LEN,
                       max_iat: float = DEFAULT_MAX_IAT) -> np.ndarray:
    """(N, k, 2) feature batch for a flow list; pure per flow, order-preserving."""
    out = np.zeros((len(flows), k, 2))
    for i, flow in enumerate(flows):
        out[i] = extract_features(flow, k, max_len=max_len, max_iat=max_iat).stacked()
    return out
