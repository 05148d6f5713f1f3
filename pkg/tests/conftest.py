"""Shared fixtures and independent oracles for the test suite."""
from __future__ import annotations

import numpy as np
import pytest

from flowmtl.flow import PacketRecord, segment_flows
from flowmtl.synth import synth_packets


@pytest.fixture(scope="session")
def small_flows():
    """A small balanced dataset: 5 classes x 40 flows."""
    return segment_flows(synth_packets(40, seed=7))


def random_packets(n: int, n_keys: int, seed: int, fin_prob: float = 0.02,
                   t_max: float = 2000.0) -> list[PacketRecord]:
    """Random packet soup over a fixed set of 5-tuples, unique timestamps."""
    rng = np.random.default_rng(seed)
    keys = []
    for i in range(n_keys):
        proto = "tcp" if i % 2 == 0 else "udp"
        keys.append((f"10.0.0.{i}", 1024 + i, f"192.168.1.{i}", 443 + i, proto))
    # unique timestamps so ordering is unambiguous
    ts = rng.choice(int(t_max * 2000), size=n, replace=False) / 2000.0
    packets = []
    for j in range(n):
        src, sport, dst, dport, proto = keys[int(rng.integers(0, n_keys))]
        if rng.random() < 0.4:  # reverse direction
            src, sport, dst, dport = dst, dport, src, sport
        packets.append(PacketRecord(
            ts=float(ts[j]), src=src, dst=dst, sport=sport, dport=dport,
            proto=proto, length=int(rng.integers(40, 1501)),
            fin=proto == "tcp" and bool(rng.random() < fin_prob)))
    return packets


def brute_force_flows(packets: list[PacketRecord], udp_timeout: float = 15.0):
    """Reference segmentation: filter a sorted packet list per key, find the
    break positions by scanning, and slice.  Returns per-flow timestamp
    tuples keyed by the unordered 5-tuple."""
    ordered = sorted((p for p in packets if p.proto in ("tcp", "udp")),
                     key=lambda q: q.ts)

    def canon(p):
        a, b = (p.src, p.sport), (p.dst, p.dport)
        return (min(a, b), max(a, b), p.proto)

    flows = []
    for key in sorted({canon(p) for p in ordered}):
        pkts = [p for p in ordered if canon(p) == key]
        breaks = [i for i in range(len(pkts))
                  if (key[2] == "tcp" and pkts[i].fin)
                  or (key[2] == "udp" and i + 1 < len(pkts)
                      and pkts[i + 1].ts - pkts[i].ts > udp_timeout)]
        start = 0
        for i in breaks:
            flows.append((key, pkts[start].ts, pkts[i].ts, i + 1 - start))
            start = i + 1
        if start < len(pkts):
            flows.append((key, pkts[start].ts, pkts[-1].ts, len(pkts) - start))
    return flows


def segmentation_signature(flows) -> set:
    """Comparable identity of a segmentation.  Flows are contiguous runs of
    one key's time-ordered packets, so endpoints plus count pin them down."""
    return {(f.key, f.first_packet_time, f.last_packet_time, len(f))
            for f in flows}
