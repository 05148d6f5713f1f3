"""Synthetic packet-log generator with known per-class ground truth.

Each traffic class is a profile over flow duration, throughput, packet
size, and direction mix.  Flow durations and throughputs are lognormal
around the profile targets (mean-calibrated, so per-class sample means
land on the targets), which gives the downstream auto-labeling real
boundary overlap to chew on while keeping class means strictly separated.

Generated logs are valid segmentation input: every flow has a unique
5-tuple, TCP flows end in exactly one FIN, and UDP inter-arrival gaps stay
below the idle timeout so no flow splits in two.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from flowmtl.errors import ConfigError
from flowmtl.flow import DEFAULT_UDP_TIMEOUT, PacketRecord

MIN_PKT_LEN = 40
MAX_PKT_LEN = 1500
MAX_FLOW_PACKETS = 2000
UDP_GAP_CAP = 11.5  # keep clear of the 15 s idle timeout


@dataclass(frozen=True)
class ClassProfile:
    """Flow-level statistics for one synthetic traffic class.

    The last four fields are class-agnostic nuisance structure (handshake
    prefix, bursty arrival envelope, MTU-heavy length tail).  They exist to
    make single flows noisy witnesses of their class statistics; keep them
    identical across profiles so they carry no class information.
    """

    label: int                 # 1-indexed traffic class id
    name: str
    duration_mean: float       # seconds
    bandwidth_mean: float      # kilobits per second
    pkt_len_mean: float        # bytes
    reverse_frac: float        # fraction of packets sent by the responder
    proto: str = "tcp"
    duration_sigma: float = 0.35
    bandwidth_sigma: float = 0.35
    warmup_max: int = 0        # up to this many short handshake packets up front
    warmup_iat: float = 0.004  # mean gap between handshake packets, seconds
    burst_sigma: float = 0.0   # lognormal spread of the per-segment arrival envelope
    mtu_frac: float = 0.0      # fraction of packets forced to near-MTU length

    def validate(self):
        if self.label < 1:
            raise ConfigError(f"profile {self.name!r}: label must be >= 1")
        if self.duration_mean <= 0 or self.bandwidth_mean <= 0:
            raise ConfigError(f"profile {self.name!r}: means must be positive")
        if not MIN_PKT_LEN <= self.pkt_len_mean <= MAX_PKT_LEN:
            raise ConfigError(
                f"profile {self.name!r}: pkt_len_mean outside [{MIN_PKT_LEN}, {MAX_PKT_LEN}]")
        if not 0.0 <= self.reverse_frac < 1.0:
            raise ConfigError(f"profile {self.name!r}: reverse_frac outside [0, 1)")
        if self.proto not in ("tcp", "udp"):
            raise ConfigError(f"profile {self.name!r}: unknown protocol {self.proto!r}")
        if self.duration_sigma < 0 or self.bandwidth_sigma < 0:
            raise ConfigError(f"profile {self.name!r}: sigma must be >= 0")
        if self.warmup_max < 0 or self.warmup_iat <= 0:
            raise ConfigError(f"profile {self.name!r}: bad warmup parameters")
        if self.burst_sigma < 0 or not 0.0 <= self.mtu_frac < 1.0:
            raise ConfigError(f"profile {self.name!r}: bad nuisance parameters")


# Duration rises with the class id while bandwidth and packet length do
# not, so no single magnitude statistic identifies the class; the (rate,
# size, direction) combination does.  Nuisance fields are identical across
# classes by design.
_NUISANCE = {"warmup_max": 36, "burst_sigma": 1.0, "mtu_frac": 0.25,
             "duration_sigma": 0.32, "bandwidth_sigma": 0.32}

DEFAULT_PROFILES: tuple[ClassProfile, ...] = (
    ClassProfile(1, "bulk", duration_mean=2.77, bandwidth_mean=300.0,
                 pkt_len_mean=800.0, reverse_frac=0.25, proto="tcp", **_NUISANCE),
    ClassProfile(2, "web", duration_mean=9.83, bandwidth_mean=18.0,
                 pkt_len_mean=500.0, reverse_frac=0.30, proto="udp", **_NUISANCE),
    ClassProfile(3, "stream", duration_mean=32.08, bandwidth_mean=120.0,
                 pkt_len_mean=1100.0, reverse_frac=0.35, proto="tcp", **_NUISANCE),
    ClassProfile(4, "voip", duration_mean=56.44, bandwidth_mean=4.5,
                 pkt_len_mean=380.0, reverse_frac=0.50, proto="udp", **_NUISANCE),
    ClassProfile(5, "idle", duration_mean=114.10, bandwidth_mean=45.0,
                 pkt_len_mean=650.0, reverse_frac=0.40, proto="tcp", **_NUISANCE),
)

_SERVICE_PORTS = (443, 53, 1935, 5004, 8080)


def validate_profiles(profiles: Sequence[ClassProfile]):
    """Reject profile sets the auto-labeler cannot separate."""
    if len(profiles) < 2:
        raise ConfigError("need at least two class profiles")
    for p in profiles:
        p.validate()
    labels = [p.label for p in profiles]
    if len(set(labels)) != len(labels):
        raise ConfigError("duplicate class labels in profiles")
    for attr in ("duration_mean", "bandwidth_mean"):
        values = [getattr(p, attr) for p in profiles]
        if len(set(values)) != len(values):
            raise ConfigError(f"degenerate profiles: {attr} values are not all distinct")


def _lognormal(rng: np.random.Generator, mean: float, sigma: float, size=None):
    # mu chosen so the distribution mean (not median) equals `mean`
    return rng.lognormal(np.log(mean) - 0.5 * sigma * sigma, sigma, size=size)


def _bursty_gaps(rng: np.random.Generator, n: int, duration: float, cap: float,
                 burst_sigma: float) -> np.ndarray:
    """n-1 positive gaps summing to `duration`, each at most `cap`.

    burst_sigma > 0 modulates ~8-packet segments with a mean-one lognormal
    envelope, so arrivals cluster into bursts while the total stays fixed.
    """
    gaps = rng.gamma(1.0, 1.0, size=n - 1) + 1e-6
    if burst_sigma > 0 and n > 2:
        n_seg = max(1, (n - 1 + 7) // 8)
        envelope = rng.lognormal(-0.5 * burst_sigma * burst_sigma, burst_sigma, n_seg)
        gaps *= np.repeat(envelope, 8)[:n - 1]
    gaps *= duration / gaps.sum()
    for _ in range(32):
        over = gaps > cap
        if not over.any():
            break
        excess = float((gaps[over] - cap).sum())
        gaps[over] = cap
        room = ~over
        if not room.any():
            break
        gaps[room] += excess * gaps[room] / gaps[room].sum()
    return gaps


def _packet_lengths(rng: np.random.Generator, n: int, total_bytes: float,
                    mtu_frac: float) -> np.ndarray:
    """n lengths summing to roughly total_bytes, with an optional near-MTU
    subset; the rest are drawn lower to compensate, keeping totals on target."""
    n_mtu = int(round(mtu_frac * n))
    while n_mtu > 0:
        rest = (total_bytes - 1400.0 * n_mtu) / max(n - n_mtu, 1)
        if rest >= 1.5 * MIN_PKT_LEN and n_mtu < n:
            break
        n_mtu -= 1
    lens = np.empty(n)
    if n_mtu > 0:
        rest = (total_bytes - 1400.0 * n_mtu) / (n - n_mtu)
        mtu_at = rng.choice(n, size=n_mtu, replace=False)
        body = np.ones(n, dtype=bool)
        body[mtu_at] = False
        lens[mtu_at] = rng.uniform(1300.0, 1500.0, size=n_mtu)
        lens[body] = rng.normal(rest, 0.25 * rest, size=n - n_mtu)
    else:
        mean = total_bytes / n
        lens[:] = rng.normal(mean, 0.25 * mean, size=n)
    return np.clip(np.rint(lens), MIN_PKT_LEN, MAX_PKT_LEN).astype(int)


def synth_flow_packets(rng: np.random.Generator, profile: ClassProfile,
                       flow_index: int, t0: float) -> list[PacketRecord]:
    """One flow's packets, in time order, all carrying the class label."""
    duration = float(_lognormal(rng, profile.duration_mean, profile.duration_sigma))
    bandwidth = float(_lognormal(rng, profile.bandwidth_mean, profile.bandwidth_sigma))
    total_bytes = bandwidth * 1000.0 / 8.0 * duration

    # handshake prefix: short packets, tight gaps, alternating direction;
    # its bytes and time are carved out of the flow budget, not added on top
    m = int(rng.integers(0, profile.warmup_max + 1)) if profile.warmup_max > 0 else 0
    w_lens = rng.integers(60, 141, size=m)
    w_gaps = rng.exponential(profile.warmup_iat, size=m)  # includes the bridge gap
    body_duration = max(duration - float(w_gaps.sum()), 0.2 * duration)
    body_bytes = max(total_bytes - float(w_lens.sum()), 4.0 * MIN_PKT_LEN)

    n = int(np.clip(round(body_bytes / profile.pkt_len_mean), 4, MAX_FLOW_PACKETS))
    lens = _packet_lengths(rng, n, body_bytes, profile.mtu_frac)
    cap = UDP_GAP_CAP if profile.proto == "udp" else float("inf")
    gaps = _bursty_gaps(rng, n, body_duration, cap, profile.burst_sigma)

    all_lens = np.concatenate([w_lens, lens])
    all_gaps = np.concatenate([np.minimum(w_gaps, cap), gaps])
    times = t0 + np.concatenate([[0.0], np.cumsum(all_gaps)])
    total = m + n

    reverse = rng.random(total) < profile.reverse_frac
    reverse[:m] = np.arange(m) % 2 == 1  # request/response alternation
    reverse[0] = False  # the initiator speaks first

    src = f"10.{(flow_index >> 16) & 255}.{(flow_index >> 8) & 255}.{flow_index & 255}"
    dst = f"192.168.0.{profile.label}"
    sport = 1024 + flow_index % 60000
    dport = _SERVICE_PORTS[(profile.label - 1) % len(_SERVICE_PORTS)]

    packets = []
    for i in range(total):
        fin = 1 if profile.proto == "tcp" and i == total - 1 else 0
        if reverse[i]:
            a, b, ap, bp = dst, src, dport, sport
        else:
            a, b, ap, bp = src, dst, sport, dport
        packets.append(PacketRecord(ts=float(times[i]), src=a, dst=b, sport=ap,
                                    dport=bp, proto=profile.proto,
                                    length=int(all_lens[i]), fin=fin,
                                    label=profile.label))
    return packets


def synth_packets(flows_per_class: int, seed: int = 0,
                  profiles: Sequence[ClassProfile] = DEFAULT_PROFILES,
                  start_spread: float = 600.0) -> list[PacketRecord]:
    """A time-sorted packet log with flows_per_class flows of every class."""
    if flows_per_class < 1:
        raise ConfigError("flows_per_class must be >= 1")
    validate_profiles(profiles)
    if UDP_GAP_CAP >= DEFAULT_UDP_TIMEOUT:
        raise ConfigError("generator gap cap must stay below the idle timeout")
    rng = np.random.default_rng(seed)
    packets: list[PacketRecord] = []
    flow_index = 0
    for profile in profiles:
        for _ in range(flows_per_class):
            t0 = float(rng.uniform(0.0, start_spread))
            packets.extend(synth_flow_packets(rng, profile, flow_index, t0))
            flow_index += 1
    packets.sort(key=lambda p: p.ts)
    return packets


def scaled_profiles(duration_scale: float = 1.0, bandwidth_scale: float = 1.0,
                    sigma: float | None = None,
                    profiles: Sequence[ClassProfile] = DEFAULT_PROFILES,
                    ) -> tuple[ClassProfile, ...]:
    """The default profile set with global knobs applied."""
    out = []
    for p in profiles:
        changes = {
            "duration_mean": p.duration_mean * duration_scale,
            "bandwidth_mean": p.bandwidth_mean * bandwidth_scale,
        }
        if sigma is not None:
            changes["duration_sigma"] = sigma
            changes["bandwidth_sigma"] = sigma
        out.append(replace(p, **changes))
    return tuple(out)
