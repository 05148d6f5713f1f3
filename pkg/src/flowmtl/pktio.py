"""File formats: packet-log CSV, flow JSONL, divider JSON.

Packet CSV schema: header `ts,src,dst,sport,dport,proto,len,fin` with
ts in decimal seconds, proto `tcp`|`udp`, fin `0`|`1`.  An optional trailing
`label` column carries per-flow traffic classes for labeled corpora.

Flow JSONL: one object per flow, packets as parallel arrays.  JSON floats
round-trip bit-exactly (shortest-repr serialization), so these files are
stable under re-serialization.
"""

from __future__ import annotations

import csv
import json
from typing import Iterable

import numpy as np

from flowmtl.errors import DataFormatError
from flowmtl.flow import FlowSample, PacketRecord

PACKET_CSV_FIELDS = ["ts", "src", "dst", "sport", "dport", "proto", "len", "fin"]


def _parse_port(value: str, row: int, name: str) -> int:
    port = _parse_int(value, row, name)
    if not 0 <= port <= 65535:
        raise DataFormatError(f"row {row}: {name}={port} outside 0..65535")
    return port


def _parse_int(value: str, row: int, name: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise DataFormatError(f"row {row}: {name}={value!r} is not an integer") from None


def read_packet_csv(path: str) -> list[PacketRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        has_label = header == PACKET_CSV_FIELDS + ["label"]
        if not has_label and header != PACKET_CSV_FIELDS:
            raise DataFormatError(
                f"{path}: bad header {header!r}, expected {','.join(PACKET_CSV_FIELDS)}")

        packets = []
        for i, rec in enumerate(reader, start=2):
            if len(rec) != len(header):
                raise DataFormatError(f"row {i}: expected {len(header)} fields, got {len(rec)}")
            try:
                ts = float(rec[0])
            except ValueError:
                raise DataFormatError(f"row {i}: ts={rec[0]!r} is not a number") from None
            if not np.isfinite(ts) or ts < 0:
                raise DataFormatError(f"row {i}: ts={rec[0]} must be a non-negative number")
            length = _parse_int(rec[6], i, "len")
            if not 0 <= length <= 65535:
                raise DataFormatError(f"row {i}: len={length} outside 0..65535")
            if rec[7] not in ("0", "1"):
                raise DataFormatError(f"row {i}: fin={rec[7]!r} must be 0 or 1")
            proto = rec[5].lower()
            packets.append(PacketRecord(
                ts=ts,
                src=rec[1],
                dst=rec[2],
                sport=_parse_port(rec[3], i, "sport"),
                dport=_parse_port(rec[4], i, "dport"),
                proto=proto,
                length=length,
                fin=rec[7] == "1",
                label=_parse_int(rec[8], i, "label") if has_label and rec[8] else None,
            ))
    return packets


def write_packet_csv(path: str, packets: Iterable[PacketRecord], with_labels: bool = False):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PACKET_CSV_FIELDS + (["label"] if with_labels else []))
        for p in packets:
            row = [repr(p.ts), p.src, p.dst, p.sport, p.dport, p.proto,
                   p.length, int(p.fin)]
            if with_labels:
                row.append("" if p.label is None else p.label)
            writer.writerow(row)


def flow_to_dict(flow: FlowSample, flow_id: int) -> dict:
    (addr_a, port_a), (addr_b, port_b), proto = flow.key
    return {
        "flow_id": flow_id,
        "key": [addr_a, port_a, addr_b, port_b, proto],
        "rel_times": [float(t) for t in flow.rel_times],
        "signed_lengths": [float(v) for v in flow.signed_lengths],
        "first_packet_time": flow.first_packet_time,
        "last_packet_time": flow.last_packet_time,
        "total_bytes": flow.total_bytes,
        "duration": flow.duration,
        "bandwidth": flow.bandwidth,
        "traffic_label": flow.traffic_label,
    }


def flow_from_dict(obj: dict) -> FlowSample:
    try:
        addr_a, port_a, addr_b, port_b, proto = obj["key"]
        return FlowSample(
            key=((addr_a, port_a), (addr_b, port_b), proto),
            rel_times=np.asarray(obj["rel_times"], dtype=np.float64),
            signed_lengths=np.asarray(obj["signed_lengths"], dtype=np.float64),
            first_packet_time=obj["first_packet_time"],
            last_packet_time=obj["last_packet_time"],
            total_bytes=obj["total_bytes"],
            duration=obj["duration"],
            bandwidth=obj["bandwidth"],
            traffic_label=obj.get("traffic_label"),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise DataFormatError(f"bad flow object: {exc}") from None


def write_flows_jsonl(path: str, flows: list[FlowSample], extra: list[dict] | None = None):
    """One JSON object per flow; `extra` merges per-flow fields (e.g. labels)."""
    with open(path, "w") as fh:
        for i, flow in enumerate(flows):
            obj = flow_to_dict(flow, i)
            if extra is not None:
                obj.update(extra[i])
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def read_flows_jsonl(path: str) -> tuple[list[FlowSample], list[dict]]:
    """Returns (flows, raw objects); raw objects keep any label fields present."""
    flows, raw = [], []
    with open(path) as fh:
        for i, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}:{i}: bad JSON: {exc}") from None
            flows.append(flow_from_dict(obj))
            raw.append(obj)
    return flows, raw


def write_dividers_json(path: str, bw: list[float], dur: list[float]):
    with open(path, "w") as fh:
        json.dump({"bw": list(bw), "dur": list(dur)}, fh, sort_keys=True)
        fh.write("\n")


def read_dividers_json(path: str) -> dict:
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: bad JSON: {exc}") from None
    if not isinstance(obj, dict) or "bw" not in obj or "dur" not in obj:
        raise DataFormatError(f'{path}: expected an object with "bw" and "dur" arrays')
    return obj
