"""Shared domain types: packets, service records, traces, and interval queries.

A Trace collects the service history of one output link.  Service records
never overlap because the link transmits one packet at a time; packet-level
inject/deliver events ride along so backlog and latency can be reconstructed
without re-running the simulation.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, TextIO

FlowId = int


class TraceError(Exception):
    """A trace operation would violate record ordering."""


@dataclass
class Packet:
    """One unit of traffic, `size` service units (flits or bytes) long."""

    id: int
    flow: FlowId
    size: int
    source: int = 0
    dest: int = 0
    inject_time: int = 0
    deliver_time: int | None = None

    def __post_init__(self) -> None:
        if self.size < 1:
            raise ValueError(f"packet size must be >= 1, got {self.size}")
        if self.deliver_time is not None and self.deliver_time < self.inject_time:
            raise ValueError("deliver_time precedes inject_time")


@dataclass(frozen=True)
class ServiceRecord:
    """One contiguous service visit of a flow on an output link.

    `sent_units` counts units actually moved; `blocking` counts cycles inside
    [start, end) where the head unit could not advance.  At one unit per
    non-blocked cycle, end - start - blocking == sent_units.
    """

    flow: FlowId
    round: int
    start: int
    end: int
    sent_units: int
    blocking: int = 0

    def __post_init__(self) -> None:
        if self.end <= self.start:
            raise ValueError(f"record must span time: start={self.start} end={self.end}")
        if self.blocking < 0 or self.blocking > self.end - self.start:
            raise ValueError(f"blocking {self.blocking} outside [0, {self.end - self.start}]")
        if self.sent_units < 0:
            raise ValueError("sent_units must be >= 0")

    @property
    def duration(self) -> int:
        return self.end - self.start

    @property
    def sending(self) -> int:
        return self.end - self.start - self.blocking


@dataclass
class PacketEvent:
    """Inject/deliver lifecycle of one packet as seen by a trace."""

    packet_id: int
    flow: FlowId
    inject: int
    deliver: int | None = None


@dataclass
class Clock:
    now: int = 0

    def advance(self, cycles: int = 1) -> int:
        if cycles < 0:
            raise ValueError("clock cannot run backwards")
        self.now += cycles
        return self.now


class Trace:
    """Ordered service records plus packet events for one output link."""

    def __init__(self) -> None:
        self.records: list[ServiceRecord] = []
        self.events: list[PacketEvent] = []

    def __len__(self) -> int:
        return len(self.records)

    def last_end(self) -> int | None:
        return self.records[-1].end if self.records else None

    def append(self, rec: ServiceRecord) -> None:
        last = self.last_end()
        if last is not None and rec.start < last:
            raise TraceError(
                f"record for flow {rec.flow} starts at {rec.start} before previous end {last}"
            )
        self.records.append(rec)

    def add_event(self, ev: PacketEvent) -> None:
        self.events.append(ev)

    def flows(self) -> list[FlowId]:
        return sorted({r.flow for r in self.records})

    def records_for(self, flow: FlowId) -> list[ServiceRecord]:
        return [r for r in self.records if r.flow == flow]

    def boundaries(self) -> list[int]:
        """Sorted distinct record start/end times."""
        pts: set[int] = set()
        for r in self.records:
            pts.add(r.start)
            pts.add(r.end)
        return sorted(pts)

    # -- serialization ----------------------------------------------------

    CSV_HEADER = ["flow", "round", "start", "end", "sent_units", "blocking"]

    def to_csv(self, fh: TextIO) -> None:
        w = csv.writer(fh)
        w.writerow(self.CSV_HEADER)
        for r in self.records:
            w.writerow([r.flow, r.round, r.start, r.end, r.sent_units, r.blocking])

    @classmethod
    def from_csv(cls, fh: TextIO) -> "Trace":
        rd = csv.reader(fh)
        header = next(rd, None)
        if header != cls.CSV_HEADER:
            raise TraceError(f"unexpected trace header: {header}")
        t = cls()
        for row in rd:
            if not row:
                continue
            f, rnd, s, e, u, b = (int(x) for x in row)
            t.append(ServiceRecord(f, rnd, s, e, u, b))
        return t

    def to_json(self) -> str:
        return json.dumps(
            [
                {
                    "flow": r.flow,
                    "round": r.round,
                    "start": r.start,
                    "end": r.end,
                    "sent_units": r.sent_units,
                    "blocking": r.blocking,
                }
                for r in self.records
            ],
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "Trace":
        t = cls()
        for obj in json.loads(text):
            t.append(
                ServiceRecord(
                    obj["flow"], obj["round"], obj["start"], obj["end"],
                    obj["sent_units"], obj["blocking"],
                )
            )
        return t


def record_service(trace: Trace, rec: ServiceRecord) -> None:
    """Append a service record, rejecting overlap with the previous record."""
    trace.append(rec)


def _overlap(a0: int, a1: int, t1: int, t2: int) -> int:
    return min(a1, t2) - max(a0, t1)


def sent_in_interval(trace: Trace, flow: FlowId, t1: int, t2: int) -> Fraction:
    """Units flow sent inside (t1, t2), prorating records that straddle a boundary.

    A straddling record contributes sent_units * overlap / duration, i.e. its
    units spread uniformly over its span.  Exact rational arithmetic keeps
    interval additivity an identity rather than an approximation.
    """
    if t2 <= t1:
        raise ValueError(f"empty interval ({t1}, {t2})")
    total = Fraction(0)
    for r in trace.records:
        if r.flow != flow:
            continue
        ov = _overlap(r.start, r.end, t1, t2)
        if ov <= 0:
            continue
        if ov >= r.duration:
            total += r.sent_units
        else:
            total += Fraction(r.sent_units * ov, r.duration)
    return total


def occupation_in_interval(trace: Trace, flow: FlowId, t1: int, t2: int) -> int:
    """Channel cycles (sending + blocking) flow held inside (t1, t2)."""
    if t2 <= t1:
        raise ValueError(f"empty interval ({t1}, {t2})")
    total = 0
    for r in trace.records:
        if r.flow != flow:
            continue
        ov = _overlap(r.start, r.end, t1, t2)
        if ov > 0:
            total += ov
    return total


def throughput_by_flow(trace: Trace) -> dict[FlowId, int]:
    """Total units sent per flow over the whole trace."""
    out: dict[FlowId, int] = {}
    for r in trace.records:
        out[r.flow] = out.get(r.flow, 0) + r.sent_units
    return out


def latency_stats(events: Iterable[PacketEvent]) -> dict[FlowId, dict[str, float]]:
    """Mean/max (deliver - inject) per flow over delivered packets."""
    sums: dict[FlowId, list[int]] = {}
    for ev in events:
        if ev.deliver is None:
            continue
        sums.setdefault(ev.flow, []).append(ev.deliver - ev.inject)
    return {
        f: {"mean": sum(v) / len(v), "max": float(max(v)), "count": float(len(v))}
        for f, v in sums.items()
    }
