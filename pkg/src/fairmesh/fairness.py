"""Empirical fairness measurement over service traces.

The measure compares normalized service between flow pairs: over a window
(t1, t2) in which both flows stay backlogged, the gap is
|S_i/f_i - S_j/f_j| where S is either units sent (packet-size mode) or
channel cycles held (occupation mode, sending plus blocking).  Sweeping the
gap over many windows yields an empirical fairness bound per mode: the
size-based sweep estimates the relative fairness bound (RFB), and the
occupation-based sweep the channel fairness bound (CFB).  A scheduler is
fair in a mode when the bound stays flat as windows grow; unfairness shows
up as a positive slope of max-gap versus window length.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence, TextIO

import numpy as np

from .core import FlowId, Trace, occupation_in_interval, sent_in_interval
from .schedulers import Accounting

Interval = tuple[int, int]


def normalized_service(
    trace: Trace,
    flow: FlowId,
    weight: float | Fraction,
    t1: int,
    t2: int,
    mode: Accounting = Accounting.PACKET_SIZE,
) -> Fraction:
    """Service of one flow in (t1, t2) divided by its weight."""
    if weight <= 0:
        raise ValueError(f"flow weight must be positive, got {weight}")
    if mode is Accounting.OCCUPATION:
        raw: Fraction | int = occupation_in_interval(trace, flow, t1, t2)
    else:
        raw = sent_in_interval(trace, flow, t1, t2)
    return Fraction(raw) / Fraction(weight)


def backlog_intervals(
    events: Iterable[tuple[int, int]],
    horizon: int | None = None,
) -> list[Interval]:
    """Maximal [start, end) intervals with positive queue length.

    `events` are (cycle, queue_len_after) transitions in time order, with the
    queue empty before the first event.  An interval still open at the last
    event closes at `horizon` when given, else stays open (end == horizon is
    required to close it).
    """
    intervals: list[Interval] = []
    open_at: int | None = None
    last_cycle: int | None = None
    for cycle, qlen in events:
        if last_cycle is not None and cycle < last_cycle:
            raise ValueError(f"queue events out of order at cycle {cycle}")
        last_cycle = cycle
        if qlen < 0:
            raise ValueError(f"negative queue length at cycle {cycle}")
        if open_at is None and qlen > 0:
            open_at = cycle
        elif open_at is not None and qlen == 0:
            if cycle > open_at:
                intervals.append((open_at, cycle))
            open_at = None
    if open_at is not None:
        if horizon is None:
            raise ValueError("backlog still open at final event; pass horizon to close it")
        if horizon > open_at:
            intervals.append((open_at, horizon))
    return intervals


def backlog_from_trace(trace: Trace, horizon: int | None = None) -> dict[FlowId, list[Interval]]:
    """Per-flow backlog intervals reconstructed from packet events.

    A packet occupies its queue from inject until service completion, so the
    queue-length trajectory is the running sum of +-1 deltas.  Undelivered
    packets hold their queue open to the horizon.
    """
    deltas: dict[FlowId, dict[int, int]] = {}
    end_default = horizon
    for ev in trace.events:
        d = deltas.setdefault(ev.flow, {})
        d[ev.inject] = d.get(ev.inject, 0) + 1
        if ev.deliver is not None:
            d[ev.deliver] = d.get(ev.deliver, 0) - 1
        elif end_default is None:
            last = trace.last_end()
            end_default = last if last is not None else ev.inject + 1
    out: dict[FlowId, list[Interval]] = {}
    for flow, d in deltas.items():
        qlen = 0
        evs = []
        for cycle in sorted(d):
            qlen += d[cycle]
            evs.append((cycle, qlen))
        close = horizon if horizon is not None else end_default
        out[flow] = backlog_intervals(evs, horizon=close)
    return out


def _covering(intervals: Sequence[Interval], t1: int, t2: int) -> bool:
    return any(a <= t1 and t2 <= b for a, b in intervals)


def fm_over_interval(
    trace: Trace,
    weights: dict[FlowId, float | Fraction],
    t1: int,
    t2: int,
    mode: Accounting = Accounting.PACKET_SIZE,
    backlogs: dict[FlowId, list[Interval]] | None = None,
) -> Fraction:
    """Largest pairwise normalized-service gap over flows backlogged through
    (t1, t2).  Zero when fewer than two such flows exist.

    Exact rational arithmetic; the windowed estimator below is the fast path.
    """
    if backlogs is None:
        backlogs = backlog_from_trace(trace, horizon=None)
    flows = [
        f for f in weights
        if _covering(backlogs.get(f, []), t1, t2)
    ]
    if len(flows) < 2:
        return Fraction(0)
    services = {
        f: normalized_service(trace, f, weights[f], t1, t2, mode) for f in flows
    }
    vals = sorted(services.values())
    return vals[-1] - vals[0]


@dataclass
class ModeSweep:
    """Window-sweep result for one accounting mode."""

    max_fm: float
    witness: Interval | None
    profile: list[tuple[int, float, int, int]]  # (length_bin_center, max_fm, t1, t2)
    slope: float

    def to_dict(self) -> dict:
        return {
            "max_fm": self.max_fm,
            "witness": list(self.witness) if self.witness else None,
            "profile": [list(p) for p in self.profile],
            "slope_per_cycle": self.slope,
        }


@dataclass
class FairnessReport:
    flows: list[FlowId]
    weights: dict[FlowId, float]
    grid: str
    backlogs: dict[FlowId, list[Interval]]
    sweeps: dict[str, ModeSweep] = field(default_factory=dict)

    @property
    def rfb_estimate(self) -> float:
        return self.sweeps[Accounting.PACKET_SIZE.value].max_fm

    @property
    def cfb_estimate(self) -> float:
        return self.sweeps[Accounting.OCCUPATION.value].max_fm

    def sweep(self, mode: Accounting) -> ModeSweep:
        return self.sweeps[mode.value]

    def to_dict(self) -> dict:
        return {
            "flows": self.flows,
            "weights": {str(k): v for k, v in sorted(self.weights.items())},
            "grid": self.grid,
            "backlogs": {str(k): [list(i) for i in v] for k, v in sorted(self.backlogs.items())},
            "rfb_estimate": self.rfb_estimate,
            "cfb_estimate": self.cfb_estimate,
            "sweeps": {k: s.to_dict() for k, s in self.sweeps.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def windows_to_csv(self, fh: TextIO, mode: Accounting = Accounting.PACKET_SIZE) -> None:
        w = csv.writer(fh)
        w.writerow(["t1", "t2", "fm"])
        for _, fm, t1, t2 in self.sweeps[mode.value].profile:
            w.writerow([t1, t2, fm])


_MAX_GRID = 1500
_N_BINS = 24


def _grid_indices(n_bounds: int, grid: Sequence[int] | None, bounds: np.ndarray) -> tuple[np.ndarray, str]:
    if grid is not None:
        want = np.asarray(sorted(set(grid)))
        idx = np.searchsorted(bounds, want)
        idx = idx[(idx < n_bounds)]
        idx = idx[bounds[idx] == want[: len(idx)]] if len(idx) == len(want) else np.unique(idx)
        return np.unique(idx), f"user grid ({len(idx)} boundary points)"
    if n_bounds <= _MAX_GRID:
        return np.arange(n_bounds), f"all {n_bounds} record boundaries"
    step = int(np.ceil(n_bounds / _MAX_GRID))
    return np.arange(0, n_bounds, step), (
        f"every {step}th of {n_bounds} record boundaries"
    )


def rfb_estimate(
    trace: Trace,
    weights: dict[FlowId, float],
    window_grid: Sequence[int] | None = None,
    mode: Accounting = Accounting.PACKET_SIZE,
    horizon: int | None = None,
    n_bins: int = _N_BINS,
) -> FairnessReport:
    """Sweep fairness gaps over windows spanned by record boundaries.

    Both accounting modes are swept; `mode` only marks which one callers
    treat as primary.  The overall estimate per mode is exact over all
    boundary windows inside common backlog stretches (cumulative curves make
    every window a pair difference, so the max is a max-minus-min).  The
    FM-versus-window-length profile is binned over the window grid, and its
    least-squares slope is the boundedness statistic: near zero for a fair
    discipline, positive when the gap grows with window length.
    """
    for f, w in weights.items():
        if w <= 0:
            raise ValueError(f"flow weight must be positive, got {w} for flow {f}")
    flows = sorted(weights)
    backlogs = backlog_from_trace(trace, horizon=horizon)
    bounds_list = trace.boundaries()
    report = FairnessReport(
        flows=flows,
        weights={f: float(weights[f]) for f in flows},
        grid="empty trace",
        backlogs={f: backlogs.get(f, []) for f in flows},
    )
    if len(bounds_list) < 2 or len(flows) < 1:
        for acct in Accounting:
            report.sweeps[acct.value] = ModeSweep(0.0, None, [], 0.0)
        return report

    bounds = np.asarray(bounds_list, dtype=np.int64)
    nb = len(bounds)
    # cumulative units per flow at each boundary; records never straddle a
    # boundary of the same trace, so these are exact integers
    cum_sent = {f: np.zeros(nb, dtype=np.int64) for f in flows}
    cum_occ = {f: np.zeros(nb, dtype=np.int64) for f in flows}
    pos = {int(t): k for k, t in enumerate(bounds)}
    for r in trace.records:
        if r.flow not in cum_sent:
            continue
        k = pos[r.end]
        cum_sent[r.flow][k] += r.sent_units
        cum_occ[r.flow][k] += r.end - r.start
    for f in flows:
        np.cumsum(cum_sent[f], out=cum_sent[f])
        np.cumsum(cum_occ[f], out=cum_occ[f])

    grid_idx, grid_desc = _grid_indices(nb, window_grid, bounds)
    report.grid = grid_desc

    for acct, cum in ((Accounting.PACKET_SIZE, cum_sent), (Accounting.OCCUPATION, cum_occ)):
        best = 0.0
        witness: Interval | None = None
        bin_best: dict[int, tuple[float, int, int]] = {}
        max_len = int(bounds[-1] - bounds[0])
        bin_w = max(1, int(np.ceil(max_len / n_bins)))
        for ai in range(len(flows)):
            for bi in range(ai + 1, len(flows)):
                fa, fb = flows[ai], flows[bi]
                d = cum[fa] / weights[fa] - cum[fb] / weights[fb]
                for a1, a2 in _common_stretches(backlogs.get(fa, []), backlogs.get(fb, [])):
                    lo = int(np.searchsorted(bounds, a1, side="left"))
                    hi = int(np.searchsorted(bounds, a2, side="right"))
                    if hi - lo < 2:
                        continue
                    seg = d[lo:hi]
                    k_max = int(np.argmax(seg))
                    k_min = int(np.argmin(seg))
                    gap = float(seg[k_max] - seg[k_min])
                    if gap > best:
                        best = gap
                        w1, w2 = sorted((int(bounds[lo + k_max]), int(bounds[lo + k_min])))
                        witness = (w1, w2)
                    # binned profile over the window grid
                    gsel = grid_idx[(grid_idx >= lo) & (grid_idx < hi)]
                    if len(gsel) < 2:
                        continue
                    gt = bounds[gsel]
                    gd = d[gsel]
                    lengths = gt[None, :] - gt[:, None]
                    fms = np.abs(gd[None, :] - gd[:, None])
                    iu = np.triu_indices(len(gsel), k=1)
                    lens_flat = lengths[iu]
                    fms_flat = fms[iu]
                    bins = lens_flat // bin_w
                    for b in np.unique(bins):
                        sel = bins == b
                        k = int(np.argmax(fms_flat[sel]))
                        val = float(fms_flat[sel][k])
                        cur = bin_best.get(int(b))
                        if cur is None or val > cur[0]:
                            r1 = int(gt[iu[0][sel][k]])
                            r2 = int(gt[iu[1][sel][k]])
                            bin_best[int(b)] = (val, r1, r2)
        profile = [
            (int((b + 0.5) * bin_w), v, t1, t2)
            for b, (v, t1, t2) in sorted(bin_best.items())
        ]
        if len(profile) >= 2:
            xs = np.array([p[0] for p in profile], dtype=float)
            ys = np.array([p[1] for p in profile], dtype=float)
            slope = float(np.polyfit(xs, ys, 1)[0])
        else:
            slope = 0.0
        report.sweeps[acct.value] = ModeSweep(best, witness, profile, slope)
    return report


def _common_stretches(a: Sequence[Interval], b: Sequence[Interval]) -> list[Interval]:
    """Pairwise intersection of two interval lists."""
    out = []
    i = j = 0
    a = sorted(a)
    b = sorted(b)
    while i < len(a) and j < len(b):
        lo = max(a[i][0], b[j][0])
        hi = min(a[i][1], b[j][1])
        if hi > lo:
            out.append((lo, hi))
        if a[i][1] <= b[j][1]:
            i += 1
        else:
            j += 1
    return out
