"""Trace-driven simulation of elastic hosting under a fluctuating budget.

Per step the host picks the largest trajectory config that fits the current
budget and swaps modules one at a time (incoming loads before the outgoing
frees, largest incoming first to shorten time at peak). The search's one-way
rule bounds what is stored; at runtime the host may move both directions
along the trajectory, paying IO to reload higher-bit modules.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

from .quantize import ModelStore
from .search import EQMConfig, Ensemble


@dataclass(frozen=True)
class MemoryTrace:
    steps: list  # (step_index, available_bytes)

    def __post_init__(self):
        if not self.steps:
            raise ValueError("empty memory trace")
        if any(b < 0 for _, b in self.steps):
            raise ValueError("budgets must be >= 0")


@dataclass(frozen=True)
class StepRecord:
    step: int
    budget: int
    config_index: int | None  # None while unloaded
    footprint_bytes: int
    io_bytes: int
    peak_bytes: int
    violation: bool


@dataclass(frozen=True)
class SimReport:
    records: list
    total_io: int
    max_adjacent_gap: int
    violations_count: int


def load_trace(path) -> MemoryTrace:
    steps = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["step", "available_bytes"]:
            raise ValueError(f"{path}: expected header step,available_bytes")
        for row in reader:
            steps.append((int(row["step"]), int(row["available_bytes"])))
    return MemoryTrace(steps=steps)


def save_trace(trace: MemoryTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "available_bytes"])
        w.writerows(trace.steps)


def select_config(ensemble: Ensemble, budget: int) -> int | None:
    """Index of the largest-footprint config fitting the budget, or None."""
    for idx, cfg in enumerate(ensemble.trajectory):
        if cfg.footprint_bytes <= budget:
            return idx
    return None


def transition_cost(from_cfg: EQMConfig, to_cfg: EQMConfig, store: ModelStore) -> tuple[int, int]:
    """(io_bytes, peak_bytes) of swapping from one config to another.

    IO = footprints of incoming blocks not resident under `from`. Peak walks
    the swaps largest-incoming-first, with the incoming block resident
    alongside the outgoing one until the swap completes.
    """
    swaps = [
        (mid, from_cfg.assignment[mid], bits)
        for mid, bits in to_cfg.assignment.items()
        if from_cfg.assignment[mid] != bits
    ]
    if not swaps:
        return 0, from_cfg.footprint_bytes
    swaps.sort(
        key=lambda s: (-store.module_footprint(s[0], s[2]), s[0].layer, s[0].kind)
    )
    io = 0
    running = from_cfg.footprint_bytes
    peak = running
    for mid, old_bits, new_bits in swaps:
        incoming = store.module_footprint(mid, new_bits)
        io += incoming
        peak = max(peak, running + incoming)
        running += incoming - store.module_footprint(mid, old_bits)
    return io, peak


def granularity(ensemble: Ensemble) -> int:
    """Largest footprint gap between adjacent trajectory configs."""
    fps = [c.footprint_bytes for c in ensemble.trajectory]
    if len(fps) < 2:
        return 0
    return max(abs(a - b) for a, b in zip(fps, fps[1:]))


def simulate(ensemble: Ensemble, trace: MemoryTrace, store: ModelStore) -> SimReport:
    records = []
    current: int | None = None
    total_io = 0
    violations = 0
    traj = ensemble.trajectory

    for step, budget in trace.steps:
        target = select_config(ensemble, budget)
        if target is None:
            # even the smallest config does not fit: evict entirely
            record = StepRecord(
                step=step, budget=budget, config_index=None,
                footprint_bytes=0, io_bytes=0, peak_bytes=0, violation=True,
            )
        elif current is None:
            fp = traj[target].footprint_bytes
            record = StepRecord(
                step=step, budget=budget, config_index=target,
                footprint_bytes=fp, io_bytes=fp, peak_bytes=fp,
                violation=fp > budget,
            )
        else:
            io, peak = transition_cost(traj[current], traj[target], store)
            record = StepRecord(
                step=step, budget=budget, config_index=target,
                footprint_bytes=traj[target].footprint_bytes,
                io_bytes=io, peak_bytes=peak, violation=peak > budget,
            )
        records.append(record)
        total_io += record.io_bytes
        violations += record.violation
        current = record.config_index

    return SimReport(
        records=records,
        total_io=total_io,
        max_adjacent_gap=granularity(ensemble),
        violations_count=violations,
    )


def save_report_json(report: SimReport, path) -> None:
    doc = {
        "steps": [
            {
                "step": r.step,
                "budget": r.budget,
                "chosen_config_index": r.config_index,
                "footprint": r.footprint_bytes,
                "io_bytes": r.io_bytes,
                "peak_bytes": r.peak_bytes,
                "violation": r.violation,
            }
            for r in report.records
        ],
        "aggregates": {
            "total_io": report.total_io,
            "max_adjacent_gap": report.max_adjacent_gap,
            "violations_count": report.violations_count,
        },
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def save_report_csv(report: SimReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "budget", "config", "footprint", "io", "peak", "violation"])
        for r in report.records:
            w.writerow(
                [
                    r.step,
                    r.budget,
                    "" if r.config_index is None else r.config_index,
                    r.footprint_bytes,
                    r.io_bytes,
                    r.peak_bytes,
                    int(r.violation),
                ]
            )
