"""Usage-based pruning of intermediate-precision module versions.

Mid-precision (module, bits) pairs are ranked by how many trajectory configs
reference them, ties favoring first use nearer the low-footprint end, then
lexicographic. Pruning removes the bottom ceil(P * total) pairs from the
downgrade pool and re-runs the search under that restriction (post-hoc
trajectory surgery would strand configs referencing pruned parameters).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

from .evaluate import CalibrationSet
from .model import ModuleId
from .quantize import ModelStore
from .search import Ensemble, SearchParams, search_ensemble
from .sensitivity import SensitivityTable


@dataclass(frozen=True)
class UsageEntry:
    module_id: ModuleId
    bits: int
    usage_count: int
    first_use_index: int  # smallest trajectory index referencing it; -1 if unused


@dataclass(frozen=True)
class UsageRanking:
    entries: list  # UsageEntry, best-ranked first

    def __len__(self):
        return len(self.entries)


def validate_prune_rate(rate: float) -> float:
    rate = float(rate)
    if not (0.0 <= rate <= 1.0):
        raise ValueError(f"prune rate must be in [0, 1], got {rate}")
    return rate


def rank_mid_modules(ensemble: Ensemble, store: ModelStore) -> UsageRanking:
    mids = store.mid_precisions
    if not mids:
        raise ValueError("store has no intermediate precisions to rank")
    usage = {(m, b): 0 for m in store.modules for b in mids}
    first = {k: -1 for k in usage}
    for idx, cfg in enumerate(ensemble.trajectory):
        for mid, bits in cfg.assignment.items():
            if bits in mids:
                usage[(mid, bits)] += 1
                if first[(mid, bits)] < 0:
                    first[(mid, bits)] = idx
    entries = [
        UsageEntry(module_id=m, bits=b, usage_count=usage[(m, b)], first_use_index=first[(m, b)])
        for (m, b) in usage
    ]
    # higher usage first; ties favor first use at lower footprints (larger
    # trajectory index); final tie lexicographic
    entries.sort(
        key=lambda e: (
            -e.usage_count,
            -e.first_use_index,
            e.module_id.layer,
            e.module_id.kind,
            e.bits,
        )
    )
    return UsageRanking(entries=entries)


def pruned_pairs(ranking: UsageRanking, rate: float) -> frozenset:
    rate = validate_prune_rate(rate)
    n = math.ceil(rate * len(ranking))
    if n == 0:
        return frozenset()
    return frozenset((e.module_id, e.bits) for e in ranking.entries[len(ranking) - n:])


def prune_and_search(
    store: ModelStore,
    ranking: UsageRanking,
    rate: float,
    calib: CalibrationSet,
    params: SearchParams | None = None,
    table: SensitivityTable | None = None,
) -> Ensemble:
    banned = pruned_pairs(ranking, rate)
    ens = search_ensemble(store, calib, params=params, table=table, banned=banned)
    provenance = dict(ens.provenance)
    provenance["prune_rate"] = validate_prune_rate(rate)
    provenance["pruned_pairs"] = [
        {"layer": m.layer, "kind": m.kind, "bits": b} for m, b in sorted(banned)
    ]
    return Ensemble(
        trajectory=ens.trajectory,
        params=ens.params,
        metric_kind=ens.metric_kind,
        precisions=ens.precisions,
        group_size=ens.group_size,
        provenance=provenance,
    )


def storage_cost(ensemble: Ensemble, store: ModelStore) -> int:
    """Bytes needed to store every distinct (module, bits) block any
    trajectory config references; shared blocks counted once."""
    pairs = set()
    for cfg in ensemble.trajectory:
        pairs.update(cfg.assignment.items())
    return sum(store.module_footprint(m, b) for m, b in pairs)


def save_ranking(ranking: UsageRanking, path) -> None:
    doc = [
        {
            "layer": e.module_id.layer,
            "kind": e.module_id.kind,
            "bits": e.bits,
            "usage_count": e.usage_count,
            "first_use_index": e.first_use_index,
        }
        for e in ranking.entries
    ]
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_ranking(path) -> UsageRanking:
    doc = json.loads(Path(path).read_text())
    return UsageRanking(
        entries=[
            UsageEntry(
                module_id=ModuleId(e["layer"], e["kind"]),
                bits=e["bits"],
                usage_count=e["usage_count"],
                first_use_index=e["first_use_index"],
            )
            for e in doc
        ]
    )
