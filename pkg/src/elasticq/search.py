"""Beam-style tree search over one-way module downgrades.

Starting from the uniform top-precision config, each step replaces exactly
one module with a strictly lower stored precision (never upward), so every
referenced block already lives in the model store and the ensemble adds no
storage. The beam keeps `stem_count` trajectories; per parent, a sensitivity
pre-filter keeps the `branch_count` least-damaging downgrades before the
pooled candidates are scored on the calibration set. The final pick is the
trajectory with the smallest trapezoid area under its metric-vs-footprint
curve (footprint normalized to [0, 1]).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

from .evaluate import (
    METRIC_KINDS,
    METRIC_LOGIT_DISTANCE,
    CalibrationSet,
    batched_logits,
    mean_logit_l2,
    perplexity_from_logits,
)
from .model import ModuleId
from .quantize import ModelStore, config_footprint
from .sensitivity import SensitivityTable, build_sensitivity_table

log = logging.getLogger("elasticq.search")


@dataclass(frozen=True)
class SearchParams:
    stem_count: int = 2
    branch_count: int = 3
    metric_kind: str = METRIC_LOGIT_DISTANCE

    def __post_init__(self):
        if self.stem_count < 1 or self.branch_count < 1:
            raise ValueError("stem_count and branch_count must be >= 1")
        if self.metric_kind not in METRIC_KINDS:
            raise ValueError(f"unknown metric kind {self.metric_kind!r}")


@dataclass(frozen=True)
class EQMConfig:
    """One hybrid model: a total module -> bits assignment."""

    assignment: dict  # ModuleId -> bits
    footprint_bytes: int
    metric: float | None = None
    changed: tuple | None = None  # (ModuleId, bits) downgrade that produced it

    def key(self, modules) -> tuple:
        return tuple(self.assignment[m] for m in modules)


@dataclass(frozen=True)
class Ensemble:
    trajectory: list  # EQMConfig, footprints strictly decreasing
    params: SearchParams
    metric_kind: str
    precisions: list
    group_size: int
    provenance: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# complexity bookkeeping
# ---------------------------------------------------------------------------

def design_space_size(n_precisions: int, n_modules: int) -> int:
    return n_precisions ** n_modules


def per_step_candidate_bound(n_precisions: int, n_modules: int) -> int:
    return (n_precisions - 1) * n_modules


def format_design_space(n_precisions: int, n_modules: int) -> str:
    v = design_space_size(n_precisions, n_modules)
    exp = len(str(v)) - 1
    mant = v / 10 ** exp
    return f"{n_precisions}^{n_modules} = {mant:.2f}*10^{exp}"


def complexity_report(store: ModelStore) -> dict:
    p = len(store.precisions)
    n = len(store.modules)
    return {
        "design_space": format_design_space(p, n),
        "design_space_size": design_space_size(p, n),
        "per_step_candidate_bound": per_step_candidate_bound(p, n),
    }


# ---------------------------------------------------------------------------
# candidate generation / filtering
# ---------------------------------------------------------------------------

def candidate_generator(
    last: EQMConfig,
    store: ModelStore,
    searchable=None,
    banned: frozenset = frozenset(),
) -> list:
    """Every single-module strict downgrade of `last` (skipping levels is
    allowed); empty once every searchable module sits at the lowest
    precision."""
    searchable = store.modules if searchable is None else searchable
    out = []
    for mid in searchable:
        cur = last.assignment[mid]
        for bits in store.precisions:
            if bits >= cur or (mid, bits) in banned:
                continue
            assign = dict(last.assignment)
            assign[mid] = bits
            fp = last.footprint_bytes - store.module_footprint(mid, cur) + store.module_footprint(mid, bits)
            out.append(EQMConfig(assignment=assign, footprint_bytes=fp, changed=(mid, bits)))
    return out


def analysis_filter(cands: list, table: SensitivityTable, branch_count: int) -> list:
    """Keep the branch_count candidates whose applied downgrade has the
    lowest sensitivity score; ties break lexicographically."""
    def sort_key(c):
        mid, bits = c.changed
        return (table.score(mid, bits), mid.layer, mid.kind, bits)

    return sorted(cands, key=sort_key)[:branch_count]


# ---------------------------------------------------------------------------
# search
# ---------------------------------------------------------------------------

def _normalized_area(points, fp_lo, fp_hi):
    """Trapezoid area under metric vs footprint, footprint mapped to [0,1]."""
    span = fp_hi - fp_lo
    pts = sorted((fp, m) for fp, m in points)
    area = 0.0
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        area += (x1 - x0) / span * (y0 + y1) / 2.0
    return area


@dataclass
class _Trajectory:
    configs: list
    area: float  # cumulative trapezoid area over the configs so far
    finished: bool

    @property
    def last(self) -> EQMConfig:
        return self.configs[-1]


def search_ensemble(
    store: ModelStore,
    calib: CalibrationSet,
    params: SearchParams | None = None,
    table: SensitivityTable | None = None,
    searchable=None,
    banned: frozenset = frozenset(),
) -> Ensemble:
    """Run the full tree search and return the best-trade-off trajectory.

    `searchable` restricts which modules may be downgraded (default: all);
    pinned modules stay at the top precision throughout. `banned` removes
    individual (module, bits) downgrades from the pool (used by pruning).
    """
    params = params or SearchParams()
    if table is None:
        table = build_sensitivity_table(store, calib)

    modules = store.modules
    searchable = modules if searchable is None else list(searchable)
    n_up, n_low = store.n_up, store.n_low

    rep = complexity_report(store)
    log.info(
        "design space size: %s; per-step candidate bound: %d",
        rep["design_space"],
        rep["per_step_candidate_bound"],
    )

    up_assign = store.uniform_assignment(n_up)
    low_assign = dict(up_assign)
    for mid in searchable:
        low_assign[mid] = n_low
    fp_hi = config_footprint(up_assign, store)
    fp_lo = config_footprint(low_assign, store)
    low_key = tuple(low_assign[m] for m in modules)
    span = fp_hi - fp_lo
    if span <= 0:
        raise ValueError("no searchable footprint range")

    # calibrationEval with caching; pooled candidates coincide across stems
    use_distance = params.metric_kind == METRIC_LOGIT_DISTANCE
    ref_logits = batched_logits(store.view_for(up_assign), calib) if use_distance else None
    metric_cache: dict[tuple, float] = {}

    def evaluate(cfg: EQMConfig) -> float:
        key = cfg.key(modules)
        if key not in metric_cache:
            logits = batched_logits(store.view_for(cfg.assignment), calib)
            if use_distance:
                metric_cache[key] = mean_logit_l2(logits, ref_logits)
            else:
                metric_cache[key] = perplexity_from_logits(logits, calib)
        return metric_cache[key]

    def trap(a: EQMConfig, b: EQMConfig) -> float:
        return abs(a.footprint_bytes - b.footprint_bytes) / span * (a.metric + b.metric) / 2.0

    root = EQMConfig(assignment=up_assign, footprint_bytes=fp_hi)
    root = replace(root, metric=evaluate(root))
    live = [
        _Trajectory(configs=[root], area=0.0, finished=root.key(modules) == low_key)
        for _ in range(params.stem_count)
    ]

    while any(not t.finished for t in live):
        # pool filtered successors of every unfinished trajectory, dedup by assignment
        pool: dict[tuple, tuple] = {}  # key -> (config, [parent slot ids])
        for slot, traj in enumerate(live):
            if traj.finished:
                continue
            cands = candidate_generator(traj.last, store, searchable, banned)
            for cand in analysis_filter(cands, table, params.branch_count):
                key = cand.key(modules)
                if key in pool:
                    pool[key][1].append(slot)
                else:
                    pool[key] = (cand, [slot])

        scored = []
        for key, (cand, parents) in pool.items():
            scored.append((evaluate(cand), key, cand, parents))
        scored.sort(key=lambda t: (t[0], t[1]))

        n_unfinished = sum(not t.finished for t in live)
        chosen = scored[: min(n_unfinished, len(scored))]

        new_live = [t for t in live if t.finished]
        for metric, key, cand, parents in chosen:
            cand = replace(cand, metric=metric)
            # parent minimizing the partial area; suffix area is parent-free
            parent = min(parents, key=lambda s: (live[s].area + trap(live[s].last, cand), s))
            pt = live[parent]
            new_live.append(
                _Trajectory(
                    configs=pt.configs + [cand],
                    area=pt.area + trap(pt.last, cand),
                    finished=key == low_key,
                )
            )
        live = new_live

    # pick the minimal-area trajectory; dedupe identical paths first
    seen = set()
    best = None
    for traj in live:
        sig = tuple(c.key(modules) for c in traj.configs)
        if sig in seen:
            continue
        seen.add(sig)
        if best is None or traj.area < best.area - 1e-15:
            best = traj

    return Ensemble(
        trajectory=best.configs,
        params=params,
        metric_kind=params.metric_kind,
        precisions=list(store.precisions),
        group_size=store.group_size,
        provenance={"complexity": rep},
    )


def trajectory_area(ensemble: Ensemble) -> float:
    pts = [(c.footprint_bytes, c.metric) for c in ensemble.trajectory]
    fps = [p[0] for p in pts]
    return _normalized_area(pts, min(fps), max(fps))


# ---------------------------------------------------------------------------
# manifest io
# ---------------------------------------------------------------------------

def _assignment_to_json(assignment: dict) -> list:
    return [
        {"layer": mid.layer, "kind": mid.kind, "bits": bits}
        for mid, bits in sorted(assignment.items())
    ]


def _assignment_from_json(items) -> dict:
    return {ModuleId(e["layer"], e["kind"]): e["bits"] for e in items}


def ensemble_to_json(ensemble: Ensemble, model_meta: dict | None = None) -> dict:
    doc = {
        "precisions": ensemble.precisions,
        "group_size": ensemble.group_size,
        "search_params": {
            "stem_count": ensemble.params.stem_count,
            "branch_count": ensemble.params.branch_count,
        },
        "metric_kind": ensemble.metric_kind,
        "trajectory": [
            {
                "assignment": _assignment_to_json(c.assignment),
                "footprint_bytes": c.footprint_bytes,
                "metric": c.metric,
            }
            for c in ensemble.trajectory
        ],
    }
    doc.update(ensemble.provenance)
    if model_meta:
        doc["model"] = model_meta
    return doc


def save_ensemble(ensemble: Ensemble, path, model_meta: dict | None = None) -> None:
    Path(path).write_text(
        json.dumps(ensemble_to_json(ensemble, model_meta), indent=1, sort_keys=True) + "\n"
    )


def load_ensemble(path) -> tuple[Ensemble, dict]:
    """Returns (ensemble, full manifest dict) so callers can read provenance
    like the embedded model section."""
    doc = json.loads(Path(path).read_text())
    params = SearchParams(
        stem_count=doc["search_params"]["stem_count"],
        branch_count=doc["search_params"]["branch_count"],
        metric_kind=doc["metric_kind"],
    )
    trajectory = [
        EQMConfig(
            assignment=_assignment_from_json(step["assignment"]),
            footprint_bytes=step["footprint_bytes"],
            metric=step["metric"],
        )
        for step in doc["trajectory"]
    ]
    provenance = {
        k: doc[k]
        for k in ("complexity", "prune_rate", "pruned_pairs", "seed")
        if k in doc
    }
    ens = Ensemble(
        trajectory=trajectory,
        params=params,
        metric_kind=doc["metric_kind"],
        precisions=doc["precisions"],
        group_size=doc["group_size"],
        provenance=provenance,
    )
    return ens, doc
