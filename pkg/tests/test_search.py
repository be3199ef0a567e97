import numpy as np
import pytest

from elasticq.evaluate import batched_logits, mean_logit_l2
from elasticq.quantize import config_footprint
from elasticq.search import (
    EQMConfig,
    SearchParams,
    analysis_filter,
    candidate_generator,
    design_space_size,
    format_design_space,
    load_ensemble,
    per_step_candidate_bound,
    save_ensemble,
    search_ensemble,
    trajectory_area,
)
from elasticq.sensitivity import build_sensitivity_table

import oracles
from conftest import small_store, tiny_calib


def _uniform_cfg(store, bits):
    assign = store.uniform_assignment(bits)
    return EQMConfig(assignment=assign, footprint_bytes=config_footprint(assign, store))


def check_trajectory_invariants(ensemble, store, searchable=None):
    searchable = store.modules if searchable is None else searchable
    traj = ensemble.trajectory
    fps = [c.footprint_bytes for c in traj]
    assert all(a > b for a, b in zip(fps, fps[1:])), "footprints not strictly decreasing"
    assert traj[0].assignment == store.uniform_assignment(store.n_up)
    expected_last = store.uniform_assignment(store.n_up)
    for mid in searchable:
        expected_last[mid] = store.n_low
    assert traj[-1].assignment == expected_last
    for a, b in zip(traj, traj[1:]):
        diffs = [m for m in store.modules if a.assignment[m] != b.assignment[m]]
        assert len(diffs) == 1, "adjacent configs must differ in exactly one module"
        m = diffs[0]
        assert b.assignment[m] < a.assignment[m], "one-way rule violated"
        assert b.assignment[m] in store.precisions, "unstored precision referenced"
        assert b.footprint_bytes == config_footprint(b.assignment, store)


# --- candidate generation --------------------------------------------------

def test_candidate_counts(calib):
    store = small_store(seed=1, bits=(2, 4, 8))
    last = _uniform_cfg(store, 8)
    cands = candidate_generator(last, store)
    assert len(cands) == 16  # (m+1) * #module

    low = _uniform_cfg(store, 2)
    assert candidate_generator(low, store) == []

    one_down = dict(last.assignment)
    from elasticq.model import ModuleId

    one_down[ModuleId(0, "attn")] = 2
    cfg = EQMConfig(assignment=one_down, footprint_bytes=config_footprint(one_down, store))
    assert len(candidate_generator(cfg, store)) == 14  # 7 modules x 2 options


def test_candidates_are_single_downgrades(calib):
    store = small_store(seed=1, bits=(2, 4, 8))
    last = _uniform_cfg(store, 8)
    for cand in candidate_generator(last, store):
        diffs = [m for m in store.modules if cand.assignment[m] != last.assignment[m]]
        assert diffs == [cand.changed[0]]
        assert cand.assignment[cand.changed[0]] == cand.changed[1] < 8
        assert cand.footprint_bytes == config_footprint(cand.assignment, store)


def test_banned_pairs_excluded(calib):
    store = small_store(seed=1, bits=(2, 4, 8))
    last = _uniform_cfg(store, 8)
    banned = frozenset({(store.modules[0], 4), (store.modules[1], 2)})
    cands = candidate_generator(last, store, banned=banned)
    assert len(cands) == 14
    assert all(c.changed not in banned for c in cands)


# --- analysis filter -------------------------------------------------------

def test_analysis_filter_top_k(calib):
    store = small_store(seed=2, bits=(2, 4, 8))
    table = build_sensitivity_table(store, calib)
    cands = candidate_generator(_uniform_cfg(store, 8), store)
    kept = analysis_filter(cands, table, 3)
    assert len(kept) == 3
    kept_scores = [table.score(*c.changed) for c in kept]
    all_scores = sorted(table.score(*c.changed) for c in cands)
    assert kept_scores == all_scores[:3]
    # branch_count >= candidate count: all retained, sorted
    everything = analysis_filter(cands, table, 100)
    assert len(everything) == 16
    scores = [table.score(*c.changed) for c in everything]
    assert scores == sorted(scores)


# --- search ----------------------------------------------------------------

def test_minimal_beam_two_precisions(calib):
    store = small_store(seed=3, bits=(2, 8))
    ens = search_ensemble(store, calib, SearchParams(stem_count=1, branch_count=1))
    assert len(ens.trajectory) == 9  # 8 single-module downgrades
    check_trajectory_invariants(ens, store)


def test_search_deterministic(calib):
    store = small_store(seed=4, bits=(2, 4, 8))
    a = search_ensemble(store, calib, SearchParams())
    b = search_ensemble(store, calib, SearchParams())
    assert [c.assignment for c in a.trajectory] == [c.assignment for c in b.trajectory]
    assert [c.metric for c in a.trajectory] == [c.metric for c in b.trajectory]


def test_trajectory_invariants_many_seeds(calib):
    for seed in range(5):
        store = small_store(seed=30 + seed, bits=(2, 4, 8))
        ens = search_ensemble(store, calib, SearchParams())
        check_trajectory_invariants(ens, store)


def test_exhaustive_search_matches_bruteforce(calib):
    # 3 searchable modules of a 4-module model, {2,8}: 3! = 6 orderings
    store = small_store(seed=5, bits=(2, 8), n_layers=2)
    searchable = store.modules[:3]
    pinned = {store.modules[3]: 8}

    ref_logits = batched_logits(store.view_for(store.uniform_assignment(8)), calib)

    def eval_fn(assign):
        return mean_logit_l2(batched_logits(store.view_for(assign), calib), ref_logits)

    trajs = oracles.enumerate_orderings(
        searchable, 8, 2, pinned, eval_fn, lambda a: config_footprint(a, store)
    )
    best, best_area = oracles.best_ordering(trajs)

    ens = search_ensemble(
        store, calib, SearchParams(stem_count=6, branch_count=3), searchable=searchable
    )
    check_trajectory_invariants(ens, store, searchable=searchable)
    assert len(ens.trajectory) == len(best) == 4
    for cfg, (assign, fp, metric) in zip(ens.trajectory, best):
        assert cfg.assignment == assign
        assert cfg.footprint_bytes == fp
        assert cfg.metric == pytest.approx(metric, abs=1e-9)
    assert trajectory_area(ens) == pytest.approx(best_area, abs=1e-12)


def test_beam_beats_random_ordering(calib):
    wins = 0
    trials = 6
    for seed in range(trials):
        store = small_store(seed=60 + seed, bits=(2, 8))
        ens = search_ensemble(store, calib, SearchParams())
        ref_logits = batched_logits(store.view_for(store.uniform_assignment(8)), calib)

        rng = np.random.default_rng(seed)
        order = list(store.modules)
        rng.shuffle(order)
        assign = store.uniform_assignment(8)
        metrics = [0.0]
        for mid in order:
            assign[mid] = 2
            metrics.append(
                mean_logit_l2(batched_logits(store.view_for(assign), calib), ref_logits)
            )
        wins += np.mean([c.metric for c in ens.trajectory]) <= np.mean(metrics)
    assert wins >= trials - 1


# --- complexity reporting ---------------------------------------------------

def test_complexity_formulas():
    assert design_space_size(2, 66) == 2 ** 66 == 73786976294838206464
    assert format_design_space(2, 66) == "2^66 = 7.38*10^19"
    assert per_step_candidate_bound(2, 66) == 66
    assert per_step_candidate_bound(3, 8) == 16
    assert format_design_space(3, 8) == "3^8 = 6.56*10^3"


def test_search_logs_design_space(calib, caplog):
    store = small_store(seed=1, bits=(2, 8))
    with caplog.at_level("INFO", logger="elasticq.search"):
        search_ensemble(store, calib, SearchParams(stem_count=1, branch_count=1))
    assert any("design space size: 2^8" in r.getMessage() for r in caplog.records)


# --- manifest io -------------------------------------------------------------

def test_manifest_roundtrip(tmp_path, calib):
    store = small_store(seed=7, bits=(2, 4, 8))
    ens = search_ensemble(store, calib, SearchParams())
    path = tmp_path / "ensemble.json"
    save_ensemble(ens, path, model_meta={"config": {"seed": 7}})
    loaded, doc = load_ensemble(path)
    assert loaded.precisions == ens.precisions
    assert loaded.metric_kind == ens.metric_kind
    assert [c.assignment for c in loaded.trajectory] == [c.assignment for c in ens.trajectory]
    assert [c.footprint_bytes for c in loaded.trajectory] == [
        c.footprint_bytes for c in ens.trajectory
    ]
    assert doc["model"] == {"config": {"seed": 7}}
