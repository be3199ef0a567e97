"""Acceptance gate: ten end-to-end criteria, one printed pass/fail line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the verdict lines on
passing runs (pytest shows captured output only for failures by default).
"""

import time

import numpy as np
import pytest

from elasticq.evaluate import batched_logits, logit_distance, mean_logit_l2
from elasticq.model import ModelConfig, ModuleId, build_model, complexity_check_config
from elasticq.pruning import prune_and_search, rank_mid_modules, storage_cost
from elasticq.quantize import (
    ModelStore,
    config_footprint,
    dequantize_module,
    quantize_module,
)
from elasticq.runtime import MemoryTrace, granularity, simulate
from elasticq.search import SearchParams, complexity_report, search_ensemble
from elasticq.sensitivity import build_sensitivity_table

import oracles
from conftest import small_config, small_store, tiny_calib
from test_search import check_trajectory_invariants


def _verdict(num: int, ok: bool, detail: str) -> None:
    print(f"\nACCEPTANCE {num:02d}: {'PASS' if ok else 'FAIL'} - {detail}", flush=True)
    assert ok, f"criterion {num}: {detail}"


@pytest.fixture(scope="module")
def fast_calib():
    # smaller than the shared fixture; used by the multi-seed loops
    return tiny_calib(max_context=64, nbytes=256)


@pytest.fixture(scope="module")
def default_store():
    return ModelStore(build_model(ModelConfig(seed=0)), [2, 8])


def test_criterion_01_exhaustive_search_equivalence(calib):
    start = time.perf_counter()
    store = small_store(seed=5, bits=(2, 8), n_layers=2)
    searchable = store.modules[:3]
    pinned = {store.modules[3]: 8}

    ref = batched_logits(store.view_for(store.uniform_assignment(8)), calib)

    def eval_fn(assign):
        return mean_logit_l2(batched_logits(store.view_for(assign), calib), ref)

    trajs = oracles.enumerate_orderings(
        searchable, 8, 2, pinned, eval_fn, lambda a: config_footprint(a, store)
    )
    best, _ = oracles.best_ordering(trajs)
    ens = search_ensemble(
        store, calib, SearchParams(stem_count=6, branch_count=3), searchable=searchable
    )
    elapsed = time.perf_counter() - start

    ok = len(ens.trajectory) == len(best) == 4
    worst = 0.0
    for cfg, (assign, fp, metric) in zip(ens.trajectory, best):
        ok = ok and cfg.assignment == assign and cfg.footprint_bytes == fp
        worst = max(worst, abs(cfg.metric - metric))
    ok = ok and worst <= 1e-9 and elapsed < 10.0
    _verdict(
        1, ok,
        f"3-module search matches brute force over all 6 orderings "
        f"(max metric delta {worst:.2e}, {elapsed:.2f}s)",
    )


def test_criterion_02_trajectory_invariants(fast_calib):
    failures = []
    for seed in range(20):
        store = small_store(seed=200 + seed, bits=(2, 4, 8))
        ens = search_ensemble(store, fast_calib, SearchParams())
        try:
            check_trajectory_invariants(ens, store)
        except AssertionError as exc:
            failures.append((seed, str(exc)))
    _verdict(
        2, not failures,
        f"20 seeded {{2,4,8}} runs, {len(failures)} invariant failures"
        + (f" (first: {failures[0]})" if failures else ""),
    )


def test_criterion_03_storage_sharing(fast_calib):
    costs = []
    for seed in range(20):
        store = ModelStore(build_model(ModelConfig(seed=seed)), [2, 8])
        params = (
            SearchParams() if seed % 5 == 0 else SearchParams(stem_count=1, branch_count=1)
        )
        ens = search_ensemble(store, fast_calib, params)
        costs.append(storage_cost(ens, store))
    ok = all(c == 270336 for c in costs)
    _verdict(
        3, ok,
        f"{{2,8}} storage_cost across 20 seeds: {sorted(set(costs))} (expect [270336])",
    )


def test_criterion_04_granularity(default_store, fast_calib):
    ens = search_ensemble(
        default_store, fast_calib, SearchParams(stem_count=1, branch_count=1)
    )
    g = granularity(ens)
    baseline = (
        default_store.quantized[8].footprint_bytes
        - default_store.quantized[2].footprint_bytes
    )
    ok = g <= 24576 and baseline == 147456 and baseline / g >= 6
    _verdict(
        4, ok,
        f"trajectory granularity {g} <= 24576; uniform baseline {baseline}; "
        f"ratio {baseline / g:.1f}x >= 6x",
    )


def test_criterion_05_complexity_report(fast_calib, caplog):
    preset = complexity_check_config()
    store66 = ModelStore(build_model(preset), [2, 8])
    rep = complexity_report(store66)
    ok = (
        len(store66.modules) == 66
        and rep["design_space"] == "2^66 = 7.38*10^19"
        and rep["per_step_candidate_bound"] == 66
    )
    with caplog.at_level("INFO", logger="elasticq.search"):
        search_ensemble(
            small_store(seed=1, bits=(2, 8)), fast_calib,
            SearchParams(stem_count=1, branch_count=1),
        )
    logged = [
        r.getMessage() for r in caplog.records
        if "design space size" in r.getMessage()
    ]
    ok = ok and logged and "per-step candidate bound" in logged[0]
    _verdict(
        5, ok,
        f"66-module preset reports '{rep['design_space']}', bound "
        f"{rep['per_step_candidate_bound']}; run log line present",
    )


def test_criterion_06_pruning_family(fast_calib):
    p0_means, p1_means = [], []
    per_seed_wins = 0
    storage_ok = endpoint_ok = True
    family_detail = ""
    for seed in range(10):
        store = small_store(seed=300 + seed, bits=(2, 4, 8))
        table = build_sensitivity_table(store, fast_calib)
        base = search_ensemble(store, fast_calib, SearchParams(), table=table)
        ranking = rank_mid_modules(base, store)

        p0 = prune_and_search(store, ranking, 0.0, fast_calib, params=base.params, table=table)
        p1 = prune_and_search(store, ranking, 1.0, fast_calib, params=base.params, table=table)
        endpoint_ok = endpoint_ok and (
            [c.assignment for c in p0.trajectory] == [c.assignment for c in base.trajectory]
        )
        if seed == 0:
            # P=1 equals a fresh two-precision search
            store28 = ModelStore(build_model(small_config(seed=300)), [2, 8])
            ref = search_ensemble(store28, fast_calib, base.params)
            endpoint_ok = endpoint_ok and (
                [c.assignment for c in p1.trajectory] == [c.assignment for c in ref.trajectory]
            )
            costs = [storage_cost(p0, store)]
            for rate in (0.25, 0.5, 0.75):
                pruned = prune_and_search(
                    store, ranking, rate, fast_calib, params=base.params, table=table
                )
                costs.append(storage_cost(pruned, store))
            storage_ok = all(a >= b for a, b in zip(costs, costs[1:]))
            family_detail = f"storage {costs}"
        m0 = float(np.mean([c.metric for c in p0.trajectory]))
        m1 = float(np.mean([c.metric for c in p1.trajectory]))
        p0_means.append(m0)
        p1_means.append(m1)
        per_seed_wins += m0 <= m1 + 1e-12
    ok = storage_ok and endpoint_ok and per_seed_wins == 10
    _verdict(
        6, ok,
        f"{family_detail} nonincreasing={storage_ok}; P=0==unpruned and "
        f"P=1=={{2,8}} search: {endpoint_ok}; P=0 mean metric dominates P=1 "
        f"in {per_seed_wins}/10 seeds (aggregate {np.mean(p0_means):.4f} vs "
        f"{np.mean(p1_means):.4f})",
    )


def test_criterion_07_beam_quality(fast_calib):
    wins = 0
    trials = 20
    for seed in range(trials):
        store = small_store(seed=400 + seed, bits=(2, 8))
        ens = search_ensemble(store, fast_calib, SearchParams())
        ref = batched_logits(store.view_for(store.uniform_assignment(8)), fast_calib)
        rng = np.random.default_rng(seed)
        order = list(store.modules)
        rng.shuffle(order)
        assign = store.uniform_assignment(8)
        metrics = [0.0]
        for mid in order:
            assign[mid] = 2
            metrics.append(
                mean_logit_l2(batched_logits(store.view_for(assign), fast_calib), ref)
            )
        wins += float(np.mean([c.metric for c in ens.trajectory])) <= float(np.mean(metrics))
    ok = wins >= 0.9 * trials
    _verdict(7, ok, f"beam mean metric <= random ordering in {wins}/{trials} trials (need 18)")


def test_criterion_08_quantizer_correctness(default_store):
    rng = np.random.default_rng(20240823)
    rt_ok = end_ok = True
    worst_rt = -np.inf
    worst_end = 0.0
    for _ in range(1000):
        bits = int(rng.integers(2, 9))
        x = rng.uniform(-1.0, 1.0, size=64).astype(np.float32)
        q = quantize_module(x, bits, group_size=64)
        r = dequantize_module(q)
        scale = np.float32(q.scales[0])
        zero = np.float32(q.zeros[0])
        tol = scale / 2 + 4 * np.spacing(np.abs(x))
        margin = float(np.max(np.abs(x - r) - tol))
        worst_rt = max(worst_rt, margin)
        rt_ok = rt_ok and margin <= 0.0
        # endpoint reconstruction, relative to the group's value range
        mn, mx = float(x.min()), float(x.max())
        span = mx - mn
        top = float(np.float32(zero + scale * (2 ** bits - 1)))
        rel = max(abs(float(zero) - mn), abs(top - mx)) / span
        worst_end = max(worst_end, rel)
        end_ok = end_ok and rel <= 2 ** -10

    fp8 = default_store.quantized[8].footprint_bytes
    fp2 = default_store.quantized[2].footprint_bytes
    mixed_assign = default_store.uniform_assignment(8)
    mixed_assign[ModuleId(0, "mlp")] = 2
    mixed = config_footprint(mixed_assign, default_store)
    fp_ok = (fp8, fp2, mixed) == (208896, 61440, 184320)
    ok = rt_ok and end_ok and fp_ok
    _verdict(
        8, ok,
        f"1000 blocks: round-trip margin {worst_rt:.2e} <= 0; endpoint rel "
        f"{worst_end:.2e} <= 2^-10; footprints {(fp8, fp2, mixed)}",
    )


def test_criterion_09_simulator_conservation(calib):
    store = small_store(seed=8, bits=(2, 8))
    ens = search_ensemble(store, calib, SearchParams(stem_count=1, branch_count=1))
    lo = ens.trajectory[-1].footprint_bytes
    hi = ens.trajectory[0].footprint_bytes

    rng = np.random.default_rng(7)
    budget = hi
    budgets = []
    for _ in range(200):
        budget = int(np.clip(budget + rng.integers(-9000, 9000), lo * 0.7, hi * 1.4))
        budgets.append(budget)
    report = simulate(ens, MemoryTrace(steps=list(enumerate(budgets))), store)
    oracle_io = oracles.replay_total_io(
        [(c.assignment, c.footprint_bytes) for c in ens.trajectory],
        budgets,
        store.module_footprint,
    )
    io_ok = report.total_io == oracle_io

    # a trace with no possible violation: load smallest, upgrade with headroom
    safe = [lo] + [3 * hi] * 20
    safe_report = simulate(ens, MemoryTrace(steps=list(enumerate(safe))), store)
    configs_seen = {r.config_index for r in safe_report.records}
    safe_ok = safe_report.violations_count == 0 and configs_seen == {len(ens.trajectory) - 1, 0}
    _verdict(
        9, io_ok and safe_ok,
        f"200-step random walk total_io {report.total_io} == oracle {oracle_io}; "
        f"violation-free trace: {safe_report.violations_count} violations",
    )


def test_criterion_10_single_replacement_stability(calib):
    wins = 0
    trials = 40
    for seed in range(trials):
        store = ModelStore(build_model(small_config(seed=1000 + seed)), [2, 8])
        v8 = store.view_for(store.uniform_assignment(8))
        full = logit_distance(store.view_for(store.uniform_assignment(2)), v8, calib)
        rng = np.random.default_rng(seed)
        mid = store.modules[int(rng.integers(len(store.modules)))]
        assign = store.uniform_assignment(8)
        assign[mid] = 2
        single = logit_distance(store.view_for(assign), v8, calib)
        wins += single <= full
    ok = wins >= 0.95 * trials
    _verdict(
        10, ok,
        f"single 8->2 replacement <= full replacement in {wins}/{trials} trials (need 38)",
    )
