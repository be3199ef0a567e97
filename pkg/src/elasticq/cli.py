"""Pipeline driver: every stage as a subcommand.

quantize -> store manifests/blobs; sensitivity -> table JSON; search ->
ensemble manifest + curve CSV; prune -> ranking + pruned manifests per rate;
simulate -> swap-simulation report; report -> merged curves across rates;
all -> the whole pipeline. All randomness flows from --seed.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .evaluate import (
    METRIC_KINDS,
    METRIC_LOGIT_DISTANCE,
    default_calibration,
    load_calibration,
)
from .model import ModelConfig, build_model, load_model_config, load_weights
from .persist import save_quantized_model
from .pruning import prune_and_search, rank_mid_modules, save_ranking, storage_cost
from .quantize import DEFAULT_GROUP_SIZE, ModelStore
from .runtime import load_trace, save_report_csv, save_report_json, simulate
from .search import (
    SearchParams,
    complexity_report,
    load_ensemble,
    save_ensemble,
    search_ensemble,
)
from .sensitivity import build_sensitivity_table, save_sensitivity_table

log = logging.getLogger("elasticq")


def _parse_bits(text: str) -> list[int]:
    bits = sorted({int(tok) for tok in text.split(",") if tok.strip()})
    if len(bits) < 2:
        raise argparse.ArgumentTypeError("need at least two precisions, e.g. 2,8")
    return bits


def _parse_rates(text: str) -> list[float]:
    rates = [float(tok) for tok in text.split(",") if tok.strip()]
    if not rates:
        raise argparse.ArgumentTypeError("need at least one prune rate")
    return rates


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model-config", help="key=value model config file")
    p.add_argument("--weights", help="optional flat binary weight file to import")
    p.add_argument("--seed", type=int, default=0, help="model seed (default 0)")
    p.add_argument("--bits", type=_parse_bits, default=[2, 8], help="precision set, e.g. 2,4,8")
    p.add_argument("--group-size", type=int, default=DEFAULT_GROUP_SIZE)
    p.add_argument("--out", default=".", help="output directory (env ELASTICQ_OUT overrides)")
    p.add_argument("--threads", type=int, default=1, help="worker cap for sensitivity eval")


def _add_search_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--calib", help="calibration bytes file (default: shipped corpus)")
    p.add_argument("--stems", type=int, default=2)
    p.add_argument("--branches", type=int, default=3)
    p.add_argument("--metric", choices=METRIC_KINDS, default=METRIC_LOGIT_DISTANCE)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="elasticq", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("quantize", help="build and persist the quantized model store")
    _add_common(p)

    p = sub.add_parser("sensitivity", help="emit the single-replacement sensitivity table")
    _add_common(p)
    _add_search_flags(p)

    p = sub.add_parser("search", help="search the downgrade trajectory ensemble")
    _add_common(p)
    _add_search_flags(p)

    p = sub.add_parser("prune", help="rank mid-precision usage and re-search per prune rate")
    _add_common(p)
    _add_search_flags(p)
    p.add_argument("--rates", type=_parse_rates, default=[0.0, 0.25, 0.5, 0.75])

    p = sub.add_parser("simulate", help="replay a memory trace against an ensemble")
    p.add_argument("--ensemble", required=True, help="ensemble manifest JSON")
    p.add_argument("--trace", required=True, help="CSV trace: step,available_bytes")
    p.add_argument("--out", default=".")

    p = sub.add_parser("report", help="merge per-rate curve CSVs into one report")
    p.add_argument("--out", default=".")

    p = sub.add_parser("all", help="full pipeline")
    _add_common(p)
    _add_search_flags(p)
    p.add_argument("--rates", type=_parse_rates, default=[0.0, 0.25, 0.5, 0.75])
    p.add_argument("--trace", help="optional CSV trace to simulate against the P=0 ensemble")

    return ap


def _outdir(args) -> Path:
    out = Path(os.environ.get("ELASTICQ_OUT", args.out))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _build_store(args) -> ModelStore:
    if args.model_config:
        config = load_model_config(args.model_config)
        if args.seed:
            config = ModelConfig(**{**config.__dict__, "seed": args.seed})
    else:
        config = ModelConfig(seed=args.seed)
    if args.weights:
        model = load_weights(args.weights, config)
    else:
        model = build_model(config)
    return ModelStore(model, args.bits, group_size=args.group_size)


def _load_calib(args, config: ModelConfig):
    if args.calib:
        return load_calibration(args.calib, config.max_context)
    return default_calibration(config.max_context)


def _model_meta(args, store: ModelStore) -> dict:
    cfg = store.config
    return {
        "config": {
            "vocab_size": cfg.vocab_size,
            "d_model": cfg.d_model,
            "n_layers": cfg.n_layers,
            "n_heads": cfg.n_heads,
            "d_ff": cfg.d_ff,
            "max_context": cfg.max_context,
            "seed": cfg.seed,
        },
        "weights_file": args.weights,
        "bits": store.precisions,
        "group_size": store.group_size,
    }


def _write_curve(ensemble, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["footprint_bytes", "metric"])
        for cfg in ensemble.trajectory:
            w.writerow([cfg.footprint_bytes, repr(cfg.metric)])


def _rate_tag(rate: float) -> str:
    return f"p{int(round(rate * 100)):03d}"


def cmd_quantize(args) -> None:
    out = _outdir(args)
    store = _build_store(args)
    for bits in store.precisions:
        path = save_quantized_model(store.quantized[bits], out)
        log.info(
            "quantized %d-bit model: %d bytes -> %s",
            bits, store.quantized[bits].footprint_bytes, path,
        )


def cmd_sensitivity(args) -> None:
    out = _outdir(args)
    store = _build_store(args)
    calib = _load_calib(args, store.config)
    table = build_sensitivity_table(store, calib, threads=args.threads)
    path = out / "sensitivity.json"
    save_sensitivity_table(table, path)
    log.info("sensitivity table (%d entries) -> %s", len(table.scores), path)


def _run_search(args, store, calib, table=None):
    params = SearchParams(
        stem_count=args.stems, branch_count=args.branches, metric_kind=args.metric
    )
    return search_ensemble(store, calib, params=params, table=table)


def cmd_search(args) -> None:
    out = _outdir(args)
    store = _build_store(args)
    rep = complexity_report(store)
    log.info(
        "design space size: %s; per-step candidate bound: %d",
        rep["design_space"], rep["per_step_candidate_bound"],
    )
    calib = _load_calib(args, store.config)
    ensemble = _run_search(args, store, calib)
    save_ensemble(ensemble, out / "ensemble.json", model_meta=_model_meta(args, store))
    _write_curve(ensemble, out / "curve.csv")
    log.info(
        "ensemble: %d configs, storage %d bytes -> %s",
        len(ensemble.trajectory), storage_cost(ensemble, store), out / "ensemble.json",
    )


def cmd_prune(args) -> None:
    out = _outdir(args)
    store = _build_store(args)
    calib = _load_calib(args, store.config)
    table = build_sensitivity_table(store, calib, threads=args.threads)
    base = _run_search(args, store, calib, table=table)
    ranking = rank_mid_modules(base, store)
    save_ranking(ranking, out / "ranking.json")
    meta = _model_meta(args, store)
    for rate in args.rates:
        pruned = prune_and_search(store, ranking, rate, calib, params=base.params, table=table)
        tag = _rate_tag(rate)
        save_ensemble(pruned, out / f"ensemble_{tag}.json", model_meta=meta)
        _write_curve(pruned, out / f"curve_{tag}.csv")
        log.info(
            "P=%.2f: %d configs, storage %d bytes",
            rate, len(pruned.trajectory), storage_cost(pruned, store),
        )


def cmd_simulate(args) -> None:
    out = Path(os.environ.get("ELASTICQ_OUT", args.out))
    out.mkdir(parents=True, exist_ok=True)
    ensemble, doc = load_ensemble(args.ensemble)
    meta = doc.get("model")
    if meta is None:
        raise ValueError(f"{args.ensemble}: manifest has no model section")
    config = ModelConfig(**meta["config"])
    if meta.get("weights_file"):
        model = load_weights(meta["weights_file"], config)
    else:
        model = build_model(config)
    store = ModelStore(model, meta["bits"], group_size=meta["group_size"])
    trace = load_trace(args.trace)
    report = simulate(ensemble, trace, store)
    save_report_json(report, out / "sim_report.json")
    save_report_csv(report, out / "sim_report.csv")
    log.info(
        "simulated %d steps: total_io=%d gap=%d violations=%d",
        len(report.records), report.total_io, report.max_adjacent_gap,
        report.violations_count,
    )


def cmd_report(args) -> None:
    out = Path(os.environ.get("ELASTICQ_OUT", args.out))
    curves = sorted(out.glob("curve_p*.csv"))
    if not curves:
        raise FileNotFoundError(f"no curve_p*.csv files under {out}")
    rows = []
    for path in curves:
        rate = int(path.stem.split("_p")[1]) / 100.0
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                rows.append((rate, int(row["footprint_bytes"]), row["metric"]))
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["prune_rate", "footprint_bytes", "metric"])
        w.writerows(rows)
    log.info("merged %d curves -> %s", len(curves), out / "report.csv")


def cmd_all(args) -> None:
    out = _outdir(args)
    store = _build_store(args)
    rep = complexity_report(store)
    log.info(
        "design space size: %s; per-step candidate bound: %d",
        rep["design_space"], rep["per_step_candidate_bound"],
    )
    for bits in store.precisions:
        save_quantized_model(store.quantized[bits], out)
    calib = _load_calib(args, store.config)
    table = build_sensitivity_table(store, calib, threads=args.threads)
    save_sensitivity_table(table, out / "sensitivity.json")
    base = _run_search(args, store, calib, table=table)
    save_ensemble(base, out / "ensemble.json", model_meta=_model_meta(args, store))
    _write_curve(base, out / "curve.csv")
    meta = _model_meta(args, store)

    storage_rows = []
    if store.mid_precisions:
        ranking = rank_mid_modules(base, store)
        save_ranking(ranking, out / "ranking.json")
        for rate in args.rates:
            pruned = prune_and_search(store, ranking, rate, calib, params=base.params, table=table)
            tag = _rate_tag(rate)
            save_ensemble(pruned, out / f"ensemble_{tag}.json", model_meta=meta)
            _write_curve(pruned, out / f"curve_{tag}.csv")
            storage_rows.append((rate, storage_cost(pruned, store)))
    else:
        _write_curve(base, out / "curve_p000.csv")
        storage_rows.append((0.0, storage_cost(base, store)))
    with open(out / "storage_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["prune_rate", "storage_cost_bytes"])
        w.writerows(storage_rows)

    if args.trace:
        trace = load_trace(args.trace)
        report = simulate(base, trace, store)
        save_report_json(report, out / "sim_report.json")
        save_report_csv(report, out / "sim_report.csv")

    cmd_report(argparse.Namespace(out=str(out)))


_COMMANDS = {
    "quantize": cmd_quantize,
    "sensitivity": cmd_sensitivity,
    "search": cmd_search,
    "prune": cmd_prune,
    "simulate": cmd_simulate,
    "report": cmd_report,
    "all": cmd_all,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        _COMMANDS[args.command](args)
    except (OSError, ValueError, KeyError) as exc:
        print(f"elasticq {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
