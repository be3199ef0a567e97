"""Single-module replacement sensitivity scores.

For every (module, precision below n_up) pair: replace just that module in
the top-precision model and measure the mean logit L2 distance to the
unmodified top-precision model on the calibration set. Smaller score = the
replacement hurts less = higher rank; ties break on (layer, kind, bits).
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .evaluate import CalibrationSet, batched_logits, mean_logit_l2
from .model import ModuleId
from .quantize import ModelStore


@dataclass(frozen=True)
class SensitivityTable:
    scores: dict  # (ModuleId, bits) -> float
    n_up: int
    calibration_fingerprint: str

    def score(self, mid: ModuleId, bits: int) -> float:
        return self.scores[(mid, bits)]

    def ordered_entries(self):
        """Ascending by score, ties by (layer, kind, bits)."""
        return sorted(
            self.scores.items(), key=lambda kv: (kv[1], kv[0][0].layer, kv[0][0].kind, kv[0][1])
        )


def build_sensitivity_table(
    store: ModelStore, calib: CalibrationSet, threads: int = 1
) -> SensitivityTable:
    n_up = store.n_up
    base_assign = store.uniform_assignment(n_up)
    ref_logits = batched_logits(store.view_for(base_assign), calib)

    pairs = [
        (mid, bits)
        for mid in store.modules
        for bits in store.precisions
        if bits < n_up
    ]

    def score_pair(pair):
        mid, bits = pair
        assign = dict(base_assign)
        assign[mid] = bits
        logits = batched_logits(store.view_for(assign), calib)
        return mean_logit_l2(logits, ref_logits)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(score_pair, pairs))
    else:
        values = [score_pair(p) for p in pairs]

    return SensitivityTable(
        scores=dict(zip(pairs, values)),
        n_up=n_up,
        calibration_fingerprint=calib.fingerprint,
    )


def save_sensitivity_table(table: SensitivityTable, path) -> None:
    entries = [
        {"layer": mid.layer, "kind": mid.kind, "bits": bits, "score": score}
        for (mid, bits), score in table.ordered_entries()
    ]
    doc = {
        "n_up": table.n_up,
        "calibration_fingerprint": table.calibration_fingerprint,
        "entries": entries,
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_sensitivity_table(path) -> SensitivityTable:
    doc = json.loads(Path(path).read_text())
    scores = {
        (ModuleId(e["layer"], e["kind"]), e["bits"]): e["score"]
        for e in doc["entries"]
    }
    return SensitivityTable(
        scores=scores,
        n_up=doc["n_up"],
        calibration_fingerprint=doc["calibration_fingerprint"],
    )
