"""Calibration-set loading and the two quality metrics.

Byte-level tokenization: token id = byte value. Both metrics are exact,
deterministic reductions in a fixed order (float64 accumulation over float32
logits). The default search metric is logit distance to the highest-precision
quantized model; perplexity is meaningful once trained weights are imported.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .model import ModelView, forward_batch

METRIC_LOGIT_DISTANCE = "logit_distance"
METRIC_PERPLEXITY = "perplexity"
METRIC_KINDS = (METRIC_LOGIT_DISTANCE, METRIC_PERPLEXITY)


@dataclass(frozen=True)
class CalibrationSet:
    sequences: tuple  # tuple of 1-D uint8/int arrays, each len >= 2
    fingerprint: str  # sha256 of the source bytes

    @property
    def total_tokens(self) -> int:
        return sum(len(s) for s in self.sequences)


def calibration_from_bytes(data: bytes, max_context: int = 128) -> CalibrationSet:
    if max_context < 2:
        raise ValueError("max_context must be >= 2")
    seqs = []
    arr = np.frombuffer(data, dtype=np.uint8)
    for start in range(0, arr.size, max_context):
        chunk = arr[start:start + max_context]
        if chunk.size >= 2:  # trailing partial chunk kept only if >= 2 tokens
            seqs.append(chunk.astype(np.int64))
    if not seqs:
        raise ValueError("calibration data too short (no sequence of length >= 2)")
    return CalibrationSet(
        sequences=tuple(seqs), fingerprint=hashlib.sha256(data).hexdigest()
    )


def load_calibration(path, max_context: int = 128) -> CalibrationSet:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data:
        raise ValueError(f"{path}: empty calibration file")
    return calibration_from_bytes(data, max_context)


def default_calibration(max_context: int = 128) -> CalibrationSet:
    """The shipped ~64KB mixed corpus (prose + code + multilingual)."""
    data = resources.files("elasticq.data").joinpath("calibration.txt").read_bytes()
    return calibration_from_bytes(data, max_context)


def _batches(calib: CalibrationSet):
    """Group sequences by length (first-seen order) so each group stacks
    into one forward call; deterministic."""
    by_len: dict[int, list] = {}
    for s in calib.sequences:
        by_len.setdefault(len(s), []).append(s)
    for length, seqs in by_len.items():
        yield np.stack(seqs)


def batched_logits(view: ModelView, calib: CalibrationSet):
    """One (batch, seq, vocab) logits array per length group."""
    return [forward_batch(view, batch) for batch in _batches(calib)]


def nll_from_logits(logits_list, calib: CalibrationSet) -> tuple[float, int]:
    """Total next-token negative log likelihood and position count.

    Positions 1..len-1 of each sequence; stable log-sum-exp; float64 sums.
    """
    total = 0.0
    positions = 0
    it = _batches(calib)
    for logits, batch in zip(logits_list, it):
        pred = logits[:, :-1, :].astype(np.float64)
        targets = batch[:, 1:]
        m = pred.max(axis=-1)
        logz = m + np.log(np.exp(pred - m[..., None]).sum(axis=-1))
        picked = np.take_along_axis(pred, targets[..., None], axis=-1)[..., 0]
        total += float((logz - picked).sum())
        positions += targets.size
    return total, positions


def perplexity_from_logits(logits_list, calib: CalibrationSet) -> float:
    total, positions = nll_from_logits(logits_list, calib)
    return float(np.exp(total / positions))


def perplexity(view: ModelView, calib: CalibrationSet) -> float:
    """exp(mean next-token NLL) over the calibration set; always >= 1
    for finite logits."""
    return perplexity_from_logits(batched_logits(view, calib), calib)


def mean_logit_l2(logits_a, logits_b) -> float:
    """Mean over token positions of the L2 norm over the vocab axis."""
    total = 0.0
    positions = 0
    for a, b in zip(logits_a, logits_b):
        diff = a.astype(np.float64) - b.astype(np.float64)
        total += float(np.sqrt((diff * diff).sum(axis=-1)).sum())
        positions += a.shape[0] * a.shape[1]
    return total / positions


def logit_distance(view: ModelView, reference: ModelView, calib: CalibrationSet) -> float:
    if view.config != reference.config:
        raise ValueError("views have mismatched model configs")
    return mean_logit_l2(batched_logits(view, calib), batched_logits(reference, calib))
