"""Per-group round-to-nearest affine weight quantization and footprint math.

A module's matrices are flattened (canonical order, row-major) into one
parameter stream, grouped, and quantized per group: scale = (max-min)/(2^b-1),
zero = min, codes rounded half away from zero. Scales/zeros are stored as
float16 (4 bytes per group); codes are computed against the float16-rounded
values so dequantization reproduces exactly what was rounded against.

footprint_bytes = ceil(params*bits/8) + group_count*4.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import (
    Model,
    ModelConfig,
    ModelView,
    ModuleId,
    _mat_shape,
    list_modules,
    module_mats,
    module_param_count,
)

BITS_MIN = 2
BITS_MAX = 8
DEFAULT_GROUP_SIZE = 64


def validate_bits(bits: int) -> int:
    if not (BITS_MIN <= int(bits) <= BITS_MAX):
        raise ValueError(f"bits must be in [{BITS_MIN}, {BITS_MAX}], got {bits}")
    return int(bits)


def footprint_bytes(param_count: int, bits: int, group_size: int) -> int:
    group_count = -(-param_count // group_size)
    return -(-param_count * bits // 8) + group_count * 4


@dataclass(frozen=True)
class QuantizedModule:
    module_id: ModuleId
    bits: int
    group_size: int
    codes: np.ndarray  # uint8, one code per parameter (packed only on disk)
    scales: np.ndarray  # float16, one per group
    zeros: np.ndarray  # float16, one per group

    @property
    def param_count(self) -> int:
        return int(self.codes.size)

    @property
    def footprint_bytes(self) -> int:
        return footprint_bytes(self.param_count, self.bits, self.group_size)


def flatten_block(block: dict, kind: str) -> np.ndarray:
    return np.concatenate(
        [block[name].reshape(-1) for name in module_mats(kind)]
    ).astype(np.float32)


def unflatten_block(flat: np.ndarray, config: ModelConfig, kind: str) -> dict:
    out = {}
    off = 0
    for name in module_mats(kind):
        shape = _mat_shape(config, kind, name)
        size = shape[0] * shape[1]
        out[name] = flat[off:off + size].reshape(shape)
        off += size
    return out


def quantize_module(
    weights: np.ndarray,
    bits: int,
    group_size: int = DEFAULT_GROUP_SIZE,
    module_id: ModuleId = ModuleId(0, "attn"),
) -> QuantizedModule:
    """Quantize one flat f32 parameter stream."""
    bits = validate_bits(bits)
    flat = np.ascontiguousarray(np.asarray(weights, dtype=np.float32).reshape(-1))
    if flat.size == 0:
        raise ValueError("empty weight block")
    if group_size < 1:
        raise ValueError("group_size must be >= 1")
    max_code = 2 ** bits - 1

    mins, maxs = kernels.group_minmax(flat, group_size)
    degenerate = maxs == mins
    raw_scale = np.where(degenerate, np.float32(1.0), (maxs - mins) / np.float32(max_code))
    scales16 = raw_scale.astype(np.float16)
    # ranges too narrow for float16 underflow to zero; treat as degenerate
    degenerate = degenerate | (scales16 == 0)
    scales16 = np.where(degenerate, np.float16(1.0), scales16)
    zeros16 = mins.astype(np.float16)

    codes = kernels.quantize_codes(
        flat,
        scales16.astype(np.float32),
        zeros16.astype(np.float32),
        group_size,
        max_code,
    )
    if degenerate.any():
        idx = np.arange(flat.size) // group_size
        codes = np.where(degenerate[idx], np.uint8(0), codes)
    return QuantizedModule(
        module_id=module_id,
        bits=bits,
        group_size=group_size,
        codes=codes,
        scales=scales16,
        zeros=zeros16,
    )


def dequantize_module(qmod: QuantizedModule) -> np.ndarray:
    return kernels.dequantize_codes(
        qmod.codes,
        qmod.scales.astype(np.float32),
        qmod.zeros.astype(np.float32),
        qmod.group_size,
    )


@dataclass(frozen=True)
class QuantizedModel:
    """Uniform-precision quantization of every module (the bounds and
    intermediates the hybrid configs draw from)."""

    bits: int
    group_size: int
    modules: dict  # ModuleId -> QuantizedModule

    @property
    def footprint_bytes(self) -> int:
        return sum(m.footprint_bytes for m in self.modules.values())


def quantize_model(model: Model, bits: int, group_size: int = DEFAULT_GROUP_SIZE) -> QuantizedModel:
    bits = validate_bits(bits)
    modules = {}
    for mid in list_modules(model.config):
        flat = flatten_block(model.blocks[mid], mid.kind)
        modules[mid] = quantize_module(flat, bits, group_size, module_id=mid)
    return QuantizedModel(bits=bits, group_size=group_size, modules=modules)


class ModelStore:
    """Base model plus its quantized versions at each precision in the set.

    Hybrid configs only ever reference modules stored here; dequantized
    blocks are cached per (module, bits) and shared between views.
    """

    def __init__(self, model: Model, precisions, group_size: int = DEFAULT_GROUP_SIZE):
        precisions = sorted(validate_bits(b) for b in precisions)
        if len(precisions) < 2:
            raise ValueError("store needs at least two precisions (n_low and n_up)")
        if len(set(precisions)) != len(precisions):
            raise ValueError("precisions must be distinct")
        self.model = model
        self.group_size = group_size
        self.precisions = precisions
        self.modules = list_modules(model.config)
        self.quantized = {b: quantize_model(model, b, group_size) for b in precisions}
        self._dequant_cache: dict[tuple[ModuleId, int], dict] = {}

    @property
    def config(self) -> ModelConfig:
        return self.model.config

    @property
    def n_low(self) -> int:
        return self.precisions[0]

    @property
    def n_up(self) -> int:
        return self.precisions[-1]

    @property
    def mid_precisions(self) -> list[int]:
        return self.precisions[1:-1]

    def module_footprint(self, mid: ModuleId, bits: int) -> int:
        return self.quantized[bits].modules[mid].footprint_bytes

    def dequant_block(self, mid: ModuleId, bits: int) -> dict:
        key = (mid, bits)
        block = self._dequant_cache.get(key)
        if block is None:
            flat = dequantize_module(self.quantized[bits].modules[mid])
            block = unflatten_block(flat, self.config, mid.kind)
            self._dequant_cache[key] = block
        return block

    def view_for(self, assignment: dict) -> ModelView:
        """Materialize a hybrid config: every module overridden by its
        dequantized block at the assigned precision."""
        overrides = {mid: self.dequant_block(mid, bits) for mid, bits in assignment.items()}
        return ModelView(base=self.model, overrides=overrides)

    def uniform_assignment(self, bits: int) -> dict:
        return {mid: bits for mid in self.modules}


def config_footprint(assignment: dict, store: ModelStore) -> int:
    """Byte footprint of one hybrid assignment (total over all modules)."""
    total = 0
    for mid in store.modules:
        bits = assignment[mid]
        if bits not in store.quantized:
            raise KeyError(f"precision {bits} not in store {store.precisions}")
        total += store.module_footprint(mid, bits)
    return total
