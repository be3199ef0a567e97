"""Deterministic toy byte-level decoder transformer.

Weights come from a seeded generator (or an imported flat binary file) so the
whole pipeline is reproducible end to end. Quantizable units are one
attention block or one MLP block per layer; embedding/unembedding stay full
precision and the unembedding is tied to the embedding.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

KIND_ATTN = "attn"
KIND_MLP = "mlp"
KINDS = (KIND_ATTN, KIND_MLP)

ATTN_MATS = ("wq", "wk", "wv", "wo")
MLP_MATS = ("w_in", "w_out")

_WEIGHT_MAGIC = b"EQW1"


class ModuleId(NamedTuple):
    layer: int
    kind: str


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 256
    d_model: int = 64
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 256
    max_context: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if min(self.d_model, self.n_heads, self.d_ff, self.max_context) < 1:
            raise ValueError("model dimensions must be positive")
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model ({self.d_model}) not divisible by n_heads ({self.n_heads})"
            )
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise ValueError("seed must fit in 64 bits")


def complexity_check_config(seed: int = 0) -> ModelConfig:
    """66-module preset (33 layers x 2). Used only to check the search
    complexity formulas against a realistically sized module count; small
    widths keep it cheap and no real-model weights are implied."""
    return ModelConfig(d_model=8, n_heads=2, d_ff=16, n_layers=33, seed=seed)


def list_modules(config: ModelConfig) -> list[ModuleId]:
    """Layer-major order, attention before MLP."""
    return [ModuleId(l, k) for l in range(config.n_layers) for k in KINDS]


def module_mats(kind: str) -> tuple[str, ...]:
    return ATTN_MATS if kind == KIND_ATTN else MLP_MATS


def module_param_count(config: ModelConfig, kind: str) -> int:
    if kind == KIND_ATTN:
        return 4 * config.d_model * config.d_model
    return 2 * config.d_model * config.d_ff


def _mat_shape(config: ModelConfig, kind: str, name: str) -> tuple[int, int]:
    d, f = config.d_model, config.d_ff
    if kind == KIND_ATTN:
        return (d, d)
    return (d, f) if name == "w_in" else (f, d)


@dataclass(frozen=True)
class Model:
    config: ModelConfig
    embedding: np.ndarray  # (vocab, d_model), never quantized; unembedding tied
    blocks: dict  # ModuleId -> {mat name: ndarray}


@dataclass(frozen=True)
class ModelView:
    """Base model plus per-module weight overrides (dequantized blocks)."""

    base: Model
    overrides: dict = field(default_factory=dict)

    @property
    def config(self) -> ModelConfig:
        return self.base.config

    def block(self, mid: ModuleId) -> dict:
        return self.overrides.get(mid, self.base.blocks[mid])


def build_model(config: ModelConfig) -> Model:
    """Weights uniform in [-1/sqrt(d_model), +1/sqrt(d_model)], drawn in a
    fixed order (embedding, then modules layer-major, mats in canonical
    order) so the same (config, seed) is bit-identical."""
    rng = np.random.default_rng(config.seed)
    bound = 1.0 / np.sqrt(config.d_model)

    def draw(shape):
        return rng.uniform(-bound, bound, size=shape).astype(np.float32)

    embedding = draw((config.vocab_size, config.d_model))
    blocks = {}
    for mid in list_modules(config):
        blocks[mid] = {
            name: draw(_mat_shape(config, mid.kind, name))
            for name in module_mats(mid.kind)
        }
    return Model(config=config, embedding=embedding, blocks=blocks)


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------

_POSENC_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _posenc(max_context: int, d_model: int) -> np.ndarray:
    key = (max_context, d_model)
    pe = _POSENC_CACHE.get(key)
    if pe is None:
        pos = np.arange(max_context, dtype=np.float32)[:, None]
        i = np.arange(d_model, dtype=np.float32)[None, :]
        angle = pos / np.power(10000.0, (2.0 * np.floor(i / 2)) / d_model).astype(
            np.float32
        )
        pe = np.where(i % 2 == 0, np.sin(angle), np.cos(angle)).astype(np.float32)
        pe.setflags(write=False)
        _POSENC_CACHE[key] = pe
    return pe


def _rmsnorm(x: np.ndarray) -> np.ndarray:
    ms = np.mean(np.square(x), axis=-1, keepdims=True)
    return x / np.sqrt(ms + np.float32(1e-6))


def _gelu(x: np.ndarray) -> np.ndarray:
    c = np.float32(np.sqrt(2.0 / np.pi))
    return (
        np.float32(0.5) * x * (np.float32(1.0) + np.tanh(c * (x + np.float32(0.044715) * x * x * x)))
    )


def forward_batch(view: ModelView, tokens: np.ndarray) -> np.ndarray:
    """Causal forward over a (batch, seq) int array; returns f32 logits
    (batch, seq, vocab). Pure; activations in float32 regardless of how the
    weights were stored."""
    cfg = view.config
    tokens = np.asarray(tokens)
    if tokens.ndim != 2 or tokens.shape[1] == 0:
        raise ValueError("tokens must be a non-empty (batch, seq) array")
    T = tokens.shape[1]
    if T > cfg.max_context:
        raise ValueError(f"sequence length {T} exceeds max_context {cfg.max_context}")
    if tokens.min() < 0 or tokens.max() >= cfg.vocab_size:
        raise ValueError("token id out of range")

    emb = view.base.embedding
    x = emb[tokens] + _posenc(cfg.max_context, cfg.d_model)[:T]
    H = cfg.n_heads
    dh = cfg.d_model // H
    scale = np.float32(1.0 / np.sqrt(dh))
    mask = np.triu(np.full((T, T), -np.inf, dtype=np.float32), k=1)

    for layer in range(cfg.n_layers):
        a = view.block(ModuleId(layer, KIND_ATTN))
        h = _rmsnorm(x)
        B = h.shape[0]

        def heads(m):
            return (h @ m).reshape(B, T, H, dh).transpose(0, 2, 1, 3)

        q, k, v = heads(a["wq"]), heads(a["wk"]), heads(a["wv"])
        scores = q @ k.transpose(0, 1, 3, 2) * scale + mask
        scores -= scores.max(axis=-1, keepdims=True)
        w = np.exp(scores)
        w /= w.sum(axis=-1, keepdims=True)
        att = (w @ v).transpose(0, 2, 1, 3).reshape(B, T, cfg.d_model)
        x = x + att @ a["wo"]

        m = view.block(ModuleId(layer, KIND_MLP))
        h = _rmsnorm(x)
        x = x + _gelu(h @ m["w_in"]) @ m["w_out"]

    x = _rmsnorm(x)
    return (x @ emb.T).astype(np.float32)


def forward(view: ModelView, tokens) -> np.ndarray:
    """Single-sequence forward; returns (seq, vocab) logits."""
    tokens = np.asarray(tokens)
    if tokens.ndim != 1:
        raise ValueError("tokens must be a 1-D sequence")
    return forward_batch(view, tokens[None, :])[0]


# ---------------------------------------------------------------------------
# config / weight files
# ---------------------------------------------------------------------------

_CONFIG_KEYS = ("vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_context", "seed")


def load_model_config(path) -> ModelConfig:
    """Key-value text file: one `key = value` (or `key: value`) per line,
    `#` comments allowed. Unknown keys are an error."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            for sep in ("=", ":"):
                if sep in line:
                    key, _, val = line.partition(sep)
                    break
            else:
                raise ValueError(f"{path}:{lineno}: expected `key = value`")
            key = key.strip()
            if key not in _CONFIG_KEYS:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = int(val.strip())
    return ModelConfig(**values)


def save_weights(model: Model, path) -> None:
    cfg = model.config
    with open(path, "wb") as fh:
        fh.write(_WEIGHT_MAGIC)
        fh.write(
            struct.pack(
                "<6I",
                cfg.vocab_size,
                cfg.d_model,
                cfg.n_layers,
                cfg.n_heads,
                cfg.d_ff,
                cfg.max_context,
            )
        )
        fh.write(model.embedding.astype("<f4").tobytes())
        for mid in list_modules(cfg):
            for name in module_mats(mid.kind):
                fh.write(model.blocks[mid][name].astype("<f4").tobytes())


def load_weights(path, config: ModelConfig) -> Model:
    """Import weights from the flat little-endian binary format written by
    save_weights; dims in the header must match `config`."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _WEIGHT_MAGIC:
            raise ValueError(f"{path}: not a weight file (bad magic)")
        dims = struct.unpack("<6I", fh.read(24))
        expect = (
            config.vocab_size,
            config.d_model,
            config.n_layers,
            config.n_heads,
            config.d_ff,
            config.max_context,
        )
        if dims != expect:
            raise ValueError(f"{path}: header dims {dims} do not match config {expect}")
        body = np.frombuffer(fh.read(), dtype="<f4")

    off = 0

    def take(shape):
        nonlocal off
        size = int(np.prod(shape))
        if off + size > body.size:
            raise ValueError(f"{path}: truncated weight file")
        out = body[off:off + size].reshape(shape).astype(np.float32)
        off += size
        return out

    embedding = take((config.vocab_size, config.d_model))
    blocks = {}
    for mid in list_modules(config):
        blocks[mid] = {
            name: take(_mat_shape(config, mid.kind, name))
            for name in module_mats(mid.kind)
        }
    if off != body.size:
        raise ValueError(f"{path}: {body.size - off} trailing floats")
    return Model(config=config, embedding=embedding, blocks=blocks)
