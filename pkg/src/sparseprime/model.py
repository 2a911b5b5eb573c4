"""Residual + self-attention classifier over sparse integer codes.

Pipeline per window of ``L`` integers::

    (m, n, o) codes -> E_m[m] + E_n[n] + E_o[o] + b      (sparse front end)
                    -> residual blocks                    (feature tower)
                    -> + positional embedding
                    -> transformer encoder layers
                    -> layer norm -> linear -> sigmoid   (per-position P(prime))

The front end is exactly a dense affine layer applied to the concatenated
one-hot vectors of sizes M, N and O, without ever building them.
"""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import ndcompute as nd
from .encoding import EncodingShape, SequenceSample, SparseCode
from .ndcompute import Tensor

PROB_EPS = 1e-7
EMB_STD = 0.02
CHECKPOINT_FORMAT = "sparseprime-checkpoint/1"


@dataclass(frozen=True)
class ModelConfig:
    shape: EncodingShape
    d_model: int = 64
    n_res_blocks: int = 2
    n_tx_layers: int = 2
    n_heads: int = 4
    ff_mult: int = 4

    def __post_init__(self):
        for name in ("d_model", "n_heads", "ff_mult"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_res_blocks < 0 or self.n_tx_layers < 0:
            raise ValueError("layer counts must be non-negative")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")


@dataclass(frozen=True)
class LossWeights:
    w0: float = 1.0
    w1: float = 20.0

    def __post_init__(self):
        if self.w0 <= 0 or self.w1 <= 0:
            raise ValueError("class weights must be positive")


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every trainable tensor, in canonical order."""
    d, sh = cfg.d_model, cfg.shape
    shapes: dict[str, tuple[int, ...]] = {
        "emb_m": (sh.M, d),
        "emb_n": (sh.N, d),
        "emb_o": (sh.O, d),
        "emb_bias": (d,),
    }
    for i in range(cfg.n_res_blocks):
        p = f"res{i}."
        shapes.update({
            p + "ln1.g": (d,), p + "ln1.b": (d,),
            p + "w1": (d, d), p + "b1": (d,),
            p + "ln2.g": (d,), p + "ln2.b": (d,),
            p + "w2": (d, d), p + "b2": (d,),
        })
    shapes["pos"] = (sh.L, d)
    h = d * cfg.ff_mult
    for i in range(cfg.n_tx_layers):
        p = f"tx{i}."
        shapes.update({
            p + "ln1.g": (d,), p + "ln1.b": (d,),
            p + "wq": (d, d), p + "bq": (d,),
            p + "wk": (d, d), p + "bk": (d,),
            p + "wv": (d, d), p + "bv": (d,),
            p + "wo": (d, d), p + "bo": (d,),
            p + "ln2.g": (d,), p + "ln2.b": (d,),
            p + "ff1": (d, h), p + "fb1": (h,),
            p + "ff2": (h, d), p + "fb2": (d,),
        })
    shapes.update({"ln_f.g": (d,), "ln_f.b": (d,), "head.w": (d, 1), "head.b": (1,)})
    return shapes


@dataclass
class ModelState:
    config: ModelConfig
    params: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def snapshot(self) -> "ModelState":
        """Independent copy of all parameter values (no gradients)."""
        return ModelState(self.config, {k: Tensor(v.data.copy(), name=k) for k, v in self.params.items()})

    def n_parameters(self) -> int:
        return int(np.sum([p.data.size for p in self.params.values()]))

    @classmethod
    def zeros(cls, cfg: ModelConfig) -> "ModelState":
        return cls(cfg, {
            k: Tensor(np.zeros(s, dtype=np.float32), requires_grad=True, name=k)
            for k, s in param_shapes(cfg).items()
        })

    def set_requires_grad(self, flag: bool) -> None:
        for p in self.params.values():
            p.requires_grad = flag


def init_state(cfg: ModelConfig, seed: int = 0) -> ModelState:
    """Random initial parameters.

    Residual-block output projections start at zero, so the untrained
    feature tower is the identity map.
    """
    rng = np.random.default_rng(seed)
    state = ModelState.zeros(cfg)
    for name, t in state.params.items():
        leaf = name.rsplit(".", 1)[-1]
        fan_in = t.shape[0]
        if name.startswith("emb_") and name != "emb_bias":
            t.data[:] = rng.normal(0.0, EMB_STD, t.shape)
        elif name == "pos":
            t.data[:] = rng.normal(0.0, 0.1, t.shape)
        elif leaf == "g":
            t.data[:] = 1.0
        elif name.startswith("res") and leaf == "w2":
            continue
        elif leaf in ("w1", "wq", "wk", "wv", "ff1"):
            t.data[:] = rng.normal(0.0, math.sqrt(2.0 / fan_in), t.shape)
        elif leaf in ("wo", "ff2", "w"):
            t.data[:] = rng.normal(0.0, 1.0 / math.sqrt(fan_in), t.shape)
    return state


# -- forward pieces ---------------------------------------------------------

def embed_codes(m, n, o, state: ModelState) -> Tensor:
    """Sparse front end for integer arrays of coordinates (any equal shapes)."""
    x = nd.add(nd.embedding_lookup(state["emb_m"], m), nd.embedding_lookup(state["emb_n"], n))
    x = nd.add(x, nd.embedding_lookup(state["emb_o"], o))
    return nd.add(x, state["emb_bias"])


def embed_sparse(code: SparseCode | tuple[int, int, int], state: ModelState) -> np.ndarray:
    """``E_m[m] + E_n[n] + E_o[o] + b`` for a single code."""
    m, n, o = code[-3:]
    sh = state.config.shape
    if not (0 <= m < sh.M and 0 <= n < sh.N and 0 <= o < sh.O):
        raise ValueError(f"code ({m}, {n}, {o}) outside shape {sh}")
    return embed_codes(np.array(m), np.array(n), np.array(o), state).data


def dense_front_end(onehot: np.ndarray, state: ModelState) -> np.ndarray:
    """The equivalent dense affine layer on concatenated one-hots of length M+N+O."""
    W = np.concatenate([state["emb_m"].data, state["emb_n"].data, state["emb_o"].data], axis=0)
    return onehot @ W + state["emb_bias"].data


def feature_extract(x, state: ModelState) -> Tensor:
    """Pre-activation residual blocks: ``x + W2 relu(LN(W1 LN(x) + b1)) + b2``."""
    x = nd.as_tensor(x)
    for i in range(state.config.n_res_blocks):
        p = f"res{i}."
        h = nd.layer_norm(x, state[p + "ln1.g"], state[p + "ln1.b"])
        h = nd.add(nd.matmul(h, state[p + "w1"]), state[p + "b1"])
        h = nd.relu(nd.layer_norm(h, state[p + "ln2.g"], state[p + "ln2.b"]))
        h = nd.add(nd.matmul(h, state[p + "w2"]), state[p + "b2"])
        x = nd.add(x, h)
    return x


def _attention(x: Tensor, state: ModelState, p: str, trace: dict | None, layer: int) -> Tensor:
    cfg = state.config
    B, L, d = x.shape
    H = cfg.n_heads
    dk = d // H

    def heads(t: Tensor) -> Tensor:
        return nd.transpose(nd.reshape(t, (B, L, H, dk)), (0, 2, 1, 3))

    q = heads(nd.add(nd.matmul(x, state[p + "wq"]), state[p + "bq"]))
    k = heads(nd.add(nd.matmul(x, state[p + "wk"]), state[p + "bk"]))
    v = heads(nd.add(nd.matmul(x, state[p + "wv"]), state[p + "bv"]))
    scores = nd.scale(nd.matmul(q, nd.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dk))
    att = nd.softmax(scores, axis=-1)
    if trace is not None:
        trace.setdefault("attention", {})[layer] = att.data
    ctx = nd.reshape(nd.transpose(nd.matmul(att, v), (0, 2, 1, 3)), (B, L, d))
    return nd.add(nd.matmul(ctx, state[p + "wo"]), state[p + "bo"])


def transform_sequence(tokens, state: ModelState, trace: dict | None = None) -> Tensor:
    """Positional embedding plus pre-norm transformer encoder layers.

    Accepts ``(L, d)`` or ``(B, L, d)`` tokens; returns the same shape.
    """
    tokens = nd.as_tensor(tokens)
    L = state.config.shape.L
    single = len(tokens.shape) == 2
    if single:
        tokens = nd.reshape(tokens, (1,) + tokens.shape)
    if tokens.shape[1] != L:
        raise ValueError(f"expected {L} tokens, got {tokens.shape[1]}")
    x = nd.add(tokens, state["pos"])
    for i in range(state.config.n_tx_layers):
        p = f"tx{i}."
        h = nd.layer_norm(x, state[p + "ln1.g"], state[p + "ln1.b"])
        x = nd.add(x, _attention(h, state, p, trace, i))
        h = nd.layer_norm(x, state[p + "ln2.g"], state[p + "ln2.b"])
        h = nd.gelu(nd.add(nd.matmul(h, state[p + "ff1"]), state[p + "fb1"]))
        x = nd.add(x, nd.add(nd.matmul(h, state[p + "ff2"]), state[p + "fb2"]))
    if single:
        x = nd.reshape(x, x.shape[1:])
    return x


def forward_logits(m, n, o, state: ModelState, trace: dict | None = None) -> Tensor:
    """Per-position logits, shape ``(B, L)``, for coordinate arrays of shape ``(B, L)``."""
    m = np.asarray(m)
    B, L = m.shape
    x = feature_extract(embed_codes(m, n, o, state), state)
    x = transform_sequence(x, state, trace)
    x = nd.layer_norm(x, state["ln_f.g"], state["ln_f.b"])
    logits = nd.add(nd.matmul(x, state["head.w"]), state["head.b"])
    return nd.reshape(logits, (B, L))


def forward_proba(m, n, o, state: ModelState) -> Tensor:
    return nd.sigmoid(forward_logits(m, n, o, state))


def predict_window(sample: SequenceSample, state: ModelState) -> np.ndarray:
    """P(prime) for each of the ``L`` integers in ``sample``."""
    if len(sample) != state.config.shape.L:
        raise ValueError(f"window has {len(sample)} integers, model expects {state.config.shape.L}")
    p = forward_proba(sample.m[None], sample.n[None], sample.o[None], state)
    return p.data[0].astype(np.float64)


def predict_proba(m: np.ndarray, n: np.ndarray, o: np.ndarray, state: ModelState,
                  chunk: int = 1024) -> np.ndarray:
    """Batched inference over ``(W, L)`` coordinate arrays without recording a tape."""
    out = []
    for i in range(0, len(m), chunk):
        sl = slice(i, i + chunk)
        out.append(forward_proba(m[sl], n[sl], o[sl], state).data)
    return np.concatenate(out) if out else np.empty((0, state.config.shape.L), dtype=np.float32)


def wce_loss(p, y, w: LossWeights, eps: float = PROB_EPS) -> Tensor:
    """Weighted binary cross-entropy, averaged over all terms, natural log.

    ``p`` is clamped to ``[eps, 1 - eps]``; the computation runs in float64.
    """
    p = nd.as_tensor(p)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != p.shape:
        raise ValueError(f"labels {y.shape} and probabilities {p.shape} differ in shape")
    with nd.precision(np.float64):
        p64 = nd.clamp(nd.astype(p, np.float64), eps, 1.0 - eps)
        pos = nd.mul(Tensor(w.w1 * y), nd.log(p64))
        neg = nd.mul(Tensor(w.w0 * (1.0 - y)), nd.log(nd.sub(Tensor(1.0), p64)))
        return nd.scale(nd.mean(nd.add(pos, neg)), -1.0)


# -- checkpoints --------------------------------------------------------------

def _config_items(cfg: ModelConfig) -> dict[str, str]:
    items = {f"shape.{k}": str(v) for k, v in asdict(cfg.shape).items()}
    items.update({f"model.{k}": str(v) for k, v in asdict(cfg).items() if k != "shape"})
    return items


def config_from_items(items: dict[str, str]) -> ModelConfig:
    shape = EncodingShape(*(int(items[f"shape.{k}"]) for k in "MNOL"))
    return ModelConfig(
        shape=shape,
        **{k: int(items[f"model.{k}"]) for k in ("d_model", "n_res_blocks", "n_tx_layers", "n_heads", "ff_mult")},
    )


def save_checkpoint(state: ModelState, path: str | Path, **meta) -> Path:
    """Write ``manifest.txt`` plus one raw little-endian float32 file per parameter."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    lines = [f"format={CHECKPOINT_FORMAT}"]
    lines += [f"{k}={v}" for k, v in _config_items(state.config).items()]
    lines += [f"meta.{k}={v}" for k, v in meta.items()]
    for name, t in state.params.items():
        fname = f"{name}.f32"
        t.data.astype("<f4").tofile(path / fname)
        lines.append(f"param.{name}={','.join(map(str, t.shape))}:{fname}")
    (path / "manifest.txt").write_text("\n".join(lines) + "\n")
    return path


def read_manifest(path: str | Path) -> dict[str, str]:
    items = {}
    for line in (Path(path) / "manifest.txt").read_text().splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            items[key] = value
    if items.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: unknown checkpoint format {items.get('format')!r}")
    return items


def load_checkpoint(path: str | Path) -> tuple[ModelState, dict[str, str]]:
    path = Path(path)
    items = read_manifest(path)
    cfg = config_from_items(items)
    expected = param_shapes(cfg)
    params = {}
    for name, shp in expected.items():
        spec = items.get(f"param.{name}")
        if spec is None:
            raise ValueError(f"{path}: missing parameter {name}")
        dims, _, fname = spec.partition(":")
        shape = tuple(int(x) for x in dims.split(",")) if dims else ()
        if shape != shp:
            raise ValueError(f"{path}: parameter {name} has shape {shape}, expected {shp}")
        data = np.fromfile(path / fname, dtype="<f4").astype(np.float32).reshape(shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    meta = {k[5:]: v for k, v in items.items() if k.startswith("meta.")}
    return ModelState(cfg, params), meta


def clone(state: ModelState) -> ModelState:
    return copy.deepcopy(state)
