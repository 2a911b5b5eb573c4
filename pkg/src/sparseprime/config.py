"""Plain-text run configuration files.

One ``key = value`` per line; ``#`` starts a comment.  Keys missing from a
file take the defaults below, unknown keys are rejected.  :func:`dump_config`
writes every key in canonical order, so ``parse(dump(c)) == c``.

Sweep files hold base keys followed by ``[cell NAME]`` sections whose keys
override the base for that cell.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from pathlib import Path

from .dataset import RangeSpec, SplitConfig
from .encoding import EncodingShape
from .model import LossWeights, ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


# key -> (type, default)
SCHEMA: dict[str, tuple[type, object]] = {
    "name": (str, "run"),
    "train.offset": (int, 0),
    "train.start": (int, 0),
    "train.end": (int, 100_000),
    "test.offset": (int, 0),
    "test.start": (int, 100_000),
    "test.end": (int, 300_000),
    "shape.M": (int, 70),
    "shape.N": (int, 70),
    "shape.O": (int, 70),
    "shape.L": (int, 15),
    "sample_fraction": (float, 0.05),
    "random_tiling": (bool, False),
    "model.d_model": (int, 64),
    "model.n_res_blocks": (int, 2),
    "model.n_tx_layers": (int, 2),
    "model.n_heads": (int, 4),
    "model.ff_mult": (int, 4),
    "weights.w0": (float, 1.0),
    "weights.w1": (float, 20.0),
    "lr0": (float, 0.01),
    "decay_factor": (float, 0.5),
    "patience": (int, 5),
    "batch_size": (int, 1),
    "epochs": (int, 10),
    "eval_every": (int, 100),
    "eval_subsample": (float, 0.1),
    "master_seed": (int, 0),
    "block_size": (int, 1000),
}


@dataclass(frozen=True)
class RunConfig:
    name: str
    train: TrainConfig
    block_size: int = 1000

    @property
    def split(self) -> SplitConfig:
        return self.train.split


def _convert(key: str, raw: str):
    typ = SCHEMA[key][0]
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError(raw)
        if typ is int:
            # allow 1e6-style literals when they are integral
            val = float(raw) if any(c in raw for c in ".eE") else int(raw.replace("_", ""))
            if isinstance(val, float):
                if not val.is_integer():
                    raise ValueError(raw)
                val = int(val)
            return val
        if typ is float:
            return float(raw)
        if not raw:
            raise ValueError(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r} (expected {typ.__name__})", key) from None


def _parse_lines(lines, where: str = "config") -> dict[str, object]:
    values: dict[str, object] = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{where}:{lineno}: expected 'key = value', got {line!r}")
        key, _, raw = (part.strip() for part in line.partition("="))
        if key not in SCHEMA:
            raise ConfigError(f"{where}:{lineno}: unknown key {key!r}", key)
        if key in values:
            raise ConfigError(f"{where}:{lineno}: duplicate key {key!r}", key)
        values[key] = _convert(key, raw)
    return values


def build_config(values: dict[str, object]) -> RunConfig:
    v = {k: d for k, (_, d) in SCHEMA.items()}
    v.update(values)
    for k, (typ, _) in SCHEMA.items():
        if typ is float and isinstance(v[k], int) and not isinstance(v[k], bool):
            v[k] = float(v[k])
    try:
        shape = EncodingShape(v["shape.M"], v["shape.N"], v["shape.O"], v["shape.L"])
        split = SplitConfig(
            train=RangeSpec(v["train.offset"], v["train.start"], v["train.end"]),
            test=RangeSpec(v["test.offset"], v["test.start"], v["test.end"]),
            shape=shape,
            sample_fraction=v["sample_fraction"],
            random_tiling=v["random_tiling"],
        )
        model = ModelConfig(shape, v["model.d_model"], v["model.n_res_blocks"], v["model.n_tx_layers"],
                            v["model.n_heads"], v["model.ff_mult"])
        train = TrainConfig(
            split=split, model=model, weights=LossWeights(v["weights.w0"], v["weights.w1"]),
            lr0=v["lr0"], decay_factor=v["decay_factor"], patience=v["patience"],
            batch_size=v["batch_size"], epochs=v["epochs"], eval_every=v["eval_every"],
            eval_subsample=v["eval_subsample"], master_seed=v["master_seed"],
        )
        if v["block_size"] < 1:
            raise ValueError("block_size must be >= 1")
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None
    return RunConfig(v["name"], train, v["block_size"])


def parse_config(text: str, where: str = "config") -> RunConfig:
    return build_config(_parse_lines(text.splitlines(), where))


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config(text, str(path))


def config_values(cfg: RunConfig) -> dict[str, object]:
    t = cfg.train
    s = t.split
    m = t.model
    return {
        "name": cfg.name,
        "train.offset": s.train.offset, "train.start": s.train.start, "train.end": s.train.end,
        "test.offset": s.test.offset, "test.start": s.test.start, "test.end": s.test.end,
        "shape.M": s.shape.M, "shape.N": s.shape.N, "shape.O": s.shape.O, "shape.L": s.shape.L,
        "sample_fraction": s.sample_fraction, "random_tiling": s.random_tiling,
        "model.d_model": m.d_model, "model.n_res_blocks": m.n_res_blocks,
        "model.n_tx_layers": m.n_tx_layers, "model.n_heads": m.n_heads, "model.ff_mult": m.ff_mult,
        "weights.w0": t.weights.w0, "weights.w1": t.weights.w1,
        "lr0": t.lr0, "decay_factor": t.decay_factor, "patience": t.patience,
        "batch_size": t.batch_size, "epochs": t.epochs, "eval_every": t.eval_every,
        "eval_subsample": t.eval_subsample, "master_seed": t.master_seed,
        "block_size": cfg.block_size,
    }


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(cfg: RunConfig) -> str:
    vals = config_values(cfg)
    return "".join(f"{k} = {_fmt(vals[k])}\n" for k in SCHEMA)


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()[:16]


def with_overrides(cfg: RunConfig, **values) -> RunConfig:
    """A copy of ``cfg`` with schema keys replaced (dotted keys via ``__``)."""
    merged = config_values(cfg)
    for k, v in values.items():
        key = k.replace("__", ".")
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}", key)
        merged[key] = v
    return build_config(merged)


def parse_sweep(text: str, where: str = "sweep") -> list[RunConfig]:
    """Base keys, then ``[cell NAME]`` sections; returns one config per cell."""
    base: list[str] = []
    cells: list[tuple[str, list[str]]] = []
    current = base
    for line in text.splitlines():
        stripped = line.split("#", 1)[0].strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            head = stripped[1:-1].split(None, 1)
            if len(head) != 2 or head[0] != "cell":
                raise ConfigError(f"{where}: bad section header {stripped!r}")
            current = []
            cells.append((head[1].strip(), current))
        else:
            current.append(line)
    if not cells:
        raise ConfigError(f"{where}: no [cell ...] sections")
    base_values = _parse_lines(base, where)
    names = [name for name, _ in cells]
    if len(set(names)) != len(names):
        raise ConfigError(f"{where}: duplicate cell names")
    out = []
    for name, lines in cells:
        values = dict(base_values)
        values.update(_parse_lines(lines, f"{where}[{name}]"))
        values["name"] = name
        out.append(build_config(values))
    return out


def load_sweep(path: str | Path) -> list[RunConfig]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_sweep(text, str(path))


def replace_train(cfg: RunConfig, **kw) -> RunConfig:
    return replace(cfg, train=replace(cfg.train, **kw))
