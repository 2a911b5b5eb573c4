"""Built-in correctness checks run by ``sparseprime selftest``."""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from . import ndcompute as nd
from .analysis import roc_auc
from .encoding import EncodingShape, decode_index, encode_indices
from .model import LossWeights, ModelConfig, dense_front_end, embed_codes, forward_proba, init_state, wce_loss

PRIMITIVE_TOL = 1e-3
MODEL_TOL = 1e-2


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


@contextlib.contextmanager
def sign_flipped(op: str):
    """Temporarily negate the registered backward rule of ``op``."""
    original = nd.BACKWARD[op]
    nd.BACKWARD[op] = lambda ctx, g: tuple(None if x is None else -x for x in original(ctx, g))
    try:
        yield
    finally:
        nd.BACKWARD[op] = original


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


def primitive_cases(seed: int = 0) -> dict[str, tuple]:
    """op name -> (loss builder, params) for a gradcheck of that primitive."""
    rng = np.random.default_rng(seed)

    def leaf(shape, positive=False, margin=False):
        if positive:
            data = rng.uniform(0.5, 2.0, shape)
        elif margin:
            data = _away_from_zero(rng, shape)
        else:
            data = rng.normal(size=shape)
        return nd.Tensor(data, requires_grad=True)

    def probe(shape):
        # fixed random weights so no gradient is trivially symmetric
        return rng.normal(size=shape)

    a, b = leaf((3, 4)), leaf((4, 5))
    c, d = leaf((3, 4)), leaf((4,))
    r34, r35 = probe((3, 4)), probe((3, 5))
    cases = {
        "add": (lambda: nd.sum(nd.mul(nd.add(c, d), r34)), [c, d]),
        "sub": (lambda: nd.sum(nd.mul(nd.sub(c, d), r34)), [c, d]),
        "mul": (lambda: nd.sum(nd.mul(nd.mul(c, d), r34)), [c, d]),
        "scale": (lambda: nd.sum(nd.mul(nd.scale(c, -1.7), r34)), [c]),
        "matmul": (lambda: nd.sum(nd.mul(nd.matmul(a, b), r35)), [a, b]),
    }
    x = leaf((3, 4), margin=True)
    cases["relu"] = (lambda: nd.sum(nd.mul(nd.relu(x), r34)), [x])
    g = leaf((3, 4))
    cases["gelu"] = (lambda: nd.sum(nd.mul(nd.gelu(g), r34)), [g])
    s = leaf((3, 4))
    cases["sigmoid"] = (lambda: nd.sum(nd.mul(nd.sigmoid(s), r34)), [s])
    pos = leaf((3, 4), positive=True)
    cases["log"] = (lambda: nd.sum(nd.mul(nd.log(pos), r34)), [pos])
    cl = leaf((3, 4), positive=True)
    cases["clamp"] = (lambda: nd.sum(nd.mul(nd.clamp(cl, 0.0, 10.0), r34)), [cl])
    ct = leaf((3, 4))
    cases["astype"] = (lambda: nd.sum(nd.mul(nd.astype(ct, np.float64), r34)), [ct])
    ln_x, ln_g, ln_b = leaf((3, 4)), leaf((4,)), leaf((4,))
    cases["layer_norm"] = (lambda: nd.sum(nd.mul(nd.layer_norm(ln_x, ln_g, ln_b), r34)), [ln_x, ln_g, ln_b])
    sm = leaf((3, 4))
    cases["softmax"] = (lambda: nd.sum(nd.mul(nd.softmax(sm, axis=-1), r34)), [sm])
    lsm = leaf((3, 4))
    cases["log_softmax"] = (lambda: nd.sum(nd.mul(nd.log_softmax(lsm, axis=0), r34)), [lsm])
    table = leaf((5, 4))
    idx = np.array([[0, 3, 3], [1, 4, 0]])
    r234 = probe((2, 3, 4))
    cases["embedding_lookup"] = (lambda: nd.sum(nd.mul(nd.embedding_lookup(table, idx), r234)), [table])
    p1, p2 = leaf((3, 2)), leaf((3, 3))
    r35b = probe((3, 5))
    cases["concat"] = (lambda: nd.sum(nd.mul(nd.concat([p1, p2], axis=1), r35b)), [p1, p2])
    rs = leaf((3, 4))
    r62 = probe((6, 2))
    cases["reshape"] = (lambda: nd.sum(nd.mul(nd.reshape(rs, (6, 2)), r62)), [rs])
    tr = leaf((2, 3, 4))
    r432 = probe((4, 2, 3))
    cases["transpose"] = (lambda: nd.sum(nd.mul(nd.transpose(tr, (2, 0, 1)), r432)), [tr])
    su = leaf((3, 4))
    r3 = probe((3,))
    cases["sum"] = (lambda: nd.sum(nd.mul(nd.sum(su, axis=1), r3)), [su])
    me = leaf((3, 4))
    r4 = probe((4,))
    cases["mean"] = (lambda: nd.sum(nd.mul(nd.mean(me, axis=0), r4)), [me])
    return cases


def check_primitives(tol: float = PRIMITIVE_TOL, eps: float = 1e-3, seed: int = 0) -> dict[str, float]:
    return {name: nd.gradcheck(fn, params, eps=eps, n_coords=64, seed=seed)
            for name, (fn, params) in primitive_cases(seed).items()}


def model_gradcheck(d_model: int = 8, L: int = 4, batch: int = 2, eps: float = 1e-3, seed: int = 0,
                    n_coords: int = 16) -> float:
    """Full-model WCE gradcheck on one small batch."""
    shape = EncodingShape(5, 5, 5, L)
    cfg = ModelConfig(shape, d_model=d_model, n_res_blocks=2, n_tx_layers=2, n_heads=2, ff_mult=2)
    state = init_state(cfg, seed)
    rng = np.random.default_rng(seed)
    # perturb everything so zero-initialised projections also get checked
    for p in state.parameters():
        p.data += rng.normal(0.0, 0.2, p.shape).astype(np.float32)
    s = rng.integers(0, shape.capacity - L, size=batch)[:, None] + np.arange(L)
    m, n, o = encode_indices(s, shape)
    y = rng.random((batch, L)) < 0.3
    w = LossWeights(1.0, 20.0)
    return nd.gradcheck(lambda: wce_loss(forward_proba(m, n, o, state), y, w),
                        state.parameters(), eps=eps, n_coords=n_coords, seed=seed)


def sparse_dense_gap(M: int = 8, n_states: int = 10, seed: int = 0) -> float:
    """Max |sparse front end - dense affine layer on one-hots| over random states.

    Both paths run in float64 so the comparison is not dominated by float32
    summation order.
    """
    shape = EncodingShape(M, M, M, 1)
    cfg = ModelConfig(shape, d_model=8, n_heads=2)
    rng = np.random.default_rng(seed)
    worst = 0.0
    with nd.precision(np.float64):
        for k in range(n_states):
            state = init_state(cfg, seed + k)
            for name in ("emb_m", "emb_n", "emb_o", "emb_bias"):
                state.params[name] = nd.Tensor(rng.normal(size=state[name].shape), name=name)
            s = rng.integers(0, shape.capacity, size=64)
            m, n, o = encode_indices(s, shape)
            onehot = np.zeros((len(s), 3 * M))
            onehot[np.arange(len(s)), m] = 1
            onehot[np.arange(len(s)), M + n] = 1
            onehot[np.arange(len(s)), 2 * M + o] = 1
            sparse = embed_codes(m, n, o, state).data
            worst = max(worst, float(np.abs(sparse - dense_front_end(onehot, state)).max()))
    return worst


def pair_count_auc(scores, truth) -> float:
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth, dtype=bool)
    pos, neg = scores[truth], scores[~truth]
    diff = pos[:, None] - neg[None, :]
    return ((diff > 0).sum() + 0.5 * (diff == 0).sum()) / (len(pos) * len(neg))


def run_selftest(seed: int = 0) -> list[CheckResult]:
    results = []

    shape = EncodingShape(20, 20, 20, 1)
    s = np.arange(shape.capacity)
    m, n, o = encode_indices(s, shape)
    back = (m * shape.N + n) * shape.O + o
    spot = all(decode_index(int(m[i]), int(n[i]), int(o[i]), shape) == i for i in range(0, shape.capacity, 397))
    ok = bool(np.array_equal(back, s)) and spot
    results.append(CheckResult("encoding bijection", ok, f"{shape.capacity} indices"))

    prims = check_primitives(seed=seed)
    worst_op = max(prims, key=prims.get)
    full = model_gradcheck(seed=seed)
    ok = prims[worst_op] < PRIMITIVE_TOL and full < MODEL_TOL
    results.append(CheckResult(
        "gradcheck", ok,
        f"worst primitive {worst_op}={prims[worst_op]:.2e} (< {PRIMITIVE_TOL}), model={full:.2e} (< {MODEL_TOL})",
    ))

    gap = sparse_dense_gap(seed=seed)
    results.append(CheckResult("sparse/dense equivalence", gap < 1e-6, f"max abs diff {gap:.2e}"))

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(20):
        k = int(rng.integers(2, 200))
        scores = rng.integers(0, 10, size=k) / 10.0
        truth = rng.random(k) < 0.4
        truth[0], truth[1] = True, False
        worst = max(worst, abs(roc_auc(scores, truth) - pair_count_auc(scores, truth)))
    results.append(CheckResult("auc oracle", worst == 0.0, f"max diff {worst:.1e}"))
    return results
