import math

import numpy as np
import pytest

from sparseprime import ndcompute as nd
from sparseprime.encoding import EncodingShape, encode_indices, encode_window
from sparseprime.model import (
    LossWeights, ModelConfig, ModelState, embed_sparse, feature_extract, forward_proba, init_state,
    load_checkpoint, param_shapes, predict_proba, predict_window, save_checkpoint,
    transform_sequence, wce_loss,
)
from sparseprime.numtheory import sieve_range
from sparseprime.selftest import model_gradcheck, sparse_dense_gap


def small_cfg(L=4, d=8, heads=2, res=2, tx=2, M=6):
    return ModelConfig(EncodingShape(M, M, M, L), d_model=d, n_res_blocks=res, n_tx_layers=tx,
                       n_heads=heads, ff_mult=2)


def randomised(cfg, seed=0, scale=0.3):
    state = init_state(cfg, seed)
    rng = np.random.default_rng(seed + 100)
    for p in state.parameters():
        p.data[:] = rng.normal(0.0, scale, p.shape)
    return state


# -- independent scalar forward pass ---------------------------------------

def _ln(v, g, b, eps=1e-5):
    mu = sum(v) / len(v)
    var = sum((x - mu) ** 2 for x in v) / len(v)
    return [(x - mu) / math.sqrt(var + eps) * gi + bi for x, gi, bi in zip(v, g, b)]


def _affine(v, W, b):
    return [sum(v[i] * W[i][j] for i in range(len(v))) + b[j] for j in range(len(b))]


def _gelu(x):
    return 0.5 * x * (1 + math.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x ** 3)))


def scalar_forward(codes, P, cfg):
    """Loop-by-loop forward pass on Python floats for one window."""
    d, H = cfg.d_model, cfg.n_heads
    dk = d // H
    xs = []
    for m, n, o in codes:
        x = [P["emb_m"][m][j] + P["emb_n"][n][j] + P["emb_o"][o][j] + P["emb_bias"][j] for j in range(d)]
        for i in range(cfg.n_res_blocks):
            p = f"res{i}."
            h = _ln(x, P[p + "ln1.g"], P[p + "ln1.b"])
            h = _affine(h, P[p + "w1"], P[p + "b1"])
            h = [max(0.0, v) for v in _ln(h, P[p + "ln2.g"], P[p + "ln2.b"])]
            h = _affine(h, P[p + "w2"], P[p + "b2"])
            x = [a + b for a, b in zip(x, h)]
        xs.append(x)
    xs = [[a + b for a, b in zip(x, P["pos"][t])] for t, x in enumerate(xs)]
    L = len(xs)
    for i in range(cfg.n_tx_layers):
        p = f"tx{i}."
        hs = [_ln(x, P[p + "ln1.g"], P[p + "ln1.b"]) for x in xs]
        q = [_affine(h, P[p + "wq"], P[p + "bq"]) for h in hs]
        k = [_affine(h, P[p + "wk"], P[p + "bk"]) for h in hs]
        v = [_affine(h, P[p + "wv"], P[p + "bv"]) for h in hs]
        ctx = [[0.0] * d for _ in range(L)]
        for hd in range(H):
            sl = range(hd * dk, (hd + 1) * dk)
            for t in range(L):
                sc = [sum(q[t][j] * k[u][j] for j in sl) / math.sqrt(dk) for u in range(L)]
                mx = max(sc)
                e = [math.exp(s - mx) for s in sc]
                z = sum(e)
                for j in sl:
                    ctx[t][j] = sum(e[u] / z * v[u][j] for u in range(L))
        att = [_affine(c, P[p + "wo"], P[p + "bo"]) for c in ctx]
        xs = [[a + b for a, b in zip(x, y)] for x, y in zip(xs, att)]
        out = []
        for x in xs:
            h = _ln(x, P[p + "ln2.g"], P[p + "ln2.b"])
            h = [_gelu(a) for a in _affine(h, P[p + "ff1"], P[p + "fb1"])]
            h = _affine(h, P[p + "ff2"], P[p + "fb2"])
            out.append([a + b for a, b in zip(x, h)])
        xs = out
    probs = []
    for x in xs:
        h = _ln(x, P["ln_f.g"], P["ln_f.b"])
        z = sum(h[j] * P["head.w"][j][0] for j in range(d)) + P["head.b"][0]
        probs.append(1 / (1 + math.exp(-z)))
    return probs


def test_forward_matches_scalar_reimplementation():
    cfg = small_cfg(L=3, d=4, heads=2, res=1, tx=1, M=5)
    state = randomised(cfg, seed=3, scale=0.5)
    P = {k: v.data.astype(float).tolist() for k, v in state.params.items()}
    s = np.array([17, 18, 19])
    m, n, o = encode_indices(s, cfg.shape)
    want = scalar_forward(list(zip(m.tolist(), n.tolist(), o.tolist())), P, cfg)
    with nd.precision(np.float64):
        st64 = load_like(state, np.float64)
        got = forward_proba(m[None], n[None], o[None], st64).data[0]
    np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-12)
    got32 = forward_proba(m[None], n[None], o[None], state).data[0]
    np.testing.assert_allclose(got32, want, atol=1e-5)


def load_like(state, dtype):
    return ModelState(state.config, {k: nd.Tensor(v.data.astype(dtype), name=k) for k, v in state.params.items()})


# -- front end ---------------------------------------------------------------

def test_zero_tables_give_zero_embedding():
    cfg = small_cfg()
    assert not embed_sparse((1, 2, 3), ModelState.zeros(cfg)).any()


def test_sparse_matches_dense():
    assert sparse_dense_gap(M=16, n_states=5) < 1e-6


def test_embedding_linear_in_o():
    state = randomised(small_cfg())
    a = embed_sparse((1, 2, 3), state)
    b = embed_sparse((1, 2, 5), state)
    np.testing.assert_allclose(a - b, state["emb_o"].data[3] - state["emb_o"].data[5], atol=1e-6)


def test_embed_rejects_out_of_shape():
    with pytest.raises(ValueError):
        embed_sparse((6, 0, 0), init_state(small_cfg()))


# -- feature tower and sequence model -------------------------------------------

def test_fresh_tower_is_identity(rng):
    state = init_state(small_cfg())
    x = rng.normal(size=(3, 8)).astype(np.float32)
    np.testing.assert_array_equal(feature_extract(x, state).data, x)


@pytest.mark.parametrize("res", [0, 1, 3])
def test_tower_preserves_shape(res, rng):
    state = randomised(small_cfg(res=res))
    assert feature_extract(rng.normal(size=(2, 4, 8)), state).shape == (2, 4, 8)


def test_tower_gradcheck(rng):
    state = randomised(small_cfg())
    x = rng.normal(size=(3, 8))
    params = [t for k, t in state.params.items() if k.startswith("res")]
    r = rng.normal(size=(3, 8))
    err = nd.gradcheck(lambda: nd.sum(nd.mul(feature_extract(x, state), r)), params)
    assert err < 1e-3


def test_attention_rows_sum_to_one(rng):
    state = randomised(small_cfg(L=5))
    trace = {}
    transform_sequence(rng.normal(size=(2, 5, 8)), state, trace)
    for att in trace["attention"].values():
        assert att.shape == (2, 2, 5, 5)
        np.testing.assert_allclose(att.sum(axis=-1), 1.0, rtol=1e-5)


def test_length_one_window_runs(rng):
    cfg = small_cfg(L=1)
    state = randomised(cfg)
    trace = {}
    out = transform_sequence(rng.normal(size=(1, 8)), state, trace)
    assert out.shape == (1, 8)
    np.testing.assert_allclose(trace["attention"][0], 1.0)


def test_positions_matter(rng):
    state = randomised(small_cfg(L=4))
    x = rng.normal(size=(4, 8))
    perm = [2, 0, 3, 1]
    y = transform_sequence(x, state).data
    y_perm = transform_sequence(x[perm], state).data
    assert not np.allclose(y[perm], y_perm, atol=1e-4)


def test_predict_window_shape_and_determinism():
    cfg = small_cfg(L=4)
    state = randomised(cfg)
    w = encode_window(40, cfg.shape, 0, sieve_range(40, 44))
    p1, p2 = predict_window(w, state), predict_window(w, state)
    assert p1.shape == (4,)
    np.testing.assert_array_equal(p1, p2)
    assert ((p1 > 0) & (p1 < 1)).all()


def test_predict_proba_chunking_matches():
    cfg = small_cfg(L=4)
    state = randomised(cfg)
    s = np.arange(40 * 4).reshape(40, 4)
    m, n, o = encode_indices(s, cfg.shape)
    np.testing.assert_array_equal(predict_proba(m, n, o, state, chunk=7), predict_proba(m, n, o, state))


def test_zero_state_predicts_half():
    cfg = small_cfg()
    m = np.zeros((2, 4), dtype=int)
    np.testing.assert_array_equal(forward_proba(m, m, m, ModelState.zeros(cfg)).data, 0.5)


def test_full_model_gradcheck():
    assert model_gradcheck() < 1e-2


# -- loss -----------------------------------------------------------------

def test_wce_hand_case():
    loss = wce_loss(np.array([0.5]), np.array([1]), LossWeights(1.0, 20.0))
    assert loss.item() == pytest.approx(20 * math.log(2), abs=1e-6)


def test_wce_perfect_prediction_near_zero():
    w = LossWeights(1.0, 20.0)
    loss = wce_loss(np.array([1.0, 0.0, 1.0]), np.array([1, 0, 1]), w).item()
    assert 0 <= loss <= 20 * -math.log(1 - 1e-7) + 1e-12


def test_wce_unweighted_matches_bce(rng):
    p = rng.uniform(0.01, 0.99, size=(4, 6)).astype(np.float32)
    y = rng.random((4, 6)) < 0.4
    p64 = p.astype(np.float64)
    bce = -np.mean(y * np.log(p64) + (1 - y) * np.log(1 - p64))
    assert wce_loss(p, y, LossWeights(1.0, 1.0)).item() == pytest.approx(bce, rel=1e-12)


def test_wce_clamps_extremes():
    loss = wce_loss(np.array([0.0]), np.array([1]), LossWeights(1.0, 1.0)).item()
    assert loss == pytest.approx(-math.log(1e-7), rel=1e-9)


def test_wce_shape_mismatch():
    with pytest.raises(ValueError):
        wce_loss(np.array([0.5, 0.5]), np.array([1]), LossWeights())


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(0.0, 1.0)
    with pytest.raises(ValueError):
        ModelConfig(EncodingShape(2, 2, 2, 2), d_model=6, n_heads=4)


# -- parameters and checkpoints -------------------------------------------

def test_param_shapes_cover_state():
    cfg = small_cfg()
    state = init_state(cfg)
    assert {k: v.shape for k, v in state.params.items()} == param_shapes(cfg)
    assert all(not state[f"res{i}.w2"].data.any() for i in range(cfg.n_res_blocks))


def test_init_is_seeded():
    cfg = small_cfg()
    a, b, c = init_state(cfg, 1), init_state(cfg, 1), init_state(cfg, 2)
    assert all(np.array_equal(a[k].data, b[k].data) for k in a.params)
    assert not np.array_equal(a["emb_m"].data, c["emb_m"].data)


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    cfg = small_cfg()
    state = randomised(cfg, seed=9)
    save_checkpoint(state, tmp_path / "ck", seed=9, iteration=12, loss=0.25)
    back, meta = load_checkpoint(tmp_path / "ck")
    assert back.config == cfg
    assert meta["iteration"] == "12" and meta["seed"] == "9"
    for k in state.params:
        assert back[k].data.dtype == np.float32
        assert back[k].data.tobytes() == state[k].data.tobytes()
    m = np.arange(8).reshape(2, 4) % 6
    np.testing.assert_array_equal(forward_proba(m, m, m, back).data, forward_proba(m, m, m, state).data)


def test_checkpoint_detects_shape_mismatch(tmp_path):
    state = randomised(small_cfg())
    path = save_checkpoint(state, tmp_path / "ck")
    manifest = (path / "manifest.txt").read_text().replace("param.head.b=1:", "param.head.b=2:")
    (path / "manifest.txt").write_text(manifest)
    with pytest.raises(ValueError):
        load_checkpoint(path)
