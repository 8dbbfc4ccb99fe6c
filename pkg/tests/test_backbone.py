import numpy as np
import pytest

from covadapt import backbone as B
from covadapt import data as D
from covadapt import params as P
from covadapt import tensor as T
from covadapt.errors import ConfigError, ContractError
from covadapt.tensor import Tape


SMALL = B.BackboneConfig(context=32, horizon=8, patch=8, d_model=16, n_layers=1, n_heads=2)


@pytest.fixture(scope="module")
def small_params():
    return B.init_backbone(SMALL, np.random.default_rng(0))


def test_config_validation():
    with pytest.raises(ConfigError):
        B.BackboneConfig(d_model=30, n_heads=4)
    with pytest.raises(ConfigError):
        B.BackboneConfig(levels=(0.5, 0.4))
    with pytest.raises(ConfigError):
        B.BackboneConfig(levels=(0.0, 0.5))


def test_instance_normalize_direct():
    z, mu, sigma = B.instance_normalize([1.0, 2.0, 3.0])
    assert mu == 2.0
    assert abs(sigma - np.sqrt(2.0 / 3.0)) < 1e-12
    assert np.allclose(z, [-1.2247, 0.0, 1.2247], atol=1e-4)


def test_instance_normalize_constant_floor():
    z, mu, sigma = B.instance_normalize([5.0, 5.0, 5.0])
    assert mu == 5.0
    assert sigma == 1e-6
    assert np.array_equal(z, np.zeros(3))


def test_instance_normalize_roundtrip():
    rng = np.random.default_rng(3)
    x = rng.normal(loc=7.0, scale=3.0, size=40)
    z, mu, sigma = B.instance_normalize(x)
    assert np.allclose(B.denormalize(z, mu, sigma), x, atol=1e-12)


def test_tokenize_patch_count(small_params):
    tape = Tape()
    vals = tape.constant(np.random.default_rng(1).normal(size=(2, 32)))
    mask = tape.constant(np.ones((2, 32)))
    tokens = B.tokenize(small_params, SMALL, vals, mask)
    assert tokens.shape == (2, 4, 16)


def test_tokenize_left_padding(small_params):
    cfg = B.BackboneConfig(context=96, horizon=24, patch=8, d_model=16, n_layers=1, n_heads=2)
    params = B.init_backbone(cfg, np.random.default_rng(0))
    tape = Tape()
    vals = tape.constant(np.random.default_rng(1).normal(size=(1, 10)))
    mask = tape.constant(np.ones((1, 10)))
    tokens = B.tokenize(params, cfg, vals, mask)
    assert tokens.shape == (1, 2, 16)  # ceil(10/8) = 2 patches


def test_tokenize_deterministic(small_params):
    x = np.random.default_rng(2).normal(size=(1, 32))

    def run():
        tape = Tape()
        return B.tokenize(small_params, SMALL, tape.constant(x), tape.constant(np.ones((1, 32)))).data

    assert np.array_equal(run(), run())


def test_encode_shape_and_zero_weight_reduction():
    cfg = SMALL
    params = B.init_backbone(cfg, np.random.default_rng(0))
    zeroed = {k: T.Parameter(np.zeros_like(p.value)) for k, p in params.items()}
    tape = Tape()
    tokens = tape.constant(np.random.default_rng(4).normal(size=(3, 4, 16)))
    out = B.encode(zeroed, cfg, tokens)
    assert out.shape == (3, 4, 16)
    # all block weights zero: only the (zero) positional embedding is added
    assert np.allclose(out.data, tokens.data, atol=0.0)


def test_encode_dim_mismatch(small_params):
    tape = Tape()
    with pytest.raises(ContractError):
        B.encode(small_params, SMALL, tape.constant(np.zeros((1, 4, 8))))


def test_attention_rows_sum_to_one(small_params):
    tape = Tape()
    x = tape.constant(np.random.default_rng(5).normal(size=(2, 4, 16)))
    out, attn = B.multi_head_attention(
        x, x, x, SMALL.n_heads,
        *(tape.leaf(small_params[f"enc0.{n}"]) for n in
          ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")))
    sums = attn.data.sum(axis=-1)
    assert np.all(np.abs(sums - 1.0) <= 1e-12)


def test_predict_shapes_and_sorting(small_params):
    tape = Tape()
    states = tape.constant(np.random.default_rng(6).normal(size=(2, 4, 16)))
    out = B.predict(small_params, SMALL, states, sort=True)
    assert out.shape == (2, 8, 9)
    assert np.all(np.diff(out.data, axis=-1) >= 0.0)


def test_predict_wrong_patch_count(small_params):
    tape = Tape()
    with pytest.raises(ContractError):
        B.predict(small_params, SMALL, tape.constant(np.zeros((1, 3, 16))))


def test_predict_zero_weights_gives_mu():
    params = {k: T.Parameter(np.zeros_like(p.value))
              for k, p in B.init_backbone(SMALL, np.random.default_rng(0)).items()}
    ctx = np.random.default_rng(7).normal(loc=5.0, size=(1, 32))
    tape = Tape()
    pred, mu, sigma = B.backbone_forward(params, SMALL, tape, ctx, np.ones((1, 32)))
    denorm = pred.data * sigma.data[..., None] + mu.data[..., None]
    assert np.allclose(denorm, mu.data[..., None], atol=0.0)


def test_forward_is_pure_function(small_params):
    ctx = np.random.default_rng(8).normal(size=(2, 32))
    obs = np.ones((2, 32))

    def run():
        tape = Tape()
        pred, _, _ = B.backbone_forward(small_params, SMALL, tape, ctx, obs)
        return pred.data

    assert np.array_equal(run(), run())


def test_affine_equivariance(small_params):
    rng = np.random.default_rng(9)
    ctx = rng.normal(loc=4.0, scale=2.0, size=(1, 32))
    obs = np.ones((1, 32))

    def forecast(x):
        tape = Tape()
        pred, mu, sigma = B.backbone_forward(small_params, SMALL, tape, x, obs)
        return pred.data * sigma.data[..., None] + mu.data[..., None]

    base = forecast(ctx)
    for a in (0.5, 3.0):
        for b in (-2.0, 10.0):
            scaled = forecast(a * ctx + b)
            expected = a * base + b
            scale = max(1.0, np.abs(expected).max())
            assert np.abs(scaled - expected).max() <= 1e-9 * scale


def test_checkpoint_roundtrip(tmp_path, small_params):
    ckpt = B.BackboneCheckpoint(config=SMALL, params=small_params,
                                meta={"seed": 0, "steps": 0, "final_loss": 1.0})
    path = tmp_path / "bb.json"
    raw = ckpt.save(path)
    loaded = B.BackboneCheckpoint.load(path)
    assert loaded.content_hash() == ckpt.content_hash()
    assert loaded.save(tmp_path / "bb2.json") == raw
    for k, p in loaded.params.items():
        assert np.array_equal(p.value, ckpt.params[k].value)


def test_freeze_marks_everything(small_params):
    params = P.clone(small_params)
    ckpt = B.BackboneCheckpoint(config=SMALL, params=params)
    frozen = B.freeze(ckpt)
    assert all(p.frozen for p in frozen.params.values())
    assert frozen.content_hash == ckpt.content_hash()


def test_unfreeze_clone_changes_hash_after_step(small_params):
    from covadapt.training import AdamState, adam_step

    frozen = B.freeze(B.BackboneCheckpoint(config=SMALL, params=P.clone(small_params)))
    trainable = frozen.unfreeze_clone()
    before = P.content_hash(trainable)
    for p in trainable.values():
        p.grad = np.ones_like(p.value)
    adam_step(trainable, AdamState(trainable, lr=0.01))
    assert P.content_hash(trainable) != before
    assert P.content_hash(frozen.params) == frozen.content_hash


def test_gradient_flows_through_frozen_params():
    """Adapter-side inputs receive gradient even when the net is frozen."""
    params = P.clone(B.init_backbone(SMALL, np.random.default_rng(0)))
    P.freeze_all(params)
    shift = T.Parameter(np.zeros((1, 32)))
    ctx = np.random.default_rng(10).normal(size=(1, 32))
    rngw = np.random.default_rng(11).normal(size=(1, 8, 9))

    def build(tape):
        x = T.add(tape.constant(ctx), tape.leaf(shift))
        tokens, _, _ = B.tokenize_with_stats(params, SMALL, x, tape.constant(np.ones((1, 32))))
        states = B.encode(params, SMALL, tokens)
        pred = B.predict(params, SMALL, states, sort=False)
        return T.reduce_sum(T.mul(pred, tape.constant(rngw)))

    err = T.finite_diff_check(build, {"shift": shift}, max_coords_per_param=16)
    assert err <= 1e-5
    tape = Tape()
    loss = build(tape)
    T.backward(tape, loss)
    assert np.any(shift.grad != 0.0)
    for p in params.values():
        assert np.all(p.grad == 0.0)


def test_pretrain_improves_and_is_deterministic():
    corpus = D.gen_synthetic(D.corpus_spec(seed=1, n_series=4, length=200, horizon=8))
    cfg = B.BackboneConfig(context=32, horizon=8, patch=8, d_model=16, n_layers=1, n_heads=2)
    ckpt = B.pretrain(corpus, cfg, seed=5, steps=60, batch_size=8)
    assert ckpt.meta["final_loss"] < 1.0
    again = B.pretrain(corpus, cfg, seed=5, steps=60, batch_size=8)
    assert P.content_hash(ckpt.params) == P.content_hash(again.params)
