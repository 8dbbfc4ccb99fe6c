import numpy as np
import pytest

from covadapt import data as D
from covadapt import homogenize as H
from covadapt import tensor as T
from covadapt.errors import ContractError, DataError
from covadapt.tensor import Parameter, Tape


CFG = H.HomogenizerConfig(structure="linear", d_het=4, d_emb=4)


def _mixed_prep(seed=5, n_series=2):
    ds = D.gen_synthetic(D.mixed_spec(seed=seed, n_series=n_series, length=200))
    return D.prepare(ds)


def test_embed_repeated_ids_identical_rows():
    table = Parameter(np.random.default_rng(0).normal(size=(5, 3)))
    tape = Tape()
    out = H.embed_categorical(tape.leaf(table), np.array([2, 2, 4]), 5)
    assert np.array_equal(out.data[0], out.data[1])
    assert not np.array_equal(out.data[0], out.data[2])


def test_embed_zero_table_zero_output():
    table = Parameter(np.zeros((5, 3)))
    tape = Tape()
    out = H.embed_categorical(tape.leaf(table), np.array([0, 4]), 5)
    assert np.array_equal(out.data, np.zeros((2, 3)))


def test_embed_out_of_range_names_covariate():
    table = Parameter(np.zeros((5, 3)))
    tape = Tape()
    with pytest.raises(DataError, match="regime"):
        H.embed_categorical(tape.leaf(table), np.array([5]), 5, name="regime")


def test_embed_gradient_only_touched_rows():
    table = Parameter(np.random.default_rng(1).normal(size=(6, 4)))

    def build(tape):
        rows = H.embed_categorical(tape.leaf(table), np.array([3, 3]), 6)
        return T.reduce_sum(T.mul(rows, rows))

    err = T.finite_diff_check(build, {"emb": table})
    assert err <= 1e-5
    tape = Tape()
    loss = build(tape)
    T.backward(tape, loss)
    assert np.any(table.grad[3] != 0.0)
    untouched = [r for r in range(6) if r != 3]
    assert np.all(table.grad[untouched] == 0.0)


def _linear_hom_params(d_in, d_out, rng):
    return {
        "hom.f.w": Parameter(rng.normal(size=(d_in, d_out))),
        "hom.f.b": Parameter(rng.normal(size=d_out)),
    }


def test_homogenize_zero_params_zero_output():
    params = {"hom.f.w": Parameter(np.zeros((3, 4))), "hom.f.b": Parameter(np.zeros(4))}
    tape = Tape()
    out = H.homogenize(tape.constant(np.ones((5, 3))), params, "f", CFG, tape)
    assert np.array_equal(out.data, np.zeros((5, 4)))


def test_homogenize_identity_case():
    cfg = H.HomogenizerConfig(d_het=1)
    params = {"hom.f.w": Parameter(np.ones((1, 1))), "hom.f.b": Parameter(np.zeros(1))}
    x = np.random.default_rng(2).normal(size=(7, 1))
    tape = Tape()
    out = H.homogenize(tape.constant(x), params, "f", cfg, tape)
    assert np.array_equal(out.data, x)


def test_homogenize_width_mismatch():
    params = _linear_hom_params(3, 4, np.random.default_rng(0))
    tape = Tape()
    with pytest.raises(ContractError):
        H.homogenize(tape.constant(np.ones((5, 2))), params, "f", CFG, tape)


def test_homogenize_linearity():
    rng = np.random.default_rng(3)
    params = _linear_hom_params(3, 4, rng)
    f1 = rng.normal(size=(6, 3))
    f2 = rng.normal(size=(6, 3))
    a, b = 1.7, -0.4

    def run(x):
        tape = Tape()
        return H.homogenize(tape.constant(x), params, "f", CFG, tape).data

    lhs = run(a * f1 + b * f2)
    bias = params["hom.f.b"].value
    rhs = a * run(f1) + b * run(f2) - (a + b - 1.0) * bias
    assert np.allclose(lhs, rhs, atol=1e-10)


def test_homogenize_mlp_structure():
    cfg = H.HomogenizerConfig(structure="mlp", d_het=4)
    schema = D.Schema(het=[D.HetDecl("f", 3, True)])
    params = H.init_homogenizers(schema, cfg, np.random.default_rng(4))
    assert set(params) == {"hom.f.w1", "hom.f.b1", "hom.f.w2", "hom.f.b2"}
    tape = Tape()
    out = H.homogenize(tape.constant(np.ones((5, 3))), params, "f", cfg, tape)
    assert out.shape == (5, 4)


def test_channel_plan_counts():
    schema = D.Schema(
        dyn_known_real=["a", "b"],
        het=[D.HetDecl("img", 8, True)],
    )
    plan = H.channel_plan(schema, CFG, "hourly", use_time_features=False)
    # 2 known reals + 1 heterogeneous (future-known, d_het=4) -> M_known = 6
    assert plan.m_known == 6
    assert plan.m_past == 0
    with_tf = H.channel_plan(schema, CFG, "hourly", use_time_features=True)
    assert with_tf.m_known == 12


def test_channel_plan_empty_schema():
    plan = H.channel_plan(D.Schema(), CFG, "hourly", use_time_features=False)
    assert plan.m_total == 0


def test_channel_plan_registry_roundtrip():
    prep = _mixed_prep()
    plan = H.channel_plan(prep.schema, CFG, "hourly")
    counts = {}
    for ch in plan.known + plan.past:
        key = (ch.source, ch.kind)
        counts[key] = counts.get(key, 0) + 1
    assert counts[("known0", "known_real")] == 1
    assert counts[("regime", "known_cat_emb")] == CFG.d_emb
    assert counts[("feat", "het")] == CFG.d_het
    assert counts[("past0", "past_real")] == 1
    for name in prep.schema.imputed:
        assert counts[(name, "indicator")] == 1
    # column labels are unique within each block
    assert len({c.name for c in plan.known}) == plan.m_known
    assert len({c.name for c in plan.past}) == plan.m_past


def test_assemble_shapes_and_leakage():
    prep = _mixed_prep()
    plan = H.channel_plan(prep.schema, CFG, "hourly")
    params = H.init_homogenizers(prep.schema, CFG, np.random.default_rng(0))
    sw = D.split(prep, "holdout", model_context=64)
    batch = H.build_window_batch(prep, sw.test[:2], 64)
    tape = Tape()
    cov = H.assemble(batch, prep.schema, params, CFG, plan, tape)
    assert cov.known.shape == (2, 64 + prep.horizon, plan.m_known)
    assert cov.past.shape == (2, 64, plan.m_past)

    # assembly never reads target values: perturbing the target leaves it bitwise
    batch2 = H.build_window_batch(prep, sw.test[:2], 64)
    batch2.ctx_target[...] += 100.0
    batch2.y_future[...] -= 50.0
    tape2 = Tape()
    cov2 = H.assemble(batch2, prep.schema, params, CFG, plan, tape2)
    assert np.array_equal(cov.known.data, cov2.known.data)
    assert np.array_equal(cov.past.data, cov2.past.data)


def test_m_depends_on_schema_not_data():
    prep_a = _mixed_prep(seed=5)
    prep_b = _mixed_prep(seed=99)
    plan_a = H.channel_plan(prep_a.schema, CFG, "hourly")
    plan_b = H.channel_plan(prep_b.schema, CFG, "hourly")
    assert plan_a.m_known == plan_b.m_known
    assert plan_a.m_past == plan_b.m_past
