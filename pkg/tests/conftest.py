"""Shared fixtures: tiny frozen backbones and covariate datasets."""

import numpy as np
import pytest

from covadapt import backbone as B
from covadapt import data as D
from covadapt import fusion as F
from covadapt import homogenize as H
from covadapt import params as P


TOY_CFG = B.BackboneConfig(context=32, horizon=8, patch=8, d_model=16, n_layers=1, n_heads=2)


def make_frozen_backbone(cfg=TOY_CFG, seed=0) -> B.FrozenBackbone:
    """Randomly initialized (not pretrained) frozen backbone for unit tests."""
    params = B.init_backbone(cfg, np.random.default_rng(seed))
    return B.freeze(B.BackboneCheckpoint(config=cfg, params=params))


def toy_spec(seed=0, **overrides):
    """Two-covariate toy dataset: one future-known + one past-only driver."""
    kw = dict(n_series=3, length=120, horizon=8, seed=seed,
              level=6.0, trend=0.2, seasonal=0.6, noise=0.2,
              n_known_real=1, beta_known=[1.0], n_past_real=1, beta_past=[0.6])
    kw.update(overrides)
    return D.SyntheticSpec(**kw)


@pytest.fixture(scope="session")
def toy_prep():
    return D.prepare(D.gen_synthetic(toy_spec(seed=7)))


@pytest.fixture(scope="session")
def toy_backbone():
    return make_frozen_backbone()


def make_adapter(backbone, prep, seed=1, **fusion_overrides) -> F.Adapter:
    fusion_kw = dict(use_time_features=False)
    fusion_kw.update(fusion_overrides)
    return F.Adapter.init(
        backbone, prep.schema, prep.records[0].freq,
        F.FusionConfig(**fusion_kw), H.HomogenizerConfig(), seed=seed)


def randomize_params(params: P.Params, seed=0, scale=0.2) -> None:
    """Overwrite every parameter (value paths included) with random values."""
    rng = np.random.default_rng(seed)
    for name in sorted(params):
        p = params[name]
        if not p.frozen:
            p.value[...] = rng.normal(scale=scale, size=p.value.shape)
