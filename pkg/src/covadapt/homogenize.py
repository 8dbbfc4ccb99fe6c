"""Covariate homogenization: turn every covariate into real-valued channels.

Categorical series go through embedding tables (each embedding dimension
becomes one channel), heterogeneous feature-vector series through a
per-covariate homogenizer (linear map or one-hidden-layer MLP) into d_het
channels. Observed real channels pass through unchanged. The result is a
unified known block of shape (T+H, M_known) and past block (T, M_past)
plus a registry mapping each column back to its source covariate.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import params as P
from . import tensor as T
from .data import PreparedDataset, Schema, Window
from .errors import ConfigError, ContractError, DataError
from .tensor import Tape, Tensor


@dataclass
class HomogenizerConfig:
    structure: str = "linear"   # or "mlp" (one hidden layer of width d_het, ELU)
    d_het: int = 4
    d_emb: int = 4              # embedding width for dynamic categoricals

    def __post_init__(self):
        if self.structure not in ("linear", "mlp"):
            raise ConfigError(f"unknown homogenizer structure {self.structure!r}")
        if self.d_het < 1 or self.d_emb < 1:
            raise ConfigError("d_het and d_emb must be >= 1")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "HomogenizerConfig":
        return cls(**d)


@dataclass(frozen=True)
class Channel:
    """Registry entry: one homogeneous column and where it came from."""

    name: str     # column label, unique within its block
    source: str   # covariate name ("time" for calendar features)
    kind: str     # known_real | time_feature | known_cat_emb | past_real | indicator | het


@dataclass
class ChannelPlan:
    """Column layout of the unified covariate blocks; data-independent."""

    known: list[Channel]
    past: list[Channel]

    @property
    def m_known(self) -> int:
        return len(self.known)

    @property
    def m_past(self) -> int:
        return len(self.past)

    @property
    def m_total(self) -> int:
        return self.m_known + self.m_past


@dataclass
class UnifiedCovariates:
    """Assembled homogeneous covariates for one window (or a batch)."""

    known: Tensor        # (..., T+H, M_known)
    past: Tensor         # (..., T, M_past)
    plan: ChannelPlan


TIME_FEATURE_NAMES = {
    "hourly": ["tf:hour_sin", "tf:hour_cos", "tf:dow_sin", "tf:dow_cos",
               "tf:month_sin", "tf:month_cos"],
    "daily": ["tf:dow_sin", "tf:dow_cos", "tf:dom_sin", "tf:dom_cos",
              "tf:month_sin", "tf:month_cos"],
    "weekly": ["tf:month_sin", "tf:month_cos"],
    "monthly": ["tf:month_sin", "tf:month_cos"],
}


def channel_plan(schema: Schema, cfg: HomogenizerConfig, freq: str,
                 use_time_features: bool = True) -> ChannelPlan:
    """Column layout as a pure function of schema + config (never of data)."""
    known: list[Channel] = []
    for name in schema.dyn_known_real:
        known.append(Channel(name, name, "known_real"))
    if use_time_features:
        for name in TIME_FEATURE_NAMES[freq]:
            known.append(Channel(name, "time", "time_feature"))
    for name in schema.dyn_known_cat:
        for j in range(cfg.d_emb):
            known.append(Channel(f"{name}[e{j}]", name, "known_cat_emb"))
    for decl in schema.het:
        if decl.future_known:
            for j in range(cfg.d_het):
                known.append(Channel(f"{decl.name}[h{j}]", decl.name, "het"))
    past: list[Channel] = []
    for name in schema.past_real:
        past.append(Channel(name, name, "past_real"))
    for name in schema.imputed:
        past.append(Channel(f"imputed:{name}", name, "indicator"))
    for decl in schema.het:
        if not decl.future_known:
            for j in range(cfg.d_het):
                past.append(Channel(f"{decl.name}[h{j}]", decl.name, "het"))
    return ChannelPlan(known=known, past=past)


# ---------------------------------------------------------------------------
# trainable pieces


def init_homogenizers(schema: Schema, cfg: HomogenizerConfig,
                      rng: np.random.Generator) -> P.Params:
    """One homogenizer per heterogeneous covariate, plus embedding tables."""
    params: P.Params = {}
    for decl in schema.het:
        d_in, d_out = decl.dim, cfg.d_het
        if cfg.structure == "linear":
            params[f"hom.{decl.name}.w"] = T.Parameter(P.glorot(rng, (d_in, d_out)))
            params[f"hom.{decl.name}.b"] = T.Parameter(np.zeros(d_out))
        else:
            params[f"hom.{decl.name}.w1"] = T.Parameter(P.glorot(rng, (d_in, d_out)))
            params[f"hom.{decl.name}.b1"] = T.Parameter(np.zeros(d_out))
            params[f"hom.{decl.name}.w2"] = T.Parameter(P.glorot(rng, (d_out, d_out)))
            params[f"hom.{decl.name}.b2"] = T.Parameter(np.zeros(d_out))
    for name, vocab in schema.dyn_known_cat.items():
        params[f"emb.{name}"] = T.Parameter(rng.normal(scale=0.1, size=(vocab, cfg.d_emb)))
    return params


def embed_categorical(table: Tensor, ids: np.ndarray, vocab_size: int, name: str = "?") -> Tensor:
    """Look up embedding rows for a series of category ids."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        raise DataError(f"categorical covariate {name!r}: id out of range [0, {vocab_size})")
    return T.gather_rows(table, ids)


def homogenize(features: Tensor, params: P.Params, name: str,
               cfg: HomogenizerConfig, tape: Tape) -> Tensor:
    """Project a feature-vector series (..., n, D) down to (..., n, d_het)."""
    if cfg.structure == "linear":
        w = tape.leaf(params[f"hom.{name}.w"])
        if features.shape[-1] != w.shape[0]:
            raise ContractError(
                f"homogenizer {name!r} expects width {w.shape[0]}, got {features.shape[-1]}")
        return T.add(T.matmul(features, w), tape.leaf(params[f"hom.{name}.b"]))
    w1 = tape.leaf(params[f"hom.{name}.w1"])
    if features.shape[-1] != w1.shape[0]:
        raise ContractError(
            f"homogenizer {name!r} expects width {w1.shape[0]}, got {features.shape[-1]}")
    h = T.elu(T.add(T.matmul(features, w1), tape.leaf(params[f"hom.{name}.b1"])))
    return T.add(T.matmul(h, tape.leaf(params[f"hom.{name}.w2"])), tape.leaf(params[f"hom.{name}.b2"]))


# ---------------------------------------------------------------------------
# window batching and assembly


@dataclass
class WindowBatch:
    """Numpy slices for a batch of forecast windows (model context T, horizon H)."""

    series_ids: list[str]
    origins: list[int]
    ctx_target: np.ndarray        # (B, T)
    ctx_observed: np.ndarray      # (B, T)
    y_future: np.ndarray          # (B, H)
    known: np.ndarray             # (B, T+H, n_known_real)
    tf: np.ndarray                # (B, T+H, F)
    known_cat: dict[str, np.ndarray]   # name -> (B, T+H)
    past: np.ndarray              # (B, T, n_past)
    indicators: np.ndarray        # (B, T, n_imputed)
    het: dict[str, np.ndarray]    # name -> (B, T+H, D) or (B, T, D)
    static_cat: dict[str, np.ndarray]  # name -> (B,)
    static_real: dict[str, np.ndarray]

    @property
    def size(self) -> int:
        return len(self.series_ids)


def build_window_batch(prep: PreparedDataset, windows: list[Window],
                       model_context: int) -> WindowBatch:
    Tm, H = model_context, prep.horizon
    schema = prep.schema
    het_decl = {h.name: h for h in schema.het}
    rows = [prep.records[w.record_index] for w in windows]
    origins = [w.origin for w in windows]
    for w in windows:
        if w.origin < Tm or w.origin + H > prep.context:
            raise DataError(f"window origin {w.origin} does not fit context/horizon")

    def sl(values, o, future):  # slice [o-Tm, o+H) or [o-Tm, o)
        return values[o - Tm:o + H] if future else values[o - Tm:o]

    return WindowBatch(
        series_ids=[r.series_id for r in rows],
        origins=list(origins),
        ctx_target=np.stack([sl(r.target, o, False) for r, o in zip(rows, origins)]),
        ctx_observed=np.stack([sl(r.target_observed, o, False) for r, o in zip(rows, origins)]),
        y_future=np.stack([r.target[o:o + H] for r, o in zip(rows, origins)]),
        known=np.stack([sl(r.known, o, True) for r, o in zip(rows, origins)]),
        tf=np.stack([sl(r.tf, o, True) for r, o in zip(rows, origins)]),
        known_cat={n: np.stack([sl(r.known_cat[n], o, True) for r, o in zip(rows, origins)])
                   for n in schema.dyn_known_cat},
        past=np.stack([sl(r.past, o, False) for r, o in zip(rows, origins)]),
        indicators=np.stack([sl(r.indicators, o, False) for r, o in zip(rows, origins)]),
        het={n: np.stack([sl(r.het[n], o, het_decl[n].future_known)
                          for r, o in zip(rows, origins)]) for n in het_decl},
        static_cat={n: np.asarray([r.static_cat[n] for r in rows], dtype=np.int64)
                    for n in schema.static_cat},
        static_real={n: np.asarray([r.static_real[n] for r in rows], dtype=np.float64)
                     for n in schema.static_real},
    )


def assemble(batch: WindowBatch, schema: Schema, params: P.Params,
             cfg: HomogenizerConfig, plan: ChannelPlan, tape: Tape) -> UnifiedCovariates:
    """Stack all homogeneous channels for a window batch.

    Known block: observed known reals, time features, embedded known
    categoricals, homogenized future-known heterogeneous covariates. Past
    block: past-only reals, imputation indicators, homogenized past-only
    heterogeneous covariates. Statics are not columns here; they feed the
    static context path of the fusion module. Target values are never read.
    """
    known_parts: list[Tensor] = []
    if batch.known.shape[-1]:
        known_parts.append(tape.constant(batch.known))
    if any(c.kind == "time_feature" for c in plan.known):
        known_parts.append(tape.constant(batch.tf))
    for name in schema.dyn_known_cat:
        table = tape.leaf(params[f"emb.{name}"])
        known_parts.append(embed_categorical(table, batch.known_cat[name],
                                             schema.dyn_known_cat[name], name))
    for decl in schema.het:
        if decl.future_known:
            feats = tape.constant(batch.het[decl.name])
            known_parts.append(homogenize(feats, params, decl.name, cfg, tape))
    past_parts: list[Tensor] = []
    if batch.past.shape[-1]:
        past_parts.append(tape.constant(batch.past))
    if batch.indicators.shape[-1]:
        past_parts.append(tape.constant(batch.indicators))
    for decl in schema.het:
        if not decl.future_known:
            feats = tape.constant(batch.het[decl.name])
            past_parts.append(homogenize(feats, params, decl.name, cfg, tape))

    B = batch.size
    n_ctx = batch.ctx_target.shape[1]
    n_full = n_ctx + batch.y_future.shape[1]
    known = (T.concat(known_parts, axis=-1) if known_parts
             else tape.constant(np.zeros((B, n_full, 0))))
    past = (T.concat(past_parts, axis=-1) if past_parts
            else tape.constant(np.zeros((B, n_ctx, 0))))
    if known.shape[-1] != plan.m_known or past.shape[-1] != plan.m_past:
        raise DataError("assembled channel count does not match the channel plan")
    return UnifiedCovariates(known=known, past=past, plan=plan)
