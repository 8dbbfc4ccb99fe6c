"""Gated attention fusion of covariate tokens into a frozen backbone.

Past covariate channels are pooled per token by conditional attention
(softmax affinity over channels, conditioned on the static context) and
added to the target tokens through a gated linear unit. Future-known
channels are pooled the same way and mixed with the encoded sequence by a
single self-attention block. Every injection point is gated, and all gate
value paths initialize to zero, so a freshly built adapter reproduces the
frozen backbone bitwise ("warm start") and a gate-zero mechanism keeps it
that way permanently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from . import params as P
from . import tensor as T
from .backbone import BackboneConfig, FrozenBackbone, encode, predict, tokenize, tokenize_with_stats
from .data import PreparedDataset, Schema, Window
from .errors import ConfigError, ContractError
from .homogenize import (ChannelPlan, HomogenizerConfig, UnifiedCovariates, WindowBatch,
                         assemble, build_window_batch, channel_plan, init_homogenizers)
from .jsonio import write_file
from .tensor import Tape, Tensor

MECHANISMS = ("gated_attention", "weight_fusion", "gate_zero")
POSITIONS = ("pre", "post")


@dataclass
class FusionConfig:
    past_position: str = "pre"
    future_position: str = "post"
    mechanism: str = "gated_attention"
    heads: int = 4
    use_static: bool = True
    use_time_features: bool = True

    def __post_init__(self):
        if self.past_position not in POSITIONS or self.future_position not in POSITIONS:
            raise ConfigError("fusion positions must be 'pre' or 'post'")
        if self.mechanism not in MECHANISMS:
            raise ConfigError(f"unknown fusion mechanism {self.mechanism!r}")
        if self.heads < 1:
            raise ConfigError("heads must be >= 1")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "FusionConfig":
        return cls(**d)


# ---------------------------------------------------------------------------
# primitive blocks


def init_glu(params: P.Params, prefix: str, d_in: int, d_out: int,
             rng: np.random.Generator) -> None:
    """Gate path small random, value path exactly zero (warm start)."""
    params[f"{prefix}.gate_w"] = T.Parameter(rng.normal(scale=0.1, size=(d_in, d_out)))
    params[f"{prefix}.gate_b"] = T.Parameter(np.zeros(d_out))
    params[f"{prefix}.value_w"] = T.Parameter(np.zeros((d_in, d_out)))
    params[f"{prefix}.value_b"] = T.Parameter(np.zeros(d_out))


def glu(params: P.Params, prefix: str, x: Tensor, tape: Tape) -> Tensor:
    """sigmoid(gate(x)) * value(x); zero value path gives an exact zero."""
    gate_w = tape.leaf(params[f"{prefix}.gate_w"])
    if x.shape[-1] != gate_w.shape[0]:
        raise ContractError(f"glu {prefix!r} expects width {gate_w.shape[0]}, got {x.shape[-1]}")
    gate = T.sigmoid(T.add(T.matmul(x, gate_w), tape.leaf(params[f"{prefix}.gate_b"])))
    value = T.add(T.matmul(x, tape.leaf(params[f"{prefix}.value_w"])),
                  tape.leaf(params[f"{prefix}.value_b"]))
    return T.mul(gate, value)


def init_grn(params: P.Params, prefix: str, d_in: int, d_hidden: int, d_out: int,
             rng: np.random.Generator, conditional: bool, d_ctx: int = 0) -> None:
    params[f"{prefix}.in_w"] = T.Parameter(P.glorot(rng, (d_in, d_hidden)))
    params[f"{prefix}.in_b"] = T.Parameter(np.zeros(d_hidden))
    if conditional:
        params[f"{prefix}.ctx_w"] = T.Parameter(P.glorot(rng, (d_ctx, d_hidden)))
    params[f"{prefix}.mid_w"] = T.Parameter(P.glorot(rng, (d_hidden, d_hidden)))
    params[f"{prefix}.mid_b"] = T.Parameter(np.zeros(d_hidden))
    init_glu(params, f"{prefix}.glu", d_hidden, d_out, rng)
    if d_in != d_out:
        params[f"{prefix}.skip_w"] = T.Parameter(P.glorot(rng, (d_in, d_out)))
        params[f"{prefix}.skip_b"] = T.Parameter(np.zeros(d_out))
    params[f"{prefix}.ln_gamma"] = T.Parameter(np.ones(d_out))
    params[f"{prefix}.ln_beta"] = T.Parameter(np.zeros(d_out))


def grn(params: P.Params, prefix: str, a: Tensor, tape: Tape,
        context: Tensor | None = None) -> Tensor:
    """Gated residual network: LayerNorm(skip(a) + GLU(affine(ELU(affine(a, c))))).

    The context enters the first affine stage only; a conditional GRN
    called without context is a contract violation.
    """
    conditional = f"{prefix}.ctx_w" in params
    h = T.matmul(a, tape.leaf(params[f"{prefix}.in_w"]))
    if conditional:
        if context is None:
            raise ContractError(f"conditional grn {prefix!r} needs a context vector")
        ctx = T.matmul(context, tape.leaf(params[f"{prefix}.ctx_w"]))  # (B, d_hidden)
        ctx = T.reshape(ctx, (ctx.shape[0],) + (1,) * (a.ndim - 2) + (ctx.shape[-1],))
        h = T.add(h, ctx)
    h = T.elu(T.add(h, tape.leaf(params[f"{prefix}.in_b"])))
    h = T.add(T.matmul(h, tape.leaf(params[f"{prefix}.mid_w"])), tape.leaf(params[f"{prefix}.mid_b"]))
    gated = glu(params, f"{prefix}.glu", h, tape)
    if f"{prefix}.skip_w" in params:
        skip = T.add(T.matmul(a, tape.leaf(params[f"{prefix}.skip_w"])),
                     tape.leaf(params[f"{prefix}.skip_b"]))
    else:
        skip = a
    return T.layer_norm(T.add(skip, gated), tape.leaf(params[f"{prefix}.ln_gamma"]),
                        tape.leaf(params[f"{prefix}.ln_beta"]))


def cap(params: P.Params, prefix: str, E_C: Tensor, context: Tensor,
        tape: Tape) -> tuple[Tensor, Tensor]:
    """Conditional attention pooling over covariate channels.

    E_C: (B, P, M, d) channel tokens. Per token, a conditional GRN over the
    flattened channels yields M affinities -> softmax weights; a shared
    value GRN transforms each channel; the pooled vector is the weighted
    sum. Returns (pooled (B, P, d), weights (B, P, M)).
    """
    B, Pn, M, d = E_C.shape
    if M < 1:
        raise ContractError("cap requires at least one covariate channel")
    flat = T.reshape(E_C, (B, Pn, M * d))
    affinity = grn(params, f"{prefix}.affinity", flat, tape, context=context)  # (B, P, M)
    weights = T.softmax(affinity, axis=-1)
    values = grn(params, f"{prefix}.value", E_C, tape)  # (B, P, M, d)
    w = T.reshape(weights, (B, Pn, M, 1))
    pooled = T.reduce_sum(T.mul(values, w), axis=2)
    return pooled, weights


# ---------------------------------------------------------------------------
# covariate tokenization


def tokenize_covariates(backbone: FrozenBackbone, cov: UnifiedCovariates,
                        n_ctx: int, tape: Tape) -> tuple[Tensor | None, Tensor | None]:
    """Embed unified covariate channels with the frozen tokenizer.

    Each channel is normalized by the statistics of its own observed
    history segment (never by target statistics); future-known segments
    reuse the history stats. Past channels of length T yield P tokens,
    future segments of length H yield ceil(H/patch) left-padded tokens.
    Returns (E_C_past (B, P, M_all, d), E_C_fut (B, P_f, M_known, d)),
    either being None when its channel count is zero.
    """
    cfg = backbone.config
    plan = cov.plan
    B = cov.known.shape[0]
    parts_past = []
    fut_tokens = None
    if plan.m_known:
        known_t = T.transpose(cov.known, (0, 2, 1))          # (B, M_k, T+H)
        hist = known_t[:, :, :n_ctx]
        fut = known_t[:, :, n_ctx:]
        z_hist, mu, sigma = T.standardize(hist, axis=-1)
        z_fut = T.div(T.sub(fut, mu), sigma)
        parts_past.append(z_hist)
        mask_f = tape.constant(np.ones(z_fut.shape))
        fut_tokens = tokenize(backbone.params, cfg, z_fut, mask_f, normalize=False)
        fut_tokens = T.transpose(fut_tokens, (0, 2, 1, 3))    # (B, P_f, M_k, d)
    if plan.m_past:
        past_t = T.transpose(cov.past, (0, 2, 1))             # (B, M_p, T)
        z_past, _, _ = T.standardize(past_t, axis=-1)
        parts_past.append(z_past)
    past_tokens = None
    if parts_past:
        allz = T.concat(parts_past, axis=1) if len(parts_past) > 1 else parts_past[0]
        mask = tape.constant(np.ones(allz.shape))
        past_tokens = tokenize(backbone.params, cfg, allz, mask, normalize=False)
        past_tokens = T.transpose(past_tokens, (0, 2, 1, 3))  # (B, P, M_all, d)
    return past_tokens, fut_tokens


# ---------------------------------------------------------------------------
# static context


def init_static(params: P.Params, schema: Schema, d: int, rng: np.random.Generator) -> None:
    for name, vocab in schema.static_cat.items():
        params[f"static.cat.{name}"] = T.Parameter(rng.normal(scale=0.1, size=(vocab, d)))
    for name in schema.static_real:
        params[f"static.real.{name}.w"] = T.Parameter(P.glorot(rng, (1, d)))
        params[f"static.real.{name}.b"] = T.Parameter(np.zeros(d))


def static_context(params: P.Params, schema: Schema, batch: WindowBatch, d: int,
                   tape: Tape, enabled: bool) -> Tensor:
    """Pooled static embedding c = mean over per-covariate embeddings.

    Returns an exact zero vector when statics are absent or disabled.
    """
    parts: list[Tensor] = []
    if enabled:
        for name in schema.static_cat:
            table = tape.leaf(params[f"static.cat.{name}"])
            parts.append(T.gather_rows(table, batch.static_cat[name]))  # (B, d)
        for name in schema.static_real:
            v = tape.constant(batch.static_real[name].reshape(-1, 1))
            w = tape.leaf(params[f"static.real.{name}.w"])
            parts.append(T.add(T.matmul(v, w), tape.leaf(params[f"static.real.{name}.b"])))
    if not parts:
        return tape.constant(np.zeros((batch.size, d)))
    stacked = parts[0]
    for extra in parts[1:]:
        stacked = T.add(stacked, extra)
    return T.mul(stacked, 1.0 / len(parts))


# ---------------------------------------------------------------------------
# fusion stages


def fuse_past(params: P.Params, cfg: FusionConfig, base: Tensor, E_C: Tensor | None,
              context: Tensor, tape: Tape, attn_out: dict | None = None) -> Tensor:
    """Inject pooled past-covariate information: base + GLU(CAP(E_C | c)).

    With no channels, or the gate-zero mechanism, the base passes through
    untouched.
    """
    if E_C is None or cfg.mechanism == "gate_zero":
        return base
    if cfg.mechanism == "weight_fusion":
        pooled = T.reduce_mean(E_C, axis=2)  # (B, P, d)
        delta = T.add(T.matmul(pooled, tape.leaf(params["wf_past.w"])),
                      tape.leaf(params["wf_past.b"]))
        return T.add(base, delta)
    pooled, weights = cap(params, "cap_past", E_C, context, tape)
    if attn_out is not None:
        attn_out["pre"] = weights
    return T.add(base, glu(params, "past_glu", pooled, tape))


def fuse_future(params: P.Params, cfg: FusionConfig, backbone_cfg: BackboneConfig,
                base: Tensor, E_C_fut: Tensor | None, context: Tensor, tape: Tape,
                attn_out: dict | None = None) -> Tensor:
    """Mix pooled future-covariate tokens into the sequence by self-attention.

    The pooled future tokens and the base sequence get learned type
    embeddings, pass through one pre-norm multi-head self-attention, and
    the base rows absorb the gated result: base + GLU(S[:P]).
    """
    if E_C_fut is None or cfg.mechanism == "gate_zero":
        return base
    B, Pn, d = base.shape
    if cfg.mechanism == "weight_fusion":
        pooled = T.reduce_mean(T.reduce_mean(E_C_fut, axis=2), axis=1, keepdims=True)  # (B,1,d)
        delta = T.add(T.matmul(pooled, tape.leaf(params["wf_fut.w"])),
                      tape.leaf(params["wf_fut.b"]))
        return T.add(base, delta)
    pooled, weights = cap(params, "cap_fut", E_C_fut, context, tape)  # (B, P_f, d)
    if attn_out is not None:
        attn_out["post"] = weights
    seq = T.concat([T.add(base, tape.leaf(params["type_hist"])),
                    T.add(pooled, tape.leaf(params["type_fut"]))], axis=1)
    normed = T.layer_norm(seq, tape.leaf(params["attn.ln_gamma"]), tape.leaf(params["attn.ln_beta"]))
    from .backbone import multi_head_attention
    mixed, rows = multi_head_attention(
        normed, normed, normed, cfg.heads,
        tape.leaf(params["attn.wq"]), tape.leaf(params["attn.bq"]),
        tape.leaf(params["attn.wk"]), tape.leaf(params["attn.bk"]),
        tape.leaf(params["attn.wv"]), tape.leaf(params["attn.bv"]),
        tape.leaf(params["attn.wo"]), tape.leaf(params["attn.bo"]))
    if attn_out is not None:
        attn_out["self_attn"] = rows
    return T.add(base, glu(params, "fut_glu", mixed[:, :Pn, :], tape))


# ---------------------------------------------------------------------------
# the adapter


@dataclass
class ForwardResult:
    pred: Tensor                  # (B, H, K) normalized quantiles
    mu: Tensor                    # (B, 1)
    sigma: Tensor                 # (B, 1)
    attn: dict                    # 'pre'/'post' CAP weights, 'self_attn' rows


class Adapter:
    """All trainable state for covariate-aware adaptation of one backbone."""

    def __init__(self, backbone: FrozenBackbone, schema: Schema, freq: str,
                 fusion: FusionConfig, homogenizer: HomogenizerConfig,
                 params: P.Params, plan: ChannelPlan):
        self.backbone = backbone
        self.schema = schema
        self.freq = freq
        self.fusion = fusion
        self.homogenizer = homogenizer
        self.params = params
        self.plan = plan

    # -- construction -------------------------------------------------------

    @classmethod
    def init(cls, backbone: FrozenBackbone, schema: Schema, freq: str,
             fusion: FusionConfig, homogenizer: HomogenizerConfig, seed: int) -> "Adapter":
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xADA]))
        plan = channel_plan(schema, homogenizer, freq, fusion.use_time_features)
        d = backbone.config.d_model
        params = init_homogenizers(schema, homogenizer, rng)
        init_static(params, schema, d, rng)
        m_all = plan.m_total
        m_known = plan.m_known
        if fusion.mechanism == "weight_fusion":
            if m_all:
                params["wf_past.w"] = T.Parameter(np.zeros((d, d)))
                params["wf_past.b"] = T.Parameter(np.zeros(d))
            if m_known:
                params["wf_fut.w"] = T.Parameter(np.zeros((d, d)))
                params["wf_fut.b"] = T.Parameter(np.zeros(d))
        else:
            if m_all:
                init_grn(params, "cap_past.affinity", m_all * d, d, m_all, rng,
                         conditional=True, d_ctx=d)
                init_grn(params, "cap_past.value", d, d, d, rng, conditional=False)
                init_glu(params, "past_glu", d, d, rng)
            if m_known:
                init_grn(params, "cap_fut.affinity", m_known * d, d, m_known, rng,
                         conditional=True, d_ctx=d)
                init_grn(params, "cap_fut.value", d, d, d, rng, conditional=False)
                init_glu(params, "fut_glu", d, d, rng)
                for nm in ("wq", "wk", "wv", "wo"):
                    params[f"attn.{nm}"] = T.Parameter(P.glorot(rng, (d, d)))
                for nm in ("bq", "bk", "bv", "bo"):
                    params[f"attn.{nm}"] = T.Parameter(np.zeros(d))
                params["attn.ln_gamma"] = T.Parameter(np.ones(d))
                params["attn.ln_beta"] = T.Parameter(np.zeros(d))
                params["type_hist"] = T.Parameter(rng.normal(scale=0.02, size=d))
                params["type_fut"] = T.Parameter(rng.normal(scale=0.02, size=d))
        return cls(backbone, schema, freq, fusion, homogenizer, params, plan)

    # -- forward ------------------------------------------------------------

    def forward(self, batch: WindowBatch, tape: Tape, sort: bool = False,
                collect_attn: bool = False) -> ForwardResult:
        cfg_b = self.backbone.config
        attn: dict = {}
        sink = attn if collect_attn else None
        cov = assemble(batch, self.schema, self.params, self.homogenizer, self.plan, tape)
        E_C_past, E_C_fut = tokenize_covariates(self.backbone, cov, cfg_b.context, tape)
        ctx = tape.constant(batch.ctx_target)
        mask = tape.constant(batch.ctx_observed)
        tokens, mu, sigma = tokenize_with_stats(self.backbone.params, cfg_b, ctx, mask)
        c = static_context(self.params, self.schema, batch, cfg_b.d_model, tape,
                           enabled=self.fusion.use_static)
        z = tokens
        if self.fusion.past_position == "pre":
            z = fuse_past(self.params, self.fusion, z, E_C_past, c, tape, sink)
        if self.fusion.future_position == "pre":
            z = fuse_future(self.params, self.fusion, cfg_b, z, E_C_fut, c, tape, sink)
        h = encode(self.backbone.params, cfg_b, z)
        if self.fusion.past_position == "post":
            h = fuse_past(self.params, self.fusion, h, E_C_past, c, tape, sink)
        if self.fusion.future_position == "post":
            h = fuse_future(self.params, self.fusion, cfg_b, h, E_C_fut, c, tape, sink)
        pred = predict(self.backbone.params, cfg_b, h, sort=sort)
        return ForwardResult(pred=pred, mu=mu, sigma=sigma, attn=attn)

    # -- persistence --------------------------------------------------------

    def config_json(self) -> dict:
        return {
            "schema": self.schema.to_json(),
            "freq": self.freq,
            "fusion": self.fusion.to_json(),
            "homogenizer": self.homogenizer.to_json(),
        }

    def save(self, path, meta: dict | None = None) -> bytes:
        payload = P.checkpoint_payload(
            "adapter", self.config_json(), self.params, meta or {},
            extra={"backbone_hash": self.backbone.content_hash})
        return write_file(path, payload, sig17=True)

    @classmethod
    def load(cls, path, backbone: FrozenBackbone) -> "Adapter":
        from .errors import CompatibilityError

        d = P.read_checkpoint(path, "adapter")
        if d["backbone_hash"] != backbone.content_hash:
            raise CompatibilityError(
                "adapter was trained against a different backbone "
                f"({d['backbone_hash'][:12]}... != {backbone.content_hash[:12]}...)")
        cfg = d["config"]
        schema = Schema.from_json(cfg["schema"])
        fusion = FusionConfig.from_json(cfg["fusion"])
        hom = HomogenizerConfig.from_json(cfg["homogenizer"])
        plan = channel_plan(schema, hom, cfg["freq"], fusion.use_time_features)
        params = P.params_from_json(d["params"])
        return cls(backbone, schema, cfg["freq"], fusion, hom, params, plan)


def adapter_forecast(adapter: Adapter, prep: PreparedDataset, windows: list[Window],
                     batch_size: int = 256, collect_attn: bool = False):
    """Denormalized quantile forecasts (n, H, K) plus attention records."""
    cfg = adapter.backbone.config
    preds, attns = [], []
    for lo in range(0, len(windows), batch_size):
        chunk = windows[lo:lo + batch_size]
        batch = build_window_batch(prep, chunk, cfg.context)
        tape = Tape()
        out = adapter.forward(batch, tape, sort=True, collect_attn=collect_attn)
        preds.append(out.pred.data * out.sigma.data[..., None] + out.mu.data[..., None])
        if collect_attn:
            attns.append({k: v.data for k, v in out.attn.items()} | {
                "series_ids": batch.series_ids, "origins": batch.origins})
    return np.concatenate(preds, axis=0), attns
