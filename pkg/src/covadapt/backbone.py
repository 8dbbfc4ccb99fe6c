"""The frozen-able univariate backbone: tokenizer, temporal encoder, predictor.

The tokenizer instance-normalizes a channel, left-pads it to whole patches,
and maps each (patch, mask) pair through a residual MLP. The encoder is a
stack of pre-norm transformer blocks with learned positional embeddings.
The predictor flattens all token states through one linear map into an
H x K grid of quantile forecasts in normalized space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import jsonio, params as P
from . import tensor as T
from .data import Dataset, PreparedDataset, prepare, split
from .errors import ConfigError, ContractError, DataError
from .tensor import Tape, Tensor

DEFAULT_LEVELS = tuple(round(0.1 * k, 1) for k in range(1, 10))


@dataclass
class BackboneConfig:
    context: int = 96
    horizon: int = 24
    patch: int = 8
    d_model: int = 32
    n_layers: int = 2
    n_heads: int = 4
    levels: tuple = DEFAULT_LEVELS

    def __post_init__(self):
        self.levels = tuple(float(x) for x in self.levels)
        if self.d_model % self.n_heads != 0:
            raise ConfigError("d_model must be divisible by n_heads")
        if len(self.levels) < 1 or any(not (0.0 < a < 1.0) for a in self.levels):
            raise ConfigError("quantile levels must lie in (0, 1)")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise ConfigError("quantile levels must be strictly increasing")
        for name in ("context", "horizon", "patch", "d_model", "n_layers", "n_heads"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")

    @property
    def n_patches(self) -> int:
        return math.ceil(self.context / self.patch)

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def to_json(self) -> dict:
        d = asdict(self)
        d["levels"] = list(self.levels)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "BackboneConfig":
        d = dict(d)
        d["levels"] = tuple(d.get("levels", DEFAULT_LEVELS))
        return cls(**d)


# ---------------------------------------------------------------------------
# normalization


def instance_normalize(context) -> tuple[np.ndarray, float, float]:
    """Standardize a window by its own mean and population std.

    Returns (z, mu, sigma) with sigma floored at 1e-6 so constant windows
    stay finite; ``denormalize`` inverts exactly.
    """
    arr = np.asarray(context, dtype=np.float64)
    if arr.size < 1:
        raise ContractError("instance_normalize needs at least one value")
    z, mu, sigma = T.standardize(Tensor(arr), axis=-1)
    return z.data, float(mu.data.reshape(-1)[0]), float(sigma.data.reshape(-1)[0])


def denormalize(z, mu: float, sigma: float) -> np.ndarray:
    return np.asarray(z, dtype=np.float64) * sigma + mu


# ---------------------------------------------------------------------------
# parameter initialization


def init_backbone(cfg: BackboneConfig, rng: np.random.Generator) -> P.Params:
    d, p = cfg.d_model, cfg.patch
    params: P.Params = {}

    def add(name, value):
        params[name] = T.Parameter(value)

    add("tok.w_in", P.glorot(rng, (2 * p, d)))
    add("tok.b_in", np.zeros(d))
    add("tok.w_out", P.glorot(rng, (d, d)))
    add("tok.b_out", np.zeros(d))
    add("tok.w_skip", P.glorot(rng, (2 * p, d)))
    add("pos", rng.normal(scale=0.02, size=(cfg.n_patches, d)))
    hidden = 4 * d
    for layer in range(cfg.n_layers):
        pre = f"enc{layer}"
        add(f"{pre}.ln1.gamma", np.ones(d))
        add(f"{pre}.ln1.beta", np.zeros(d))
        for nm in ("wq", "wk", "wv", "wo"):
            add(f"{pre}.{nm}", P.glorot(rng, (d, d)))
        for nm in ("bq", "bk", "bv", "bo"):
            add(f"{pre}.{nm}", np.zeros(d))
        add(f"{pre}.ln2.gamma", np.ones(d))
        add(f"{pre}.ln2.beta", np.zeros(d))
        add(f"{pre}.mlp.w1", P.glorot(rng, (d, hidden)))
        add(f"{pre}.mlp.b1", np.zeros(hidden))
        add(f"{pre}.mlp.w2", P.glorot(rng, (hidden, d)))
        add(f"{pre}.mlp.b2", np.zeros(d))
    add("pred.w", P.glorot(rng, (cfg.n_patches * d, cfg.horizon * cfg.n_levels)))
    add("pred.b", np.zeros(cfg.horizon * cfg.n_levels))
    return params


# ---------------------------------------------------------------------------
# forward pieces (leaves bound through `leaf`, so the same code serves both
# trainable and frozen parameter sets)


def _leafer(params: P.Params, tape: Tape):
    cache: dict[str, Tensor] = {}

    def leaf(name: str) -> Tensor:
        if name not in cache:
            cache[name] = tape.leaf(params[name])
        return cache[name]

    return leaf


def tokenize(params: P.Params, cfg: BackboneConfig, values: Tensor, mask: Tensor,
             normalize: bool = True) -> Tensor:
    """Embed a channel (..., n) into patch tokens (..., P, d).

    The channel is instance-normalized over its own n values, left-padded
    with zeros (mask 0) to a whole number of patches, and each patch is
    concatenated with its mask slice before the residual MLP. Callers that
    normalized with other statistics (e.g. a channel's history segment)
    pass ``normalize=False``.
    """
    n = values.shape[-1]
    p = cfg.patch
    n_patch = math.ceil(n / p)
    pad = n_patch * p - n
    if normalize:
        z, _, _ = T.standardize(values, axis=-1)
    else:
        z = values
    if pad:
        zshape = values.shape[:-1] + (pad,)
        zeros = Tensor(np.zeros(zshape), values.tape)
        z = T.concat([zeros, z], axis=-1)
        mask = T.concat([Tensor(np.zeros(zshape), values.tape), mask], axis=-1)
    lead = z.shape[:-1]
    z = T.reshape(z, lead + (n_patch, p))
    mask = T.reshape(mask, lead + (n_patch, p))
    patches = T.concat([z, mask], axis=-1)  # (..., P, 2p)
    return _tok_mlp(params, patches)


def tokenize_with_stats(params: P.Params, cfg: BackboneConfig, values: Tensor,
                        mask: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """tokenize() that also returns the (mu, sigma) normalization stats."""
    _, mu, sigma = T.standardize(values, axis=-1)
    return tokenize(params, cfg, values, mask), mu, sigma


def _tok_mlp(params: P.Params, patches: Tensor) -> Tensor:
    tape = patches.tape
    leaf = _leafer(params, tape)
    h = T.elu(T.add(T.matmul(patches, leaf("tok.w_in")), leaf("tok.b_in")))
    out = T.add(T.matmul(h, leaf("tok.w_out")), leaf("tok.b_out"))
    return T.add(out, T.matmul(patches, leaf("tok.w_skip")))


def multi_head_attention(q_in: Tensor, k_in: Tensor, v_in: Tensor, n_heads: int,
                         wq, bq, wk, bk, wv, bv, wo, bo) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention over (B, S, d); returns (out, weights)."""
    B = q_in.shape[0]
    S_q, d = q_in.shape[-2], q_in.shape[-1]
    S_k = k_in.shape[-2]
    dh = d // n_heads

    def heads(x, S):
        x = T.reshape(x, (B, S, n_heads, dh))
        return T.transpose(x, (0, 2, 1, 3))  # (B, h, S, dh)

    q = heads(T.add(T.matmul(q_in, wq), bq), S_q)
    k = heads(T.add(T.matmul(k_in, wk), bk), S_k)
    v = heads(T.add(T.matmul(v_in, wv), bv), S_k)
    scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    attn = T.softmax(scores, axis=-1)  # rows on the simplex
    ctx = T.matmul(attn, v)  # (B, h, S_q, dh)
    ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (B, S_q, d))
    out = T.add(T.matmul(ctx, wo), bo)
    return out, attn


def encode(params: P.Params, cfg: BackboneConfig, tokens: Tensor) -> Tensor:
    """Run the pre-norm transformer stack; output shape equals input shape."""
    if tokens.shape[-1] != cfg.d_model:
        raise ContractError(f"token dim {tokens.shape[-1]} != d_model {cfg.d_model}")
    n_tok = tokens.shape[-2]
    if n_tok > cfg.n_patches:
        raise ContractError(f"{n_tok} tokens exceed positional table ({cfg.n_patches})")
    tape = tokens.tape
    leaf = _leafer(params, tape)
    x = T.add(tokens, leaf("pos")[:n_tok])
    for layer in range(cfg.n_layers):
        pre = f"enc{layer}"
        normed = T.layer_norm(x, leaf(f"{pre}.ln1.gamma"), leaf(f"{pre}.ln1.beta"))
        attn_out, _ = multi_head_attention(
            normed, normed, normed, cfg.n_heads,
            leaf(f"{pre}.wq"), leaf(f"{pre}.bq"), leaf(f"{pre}.wk"), leaf(f"{pre}.bk"),
            leaf(f"{pre}.wv"), leaf(f"{pre}.bv"), leaf(f"{pre}.wo"), leaf(f"{pre}.bo"))
        x = T.add(x, attn_out)
        normed = T.layer_norm(x, leaf(f"{pre}.ln2.gamma"), leaf(f"{pre}.ln2.beta"))
        h = T.elu(T.add(T.matmul(normed, leaf(f"{pre}.mlp.w1")), leaf(f"{pre}.mlp.b1")))
        h = T.add(T.matmul(h, leaf(f"{pre}.mlp.w2")), leaf(f"{pre}.mlp.b2"))
        x = T.add(x, h)
    return x


def predict(params: P.Params, cfg: BackboneConfig, states: Tensor, sort: bool = True) -> Tensor:
    """Map token states (B, P, d) to normalized quantile forecasts (B, H, K).

    With ``sort`` (inference), each horizon row is sorted ascending to keep
    quantiles non-crossing; training leaves rows unsorted.
    """
    B, n_tok, d = states.shape
    if n_tok != cfg.n_patches:
        raise ContractError(f"predictor expects {cfg.n_patches} tokens, got {n_tok}")
    tape = states.tape
    leaf = _leafer(params, tape)
    flat = T.reshape(states, (B, n_tok * d))
    out = T.add(T.matmul(flat, leaf("pred.w")), leaf("pred.b"))
    out = T.reshape(out, (B, cfg.horizon, cfg.n_levels))
    if sort:
        out = T.sort_last(out)
    return out


def backbone_forward(params: P.Params, cfg: BackboneConfig, tape: Tape,
                     context: np.ndarray, observed: np.ndarray,
                     sort: bool = True) -> tuple[Tensor, Tensor, Tensor]:
    """Full univariate forward over a batch (B, T) of context windows.

    Returns (normalized forecasts (B, H, K), mu (B, 1), sigma (B, 1)).
    """
    ctx = tape.constant(context)
    mask = tape.constant(observed)
    tokens, mu, sigma = tokenize_with_stats(params, cfg, ctx, mask)
    states = encode(params, cfg, tokens)
    return predict(params, cfg, states, sort=sort), mu, sigma


# ---------------------------------------------------------------------------
# checkpoints, pretraining, freezing


@dataclass
class BackboneCheckpoint:
    config: BackboneConfig
    params: P.Params
    meta: dict = field(default_factory=dict)

    def content_hash(self) -> str:
        return P.content_hash(self.params)

    def to_json(self) -> dict:
        return P.checkpoint_payload("backbone", self.config.to_json(), self.params, self.meta)

    def save(self, path) -> bytes:
        return jsonio.write_file(path, self.to_json(), sig17=True)

    @classmethod
    def load(cls, path) -> "BackboneCheckpoint":
        d = P.read_checkpoint(path, "backbone")
        ckpt = cls(config=BackboneConfig.from_json(d["config"]),
                   params=P.params_from_json(d["params"]), meta=d.get("meta", {}))
        if ckpt.content_hash() != d["content_hash"]:
            raise ConfigError(f"checkpoint {path} failed its content-hash check")
        return ckpt


@dataclass
class FrozenBackbone:
    """Immutable backbone handle: frozen parameters plus their content hash."""

    config: BackboneConfig
    params: P.Params
    content_hash: str

    def unfreeze_clone(self) -> P.Params:
        """Trainable copy of the parameters (for the full-fine-tune arm)."""
        return P.clone(self.params, frozen=False)


def freeze(ckpt: BackboneCheckpoint) -> FrozenBackbone:
    P.freeze_all(ckpt.params)
    return FrozenBackbone(config=ckpt.config, params=ckpt.params,
                          content_hash=ckpt.content_hash())


def make_batch(prep: PreparedDataset, windows, model_context: int):
    """Stack context/target slices for a list of windows."""
    ctx, obs, fut = [], [], []
    for w in windows:
        rec = prep.records[w.record_index]
        if w.origin < model_context:
            raise DataError(f"window origin {w.origin} precedes model context {model_context}")
        ctx.append(rec.target[w.origin - model_context:w.origin])
        obs.append(rec.target_observed[w.origin - model_context:w.origin])
        fut.append(rec.target[w.origin:w.origin + prep.horizon])
    return np.stack(ctx), np.stack(obs), np.stack(fut)


def pretrain(corpus: Dataset | PreparedDataset, cfg: BackboneConfig, seed: int,
             steps: int, batch_size: int = 32, lr: float = 1e-3,
             split_mode: str = "holdout") -> BackboneCheckpoint:
    """Quantile-loss pretraining on univariate windows, covariates ignored."""
    from .training import AdamState, adam_step, quantile_loss_tensor

    prep = corpus if isinstance(corpus, PreparedDataset) else prepare(corpus)
    windows = split(prep, split_mode, model_context=cfg.context).train
    if not windows:
        raise DataError("pretraining corpus yields no training windows")
    ss = np.random.SeedSequence(seed)
    init_rng, sample_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    params = init_backbone(cfg, init_rng)
    opt = AdamState(params, lr=lr)
    final_loss = math.nan
    for _ in range(steps):
        take = sample_rng.integers(len(windows), size=batch_size)
        batch = [windows[int(i)] for i in take]
        ctx, obs, fut = make_batch(prep, batch, cfg.context)
        tape = Tape()
        pred, mu, sigma = backbone_forward(params, cfg, tape, ctx, obs, sort=False)
        y_norm = (fut - mu.data) / sigma.data
        loss = quantile_loss_tensor(pred, tape.constant(y_norm), cfg.levels)
        T.backward(tape, loss)
        adam_step(params, opt)
        final_loss = loss.item()
    return BackboneCheckpoint(config=cfg, params=params,
                              meta={"seed": seed, "steps": steps, "final_loss": final_loss})


def forecast_windows(backbone: FrozenBackbone, prep: PreparedDataset, windows,
                     batch_size: int = 256) -> np.ndarray:
    """Zero-shot quantile forecasts in original units, (n_windows, H, K)."""
    cfg = backbone.config
    out = []
    for lo in range(0, len(windows), batch_size):
        chunk = windows[lo:lo + batch_size]
        ctx, obs, _ = make_batch(prep, chunk, cfg.context)
        tape = Tape()
        pred, mu, sigma = backbone_forward(backbone.params, cfg, tape, ctx, obs, sort=True)
        out.append(pred.data * sigma.data[..., None] + mu.data[..., None])
    return np.concatenate(out, axis=0)
