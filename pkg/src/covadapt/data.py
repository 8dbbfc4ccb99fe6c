"""Dataset model, preprocessing pipeline, splits, and synthetic generators.

A dataset holds per-series records of uniform history length L: the target
and past-only covariates cover the L history steps, future-known dynamic
covariates extend H steps further. Forecast windows are carved out of the
history by :func:`split`; the model consumes a fixed-size context slice
ending at each window origin.

Missing values travel as ``None`` in record fields (``null`` in the file
format) and are resolved by forward filling plus binary indicators before
anything numeric happens, so tensors never carry NaN payloads.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from datetime import datetime, timezone

import numpy as np

from .errors import ConfigError, DataError
from . import jsonio

FREQUENCIES = ("hourly", "daily", "weekly", "monthly")
_FREQ_STEP = {"hourly": 3600, "daily": 86400, "weekly": 604800}


# ---------------------------------------------------------------------------
# schema and records


@dataclass
class HetDecl:
    """Declaration of one heterogeneous covariate: a feature-vector series."""

    name: str
    dim: int
    future_known: bool


@dataclass
class Schema:
    """Covariate declarations shared by every record of a dataset."""

    static_cat: dict[str, int] = field(default_factory=dict)   # name -> vocab size
    static_real: list[str] = field(default_factory=list)
    dyn_known_real: list[str] = field(default_factory=list)
    dyn_known_cat: dict[str, int] = field(default_factory=dict)
    past_real: list[str] = field(default_factory=list)
    het: list[HetDecl] = field(default_factory=list)
    imputed: list[str] = field(default_factory=list)  # series carrying an imputation indicator

    def to_json(self) -> dict:
        d = asdict(self)
        d["het"] = [asdict(h) for h in self.het]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Schema":
        het = [HetDecl(**h) for h in d.get("het", [])]
        return cls(
            static_cat=dict(d.get("static_cat", {})),
            static_real=list(d.get("static_real", [])),
            dyn_known_real=list(d.get("dyn_known_real", [])),
            dyn_known_cat=dict(d.get("dyn_known_cat", {})),
            past_real=list(d.get("past_real", [])),
            het=het,
            imputed=list(d.get("imputed", [])),
        )


@dataclass
class SeriesRecord:
    """One series: L steps of observed history plus H future-known values."""

    series_id: str
    freq: str
    timestamps: list[int]                    # length L + H
    target: list                             # length L, None marks missing
    static_cat: dict[str, int] = field(default_factory=dict)
    static_real: dict[str, float] = field(default_factory=dict)
    dyn_known_real: dict[str, list] = field(default_factory=dict)   # length L + H
    dyn_known_cat: dict[str, list] = field(default_factory=dict)    # length L + H
    past_real: dict[str, list] = field(default_factory=dict)        # length L
    het_features: dict[str, list] = field(default_factory=dict)     # (L+H or L) x D


@dataclass
class Dataset:
    """Records plus schema; history length and horizon are dataset-wide."""

    schema: Schema
    horizon: int
    context: int            # stored history length L of every record
    records: list[SeriesRecord]

    def to_json(self) -> dict:
        recs = []
        for r in self.records:
            recs.append({
                "series_id": r.series_id,
                "freq": r.freq,
                "timestamps": [int(t) for t in r.timestamps],
                "target": list(r.target),
                "static_cat": dict(r.static_cat),
                "static_real": dict(r.static_real),
                "dyn_known_real": {k: list(v) for k, v in r.dyn_known_real.items()},
                "dyn_known_cat": {k: [int(x) for x in v] for k, v in r.dyn_known_cat.items()},
                "past_real": {k: list(v) for k, v in r.past_real.items()},
                "het_features": {k: [list(row) for row in v] for k, v in r.het_features.items()},
            })
        return {"schema": self.schema.to_json(), "horizon": self.horizon,
                "context": self.context, "records": recs}

    def to_bytes(self) -> bytes:
        return jsonio.dumps_canonical(self.to_json())

    @classmethod
    def from_json(cls, d: dict) -> "Dataset":
        schema = Schema.from_json(d["schema"])
        records = [SeriesRecord(**{k: r[k] for k in (
            "series_id", "freq", "timestamps", "target", "static_cat", "static_real",
            "dyn_known_real", "dyn_known_cat", "past_real", "het_features")}) for r in d["records"]]
        ds = cls(schema=schema, horizon=int(d["horizon"]), context=int(d["context"]), records=records)
        validate_dataset(ds)
        return ds


def save_dataset(ds: Dataset, path) -> bytes:
    return jsonio.write_file(path, ds.to_json())


def load_dataset(path) -> Dataset:
    return Dataset.from_json(jsonio.read_file(path))


def dataset_hash(ds: Dataset) -> str:
    return jsonio.sha256_hex(ds.to_bytes())


def validate_dataset(ds: Dataset) -> None:
    """Check every record against the schema; raise DataError on mismatch."""
    s = ds.schema
    L, H = ds.context, ds.horizon
    if L <= 0 or H <= 0:
        raise DataError("context and horizon must be positive")
    het_decl = {h.name: h for h in s.het}
    for r in ds.records:
        if r.freq not in FREQUENCIES:
            raise DataError(f"{r.series_id}: unknown frequency {r.freq!r}")
        if len(r.timestamps) != L + H:
            raise DataError(f"{r.series_id}: timestamps length {len(r.timestamps)} != L+H={L + H}")
        _check_spacing(r.timestamps, r.freq, r.series_id)
        if len(r.target) != L:
            raise DataError(f"{r.series_id}: target length {len(r.target)} != context {L}")
        for name, vocab in s.static_cat.items():
            v = r.static_cat.get(name)
            if v is None or not (0 <= v < vocab):
                raise DataError(f"{r.series_id}: static categorical {name!r} id {v} out of range")
        for name in s.static_real:
            if name not in r.static_real:
                raise DataError(f"{r.series_id}: missing static real {name!r}")
        for name in s.dyn_known_real:
            v = r.dyn_known_real.get(name)
            if v is None or len(v) != L + H:
                raise DataError(f"{r.series_id}: known real {name!r} must have length L+H")
            if any(x is None for x in v) and name not in s.imputed:
                raise DataError(f"{r.series_id}: {name!r} has missing values but no indicator declared")
        for name, vocab in s.dyn_known_cat.items():
            v = r.dyn_known_cat.get(name)
            if v is None or len(v) != L + H:
                raise DataError(f"{r.series_id}: known categorical {name!r} must have length L+H")
            if any(not (0 <= int(x) < vocab) for x in v):
                raise DataError(f"{r.series_id}: categorical {name!r} id out of range (vocab {vocab})")
        for name in s.past_real:
            v = r.past_real.get(name)
            if v is None or len(v) != L:
                raise DataError(f"{r.series_id}: past real {name!r} must have length L")
            if any(x is None for x in v) and name not in s.imputed:
                raise DataError(f"{r.series_id}: {name!r} has missing values but no indicator declared")
        if any(x is None for x in r.target) and "target" not in s.imputed:
            raise DataError(f"{r.series_id}: target has missing values but no indicator declared")
        for name, decl in het_decl.items():
            v = r.het_features.get(name)
            want = L + H if decl.future_known else L
            if v is None or len(v) != want:
                raise DataError(f"{r.series_id}: heterogeneous {name!r} must have {want} rows")
            if any(len(row) != decl.dim for row in v):
                raise DataError(f"{r.series_id}: heterogeneous {name!r} rows must have dim {decl.dim}")


def _check_spacing(timestamps, freq: str, series_id: str) -> None:
    ts = np.asarray(timestamps, dtype=np.int64)
    if np.any(np.diff(ts) <= 0):
        raise DataError(f"{series_id}: timestamps must be strictly increasing")
    if freq in _FREQ_STEP:
        if np.any(np.diff(ts) != _FREQ_STEP[freq]):
            raise DataError(f"{series_id}: irregular spacing for frequency {freq!r}")
    else:  # monthly: consecutive calendar months
        prev = None
        for t in ts:
            dt = datetime.fromtimestamp(int(t), tz=timezone.utc)
            if prev is not None:
                want = (prev.year, prev.month + 1) if prev.month < 12 else (prev.year + 1, 1)
                if (dt.year, dt.month) != want:
                    raise DataError(f"{series_id}: monthly timestamps must advance one calendar month")
            prev = dt


# ---------------------------------------------------------------------------
# preprocessing


def forward_fill_impute(values) -> tuple[np.ndarray, np.ndarray]:
    """Fill missing entries with the most recent observation.

    Leading missings take the first observed value. Returns (filled,
    indicator) where indicator is 1.0 exactly at originally-missing
    positions. Raises DataError when every entry is missing.
    """
    n = len(values)
    filled = np.empty(n, dtype=np.float64)
    indicator = np.zeros(n, dtype=np.float64)
    last = None
    first_obs = next((float(v) for v in values if v is not None), None)
    if first_obs is None:
        raise DataError("cannot impute an all-missing series")
    for i, v in enumerate(values):
        if v is None:
            indicator[i] = 1.0
            filled[i] = first_obs if last is None else last
        else:
            last = float(v)
            filled[i] = last
    return filled, indicator


_CYCLES = {
    "hourly": ("hour", "dow", "month"),
    "daily": ("dow", "dom", "month"),
    "weekly": ("month",),
    "monthly": ("month",),
}
_PERIOD = {"hour": 24, "dow": 7, "dom": 31, "month": 12}


def _cycle_index(dt: datetime, cycle: str) -> int:
    if cycle == "hour":
        return dt.hour
    if cycle == "dow":
        return dt.weekday()
    if cycle == "dom":
        return dt.day - 1
    return dt.month - 1


def time_features(timestamps, freq: str) -> tuple[np.ndarray, list[str]]:
    """Periodic sin/cos calendar features for each timestamp.

    The per-frequency menu is fixed: hourly -> (hour-of-day, day-of-week,
    month); daily -> (day-of-week, day-of-month, month); weekly/monthly ->
    (month). Each cycle k of period P becomes sin(2*pi*k/P), cos(2*pi*k/P).
    """
    if freq not in _CYCLES:
        raise DataError(f"unknown frequency {freq!r}")
    _check_spacing(timestamps, freq, "<time_features>")
    cycles = _CYCLES[freq]
    names = []
    for c in cycles:
        names += [f"tf:{c}_sin", f"tf:{c}_cos"]
    out = np.empty((len(timestamps), 2 * len(cycles)), dtype=np.float64)
    for i, t in enumerate(timestamps):
        dt = datetime.fromtimestamp(int(t), tz=timezone.utc)
        for j, c in enumerate(cycles):
            phase = 2.0 * np.pi * _cycle_index(dt, c) / _PERIOD[c]
            out[i, 2 * j] = np.sin(phase)
            out[i, 2 * j + 1] = np.cos(phase)
    return out, names


@dataclass
class PreparedRecord:
    """A record after imputation, indicator extraction and time features."""

    series_id: str
    freq: str
    target: np.ndarray                 # (L,) filled
    target_observed: np.ndarray        # (L,) 1.0 where originally observed
    known: np.ndarray                  # (L+H, n_known_real) filled
    known_names: list[str]
    tf: np.ndarray                     # (L+H, F)
    tf_names: list[str]
    known_cat: dict[str, np.ndarray]   # name -> (L+H,) int64
    past: np.ndarray                   # (L, n_past_real) filled
    past_names: list[str]
    indicators: np.ndarray             # (L, n_imputed) 1.0 at imputed steps
    indicator_names: list[str]
    het: dict[str, np.ndarray]         # name -> (L+H or L, D)
    static_cat: dict[str, int]
    static_real: dict[str, float]


@dataclass
class PreparedDataset:
    schema: Schema
    horizon: int
    context: int
    records: list[PreparedRecord]
    source_hash: str


def prepare(ds: Dataset) -> PreparedDataset:
    """Run the preprocessing pipeline over every record."""
    validate_dataset(ds)
    s = ds.schema
    L, H = ds.context, ds.horizon
    out = []
    for r in ds.records:
        indicators: dict[str, np.ndarray] = {}

        def fill(series, name, length):
            filled, ind = forward_fill_impute(series)
            if len(filled) != length:
                raise DataError(f"{r.series_id}: {name} has wrong length")
            if name in s.imputed:
                indicators[name] = ind[:L]
            elif np.any(ind):
                raise DataError(f"{r.series_id}: unexpected missing values in {name}")
            return filled

        target = fill(r.target, "target", L)
        target_observed = 1.0 - indicators.get("target", np.zeros(L))
        known_cols = [fill(r.dyn_known_real[n], n, L + H) for n in s.dyn_known_real]
        known = np.column_stack(known_cols) if known_cols else np.zeros((L + H, 0))
        past_cols = [fill(r.past_real[n], n, L) for n in s.past_real]
        past = np.column_stack(past_cols) if past_cols else np.zeros((L, 0))
        tf, tf_names = time_features(r.timestamps, r.freq)
        ind_cols = [indicators.get(n, np.zeros(L)) for n in s.imputed]
        ind = np.column_stack(ind_cols) if ind_cols else np.zeros((L, 0))
        # static missings default to zero
        static_real = {n: float(r.static_real.get(n) or 0.0) for n in s.static_real}
        out.append(PreparedRecord(
            series_id=r.series_id,
            freq=r.freq,
            target=target,
            target_observed=target_observed,
            known=known,
            known_names=list(s.dyn_known_real),
            tf=tf,
            tf_names=tf_names,
            known_cat={n: np.asarray(r.dyn_known_cat[n], dtype=np.int64) for n in s.dyn_known_cat},
            past=past,
            past_names=list(s.past_real),
            indicators=ind,
            indicator_names=[f"imputed:{n}" for n in s.imputed],
            het={h.name: np.asarray(r.het_features[h.name], dtype=np.float64) for h in s.het},
            static_cat={n: int(r.static_cat[n]) for n in s.static_cat},
            static_real=static_real,
        ))
    return PreparedDataset(schema=s, horizon=H, context=L, records=out,
                           source_hash=dataset_hash(ds))


# ---------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class Window:
    """A forecast instance: target = history[origin : origin + H]."""

    record_index: int
    origin: int


@dataclass
class SplitWindows:
    train: list[Window]
    val: list[Window]
    test: list[Window]


def split(ds: Dataset | PreparedDataset, mode: str, model_context: int) -> SplitWindows:
    """Partition each record's history into train/val/test windows.

    holdout: the last H points of each series are the test targets and the
    H points before them the validation targets. sliding: the final 10% of
    timesteps yields test windows with stride 1, and an equal-size region
    before it the validation windows. Training targets never overlap the
    validation or test regions.
    """
    if mode not in ("holdout", "sliding"):
        raise ConfigError(f"unknown split mode {mode!r}")
    L, H = ds.context, ds.horizon
    train, val, test = [], [], []
    for i in range(len(ds.records)):
        if mode == "holdout":
            test_starts = [L - H]
            val_starts = [L - 2 * H]
            train_hi = L - 3 * H
        else:
            n_eval = int(0.1 * L)
            if n_eval < H:
                raise DataError(f"series too short for sliding split (10% region {n_eval} < H={H})")
            test_starts = list(range(L - n_eval, L - H + 1))
            val_starts = list(range(L - 2 * n_eval, L - n_eval - H + 1))
            train_hi = L - 2 * n_eval - H
        if val_starts[0] < model_context or train_hi < model_context:
            raise DataError(
                f"series too short: history {L} cannot host context {model_context} "
                f"plus evaluation regions (horizon {H})")
        test += [Window(i, o) for o in test_starts]
        val += [Window(i, o) for o in val_starts]
        train += [Window(i, o) for o in range(model_context, train_hi + 1)]
    return SplitWindows(train=train, val=val, test=test)


# ---------------------------------------------------------------------------
# synthetic generation


@dataclass
class HetRecipe:
    """Recipe for one synthetic heterogeneous covariate.

    The feature matrix is a low-rank mix of smooth latent series plus noise;
    a hidden readout vector w maps features to the series that actually
    drives the target, so regression can recover it.
    """

    name: str = "het0"
    dim: int = 6
    future_known: bool = True
    n_latent: int = 2
    feature_noise: float = 0.5
    readout_scale: float = 1.0


@dataclass
class SyntheticSpec:
    """Seeded recipe for a synthetic covariate-aware forecasting dataset."""

    n_series: int = 8
    length: int = 400
    horizon: int = 24
    freq: str = "hourly"
    seed: int = 0
    # target components
    level: float = 8.0
    trend: float = 0.3
    seasonal: float = 1.0
    noise: float = 0.3
    # real dynamic covariates (AR(1) drivers)
    n_known_real: int = 0
    n_past_real: int = 0
    beta_known: list[float] = field(default_factory=list)
    beta_past: list[float] = field(default_factory=list)
    ar_phi: float = 0.5
    # categorical / static covariates
    known_cat_vocab: int = 0
    regime_scale: float = 0.0
    n_static_cat: int = 0
    static_vocab: int = 4
    n_static_real: int = 0
    # heterogeneous covariates
    het: list[HetRecipe] = field(default_factory=list)
    missing_rate: float = 0.0

    def to_json(self) -> dict:
        d = asdict(self)
        d["het"] = [asdict(h) for h in self.het]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "SyntheticSpec":
        d = dict(d)
        d["het"] = [HetRecipe(**h) for h in d.get("het", [])]
        spec = cls(**d)
        spec.validate()
        return spec

    def validate(self) -> None:
        if self.n_series <= 0 or self.length <= 0 or self.horizon <= 0:
            raise ConfigError("n_series, length and horizon must be positive")
        if self.freq not in FREQUENCIES:
            raise ConfigError(f"unknown frequency {self.freq!r}")
        if len(self.beta_known) not in (0, self.n_known_real):
            raise ConfigError("beta_known must match n_known_real")
        if len(self.beta_past) not in (0, self.n_past_real):
            raise ConfigError("beta_past must match n_past_real")
        for h in self.het:
            if h.dim <= 0 or h.n_latent <= 0:
                raise ConfigError(f"heterogeneous covariate {h.name!r} needs positive dims")
        if not np.all(np.isfinite(self.beta_known)) or not np.all(np.isfinite(self.beta_past)):
            raise ConfigError("driver coefficients must be finite")


_SEASON_PERIOD = {"hourly": 24, "daily": 7, "weekly": 52, "monthly": 12}
_EPOCH_START = 1577836800  # 2020-01-01T00:00:00Z


def _gen_timestamps(freq: str, n: int, offset: int) -> list[int]:
    if freq in _FREQ_STEP:
        step = _FREQ_STEP[freq]
        start = _EPOCH_START + offset * step
        return [start + i * step for i in range(n)]
    # monthly: first of consecutive calendar months
    ts = []
    year, month = 2020, 1 + offset
    year += (month - 1) // 12
    month = (month - 1) % 12 + 1
    for _ in range(n):
        ts.append(int(datetime(year, month, 1, tzinfo=timezone.utc).timestamp()))
        month += 1
        if month > 12:
            month, year = 1, year + 1
    return ts


def _ar1(rng: np.random.Generator, n: int, phi: float) -> np.ndarray:
    out = np.empty(n)
    out[0] = rng.normal()
    scale = np.sqrt(1.0 - phi * phi)
    for t in range(1, n):
        out[t] = phi * out[t - 1] + scale * rng.normal()
    return out


def _mask_missing(rng: np.random.Generator, values: np.ndarray, rate: float) -> list:
    out = list(map(float, values))
    if rate <= 0:
        return out
    miss = rng.random(len(out)) < rate
    if miss.all():
        miss[0] = False
    return [None if m else v for v, m in zip(out, miss)]


def gen_synthetic(spec: SyntheticSpec) -> Dataset:
    """Generate a dataset as a pure function of ``spec`` (seed included).

    Target: level + trend + seasonal + sum(beta * driver) + readout(het)
    + regime offset + Gaussian noise. Heterogeneous features carry a hidden
    linear readout recoverable by regression.
    """
    spec.validate()
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    L, H = spec.length, spec.horizon
    n = L + H
    period = _SEASON_PERIOD[spec.freq]
    schema = Schema(
        static_cat={f"scat{j}": spec.static_vocab for j in range(spec.n_static_cat)},
        static_real=[f"sreal{j}" for j in range(spec.n_static_real)],
        dyn_known_real=[f"known{j}" for j in range(spec.n_known_real)],
        dyn_known_cat={"regime": spec.known_cat_vocab} if spec.known_cat_vocab else {},
        past_real=[f"past{j}" for j in range(spec.n_past_real)],
        het=[HetDecl(h.name, h.dim, h.future_known) for h in spec.het],
        imputed=(["target"] + [f"known{j}" for j in range(spec.n_known_real)]
                 + [f"past{j}" for j in range(spec.n_past_real)]) if spec.missing_rate > 0 else [],
    )
    beta_known = spec.beta_known or [1.0] * spec.n_known_real
    beta_past = spec.beta_past or [1.0] * spec.n_past_real
    regime_offsets = rng.normal(scale=spec.regime_scale, size=max(spec.known_cat_vocab, 1))
    static_effects = rng.normal(scale=0.3, size=max(spec.static_vocab, 1))
    het_loadings = {}
    het_readouts = {}
    for h in spec.het:
        het_loadings[h.name] = rng.normal(size=(h.dim, h.n_latent)) / np.sqrt(h.n_latent)
        w = rng.normal(size=h.dim)
        het_readouts[h.name] = w / np.linalg.norm(w)

    records = []
    for i in range(spec.n_series):
        t = np.arange(n, dtype=np.float64)
        slope = rng.uniform(-1.0, 1.0) * spec.trend / L
        amp1 = rng.uniform(0.6, 1.0)
        amp2 = rng.uniform(0.0, 0.4)
        phase1 = rng.uniform(0.0, 2.0 * np.pi)
        phase2 = rng.uniform(0.0, 2.0 * np.pi)
        amp_scale = 1.0
        phase_shift = 0.0
        static_cat = {}
        for name in schema.static_cat:
            cid = int(rng.integers(spec.static_vocab))
            static_cat[name] = cid
            amp_scale *= 1.0 + static_effects[cid]
        static_real = {}
        for name in schema.static_real:
            v = float(rng.normal())
            static_real[name] = v
            phase_shift += 0.5 * v
        seasonal = spec.seasonal * amp_scale * (
            amp1 * np.sin(2.0 * np.pi * t / period + phase1 + phase_shift)
            + amp2 * np.sin(4.0 * np.pi * t / period + phase2))
        y = spec.level + rng.normal(scale=1.0) + slope * (t - L / 2.0) + seasonal

        known = {}
        for j, name in enumerate(schema.dyn_known_real):
            c = _ar1(rng, n, spec.ar_phi)
            known[name] = c
            y = y + beta_known[j] * c
        past = {}
        for j, name in enumerate(schema.past_real):
            c = _ar1(rng, n, spec.ar_phi)
            past[name] = c[:L]
            y = y + beta_past[j] * c
        known_cat = {}
        if spec.known_cat_vocab:
            seg = max(8, period // 2)
            ids = np.repeat(rng.integers(spec.known_cat_vocab, size=n // seg + 1), seg)[:n]
            known_cat["regime"] = ids
            y = y + regime_offsets[ids]
        het_feats = {}
        for h in spec.het:
            latents = np.column_stack([
                np.sin(2.0 * np.pi * t / period + rng.uniform(0, 2 * np.pi)) + 0.5 * _ar1(rng, n, 0.9)
                for _ in range(h.n_latent)])
            feats = latents @ het_loadings[h.name].T + h.feature_noise * rng.normal(size=(n, h.dim))
            rows = n if h.future_known else L
            het_feats[h.name] = [list(map(float, feats[k])) for k in range(rows)]
            y = y + h.readout_scale * (feats @ het_readouts[h.name])
        y = y + rng.normal(scale=spec.noise, size=n)

        records.append(SeriesRecord(
            series_id=f"series{i:03d}",
            freq=spec.freq,
            timestamps=_gen_timestamps(spec.freq, n, offset=0),
            target=_mask_missing(rng, y[:L], spec.missing_rate),
            static_cat=static_cat,
            static_real=static_real,
            dyn_known_real={k: _mask_missing(rng, v, spec.missing_rate) for k, v in known.items()},
            dyn_known_cat={k: [int(x) for x in v] for k, v in known_cat.items()},
            past_real={k: _mask_missing(rng, v, spec.missing_rate) for k, v in past.items()},
            het_features=het_feats,
        ))
    ds = Dataset(schema=schema, horizon=H, context=L, records=records)
    validate_dataset(ds)
    return ds


def inject_noise_covariate(ds: Dataset, seed: int, name: str = "noise") -> Dataset:
    """Append one past-only covariate of i.i.d. standard normal draws."""
    if name in ds.schema.past_real or name in ds.schema.dyn_known_real:
        raise ConfigError(f"covariate name {name!r} already exists")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    schema = Schema.from_json(ds.schema.to_json())
    schema.past_real = schema.past_real + [name]
    records = []
    for r in ds.records:
        past = {k: list(v) for k, v in r.past_real.items()}
        past[name] = [float(x) for x in rng.normal(size=ds.context)]
        records.append(SeriesRecord(
            series_id=r.series_id, freq=r.freq, timestamps=list(r.timestamps),
            target=list(r.target), static_cat=dict(r.static_cat),
            static_real=dict(r.static_real),
            dyn_known_real={k: list(v) for k, v in r.dyn_known_real.items()},
            dyn_known_cat={k: list(v) for k, v in r.dyn_known_cat.items()},
            past_real=past,
            het_features={k: [list(row) for row in v] for k, v in r.het_features.items()},
        ))
    return Dataset(schema=schema, horizon=ds.horizon, context=ds.context, records=records)


# ---------------------------------------------------------------------------
# presets


def corpus_spec(seed: int = 0, **overrides) -> SyntheticSpec:
    """Diverse seasonal corpus with no covariates, used for pretraining."""
    kw = dict(n_series=24, length=400, horizon=24, seed=seed,
              level=8.0, trend=0.5, seasonal=1.0, noise=0.3)
    kw.update(overrides)
    return SyntheticSpec(**kw)


def driver_spec(seed: int = 0, **overrides) -> SyntheticSpec:
    """One strong future-known real driver; most variance rides on it."""
    kw = dict(n_series=8, length=400, horizon=24, seed=seed,
              level=8.0, trend=0.2, seasonal=0.6, noise=0.15,
              n_known_real=1, beta_known=[1.0], ar_phi=0.5)
    kw.update(overrides)
    return SyntheticSpec(**kw)


def hidden_readout_spec(seed: int = 0, **overrides) -> SyntheticSpec:
    """A heterogeneous covariate whose hidden readout drives the target."""
    kw = dict(n_series=8, length=400, horizon=24, seed=seed,
              level=8.0, trend=0.2, seasonal=0.5, noise=0.15,
              het=[HetRecipe(name="feat", dim=6, future_known=True,
                             n_latent=2, feature_noise=0.5, readout_scale=1.0)])
    kw.update(overrides)
    return SyntheticSpec(**kw)


def mixed_spec(seed: int = 0, **overrides) -> SyntheticSpec:
    """Every covariate kind at once; exercise the full pipeline."""
    kw = dict(n_series=6, length=400, horizon=24, seed=seed,
              level=8.0, trend=0.3, seasonal=0.8, noise=0.2,
              n_known_real=1, beta_known=[0.8], n_past_real=1, beta_past=[0.5],
              known_cat_vocab=4, regime_scale=0.5,
              n_static_cat=1, static_vocab=4, n_static_real=1,
              het=[HetRecipe(name="feat", dim=4, future_known=False, n_latent=1,
                             feature_noise=0.5, readout_scale=0.5)],
              missing_rate=0.02)
    kw.update(overrides)
    return SyntheticSpec(**kw)


PRESETS = {
    "corpus": corpus_spec,
    "driver": driver_spec,
    "hidden_readout": hidden_readout_spec,
    "mixed": mixed_spec,
}
