"""Parameter collections: initialization, hashing, checkpoint serialization."""

from __future__ import annotations

import numpy as np

from . import jsonio
from .errors import ConfigError
from .tensor import Parameter

Params = dict[str, Parameter]


def glorot(rng: np.random.Generator, shape: tuple[int, ...], gain: float = 1.0) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    scale = gain * np.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(scale=scale, size=shape)


def params_to_json(params: Params) -> dict:
    return {name: {"shape": list(p.value.shape), "data": [float(x) for x in p.value.reshape(-1)]}
            for name, p in params.items()}


def params_from_json(d: dict, frozen: bool = False) -> Params:
    out: Params = {}
    for name in sorted(d):
        entry = d[name]
        arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        out[name] = Parameter(arr, frozen=frozen)
    return out


def content_hash(params: Params) -> str:
    """Stable digest of parameter content (17-digit float serialization)."""
    return jsonio.sha256_hex(jsonio.dumps_canonical(params_to_json(params), sig17=True))


def snapshot(params: Params) -> dict[str, np.ndarray]:
    return {name: p.value.copy() for name, p in params.items()}


def restore(params: Params, snap: dict[str, np.ndarray]) -> None:
    for name, p in params.items():
        p.value[...] = snap[name]


def freeze_all(params: Params) -> None:
    for p in params.values():
        p.frozen = True


def clone(params: Params, frozen: bool = False) -> Params:
    return {name: Parameter(p.value.copy(), frozen=frozen) for name, p in params.items()}


def checkpoint_payload(kind: str, config: dict, params: Params, meta: dict,
                       extra: dict | None = None) -> dict:
    payload = {
        "format_version": 1,
        "kind": kind,
        "config": config,
        "meta": meta,
        "content_hash": content_hash(params),
        "params": params_to_json(params),
    }
    if extra:
        payload.update(extra)
    return payload


def read_checkpoint(path, kind: str) -> dict:
    d = jsonio.read_file(path)
    if d.get("format_version") != 1:
        raise ConfigError(f"unsupported checkpoint format in {path}")
    if d.get("kind") != kind:
        raise ConfigError(f"expected a {kind!r} checkpoint, found {d.get('kind')!r}")
    return d
