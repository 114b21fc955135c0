"""Pipeline configuration: one file (JSON or TOML), one seed, one hash.

Every nested section mirrors a module config. The top-level ``seed`` feeds
each section that takes one unless the file sets it explicitly, so a single
value pins the whole run. ``config_hash`` fingerprints the resolved config;
stage artifacts record it and refuse to mix with mismatched runs.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .encoder import EncoderConfig
from .errors import ValidationError
from .priors import PriorConfig
from .profiler import ProfileWeights
from .reranker import DavinciConfig
from .split import SplitConfig

try:
    import tomllib  # py311+
except ImportError:  # pragma: no cover
    try:
        import tomli as tomllib
    except ImportError:
        tomllib = None


@dataclass(frozen=True)
class PathsConfig:
    documents: str = ""
    edges: str = ""
    queries: str = ""
    workdir: str = "work"


@dataclass(frozen=True)
class PipelineConfig:
    paths: PathsConfig = PathsConfig()
    split: SplitConfig = SplitConfig()
    encoder: EncoderConfig = EncoderConfig()
    weights: ProfileWeights = ProfileWeights()
    prior: PriorConfig = PriorConfig()
    davinci: DavinciConfig = DavinciConfig()
    encoder_source: str = "hash"  # "hash" or "file:<path to CVEC>"
    ks_retrieval: tuple[int, ...] = (10, 50, 300)
    ks_rerank: tuple[int, ...] = (5, 10, 20)
    seed: int = 0

    def __post_init__(self):
        if self.encoder_source != "hash" and not self.encoder_source.startswith("file:"):
            raise ValidationError(
                f"encoder_source must be 'hash' or 'file:<path>', got {self.encoder_source!r}"
            )
        if not self.ks_retrieval or not self.ks_rerank:
            raise ValidationError("ks_retrieval and ks_rerank must be non-empty")

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["ks_retrieval"] = list(self.ks_retrieval)
        d["ks_rerank"] = list(self.ks_rerank)
        return d

    def config_hash(self) -> str:
        canonical = json.dumps(self.as_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

    def replace(self, **kwargs) -> "PipelineConfig":
        return dataclasses.replace(self, **kwargs)


def _build_section(cls, data: dict, seed: int, seeded: bool):
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - fields
    if unknown:
        raise ValidationError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    if seeded and "seed" not in data:
        data = {**data, "seed": seed}
    return cls(**data)


def config_from_dict(data: dict) -> PipelineConfig:
    data = dict(data)
    seed = int(data.pop("seed", 0))
    known = {
        "paths",
        "split",
        "encoder",
        "weights",
        "prior",
        "davinci",
        "encoder_source",
        "ks_retrieval",
        "ks_rerank",
    }
    unknown = set(data) - known
    if unknown:
        raise ValidationError(f"unknown config sections: {sorted(unknown)}")

    davinci_raw = dict(data.get("davinci", {}))
    prior = _build_section(PriorConfig, dict(data.get("prior", {})), seed, seeded=False)
    if "prior" in davinci_raw:
        davinci_raw["prior"] = _build_section(PriorConfig, dict(davinci_raw["prior"]), seed, seeded=False)
    else:
        davinci_raw["prior"] = prior
    return PipelineConfig(
        paths=_build_section(PathsConfig, dict(data.get("paths", {})), seed, seeded=False),
        split=_build_section(SplitConfig, dict(data.get("split", {})), seed, seeded=True),
        encoder=_build_section(EncoderConfig, dict(data.get("encoder", {})), seed, seeded=True),
        weights=_build_section(ProfileWeights, dict(data.get("weights", {})), seed, seeded=False),
        prior=prior,
        davinci=_build_section(DavinciConfig, davinci_raw, seed, seeded=True),
        encoder_source=data.get("encoder_source", "hash"),
        ks_retrieval=tuple(data.get("ks_retrieval", (10, 50, 300))),
        ks_rerank=tuple(data.get("ks_rerank", (5, 10, 20))),
        seed=seed,
    )


def load_config_data(path: str | Path) -> dict:
    """Raw config dict from a JSON or TOML file (pre-override)."""
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".toml":
        if tomllib is None:
            raise ValidationError("TOML config given but no TOML parser is available")
        data = tomllib.loads(raw.decode("utf-8"))
    else:
        data = json.loads(raw.decode("utf-8"))
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: config root must be a table/object")
    return data


def load_config(path: str | Path) -> PipelineConfig:
    return config_from_dict(load_config_data(path))


def _parse_override_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``section.key=value`` strings onto a raw config dict."""
    out = json.loads(json.dumps(data))  # deep copy
    for item in overrides:
        if "=" not in item:
            raise ValidationError(f"override {item!r} is not of the form key=value")
        dotted, raw_value = item.split("=", 1)
        keys = dotted.strip().split(".")
        node = out
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ValidationError(f"override {dotted!r} descends into a non-table value")
        node[keys[-1]] = _parse_override_value(raw_value)
    return out
