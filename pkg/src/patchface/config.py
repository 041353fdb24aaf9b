"""Run configuration: every tunable default in one place.

Config files are plain text, one `key = value` per line; blank lines
and lines starting with # are ignored; unknown keys are errors.  Every
command echoes its effective configuration into its outputs so a run
can be reproduced from any artifact it wrote.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

from .nn.network import DEFAULT_BN_EPS
from .pipeline import KeypointConfig
from .sparse import SrcConfig
from .triplet import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    # randomness
    seed: int = 0
    # triplet training
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 0.001
    momentum: float = 0.09
    weight_decay: float = 0.0005
    margin: float = 0.2
    pool_refresh: int = 10
    pool_size_per_person: int = 32
    normalize_embeddings: bool = False
    bn_eps: float = DEFAULT_BN_EPS
    # keypoint detection
    max_keypoints: int = 64
    keypoint_threshold: float = 1e-4
    # patch extraction
    max_invalid_fraction: float = 0.5
    # sparse representation classification
    lasso_lambda: float = 0.1
    n_atoms: int = 200
    lasso_tol: float = 1e-7
    lasso_max_iter: int = 1000
    # fusion
    weight_image: float = 0.5
    weight_depth: float = 0.5

    def train_config(self, seed: Optional[int] = None) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.learning_rate,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            margin=self.margin,
            pool_refresh=self.pool_refresh,
            pool_size=None,  # resolved per dataset: pool_size_per_person x persons
            seed=self.seed if seed is None else seed,
            normalize_embeddings=self.normalize_embeddings,
        )

    def keypoint_config(self) -> KeypointConfig:
        return KeypointConfig(
            max_keypoints=self.max_keypoints,
            response_threshold=self.keypoint_threshold,
        )

    def src_config(self) -> SrcConfig:
        return SrcConfig(
            lam=self.lasso_lambda,
            n_atoms=self.n_atoms,
            tol=self.lasso_tol,
            max_iter=self.lasso_max_iter,
            weight_image=self.weight_image,
            weight_depth=self.weight_depth,
        )

    def to_lines(self) -> list:
        out = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            out.append(f"{f.name} = {value}")
        return out


def _coerce(name: str, text: str, target_type) -> object:
    text = text.strip()
    try:
        if target_type is bool:
            lowered = text.lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if target_type is int:
            return int(text)
        if target_type is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(
            f"config key {name!r}: cannot parse {text!r} as {target_type.__name__}"
        ) from None


def parse_config_lines(lines, base: Optional[Config] = None) -> Config:
    cfg = base or Config()
    types = {f.name: f.type for f in fields(Config)}
    # dataclass field types arrive as strings under `from __future__ import
    # annotations`; map them back to concrete types.
    concrete = {"int": int, "float": float, "bool": bool, "str": str}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        ftype = types[key]
        if isinstance(ftype, str):
            ftype = concrete[ftype]
        setattr(cfg, key, _coerce(key, value, ftype))
    return cfg


def parse_config(path, base: Optional[Config] = None) -> Config:
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config_lines(lines, base=base)
