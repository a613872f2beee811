"""Run configuration: strict INI parsing plus per-dataset hyperparameter presets."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .manifolds import parse_spaces

# (epochs, lr, weight decay) for the AMES model and for the baselines, plus k
PRESETS = {
    "cora": {"k": 7, "epochs": 1500, "ames": (5e-3, 1e-5), "baseline": (1e-2, 1e-4), "kind": "homophilic"},
    "citeseer": {"k": 5, "epochs": 1500, "ames": (4e-3, 1e-5), "baseline": (1e-2, 1e-4), "kind": "homophilic"},
    "chameleon": {"k": 2, "epochs": 1000, "ames": (1e-2, 1e-5), "baseline": (1e-2, 1e-3), "kind": "heterophilic"},
    "squirrel": {"k": 3, "epochs": 1000, "ames": (1e-2, 1e-5), "baseline": (1e-2, 1e-3), "kind": "heterophilic"},
    "tadpole": {"k": 3, "epochs": 800, "ames": (1e-3, 2e-4), "baseline": (1e-3, 2e-4), "kind": "pointcloud"},
}


@dataclass
class RunConfig:
    # [data]
    format: str = "tabular"  # citation | tabular
    content: str | None = None
    cites: str | None = None
    nodes: str | None = None
    edges: str | None = None
    kind: str | None = None
    normalize: bool | None = None  # row-L1; default on for citation data
    standardize: bool = False
    preset: str | None = None
    # [model]
    variant: str = "ames"  # ames | ddgm | mlp | gcn
    spaces: str = "E+H+S"
    k: int = 3
    temperature: float = 1.0
    latent_dim: int = 4
    # [train]
    epochs: int = 200
    lr: float = 1e-2
    weight_decay: float = 1e-4
    seed: int = 0
    folds: int = 10
    # [output]
    out: str = "runs/latest"
    base_dir: str = field(default=".", repr=False)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.format not in ("citation", "tabular"):
            raise ConfigError(f"data.format must be 'citation' or 'tabular', got {self.format!r}")
        if self.variant not in ("ames", "ddgm", "mlp", "gcn"):
            raise ConfigError(f"model.variant {self.variant!r} is not one of ames, ddgm, mlp, gcn")
        parse_spaces(self.spaces, self.latent_dim)
        if self.variant == "ddgm" and len(self.space_list()) != 1:
            raise ConfigError("variant ddgm takes exactly one space")
        for name in ("k", "epochs", "folds", "latent_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        if self.lr <= 0 or self.weight_decay < 0 or self.temperature <= 0:
            raise ConfigError("lr and temperature must be positive, weight_decay non-negative")
        if self.preset is not None and self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; known: {sorted(PRESETS)}")

    def space_list(self):
        return parse_spaces(self.spaces, self.latent_dim)

    def space_labels(self) -> list[str]:
        if self.variant in ("mlp", "gcn"):
            return []
        return [s.label for s in self.space_list()]

    def resolve(self, path: str | None) -> Path | None:
        if path is None:
            return None
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def echo(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        return d

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


_SECTIONS = {
    "data": ("format", "content", "cites", "nodes", "edges", "kind", "normalize", "standardize", "preset"),
    "model": ("variant", "spaces", "k", "temperature", "latent_dim"),
    "train": ("epochs", "lr", "weight_decay", "seed", "folds"),
    "output": ("out",),
}
_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _convert(key: str, raw: str):
    kind = _TYPES[key]
    try:
        if "bool" in kind:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind.startswith("int"):
            return int(raw)
        if kind.startswith("float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"invalid value for {key}: {raw!r}") from None
    return raw.strip()


def parse_config(text: str, base_dir: str | Path = ".") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    values: dict = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            values[key] = _convert(key, raw)
    preset = values.get("preset")
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; known: {sorted(PRESETS)}")
        table = PRESETS[preset]
        variant = values.get("variant", "ames")
        lr, wd = table["ames" if variant == "ames" else "baseline"]
        for key, default in (("k", table["k"]), ("epochs", table["epochs"]), ("lr", lr), ("weight_decay", wd), ("kind", table["kind"])):
            values.setdefault(key, default)
    return RunConfig(base_dir=str(base_dir), **values)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), base_dir=path.parent)
