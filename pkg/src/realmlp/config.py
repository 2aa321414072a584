"""Hyperparameter configuration and the TD / TD-S presets."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from typing import Optional


@dataclass
class RealMLPConfig:
    # architecture
    num_embeddings: str = "pbld"  # pbld | pl | plr | none
    emb_hidden: int = 16
    emb_dim: int = 4
    periodic_init_std: float = 0.1
    max_one_hot: Optional[int] = 8  # None: one-hot every categorical column
    cat_emb_dim: int = 8
    scaling_layer: bool = True
    hidden_sizes: tuple[int, ...] = (256, 256, 256)
    activation: str = "selu"  # selu | mish | relu
    param_act: bool = True
    init: str = "data"  # data | simple
    bias_init: str = "he5_standin"  # he5_standin | zero | normal (data init only)
    init_sample_cap: int = 65536

    # optimization
    lr: float = 0.04
    lr_schedule: str = "coslog4"
    lr_factor_emb: float = 0.1
    lr_factor_scale: float = 6.0
    lr_factor_bias: float = 0.1
    lr_factor_act: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.95
    adam_eps: float = 1e-8
    dropout: float = 0.15
    dropout_schedule: str = "flat_cos"
    wd: float = 0.02
    wd_schedule: str = "flat_cos"
    wd_factor_bias: float = 0.0
    epochs: int = 256
    batch_size: int = 256
    label_smoothing: float = 0.1

    # output / selection
    clip_output: bool = True
    standardize_targets: bool = True
    stop_metric: str = "auto"  # auto | err | rmse | ce
    tie_break: str = "last"  # last | first
    dtype: str = "float64"

    def replace(self, **kw) -> "RealMLPConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RealMLPConfig":
        d = dict(d)
        if "hidden_sizes" in d:
            d["hidden_sizes"] = tuple(int(h) for h in d["hidden_sizes"])
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise KeyError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


PRESETS = ("td-class", "td-reg", "tds-class", "tds-reg")


def preset(name: str) -> RealMLPConfig:
    if name == "td-class":
        return RealMLPConfig()
    if name == "td-reg":
        return RealMLPConfig(activation="mish", lr=0.2, label_smoothing=0.0)
    if name in ("tds-class", "tds-reg"):
        reg = name == "tds-reg"
        return RealMLPConfig(
            num_embeddings="none",
            max_one_hot=None,
            activation="mish" if reg else "selu",
            param_act=False,
            init="simple",
            lr=0.07 if reg else 0.04,
            dropout=0.0,
            wd=0.0,
            label_smoothing=0.0 if reg else 0.1,
            clip_output=False,
        )
    raise KeyError(f"unknown preset {name!r}; choose from {PRESETS}")


def default_preset(task: str, simple: bool = False) -> str:
    return ("tds-" if simple else "td-") + ("class" if task == "classification" else "reg")


_ALIASES = {"schedule": "lr_schedule"}
_BOOL_WORDS = {"on": True, "true": True, "yes": True, "1": True,
               "off": False, "false": False, "no": False, "0": False}


def _coerce(name: str, text: str):
    text = text.strip()
    ftype = {f.name: f.type for f in fields(RealMLPConfig)}[name]
    if name == "hidden_sizes":
        text = text.strip("[]() ")
        return tuple(int(t) for t in text.replace(",", " ").split()) if text else ()
    if name == "max_one_hot":
        return None if text.lower() in ("none", "inf", "infinity") else int(text)
    if ftype == "bool":
        try:
            return _BOOL_WORDS[text.lower()]
        except KeyError:
            raise ValueError(f"{name}: expected on/off, got {text!r}") from None
    if ftype == "int":
        return int(text)
    if ftype == "float":
        return float(text)
    if name == "num_embeddings":
        return text.lower()
    return text


def parse_overrides(text: str) -> dict:
    """Parse ``key = value`` lines (``#`` starts a comment) into config fields."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        key = _ALIASES.get(key, key)
        if key not in {f.name for f in fields(RealMLPConfig)}:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def load_config(base: RealMLPConfig, path) -> RealMLPConfig:
    with open(path, encoding="utf-8") as fh:
        return base.replace(**parse_overrides(fh.read()))


def validate(cfg: RealMLPConfig) -> None:
    checks = [
        (cfg.num_embeddings in ("pbld", "pl", "plr", "none"), "num_embeddings"),
        (cfg.activation in ("selu", "mish", "relu"), "activation"),
        (cfg.init in ("data", "simple"), "init"),
        (cfg.bias_init in ("he5_standin", "zero", "normal"), "bias_init"),
        (cfg.stop_metric in ("auto", "err", "rmse", "ce"), "stop_metric"),
        (cfg.tie_break in ("last", "first"), "tie_break"),
        (cfg.dtype in ("float64", "float32"), "dtype"),
        (0.0 <= cfg.dropout < 1.0, "dropout"),
        (cfg.epochs >= 1 and cfg.batch_size >= 1, "epochs/batch_size"),
        (all(h > 0 for h in cfg.hidden_sizes), "hidden_sizes"),
    ]
    for ok, name in checks:
        if not ok:
            raise ValueError(f"invalid config value for {name}")
