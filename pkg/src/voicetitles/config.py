"""Per-family hyperparameter tables and the key=value config format.

``PAPER`` holds the published production settings. ``DESK`` overrides them
for the small synthetic runs this package is exercised on.
"""

from __future__ import annotations

from .recurrent import RecurrentConfig
from .trainer import TrainConfig
from .transformer import LayerConfig

FAMILIES = ("seq2seq", "ptrnet", "ptrnet_cov", "transformer", "bertsum", "ebertsum")
RECURRENT = ("seq2seq", "ptrnet", "ptrnet_cov")
PROFILES = ("paper", "desk")

DECODE_KEYS = ("beam", "alpha", "min_len", "max_len")
DATA_KEYS = ("max_src", "max_tgt")
PRETRAIN_KEYS = ("pretrain_steps", "pretrain_lr", "pretrain_batch", "pretrain_eval_every")
EXTRA_KEYS = ("coverage_steps",)

_BERT_BASE = dict(hidden=768, heads=12, ffn=3072, enc_layers=12, dec_layers=8, dec_ffn=2048,
                  max_positions=512)
_TRANSFORMER_DECODE = dict(beam=5, alpha=0.95, min_len=4, max_len=50)
_RECURRENT_COMMON = dict(
    schedule="flat", lr_e=1e-3, lr_d=1e-3, batch_size=16, clip_norm=2.0, total_steps=35000,
    checkpoint_every=2000, emb=128, hidden=256, attn=256, coverage_weight=1.0,
    max_src=50, max_tgt=35, beam=4, alpha=0.95, min_len=5, max_len=35, coverage_steps=0,
)
_TRANSFORMER_COMMON = dict(
    schedule="noam", batch_size=256, total_steps=35000, checkpoint_every=2000,
    max_src=62, max_tgt=50, **_TRANSFORMER_DECODE,
)
_PRETRAIN = dict(pretrain_steps=200000, pretrain_lr=2e-5, pretrain_batch=32, pretrain_eval_every=10000)

PAPER = {
    "seq2seq": dict(_RECURRENT_COMMON),
    "ptrnet": dict(_RECURRENT_COMMON),
    "ptrnet_cov": dict(_RECURRENT_COMMON, coverage_steps=3000),
    "transformer": dict(_TRANSFORMER_COMMON, lr_e=1.0, lr_d=1.0, warmup_e=8000, warmup_d=8000,
                        hidden=512, heads=8, ffn=2048, enc_layers=6, dec_layers=8, dec_ffn=2048,
                        max_positions=512),
    "bertsum": dict(_TRANSFORMER_COMMON, lr_e=2e-3, lr_d=0.2, warmup_e=20000, warmup_d=10000,
                    **_BERT_BASE, **_PRETRAIN),
    "ebertsum": dict(_TRANSFORMER_COMMON, lr_e=2e-4, lr_d=0.1, warmup_e=2000, warmup_d=10000,
                     **_BERT_BASE, **_PRETRAIN),
}

_DESK_TRANSFORMER = dict(hidden=64, heads=4, ffn=128, dec_ffn=128, enc_layers=2, dec_layers=2,
                         max_positions=128, batch_size=16, total_steps=2000, checkpoint_every=500)
_DESK_PRETRAIN = dict(pretrain_steps=2000, pretrain_lr=1e-3, pretrain_batch=16, pretrain_eval_every=200)
_DESK_RECURRENT = dict(emb=32, hidden=64, attn=64, total_steps=2000, checkpoint_every=500,
                       max_src=62, max_tgt=50, beam=5, alpha=0.95, min_len=4, max_len=50)

DESK = {
    "seq2seq": dict(_DESK_RECURRENT),
    "ptrnet": dict(_DESK_RECURRENT),
    "ptrnet_cov": dict(_DESK_RECURRENT, coverage_steps=500),
    "transformer": dict(_DESK_TRANSFORMER, lr_e=0.1, lr_d=0.1, warmup_e=571, warmup_d=571),
    "bertsum": dict(_DESK_TRANSFORMER, lr_e=0.1, lr_d=0.1, warmup_e=571, warmup_d=571, **_DESK_PRETRAIN),
    "ebertsum": dict(_DESK_TRANSFORMER, lr_e=0.02, lr_d=0.1, warmup_e=114, warmup_d=571, **_DESK_PRETRAIN),
}


def _field_types(cls):
    return {name: type(getattr(cls(), name)) for name in cls.__dataclass_fields__}


_TYPES = {
    **_field_types(TrainConfig),
    **_field_types(LayerConfig),
    **_field_types(RecurrentConfig),
    "beam": int, "alpha": float, "min_len": int, "max_len": int,
    "max_src": int, "max_tgt": int, "coverage_steps": int,
    "pretrain_steps": int, "pretrain_lr": float, "pretrain_batch": int, "pretrain_eval_every": int,
    "vocab_size": int,
}


class ConfigError(ValueError):
    pass


def coerce(key, value):
    kind = _TYPES.get(key)
    if kind is None:
        raise ConfigError(f"unknown config key {key!r}")
    if isinstance(value, str):
        try:
            return kind(float(value)) if kind is int and "e" in value.lower() else kind(value)
        except ValueError:
            raise ConfigError(f"bad value for {key}: {value!r}") from None
    return kind(value)


def settings_for(family, profile="paper", overrides=None):
    """Every setting for ``family``: table values, then desk overrides, then user overrides."""
    if family not in FAMILIES:
        raise ConfigError(f"unknown model family {family!r}; choose from {', '.join(FAMILIES)}")
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {', '.join(PROFILES)}")
    out = {"family": family, "seed": 0}
    out.update(PAPER[family])
    if profile == "desk":
        out.update(DESK[family])
    for key, value in (overrides or {}).items():
        value = coerce(key, value)
        if key not in out:
            raise ConfigError(f"config key {key!r} does not apply to family {family}")
        out[key] = value
    return out


def format_settings(settings):
    return "".join(f"{k}={settings[k]}\n" for k in sorted(settings))


def parse_settings(text):
    """Inverse of ``format_settings``; blank lines and ``#`` comments are skipped."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        out[key] = coerce(key, value)
    return out


def train_config(settings):
    return TrainConfig(**{k: settings[k] for k in TrainConfig.__dataclass_fields__ if k in settings})


def layer_config(settings):
    return LayerConfig(**{k: settings[k] for k in LayerConfig.__dataclass_fields__})


def recurrent_config(settings):
    return RecurrentConfig(**{k: settings[k] for k in RecurrentConfig.__dataclass_fields__})
