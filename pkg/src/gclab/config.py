"""Flat `key = value` run configuration with hard validation.

Unknown keys are errors on purpose: a typo in a hyperparameter name must
never silently fall back to a default.  `#` starts a comment; blank lines are
ignored.  The full key table lives in the README.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .data import SyntheticSpec
from .errors import ConfigError

METHODS = ("minibatch", "fastclip", "neuclip", "simultaneous")

_BOOL = {"true": True, "false": False, "1": True, "0": False,
         "yes": True, "no": False}


@dataclass
class RunConfig:
    method: str = "minibatch"
    seed: int = 0
    steps: int = 100
    batch_size: int = 64
    eval_every: int = 50
    out_dir: str = ""

    data_path: str = ""
    data_n: int = 0
    data_classes: int = 16
    data_d_latent: int = 16
    data_d_raw_image: int = 32
    data_d_raw_text: int = 24
    data_noise: float = 0.1
    data_seed: int = 0

    encoder_kind: str = "linear"
    encoder_dim: int = 16
    encoder_hidden: int = 32

    tau: float = 0.07
    tau_min: float = 0.01
    eps: float = 1e-8
    rho: float = 6.5

    gamma: float = 0.8
    gamma_schedule: str = "constant"
    gamma_final: float = 0.2

    npn_m: int = 256
    npn_arch: str = "prototype"
    npn_objective: str = "unified"
    npn_hidden: int = 64
    restart_every: int | None = 500   # None = never restart
    npn_updates: int = 10
    reset_npn_opt_on_restart: bool = True
    flow_through_alpha: bool = False

    enc_opt_kind: str = "adamw"
    enc_opt_lr: float = 1e-3
    enc_opt_wd: float = 0.0
    tau_opt_lr: float = 1.25e-4
    npn_opt_kind: str = "adagrad"
    npn_opt_lr: float = 1.0
    npn_opt_wd: float = 0.0

    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(
            n=self.data_n, classes=self.data_classes, d_latent=self.data_d_latent,
            d_raw_image=self.data_d_raw_image, d_raw_text=self.data_d_raw_text,
            noise=self.data_noise, seed=self.data_seed,
        )

    def validate(self, need_out_dir: bool = True) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"method: unknown value {self.method!r}")
        if self.steps < 0:
            raise ConfigError("steps: must be >= 0")
        if self.batch_size < 2:
            raise ConfigError("batch_size: must be >= 2")
        if self.eval_every < 1:
            raise ConfigError("eval_every: must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed: must be >= 0")
        if need_out_dir and not self.out_dir:
            raise ConfigError("out.dir: required for training runs")
        if not self.data_path and self.data_n < 2:
            raise ConfigError("data.path or a synthetic data.n >= 2 is required")
        if self.encoder_kind not in ("direct", "linear", "mlp1"):
            raise ConfigError(f"encoder.kind: unknown value {self.encoder_kind!r}")
        if self.tau_min <= 0 or self.tau < self.tau_min:
            raise ConfigError("gcl.tau: need tau >= tau_min > 0")
        if self.eps < 0 or self.rho < 0:
            raise ConfigError("gcl.eps and gcl.rho must be >= 0")
        if not 0.0 <= self.gamma <= 1.0 or not 0.0 <= self.gamma_final <= 1.0:
            raise ConfigError("est.gamma: must be in [0, 1]")
        if self.gamma_schedule not in ("constant", "cosine"):
            raise ConfigError(f"est.gamma_schedule: unknown value {self.gamma_schedule!r}")
        if self.npn_arch not in ("prototype", "mlp"):
            raise ConfigError(f"npn.arch: unknown value {self.npn_arch!r}")
        if self.npn_objective not in ("unified", "separate"):
            raise ConfigError(f"npn.objective: unknown value {self.npn_objective!r}")
        if self.npn_m < 1 or self.npn_hidden < 1:
            raise ConfigError("npn.m and npn.hidden must be >= 1")
        if self.restart_every is not None and self.restart_every < 1:
            raise ConfigError("npn.restart_every: must be >= 1 or inf")
        if self.npn_updates < 1:
            raise ConfigError("npn.updates: must be >= 1")
        for key, kind in (("opt.encoder.kind", self.enc_opt_kind),
                          ("opt.npn.kind", self.npn_opt_kind)):
            if kind not in ("adamw", "adagrad", "sgd"):
                raise ConfigError(f"{key}: unknown value {kind!r}")
        for key, lr in (("opt.encoder.lr", self.enc_opt_lr),
                        ("opt.tau.lr", self.tau_opt_lr),
                        ("opt.npn.lr", self.npn_opt_lr)):
            if lr <= 0:
                raise ConfigError(f"{key}: must be > 0")


# published key -> (attribute, parser)
def _parse_restart(text: str):
    if text.lower() in ("inf", "none", "never"):
        return None
    return int(text)


def _parse_bool(text: str):
    try:
        return _BOOL[text.lower()]
    except KeyError:
        raise ValueError(f"not a boolean: {text!r}")


KEYS: dict[str, tuple[str, callable]] = {
    "method": ("method", str),
    "seed": ("seed", int),
    "steps": ("steps", int),
    "batch_size": ("batch_size", int),
    "eval_every": ("eval_every", int),
    "out.dir": ("out_dir", str),
    "data.path": ("data_path", str),
    "data.n": ("data_n", int),
    "data.classes": ("data_classes", int),
    "data.d_latent": ("data_d_latent", int),
    "data.d_raw_image": ("data_d_raw_image", int),
    "data.d_raw_text": ("data_d_raw_text", int),
    "data.noise": ("data_noise", float),
    "data.seed": ("data_seed", int),
    "encoder.kind": ("encoder_kind", str),
    "encoder.dim": ("encoder_dim", int),
    "encoder.hidden": ("encoder_hidden", int),
    "gcl.tau": ("tau", float),
    "gcl.tau_min": ("tau_min", float),
    "gcl.eps": ("eps", float),
    "gcl.rho": ("rho", float),
    "est.gamma": ("gamma", float),
    "est.gamma_schedule": ("gamma_schedule", str),
    "est.gamma_final": ("gamma_final", float),
    "npn.m": ("npn_m", int),
    "npn.arch": ("npn_arch", str),
    "npn.objective": ("npn_objective", str),
    "npn.hidden": ("npn_hidden", int),
    "npn.restart_every": ("restart_every", _parse_restart),
    "npn.updates": ("npn_updates", int),
    "npn.reset_opt_on_restart": ("reset_npn_opt_on_restart", _parse_bool),
    "flow_through_alpha": ("flow_through_alpha", _parse_bool),
    "opt.encoder.kind": ("enc_opt_kind", str),
    "opt.encoder.lr": ("enc_opt_lr", float),
    "opt.encoder.wd": ("enc_opt_wd", float),
    "opt.tau.lr": ("tau_opt_lr", float),
    "opt.npn.kind": ("npn_opt_kind", str),
    "opt.npn.lr": ("npn_opt_lr", float),
    "opt.npn.wd": ("npn_opt_wd", float),
}


def parse_kv_text(text: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, value = body.split("=", 1)
        key = key.strip()
        value = value.strip()
        if key in pairs:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        pairs[key] = value
    return pairs


def config_from_pairs(pairs: dict[str, str], need_out_dir: bool = True) -> RunConfig:
    cfg = RunConfig()
    for key, raw in pairs.items():
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}")
        attr, parse = KEYS[key]
        try:
            setattr(cfg, attr, parse(raw))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{key}: bad value {raw!r} ({exc})") from exc
    cfg.validate(need_out_dir=need_out_dir)
    return cfg


def load_config(path, need_out_dir: bool = True) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_pairs(parse_kv_text(text), need_out_dir=need_out_dir)


def config_overrides(cfg: RunConfig, pairs: dict[str, str]) -> RunConfig:
    """Copy cfg with the given raw key=value overrides applied (sweep)."""
    out = RunConfig(**{f.name: getattr(cfg, f.name) for f in fields(RunConfig)})
    for key, raw in pairs.items():
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}")
        attr, parse = KEYS[key]
        try:
            setattr(out, attr, parse(raw))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{key}: bad value {raw!r} ({exc})") from exc
    out.validate()
    return out
