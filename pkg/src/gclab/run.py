"""Run driver: builds a TrainState from a config, executes training steps,
appends one JSONL metric record per evaluation, and writes the final
checkpoint.

Exit codes: 0 success, 2 config error, 3 numerical failure (NaN guard).
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .config import RunConfig
from .data import PairDataset, gen_synthetic
from .encoders import init_encoder
from .errors import ConfigError, NonFiniteGradientError
from .estimators import EmaState
from .evalmetrics import encode_all, eval_estimation_error, eval_gcl, eval_retrieval
from .npn import init_npn
from .numerics import Rng
from .objective import GclConfig
from .trainers import STEP_FNS, TrainState, make_optimizer

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def load_run_dataset(cfg: RunConfig) -> PairDataset:
    if cfg.data_path:
        return ckpt.load_dataset(cfg.data_path)
    return gen_synthetic(cfg.synthetic_spec())


def init_state(cfg: RunConfig, data: PairDataset) -> TrainState:
    if cfg.encoder_kind == "direct" and data.n < cfg.batch_size:
        raise ConfigError("batch_size: larger than the dataset")
    if cfg.batch_size > data.n:
        raise ConfigError("batch_size: larger than the dataset")
    rng = Rng(cfg.seed)
    encoder = init_encoder(
        cfg.encoder_kind, rng, dim=cfg.encoder_dim, n=data.n,
        d_raw_image=data.raw_image.shape[1], d_raw_text=data.raw_text.shape[1],
        hidden=cfg.encoder_hidden,
    )
    kappa = np.array([np.log(cfg.tau)])
    ema = None
    npn = None
    npn_opt = None
    if cfg.method == "fastclip":
        ema = EmaState.fresh(data.n, cfg.gamma)
    if cfg.method in ("neuclip", "simultaneous"):
        npn = init_npn(cfg.npn_arch, rng, dim=cfg.encoder_dim,
                       m=cfg.npn_m, hidden=cfg.npn_hidden)
    if cfg.method == "neuclip":
        npn_opt = make_optimizer(cfg.npn_opt_kind, cfg.npn_opt_lr, cfg.npn_opt_wd)
    enc_opt = make_optimizer(cfg.enc_opt_kind, cfg.enc_opt_lr, cfg.enc_opt_wd)
    # the joint trainer drives everything, temperature included, through the
    # one encoder optimizer
    tau_opt = None
    if cfg.method != "simultaneous":
        tau_opt = make_optimizer(cfg.enc_opt_kind, cfg.tau_opt_lr, 0.0)
    return TrainState(
        cfg=cfg, data=data, encoder=encoder, kappa=kappa,
        enc_opt=enc_opt, tau_opt=tau_opt, ema=ema, npn=npn, npn_opt=npn_opt,
        step=0, rng=rng,
    )


def eval_record(state: TrainState, started: float) -> dict:
    cfg = state.cfg
    gcl_cfg = GclConfig(tau=state.tau, tau_min=cfg.tau_min, eps=cfg.eps, rho=cfg.rho)
    E1, E2 = encode_all(state)
    r1_i2t, r1_t2i = eval_retrieval(E1, E2, 1)
    r5_i2t, r5_t2i = eval_retrieval(E1, E2, 5)
    err = eval_estimation_error(state, state.data, gcl_cfg, E1=E1, E2=E2)
    return {
        "step": state.step,
        "samples_seen": state.step * cfg.batch_size,
        "gcl_value_on_eval_pool": eval_gcl(E1, E2, gcl_cfg),
        "recall@1": 0.5 * (r1_i2t + r1_t2i),
        "recall@5": 0.5 * (r5_i2t + r5_t2i),
        "estimation_error": err,
        "tau": state.tau,
        "wall_ms": int((time.monotonic() - started) * 1000),
    }


_RECORD_KEYS = ("step", "samples_seen", "gcl_value_on_eval_pool", "recall@1",
                "recall@5", "estimation_error", "tau", "wall_ms")


def append_record(fh, record: dict) -> None:
    ordered = {k: record[k] for k in _RECORD_KEYS}
    fh.write(json.dumps(ordered, separators=(",", ":")) + "\n")
    fh.flush()


def run(cfg: RunConfig, log_path=None, ckpt_path=None) -> int:
    """Execute the configured run. Returns a process exit code."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = Path(log_path) if log_path else out / "metrics.jsonl"
    ckpt_path = Path(ckpt_path) if ckpt_path else out / "checkpoint.nckp"
    data = load_run_dataset(cfg)
    state = init_state(cfg, data)
    step_fn = STEP_FNS[cfg.method]
    started = time.monotonic()
    try:
        with open(log_path, "w", encoding="utf-8") as fh:
            append_record(fh, eval_record(state, started))
            for t in range(1, cfg.steps + 1):
                idx = state.next_batch()
                step_fn(state, idx)
                if t % cfg.eval_every == 0 or t == cfg.steps:
                    append_record(fh, eval_record(state, started))
    except NonFiniteGradientError as exc:
        print(f"numerical failure at step {state.step}: {exc}")
        return EXIT_NUMERIC
    ckpt.save_state(ckpt_path, state)
    return EXIT_OK


def train_in_memory(cfg: RunConfig, data: PairDataset | None = None):
    """Test/benchmark entry: run without touching the filesystem.

    Returns (state, records).
    """
    data = load_run_dataset(cfg) if data is None else data
    state = init_state(cfg, data)
    step_fn = STEP_FNS[cfg.method]
    started = time.monotonic()
    records = [eval_record(state, started)]
    for t in range(1, cfg.steps + 1):
        idx = state.next_batch()
        step_fn(state, idx)
        if t % cfg.eval_every == 0 or t == cfg.steps:
            records.append(eval_record(state, started))
    return state, records
