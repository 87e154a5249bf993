"""Optimizers and the four training algorithms.

All four trainers share one model-update skeleton: a batch forward, a
weighted embedding gradient with per-anchor normalizer weights, a temperature
gradient, encoder backward, optimizer steps, and projection of tau above its
floor.  They differ only in where the weights come from:

  minibatch     fresh batch normalizers (biased backprop baseline)
  fastclip      per-sample moving-average normalizers
  neuclip       predictor outputs after a restart + multi-update inner loop
  simultaneous  predictor outputs, everything updated jointly in one step

tau is optimized in log space (kappa = log tau) and clamped to tau_min after
every step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .encoders import EncoderParams, encode, encode_backward
from .errors import NonFiniteGradientError
from .estimators import EmaState, ema_update
from .npn import (
    NpnParams,
    alpha_jacobians,
    enforce_column_floor,
    npn_forward,
    npn_multi_update,
    npn_restart,
)
from .numerics import Rng
from .objective import GclConfig, g_values, weighted_pair_grad


@dataclass
class OptimizerState:
    kind: str                  # adamw | adagrad | sgd
    lr: float
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    slots: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    # blocks never touched by weight decay (log-temperature, biases would be
    # a modeling choice; only kappa is excluded here)
    no_decay: tuple[str, ...] = ("kappa",)


def make_optimizer(kind: str, lr: float, weight_decay: float = 0.0) -> OptimizerState:
    if kind not in ("adamw", "adagrad", "sgd"):
        raise ValueError(f"unknown optimizer kind {kind!r}")
    eps = 1e-10 if kind == "adagrad" else 1e-8
    return OptimizerState(kind=kind, lr=lr, weight_decay=weight_decay, eps=eps)


def _check_finite(grads: dict[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient in block {name!r}")


def optimizer_step(state: OptimizerState, params: dict[str, np.ndarray],
                   grads: dict[str, np.ndarray]) -> None:
    """Apply one update in place. Dispatches on state.kind."""
    _check_finite(grads)
    if state.kind == "adamw":
        adamw_step(state, params, grads, checked=True)
    elif state.kind == "adagrad":
        adagrad_step(state, params, grads, checked=True)
    else:
        sgd_step(state, params, grads, checked=True)


def adamw_step(state: OptimizerState, params, grads, checked=False) -> OptimizerState:
    """Decoupled-weight-decay Adam with bias correction."""
    if not checked:
        _check_finite(grads)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        p = params[name]
        slot = state.slots.setdefault(
            name, {"m": np.zeros_like(p), "v": np.zeros_like(p)})
        slot["m"] = b1 * slot["m"] + (1.0 - b1) * g
        slot["v"] = b2 * slot["v"] + (1.0 - b2) * g * g
        update = (slot["m"] / bc1) / (np.sqrt(slot["v"] / bc2) + state.eps)
        p -= state.lr * update
        if state.weight_decay and name not in state.no_decay:
            p -= state.lr * state.weight_decay * p
    return state


def adagrad_step(state: OptimizerState, params, grads, checked=False) -> OptimizerState:
    """Diagonal AdaGrad; weight decay (if any) is folded into the gradient."""
    if not checked:
        _check_finite(grads)
    state.t += 1
    for name, g in grads.items():
        p = params[name]
        if state.weight_decay and name not in state.no_decay:
            g = g + state.weight_decay * p
        slot = state.slots.setdefault(name, {"acc": np.zeros_like(p)})
        slot["acc"] = slot["acc"] + g * g
        p -= state.lr * g / (np.sqrt(slot["acc"]) + state.eps)
    return state


def sgd_step(state: OptimizerState, params, grads, checked=False) -> OptimizerState:
    if not checked:
        _check_finite(grads)
    state.t += 1
    for name, g in grads.items():
        p = params[name]
        if state.weight_decay and name not in state.no_decay:
            g = g + state.weight_decay * p
        p -= state.lr * g
    return state


@dataclass
class TrainState:
    cfg: "RunConfig"            # noqa: F821 - harness config, duck-typed here
    data: "PairDataset"         # noqa: F821
    encoder: EncoderParams
    kappa: np.ndarray           # shape (1,); tau = exp(kappa[0])
    enc_opt: OptimizerState
    tau_opt: OptimizerState | None
    ema: EmaState | None = None
    npn: NpnParams | None = None
    npn_opt: OptimizerState | None = None
    step: int = 0
    rng: Rng | None = None
    # epoch sampler state (checkpointed so resumed runs match bitwise)
    perm: np.ndarray | None = None
    perm_pos: int = 0

    @property
    def tau(self) -> float:
        return float(math.exp(self.kappa[0]))

    def gcl(self) -> GclConfig:
        c = self.cfg
        return GclConfig(tau=self.tau, tau_min=c.tau_min, eps=c.eps, rho=c.rho)

    def next_batch(self) -> np.ndarray:
        """Next chunk of the per-epoch shuffled permutation; the tail shorter
        than one batch is dropped and a fresh epoch is shuffled in."""
        n = self.data.n
        B = self.cfg.batch_size
        if self.perm is None or self.perm_pos + B > n:
            self.perm = self.rng.permutation(n)
            self.perm_pos = 0
        idx = self.perm[self.perm_pos:self.perm_pos + B].copy()
        self.perm_pos += B
        return idx


def current_gamma(state: TrainState) -> float:
    c = state.cfg
    if c.gamma_schedule == "constant":
        return c.gamma
    # cosine decay from gamma to gamma_final over the configured horizon
    T = max(1, c.steps)
    frac = min(1.0, state.step / T)
    return c.gamma_final + 0.5 * (c.gamma - c.gamma_final) * (1.0 + math.cos(math.pi * frac))


def _encode_batch(state: TrainState, idx: np.ndarray):
    d = state.data
    raw1 = None if state.encoder.kind == "direct" else d.raw_image[idx]
    raw2 = None if state.encoder.kind == "direct" else d.raw_text[idx]
    return encode(state.encoder, raw1, raw2, idx)


def _apply_model_update(state: TrainState, batch, y1, y2, log_u1, log_u2,
                        tau_style: str, alphas=None, jac=None) -> None:
    """Shared (w, tau) update given per-anchor normalizer weights y = 1/u.

    tau_style 'log-u':   dtau = mean(log u1) + mean(log u2) + 2*rho + chain
    tau_style 'unified': dtau = mean(y1*(eps+g1) + a1) + mean(y2*(eps+g2) + a2)
                                + 2*(rho - 1) + chain
    Both coincide when u = eps + g on the batch.
    """
    cfg = state.gcl()
    dE1, dE2, g1, g2, tau_chain = weighted_pair_grad(batch.E1, batch.E2, cfg, y1, y2)
    if tau_style == "log-u":
        dtau = (float(np.mean(log_u1)) + float(np.mean(log_u2))
                + 2.0 * cfg.rho + tau_chain)
    else:
        a1, a2 = alphas
        dtau = (float(np.mean(y1 * (cfg.eps + g1) + a1))
                + float(np.mean(y2 * (cfg.eps + g2) + a2))
                + 2.0 * (cfg.rho - 1.0) + tau_chain)
    if jac is not None:
        # optional flow through the predictor's embedding/tau dependence
        B = batch.E1.shape[0]
        da1 = cfg.tau / B * (1.0 - y1 * (cfg.eps + g1))
        da2 = cfg.tau / B * (1.0 - y2 * (cfg.eps + g2))
        dE1 = dE1 + da1[:, None] * jac["a1_de1"] + da2[:, None] * jac["a2_de1"]
        dE2 = dE2 + da1[:, None] * jac["a1_de2"] + da2[:, None] * jac["a2_de2"]
        dtau += float(da1 @ jac["a1_dtau"]) + float(da2 @ jac["a2_dtau"])

    enc_grads = encode_backward(state.encoder, batch, dE1, dE2)
    enc_tree = {f"enc.{k}": v for k, v in state.encoder.blocks.items()}
    enc_gtree = {f"enc.{k}": v for k, v in enc_grads.items()}
    optimizer_step(state.enc_opt, enc_tree, enc_gtree)
    # chain rule to kappa = log tau
    optimizer_step(state.tau_opt, {"kappa": state.kappa},
                   {"kappa": np.array([cfg.tau * dtau])})
    _project_tau(state)
    state.encoder.version += 1


def _project_tau(state: TrainState) -> None:
    floor = math.log(state.cfg.tau_min)
    if state.kappa[0] < floor:
        state.kappa[0] = floor


def step_minibatch(state: TrainState, idx) -> TrainState:
    """Backprop on the per-batch loss, i.e. weights from fresh batch
    normalizers u = eps + g(i, batch)."""
    batch = _encode_batch(state, idx)
    cfg = state.gcl()
    g1, g2 = g_values(batch.E1, batch.E2, cfg)
    u1 = cfg.eps + g1
    u2 = cfg.eps + g2
    _apply_model_update(state, batch, 1.0 / u1, 1.0 / u2,
                        np.log(u1), np.log(u2), "log-u")
    state.step += 1
    return state


def step_fastclip(state: TrainState, idx) -> TrainState:
    """Moving-average estimator: refresh u for the touched samples, then the
    same update with weights 1/u."""
    batch = _encode_batch(state, idx)
    cfg = state.gcl()
    g1, g2 = g_values(batch.E1, batch.E2, cfg)
    state.ema.gamma = current_gamma(state)
    ema_update(state.ema, idx, g1, g2, cfg)
    u1 = state.ema.u1[idx]
    u2 = state.ema.u2[idx]
    _apply_model_update(state, batch, 1.0 / u1, 1.0 / u2,
                        np.log(u1), np.log(u2), "log-u")
    state.step += 1
    return state


def step_neuclip(state: TrainState, idx, T_r: int | None = None,
                 T_u: int | None = None) -> TrainState:
    """Alternating update: (maybe) restart the predictor from the batch,
    run T_u inner predictor steps on cached embeddings, then one (w, tau)
    step with the predicted log-normalizers held constant."""
    c = state.cfg
    T_r = c.restart_every if T_r is None else T_r
    T_u = c.npn_updates if T_u is None else T_u
    batch = _encode_batch(state, idx)
    cfg = state.gcl()

    if T_r is not None and state.step % T_r == 0:
        state.npn = npn_restart(state.npn, batch.E1, batch.E2, state.rng)
        if c.reset_npn_opt_on_restart:
            state.npn_opt.slots = {}
            state.npn_opt.t = 0

    targets = None
    if c.npn_objective == "separate":
        g1, g2 = g_values(batch.E1, batch.E2, cfg)
        targets = (np.log(cfg.eps + g1), np.log(cfg.eps + g2))
    npn_multi_update(state.npn, batch.E1, batch.E2, cfg, state.npn_opt, T_u,
                     objective=c.npn_objective, targets=targets)

    a1, a2 = npn_forward(state.npn, batch.E1, batch.E2, cfg)
    jac = None
    if c.flow_through_alpha:
        jac = alpha_jacobians(state.npn, batch.E1, batch.E2, cfg)
    _apply_model_update(state, batch, np.exp(-a1), np.exp(-a2), a1, a2,
                        "unified", alphas=(a1, a2), jac=jac)
    state.step += 1
    return state


def step_simultaneous(state: TrainState, idx) -> TrainState:
    """Joint step: full gradient of the unified objective w.r.t. encoder,
    kappa and predictor at once, through a single optimizer; the predictor's
    dependence on embeddings and tau flows."""
    from .npn import npn_grad  # avoid cycle at import time

    batch = _encode_batch(state, idx)
    cfg = state.gcl()
    a1, a2 = npn_forward(state.npn, batch.E1, batch.E2, cfg)
    y1, y2 = np.exp(-a1), np.exp(-a2)
    dE1, dE2, g1, g2, tau_chain = weighted_pair_grad(batch.E1, batch.E2, cfg, y1, y2)
    dtau = (float(np.mean(y1 * (cfg.eps + g1) + a1))
            + float(np.mean(y2 * (cfg.eps + g2) + a2))
            + 2.0 * (cfg.rho - 1.0) + tau_chain)
    B = batch.E1.shape[0]
    da1 = cfg.tau / B * (1.0 - y1 * (cfg.eps + g1))
    da2 = cfg.tau / B * (1.0 - y2 * (cfg.eps + g2))
    jac = alpha_jacobians(state.npn, batch.E1, batch.E2, cfg)
    dE1 = dE1 + da1[:, None] * jac["a1_de1"] + da2[:, None] * jac["a2_de1"]
    dE2 = dE2 + da1[:, None] * jac["a1_de2"] + da2[:, None] * jac["a2_de2"]
    dtau += float(da1 @ jac["a1_dtau"]) + float(da2 @ jac["a2_dtau"])

    enc_grads = encode_backward(state.encoder, batch, dE1, dE2)
    npn_grads = npn_grad(state.npn, batch.E1, batch.E2, cfg,
                         objective="unified", g1=g1, g2=g2)
    tree = {f"enc.{k}": v for k, v in state.encoder.blocks.items()}
    gtree = {f"enc.{k}": v for k, v in enc_grads.items()}
    tree["kappa"] = state.kappa
    gtree["kappa"] = np.array([cfg.tau * dtau])
    tree.update({f"npn.{k}": v for k, v in state.npn.blocks.items()})
    gtree.update({f"npn.{k}": v for k, v in npn_grads.items()})
    optimizer_step(state.enc_opt, tree, gtree)
    _project_tau(state)
    enforce_column_floor(state.npn)
    state.encoder.version += 1
    state.npn.version += 1
    state.step += 1
    return state


STEP_FNS = {
    "minibatch": step_minibatch,
    "fastclip": step_fastclip,
    "neuclip": step_neuclip,
    "simultaneous": step_simultaneous,
}
