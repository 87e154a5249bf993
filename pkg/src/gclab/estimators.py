"""Normalizer estimators that carry no network: fresh mini-batch values, the
per-sample moving average, its mirror-descent form, tabular auxiliaries, and
the exhaustive oracle, plus the log-space estimation-error metric."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    LengthMismatchError,
    NonPositiveInputError,
    NonPositiveTruthError,
    PoolTooSmallError,
)
from .objective import GclConfig, g_values


@dataclass
class EmaState:
    """Per-sample moving-average normalizer estimates u = eps + g."""
    u1: np.ndarray
    u2: np.ndarray
    gamma: float
    initialized: np.ndarray  # bool per sample

    @classmethod
    def fresh(cls, n: int, gamma: float) -> "EmaState":
        if not 0.0 <= gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {gamma}")
        return cls(
            u1=np.ones(n), u2=np.ones(n), gamma=gamma,
            initialized=np.zeros(n, dtype=bool),
        )


@dataclass
class TabularAlpha:
    """Free per-sample log-normalizer auxiliaries of the conjugate form."""
    alpha1: np.ndarray
    alpha2: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "TabularAlpha":
        return cls(alpha1=np.zeros(n), alpha2=np.zeros(n))


def minibatch_normalizers(E1_B, E2_B, cfg: GclConfig):
    """Fresh per-batch normalizers u_k(i) = eps + g_k(i, batch)."""
    if np.asarray(E1_B).shape[0] < 2:
        raise PoolTooSmallError("mini-batch normalizers need batch size >= 2")
    g1, g2 = g_values(E1_B, E2_B, cfg)
    return cfg.eps + g1, cfg.eps + g2


def ema_update(state: EmaState, indices, g1, g2, cfg: GclConfig) -> EmaState:
    """u <- (1-gamma)*u + gamma*(eps+g) for the touched samples; first touch
    of a sample uses gamma = 1 so no arbitrary start value leaks in."""
    indices = np.asarray(indices, dtype=np.int64)
    c1 = cfg.eps + np.asarray(g1, dtype=np.float64)
    c2 = cfg.eps + np.asarray(g2, dtype=np.float64)
    gamma = state.gamma
    seen = state.initialized[indices]
    fresh = indices[~seen]
    old = indices[seen]
    state.u1[fresh] = c1[~seen]
    state.u2[fresh] = c2[~seen]
    state.u1[old] = (1.0 - gamma) * state.u1[old] + gamma * c1[seen]
    state.u2[old] = (1.0 - gamma) * state.u2[old] + gamma * c2[seen]
    state.initialized[indices] = True
    return state


def mirror_descent_update(y_bar: float, eta: float, c: float) -> float:
    """One proximal step on the inverse normalizer y = exp(-alpha) under the
    Bregman divergence of -log: 1/y' = (1/(1+eta))*(1/y) + (eta/(1+eta))*c.

    Matches the moving average on u = 1/y with gamma = eta/(1+eta).
    """
    if y_bar <= 0 or c <= 0 or eta < 0:
        raise NonPositiveInputError(f"need y_bar, c > 0 and eta >= 0, got {y_bar}, {c}, {eta}")
    inv = (1.0 / (1.0 + eta)) * (1.0 / y_bar) + (eta / (1.0 + eta)) * c
    return 1.0 / inv


def estimation_error(pred_log_norm, true_norm, log_truth: bool = True) -> float:
    """Mean squared error between predicted log-normalizers and the truth.

    Default compares in log space on both sides; log_truth=False compares the
    prediction against the raw normalizer instead.
    """
    pred = np.asarray(pred_log_norm, dtype=np.float64)
    true = np.asarray(true_norm, dtype=np.float64)
    if pred.shape != true.shape:
        raise LengthMismatchError(f"{pred.shape} vs {true.shape}")
    if np.any(true <= 0):
        raise NonPositiveTruthError("true normalizers must be positive")
    target = np.log(true) if log_truth else true
    return float(np.mean((pred - target) ** 2))


def oracle_normalizers(E1, E2, cfg: GclConfig):
    """Exact u_k(i) = eps + g_k(i, full dataset) by exhaustive summation."""
    g1, g2 = g_values(E1, E2, cfg)
    return cfg.eps + g1, cfg.eps + g2
