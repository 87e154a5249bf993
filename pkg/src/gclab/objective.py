"""Exact global contrastive loss, its analytic gradients, the conjugate
reformulation with per-anchor auxiliaries, and the unified surrogate whose
per-anchor weights every estimator plugs into.

Similarities are raw dot products of the given rows (unit-norm by contract),
so embedding gradients are free-coordinate gradients; the normalization
Jacobian lives in the encoder backward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveCError, PoolTooSmallError

# anchor-chunk sizing for full-dataset passes: keep chunk x pool <= ~4M floats
_CHUNK_BUDGET = 1 << 22


@dataclass(frozen=True)
class GclConfig:
    tau: float = 0.07       # temperature
    tau_min: float = 0.01   # lower bound kept by trainer projection
    eps: float = 1e-8       # additive constant inside the log
    rho: float = 0.0        # margin weight on the 2*tau*rho term

    def __post_init__(self):
        if self.tau_min <= 0 or self.tau < self.tau_min:
            raise ValueError(f"need tau >= tau_min > 0, got {self.tau}, {self.tau_min}")
        if self.eps < 0 or self.rho < 0:
            raise ValueError("eps and rho must be non-negative")


@dataclass
class LossReport:
    total: float
    g1: np.ndarray
    g2: np.ndarray
    log_norm1: np.ndarray  # log(eps + g1)
    log_norm2: np.ndarray


def _resolve_sets(n, anchors, pool):
    pool = np.arange(n, dtype=np.int64) if pool is None else np.asarray(pool, dtype=np.int64)
    anchors = pool if anchors is None else np.asarray(anchors, dtype=np.int64)
    if pool.size < 2:
        raise PoolTooSmallError(f"pool has {pool.size} samples, need >= 2")
    pos = np.full(n, -1, dtype=np.int64)
    pos[pool] = np.arange(pool.size)
    selfpos = pos[anchors]
    if np.any(selfpos < 0):
        raise ValueError("anchors must be a subset of the pool")
    return anchors, pool, selfpos


def _chunks(total, pool_size):
    step = max(1, _CHUNK_BUDGET // max(1, pool_size))
    for lo in range(0, total, step):
        yield lo, min(lo + step, total)


def g_values(E1, E2, cfg: GclConfig, anchors=None, pool=None):
    """Per-anchor contrast sums g1(i), g2(i) over the pool, excluding the
    anchor's own pair: g1(i) = mean_{j != i} exp((s_ij - s_ii)/tau)."""
    E1 = np.asarray(E1, dtype=np.float64)
    E2 = np.asarray(E2, dtype=np.float64)
    anchors, pool, selfpos = _resolve_sets(E1.shape[0], anchors, pool)
    A, P = anchors.size, pool.size
    sii = np.sum(E1[anchors] * E2[anchors], axis=1)
    g1 = np.empty(A)
    g2 = np.empty(A)
    E1p, E2p = E1[pool], E2[pool]
    for lo, hi in _chunks(A, P):
        rows = np.arange(hi - lo)
        X = np.exp((E1[anchors[lo:hi]] @ E2p.T - sii[lo:hi, None]) / cfg.tau)
        X[rows, selfpos[lo:hi]] = 0.0
        g1[lo:hi] = X.sum(axis=1) / (P - 1)
        X = np.exp((E2[anchors[lo:hi]] @ E1p.T - sii[lo:hi, None]) / cfg.tau)
        X[rows, selfpos[lo:hi]] = 0.0
        g2[lo:hi] = X.sum(axis=1) / (P - 1)
    return g1, g2


def gcl_value(E1, E2, cfg: GclConfig) -> LossReport:
    """Exact loss over the full pool:
    tau*mean(log(eps+g1)) + tau*mean(log(eps+g2)) + 2*tau*rho."""
    g1, g2 = g_values(E1, E2, cfg)
    ln1 = np.log(cfg.eps + g1)
    ln2 = np.log(cfg.eps + g2)
    total = cfg.tau * (float(np.mean(ln1)) + float(np.mean(ln2))) + 2.0 * cfg.tau * cfg.rho
    return LossReport(total=total, g1=g1, g2=g2, log_norm1=ln1, log_norm2=ln2)


def _weighted_grads(E1, E2, cfg, anchors, pool, selfpos, y1, y2):
    """Embedding gradients of tau*(1/A)*sum_i [y1_i*g1_i + y2_i*g2_i] with the
    weights held constant, plus per-anchor g sums and d(g)/d(tau)."""
    A, P = anchors.size, pool.size
    tau = cfg.tau
    dE1 = np.zeros_like(E1)
    dE2 = np.zeros_like(E2)
    g1 = np.empty(A)
    g2 = np.empty(A)
    gtau1 = np.empty(A)
    gtau2 = np.empty(A)
    sii = np.sum(E1[anchors] * E2[anchors], axis=1)
    E1p, E2p = E1[pool], E2[pool]
    for lo, hi in _chunks(A, P):
        rows = np.arange(hi - lo)
        idx = anchors[lo:hi]

        H = (E1[idx] @ E2p.T - sii[lo:hi, None]) / tau
        W = np.exp(H) / (P - 1)
        W[rows, selfpos[lo:hi]] = 0.0
        g1[lo:hi] = W.sum(axis=1)
        gtau1[lo:hi] = -(W * H).sum(axis=1) / tau
        coef = (y1[lo:hi, None] * W) / A  # d/ds_ij, with the explicit tau cancelled
        dE1[idx] += coef @ E2p
        dE2[pool] += coef.T @ E1[idx]

        H = (E2[idx] @ E1p.T - sii[lo:hi, None]) / tau
        W = np.exp(H) / (P - 1)
        W[rows, selfpos[lo:hi]] = 0.0
        g2[lo:hi] = W.sum(axis=1)
        gtau2[lo:hi] = -(W * H).sum(axis=1) / tau
        coef = (y2[lo:hi, None] * W) / A
        dE2[idx] += coef @ E1p
        dE1[pool] += coef.T @ E2[idx]

    # every term of g1(i), g2(i) carries -s_ii in the exponent
    diag = -(y1 * g1 + y2 * g2) / A
    dE1[anchors] += diag[:, None] * E2[anchors]
    dE2[anchors] += diag[:, None] * E1[anchors]
    return dE1, dE2, g1, g2, gtau1, gtau2


def gcl_grad_exact(E1, E2, cfg: GclConfig):
    """Analytic (dE1, dE2, dtau) of gcl_value; the per-anchor weight is the
    reciprocal normalizer 1/(eps+g)."""
    E1 = np.asarray(E1, dtype=np.float64)
    E2 = np.asarray(E2, dtype=np.float64)
    anchors, pool, selfpos = _resolve_sets(E1.shape[0], None, None)
    g1, g2 = g_values(E1, E2, cfg)
    y1 = 1.0 / (cfg.eps + g1)
    y2 = 1.0 / (cfg.eps + g2)
    dE1, dE2, g1, g2, gtau1, gtau2 = _weighted_grads(E1, E2, cfg, anchors, pool, selfpos, y1, y2)
    dtau = (
        float(np.mean(np.log(cfg.eps + g1))) + float(np.mean(np.log(cfg.eps + g2)))
        + 2.0 * cfg.rho
        + cfg.tau * (float(np.mean(y1 * gtau1)) + float(np.mean(y2 * gtau2)))
    )
    return dE1, dE2, dtau


def conjugate_inner(alpha: float, c: float) -> float:
    """exp(-alpha)*c + alpha - 1; minimized over alpha this recovers log(c)."""
    if c <= 0:
        raise NonPositiveCError(f"c must be positive, got {c}")
    return float(np.exp(-alpha) * c + alpha - 1.0)


def conjugate_argmin(c: float) -> float:
    """The minimizer log(c) of conjugate_inner(., c)."""
    if c <= 0:
        raise NonPositiveCError(f"c must be positive, got {c}")
    return float(np.log(c))


def unified_value(E1, E2, alpha1, alpha2, cfg: GclConfig, anchors=None, pool=None) -> float:
    """Conjugate-form objective with explicit per-anchor auxiliaries:
    tau*mean(exp(-a1)*(eps+g1) + a1) + tau*mean(exp(-a2)*(eps+g2) + a2)
    + 2*tau*(rho - 1).  Equals gcl_value at a_k = log(eps+g_k)."""
    alpha1 = np.asarray(alpha1, dtype=np.float64)
    alpha2 = np.asarray(alpha2, dtype=np.float64)
    g1, g2 = g_values(E1, E2, cfg, anchors=anchors, pool=pool)
    t1 = float(np.mean(np.exp(-alpha1) * (cfg.eps + g1) + alpha1))
    t2 = float(np.mean(np.exp(-alpha2) * (cfg.eps + g2) + alpha2))
    return cfg.tau * (t1 + t2) + 2.0 * cfg.tau * (cfg.rho - 1.0)


def unified_grad(E1, E2, alpha1, alpha2, cfg: GclConfig, anchors=None, pool=None,
                 flow_through_alpha: bool = False, alpha_jacobians=None):
    """(dE1, dE2, dtau, dalpha1, dalpha2) of unified_value.

    With flow_through_alpha=False (default) the auxiliaries are constants for
    the embedding and tau gradients, matching the alternating update order.
    With flow_through_alpha=True the caller supplies `alpha_jacobians` (the
    predictor's derivatives w.r.t. anchor embeddings and tau, see
    npn.alpha_jacobians) and the chain terms are added.
    """
    E1 = np.asarray(E1, dtype=np.float64)
    E2 = np.asarray(E2, dtype=np.float64)
    alpha1 = np.asarray(alpha1, dtype=np.float64)
    alpha2 = np.asarray(alpha2, dtype=np.float64)
    anchors, pool, selfpos = _resolve_sets(E1.shape[0], anchors, pool)
    A = anchors.size
    y1 = np.exp(-alpha1)
    y2 = np.exp(-alpha2)
    dE1, dE2, g1, g2, gtau1, gtau2 = _weighted_grads(E1, E2, cfg, anchors, pool, selfpos, y1, y2)
    dalpha1 = cfg.tau / A * (1.0 - y1 * (cfg.eps + g1))
    dalpha2 = cfg.tau / A * (1.0 - y2 * (cfg.eps + g2))
    dtau = (
        float(np.mean(y1 * (cfg.eps + g1) + alpha1))
        + float(np.mean(y2 * (cfg.eps + g2) + alpha2))
        + 2.0 * (cfg.rho - 1.0)
        + cfg.tau * (float(np.mean(y1 * gtau1)) + float(np.mean(y2 * gtau2)))
    )
    if flow_through_alpha:
        if alpha_jacobians is None:
            raise ValueError("flow_through_alpha=True needs alpha_jacobians")
        J = alpha_jacobians
        dE1[anchors] += dalpha1[:, None] * J["a1_de1"] + dalpha2[:, None] * J["a2_de1"]
        dE2[anchors] += dalpha1[:, None] * J["a1_de2"] + dalpha2[:, None] * J["a2_de2"]
        dtau += float(dalpha1 @ J["a1_dtau"]) + float(dalpha2 @ J["a2_dtau"])
    return dE1, dE2, dtau, dalpha1, dalpha2


def weighted_pair_grad(E1b, E2b, cfg: GclConfig, y1, y2):
    """Batch helper for the trainers: embedding gradients of the surrogate
    tau*(1/B)*sum_i [y1_i*(eps+g1_i) + y2_i*(eps+g2_i)] with constant weights,
    where anchors = pool = the batch.

    Returns (dE1, dE2, g1, g2, tau_chain) with tau_chain the d/dtau part that
    flows through g, i.e. tau * mean(y1*dg1/dtau + y2*dg2/dtau).
    """
    E1b = np.asarray(E1b, dtype=np.float64)
    E2b = np.asarray(E2b, dtype=np.float64)
    y1 = np.asarray(y1, dtype=np.float64)
    y2 = np.asarray(y2, dtype=np.float64)
    anchors, pool, selfpos = _resolve_sets(E1b.shape[0], None, None)
    dE1, dE2, g1, g2, gtau1, gtau2 = _weighted_grads(E1b, E2b, cfg, anchors, pool, selfpos, y1, y2)
    tau_chain = cfg.tau * (float(np.mean(y1 * gtau1)) + float(np.mean(y2 * gtau2)))
    return dE1, dE2, g1, g2, tau_chain
