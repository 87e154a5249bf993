"""Evaluation passes: retrieval recall, exact loss on the full pool, and the
log-normalizer estimation error of whichever estimator a run carries."""

from __future__ import annotations

import numpy as np

from .encoders import embed_dim, encode
from .estimators import estimation_error, oracle_normalizers
from .npn import npn_forward
from .objective import GclConfig, g_values, gcl_value

_EVAL_BLOCK = 512


def encode_all(state, block: int = _EVAL_BLOCK):
    """Full-dataset embeddings at the current parameters, in fixed-order
    blocks."""
    n = state.data.n
    d = embed_dim(state.encoder)
    E1 = np.empty((n, d))
    E2 = np.empty((n, d))
    for lo in range(0, n, block):
        hi = min(lo + block, n)
        idx = np.arange(lo, hi)
        b = state.data
        raw1 = None if state.encoder.kind == "direct" else b.raw_image[idx]
        raw2 = None if state.encoder.kind == "direct" else b.raw_text[idx]
        eb = encode(state.encoder, raw1, raw2, idx)
        E1[lo:hi] = eb.E1
        E2[lo:hi] = eb.E2
    return E1, E2


def _recall_one_direction(A, B, k, block: int = _EVAL_BLOCK) -> float:
    """Fraction of anchors whose true partner (same row index) ranks in the
    top k by similarity; ties broken in favor of the lower index."""
    n = A.shape[0]
    hits = 0
    for lo in range(0, n, block):
        hi = min(lo + block, n)
        S = A[lo:hi] @ B.T
        rows = np.arange(hi - lo)
        diag = S[rows, np.arange(lo, hi)]
        better = (S > diag[:, None]).sum(axis=1)
        ties = (S == diag[:, None])
        ties_before = ties[:, :].copy()
        # ties at a lower index outrank the true partner
        for r, j in zip(rows, range(lo, hi)):
            ties_before[r, j:] = False
        rank = 1 + better + ties_before.sum(axis=1)
        hits += int((rank <= k).sum())
    return hits / n


def eval_retrieval(E1, E2, k: int):
    """(image->text, text->image) recall@k over aligned rows."""
    E1 = np.asarray(E1, dtype=np.float64)
    E2 = np.asarray(E2, dtype=np.float64)
    return (_recall_one_direction(E1, E2, k), _recall_one_direction(E2, E1, k))


def _eval_partition(n: int, batch_size: int):
    """Deterministic batches for the fresh mini-batch estimator at eval time:
    consecutive chunks; a trailing chunk of one is merged into its
    predecessor so every pool has at least two samples."""
    bounds = list(range(0, n, batch_size)) + [n]
    if len(bounds) >= 3 and bounds[-1] - bounds[-2] < 2:
        bounds.pop(-2)
    return [(bounds[i], bounds[i + 1]) for i in range(len(bounds) - 1)]


def predicted_log_normalizers(state, E1, E2, cfg: GclConfig):
    """The current method's predicted log-normalizers for every sample, plus
    a validity mask (moving-average entries that were never touched do not
    count).

    minibatch:    fresh per-batch values at the current parameters, over a
                  deterministic partition of the dataset
    fastclip:     log of the stored moving-average estimates
    neuclip and simultaneous: predictor outputs over the full data in blocks
    """
    n = E1.shape[0]
    method = state.cfg.method
    if method == "minibatch":
        pred1 = np.empty(n)
        pred2 = np.empty(n)
        for lo, hi in _eval_partition(n, state.cfg.batch_size):
            g1, g2 = g_values(E1[lo:hi], E2[lo:hi], cfg)
            pred1[lo:hi] = np.log(cfg.eps + g1)
            pred2[lo:hi] = np.log(cfg.eps + g2)
        mask = np.ones(n, dtype=bool)
    elif method == "fastclip":
        mask = state.ema.initialized.copy()
        with np.errstate(divide="ignore", invalid="ignore"):
            pred1 = np.log(state.ema.u1)
            pred2 = np.log(state.ema.u2)
    else:
        pred1 = np.empty(n)
        pred2 = np.empty(n)
        for lo in range(0, n, _EVAL_BLOCK):
            hi = min(lo + _EVAL_BLOCK, n)
            a1, a2 = npn_forward(state.npn, E1[lo:hi], E2[lo:hi], cfg)
            pred1[lo:hi] = a1
            pred2[lo:hi] = a2
        mask = np.ones(n, dtype=bool)
    return pred1, pred2, mask


def eval_estimation_error(state, dataset, cfg: GclConfig, E1=None, E2=None):
    """Mean squared log-space error of the method's predicted normalizers
    against the exact oracle, over both modalities.

    Returns None when nothing is initialized yet (fresh moving average).
    """
    if E1 is None or E2 is None:
        E1, E2 = encode_all(state)
    u1, u2 = oracle_normalizers(E1, E2, cfg)
    pred1, pred2, mask = predicted_log_normalizers(state, E1, E2, cfg)
    if not np.any(mask):
        return None
    err1 = estimation_error(pred1[mask], u1[mask])
    err2 = estimation_error(pred2[mask], u2[mask])
    return 0.5 * (err1 + err2)


def eval_gcl(E1, E2, cfg: GclConfig) -> float:
    return gcl_value(E1, E2, cfg).total
