"""Log-normalizer predictors.

The default `prototype` architecture scores each anchor against m prototype
columns (summaries of the opposite modality) and pools with a stable
log-mean-exp, mirroring the closed-form optimum of the per-anchor auxiliary:

    a1(i) = log(eps + (1/m) * sum_j' exp((cos(e1_i, W1_j') - e1_i.e2_i)/tau))

An `mlp` kind (two tanh hidden layers on the concatenated pair embedding)
is kept behind the same forward/grad interface for ablations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyBatchError, MissingTargetsError, ZeroNormColumnError
from .numerics import NORM_FLOOR, Rng
from .objective import GclConfig, g_values

ARCHS = ("prototype", "mlp")


@dataclass
class NpnParams:
    arch: str
    blocks: dict[str, np.ndarray]
    # bumped by trainers after in-place updates (parallels EncoderParams)
    version: int = 0

    @property
    def m(self) -> int:
        return self.blocks["W1"].shape[1]


def init_npn(arch: str, rng: Rng, *, dim: int, m: int = 256, hidden: int = 64) -> NpnParams:
    """Random init, entries iid uniform(-0.1, 0.1)."""
    if arch not in ARCHS:
        raise ValueError(f"unknown npn arch {arch!r}")

    def u(shape):
        return rng.uniform(-0.1, 0.1, size=shape)

    if arch == "prototype":
        blocks = {"W1": u((dim, m)), "W2": u((dim, m))}
    else:
        blocks = {}
        for side in ("1", "2"):
            blocks[f"A{side}"] = u((2 * dim, hidden))
            blocks[f"a{side}"] = u((hidden,))
            blocks[f"B{side}"] = u((hidden, hidden))
            blocks[f"b{side}"] = u((hidden,))
            blocks[f"C{side}"] = u((hidden, 1))
            blocks[f"c{side}"] = u((1,))
    return NpnParams(arch=arch, blocks=blocks)


def enforce_column_floor(params: NpnParams) -> None:
    """Keep prototype columns away from zero norm after optimizer steps."""
    if params.arch != "prototype":
        return
    for name in ("W1", "W2"):
        W = params.blocks[name]
        norms = np.sqrt(np.sum(W * W, axis=0))
        weak = norms < NORM_FLOOR
        if np.any(weak):
            W[0, weak] += NORM_FLOOR


def _col_norms(W, name):
    norms = np.sqrt(np.sum(W * W, axis=0))
    if np.any(norms < NORM_FLOOR):
        raise ZeroNormColumnError(f"{name} has a column with norm below {NORM_FLOOR:g}")
    return norms


def _proto_side(W, E_anchor, sii, cfg: GclConfig, name):
    """Stable forward for one side; returns alpha plus the pieces the
    backward passes reuse."""
    m = W.shape[1]
    wn = _col_norms(W, name)
    en = np.sqrt(np.sum(E_anchor * E_anchor, axis=1))
    C = (E_anchor @ W) / (en[:, None] * wn[None, :])
    H = (C - sii[:, None]) / cfg.tau
    # eps enters as one extra logit log(m*eps) so exp never overflows
    M = H.max(axis=1)
    if cfg.eps > 0:
        M = np.maximum(M, math.log(m * cfg.eps))
        body = np.exp(math.log(m * cfg.eps) - M) + np.exp(H - M[:, None]).sum(axis=1)
    else:
        body = np.exp(H - M[:, None]).sum(axis=1)
    alpha = M + np.log(body / m)
    return alpha, C, H, wn, en


def _mlp_side(blocks, side, X):
    A, a = blocks[f"A{side}"], blocks[f"a{side}"]
    B, b = blocks[f"B{side}"], blocks[f"b{side}"]
    C, c = blocks[f"C{side}"], blocks[f"c{side}"]
    H1 = np.tanh(X @ A + a)
    H2 = np.tanh(H1 @ B + b)
    alpha = (H2 @ C + c)[:, 0]
    return alpha, H1, H2


def npn_forward(params: NpnParams, E1_B, E2_B, cfg: GclConfig):
    """Predicted per-anchor log-normalizers (alpha1, alpha2) for the batch."""
    E1_B = np.asarray(E1_B, dtype=np.float64)
    E2_B = np.asarray(E2_B, dtype=np.float64)
    sii = np.sum(E1_B * E2_B, axis=1)
    if params.arch == "prototype":
        a1, *_ = _proto_side(params.blocks["W1"], E1_B, sii, cfg, "W1")
        a2, *_ = _proto_side(params.blocks["W2"], E2_B, sii, cfg, "W2")
        return a1, a2
    X = np.concatenate([E1_B, E2_B], axis=1)
    a1, _, _ = _mlp_side(params.blocks, "1", X)
    a2, _, _ = _mlp_side(params.blocks, "2", X)
    return a1, a2


def _outer_factors(params, E1_B, E2_B, cfg, objective, targets, g1, g2):
    """Per-anchor d(loss)/d(alpha) for the chosen training objective."""
    B = E1_B.shape[0]
    a1, a2 = npn_forward(params, E1_B, E2_B, cfg)
    if objective == "unified":
        if g1 is None or g2 is None:
            g1, g2 = g_values(E1_B, E2_B, cfg)
        f1 = cfg.tau / B * (1.0 - np.exp(-a1) * (cfg.eps + g1))
        f2 = cfg.tau / B * (1.0 - np.exp(-a2) * (cfg.eps + g2))
    elif objective == "separate":
        if targets is None:
            raise MissingTargetsError("separate objective needs log-normalizer targets")
        t1, t2 = targets
        f1 = (a1 - np.asarray(t1, dtype=np.float64)) / B
        f2 = (a2 - np.asarray(t2, dtype=np.float64)) / B
    else:
        raise ValueError(f"unknown npn objective {objective!r}")
    return f1, f2, a1, a2


def _proto_weight_grad(W, E_anchor, sii, cfg, factors, name):
    """dW of sum_i factors_i * alpha_i for one prototype matrix."""
    alpha, C, H, wn, en = _proto_side(W, E_anchor, sii, cfg, name)
    soft = np.exp(H - alpha[:, None]) / W.shape[1]  # d(alpha_i)/d(H_ij)
    G = factors[:, None] * soft / cfg.tau           # through H = (C - sii)/tau
    Ehat = E_anchor / en[:, None]
    What = W / wn[None, :]
    term1 = Ehat.T @ G
    term2 = What * (G * C).sum(axis=0)[None, :]
    return (term1 - term2) / wn[None, :]


def _mlp_weight_grad(blocks, side, X, factors):
    alpha, H1, H2 = _mlp_side(blocks, side, X)
    dout = factors[:, None]  # (B, 1)
    C = blocks[f"C{side}"]
    B = blocks[f"B{side}"]
    gC = H2.T @ dout
    gc = dout.sum(axis=0)
    dH2 = (dout @ C.T) * (1.0 - H2 * H2)
    gB = H1.T @ dH2
    gb = dH2.sum(axis=0)
    dH1 = (dH2 @ B.T) * (1.0 - H1 * H1)
    gA = X.T @ dH1
    ga = dH1.sum(axis=0)
    return {f"A{side}": gA, f"a{side}": ga, f"B{side}": gB,
            f"b{side}": gb, f"C{side}": gC, f"c{side}": gc}


def npn_grad(params: NpnParams, E1_B, E2_B, cfg: GclConfig,
             objective: str = "unified", targets=None,
             g1=None, g2=None) -> dict[str, np.ndarray]:
    """Parameter gradients of the chosen objective, embeddings constant.

    unified: the conjugate-form batch objective; per-anchor outer factor
             tau/B * (1 - exp(-alpha)*(eps+g)).
    separate: (1/2B) * sum (alpha - target)^2 against supplied targets.
    Precomputed batch g values can be passed to avoid recomputation in
    inner loops (they do not depend on the predictor).
    """
    E1_B = np.asarray(E1_B, dtype=np.float64)
    E2_B = np.asarray(E2_B, dtype=np.float64)
    f1, f2, _, _ = _outer_factors(params, E1_B, E2_B, cfg, objective, targets, g1, g2)
    sii = np.sum(E1_B * E2_B, axis=1)
    if params.arch == "prototype":
        return {
            "W1": _proto_weight_grad(params.blocks["W1"], E1_B, sii, cfg, f1, "W1"),
            "W2": _proto_weight_grad(params.blocks["W2"], E2_B, sii, cfg, f2, "W2"),
        }
    X = np.concatenate([E1_B, E2_B], axis=1)
    grads = _mlp_weight_grad(params.blocks, "1", X, f1)
    grads.update(_mlp_weight_grad(params.blocks, "2", X, f2))
    return grads


def alpha_jacobians(params: NpnParams, E1_B, E2_B, cfg: GclConfig) -> dict[str, np.ndarray]:
    """Derivatives of the predicted alphas w.r.t. their anchor embeddings and
    tau, for the flow-through mode of the unified gradient.

    Keys: a{k}_de1, a{k}_de2 of shape (B, d) and a{k}_dtau of shape (B,).
    """
    E1_B = np.asarray(E1_B, dtype=np.float64)
    E2_B = np.asarray(E2_B, dtype=np.float64)
    B = E1_B.shape[0]
    sii = np.sum(E1_B * E2_B, axis=1)

    if params.arch == "mlp":
        X = np.concatenate([E1_B, E2_B], axis=1)
        d = E1_B.shape[1]
        out = {}
        for side in ("1", "2"):
            alpha, H1, H2 = _mlp_side(params.blocks, side, X)
            C = params.blocks[f"C{side}"]
            Bw = params.blocks[f"B{side}"]
            A = params.blocks[f"A{side}"]
            dH2 = C[:, 0][None, :] * (1.0 - H2 * H2)
            dH1 = (dH2 @ Bw.T) * (1.0 - H1 * H1)
            dX = dH1 @ A.T
            out[f"a{side}_de1"] = dX[:, :d]
            out[f"a{side}_de2"] = dX[:, d:]
            out[f"a{side}_dtau"] = np.zeros(B)
        return out

    out = {}
    for side, W_name, Eanch, Eother in (
        ("1", "W1", E1_B, E2_B),
        ("2", "W2", E2_B, E1_B),
    ):
        W = params.blocks[W_name]
        alpha, C, H, wn, en = _proto_side(W, Eanch, sii, cfg, W_name)
        soft = np.exp(H - alpha[:, None]) / W.shape[1]
        wsum = soft.sum(axis=1)  # = 1 - eps*exp(-alpha)
        Ehat = Eanch / en[:, None]
        What = W / wn[None, :]
        # d(cos)/d(e) = (w_hat - C*e_hat)/|e|; the -s_ii term adds -E_other
        dE_anchor = (soft @ What.T - (soft * C).sum(axis=1)[:, None] * Ehat) / en[:, None]
        dE_anchor = (dE_anchor - wsum[:, None] * Eother) / cfg.tau
        dE_other = -(wsum[:, None] * Eanch) / cfg.tau
        dtau = -(soft * H).sum(axis=1) / cfg.tau
        if side == "1":
            out["a1_de1"] = dE_anchor
            out["a1_de2"] = dE_other
            out["a1_dtau"] = dtau
        else:
            out["a2_de2"] = dE_anchor
            out["a2_de1"] = dE_other
            out["a2_dtau"] = dtau
    return out


def npn_restart(params: NpnParams, E1_B, E2_B, rng: Rng) -> NpnParams:
    """Reset prototype columns from the current batch: W1 from text
    embeddings, W2 from image embeddings.  Columns are sampled without
    replacement when m <= B and with replacement otherwise.

    The mlp kind has no prototype columns; it is returned unchanged.
    """
    E1_B = np.asarray(E1_B, dtype=np.float64)
    E2_B = np.asarray(E2_B, dtype=np.float64)
    B = E1_B.shape[0]
    if B == 0:
        raise EmptyBatchError("restart needs a non-empty batch")
    if params.arch != "prototype":
        return params
    m = params.m

    def pick():
        if m <= B:
            return rng.permutation(B)[:m]
        return rng.integers(m, B)

    W1 = E2_B[pick()].T.copy()
    W2 = E1_B[pick()].T.copy()
    return NpnParams(arch="prototype", blocks={"W1": W1, "W2": W2},
                     version=params.version + 1)


def npn_multi_update(params: NpnParams, E1_B, E2_B, cfg: GclConfig,
                     opt_state, T_u: int, objective: str = "unified",
                     targets=None):
    """T_u successive gradient steps on one batch's cached embeddings.

    The batch g values are constants across the inner loop (they do not
    depend on the predictor), so they are computed once.
    """
    from .trainers import optimizer_step  # local import, trainers import us

    if T_u < 1:
        raise ValueError("T_u must be >= 1")
    E1_B = np.asarray(E1_B, dtype=np.float64)
    E2_B = np.asarray(E2_B, dtype=np.float64)
    g1 = g2 = None
    if objective == "unified":
        g1, g2 = g_values(E1_B, E2_B, cfg)
    for _ in range(T_u):
        grads = npn_grad(params, E1_B, E2_B, cfg, objective=objective,
                         targets=targets, g1=g1, g2=g2)
        optimizer_step(opt_state, params.blocks, grads)
        enforce_column_floor(params)
        params.version += 1
    return params, opt_state
