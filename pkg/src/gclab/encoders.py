"""Small two-tower encoders emitting unit-norm embeddings, with analytic
backward passes so objective gradients can be chained to parameters.

Three kinds:
  direct  per-sample embedding tables, one row per pair and modality; the
          parameter Jacobian is just the normalization projector, which makes
          it the default for isolating objective bugs in tests
  linear  affine map from raw features
  mlp1    one tanh hidden layer (two weight matrices, no biases)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, StaleCacheError, ZeroNormError
from .numerics import NORM_FLOOR, Rng

KINDS = ("direct", "linear", "mlp1")


@dataclass
class EncoderParams:
    kind: str
    blocks: dict[str, np.ndarray]
    # bumped by trainers after in-place updates; guards stale backward caches
    version: int = 0


@dataclass
class EmbeddingBatch:
    indices: np.ndarray
    E1: np.ndarray  # (B, d), unit rows
    E2: np.ndarray
    cache: dict = field(default_factory=dict)


def init_encoder(kind: str, rng: Rng, *, dim: int, n: int | None = None,
                 d_raw_image: int | None = None, d_raw_text: int | None = None,
                 hidden: int | None = None) -> EncoderParams:
    """Fresh parameters, entries iid uniform(-0.1, 0.1) from rng."""
    if kind not in KINDS:
        raise ValueError(f"unknown encoder kind {kind!r}")

    def u(shape):
        return rng.uniform(-0.1, 0.1, size=shape)

    if kind == "direct":
        if n is None:
            raise ValueError("direct encoder needs the dataset size n")
        blocks = {"table1": u((n, dim)), "table2": u((n, dim))}
    elif kind == "linear":
        blocks = {
            "W1": u((d_raw_image, dim)), "b1": u((dim,)),
            "W2": u((d_raw_text, dim)), "b2": u((dim,)),
        }
    else:
        blocks = {
            "A1": u((d_raw_image, hidden)), "B1": u((hidden, dim)),
            "A2": u((d_raw_text, hidden)), "B2": u((hidden, dim)),
        }
    return EncoderParams(kind=kind, blocks=blocks)


def embed_dim(params: EncoderParams) -> int:
    key = {"direct": "table1", "linear": "W1", "mlp1": "B1"}[params.kind]
    return params.blocks[key].shape[1]


def _normalize_rows(V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.sqrt(np.sum(V * V, axis=1))
    if np.any(norms < NORM_FLOOR):
        bad = int(np.argmin(norms))
        raise ZeroNormError(f"pre-normalization row {bad} has norm {norms[bad]:g}")
    return V / norms[:, None], norms


def encode(params: EncoderParams, raw1, raw2, indices) -> EmbeddingBatch:
    """Forward pass. raw1/raw2 are ignored for the `direct` kind."""
    indices = np.asarray(indices, dtype=np.int64)
    b = params.blocks
    if params.kind == "direct":
        n = b["table1"].shape[0]
        if indices.size and (indices.min() < 0 or indices.max() >= n):
            raise DimensionMismatchError("index outside the embedding table")
        V1 = b["table1"][indices].copy()
        V2 = b["table2"][indices].copy()
        cache = {}
    elif params.kind == "linear":
        raw1 = np.asarray(raw1, dtype=np.float64)
        raw2 = np.asarray(raw2, dtype=np.float64)
        if raw1.shape[1] != b["W1"].shape[0] or raw2.shape[1] != b["W2"].shape[0]:
            raise DimensionMismatchError("raw feature width does not match weights")
        V1 = raw1 @ b["W1"] + b["b1"]
        V2 = raw2 @ b["W2"] + b["b2"]
        cache = {"raw1": raw1, "raw2": raw2}
    else:
        raw1 = np.asarray(raw1, dtype=np.float64)
        raw2 = np.asarray(raw2, dtype=np.float64)
        if raw1.shape[1] != b["A1"].shape[0] or raw2.shape[1] != b["A2"].shape[0]:
            raise DimensionMismatchError("raw feature width does not match weights")
        H1 = np.tanh(raw1 @ b["A1"])
        H2 = np.tanh(raw2 @ b["A2"])
        V1 = H1 @ b["B1"]
        V2 = H2 @ b["B2"]
        cache = {"raw1": raw1, "raw2": raw2, "H1": H1, "H2": H2}

    E1, n1 = _normalize_rows(V1)
    E2, n2 = _normalize_rows(V2)
    cache.update({"norms1": n1, "norms2": n2, "version": params.version})
    return EmbeddingBatch(indices=indices, E1=E1, E2=E2, cache=cache)


def _through_projector(E, norms, dE):
    # d/dv of v/|v| applied to dE: (dE - (dE.e)e)/|v|
    radial = np.sum(dE * E, axis=1, keepdims=True)
    return (dE - radial * E) / norms[:, None]


def encode_backward(params: EncoderParams, batch: EmbeddingBatch,
                    dE1, dE2) -> dict[str, np.ndarray]:
    """Chain embedding gradients through normalization and the encoder map.

    Returns one gradient array per parameter block.
    """
    if batch.cache.get("version") != params.version:
        raise StaleCacheError("batch was encoded with a different parameter version")
    dE1 = np.asarray(dE1, dtype=np.float64)
    dE2 = np.asarray(dE2, dtype=np.float64)
    dV1 = _through_projector(batch.E1, batch.cache["norms1"], dE1)
    dV2 = _through_projector(batch.E2, batch.cache["norms2"], dE2)
    b = params.blocks

    if params.kind == "direct":
        g1 = np.zeros_like(b["table1"])
        g2 = np.zeros_like(b["table2"])
        np.add.at(g1, batch.indices, dV1)
        np.add.at(g2, batch.indices, dV2)
        return {"table1": g1, "table2": g2}

    if params.kind == "linear":
        raw1, raw2 = batch.cache["raw1"], batch.cache["raw2"]
        return {
            "W1": raw1.T @ dV1, "b1": dV1.sum(axis=0),
            "W2": raw2.T @ dV2, "b2": dV2.sum(axis=0),
        }

    raw1, raw2 = batch.cache["raw1"], batch.cache["raw2"]
    H1, H2 = batch.cache["H1"], batch.cache["H2"]
    gB1 = H1.T @ dV1
    gB2 = H2.T @ dV2
    dpre1 = (dV1 @ b["B1"].T) * (1.0 - H1 * H1)
    dpre2 = (dV2 @ b["B2"].T) * (1.0 - H2 * H2)
    return {"A1": raw1.T @ dpre1, "B1": gB1, "A2": raw2.T @ dpre2, "B2": gB2}
