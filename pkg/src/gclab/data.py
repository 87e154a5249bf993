"""Synthetic paired-view datasets: K latent class centers on the unit sphere,
per-view gaussian jitter, and one fixed random linear map per modality."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidSpecError
from .numerics import Rng


@dataclass(frozen=True)
class SyntheticSpec:
    n: int
    classes: int
    d_latent: int
    d_raw_image: int
    d_raw_text: int
    noise: float
    seed: int

    def validate(self) -> None:
        if self.n < 1 or self.classes < 1 or self.classes > self.n:
            raise InvalidSpecError(f"need 1 <= classes <= n, got {self.classes}, {self.n}")
        if min(self.d_latent, self.d_raw_image, self.d_raw_text) < 1:
            raise InvalidSpecError("all dimensions must be >= 1")
        if self.noise < 0:
            raise InvalidSpecError("noise must be >= 0")
        if self.seed < 0:
            raise InvalidSpecError("seed must be >= 0")


@dataclass
class PairDataset:
    raw_image: np.ndarray  # (n, d_raw_image)
    raw_text: np.ndarray   # (n, d_raw_text)
    labels: np.ndarray     # (n,) int64 class ids
    # latent points kept only on freshly generated data (not serialized)
    latent_image: np.ndarray | None = None
    latent_text: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.raw_image.shape[0]


def gen_synthetic(spec: SyntheticSpec) -> PairDataset:
    """Deterministic dataset from the spec seed.

    Labels are balanced (round-robin over classes, then shuffled); each view's
    latent point is its class center plus independent gaussian noise; raw
    views apply a fixed random linear map per modality.
    """
    spec.validate()
    rng = Rng(spec.seed)
    centers = rng.normal(size=(spec.classes, spec.d_latent))
    centers /= np.sqrt(np.sum(centers * centers, axis=1))[:, None]
    labels = (np.arange(spec.n, dtype=np.int64) % spec.classes)[rng.permutation(spec.n)]
    lat1 = centers[labels] + spec.noise * rng.normal(size=(spec.n, spec.d_latent))
    lat2 = centers[labels] + spec.noise * rng.normal(size=(spec.n, spec.d_latent))
    scale = 1.0 / np.sqrt(spec.d_latent)
    map_img = scale * rng.normal(size=(spec.d_latent, spec.d_raw_image))
    map_txt = scale * rng.normal(size=(spec.d_latent, spec.d_raw_text))
    return PairDataset(
        raw_image=lat1 @ map_img,
        raw_text=lat2 @ map_txt,
        labels=labels,
        latent_image=lat1,
        latent_text=lat2,
    )
