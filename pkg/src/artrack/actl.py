"""Audio-visual contrastive tracking loss.

Audio expressions and trajectory queries are mapped into a shared unit-norm
embedding space, compared with a temperature-scaled cosine similarity that is
squashed into (0, 1), and scored with a focal binary loss against the
referent labels.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor, as_tensor, parameter


@dataclass
class ACTLParams:
    w_q: Tensor       # (C, C_t): pooled audio -> trajectory embedding width
    b_a: Tensor       # (1, C_t)
    phi: Tensor       # (1, 1) log-temperature
    b_rho: Tensor     # (1, 1) similarity bias
    gamma: float = 2.0

    @classmethod
    def init(cls, channels: int, traj_channels: int, rng: np.random.Generator,
             gamma: float = 2.0) -> "ACTLParams":
        return cls(
            w_q=parameter(rng.standard_normal((channels, traj_channels)) / np.sqrt(channels), "w_q"),
            b_a=parameter(np.zeros((1, traj_channels)), "b_a"),
            phi=parameter(np.zeros((1, 1)), "phi"),
            b_rho=parameter(np.zeros((1, 1)), "b_rho"),
            gamma=gamma,
        )

    def parameters(self) -> list[Tensor]:
        return [getattr(self, f.name) for f in fields(self) if f.type == "Tensor"]

    @property
    def temperature(self) -> float:
        return float(np.exp(self.phi.item()))


@dataclass
class SimilarityMatrix:
    chi: Tensor       # (N trajectories, M expressions), entries in (0, 1)
    logits: Tensor


@dataclass
class ReferenceLabels:
    labels: np.ndarray   # bool (N, M); True marks a referred pair

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=bool)
        if self.labels.ndim != 2:
            raise ValueError(f"labels must be an N x M matrix, got shape {self.labels.shape}")

    @property
    def psi(self) -> int:
        return self.labels.size


def pool_and_normalize(fused_audio: Sequence, queries, params: ACTLParams) -> tuple[Tensor, Tensor]:
    """Return ``(z_a, z_t)``: unit-norm expression rows (M, C_t) and trajectory rows (N, C_t)."""
    if len(fused_audio) < 1:
        raise ValueError("need at least one audio expression")
    queries = as_tensor(queries)
    if queries.ndim != 2 or queries.shape[0] < 1:
        raise ValueError(f"trajectory queries must be (N >= 1, C_t), got {queries.shape}")
    pooled = T.concat([T.mean(as_tensor(f), axis=0, keepdims=True) for f in fused_audio], axis=0)
    z_a = T.l2_normalize(pooled @ params.w_q + params.b_a, axis=1)
    z_t = T.l2_normalize(queries, axis=1)
    return z_a, z_t


def similarity_matrix(z_t, z_a, params: ACTLParams) -> SimilarityMatrix:
    z_t, z_a = as_tensor(z_t), as_tensor(z_a)
    if z_t.shape[1] != z_a.shape[1]:
        raise ValueError(f"embedding widths differ: {z_t.shape[1]} vs {z_a.shape[1]}")
    logits = (z_t @ z_a.T) * T.exp(-params.phi) + params.b_rho
    return SimilarityMatrix(T.sigmoid(logits), logits)


def actl_loss(chi, labels, gamma: float = 2.0) -> Tensor:
    """Focal contrastive loss, averaged over every labelled pair."""
    if isinstance(chi, SimilarityMatrix):
        chi = chi.chi
    chi = as_tensor(chi)
    if not isinstance(labels, ReferenceLabels):
        labels = ReferenceLabels(labels)
    if chi.shape != labels.labels.shape:
        raise ValueError(f"similarity shape {chi.shape} does not match labels {labels.labels.shape}")
    if not np.all((chi.data > 0.0) & (chi.data < 1.0)):
        raise ValueError("similarities must lie strictly inside (0, 1); squash the logits first")
    pos = Tensor(labels.labels.astype(np.float64))
    neg = Tensor((~labels.labels).astype(np.float64))
    one_minus = 1.0 - chi
    pos_terms = T.power(one_minus, gamma) * T.log(chi) * pos
    neg_terms = T.power(chi, gamma) * T.log(one_minus) * neg
    return -T.sum(pos_terms + neg_terms) / labels.psi


def actl_loss_from_logits(logits, labels, gamma: float = 2.0) -> Tensor:
    """:func:`actl_loss` of ``sigmoid(logits)``, computed stably in the logit domain."""
    if isinstance(logits, SimilarityMatrix):
        logits = logits.logits
    logits = as_tensor(logits)
    if not isinstance(labels, ReferenceLabels):
        labels = ReferenceLabels(labels)
    if logits.shape != labels.labels.shape:
        raise ValueError(f"similarity shape {logits.shape} does not match labels {labels.labels.shape}")
    chi = T.sigmoid(logits)
    pos = Tensor(labels.labels.astype(np.float64))
    neg = Tensor((~labels.labels).astype(np.float64))
    pos_terms = T.power(1.0 - chi, gamma) * T.log_sigmoid(logits) * pos
    neg_terms = T.power(chi, gamma) * T.log_sigmoid(-logits) * neg
    return -T.sum(pos_terms + neg_terms) / labels.psi
