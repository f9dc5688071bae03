"""Loss terms of the composite objective.

All functions take torch tensors and stay differentiable; a
:class:`PassBundle` holds the per-pass quantities of one episode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import torch
import torch.nn.functional as F

from .errors import ConfigError, TrainingError

@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.01  # variance
    beta: float = 1.0  # triplet
    lam: float = 5.0  # reconstruction
    margin: float = 1.5
    n_passes: int = 4

    def __post_init__(self):
        for name in ("alpha", "beta", "lam"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss weight {name} must be >= 0")
        if self.margin <= 0:
            raise ConfigError("triplet margin must be > 0")
        if self.n_passes < 1:
            raise ConfigError("n_passes must be >= 1")


def sq_euclidean(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Squared Euclidean distance over the last axis (broadcasting)."""
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"dimension mismatch {a.shape[-1]} vs {b.shape[-1]}")
    return ((a - b) ** 2).sum(-1)


def compute_prototypes(support: torch.Tensor) -> torch.Tensor:
    """(..., N, K, D) support embeddings -> (..., N, D) class means."""
    if support.shape[-2] < 1:
        raise ValueError("every class needs at least one support embedding")
    return support.mean(-2)


@dataclass
class PassBundle:
    """Per-pass quantities for one episode.

    ``query_embeddings`` (n, Q, D), ``prototypes`` (n, N, D), ``labels`` (Q,)
    holding episode-local class positions. Distances and softmax
    probabilities are derived on construction.
    """

    query_embeddings: torch.Tensor
    prototypes: torch.Tensor
    labels: torch.Tensor

    def __post_init__(self):
        n, q, _ = self.query_embeddings.shape
        if self.prototypes.shape[0] != n or self.labels.shape != (q,):
            raise ValueError("inconsistent pass bundle shapes")
        self.distances = sq_euclidean(self.query_embeddings[:, :, None, :], self.prototypes[:, None, :, :])
        if not torch.isfinite(self.distances).all():
            raise TrainingError("non-finite query-prototype distance")
        self.log_probs = F.log_softmax(-self.distances, dim=-1)
        self.probabilities = self.log_probs.exp()

    @property
    def n_passes(self) -> int:
        return self.query_embeddings.shape[0]

    @property
    def n_way(self) -> int:
        return self.prototypes.shape[1]

    @property
    def true_class_probs(self) -> torch.Tensor:
        """p_{i,k}^{(j)}, shape (n, Q)."""
        idx = self.labels.view(1, -1, 1).expand(self.n_passes, -1, 1)
        return self.probabilities.gather(-1, idx).squeeze(-1)

    @property
    def mean_true_class_probs(self) -> torch.Tensor:
        return self.true_class_probs.mean(0)

    def mean_probabilities(self) -> torch.Tensor:
        """Pass-averaged class probabilities (Q, N).

        Values are sorted along the pass axis before summation, so the
        result is bit-identical under any reordering of passes.
        """
        return torch.sort(self.probabilities, dim=0).values.mean(0)

    def detach(self) -> "PassBundle":
        return PassBundle(self.query_embeddings.detach(), self.prototypes.detach(), self.labels)


def make_bundle(support: torch.Tensor, queries: torch.Tensor, labels: torch.Tensor) -> PassBundle:
    """Build a bundle from support (n, N, K, D) and query (n, Q, D) embeddings."""
    return PassBundle(queries, compute_prototypes(support), labels)


def proto_loss(bundle: PassBundle) -> torch.Tensor:
    """Negative log-probability of the true class, mean over queries then passes."""
    idx = bundle.labels.view(1, -1, 1).expand(bundle.n_passes, -1, 1)
    nll = -bundle.log_probs.gather(-1, idx).squeeze(-1)
    return nll.mean()


def hard_negative_distances(bundle: PassBundle) -> torch.Tensor:
    """Distance to the closest incorrect prototype, shape (n, Q)."""
    own = F.one_hot(bundle.labels, bundle.n_way).bool().unsqueeze(0)
    return bundle.distances.masked_fill(own, math.inf).min(-1).values


def triplet_loss(bundle: PassBundle, margin: float) -> torch.Tensor:
    """Hinge ``max(0, m + d_pos - d_hardneg)`` averaged over queries and passes."""
    if bundle.n_way < 2:
        raise ValueError("triplet loss needs at least two classes")
    idx = bundle.labels.view(1, -1, 1).expand(bundle.n_passes, -1, 1)
    d_pos = bundle.distances.gather(-1, idx).squeeze(-1)
    return F.relu(margin + d_pos - hard_negative_distances(bundle)).mean()


def recon_loss(
    originals: torch.Tensor,
    reconstructions: torch.Tensor,
    masks: torch.Tensor,
    reduction: Literal["mean", "sum"] = "mean",
) -> torch.Tensor:
    """Masked plus global L1 reconstruction error.

    Args:
        originals: (R, H, W, C) clean images.
        reconstructions: (n, R, H, W, C) decoder outputs, one slice per pass.
        masks: (R, H, W) binary masks, 1 = occluded.
        reduction: ``"mean"`` averages |.| over the H*W*C elements of each
            image for both terms; ``"sum"`` uses raw L1 norms per image.

    Per-image values are averaged over the batch and then over passes.
    """
    if reconstructions.ndim == originals.ndim:
        reconstructions = reconstructions.unsqueeze(0)
    if reconstructions.shape[1:] != originals.shape or masks.shape != originals.shape[:3]:
        raise ValueError(
            f"shape mismatch: originals {tuple(originals.shape)}, "
            f"reconstructions {tuple(reconstructions.shape)}, masks {tuple(masks.shape)}"
        )
    err = (originals.unsqueeze(0) - reconstructions).abs()
    masked = err * masks.to(err.dtype).unsqueeze(0).unsqueeze(-1)
    dims = (2, 3, 4)
    if reduction == "mean":
        per_image = masked.mean(dims) + err.mean(dims)
    elif reduction == "sum":
        per_image = masked.sum(dims) + err.sum(dims)
    else:
        raise ConfigError(f"unknown recon reduction {reduction!r}")
    return per_image.mean()


def _safe_sqrt(x: torch.Tensor) -> torch.Tensor:
    # zero gradient where x == 0 instead of inf * 0 = nan
    positive = x > 0
    return torch.where(positive, torch.sqrt(torch.where(positive, x, torch.ones_like(x))), torch.zeros_like(x))


def variance_loss(bundle: PassBundle) -> torch.Tensor:
    """Sum over queries of the population std of the true-class probability across passes."""
    p = bundle.true_class_probs
    n = p.shape[0]
    # (1/n) sum_j (p_j - mean)^2 == (1/2n^2) sum_{j,l} (p_j - p_l)^2, exactly 0 for identical passes
    var = ((p[:, None, :] - p[None, :, :]) ** 2).sum((0, 1)) / (2 * n * n)
    return _safe_sqrt(var).sum()


@dataclass(frozen=True)
class LossReport:
    proto: float
    triplet: float
    recon: float
    variance: float
    total: float

    def as_row(self, episode: int) -> list:
        return [episode, self.proto, self.triplet, self.recon, self.variance, self.total]

    def check_identity(self, weights: LossWeights, tol: float = 1e-9) -> bool:
        expect = self.proto + weights.alpha * self.variance + weights.beta * self.triplet + weights.lam * self.recon
        return abs(expect - self.total) <= tol


def weighted_total(proto, variance, triplet, recon, weights: LossWeights):
    """proto + alpha*variance + beta*triplet + lam*recon (works on floats or tensors)."""
    return proto + weights.alpha * variance + weights.beta * triplet + weights.lam * recon


def total_loss(
    proto: float, variance: float, triplet: float, recon: float, weights: LossWeights
) -> LossReport:
    """Combine component values into a :class:`LossReport`.

    The total is recomputed in double precision from the reported
    components, so the weighted-sum identity holds to rounding error.
    """
    comps = {"proto": proto, "variance": variance, "triplet": triplet, "recon": recon}
    comps = {k: float(v.detach() if isinstance(v, torch.Tensor) else v) for k, v in comps.items()}
    for name, v in comps.items():
        if not math.isfinite(v):
            raise TrainingError(f"non-finite {name} loss: {v}")
    total = weighted_total(comps["proto"], comps["variance"], comps["triplet"], comps["recon"], weights)
    return LossReport(comps["proto"], comps["triplet"], comps["recon"], comps["variance"], total)

