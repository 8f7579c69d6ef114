"""Contrastive alignment of triple embeddings to image embeddings.

Loss for one anchor ``I`` with positive ``t+`` and negatives ``t_j``::

    -log( exp(s(I, t+) * e^tau) / (exp(s(I, t+) * e^tau) + sum_j exp(s(I, t_j) * e^tau)) )

with ``s`` the cosine similarity. Triple-side vectors pass through a linear
:class:`ProjectionHead` before scoring; the head is the only trainable part
and is fitted by plain gradient descent.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import SimilarityError, TrainingDiverged

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ContrastiveBatch:
    anchor: np.ndarray
    positive: np.ndarray
    negatives: tuple[np.ndarray, ...]
    tau: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "anchor", np.asarray(self.anchor, dtype=np.float64))
        object.__setattr__(self, "positive", np.asarray(self.positive, dtype=np.float64))
        object.__setattr__(
            self, "negatives", tuple(np.asarray(n, dtype=np.float64) for n in self.negatives)
        )
        if not self.negatives:
            raise ValueError("a contrastive batch needs at least one negative")
        shapes = {self.positive.shape} | {n.shape for n in self.negatives}
        if len(shapes) != 1 or self.positive.ndim != 1 or self.anchor.ndim != 1:
            raise ValueError("positive and negatives must be 1-D vectors of equal length")

    @property
    def triple_matrix(self) -> np.ndarray:
        """Positive in row 0, negatives after it."""
        return np.vstack((self.positive,) + self.negatives)

    @classmethod
    def from_dict(cls, obj: dict, tau: float = 0.0) -> "ContrastiveBatch":
        return cls(
            anchor=obj["anchor"],
            positive=obj["positive"],
            negatives=tuple(obj["negatives"]),
            tau=float(obj.get("tau", tau)),
        )


@dataclass
class ProjectionHead:
    """Linear map applied to triple-side vectors: ``x @ weights``."""

    weights: np.ndarray

    def __post_init__(self) -> None:
        self.weights = np.array(self.weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError("projection weights must be a 2-D matrix")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("projection weights must be finite")

    @classmethod
    def identity(cls, dim: int) -> "ProjectionHead":
        return cls(np.eye(dim))

    @classmethod
    def random(cls, dim_in: int, dim_out: int, seed: int = 0, scale: float | None = None) -> "ProjectionHead":
        rng = np.random.default_rng(seed)
        scale = 1.0 / math.sqrt(dim_in) if scale is None else scale
        return cls(rng.normal(0.0, scale, size=(dim_in, dim_out)))

    def project(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.weights

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist()}


def _loss_and_grad_arrays(
    anchors: np.ndarray, triples: np.ndarray, tau: np.ndarray, weights: np.ndarray | None
) -> tuple[np.ndarray, np.ndarray | None]:
    """Per-instance losses and the summed gradient w.r.t. ``weights``.

    ``anchors`` is (B, D), ``triples`` is (B, M, Din) with the positive at
    index 0, ``tau`` is (B,).
    """
    proj = triples if weights is None else triples @ weights
    a_norm = np.linalg.norm(anchors, axis=-1)
    p_norm = np.linalg.norm(proj, axis=-1)
    if anchors.shape[-1] != proj.shape[-1]:
        raise SimilarityError(
            f"dimension mismatch: anchor {anchors.shape[-1]} vs triple {proj.shape[-1]}"
        )
    if np.any(a_norm == 0.0) or np.any(p_norm == 0.0):
        raise SimilarityError("undefined similarity: zero vector")
    dots = np.einsum("bd,bmd->bm", anchors, proj)
    sims = dots / (a_norm[:, None] * p_norm)
    scale = np.exp(tau)[:, None]
    logits = sims * scale
    shift = logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(logits - shift).sum(axis=1)) + shift[:, 0]
    losses = log_z - logits[:, 0]
    if weights is None:
        return losses, None

    softmax = np.exp(logits - log_z[:, None])
    d_logits = softmax.copy()
    d_logits[:, 0] -= 1.0
    d_sims = d_logits * scale
    # d cos(a, p) / dp = a / (|a||p|) - cos * p / |p|^2
    d_proj = (
        anchors[:, None, :] / (a_norm[:, None, None] * p_norm[..., None])
        - (sims / p_norm**2)[..., None] * proj
    ) * d_sims[..., None]
    grad = np.einsum("bmi,bmo->io", triples, d_proj)
    return losses, grad


def _as_arrays(batches: Sequence[ContrastiveBatch]):
    anchors = np.stack([b.anchor for b in batches])
    triples = np.stack([b.triple_matrix for b in batches])
    tau = np.array([b.tau for b in batches], dtype=np.float64)
    return anchors, triples, tau


def _grouped(batches: Sequence[ContrastiveBatch]) -> list[list[ContrastiveBatch]]:
    groups: dict[tuple, list[ContrastiveBatch]] = {}
    for b in batches:
        groups.setdefault((b.anchor.shape, len(b.negatives), b.positive.shape), []).append(b)
    return list(groups.values())


def contrastive_loss(batch: ContrastiveBatch, head: ProjectionHead | None = None) -> float:
    """Softmax cross-entropy of the positive among positive + negatives."""
    weights = None if head is None else head.weights
    losses, _ = _loss_and_grad_arrays(*_as_arrays([batch]), weights)
    return float(max(losses[0], 0.0))


def loss_gradient(batch: ContrastiveBatch, head: ProjectionHead) -> np.ndarray:
    """Gradient of :func:`contrastive_loss` w.r.t. ``head.weights``."""
    anchors, triples, tau = _as_arrays([batch])
    _, grad = _loss_and_grad_arrays(anchors, triples, tau, head.weights)
    return grad


def mean_loss_and_gradient(
    dataset: Sequence[ContrastiveBatch], head: ProjectionHead
) -> tuple[float, np.ndarray]:
    total = 0.0
    grad = np.zeros_like(head.weights)
    for group in _grouped(dataset):
        losses, g = _loss_and_grad_arrays(*_as_arrays(group), head.weights)
        total += float(losses.sum())
        grad += g
    n = len(dataset)
    return total / n, grad / n


def train_head(
    dataset: Sequence[ContrastiveBatch],
    steps: int,
    learning_rate: float,
    head: ProjectionHead | None = None,
    on_step: Callable[[int, float], None] | None = None,
) -> tuple[ProjectionHead, list[float]]:
    """Full-batch gradient descent on the mean loss over ``dataset``.

    Returns the trained head and the loss trace; ``trace[i]`` is the mean
    loss after ``i`` updates, so the trace has ``steps + 1`` entries. The
    default head is the identity (triple and anchor dims must agree).
    """
    if not dataset:
        raise ValueError("training needs a non-empty dataset")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if head is None:
        dim_in = dataset[0].positive.size
        if dataset[0].anchor.size != dim_in:
            raise ValueError("identity init needs equal anchor/triple dims; pass a head")
        head = ProjectionHead.identity(dim_in)
    weights = head.weights.copy()
    trace: list[float] = []
    for step in range(steps + 1):
        with np.errstate(all="ignore"):
            loss, grad = mean_loss_and_gradient(dataset, _unchecked(weights))
        if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise TrainingDiverged(step)
        trace.append(loss)
        if on_step is not None:
            on_step(step, loss)
        if step < steps:
            with np.errstate(over="ignore", invalid="ignore"):
                weights = weights - learning_rate * grad
    logger.info("alignment training: loss %.6f -> %.6f over %d steps", trace[0], trace[-1], steps)
    return ProjectionHead(weights), trace


def _unchecked(weights: np.ndarray) -> ProjectionHead:
    head = object.__new__(ProjectionHead)
    head.weights = weights
    return head


# -- synthetic data and I/O -----------------------------------------------------


def make_separable_dataset(
    n: int,
    dim: int = 8,
    n_negatives: int = 3,
    tau: float = math.log(10.0),
    n_clusters: int = 4,
    noise: float = 0.1,
    seed: int = 0,
) -> list[ContrastiveBatch]:
    """Anchors drawn around cluster centres; positives share the anchor's
    cluster, negatives come from the opposite of the anchor's centre.

    Triple-side vectors are the image-side vectors passed through a fixed
    random rotation, so an identity head starts misaligned and a learned head
    can undo the rotation.
    """
    rng = np.random.default_rng(seed)
    centres = rng.normal(size=(n_clusters, dim))
    centres /= np.linalg.norm(centres, axis=1, keepdims=True)
    rotation, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    batches = []
    for _ in range(n):
        k = int(rng.integers(n_clusters))
        anchor = centres[k] + noise * rng.normal(size=dim)
        positive = (centres[k] + noise * rng.normal(size=dim)) @ rotation
        negatives = tuple(
            (-centres[k] + noise * rng.normal(size=dim)) @ rotation for _ in range(n_negatives)
        )
        batches.append(ContrastiveBatch(anchor, positive, negatives, tau))
    return batches


def load_instances(path, tau: float = 0.0) -> list[ContrastiveBatch]:
    batches = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                batches.append(ContrastiveBatch.from_dict(json.loads(line), tau=tau))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad training instance ({exc})") from None
    return batches


def write_loss_trace(path, trace: Sequence[float]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("step,loss\n")
        for step, loss in enumerate(trace):
            fh.write(f"{step},{loss!r}\n")
