"""Permutation-resolution criteria and diarisation losses.

Location-based training (LBT) fixes the output order by ascending speaker
azimuth, so the label permutation is a sort.  Permutation-invariant
training (PIT) minimises over every output/label pairing, either by
enumeration or by a minimum-cost assignment on the per-pair BCE sums.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from .core import ActivityMatrix, FrameGrid, PosteriorMatrix, SSNDError

EPS = 1e-7


class CriteriaError(SSNDError, ValueError):
    stage = "criteria"


@dataclass(frozen=True)
class LabelPermutation:
    """``order[c]`` is the label column placed at output ``c``."""

    order: tuple

    def __post_init__(self):
        order = tuple(int(i) for i in self.order)
        if sorted(order) != list(range(len(order))):
            raise CriteriaError(f"not a permutation: {order}")
        object.__setattr__(self, "order", order)

    def apply(self, labels: np.ndarray) -> np.ndarray:
        return np.asarray(labels)[..., list(self.order)]


@dataclass(frozen=True)
class AttractorSet:
    vectors: np.ndarray  # (C+1) x E; the last row is the stop attractor
    existence_probs: np.ndarray | None = None

    @property
    def n_speakers(self) -> int:
        return self.vectors.shape[0] - 1


def lbt_order(azimuths: Sequence[float]) -> LabelPermutation:
    """Ascending-azimuth order; equal azimuths keep their original order."""
    return LabelPermutation(tuple(np.argsort(np.asarray(azimuths, dtype=float), kind="stable")))


def bce(y, p, eps: float = EPS) -> float:
    y = np.asarray(y, dtype=float)
    p = np.clip(np.asarray(p, dtype=float), eps, 1.0 - eps)
    return float(-np.sum(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def _elementwise_bce(y, p, eps=EPS):
    p = np.clip(np.asarray(p, dtype=float), eps, 1.0 - eps)
    y = np.asarray(y, dtype=float)
    return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))


def _check_shapes(P: PosteriorMatrix, Y: ActivityMatrix):
    if P.values.shape != Y.values.shape:
        raise CriteriaError(f"posterior shape {P.values.shape} != label shape {Y.values.shape}")


def eend_loss_lbt(P: PosteriorMatrix, Y: ActivityMatrix) -> float:
    _check_shapes(P, Y)
    if Y.azimuths is None:
        raise CriteriaError("LBT needs speaker azimuths")
    T, C = Y.values.shape
    labels = lbt_order(Y.azimuths).apply(Y.values)
    return float(_elementwise_bce(labels, P.values).sum() / (T * C))


def pairwise_bce(P: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """``cost[i, j]`` = BCE summed over frames between output i and label j."""
    p = np.clip(np.asarray(P, dtype=float), EPS, 1.0 - EPS)
    y = np.asarray(Y, dtype=float)
    return -(y.T @ np.log(p) + (1.0 - y).T @ np.log1p(-p)).T


def eend_loss_pit(P: PosteriorMatrix, Y: ActivityMatrix, method: str = "hungarian"):
    """Minimum permuted BCE; returns ``(loss, LabelPermutation)``."""
    _check_shapes(P, Y)
    T, C = Y.values.shape
    if C == 0:
        return 0.0, LabelPermutation(())
    if method == "brute":
        if C > 10:
            raise CriteriaError("brute-force PIT is limited to 10 speakers")
        best, best_perm = math.inf, None
        for perm in itertools.permutations(range(C)):
            loss = _elementwise_bce(Y.values[:, perm], P.values).sum()
            if loss < best:
                best, best_perm = loss, perm
        return float(best / (T * C)), LabelPermutation(best_perm)
    if method == "hungarian":
        cost = pairwise_bce(P.values, Y.values)
        assignment, total = hungarian(cost)
        return float(total / (T * C)), LabelPermutation(assignment)
    raise CriteriaError(f"unknown PIT method {method!r}")


def hungarian(cost) -> tuple[tuple, float]:
    """Minimum-cost assignment by shortest augmenting paths, O(n^3).

    Rectangular matrices are allowed: every row of the smaller side is
    matched.  Returns ``(assignment, total)`` where ``assignment[i]`` is
    the column given to row ``i`` (for tall matrices, ``assignment[j]`` is
    the row given to column ``j``).
    """
    a = np.asarray(cost, dtype=float)
    if a.ndim != 2:
        raise CriteriaError("cost must be a matrix")
    if not np.isfinite(a).all():
        raise CriteriaError("costs must be finite")
    if a.shape[0] > a.shape[1]:
        return hungarian(a.T)
    n, m = a.shape
    if n == 0:
        return (), 0.0
    c = a.tolist()
    inf = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (m + 1)
    match = [0] * (m + 1)  # match[j] = row (1-based) assigned to column j
    way = [0] * (m + 1)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = [inf] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = match[j0]
            row = c[i0 - 1]
            ui0 = u[i0]
            delta, j1 = inf, 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta, j1 = minv[j], j
            for j in range(m + 1):
                if used[j]:
                    u[match[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    assignment = [0] * n
    for j in range(1, m + 1):
        if match[j]:
            assignment[match[j] - 1] = j - 1
    total = float(sum(a[i, assignment[i]] for i in range(n)))
    return tuple(assignment), total


def brute_force_assignment(cost) -> tuple[tuple, float]:
    """Exhaustive minimum-cost assignment for square matrices."""
    a = np.asarray(cost, dtype=float)
    n = a.shape[0]
    best, best_perm = math.inf, ()
    rows = np.arange(n)
    for perm in itertools.permutations(range(n)):
        total = a[rows, perm].sum()
        if total < best:
            best, best_perm = total, perm
    return tuple(best_perm), float(best)


def attractor_probs(embeddings, attractors: AttractorSet, grid: FrameGrid | None = None) -> PosteriorMatrix:
    e = np.asarray(embeddings, dtype=float)
    a = np.asarray(attractors.vectors, dtype=float)
    if e.ndim != 2 or a.ndim != 2 or e.shape[1] != a.shape[1]:
        raise CriteriaError(f"embedding dim {e.shape} does not match attractors {a.shape}")
    probs = expit(e @ a[: attractors.n_speakers].T)
    return PosteriorMatrix(grid or FrameGrid(10, None, e.shape[0]), probs)


def eda_loss(q) -> float:
    """Attractor-existence loss: first C targets are 1, the last is 0."""
    q = np.asarray(q, dtype=float)
    if q.ndim != 1 or q.size < 1:
        raise CriteriaError("q must be a non-empty vector")
    labels = np.ones_like(q)
    labels[-1] = 0.0
    return bce(labels, q) / q.size


def total_diar_loss(eend: float, eda: float) -> float:
    return float(eend) + float(eda)
