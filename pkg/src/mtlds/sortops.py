"""Permutation machinery, the SoftSort relaxation, and ranking losses.

All indices are 0-based.  ``argsort_desc`` defines the canonical descending
order with stable tie-breaking (smaller original index first); everything
else in the package inherits that convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .gradcore import Tensor, fn
from .gradcore.tensor import ShapeMismatchError, as_matrix

# Probability clip applied before every logarithm: the permutation
# cross-entropy is undefined at exact 0/1 and soft probabilities underflow.
PROB_EPS = 1e-12


@dataclass(frozen=True)
class Permutation:
    """A bijection on {0..n-1} stored as the list z with z[i] = index ranked i-th."""

    indices: tuple[int, ...]

    def __post_init__(self) -> None:
        n = len(self.indices)
        if n == 0:
            raise ValueError("empty permutation")
        if sorted(self.indices) != list(range(n)):
            raise ValueError(f"not a bijection on 0..{n - 1}: {self.indices}")

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)


@dataclass(frozen=True)
class PermutationMatrix:
    """One-hot row encoding of a permutation: entries[i, j] = 1 iff j = z[i]."""

    entries: np.ndarray

    @property
    def n(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class URSMatrix:
    """Unimodal row stochastic relaxation of a permutation matrix, on a graph."""

    tensor: Tensor

    @property
    def n(self) -> int:
        return self.tensor.rows

    @property
    def value(self) -> np.ndarray:
        return self.tensor.value


@dataclass(frozen=True)
class PositionWeights:
    """Per-rank penalty weights, strictly decreasing."""

    w: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.w)


def argsort_desc(s: Sequence[float] | np.ndarray) -> Permutation:
    """Descending argsort with stable ties (smaller original index wins)."""
    a = np.asarray(s, dtype=np.float64).reshape(-1)
    if a.size == 0:
        raise ValueError("argsort_desc: empty input")
    if not np.all(np.isfinite(a)):
        raise ValueError("argsort_desc: input contains non-finite values")
    order = np.argsort(-a, kind="stable")
    return Permutation(tuple(int(i) for i in order))


def perm_matrix(z: Permutation) -> PermutationMatrix:
    """One-hot matrix of a permutation; identity permutation gives the identity."""
    n = len(z)
    m = np.zeros((n, n))
    m[np.arange(n), list(z)] = 1.0
    return PermutationMatrix(m)


def soft_sort(s: Tensor, tau: float) -> URSMatrix:
    """Continuous relaxation of the argsort permutation matrix.

    Row-wise softmax of the negative scaled Manhattan distances between the
    descending-sorted scores and the raw scores: row i is the softmax of
    -|sorted(s)[i] - s[j]| / tau over j.  The hard sort inside is a gather by
    the argsort permutation, treated as locally constant, so the result is
    differentiable w.r.t. ``s`` almost everywhere.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if s.cols != 1:
        raise ShapeMismatchError(f"soft_sort expects an (n, 1) score tensor, got {s.shape}")
    n = s.rows
    z = argsort_desc(s.value[:, 0])
    sorted_s = fn.gather_rows(s, z.indices)
    left = fn.broadcast_col(sorted_s, n)   # (i, j) = sorted[i]
    right = fn.broadcast_row(s, n)         # (i, j) = s[j]
    dist = fn.abs_(fn.sub(left, right))
    logits = fn.scale(dist, -1.0 / tau)
    return URSMatrix(fn.softmax_rows(logits))


def is_unimodal_row_stochastic(m, tol: float = 1e-6) -> tuple[bool, str | None]:
    """Check the three URS conditions in order; report the first violation.

    Conditions: non-negativity (entries >= -tol), row affinity (row sums
    within tol of 1), argmax permutation (row-wise argmax, first-wins ties,
    is a bijection).
    """
    if isinstance(m, URSMatrix):
        a = m.value
    elif isinstance(m, Tensor):
        a = m.value
    else:
        a = as_matrix(m)
    if a.shape[0] != a.shape[1]:
        raise ShapeMismatchError(f"URS check needs a square matrix, got {a.shape}")
    if np.any(a < -tol):
        return False, "non-negativity"
    if np.any(np.abs(a.sum(axis=1) - 1.0) > tol):
        return False, "row-affinity"
    argmax = a.argmax(axis=1)
    if len(set(argmax.tolist())) != a.shape[0]:
        return False, "argmax-permutation"
    return True, None


def ndcg_position_weights(n: int) -> PositionWeights:
    """Rank-discount weights w[i] = 1 / log2(i + 2) for 0-based position i."""
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    return PositionWeights(tuple(1.0 / math.log2(i + 2) for i in range(n)))


def sort_loss(
    p_hat: URSMatrix,
    p: PermutationMatrix,
    w: PositionWeights,
    normalize: bool = False,
) -> Tensor:
    """Position-weighted cross-entropy between a URS matrix and a hard permutation.

    -sum_i w[i] * sum_j [P[i,j] log P_hat[i,j] + (1 - P[i,j]) log(1 - P_hat[i,j])],
    with P_hat clipped to [1e-12, 1 - 1e-12] before the logs.  ``normalize``
    divides by the list size (off by default: the raw double sum).
    """
    n = p_hat.n
    if p.n != n or len(w) != n:
        raise ShapeMismatchError(
            f"sort_loss: sizes differ (P_hat {n}, P {p.n}, weights {len(w)})")
    t = p_hat.tensor
    g = t.graph
    p_const = g.constant(p.entries)
    p_comp = g.constant(1.0 - p.entries)
    w_col = g.constant(np.asarray(w.w).reshape(-1, 1))

    clipped = fn.clip(t, PROB_EPS, 1.0 - PROB_EPS)
    comp = fn.clip(fn.sub(g.constant(np.ones((n, n))), t), PROB_EPS, 1.0)
    per_entry = fn.add(
        fn.mul_elem(p_const, fn.log(clipped)),
        fn.mul_elem(p_comp, fn.log(comp)),
    )
    weighted = fn.mul_elem(fn.broadcast_col(w_col, n), per_entry)
    loss = fn.neg(fn.sum_all(weighted))
    if normalize:
        loss = fn.scale(loss, 1.0 / n)
    return loss


def bce_loss(p: Tensor, y: Sequence[float] | np.ndarray) -> Tensor:
    """Mean binary cross-entropy of probabilities ``p`` against binary labels."""
    yv = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    if p.cols != 1 or p.rows != yv.shape[0]:
        raise ShapeMismatchError(f"bce_loss: probabilities {p.shape} vs {yv.shape[0]} labels")
    g = p.graph
    n = p.rows
    y_const = g.constant(yv)
    y_comp = g.constant(1.0 - yv)
    pos = fn.mul_elem(y_const, fn.log(fn.clip(p, PROB_EPS, 1.0)))
    neg_p = fn.clip(fn.sub(g.constant(np.ones((n, 1))), p), PROB_EPS, 1.0)
    neg = fn.mul_elem(y_comp, fn.log(neg_p))
    return fn.scale(fn.neg(fn.sum_all(fn.add(pos, neg))), 1.0 / n)


def ordered_pairs(y: Sequence[float] | np.ndarray) -> list[tuple[int, int]]:
    """Index pairs (i, j) with y[i] > y[j], row-major order."""
    yv = np.asarray(y, dtype=np.float64).reshape(-1)
    return [(i, j) for i in range(yv.size) for j in range(yv.size) if yv[i] > yv[j]]


def ranknet_loss(s: Tensor, y: Sequence[float] | np.ndarray) -> Tensor:
    """Mean pairwise logistic loss log(1 + exp(-(s_i - s_j))) over pairs y_i > y_j.

    Computed as -log(sigmoid(s_i - s_j)); returns a constant 0 when no
    ordered pair exists.
    """
    if s.cols != 1:
        raise ShapeMismatchError(f"ranknet_loss expects an (n, 1) score tensor, got {s.shape}")
    pairs = ordered_pairs(y)
    g = s.graph
    if not pairs:
        return g.constant(0.0)
    hi = fn.gather_rows(s, [i for i, _ in pairs])
    lo = fn.gather_rows(s, [j for _, j in pairs])
    p = fn.sigmoid(fn.sub(hi, lo))
    losses = fn.neg(fn.log(fn.clip(p, PROB_EPS, 1.0)))
    return fn.scale(fn.sum_all(losses), 1.0 / len(pairs))


def listnet_loss(s: Tensor, y: Sequence[float] | np.ndarray) -> Tensor:
    """Top-1 listwise loss: cross-entropy between softmax(y) and softmax(s)."""
    if s.cols != 1:
        raise ShapeMismatchError(f"listnet_loss expects an (n, 1) score tensor, got {s.shape}")
    yv = np.asarray(y, dtype=np.float64).reshape(1, -1)
    if yv.shape[1] != s.rows:
        raise ShapeMismatchError(f"listnet_loss: {s.rows} scores vs {yv.shape[1]} labels")
    g = s.graph
    shifted = np.exp(yv - yv.max())
    target = g.constant(shifted / shifted.sum())
    s_row = fn.broadcast_row(s, 1)
    q = fn.softmax_rows(s_row)
    return fn.neg(fn.sum_all(fn.mul_elem(target, fn.log(fn.clip(q, PROB_EPS, 1.0)))))
