"""Kernel feature maps for linear attention.

Two families live here:

* ``Taylor2Map`` lifts real vectors so that the feature inner product equals
  the second-order Taylor expansion of the softmax exponential,
  ``1 + s + s^2/2`` for ``s = q.k``.
* The ``*Map`` token kernels embed vocabulary elements so that distinct
  elements are (approximately) orthogonal while identical elements have unit
  inner product, up to a tolerance ``epsilon``.  Three realizations are
  provided: an exact data-dependent construction built from a known roster,
  a randomized sign construction, and a normalized exponential-code kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class Taylor2Map:
    """Second-order Taylor feature map.

    Maps ``x`` in R^d to ``concat(1, x, outer(x, x).ravel() / sqrt(2))`` of
    length ``1 + d + d^2``, so that ``phi(q) . phi(k) = 1 + q.k + (q.k)^2/2``
    exactly.  The full d^2 outer-product block is kept (not symmetry-reduced);
    at d=16 the output length is 273.
    """

    kind = "taylor2"

    def __init__(self, input_dim: int):
        if input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        self.input_dim = input_dim
        self.feature_dim = 1 + input_dim + input_dim * input_dim

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.shape[-1] != self.input_dim:
            raise ValueError(f"expected last axis {self.input_dim}, got {x.shape}")
        ones = np.ones(x.shape[:-1] + (1,), dtype=x.dtype)
        outer = (x[..., :, None] * x[..., None, :]) / math.sqrt(2.0)
        return np.concatenate(
            [ones, x, outer.reshape(x.shape[:-1] + (-1,))], axis=-1
        )


def _binary_rows(ids: np.ndarray, width: int) -> np.ndarray:
    """Natural binary encoding of each id as a row of `width` bits (MSB first)."""
    shifts = np.arange(width - 1, -1, -1)
    return ((ids[:, None] >> shifts) & 1).astype(np.float64)


class _TokenMap:
    """Token kernel backed by a precomputed (vocab x feature_dim) table."""

    vocab: int
    feature_dim: int
    _table: np.ndarray

    def __call__(self, ids) -> np.ndarray:
        ids = np.asarray(ids)
        if np.any(ids < 0) or np.any(ids >= self.vocab):
            raise ValueError(f"element outside [0, {self.vocab})")
        return self._table[ids]


class DataDependentMap(_TokenMap):
    """Exactly orthogonal kernel built from a known roster A.

    Roster elements map to one-hot rows over A padded with zeros; elements
    outside A map to their binary encoding in the trailing ceil(log2 c) bits.
    Any pair with at least one member in A has inner product exactly
    delta_xy, so epsilon = 0 for query-vs-roster comparisons.  Pairs entirely
    outside A may overlap in the binary block.
    """

    kind = "ip_data_dependent"

    def __init__(self, roster, vocab: int):
        roster = list(roster)
        if len(set(roster)) != len(roster):
            raise ValueError("roster elements must be distinct")
        if any(a < 0 or a >= vocab for a in roster):
            raise ValueError(f"element outside [0, {vocab})")
        self.roster = roster
        self.vocab = vocab
        bits = max(1, math.ceil(math.log2(vocab)))
        self.feature_dim = len(roster) + bits
        table = np.zeros((vocab, self.feature_dim))
        table[:, len(roster):] = _binary_rows(np.arange(vocab), bits)
        for slot, a in enumerate(roster):
            table[a] = 0.0
            table[a, slot] = 1.0
        self._table = table


class RandomizedMap(_TokenMap):
    """Random sign kernel: each element maps to an independent +-1/sqrt(f) vector.

    Self inner products are exactly 1; cross products concentrate around 0
    with standard deviation 1/sqrt(f).
    """

    kind = "ip_randomized"

    def __init__(self, vocab: int, feature_dim: int, seed: int):
        if feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        self.vocab = vocab
        self.feature_dim = feature_dim
        self.seed = seed
        rng = np.random.default_rng(seed)
        signs = rng.integers(0, 2, size=(vocab, feature_dim)) * 2 - 1
        self._table = signs / math.sqrt(feature_dim)


class ExponentialMap(_TokenMap):
    """Exponential-code kernel, normalized to unit diagonal.

    Each element gets a random +-1 code of length ceil(alpha * ln c); the
    Gram matrix ``exp(<x_i, x_j> - d_code)`` (diagonal exactly 1) is factored
    to produce finite-dimensional features.  ``relative_gap`` reports
    ``exp(d_code) / exp(max cross inner product)``, the margin separating
    matches from non-matches; alpha defaults to 12 so the gap comfortably
    exceeds 100*c at small vocabularies.
    """

    kind = "ip_exponential"

    def __init__(self, vocab: int, seed: int, alpha: float = 12.0):
        if vocab < 2:
            raise ValueError("vocab must be >= 2")
        self.vocab = vocab
        self.seed = seed
        self.alpha = alpha
        self.code_len = max(1, math.ceil(alpha * math.log(vocab)))
        rng = np.random.default_rng(seed)
        codes = rng.integers(0, 2, size=(vocab, self.code_len)) * 2 - 1
        cross = codes @ codes.T
        np.fill_diagonal(cross, -self.code_len)
        if cross.max() >= self.code_len:
            raise ValueError("colliding codes; use a different seed or larger alpha")
        self.codes = codes
        self.relative_gap = math.exp(self.code_len - cross.max())
        gram = np.exp((codes @ codes.T).astype(np.float64) - self.code_len)
        # eigh keeps the factorization stable when the Gram is near-singular
        w, vecs = np.linalg.eigh(gram)
        w = np.clip(w, 0.0, None)
        self._table = vecs * np.sqrt(w)
        self.feature_dim = vocab


def measure_epsilon(fmap, elems) -> float:
    """Max |inner product| over all unordered distinct pairs of `elems`.

    `elems` are vocabulary ids for token kernels, or vectors for Taylor2Map.
    """
    elems = list(elems)
    if len(elems) < 2:
        raise ValueError("need at least two elements")
    feats = np.stack([np.asarray(fmap(e), dtype=np.float64) for e in elems])
    gram = feats @ feats.T
    off = np.abs(gram[~np.eye(len(elems), dtype=bool)])
    return float(off.max())


def cross_roster_epsilon(fmap, roster, others) -> float:
    """Max |inner product| over distinct pairs with at least one member in `roster`.

    This is the tolerance that matters for attention constructions whose value
    rows select only roster positions: inner products among non-roster
    elements never enter those sums.
    """
    roster = list(roster)
    others = [x for x in others if x not in set(roster)]
    r = np.stack([np.asarray(fmap(e), dtype=np.float64) for e in roster])
    eps = 0.0
    gram_rr = r @ r.T
    if len(roster) > 1:
        eps = float(np.abs(gram_rr[~np.eye(len(roster), dtype=bool)]).max())
    if others:
        o = np.stack([np.asarray(fmap(e), dtype=np.float64) for e in others])
        eps = max(eps, float(np.abs(r @ o.T).max()))
    return eps


@dataclass(frozen=True)
class FeatureMapSpec:
    """Descriptive record of a constructed feature map."""

    kind: str
    input_dim: int
    feature_dim: int
    data: dict = field(default_factory=dict)


def describe(fmap) -> FeatureMapSpec:
    """Summarize a feature map object as a FeatureMapSpec record."""
    data: dict = {}
    input_dim = getattr(fmap, "input_dim", 1)
    if isinstance(fmap, DataDependentMap):
        data = {"roster": list(fmap.roster), "vocab": fmap.vocab}
    elif isinstance(fmap, RandomizedMap):
        data = {"vocab": fmap.vocab, "seed": fmap.seed}
    elif isinstance(fmap, ExponentialMap):
        data = {"vocab": fmap.vocab, "seed": fmap.seed, "alpha": fmap.alpha}
    return FeatureMapSpec(fmap.kind, input_dim, fmap.feature_dim, data)
