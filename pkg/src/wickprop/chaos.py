"""Multi-index sets, Hermite polynomials, Wick features and the Wick product.

A multi-index ``alpha`` assigns a non-negative power to each (component m,
temporal mode j) pair.  Pairs are 0-based in code and in JSON manifests.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import CapacityError, ParameterError, ShapeError, StructuralError
from .noise import GaussianCoords

MAX_INDEX_SET_SIZE = 100_000
MAX_DEGREE = 20  # exact integer factorials; larger orders are refused
ORDERING = "graded-lex: degree ascending, then flattened exponent vector descending"


def hermite(k: int, x):
    """Probabilists' Hermite polynomial h_k via h_{k+1} = x h_k - k h_{k-1}."""
    if k < 0:
        raise ParameterError(f"Hermite degree must be >= 0, got {k}")
    x = np.asarray(x, dtype=float)
    h_prev, h = np.ones_like(x), x
    if k == 0:
        return h_prev if h_prev.ndim else float(h_prev)
    for n in range(1, k):
        h_prev, h = h, x * h - n * h_prev
    return h if h.ndim else float(h)


def hermite_table(max_degree: int, x) -> np.ndarray:
    """Stack of h_0(x), ..., h_max_degree(x) along a new leading axis."""
    x = np.asarray(x, dtype=float)
    out = np.empty((max_degree + 1,) + x.shape)
    out[0] = 1.0
    if max_degree >= 1:
        out[1] = x
    for n in range(1, max_degree):
        out[n + 1] = x * out[n] - n * out[n - 1]
    return out


@dataclass(frozen=True, order=True)
class MultiIndex:
    """Sparse multi-index: sorted ``((m, j), power)`` pairs with power >= 1."""

    items: tuple = ()

    def __post_init__(self):
        for (_, power) in self.items:
            if power < 1:
                raise StructuralError("sparse multi-index powers must be positive")

    @classmethod
    def from_dict(cls, powers: dict) -> "MultiIndex":
        return cls(tuple(sorted((tuple(k), int(v)) for k, v in powers.items() if v)))

    @classmethod
    def unit(cls, m: int, j: int) -> "MultiIndex":
        return cls((((m, j), 1),))

    @property
    def degree(self) -> int:
        return sum(p for _, p in self.items)

    @property
    def factorial(self) -> int:
        return math.prod(math.factorial(p) for _, p in self.items)

    def as_dict(self) -> dict:
        return dict(self.items)

    def __add__(self, other: "MultiIndex") -> "MultiIndex":
        d = self.as_dict()
        for key, p in other.items:
            d[key] = d.get(key, 0) + p
        return MultiIndex.from_dict(d)

    def __str__(self):
        if not self.items:
            return "0"
        return "+".join(f"{p if p > 1 else ''}e({m},{j})" for (m, j), p in self.items)


def _compositions(total: int, slots: int):
    """Weak compositions of ``total`` into ``slots`` parts, lexicographically descending."""
    if slots == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, slots - 1):
            yield (first,) + rest


class ChaosIndexSet:
    """Ordered set of multi-indices over ``n_components x n_modes`` coordinates.

    Built either as the full total-degree set (``index_set``) or from an
    explicit list (e.g. crossed features).  Exponents are kept densely in
    ``exponents[n, m * n_modes + j]``.
    """

    def __init__(self, n_components: int, n_modes: int, max_order: int, indices, kind: str = "total_degree"):
        self.n_components = int(n_components)
        self.n_modes = int(n_modes)
        self.max_order = int(max_order)
        self.kind = kind
        self.indices = list(indices)
        if self.max_order > MAX_DEGREE or any(a.degree > MAX_DEGREE for a in self.indices):
            raise CapacityError(f"chaos order above {MAX_DEGREE} is not supported")
        width = self.n_components * self.n_modes
        self.exponents = np.zeros((len(self.indices), width), dtype=np.int64)
        for row, alpha in enumerate(self.indices):
            for (m, j), p in alpha.items:
                if not (0 <= m < self.n_components and 0 <= j < self.n_modes):
                    raise StructuralError(f"multi-index {alpha} outside the {n_components}x{n_modes} grid")
                self.exponents[row, m * self.n_modes + j] = p
        self.exponents.setflags(write=False)
        self.position = {tuple(r): i for i, r in enumerate(self.exponents.tolist())}
        if len(self.position) != len(self.indices):
            raise StructuralError("duplicate multi-indices")

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __getitem__(self, i) -> MultiIndex:
        return self.indices[i]

    def __eq__(self, other):
        return (
            isinstance(other, ChaosIndexSet)
            and self.n_components == other.n_components
            and self.n_modes == other.n_modes
            and self.indices == other.indices
        )

    def __repr__(self):
        return (f"ChaosIndexSet(I={self.n_components}, J={self.n_modes}, K={self.max_order}, "
                f"size={len(self)}, kind={self.kind!r})")

    def index_of(self, alpha: MultiIndex) -> int:
        row = np.zeros(self.n_components * self.n_modes, dtype=np.int64)
        for (m, j), p in alpha.items:
            if not (0 <= m < self.n_components and 0 <= j < self.n_modes):
                raise KeyError(str(alpha))
            row[m * self.n_modes + j] = p
        return self.position[tuple(row.tolist())]

    def __contains__(self, alpha: MultiIndex) -> bool:
        try:
            self.index_of(alpha)
        except KeyError:
            return False
        return True

    @cached_property
    def degrees(self) -> np.ndarray:
        return self.exponents.sum(axis=1)

    @cached_property
    def factorials(self) -> np.ndarray:
        return np.array([a.factorial for a in self.indices], dtype=float)

    def degree_slices(self) -> list:
        """Row positions grouped by degree, ascending."""
        return [np.flatnonzero(self.degrees == g) for g in range(int(self.degrees.max(initial=0)) + 1)]

    @cached_property
    def predecessors(self):
        """Unit-subtraction table as parallel arrays ``(alpha, flat_coord, beta, sqrt(alpha_coord))``
        where ``beta = alpha - e_coord``.  Raises when the set is not closed under it."""
        a_idx, coord, b_idx, weight = [], [], [], []
        for i, row in enumerate(self.exponents.tolist()):
            for c, p in enumerate(row):
                if p:
                    lower = list(row)
                    lower[c] -= 1
                    try:
                        b = self.position[tuple(lower)]
                    except KeyError:
                        raise StructuralError(
                            f"index set not closed under unit subtraction: {self.indices[i]} minus coordinate {c}"
                        ) from None
                    a_idx.append(i)
                    coord.append(c)
                    b_idx.append(b)
                    weight.append(math.sqrt(p))
        return (np.array(a_idx, dtype=np.int64), np.array(coord, dtype=np.int64),
                np.array(b_idx, dtype=np.int64), np.array(weight))

    def is_closed(self) -> bool:
        try:
            self.predecessors
        except StructuralError:
            return False
        return True

    @cached_property
    def addition_table(self):
        """Unordered pairs (a <= b) with a + b in the set, and the sparse map onto that sum."""
        order = np.argsort(self.degrees, kind="stable")
        sorted_deg = self.degrees[order]
        rows = self.exponents.tolist()
        a_idx, b_idx, c_idx = [], [], []
        for a, ra in enumerate(rows):
            room = self.max_order - int(self.degrees[a])
            for b in order[: np.searchsorted(sorted_deg, room, side="right")]:
                if b < a:
                    continue
                c = self.position.get(tuple(x + y for x, y in zip(ra, rows[b])))
                if c is not None:
                    a_idx.append(a)
                    b_idx.append(int(b))
                    c_idx.append(c)
        a_idx = np.array(a_idx, dtype=np.int64)
        b_idx = np.array(b_idx, dtype=np.int64)
        c_idx = np.array(c_idx, dtype=np.int64)
        scatter = sp.csr_matrix((np.ones(c_idx.size), (c_idx, np.arange(c_idx.size))), shape=(len(self), c_idx.size))
        return a_idx, b_idx, scatter

    def to_json(self) -> dict:
        return {
            "n_components": self.n_components,
            "n_modes": self.n_modes,
            "max_order": self.max_order,
            "kind": self.kind,
            "ordering": ORDERING,
            "size": len(self),
            "indices": [[[m, j, p] for (m, j), p in a.items] for a in self.indices],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @classmethod
    def from_json(cls, data) -> "ChaosIndexSet":
        if isinstance(data, str):
            data = json.loads(data)
        indices = [MultiIndex.from_dict({(m, j): p for m, j, p in a}) for a in data["indices"]]
        return cls(data["n_components"], data["n_modes"], data["max_order"], indices, data.get("kind", "custom"))


def index_set_size(n_components: int, n_modes: int, max_order: int) -> int:
    return math.comb(n_components * n_modes + max_order, max_order)


def index_set(n_components: int, n_modes: int, max_order: int) -> ChaosIndexSet:
    """All multi-indices on an I x J grid with total degree <= K, graded-lex ordered."""
    if n_components < 1 or n_modes < 1 or max_order < 0:
        raise ParameterError(f"need I, J >= 1 and K >= 0, got ({n_components}, {n_modes}, {max_order})")
    if max_order > MAX_DEGREE:
        raise CapacityError(f"chaos order {max_order} exceeds the supported maximum {MAX_DEGREE}")
    size = index_set_size(n_components, n_modes, max_order)
    if size > MAX_INDEX_SET_SIZE:
        raise CapacityError(
            f"index set cardinality C(I*J + K, K) = C({n_components * n_modes + max_order}, {max_order}) "
            f"= {size} exceeds the limit {MAX_INDEX_SET_SIZE}"
        )
    width = n_components * n_modes
    indices = []
    for degree in range(max_order + 1):
        for comp in _compositions(degree, width):
            indices.append(MultiIndex(tuple(((c // n_modes, c % n_modes), p) for c, p in enumerate(comp) if p)))
    return ChaosIndexSet(n_components, n_modes, max_order, indices)


@dataclass(frozen=True)
class WickFeatures:
    """values[path, position] = xi_alpha for alpha = index_set[position]."""

    values: np.ndarray = field(repr=False)
    index_set: ChaosIndexSet

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    def subset(self, rows) -> "WickFeatures":
        return WickFeatures(self.values[rows], self.index_set)

    def scaled(self, factor: float) -> "WickFeatures":
        """Features with every non-constant column multiplied by ``factor``."""
        v = self.values.copy()
        v[:, self.index_set.degrees > 0] *= factor
        return WickFeatures(v, self.index_set)


def wick_features(coords: GaussianCoords, iset: ChaosIndexSet) -> WickFeatures:
    """Normalized Wick monomials ``prod h_{alpha_mj}(xi_mj) / sqrt(alpha!)`` per path."""
    xi = coords.xi
    if xi.shape[1] < iset.n_components or xi.shape[2] < iset.n_modes:
        raise ShapeError(
            f"coordinates cover {xi.shape[1]}x{xi.shape[2]} (component, mode) pairs; "
            f"index set needs {iset.n_components}x{iset.n_modes}"
        )
    flat = xi[:, : iset.n_components, : iset.n_modes].reshape(xi.shape[0], -1)
    H = hermite_table(max(iset.max_order, 1), flat)
    out = np.ones((xi.shape[0], len(iset)))
    for col, row in enumerate(iset.exponents):
        for c in np.flatnonzero(row):
            out[:, col] *= H[row[c], :, c]
    out /= np.sqrt(iset.factorials)
    return WickFeatures(out, iset)


def crossed_features(features_s: WickFeatures, features_v: WickFeatures, max_order: int | None = None) -> WickFeatures:
    """Join two feature blocks and their cross products.

    Output columns: constant, non-constant S columns, non-constant V columns,
    then products ``xi^S_a xi^V_b`` of non-constant columns (S-major).  With
    ``max_order`` given only products with ``deg a + deg b <= max_order`` are
    kept; ``None`` keeps every pair.  The result is indexed by multi-indices
    on the stacked components (S components first).
    """
    if features_s.n_paths != features_v.n_paths:
        raise ShapeError(f"path counts differ: {features_s.n_paths} vs {features_v.n_paths}")
    s_set, v_set = features_s.index_set, features_v.index_set
    if s_set.n_modes != v_set.n_modes:
        raise ShapeError("crossed blocks must share the temporal mode count")
    offset = s_set.n_components

    def shift(alpha):
        return MultiIndex(tuple(((m + offset, j), p) for (m, j), p in alpha.items))

    s_cols = np.flatnonzero(s_set.degrees > 0)
    v_cols = np.flatnonzero(v_set.degrees > 0)
    pairs = [(a, b) for a in s_cols for b in v_cols
             if max_order is None or s_set.degrees[a] + v_set.degrees[b] <= max_order]
    indices = [MultiIndex()] + [s_set[a] for a in s_cols] + [shift(v_set[b]) for b in v_cols]
    indices += [s_set[a] + shift(v_set[b]) for a, b in pairs]
    n = features_s.n_paths
    blocks = [np.ones((n, 1)), features_s.values[:, s_cols], features_v.values[:, v_cols]]
    if pairs:
        pa = np.array([p[0] for p in pairs])
        pb = np.array([p[1] for p in pairs])
        blocks.append(features_s.values[:, pa] * features_v.values[:, pb])
    top = max((a.degree for a in indices), default=0)
    iset = ChaosIndexSet(offset + v_set.n_components, s_set.n_modes, top, indices, kind="crossed")
    return WickFeatures(np.hstack(blocks), iset)


def identity_element(iset: ChaosIndexSet, trailing_shape=()) -> np.ndarray:
    out = np.zeros((len(iset),) + tuple(trailing_shape))
    out[0] = 1.0
    return out


def _check_coeffs(z, iset):
    z = np.asarray(z, dtype=float)
    if z.shape[0] != len(iset):
        raise ShapeError(f"coefficient array has {z.shape[0]} entries, index set has {len(iset)}")
    return z


def wick_product(coeffs_a, coeffs_b, iset: ChaosIndexSet) -> np.ndarray:
    """Truncated Wick product: ``(a <> b)_g = sum_{alpha + beta = g} a_alpha b_beta``.

    Coefficient arrays carry the index axis first; trailing axes (state
    components, space) are multiplied pointwise.  Pairs whose sum leaves the
    index set are dropped.
    """
    a = _check_coeffs(coeffs_a, iset)
    b = _check_coeffs(coeffs_b, iset)
    if a.shape != b.shape:
        raise ShapeError(f"coefficient shapes differ: {a.shape} vs {b.shape}")
    ia, ib, scatter = iset.addition_table
    # pair (i, j) contributes a_i b_j + a_j b_i; summing it as one term keeps the result exactly symmetric
    prod = a[ia] * b[ib]
    off = ia != ib
    prod[off] += a[ib[off]] * b[ia[off]]
    prod = prod.reshape(ia.size, -1)
    return np.asarray(scatter @ prod).reshape(a.shape)


def wick_power(coeffs, p: int, iset: ChaosIndexSet) -> np.ndarray:
    if p < 0:
        raise ParameterError(f"Wick power must be >= 0, got {p}")
    z = _check_coeffs(coeffs, iset)
    if p == 0:
        return identity_element(iset, z.shape[1:])
    out = z.copy()
    for _ in range(p - 1):
        out = wick_product(out, z, iset)
    return out


def wick_polynomial(coeffs, poly_coeffs, iset: ChaosIndexSet) -> np.ndarray:
    """sum_p a_p z^{<>p} with the successive powers built incrementally."""
    z = _check_coeffs(coeffs, iset)
    out = np.zeros_like(z)
    power = identity_element(iset, z.shape[1:])
    for p, a in enumerate(poly_coeffs):
        if p:
            power = z.copy() if p == 1 else wick_product(power, z, iset)
        if a:
            out += a * power
    return out
