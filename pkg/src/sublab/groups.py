"""Homogeneous Carnot groups in exponential coordinates of the first kind.

A group is described by its stratification ``layer_dims = (d_1, ..., d_r)``
and a sparse table of structure constants ``[X_i, X_j] = sum_k c^k_ij X_k``
in a basis adapted to the stratification. Points of the group and elements
of the Lie algebra share the same coordinates, the group law is the
Baker-Campbell-Dynkin-Hausdorff series truncated at the step, and the
inverse of a point is its negation.

Indices are 0-based throughout, including the ``brackets`` entries of the
JSON format::

    {"name": "heisenberg", "layer_dims": [2, 1], "brackets": [[0, 1, 2, 1.0]]}
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property, lru_cache
from pathlib import Path

import numpy as np

from .exceptions import InvalidInputError, SingularityError

__all__ = [
    "CarnotGroupSpec",
    "HomogeneousNorm",
    "NORM_KINDS",
    "bcdh_product",
    "catalog_names",
    "dilate",
    "dynkin_words",
    "gauge_harmonic_candidate",
    "get_group",
    "group_inverse",
    "homogeneous_norm",
    "left_invariant_frame",
    "load_group",
]

JACOBI_TOL = 1e-12


@dataclass(frozen=True)
class CarnotGroupSpec:
    """Static description of a homogeneous Carnot group.

    Parameters
    ----------
    layer_dims : tuple of int
        Dimensions ``d_1, ..., d_r`` of the layers ``V_1, ..., V_r``.
    brackets : tuple of (i, j, k, c)
        Nonzero structure constants ``[X_i, X_j] = ... + c X_k``. Each
        unordered pair may be given once; antisymmetry fills in ``[X_j, X_i]``.
    name : str
        Label used by the catalog and in reports.
    """

    layer_dims: tuple
    brackets: tuple = ()
    name: str = "custom"

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        object.__setattr__(self, "brackets", _normalize_brackets(self.brackets))
        self._validate()

    # -- derived sizes -------------------------------------------------
    @property
    def step(self) -> int:
        return len(self.layer_dims)

    @property
    def dim(self) -> int:
        """Topological dimension ``N``."""
        return sum(self.layer_dims)

    @property
    def homogeneous_dim(self) -> int:
        """Homogeneous dimension ``Q = sum_i i * d_i``."""
        return sum((i + 1) * d for i, d in enumerate(self.layer_dims))

    @property
    def horizontal_dim(self) -> int:
        return self.layer_dims[0]

    @cached_property
    def weights(self) -> np.ndarray:
        """Homogeneity ``sigma_j`` of each coordinate (1-based layer index)."""
        w = np.repeat(np.arange(1, self.step + 1), self.layer_dims)
        w.setflags(write=False)
        return w

    @cached_property
    def layer_slices(self) -> tuple:
        edges = np.concatenate([[0], np.cumsum(self.layer_dims)])
        return tuple(slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]))

    @cached_property
    def structure_constants(self) -> np.ndarray:
        """Dense antisymmetric tensor ``C[i, j, k] = c^k_ij``."""
        n = self.dim
        c = np.zeros((n, n, n))
        for i, j, k, v in self.brackets:
            c[i, j, k] += v
            c[j, i, k] -= v
        c.setflags(write=False)
        return c

    @cached_property
    def _bracket_arrays(self):
        if not self.brackets:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty, empty, np.zeros(0)
        b = np.array(self.brackets, dtype=float)
        return (b[:, 0].astype(np.int64), b[:, 1].astype(np.int64),
                b[:, 2].astype(np.int64), b[:, 3].copy())

    def bracket(self, a, b):
        """Lie bracket of algebra elements, broadcasting over leading axes."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        shape = np.broadcast_shapes(a.shape, b.shape)
        out = np.zeros(shape)
        for i, j, k, c in self.brackets:
            out[..., k] += c * (a[..., i] * b[..., j] - a[..., j] * b[..., i])
        return out

    # -- validation ----------------------------------------------------
    def _validate(self):
        dims = self.layer_dims
        if not dims or any(d < 1 for d in dims):
            raise InvalidInputError(f"layer dimensions must be >= 1, got {dims}")
        if len(dims) >= 2 and dims[0] < 2:
            raise InvalidInputError("a group of step >= 2 needs d_1 >= 2")
        n = self.dim
        w = self.weights
        for i, j, k, c in self.brackets:
            if not (0 <= i < n and 0 <= j < n and 0 <= k < n):
                raise InvalidInputError(f"bracket index out of range: {(i, j, k)}")
            if not math.isfinite(c):
                raise InvalidInputError("structure constants must be finite")
            if w[k] != w[i] + w[j]:
                raise InvalidInputError(
                    f"[X_{i}, X_{j}] -> X_{k} breaks the grading "
                    f"({w[i]} + {w[j]} != {w[k]})")
        if self.jacobi_defect() > JACOBI_TOL:
            raise InvalidInputError("structure constants violate the Jacobi identity")
        # V_1 must generate every layer: [V_1, V_{i-1}] = V_i.
        c = self.structure_constants
        sl = self.layer_slices
        for i in range(1, self.step):
            block = c[sl[0], sl[i - 1], sl[i]].reshape(-1, dims[i])
            if np.linalg.matrix_rank(block) < dims[i]:
                raise InvalidInputError(f"[V_1, V_{i}] does not span V_{i + 1}")

    def jacobi_defect(self) -> float:
        """Max over basis triples of the Jacobi identity residual."""
        c = self.structure_constants
        # [[X_i, X_j], X_l] summed cyclically
        t = np.einsum("ijm,mlk->ijlk", c, c)
        cyc = t + t.transpose(1, 2, 0, 3) + t.transpose(2, 0, 1, 3)
        return float(np.abs(cyc).max()) if cyc.size else 0.0

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "step": self.step,
            "layer_dims": list(self.layer_dims),
            "brackets": [[i, j, k, c] for i, j, k, c in self.brackets],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CarnotGroupSpec":
        try:
            dims = tuple(doc["layer_dims"])
            brackets = tuple(tuple(b) for b in doc.get("brackets", ()))
        except (KeyError, TypeError) as exc:
            raise InvalidInputError(f"malformed group document: {exc}") from None
        if "step" in doc and int(doc["step"]) != len(dims):
            raise InvalidInputError("'step' disagrees with the length of 'layer_dims'")
        return cls(dims, brackets, doc.get("name", "custom"))


def _normalize_brackets(brackets):
    acc = {}
    for entry in brackets:
        if len(entry) != 4:
            raise InvalidInputError(f"bracket entries are (i, j, k, c), got {entry!r}")
        i, j, k = (int(v) for v in entry[:3])
        c = float(Fraction(entry[3])) if isinstance(entry[3], str) else float(entry[3])
        if i == j:
            if c != 0.0:
                raise InvalidInputError("[X_i, X_i] must vanish")
            continue
        if i > j:
            i, j, c = j, i, -c
        acc[(i, j, k)] = acc.get((i, j, k), 0.0) + c
    return tuple(sorted((i, j, k, c) for (i, j, k), c in acc.items() if c != 0.0))


# -- catalog -------------------------------------------------------------

def _heisenberg():
    return CarnotGroupSpec((2, 1), ((0, 1, 2, 1.0),), "heisenberg")


def _engel():
    return CarnotGroupSpec((2, 1, 1), ((0, 1, 2, 1.0), (0, 2, 3, 1.0)), "engel")


def _free23():
    return CarnotGroupSpec(
        (3, 3), ((0, 1, 3, 1.0), (0, 2, 4, 1.0), (1, 2, 5, 1.0)), "free23")


_CATALOG = {"heisenberg": _heisenberg, "engel": _engel, "free23": _free23}
_EUCLID = re.compile(r"^euclidean(\d*)$")


def catalog_names() -> list:
    return sorted(_CATALOG) + ["euclidean<n>"]


def get_group(name: str) -> CarnotGroupSpec:
    """Look up a registered group; ``euclideanN`` gives the abelian ``R^N``."""
    key = name.strip().lower()
    if key in _CATALOG:
        return _CATALOG[key]()
    m = _EUCLID.match(key)
    if m:
        n = int(m.group(1) or 2)
        if n < 1:
            raise InvalidInputError("euclidean dimension must be >= 1")
        return CarnotGroupSpec((n,), (), f"euclidean{n}")
    raise InvalidInputError(f"unknown group {name!r}; known: {', '.join(catalog_names())}")


def load_group(source) -> CarnotGroupSpec:
    """Catalog name, path to a JSON document, or an already parsed dict."""
    if isinstance(source, CarnotGroupSpec):
        return source
    if isinstance(source, dict):
        return CarnotGroupSpec.from_dict(source)
    path = Path(str(source))
    if path.suffix == ".json" or path.exists():
        with open(path) as fh:
            return CarnotGroupSpec.from_dict(json.load(fh))
    return get_group(str(source))


# -- BCDH series -----------------------------------------------------------

@lru_cache(maxsize=None)
def dynkin_words(degree: int) -> tuple:
    """Words of the Dynkin form of ``log(exp X exp Y)`` up to ``degree``.

    Returns ``(word, coefficient)`` pairs, sorted lexicographically, with
    letters 0 for ``X`` and 1 for ``Y``. The Lie element is
    ``sum coefficient * [...[[w_1, w_2], w_3], ..., w_n]``; the ``1/n``
    Dynkin factor is already folded into ``coefficient``. Words whose bracket
    vanishes identically (``w_1 == w_2``) are dropped.
    """
    if degree < 1:
        raise InvalidInputError("degree must be >= 1")

    def mul(p, q):
        out = {}
        for u, a in p.items():
            for v, b in q.items():
                if len(u) + len(v) <= degree:
                    w = u + v
                    out[w] = out.get(w, 0) + a * b
        return out

    z = {}
    for p in range(degree + 1):
        for q in range(degree + 1 - p):
            if p + q >= 1:
                z[(0,) * p + (1,) * q] = Fraction(1, math.factorial(p) * math.factorial(q))

    log = {}
    power = dict(z)
    for m in range(1, degree + 1):
        sign = Fraction((-1) ** (m - 1), m)
        for w, a in power.items():
            log[w] = log.get(w, 0) + sign * a
        power = mul(power, z)

    words = []
    for w, a in log.items():
        if a == 0 or (len(w) >= 2 and w[0] == w[1]):
            continue
        words.append((w, a / len(w)))
    words.sort()
    return tuple(words)


def _check_points(x, n, what="point"):
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (n,):
        raise InvalidInputError(f"{what} must have trailing dimension {n}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError(f"{what} has non-finite entries")
    return x


def _bch_eval(spec, x, y, words):
    shape = np.broadcast_shapes(x.shape, y.shape)
    out = np.zeros(shape)
    letters = (x, y)
    memo = {}
    for w, coef in words:
        prefix = ()
        val = None
        for letter in w:
            prefix = prefix + (letter,)
            if prefix in memo:
                val = memo[prefix]
                continue
            val = letters[letter] if val is None else spec.bracket(val, letters[letter])
            memo[prefix] = val
        out = out + float(coef) * val
    return out


def bcdh_product(spec: CarnotGroupSpec, x, y) -> np.ndarray:
    """Group law ``x * y`` in exponential coordinates.

    Evaluates the Dynkin series truncated at commutator degree ``spec.step``;
    higher terms vanish by nilpotency. Broadcasts over leading axes.
    """
    x = _check_points(x, spec.dim)
    y = _check_points(y, spec.dim)
    return _bch_eval(spec, x, y, dynkin_words(spec.step))


def group_inverse(x) -> np.ndarray:
    return -np.asarray(x, dtype=float)


def dilate(spec: CarnotGroupSpec, a, x) -> np.ndarray:
    """Anisotropic dilation: coordinate ``j`` is scaled by ``a ** sigma_j``."""
    if not np.isscalar(a) or not a > 0 or not math.isfinite(a):
        raise InvalidInputError(f"dilation factor must be a positive real, got {a!r}")
    x = _check_points(x, spec.dim)
    return x * float(a) ** spec.weights


def left_invariant_frame(spec: CarnotGroupSpec, x) -> np.ndarray:
    """Coordinate expression of the horizontal frame ``X_1, ..., X_{d_1}``.

    Column ``i`` of the returned ``(..., N, d_1)`` array is
    ``d/dt x * exp(t e_i)`` at ``t = 0``, i.e. the part of the group law that
    is linear in its second argument.
    """
    x = _check_points(x, spec.dim)
    linear = tuple((w, c) for w, c in dynkin_words(spec.step) if sum(w) == 1)
    d1 = spec.horizontal_dim
    cols = []
    for i in range(d1):
        e = np.zeros(spec.dim)
        e[i] = 1.0
        cols.append(_bch_eval(spec, x, np.broadcast_to(e, x.shape), linear))
    return np.stack(cols, axis=-1)


# -- homogeneous norms -------------------------------------------------------

NORM_KINDS = ("gauge16", "gaugerho", "layermax")
_GAUGE_COEF = {"gauge16": 16.0, "gaugerho": 1.0}


@dataclass(frozen=True)
class HomogeneousNorm:
    """A homogeneous, symmetric norm on a fixed group.

    ``gauge16`` and ``gaugerho`` are ``(|x_1|^4 + c |x_2|^2)^(1/4)`` with
    ``c = 16`` (the Heisenberg L-gauge) and ``c = 1``; they need step <= 2.
    ``layermax`` is ``max_i |x_i|^(1/i)`` over the layer components and works
    for any step.
    """

    spec: CarnotGroupSpec
    kind: str = "gauge16"
    _coef: float = field(init=False, repr=False, compare=False, default=0.0)

    def __post_init__(self):
        kind = self.kind.lower()
        if kind not in NORM_KINDS:
            raise InvalidInputError(f"unknown norm kind {self.kind!r}; expected one of {NORM_KINDS}")
        if kind in _GAUGE_COEF and self.spec.step > 2:
            raise InvalidInputError(f"{kind} is defined for step <= 2 groups only")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "_coef", _GAUGE_COEF.get(kind, 0.0))

    @property
    def gauge_coefficient(self) -> float:
        return self._coef

    def __call__(self, x) -> np.ndarray:
        x = _check_points(x, self.spec.dim)
        sl = self.spec.layer_slices
        if self.kind == "layermax":
            parts = [np.linalg.norm(x[..., s], axis=-1) ** (1.0 / (i + 1))
                     for i, s in enumerate(sl)]
            return np.max(np.stack(parts, axis=-1), axis=-1)
        h2 = np.sum(x[..., sl[0]] ** 2, axis=-1)
        v2 = np.sum(x[..., sl[1]] ** 2, axis=-1) if len(sl) > 1 else 0.0
        return (h2 * h2 + self._coef * v2) ** 0.25

    def layer_bounds(self, radius: float) -> np.ndarray:
        """Per-coordinate half-widths of the smallest box containing the ball."""
        w = self.spec.weights
        if self.kind == "layermax":
            return float(radius) ** w.astype(float)
        out = np.full(self.spec.dim, float(radius))
        out[w == 2] = radius**2 / math.sqrt(self._coef)
        return out


def homogeneous_norm(norm: HomogeneousNorm, x) -> np.ndarray:
    return norm(x)


def gauge_harmonic_candidate(spec: CarnotGroupSpec, norm: HomogeneousNorm, x) -> np.ndarray:
    """``rho(x) ** (2 - Q)``, annihilated by the sub-Laplacian off the identity when ``rho`` is an L-gauge."""
    if norm.spec != spec:
        raise InvalidInputError("norm is bound to a different group")
    r = norm(x)
    if np.any(r == 0):
        raise SingularityError("rho^(2-Q) is singular at the identity")
    return r ** (2.0 - spec.homogeneous_dim)
