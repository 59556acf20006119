"""Compiled inner loops for trajectory simulation.

Every trajectory owns a splitmix64 stream seeded from ``base_seed ^ index``,
so a trajectory's path depends only on its index and never on scheduling or
batch boundaries. Normals come from a 128-layer ziggurat.

The group law is expanded once per group into explicit polynomials (the same
truncated Dynkin words used by :func:`sublab.groups.bcdh_product`) and
emitted as straight-line code, which numba compiles into the step loop.
"""
from __future__ import annotations

import math
import warnings
from functools import lru_cache

import numba
import numpy as np
from numba import njit, prange

from .groups import CarnotGroupSpec, dynkin_words

# numba falls back to another threading layer when TBB is too old; the
# notice it prints is noise for users
warnings.filterwarnings("ignore", message="The TBB threading layer", category=numba.NumbaWarning)

GEOMETRIC_EULER = 0
COORDINATE_HEUN = 1

DOMAIN_BALL = 0
DOMAIN_BOX = 1
NORM_GAUGE = 0
NORM_LAYERMAX = 1

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_LOW7 = np.uint64(127)
_TWO_M53 = 2.0**-53
_MASK64 = (1 << 64) - 1

# Ziggurat layers (Doornik's ZIGNOR construction, 128 blocks).
_ZIG_R = 3.442619855899
_ZIG_V = 9.91256303526217e-3


def _ziggurat_tables(c=128):
    x = np.zeros(c + 1)
    f = math.exp(-0.5 * _ZIG_R * _ZIG_R)
    x[0] = _ZIG_V / f
    x[1] = _ZIG_R
    for i in range(2, c):
        x[i] = math.sqrt(-2.0 * math.log(_ZIG_V / x[i - 1] + f))
        f = math.exp(-0.5 * x[i] * x[i])
    return x, x[1:] / x[:-1]


_ZX, _ZRATIO = _ziggurat_tables()


@njit(cache=True, inline="always")
def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, inline="always")
def _uniform(state):
    state = state + _GAMMA
    return state, (np.float64(_mix(state) >> _S11) + 0.5) * _TWO_M53


@njit(cache=True)
def _normal_slow(state, u, i):
    if i == 0:
        while True:
            state, a = _uniform(state)
            state, b = _uniform(state)
            x = math.log(a) / _ZIG_R
            y = math.log(b)
            if -2.0 * y >= x * x:
                break
        return state, (x - _ZIG_R) if u < 0 else (_ZIG_R - x), True
    x = u * _ZX[i]
    f0 = math.exp(-0.5 * (_ZX[i] * _ZX[i] - x * x))
    f1 = math.exp(-0.5 * (_ZX[i + 1] * _ZX[i + 1] - x * x))
    state, a = _uniform(state)
    return state, x, f1 + a * (f0 - f1) < 1.0


@njit(cache=True, inline="always")
def _normal(state):
    while True:
        state = state + _GAMMA
        z = _mix(state)
        u = 2.0 * (np.float64(z >> _S11) + 0.5) * _TWO_M53 - 1.0
        i = np.int64(z & _LOW7)
        if abs(u) < _ZRATIO[i]:
            return state, u * _ZX[i]
        state, x, ok = _normal_slow(state, u, i)
        if ok:
            return state, x


@njit(cache=True)
def normal_stream(seed, n):
    """``n`` standard normals from the stream seeded by ``seed`` (for tests)."""
    out = np.empty(n)
    state = _mix(seed)
    for k in range(n):
        state, out[k] = _normal(state)
    return out


# -- group law as polynomials ------------------------------------------------

def _padd(p, q, scale=1.0):
    out = dict(p)
    for m, c in q.items():
        out[m] = out.get(m, 0.0) + scale * c
    return out


def _pmul(p, q):
    out = {}
    for m1, c1 in p.items():
        for m2, c2 in q.items():
            m = tuple(sorted(m1 + m2))
            out[m] = out.get(m, 0.0) + c1 * c2
    return out


def _vbracket(spec, a, b):
    out = [dict() for _ in range(spec.dim)]
    for i, j, k, c in spec.brackets:
        term = _padd(_pmul(a[i], b[j]), _pmul(a[j], b[i]), -1.0)
        out[k] = _padd(out[k], term, c)
    return out


def bch_polynomials(spec: CarnotGroupSpec, words, y_dims=None):
    """Coordinates of ``BCH(x, y)`` as polynomials in ``x_0.. , y_0..``.

    Monomials are sorted tuples of variable ids (``k`` for ``x_k``, ``N + k``
    for ``y_k``). ``y_dims`` restricts ``y`` to its first coordinates.
    """
    n = spec.dim
    y_dims = n if y_dims is None else y_dims
    letters = ([{(k,): 1.0} for k in range(n)],
               [{(n + k,): 1.0} if k < y_dims else {} for k in range(n)])
    out = [dict() for _ in range(n)]
    memo = {}
    for w, coef in words:
        val = None
        for end in range(1, len(w) + 1):
            key = w[:end]
            if key not in memo:
                nxt = letters[w[end - 1]]
                memo[key] = nxt if val is None else _vbracket(spec, val, nxt)
            val = memo[key]
        out = [_padd(o, v, float(coef)) for o, v in zip(out, val)]
    return [{m: c for m, c in p.items() if c != 0.0} for p in out]


def _expr(poly, names):
    if not poly:
        return "0.0"
    terms = []
    for mono, c in sorted(poly.items()):
        factors = "*".join(names[v] for v in mono)
        terms.append(f"({c!r})*{factors}")
    return " + ".join(terms)


def _function_source(name, polys, n, y_dims):
    names = [f"x{k}" for k in range(n)] + [f"y{k}" for k in range(n)]
    lines = [f"def {name}(x, y, out):"]
    lines += [f"    x{k} = x[{k}]" for k in range(n)]
    lines += [f"    y{k} = y[{k}]" for k in range(y_dims)]
    lines += [f"    out[{k}] = {_expr(p, names)}" for k, p in enumerate(polys)]
    return "\n".join(lines)


_KERNEL_SOURCE = '''
@njit(inline="always")
def _inside(g, dom_i, dom_f, cinv, lo, hi, layer, buf, tmp):
    n = g.shape[0]
    if dom_i[0] == 1:
        for k in range(n):
            if g[k] <= lo[k] or g[k] >= hi[k]:
                return False
        return True
    if dom_i[2] == 1:
        _product(cinv, g, buf)
        y = buf
    else:
        y = g
    radius = dom_f[0]
    if dom_i[1] == 0:
        s1 = 0.0
        s2 = 0.0
        for k in range(n):
            if layer[k] == 0:
                s1 += y[k] * y[k]
            elif layer[k] == 1:
                s2 += y[k] * y[k]
        r2 = radius * radius
        return s1 * s1 + dom_f[1] * s2 < r2 * r2
    nlayers = dom_i[3]
    for i in range(nlayers):
        tmp[i] = 0.0
    for k in range(n):
        tmp[layer[k]] += y[k] * y[k]
    for i in range(nlayers):
        bound = radius ** (i + 1)
        if tmp[i] >= bound * bound:
            return False
    return True


@njit(inline="always")
def _advance(g, inc, scheme, work, k1, gt):
    n = g.shape[0]
    if scheme == 0:
        _euler(g, inc, work)
        for k in range(n):
            g[k] = work[k]
    else:
        _linear(g, inc, k1)
        for k in range(n):
            gt[k] = g[k] + k1[k]
        _linear(gt, inc, work)
        for k in range(n):
            g[k] = g[k] + 0.5 * (k1[k] + work[k])


@njit(inline="always")
def _increment(state, inc, d1, sq):
    for i in range(d1):
        state, z = _normal(state)
        inc[i] = z * sq
    return state


@njit(parallel=True)
def exit_kernel(starts, base_seed, first_index, h, n_steps, scheme,
                dom_i, dom_f, cinv, lo, hi, layer, exit_step, exit_pts):
    m_total = exit_step.shape[0]
    n = starts.shape[1]
    sq = math.sqrt(h)
    single = starts.shape[0] == 1
    for m in prange(m_total):
        g = np.empty(n)
        if single:
            g[:] = starts[0]
        else:
            g[:] = starts[m]
        inc = np.zeros(n)
        work = np.empty(n)
        k1 = np.empty(n)
        gt = np.empty(n)
        buf = np.empty(n)
        tmp = np.empty(dom_i[3] + 1)
        state = _mix(base_seed ^ np.uint64(first_index + m))
        exit_step[m] = -1
        for k in range(1, n_steps + 1):
            state = _increment(state, inc, D1, sq)
            _advance(g, inc, scheme, work, k1, gt)
            if not _inside(g, dom_i, dom_f, cinv, lo, hi, layer, buf, tmp):
                exit_step[m] = k
                break
        for k in range(n):
            exit_pts[m, k] = g[k]


@njit(parallel=True)
def path_kernel(starts, base_seed, first_index, h, n_steps, every, scheme, paths):
    m_total = paths.shape[0]
    n = starts.shape[1]
    sq = math.sqrt(h)
    single = starts.shape[0] == 1
    for m in prange(m_total):
        g = np.empty(n)
        if single:
            g[:] = starts[0]
        else:
            g[:] = starts[m]
        inc = np.zeros(n)
        work = np.empty(n)
        k1 = np.empty(n)
        gt = np.empty(n)
        state = _mix(base_seed ^ np.uint64(first_index + m))
        paths[m, 0, :] = g
        for k in range(1, n_steps + 1):
            state = _increment(state, inc, D1, sq)
            _advance(g, inc, scheme, work, k1, gt)
            if k % every == 0:
                paths[m, k // every, :] = g


@njit
def product_kernel(x, y, out):
    for m in range(x.shape[0]):
        _product(x[m], y[m], out[m])


@njit
def linear_kernel(x, y, out):
    for m in range(x.shape[0]):
        _linear(x[m], y[m], out[m])
'''


class CompiledGroup:
    """Numba kernels specialised to one group law."""

    def __init__(self, spec: CarnotGroupSpec):
        n, d1 = spec.dim, spec.horizontal_dim
        words = dynkin_words(spec.step)
        linear = tuple((w, c) for w, c in words if sum(w) == 1)
        self.spec = spec
        self.dim = n
        self.d1 = d1
        self.layer = (np.asarray(spec.weights) - 1).astype(np.int64)
        self.product_polys = bch_polynomials(spec, words)
        self.euler_polys = bch_polynomials(spec, words, y_dims=d1)
        self.linear_polys = bch_polynomials(spec, linear, y_dims=d1)
        src = "\n\n".join([
            "@njit(inline='always')\n" + _function_source("_product", self.product_polys, n, n),
            "@njit(inline='always')\n" + _function_source("_euler", self.euler_polys, n, d1),
            "@njit(inline='always')\n" + _function_source("_linear", self.linear_polys, n, d1),
            _KERNEL_SOURCE,
        ])
        self.source = src
        ns = {"njit": njit, "prange": prange, "np": np, "math": math,
              "_mix": _mix, "_normal": _normal, "D1": d1}
        exec(compile(src, f"<sublab kernels: {spec.name}>", "exec"), ns)
        self.exit_kernel = ns["exit_kernel"]
        self.path_kernel = ns["path_kernel"]
        self.product_kernel = ns["product_kernel"]
        self.linear_kernel = ns["linear_kernel"]


@lru_cache(maxsize=32)
def compile_group(spec: CarnotGroupSpec) -> CompiledGroup:
    return CompiledGroup(spec)


def seed_u64(seed: int) -> np.uint64:
    return np.uint64(int(seed) & _MASK64)


def set_workers(workers):
    if workers is None:
        return
    workers = max(1, min(int(workers), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(workers)
