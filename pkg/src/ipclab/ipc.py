"""Invasion percolation clusters.

Two constructions live here. ``prim`` grows the cluster directly on a lazily
revealed weighted tree. ``build_kcut`` assembles the cluster cut at backbone
index ``k`` from the future-maximum-weight chain, the tilted backbone
degree, and independent subcritical forests hanging off the backbone.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import CapExceeded, DomainError, MemoryBudgetError
from .fmw import run_chains
from .offspring import INT_CLIP, OffspringDist, Sibuya, _PowerTail
from .survival import Regime, SurvivalSolver

DEFAULT_CAP = 10**8
HEAD_LEN = 10**4
_WALK_BUDGET = 1 << 22


# ---------------------------------------------------------------------------
# Prim's algorithm


@dataclass
class PrimCluster:
    parent: np.ndarray
    child: np.ndarray
    weight: np.ndarray
    depth: np.ndarray
    frontier_size: np.ndarray

    @property
    def max_trace(self) -> np.ndarray:
        return np.maximum.accumulate(self.weight)

    @property
    def future_max(self) -> np.ndarray:
        """Largest weight accepted at or after each step."""
        return np.maximum.accumulate(self.weight[::-1])[::-1]


class _DrawBuffer:
    """Serves scalar offspring draws from vectorised blocks."""

    def __init__(self, dist: OffspringDist, rng: np.random.Generator, block: int = 4096):
        self.dist, self.rng, self.block = dist, rng, block
        self.buf: list[int] = []

    def next(self) -> int:
        if not self.buf:
            self.buf = self.dist.sample(self.rng, self.block)[::-1].tolist()
        return self.buf.pop()


def prim(dist: OffspringDist, n: int, rng: np.random.Generator,
         frontier_cap: int = 10**7) -> PrimCluster:
    """Accept ``n`` edges by always taking the lightest frontier edge.

    The children of a vertex carry i.i.d. uniform weights. Only the smallest
    unrevealed child weight of each vertex sits in the heap; the next one is
    drawn from the conditional order statistic when it is consumed, so a
    vertex with an astronomically large degree costs O(1) memory.
    """
    if n < 1:
        raise DomainError("prim needs at least one step")
    draws = _DrawBuffer(dist, rng)
    remaining = [draws.next()]
    depth_of = [0]
    uni = iter(())

    def uniform() -> float:
        nonlocal uni
        u = next(uni, None)
        if u is None:
            uni = iter(rng.random(4096).tolist())
            u = next(uni)
        return u if u > 0.0 else uniform()

    def next_weight(floor: float, r: int) -> float:
        # minimum of r uniforms on (floor, 1)
        return floor + (1.0 - floor) * -math.expm1(math.log(uniform()) / r)

    heap = [(next_weight(0.0, remaining[0]), 0)]
    parent = np.empty(n, dtype=np.int64)
    weight = np.empty(n)
    depth = np.empty(n, dtype=np.int64)
    frontier = np.empty(n, dtype=np.int64)
    for step in range(n):
        wgt, v = heapq.heappop(heap)
        c = len(remaining)
        remaining.append(draws.next())
        depth_of.append(depth_of[v] + 1)
        parent[step], weight[step], depth[step] = v, wgt, depth_of[c]
        heapq.heappush(heap, (next_weight(0.0, remaining[c]), c))
        remaining[v] -= 1
        if remaining[v] > 0:
            heapq.heappush(heap, (next_weight(wgt, remaining[v]), v))
        if len(heap) > frontier_cap:
            raise MemoryBudgetError(f"frontier exceeded {frontier_cap} entries at step {step}")
        frontier[step] = len(heap)
    return PrimCluster(parent, np.arange(1, n + 1), weight, depth, frontier)


# ---------------------------------------------------------------------------
# backbone degree


class BackboneDegree:
    """Sampler for ``P(D = l) ∝ l (1 - theta_hat)^(l-1) P(X = l)`` at weight ``w``.

    The normalising constant is ``E[X (1 - theta_hat)^(X-1)]``. Light or
    finite laws use an inverse-cdf table. Power-tailed laws use an exact
    table for ``l <= L0`` and rejection from a two-piece envelope beyond.
    """

    def __init__(self, solver: SurvivalSolver, w: float, theta: float | None = None):
        if w <= solver.p_c:
            raise DomainError(f"backbone degree needs w > p_c = {solver.p_c}, got {w}")
        self.dist = solver.dist
        self.w = w
        self.theta = solver.theta(w) if theta is None else theta
        self.theta_hat = w * self.theta
        self.log_z = math.log1p(-self.theta_hat)
        self.norm = float(self.dist.phi_prime(self.theta_hat))
        self._setup()

    def weights(self, l: np.ndarray) -> np.ndarray:
        l = np.asarray(l, dtype=float)
        with np.errstate(invalid="ignore"):
            tilt = np.where(l == 1, 1.0, np.exp((l - 1.0) * self.log_z))
        return l * tilt * self.dist.pmf(l)

    def pmf(self, l) -> np.ndarray:
        return self.weights(l) / self.norm

    def _setup(self) -> None:
        d = self.dist
        self.heavy = isinstance(d, (_PowerTail, Sibuya)) and d.finite_support is None
        if not self.heavy:
            top = d.finite_support
            if top is None:
                decay = -math.log(d.tail(1.0)) - self.log_z  # geometric ratio of the tilted pmf
                top = int(math.ceil(45.0 / decay)) + 2
            self.head_len = top
        else:
            head = getattr(d, "_L", 0)
            self.head_len = max(HEAD_LEN, head)
        l = np.arange(1, self.head_len + 1, dtype=float)
        wts = self.weights(l)
        self.head_mass = float(wts.sum())
        self.head_cdf = np.cumsum(wts) / self.head_mass
        if not self.heavy:
            self.tail_mass = 0.0
            return
        a = d.alpha
        L0 = self.head_len
        probe = np.unique(np.concatenate([[L0 + 1.0], np.logspace(math.log10(L0 + 1), 15, 60).round()]))
        self.B = max(float(np.max(d.pmf(probe) * probe ** (1 + a))), a * d.c_x) * (1 + 1e-12)
        lam = -self.log_z
        self.lam = lam
        self.T = max(float(L0), 1.0 / lam)
        T = self.T
        if abs(a - 1.0) < 1e-12:
            mass_a = math.log(T / L0)
        else:
            mass_a = (T ** (1 - a) - L0 ** (1 - a)) / (1 - a)
        mass_b = T ** (-a) * math.exp(-lam * (T - 1.0)) / lam
        self.mass_a, self.mass_b = self.B * mass_a, self.B * mass_b
        self.tail_mass = self.mass_a + self.mass_b

    def _envelope(self, x: np.ndarray) -> np.ndarray:
        return np.where(x <= self.T, self.B * x ** (-self.dist.alpha),
                        self.B * self.T ** (-self.dist.alpha) * np.exp(-self.lam * (x - 1.0)))

    def _propose_tail(self, rng: np.random.Generator, n: int) -> np.ndarray:
        a, L0, T = self.dist.alpha, float(self.head_len), self.T
        piece_a = rng.random(n) * self.tail_mass < self.mass_a
        v = rng.random(n)
        if abs(a - 1.0) < 1e-12:
            xa = L0 * (T / L0) ** v
        else:
            lo, hi = L0 ** (1 - a), T ** (1 - a)
            xa = (lo + v * (hi - lo)) ** (1.0 / (1 - a))
        xb = T + rng.exponential(1.0 / self.lam, n)
        x = np.where(piece_a, np.clip(xa, L0 * (1 + 1e-15), T), xb)
        l = np.maximum(np.ceil(x), L0 + 1.0)
        accept = rng.random(n) * self._envelope(x) <= self.weights(l)
        return l[accept]

    def sample(self, rng: np.random.Generator, size=None):
        n = 1 if size is None else int(size)
        out = np.empty(n, dtype=np.int64)
        if not self.heavy:
            out[:] = np.searchsorted(self.head_cdf, rng.random(n), side="right") + 1
            out = np.minimum(out, self.head_len)
            return int(out[0]) if size is None else out
        filled = 0
        p_head = self.head_mass / (self.head_mass + self.tail_mass)
        while filled < n:
            need = n - filled
            m = int(need * 1.3) + 16
            from_head = rng.random(m) < p_head
            heads = np.searchsorted(self.head_cdf, rng.random(int(from_head.sum())), side="right") + 1
            tails = self._propose_tail(rng, int((~from_head).sum()))
            # interleave in proposal order so the result does not depend on batch size
            got = np.empty(m, dtype=float)
            got[from_head] = np.minimum(heads, self.head_len)
            tail_slots = np.flatnonzero(~from_head)
            got[tail_slots] = np.nan
            got[tail_slots[: tails.size]] = tails
            got = got[~np.isnan(got)][:need]
            if got.size and got.max() >= INT_CLIP:
                raise DomainError("backbone degree beyond the integer range; theta_hat is too small")
            out[filled:filled + got.size] = got.astype(np.int64)
            filled += got.size
        return int(out[0]) if size is None else out


def as_solver(law) -> SurvivalSolver:
    return law if isinstance(law, SurvivalSolver) else SurvivalSolver(law)


def sample_backbone_degree(law, w: float, rng: np.random.Generator, size=None):
    """``law`` may be an offspring law or a solver built on one."""
    return BackboneDegree(as_solver(law), w).sample(rng, size)


def backbone_degree_pmf(law, w: float, l) -> np.ndarray:
    return BackboneDegree(as_solver(law), w).pmf(l)


# ---------------------------------------------------------------------------
# dual offspring


def dual_offspring_pmf(dist: OffspringDist, w: float, theta: float, n_max: int) -> np.ndarray:
    """``P(X~ = l)`` for ``l = 0..n_max`` by direct summation over ``X``.

    ``P(X~ = l) = eta^(l-1) sum_x C(x, l) w^l (1-w)^(x-l) P(X = x)``.
    """
    eta = 1.0 - theta
    top = dist.finite_support
    if top is None:
        top = int(math.ceil(2.0 * (n_max + 60 + 10 * math.sqrt(n_max)) / w)) + 1000
    x = np.arange(1, top + 1, dtype=float)
    px = dist.pmf(x)
    ell = np.arange(n_max + 1)[:, None]
    out = (stats.binom.pmf(ell, x[None, :], w) * px[None, :]).sum(axis=1)
    return out * eta ** (np.arange(n_max + 1) - 1.0)


class DualOffspring:
    """``X~ = Binom(X, w)`` conditioned on extinction of the explored subtree.

    Draws are exact: propose ``Y = Binom(X, w)`` and accept with probability
    ``eta^Y``; the acceptance rate is ``E[eta^Y] = eta``. Laws with finite
    support use the exact pmf table instead.
    """

    def __init__(self, solver: SurvivalSolver, w: float, theta: float | None = None):
        self.dist = solver.dist
        self.w = w
        self.theta = solver.theta(w) if theta is None else theta
        self.eta = 1.0 - self.theta
        self.mean = w * float(self.dist.phi_prime(w * self.theta)) if self.theta < 1 else 0.0
        top = self.dist.finite_support
        self.cdf = None
        if top is not None:
            pmf = dual_offspring_pmf(self.dist, w, self.theta, top)
            self.cdf = np.cumsum(pmf) / pmf.sum()

    def sample(self, rng: np.random.Generator, size=None):
        n = 1 if size is None else int(size)
        if self.cdf is not None:
            out = np.searchsorted(self.cdf, rng.random(n), side="right").astype(np.int64)
            return int(out[0]) if size is None else out
        out = np.empty(n, dtype=np.int64)
        filled = 0
        log_eta = math.log(self.eta) if self.eta > 0 else -math.inf
        while filled < n:
            m = int((n - filled) / max(self.eta, 1e-3) * 1.05) + 16
            y = rng.binomial(self.dist.sample(rng, m), self.w)
            keep = y[np.log(rng.random(m)) <= y * log_eta][: n - filled]
            out[filled:filled + keep.size] = keep
            filled += keep.size
        return int(out[0]) if size is None else out


def sample_dual_offspring(law, w: float, rng: np.random.Generator, size=None):
    return DualOffspring(as_solver(law), w).sample(rng, size)


# ---------------------------------------------------------------------------
# forests


def forest_sizes(dual: DualOffspring, roots: np.ndarray, rng: np.random.Generator,
                 cap: int = DEFAULT_CAP) -> np.ndarray:
    """Total vertex counts of forests of ``roots[i]`` i.i.d. ``X~``-trees.

    Breadth-first exploration is encoded as the skip-free walk
    ``roots + sum (X~_j - 1)``; the forest size is its first hitting time of
    zero. Walks are advanced in vectorised chunks grouped by height.
    """
    roots = np.asarray(roots, dtype=np.int64)
    size = np.zeros(roots.size, dtype=np.int64)
    height = roots.copy()
    drift = max(1.0 - dual.mean, 1e-3)
    idx = np.flatnonzero(height > 0)
    while idx.size:
        want = np.ceil(height[idx] / drift * 1.25).astype(np.int64) + 8
        bucket = np.ceil(np.log2(want)).astype(np.int64)
        nxt = []
        for b in np.unique(bucket):
            rows = idx[bucket == b]
            chunk = 1 << int(b)
            per = max(1, _WALK_BUDGET // chunk)
            for start in range(0, rows.size, per):
                part = rows[start:start + per]
                steps = dual.sample(rng, part.size * chunk).reshape(part.size, chunk) - 1
                path = height[part, None] + np.cumsum(steps, axis=1)
                hit = path == 0
                done = hit.any(axis=1)
                size[part[done]] += hit[done].argmax(axis=1) + 1
                size[part[~done]] += chunk
                height[part[done]] = 0
                height[part[~done]] = path[~done, -1]
                nxt.append(part[~done])
        idx = np.sort(np.concatenate(nxt)) if nxt else np.empty(0, dtype=np.int64)
        if idx.size and size[idx].max() > cap:
            raise CapExceeded(f"forest exceeded {cap} vertices", cap)
    return size


def sample_subtree_progeny(law, w: float, rng: np.random.Generator,
                           cap: int = DEFAULT_CAP, size=None):
    dual = DualOffspring(as_solver(law), w)
    n = 1 if size is None else int(size)
    out = forest_sizes(dual, np.ones(n, dtype=np.int64), rng, cap)
    return int(out[0]) if size is None else out


def sample_forest(law, w: float, d, rng: np.random.Generator,
                  cap: int = DEFAULT_CAP):
    """Explore each of the ``d - 1`` side edges with probability ``w``.

    Returns ``(d_eff, H)``; arrays when ``d`` is an array.
    """
    scalar = np.ndim(d) == 0
    d = np.atleast_1d(np.asarray(d, dtype=np.int64))
    if np.any(d < 1):
        raise DomainError("backbone degree must be at least 1")
    d_eff = rng.binomial(d - 1, w)
    h = forest_sizes(DualOffspring(as_solver(law), w), d_eff, rng, cap)
    if scalar:
        return int(d_eff[0]), int(h[0])
    return d_eff, h


# ---------------------------------------------------------------------------
# k-cut construction


@dataclass(frozen=True)
class KCutRecord:
    k: int
    w: float
    d: int | float
    d_eff: int | float
    h: int | float
    m_cum: int | float
    rescaled: bool = False


@dataclass
class KCutRun:
    log_w: np.ndarray
    log_theta: np.ndarray
    d: np.ndarray
    d_eff: np.ndarray
    h: np.ndarray
    rescaled: np.ndarray
    truncated_at: int | None = None
    m_cum: np.ndarray = field(init=False)

    def __post_init__(self):
        self.m_cum = np.cumsum(1.0 + self.h)

    @property
    def w(self) -> np.ndarray:
        return np.exp(self.log_w)

    def records(self) -> list[KCutRecord]:
        out = []
        for i in range(self.h.size):
            exact = not self.rescaled[i]
            cast = (lambda v: int(v)) if exact else float
            out.append(KCutRecord(i, float(np.exp(self.log_w[i])), cast(self.d[i]), cast(self.d_eff[i]),
                                  cast(self.h[i]), cast(self.m_cum[i]), bool(self.rescaled[i])))
        return out


def build_kcut(law, k: int, rng: np.random.Generator,
               theta_floor: float | None = 1e-3, cap: int = DEFAULT_CAP) -> KCutRun:
    """Cluster cut at backbone index ``k``.

    The weight chain is drawn first; indices sharing a weight level are then
    filled in one batch (degree, explored side edges, forest sizes).

    In the infinite-mean regime the forests at late indices contain of
    order ``1/theta(W)`` vertices, far beyond what can be enumerated. Levels
    with ``theta(W) < theta_floor`` are therefore drawn at the weight
    ``w*`` with ``theta(w*) = theta_floor`` and scaled by
    ``theta_floor / theta(W)`` (degree by the matching ratio of
    ``theta_hat``); such records carry ``rescaled=True``. Pass
    ``theta_floor=None`` to forbid rescaling.
    """
    solver = as_solver(law)
    if k < 0:
        raise DomainError("k must be non-negative")
    batch = run_chains(solver, k, 1, rng)
    traj = batch.trajectories()[0]
    last = traj.last_index
    n = last + 1
    d = np.empty(n)
    d_eff = np.empty(n)
    h = np.empty(n)
    rescaled = np.zeros(n, dtype=bool)
    log_w = np.empty(n)
    log_theta = np.empty(n)
    starts = traj.jump_steps
    ends = np.concatenate([starts[1:], [n]])
    scalable = solver.regime is Regime.INFINITE_MEAN and theta_floor is not None
    ref = None
    for lw, lt, a, b in zip(traj.log_levels, traj.log_thetas, starts, ends):
        a, b = int(a), int(min(b, n))
        if a >= b:
            continue
        log_w[a:b], log_theta[a:b] = lw, lt
        if scalable and lt < math.log(theta_floor):
            if ref is None:
                w_star = solver.theta_inv(theta_floor)
                ref = (w_star, BackboneDegree(solver, w_star, theta_floor),
                       DualOffspring(solver, w_star, theta_floor))
            w_use, deg, dual = ref
            factor = math.exp(math.log(theta_floor) - lt)
            deg_factor = math.exp(math.log(w_use * theta_floor) - (lw + lt))
            rescaled[a:b] = True
        else:
            w_use = math.exp(lw)
            theta = math.exp(lt)
            deg = BackboneDegree(solver, w_use, theta)
            dual = DualOffspring(solver, w_use, theta)
            factor = deg_factor = 1.0
        dd = deg.sample(rng, b - a)
        de = rng.binomial(dd - 1, w_use)
        hh = forest_sizes(dual, de, rng, cap)
        d[a:b], d_eff[a:b], h[a:b] = dd * deg_factor, de * factor, hh * factor
    trunc = None if traj.truncated_at is None else int(traj.truncated_at)
    return KCutRun(log_w, log_theta, d, d_eff, h, rescaled, trunc)
