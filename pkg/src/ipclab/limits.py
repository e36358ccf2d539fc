"""Limiting objects: lower-envelope paths, the Poisson decay process, stable
densities, forest-size densities, the Cox volume integral and the Z process.

Densities that need a stable law are evaluated through cached tables
(spline in ``asinh`` coordinates, asymptotic series in the far tails) so that
the samplers can call them on large arrays.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, interpolate, special, stats

from .errors import DomainError, EnvelopeError, QuadratureError, RegimeError
from .offspring import OffspringDist
from .rng import DEFAULT_SEED, stream
from .survival import Regime, SurvivalSolver, alpha_hat as _alpha_hat, regime_of

# ---------------------------------------------------------------------------
# lower envelope processes


@dataclass(frozen=True)
class LimitPath:
    """Non-increasing step path; ``levels[j]`` holds on ``(breakpoints[j], breakpoints[j+1]]``."""

    breakpoints: np.ndarray
    levels: np.ndarray
    eps: float
    t_end: float

    def __call__(self, t):
        idx = np.searchsorted(self.breakpoints, t, side="left") - 1
        return self.levels[np.clip(idx, 0, self.levels.size - 1)]


def _check_lep(alpha_hat: float, eta: float, eps: float) -> None:
    if not 1.0 < alpha_hat <= 2.0:
        raise DomainError(f"alpha_hat must lie in (1, 2], got {alpha_hat}")
    if not -1.0 < eta < 1.0:
        raise DomainError(f"eta must lie in (-1, 1), got {eta}")
    if eps <= 0:
        raise DomainError("eps must be positive")


def alep_path(alpha_hat: float, eta: float, eps: float, t_end: float,
              rng: np.random.Generator) -> LimitPath:
    """Exact path on ``[eps, t_end]``; ``eta = 0`` gives the plain envelope process.

    Starts from ``Gamma((1+eta)/(alpha_hat-1), rate=eps) / (1-eta)``, waits an
    exponential time with rate ``(1-eta) * level`` and then multiplies the
    level by ``U^((alpha_hat-1)/(1+eta))``.
    """
    _check_lep(alpha_hat, eta, eps)
    shape = (1.0 + eta) / (alpha_hat - 1.0)
    power = (alpha_hat - 1.0) / (1.0 + eta)
    level = rng.gamma(shape) / eps / (1.0 - eta)
    times, levels = [eps], [level]
    t = eps
    while True:
        t += rng.exponential() / ((1.0 - eta) * level)
        if t > t_end:
            break
        level *= rng.random() ** power
        times.append(t)
        levels.append(level)
    return LimitPath(np.array(times), np.array(levels), eps, t_end)


def alep_marginals(alpha_hat: float, eta: float, eps: float, times, n: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Values at ``times`` of ``n`` independent paths, shape ``(n, len(times))``."""
    _check_lep(alpha_hat, eta, eps)
    times = np.asarray(times, dtype=float)
    if np.any(times < eps):
        raise DomainError("marginal times must be >= eps")
    shape = (1.0 + eta) / (alpha_hat - 1.0)
    power = (alpha_hat - 1.0) / (1.0 + eta)
    level = rng.gamma(shape, size=n) / eps / (1.0 - eta)
    now = np.full(n, eps)
    out = np.empty((n, times.size))
    order = np.argsort(times)
    active = np.arange(n)
    for j in order:
        t = times[j]
        while active.size:
            nxt = now[active] + rng.exponential(size=active.size) / ((1.0 - eta) * level[active])
            jumps = nxt <= t
            moving = active[jumps]
            now[moving] = nxt[jumps]
            level[moving] *= rng.random(moving.size) ** power
            # exponential clocks are memoryless: waiting chains restart at t
            now[active[~jumps]] = t
            active = moving
        out[:, j] = level
        now[:] = t
        active = np.arange(n)
    return out


# ---------------------------------------------------------------------------
# exponential Poisson decay process


def _check_epdp(alpha: float, eta: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    if not (-1.0 < eta and alpha + eta < 1.0):
        raise DomainError(f"eta={eta} leaves no positive jump rate")


def epdp_log_sample(alpha: float, eta: float, t: float, rng: np.random.Generator, size=None):
    """``-log`` of the decay process at time ``t``.

    A product of ``N ~ Poisson((1-alpha-eta) t)`` factors
    ``U^((1-alpha)/(alpha(1+eta)))`` has ``-log`` equal to
    ``(1-alpha)/(alpha(1+eta))`` times a ``Gamma(N, 1)`` variable.
    """
    _check_epdp(alpha, eta)
    if t < 0:
        raise DomainError("t must be non-negative")
    n = rng.poisson((1.0 - alpha - eta) * t, size=size)
    g = rng.standard_gamma(np.where(n > 0, n, 1)) * (n > 0)
    scale = (1.0 - alpha) / (alpha * (1.0 + eta))
    out = scale * g
    return float(out) if size is None else out


def epdp_sample(alpha: float, eta: float, t: float, rng: np.random.Generator, size=None):
    return np.exp(-epdp_log_sample(alpha, eta, t, rng, size))


def epdp_laplace(alpha: float, eta: float, k: float, t: float, s: float) -> float:
    """``E[exp(-(s/k) * (-log L(k t)))]`` in closed form."""
    u = (1.0 - alpha) * s / k
    return math.exp(-(1.0 - alpha - eta) * k * t * u / (u + alpha * (1.0 + eta)))


def epdp_rate(alpha: float, eta: float, t: float) -> float:
    """Almost-sure limit of ``-log L(k t) / k``."""
    return (1.0 - alpha - eta) * (1.0 - alpha) / (alpha * (1.0 + eta)) * t


# ---------------------------------------------------------------------------
# stable densities

_ASYM_CUT = 50.0


def _stable_asymptotic(alpha: float, c: float, x: np.ndarray, terms: int) -> np.ndarray:
    ax = np.abs(x)
    out = np.zeros_like(ax)
    for k in range(1, terms + 1):
        coef = (-1) ** (k + 1) * math.gamma(alpha * k + 1) / math.factorial(k) * math.sin(math.pi * alpha * k / 2)
        out += coef * c ** (alpha * k) * ax ** (-alpha * k - 1)
    return out / math.pi


def _symmetric_point(alpha: float, c: float, x: float) -> float:
    if x == 0.0:
        return math.gamma(1.0 + 1.0 / alpha) / (math.pi * c)
    ax = abs(x)
    if ax * 46.0 ** (1.0 / alpha) / c <= 2000.0:
        # few oscillations before the integrand dies out: substitute u = (c t)^alpha,
        # which leaves a smooth Gamma-weighted integrand on [0, 46]
        inv = 1.0 / alpha
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)  # err is checked below
            val, err = integrate.quad(lambda u: math.cos(ax * u**inv / c) * u ** (inv - 1.0) * math.exp(-u),
                                      0.0, 46.0, limit=1000, epsabs=1e-14, epsrel=1e-10)
        val /= alpha * c
        if not err / (alpha * c) <= 1e-8 * abs(val) + 1e-13:
            raise QuadratureError(f"stable density did not converge at x={x}")
        return val / math.pi
    val, _, info = integrate.quad(lambda t: math.exp(-((c * t) ** alpha)), 0.0, np.inf,
                                  weight="cos", wvar=ax, limlst=200, full_output=1)[:3]
    # only the first ``lst`` status codes are meaningful
    codes = np.asarray(info.get("ierlst", []))[: int(info.get("lst", 0))]
    if np.any(codes > 1):
        raise QuadratureError(f"stable density did not converge at x={x}")
    return val / math.pi


def stable_density(alpha: float, c: float, x, skew: bool = False):
    """Density of the stable law with index ``alpha`` and scale ``c``.

    The symmetric law has characteristic function ``exp(-|c t|^alpha)`` and is
    inverted by oscillatory quadrature near the origin, by its convergent (or
    asymptotic) power series in the tails. ``skew=True`` gives the totally
    right-skewed law with the same scale (S1 parametrisation).
    """
    if c <= 0:
        raise DomainError("scale must be positive")
    if not 0.0 < alpha <= 2.0:
        raise DomainError(f"alpha must lie in (0, 2], got {alpha}")
    arr = np.asarray(x, dtype=float)
    flat = arr.ravel()
    if skew:
        out = stats.levy_stable.pdf(flat, alpha, 1.0, scale=c)
    elif alpha == 2.0:
        out = np.exp(-flat**2 / (4 * c * c)) / (2 * c * math.sqrt(math.pi))
    elif alpha == 1.0:
        out = c / (math.pi * (c * c + flat**2))
    else:
        out = np.empty_like(flat)
        far = np.abs(flat) >= _ASYM_CUT * c
        out[far] = _stable_asymptotic(alpha, c, flat[far], 10 if alpha < 1 else 6)
        for i in np.flatnonzero(~far):
            out[i] = _symmetric_point(alpha, c, float(flat[i]))
    out = np.asarray(out).reshape(arr.shape)
    return float(out) if np.ndim(x) == 0 else out


class _StableTable:
    """Spline of ``log psi`` in ``u = asinh(x / c)`` with analytic far tails."""

    def __init__(self, alpha: float, c: float, skew: bool):
        self.alpha, self.c, self.skew = alpha, c, skew
        reach = _ASYM_CUT if not skew else 1e4
        self.x_max = reach * c
        u = np.linspace(-math.asinh(reach), math.asinh(reach), 2401 if not skew else 4001)
        x = c * np.sinh(u)
        vals = stable_density(alpha, c, x, skew)
        self.zero_left = skew and alpha < 1.0
        floor = 1e-300
        vals = np.maximum(vals, floor)
        self.spline = interpolate.PchipInterpolator(u, np.log(vals))
        self.floor_log = math.log(floor) + 1.0
        self.tail_coef = 2.0 if skew else 1.0

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        inside = np.abs(x) < self.x_max
        lv = self.spline(np.arcsinh(x[inside] / self.c))
        out[inside] = np.where(lv > self.floor_log, np.exp(lv), 0.0)
        right = x >= self.x_max
        terms = 10 if self.alpha < 1 else 6
        if self.skew:
            # first term only: the skewed series differs beyond leading order
            out[right] = self.tail_coef * _stable_asymptotic(self.alpha, self.c, x[right], 1)
        else:
            far = ~inside
            out[far] = _stable_asymptotic(self.alpha, self.c, x[far], terms)
        if self.zero_left:
            out[x <= 0] = 0.0
        return out


@lru_cache(maxsize=32)
def _stable_table(alpha: float, c: float, skew: bool) -> _StableTable:
    return _StableTable(alpha, c, skew)


# ---------------------------------------------------------------------------
# regime parameters


def _mad_quantile(alpha: float) -> float:
    """Median absolute value of the unit symmetric stable law."""
    return float(stats.levy_stable.ppf(0.75, alpha, 0.0))


@lru_cache(maxsize=16)
def _fit_scale_cached(spec: str, dist: OffspringDist, n: int, reps: int, seed: int) -> float:
    rng = stream(seed, "stable-scale-fit", spec)
    a = dist.alpha
    centre = n * dist.mean if a > 1 else 0.0
    sums = np.empty(reps)
    chunk = max(1, 4_000_000 // n)
    for start in range(0, reps, chunk):
        m = min(chunk, reps - start)
        draws = dist.sample(rng, (m, n)).astype(float)
        sums[start:start + m] = draws.sum(axis=1)
    y = (sums - centre) / n ** (1.0 / a)
    spread = float(np.median(np.abs(y - np.median(y))))
    return spread / _mad_quantile(a)


def fit_stable_scale(dist: OffspringDist, n: int = 10**5, reps: int = 400,
                     seed: int = DEFAULT_SEED) -> float:
    """Scale of the symmetric stable law matched to ``(Q_n - n mu) / n^(1/alpha)``.

    ``Q_n`` is a sum of ``n`` offspring draws and the centring is dropped when
    the mean is infinite. The match is on the median absolute deviation, which
    needs no moments.
    """
    if not 0.0 < dist.alpha < 2.0 or dist.alpha == 1.0:
        raise RegimeError("a stable scale is only needed for alpha in (0, 1) or (1, 2)")
    return _fit_scale_cached(dist.spec, dist, n, reps, seed)


def skewed_stable_scale(alpha: float, c_x: float) -> float:
    """S1 scale of the one-sided stable limit of ``Q_n`` when ``P(X > x) ~ c_x x^-alpha``."""
    return abs(c_x * math.gamma(1.0 - alpha) * math.cos(math.pi * alpha / 2.0)) ** (1.0 / alpha)


@dataclass(frozen=True)
class RegimeParams:
    """Constants entering the forest-size densities and the volume limit.

    ``attached_mean`` is the prefactor counting the explored side trees at a
    near-critical backbone vertex (only used for ``alpha > 2``). The default
    constructor uses ``p_c E[X*]``; ``corrected=True`` uses
    ``p_c (E[X*] - 1)``, the mean of ``Binom(D - 1, p_c)`` in the limit, and the
    one-sided stable law instead of the symmetric one.
    """

    alpha: float
    alpha_hat: float
    gamma: float | None
    nu: float
    c_theta: float
    p_c: float
    c_x: float
    sigma2: float | None = None
    mean_size_biased: float | None = None
    attached_mean: float | None = None
    c_alpha: float | None = None
    skewed: bool = False

    @property
    def regime(self) -> Regime:
        return regime_of(self.alpha)

    @classmethod
    def from_dist(cls, dist: OffspringDist, c_alpha: float | None = None,
                  corrected: bool = False) -> "RegimeParams":
        a = dist.alpha
        reg = regime_of(a)
        nu, c_theta = SurvivalSolver(dist).asymptotics()
        ah = _alpha_hat(a)
        gamma = None if reg is Regime.INFINITE_MEAN else ah / (ah - 1.0)
        kw = dict(alpha=a, alpha_hat=ah, gamma=gamma, nu=nu, c_theta=c_theta, p_c=dist.p_c,
                  c_x=dist.c_x, skewed=corrected and reg is not Regime.FINITE_VARIANCE)
        if reg is Regime.FINITE_VARIANCE:
            esb = dist.m2 / dist.mean
            kw.update(sigma2=dist.variance, mean_size_biased=esb,
                      attached_mean=dist.p_c * (esb - 1.0 if corrected else esb))
        elif c_alpha is None:
            c_alpha = skewed_stable_scale(a, dist.c_x) if kw["skewed"] else fit_stable_scale(dist)
        kw["c_alpha"] = c_alpha
        return cls(**kw)

    def psi(self, x) -> np.ndarray:
        return _stable_table(self.alpha, float(self.c_alpha), self.skewed)(x)


# ---------------------------------------------------------------------------
# forest-size densities


def _gl_panels(edges: np.ndarray, order: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on consecutive panels."""
    g, w = np.polynomial.legendre.leggauss(order)
    lo, hi = edges[:-1, None], edges[1:, None]
    nodes = 0.5 * (hi - lo) * g[None, :] + 0.5 * (hi + lo)
    weights = 0.5 * (hi - lo) * w[None, :]
    return nodes.ravel(), weights.ravel()


def _geometric_edges(lo: float, hi: float, per_decade: int = 4) -> np.ndarray:
    n = max(2, int(math.ceil(math.log10(hi / lo) * per_decade)) + 1)
    return np.concatenate([[0.0], np.geomspace(lo, hi, n)])


class _HelperCache:
    """Tabulated one-dimensional integrals behind ``h`` for ``alpha < 2``."""

    def __init__(self, p: RegimeParams):
        self.p = p
        a = p.alpha
        if p.regime is Regime.INFINITE_VARIANCE:
            # G(b) = int_0^inf psi(-v - b) v^(1-alpha) dv
            self.b_grid = np.concatenate([[0.0], np.geomspace(1e-6, 1e8, 700)]) * p.c_alpha
            vals = self._g(self.b_grid)
            self.g0 = float(vals[0])
            self.g_log = interpolate.PchipInterpolator(np.arcsinh(self.b_grid / p.c_alpha),
                                                       np.log(np.maximum(vals, 1e-300)))
            self.g_max = float(vals.max())
            self.g_last = (float(self.b_grid[-1]), float(vals[-1]))
        else:
            # F(y) = int_0^1 psi((1 - u) y) u^(1-alpha) du
            self.y_grid = np.geomspace(1e-10, 1e12, 1100)
            vals = self._f(self.y_grid)
            self.f_log = interpolate.PchipInterpolator(np.log(self.y_grid), np.log(np.maximum(vals, 1e-300)))
            self.f0 = float(p.psi(np.array([0.0]))[0]) / (2.0 - a)
            self.f_inf = float(vals[-1] * self.y_grid[-1])

    def _g(self, b: np.ndarray) -> np.ndarray:
        a, c = self.p.alpha, self.p.c_alpha
        v, w = _gl_panels(_geometric_edges(1e-12 * c, 1e12 * c))
        mat = self.p.psi(-v[None, :] - b[:, None]) * (v ** (1.0 - a) * w)[None, :]
        out = mat.sum(axis=1)
        if not self.p.skewed:
            # far left tail of the symmetric law, psi ~ C |x|^(-1-alpha)
            coef = math.gamma(a + 1) * math.sin(math.pi * a / 2) * c**a / math.pi
            big = 1e12 * c
            out += coef * big ** (1.0 - 2.0 * a) / (2.0 * a - 1.0)
        return out

    def _f(self, y: np.ndarray) -> np.ndarray:
        a = self.p.alpha
        # w = 1 - u, dense near w = 0 where psi((1-u) y) varies on scale 1/y
        edges = np.concatenate([[0.0], np.geomspace(1e-16, 0.5, 120), 1.0 - np.geomspace(0.5, 1e-12, 60)[1:], [1.0]])
        w, wt = _gl_panels(edges)
        mat = self.p.psi(w[None, :] * y[:, None]) * ((1.0 - w) ** (1.0 - a) * wt)[None, :]
        return mat.sum(axis=1)

    def g(self, b: np.ndarray) -> np.ndarray:
        b = np.atleast_1d(np.asarray(b, dtype=float))
        out = np.exp(self.g_log(np.arcsinh(np.minimum(b, self.g_last[0]) / self.p.c_alpha)))
        beyond = b > self.g_last[0]
        if np.any(beyond):
            if self.p.skewed:
                out[beyond] = 0.0
            else:
                b0, g0 = self.g_last
                out[beyond] = g0 * (b[beyond] / b0) ** (1.0 - 2.0 * self.p.alpha)
        out[out < 1e-290] = 0.0
        return out

    def f(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        lo, hi = self.y_grid[0], self.y_grid[-1]
        out = np.exp(self.f_log(np.log(np.clip(y, lo, hi))))
        out = np.where(y < lo, self.f0, out)
        out = np.where(y > hi, self.f_inf / np.maximum(y, hi), out)
        return out


@lru_cache(maxsize=32)
def _helpers(p: RegimeParams) -> _HelperCache:
    return _HelperCache(p)


def _finite_variance_parts(p: RegimeParams) -> tuple[float, float]:
    var = 1.0 - p.p_c + p.p_c**2 * p.sigma2
    return p.attached_mean / math.sqrt(2.0 * math.pi * var), var


def h_density(params: RegimeParams, x, a: float | np.ndarray = 1.0):
    """Limiting density of the rescaled forest size at a near-critical backbone vertex.

    ``a`` is the distance from criticality in units of ``1/k`` and is ignored
    for ``alpha < 1``. Broadcasts over ``x`` and ``a``.
    """
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr <= 0):
        raise DomainError("h is defined for x > 0")
    a_arr = np.asarray(a, dtype=float)
    shape = np.broadcast(x_arr, a_arr).shape
    p = params
    reg = p.regime
    if reg is Regime.FINITE_VARIANCE:
        k, var = _finite_variance_parts(p)
        out = k * x_arr**-1.5 * np.exp(-a_arr**2 * x_arr / (2.0 * var))
    elif reg is Regime.INFINITE_VARIANCE:
        al = p.alpha
        pre = al * p.c_x * p.p_c ** (al - 1.0) * p.p_c ** (2.0 - al)
        b = a_arr * x_arr ** (1.0 - 1.0 / al)
        out = pre * x_arr ** ((1.0 - 2.0 * al) / al) * _helpers(p).g(np.broadcast_to(b, shape)).reshape(shape)
    else:
        al = p.alpha
        out = p.c_x * x_arr ** (1.0 - al - 1.0 / al) * _helpers(p).f(x_arr ** (1.0 - 1.0 / al)).reshape(x_arr.shape)
    out = np.asarray(out, dtype=float)
    return float(out) if out.ndim == 0 else out


def h_envelope(params: RegimeParams) -> tuple[float, float]:
    """``(K, beta)`` with ``h(y, a) <= K y^-beta`` for every ``a >= 0`` (``alpha > 1``)."""
    p = params
    if p.regime is Regime.FINITE_VARIANCE:
        return _finite_variance_parts(p)[0], 1.5
    if p.regime is Regime.INFINITE_VARIANCE:
        al = p.alpha
        pre = al * p.c_x * p.p_c
        return pre * _helpers(p).g_max * (1.0 + 1e-6), (2.0 * al - 1.0) / al
    raise RegimeError("the Cox intensity is only defined for alpha > 1")


def h_tail(params: RegimeParams, y, a: float = 1.0):
    """``int_y^inf h(u, a) du``."""
    y_arr = np.atleast_1d(np.asarray(y, dtype=float))
    a_arr = np.broadcast_to(np.asarray(a, dtype=float), y_arr.shape)
    p = params
    if p.regime is Regime.FINITE_VARIANCE:
        k, var = _finite_variance_parts(p)
        lam = a_arr**2 / (2.0 * var)
        out = k * (2.0 * y_arr**-0.5 * np.exp(-lam * y_arr)
                   - 2.0 * np.sqrt(np.pi * lam) * special.erfc(np.sqrt(lam * y_arr)))
    else:
        out = np.empty_like(y_arr)
        for i, (yy, aa) in enumerate(zip(y_arr, a_arr)):
            edges = np.geomspace(yy, yy * 1e16, 129)
            nodes, wts = _gl_panels(edges)
            val = float(np.sum(h_density(p, nodes, aa) * wts))
            # power-law remainder beyond the last node
            last = edges[-1]
            hv, hprev = h_density(p, last, aa), h_density(p, last / 10, aa)
            if hv > 0 and hprev > 0:
                slope = math.log(hprev / hv) / math.log(10)
                if slope > 1.0:
                    val += hv * last / (slope - 1.0)
            out[i] = val
    return float(out[0]) if np.ndim(y) == 0 else out


def h_mass(params: RegimeParams, a: float = 1.0, cutoff: float | None = None) -> tuple[float, float]:
    """``(int_0^cutoff h, int_cutoff^inf h)`` with an adaptive default cutoff."""
    p = params
    if cutoff is None:
        cutoff = 1e3
        while h_tail(p, cutoff, a) > 1e-6 and cutoff < 1e40:
            cutoff *= 10.0
    edges = np.concatenate([[0.0], np.geomspace(1e-14, cutoff, 400)])
    nodes, wts = _gl_panels(edges)
    body = float(np.sum(h_density(p, nodes, a) * wts))
    return body, float(h_tail(p, cutoff, a))


# ---------------------------------------------------------------------------
# forest-size sampler for alpha in (0, 1)


class PsiSampler:
    """Inverse-cdf sampler for the (normalised) density ``h`` with ``alpha < 1``.

    ``h`` is tabulated on a log grid between its ``1e-6`` and ``1 - 1e-6``
    quantiles; ``mass`` is the total integral before normalisation.
    """

    def __init__(self, params: RegimeParams, n_grid: int = 10**4):
        if params.regime is not Regime.INFINITE_MEAN:
            raise RegimeError("the Z process needs alpha in (0, 1)")
        self.params = params
        al = params.alpha
        self.tail_index = al + 1.0 / al - 2.0
        coarse = np.geomspace(1e-12, 1e30, 2000)
        cdf = self._cdf_on(coarse)
        self.mass = float(cdf[-1] + h_tail(params, coarse[-1]))
        q = cdf / self.mass
        lo = coarse[max(np.searchsorted(q, 1e-6) - 1, 0)]
        hi = coarse[min(np.searchsorted(q, 1.0 - 1e-6) + 1, coarse.size - 1)]
        self.grid = np.geomspace(lo, hi, n_grid)
        fine = self._cdf_on(self.grid)
        self.cdf = fine / self.mass
        keep = np.concatenate([[True], np.diff(self.cdf) > 0])
        self._inv = interpolate.PchipInterpolator(self.cdf[keep], np.log(self.grid[keep]))
        self._fwd = interpolate.PchipInterpolator(np.log(self.grid[keep]), self.cdf[keep])

    def _cdf_on(self, grid: np.ndarray) -> np.ndarray:
        lx = np.log(grid)
        dens = h_density(self.params, grid) * grid
        head = h_density(self.params, grid[0]) * grid[0]
        # below the first node h behaves like a power of x; use a one-sided estimate
        start = head / max(1.0 - self.params.alpha - 1.0 / self.params.alpha + 1.0, 1e-3) if head > 0 else 0.0
        start = min(start, head * 50)
        return start + np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(lx))])

    def cdf_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lx = np.clip(np.log(x), math.log(self.grid[0]), math.log(self.grid[-1]))
        return np.clip(self._fwd(lx), 0.0, 1.0)

    def sample(self, rng: np.random.Generator, size=None):
        u = rng.random(size)
        lo, hi = self.cdf[0], self.cdf[-1]
        return np.exp(self._inv(lo + (hi - lo) * np.asarray(u)))

    def moment(self, q: float) -> float:
        """``E[Psi^q]`` of the tabulated law."""
        x = self.grid
        dens = np.gradient(self.cdf, np.log(x))
        return float(integrate.trapezoid(x**q * dens, np.log(x)) / (self.cdf[-1] - self.cdf[0]))


@lru_cache(maxsize=16)
def psi_sampler(params: RegimeParams) -> PsiSampler:
    return PsiSampler(params)


@dataclass
class ZSample:
    values: np.ndarray  # shape (n, l_max + 1)
    terms: np.ndarray  # number of summands used per draw


def z_process_sample(params: RegimeParams, l_max: int, tol: float, rng: np.random.Generator,
                     size: int | None = None):
    """``Z_l = sum_{i >= l} prod_{j=1}^{i} P_j^(alpha/(1-alpha)) Psi_i`` for ``l <= l_max``.

    ``P^(alpha/(1-alpha))`` is 1 with probability ``alpha`` and uniform
    otherwise. Summation stops once the ``q``-th moment bound on the
    remainder, ``(E[Psi^q] r_q^(i+1) / (1 - r_q))^(1/q)``, drops below
    ``tol * (partial + 1)``; ``q = 1`` when ``Psi`` has a mean and a fractional
    order below its tail index otherwise.
    """
    if tol <= 0:
        raise DomainError("tol must be positive")
    if l_max < 0:
        raise DomainError("l_max must be non-negative")
    sampler = psi_sampler(params)
    al = params.alpha
    q = 1.0 if sampler.tail_index > 1.5 else 0.5 * sampler.tail_index
    r = al + (1.0 - al) / (1.0 + q)
    mq = sampler.moment(q)
    n = 1 if size is None else int(size)
    block = 64
    weights_log = np.zeros(n)
    partial = np.zeros(n)
    terms_all: list[np.ndarray] = []
    done = np.zeros(n, dtype=bool)
    used = np.zeros(n, dtype=np.int64)
    i = 0
    while not done.all():
        stay = rng.random((n, block)) < al
        u = rng.random((n, block))
        u[u == 0.0] = np.finfo(float).tiny
        factors = np.where(stay, 0.0, np.log(u))
        if i == 0:
            factors[:, 0] = 0.0  # empty product for the first summand
        logw = weights_log[:, None] + np.cumsum(factors, axis=1)
        weights_log = logw[:, -1]
        contrib = np.exp(logw) * sampler.sample(rng, (n, block))
        contrib[done] = 0.0
        terms_all.append(contrib)
        partial += contrib.sum(axis=1)
        idx = i + block
        bound = (mq * np.exp(q * weights_log) * r / (1.0 - r)) ** (1.0 / q)
        newly = ~done & (bound < tol * (partial + 1.0))
        used[newly] = idx
        done |= newly
        i = idx
        if i > l_max + 10**5:
            raise QuadratureError("Z-process truncation did not converge")
    terms = np.concatenate(terms_all, axis=1)
    tails = np.cumsum(terms[:, ::-1], axis=1)[:, ::-1]
    width = terms.shape[1]
    if l_max + 1 > width:
        tails = np.pad(tails, ((0, 0), (0, l_max + 1 - width)))
    values = tails[:, : l_max + 1]
    if size is None:
        return values[0]
    return ZSample(values, used)


# ---------------------------------------------------------------------------
# Cox volume limit


@dataclass
class CoxDraw:
    s: np.ndarray
    x: np.ndarray
    small_mass: float
    path: LimitPath

    @property
    def volume(self) -> float:
        return float(self.x.sum() + self.small_mass)


def _a_of_s(params: RegimeParams, path: LimitPath, s: np.ndarray) -> np.ndarray:
    return s * path(s) / (params.alpha_hat - 1.0)


def cox_points(params: RegimeParams, t: float, eps: float, rng: np.random.Generator,
               y_min: float = 1e-4, path: LimitPath | None = None) -> CoxDraw:
    """Points ``(s, x)`` of the Cox process on ``[eps, t] x (0, inf)``.

    In the coordinates ``y = x s^-gamma`` the intensity is
    ``h(y, a(s)) / s dy ds``, dominated by ``K y^-beta / s``. Proposals are
    Pareto in ``y`` above ``y_min`` and log-uniform in ``s``, thinned by the
    ratio to the envelope. Points with ``y < y_min`` are replaced by their
    expected total contribution (``small_mass``).
    """
    if params.regime is Regime.INFINITE_MEAN:
        raise RegimeError("the Cox volume limit needs alpha > 1")
    if not 0 < eps < t:
        raise DomainError("need 0 < eps < t")
    k_env, beta = h_envelope(params)
    gam = params.gamma
    if path is None:
        path = alep_path(params.alpha_hat, 0.0, eps, t, rng)
    span = math.log(t / eps)
    mass = k_env * y_min ** (1.0 - beta) / (beta - 1.0) * span
    n = rng.poisson(mass)
    y = y_min * rng.random(n) ** (-1.0 / (beta - 1.0))
    s = eps * np.exp(span * rng.random(n))
    h = h_density(params, y, _a_of_s(params, path, s))
    env = k_env * y**-beta
    if np.any(h > env * (1.0 + 1e-9)):
        raise EnvelopeError("forest-size density exceeds its dominating envelope")
    keep = rng.random(n) * env <= h
    s, y = s[keep], y[keep]
    small = k_env * y_min ** (2.0 - beta) / (2.0 - beta) * (t**gam - eps**gam) / gam
    return CoxDraw(s, y * s**gam, small, path)


def cox_volume_sample(params: RegimeParams, t: float, eps: float | None, rng: np.random.Generator,
                      size: int | None = None, y_min: float = 1e-4):
    """Draws of ``int_eps^t int x Pi(dx, ds)``; ``eps`` defaults to ``0.01 t``."""
    eps = 0.01 * t if eps is None else eps
    n = 1 if size is None else int(size)
    out = np.array([cox_points(params, t, eps, rng, y_min).volume for _ in range(n)])
    return float(out[0]) if size is None else out


def window_intensity(params: RegimeParams, path: LimitPath, x_min: float, n_nodes: int = 200) -> float:
    """``int_eps^t int_{x_min}^inf lambda(dx, ds)`` along one envelope path."""
    gam = params.gamma
    edges = np.geomspace(path.eps, path.t_end, n_nodes // 8 + 1)
    edges = np.union1d(edges, path.breakpoints[(path.breakpoints > path.eps) & (path.breakpoints < path.t_end)])
    s, w = _gl_panels(edges, 8)
    tail = h_tail(params, x_min * s ** (-gam), _a_of_s(params, path, s))
    return float(np.sum(tail / s * w))


def laplace_exponent(params: RegimeParams, path: LimitPath, u: float) -> float:
    """``int int (1 - exp(-u x)) lambda(dx, ds)`` along one envelope path."""
    gam = params.gamma
    s, ws = _gl_panels(np.union1d(np.geomspace(path.eps, path.t_end, 17), path.breakpoints), 8)
    y_edges = np.concatenate([[0.0], np.geomspace(1e-12, 1e12, 97)])
    y, wy = _gl_panels(y_edges, 8)
    a = _a_of_s(params, path, s)
    x = y[None, :] * s[:, None] ** gam
    vals = -np.expm1(-u * x) * h_density(params, y[None, :], a[:, None]) / s[:, None]
    return float(np.sum(vals * wy[None, :] * ws[:, None]))
