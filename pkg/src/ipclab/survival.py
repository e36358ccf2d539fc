"""Survival probability of percolation on a Galton-Watson tree.

``theta(p)`` solves ``phi(p * theta) = theta`` with ``phi(s) = 1 - E[(1-s)^X]``.
Working in the variable ``s = p * theta`` turns the inverse map into a single
root find: ``theta^-1(x) = phi^-1(x) / x``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import optimize, special

from .errors import ConvergenceError, DomainError, RegimeError
from .offspring import OffspringDist, Sibuya

RESOLUTION = 1e-12
_EPS0 = 1e-15


class Regime(Enum):
    FINITE_VARIANCE = "alpha>2"
    INFINITE_VARIANCE = "alpha in (1,2)"
    INFINITE_MEAN = "alpha in (0,1)"


def regime_of(alpha: float) -> Regime:
    if alpha in (1.0, 2.0):
        raise RegimeError(f"alpha = {alpha} is a boundary case without a scaling regime")
    if alpha > 2:
        return Regime.FINITE_VARIANCE
    if alpha > 1:
        return Regime.INFINITE_VARIANCE
    if alpha > 0:
        return Regime.INFINITE_MEAN
    raise RegimeError(f"alpha must be positive, got {alpha}")


def alpha_hat(alpha: float) -> float:
    return min(alpha, 2.0)


def invert_phi(dist: OffspringDist, x, iters: int = 48) -> np.ndarray:
    """Vectorised solution of ``phi(s) = x`` for ``x`` in (0, 1].

    Uses the closed form when the law provides one; otherwise bisection on
    ``log s`` followed by a few bracketed Newton steps.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    closed = dist.phi_inv(x)
    if closed is not None:
        return np.asarray(closed, dtype=float)
    lo = np.full_like(x, -700.0)
    hi = np.zeros_like(x)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        above = dist.phi(np.exp(mid)) >= x
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
    s_lo, s_hi = np.exp(lo), np.exp(hi)
    s = s_hi
    for _ in range(4):
        step = (dist.phi(s) - x) / dist.phi_prime(s)
        s = np.clip(s - step, s_lo, s_hi)
    return s


@dataclass(frozen=True)
class SurvivalSolver:
    """Fixed-point solver for ``theta`` tied to one offspring law."""

    dist: OffspringDist
    tol: float = 1e-12
    max_iter: int = 10**6

    @property
    def p_c(self) -> float:
        return self.dist.p_c

    @property
    def regime(self) -> Regime:
        return regime_of(self.dist.alpha)

    # -- theta --------------------------------------------------------------------
    def theta_status(self, p: float) -> tuple[float, bool]:
        """Return ``(theta, below_resolution)``."""
        if not 0.0 <= p <= 1.0:
            raise DomainError(f"p must lie in [0, 1], got {p}")
        if p == 0.0 or p * self.dist.mean <= 1.0:
            return 0.0, False
        if p == 1.0:
            return 1.0, False
        phi = self.dist.phi

        def g(theta: float) -> float:
            return float(phi(p * theta)) - theta

        if g(_EPS0) <= 0.0:
            return 0.0, True
        try:
            theta = optimize.brentq(g, _EPS0, 1.0, xtol=1e-300, rtol=4 * np.finfo(float).eps,
                                    maxiter=min(self.max_iter, 10**4))
        except RuntimeError as exc:
            raise ConvergenceError(f"theta({p}) did not converge in [{_EPS0}, 1]: {exc}") from None
        slope = p * float(self.dist.phi_prime(p * theta)) - 1.0
        if slope < 0:
            polished = theta - g(theta) / slope
            if 0 < polished <= 1 and abs(g(polished)) <= abs(g(theta)):
                theta = polished
        if theta < RESOLUTION:
            return 0.0, True
        return theta, False

    def theta(self, p: float) -> float:
        return self.theta_status(p)[0]

    def theta_vec(self, p, iters: int = 80) -> np.ndarray:
        """Vectorised ``theta`` by bisection on ``log theta`` plus Newton polish.

        Values below the resolution come back as 0, like :meth:`theta`.
        """
        p = np.atleast_1d(np.asarray(p, dtype=float))
        if np.any((p < 0) | (p > 1)):
            raise DomainError("p must lie in [0, 1]")
        out = np.zeros_like(p)
        with np.errstate(invalid="ignore"):  # 0 * inf for infinite-mean laws
            live = (p > 0) & (p * self.dist.mean > 1.0)
        q = p[live]
        lo = np.full(q.shape, math.log(_EPS0))
        hi = np.zeros_like(q)
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            th = np.exp(mid)
            above = self.dist.phi(q * th) >= th
            lo = np.where(above, mid, lo)
            hi = np.where(above, hi, mid)
        th = np.exp(0.5 * (lo + hi))
        for _ in range(2):
            g = self.dist.phi(q * th) - th
            slope = q * self.dist.phi_prime(q * th) - 1.0
            step = np.where(slope < 0, g / slope, 0.0)
            th = np.clip(th - step, np.exp(lo), np.exp(hi))
        th[th < RESOLUTION] = 0.0
        out[live] = th
        return out

    def theta_hat(self, p: float) -> float:
        return p * self.theta(p)

    def eta(self, p: float) -> float:
        return 1.0 - self.theta(p)

    def residual(self, p: float) -> float:
        theta = self.theta(p)
        return abs(1.0 - theta - self.dist.tilted_moment(p * theta, 0))

    def theta_prime(self, p: float) -> float:
        if p <= self.p_c:
            raise DomainError(f"theta' needs p > p_c = {self.p_c}, got {p}")
        theta, low = self.theta_status(p)
        if low:
            raise DomainError(f"theta({p}) is below numerical resolution")
        m1 = float(self.dist.phi_prime(p * theta))
        return theta * m1 / (1.0 - p * m1)

    def theta_inv(self, x: float) -> float:
        if not 0.0 < x <= 1.0:
            raise DomainError(f"theta^-1 needs x in (0, 1], got {x}")
        return float(invert_phi(self.dist, x)[0]) / x

    def theta_inv_vec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return invert_phi(self.dist, x) / x

    def log_theta_inv(self, log_x: np.ndarray) -> np.ndarray:
        """``log theta^-1(exp(log_x))``, exact in log space where possible."""
        log_x = np.asarray(log_x, dtype=float)
        if isinstance(self.dist, Sibuya):
            # phi(s) = s^alpha, so theta^-1(x) = x^(1/alpha - 1)
            return (1.0 / self.dist.alpha - 1.0) * log_x
        return np.log(self.theta_inv_vec(np.exp(log_x)))

    # -- critical behaviour ---------------------------------------------------------
    def asymptotics(self) -> tuple[float, float]:
        """``(nu, C_theta)`` with ``theta(p) ~ C_theta (p - p_c)^nu``."""
        d = self.dist
        a = d.alpha
        reg = regime_of(a)
        if reg is Regime.FINITE_VARIANCE:
            factorial2 = d.m2 - d.mean
            if factorial2 <= 0:
                raise RegimeError("degenerate law with E[X(X-1)] = 0 has no critical window")
            return 1.0, 2.0 * d.mean**3 / factorial2
        if reg is Regime.INFINITE_VARIANCE:
            nu = 1.0 / (a - 1.0)
            c = (d.mean ** (a + 1.0) / (d.c_x * -special.gamma(1.0 - a))) ** nu
            return nu, float(c)
        nu = a / (1.0 - a)
        return nu, float((special.gamma(1.0 - a) * d.c_x) ** (1.0 / (1.0 - a)))


def critical_fit(solver: SurvivalSolver, gaps=(1e-2, 1e-3, 1e-4)) -> list[float]:
    """``log theta(p_c + g) - nu log g`` for each gap, for comparing with ``log C``."""
    nu, _ = solver.asymptotics()
    return [math.log(solver.theta(solver.p_c + g)) - nu * math.log(g) for g in gaps]
