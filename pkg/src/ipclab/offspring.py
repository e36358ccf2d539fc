"""Offspring laws on {1, 2, ...}.

Each law exposes its probability mass function, tail, exact sampler and the
tilted moments ``E[(1-s)^X]``, ``E[X (1-s)^(X-1)]`` and
``E[X^2 (1-s)^(X-1)]``. The function ``phi(s) = 1 - E[(1-s)^X]`` is
evaluated without cancellation so that fixed-point solvers stay accurate
when ``s`` is many orders of magnitude below one.

Power-tailed laws (``Zeta`` and ``Table``) share one engine. Near ``s = 0``
the tilted series are summed through the expansion of the polylogarithm
around ``z = 1``; away from zero the series is short and summed directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from pathlib import Path

import numpy as np
from scipy import special

from .errors import DivergenceError, DomainError

INT_CLIP = 2.0**62
SAMPLE_TABLE_LEN = 10**6
_SPLIT_MU = 1.0
_EXPANSION_TERMS = 48


def _as_array(x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    return np.atleast_1d(arr), arr.ndim == 0


def _ret(arr: np.ndarray, scalar: bool):
    return float(arr[0]) if scalar else arr


def _mu_of(s: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return -np.log1p(-s)


class OffspringDist:
    """Base class. Subclasses are frozen dataclasses."""

    alpha: float

    # -- descriptive quantities -------------------------------------------------
    @property
    def c_x(self) -> float:
        raise NotImplementedError

    @property
    def mean(self) -> float:
        raise NotImplementedError

    @property
    def m2(self) -> float:
        raise NotImplementedError

    @property
    def p_c(self) -> float:
        mu = self.mean
        return 0.0 if math.isinf(mu) else 1.0 / mu

    @property
    def variance(self) -> float:
        m2 = self.m2
        return math.inf if math.isinf(m2) else m2 - self.mean**2

    @property
    def spec(self) -> str:
        raise NotImplementedError

    @property
    def finite_support(self) -> int | None:
        """Largest support point if the support is finite, else ``None``."""
        return None

    # -- mass functions ---------------------------------------------------------
    def pmf(self, l):
        raise NotImplementedError

    def tail(self, x):
        """``P(X > x)``."""
        raise NotImplementedError

    def cdf(self, x):
        arr, scalar = _as_array(x)
        return _ret(1.0 - np.atleast_1d(self.tail(arr)), scalar)

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    # -- tilted moments ---------------------------------------------------------
    def phi(self, s):
        """``1 - E[(1-s)^X]``, accurate for tiny ``s``."""
        raise NotImplementedError

    def phi_prime(self, s):
        """``E[X (1-s)^(X-1)]``."""
        raise NotImplementedError

    def second_tilted(self, s):
        """``E[X^2 (1-s)^(X-1)]``."""
        raise NotImplementedError

    def phi_inv(self, x):
        """Closed-form inverse of ``phi`` where available, else ``None``."""
        return None

    def tilted_moment(self, s: float, order: int) -> float:
        if not 0.0 <= s <= 1.0:
            raise DomainError(f"s must lie in [0, 1], got {s}")
        if order == 0:
            return 1.0 - float(self.phi(s))
        if order == 1:
            if s == 0.0 and math.isinf(self.mean):
                raise DivergenceError("E[X] is infinite")
            return float(self.phi_prime(s))
        if order == 2:
            if s == 0.0 and math.isinf(self.m2):
                raise DivergenceError("E[X^2] is infinite")
            return float(self.second_tilted(s))
        raise DomainError(f"order must be 0, 1 or 2, got {order}")

    def __str__(self) -> str:
        return self.spec


# ---------------------------------------------------------------------------
# light-tailed laws


@dataclass(frozen=True)
class Constant(OffspringDist):
    d: int

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise DomainError(f"Constant needs an integer d >= 1, got {self.d}")

    alpha = math.inf

    @property
    def c_x(self) -> float:
        return 0.0

    @property
    def mean(self) -> float:
        return float(self.d)

    @property
    def m2(self) -> float:
        return float(self.d) ** 2

    @property
    def spec(self) -> str:
        return f"constant:d={self.d}"

    @property
    def finite_support(self) -> int:
        return self.d

    def pmf(self, l):
        arr, scalar = _as_array(l)
        return _ret((arr == self.d).astype(float), scalar)

    def tail(self, x):
        arr, scalar = _as_array(x)
        return _ret((arr < self.d).astype(float), scalar)

    def sample(self, rng, size=None):
        if size is None:
            return self.d
        return np.full(size, self.d, dtype=np.int64)

    def phi(self, s):
        arr, scalar = _as_array(s)
        with np.errstate(divide="ignore"):  # s = 1 gives log 0 = -inf, hence phi = 1
            return _ret(-np.expm1(self.d * np.log1p(-arr)), scalar)

    def phi_prime(self, s):
        arr, scalar = _as_array(s)
        return _ret(self.d * (1.0 - arr) ** (self.d - 1), scalar)

    def second_tilted(self, s):
        arr, scalar = _as_array(s)
        return _ret(self.d**2 * (1.0 - arr) ** (self.d - 1), scalar)

    def phi_inv(self, x):
        arr, scalar = _as_array(x)
        with np.errstate(divide="ignore"):
            return _ret(-np.expm1(np.log1p(-arr) / self.d), scalar)


@dataclass(frozen=True)
class ShiftedGeometric(OffspringDist):
    """``P(X = l) = q (1-q)^(l-1)`` for ``l >= 1``."""

    q: float

    def __post_init__(self):
        if not 0.0 < self.q <= 1.0:
            raise DomainError(f"q must lie in (0, 1], got {self.q}")

    alpha = math.inf

    @property
    def c_x(self) -> float:
        return 0.0

    @property
    def mean(self) -> float:
        return 1.0 / self.q

    @property
    def m2(self) -> float:
        return (2.0 - self.q) / self.q**2

    @property
    def spec(self) -> str:
        return f"geom1:q={self.q!r}"

    def pmf(self, l):
        arr, scalar = _as_array(l)
        out = np.where(arr >= 1, self.q * (1.0 - self.q) ** np.maximum(arr - 1, 0), 0.0)
        return _ret(out, scalar)

    def tail(self, x):
        arr, scalar = _as_array(x)
        return _ret((1.0 - self.q) ** np.floor(np.maximum(arr, 0.0)), scalar)

    def sample(self, rng, size=None):
        out = rng.geometric(self.q, size=size)
        return int(out) if size is None else out.astype(np.int64)

    def _den(self, s):
        return self.q + s - self.q * s

    def phi(self, s):
        arr, scalar = _as_array(s)
        return _ret(arr / self._den(arr), scalar)

    def phi_prime(self, s):
        arr, scalar = _as_array(s)
        return _ret(self.q / self._den(arr) ** 2, scalar)

    def second_tilted(self, s):
        arr, scalar = _as_array(s)
        den = self._den(arr)
        return _ret(self.q / den**2 + (1.0 - arr) * 2.0 * self.q * (1.0 - self.q) / den**3, scalar)

    def phi_inv(self, x):
        arr, scalar = _as_array(x)
        return _ret(arr * self.q / (1.0 - arr * (1.0 - self.q)), scalar)


# ---------------------------------------------------------------------------
# Sibuya


@dataclass(frozen=True)
class Sibuya(OffspringDist):
    """Generating function ``1 - (1-s)^alpha`` with ``alpha`` in (0, 1)."""

    alpha: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise DomainError(f"Sibuya needs alpha in (0, 1), got {self.alpha}")

    @property
    def c_x(self) -> float:
        return 1.0 / math.gamma(1.0 - self.alpha)

    @property
    def mean(self) -> float:
        return math.inf

    @property
    def m2(self) -> float:
        return math.inf

    @property
    def spec(self) -> str:
        return f"sibuya:alpha={self.alpha!r}"

    def pmf(self, l):
        arr, scalar = _as_array(l)
        a = self.alpha
        safe = np.maximum(arr, 1.0)
        out = np.where(arr >= 1, a * self.c_x / special.poch(safe - a, 1.0 + a), 0.0)
        return _ret(out, scalar)

    def tail(self, x):
        arr, scalar = _as_array(x)
        n = np.floor(np.maximum(arr, 0.0))
        out = self.c_x / special.poch(n + 1.0 - self.alpha, self.alpha)
        return _ret(np.minimum(out, 1.0), scalar)

    def sample(self, rng, size=None):
        # Geometric(P) mixed over P ~ Beta(alpha, 1 - alpha).
        n = 1 if size is None else size
        p = rng.beta(self.alpha, 1.0 - self.alpha, size=n)
        u = 1.0 - rng.random(size=n)
        with np.errstate(divide="ignore"):
            x = 1.0 + np.floor(np.log(u) / np.log1p(-p))
        x = np.minimum(np.nan_to_num(x, nan=INT_CLIP, posinf=INT_CLIP), INT_CLIP).astype(np.int64)
        return int(x[0]) if size is None else x

    def phi(self, s):
        arr, scalar = _as_array(s)
        return _ret(arr**self.alpha, scalar)

    def phi_prime(self, s):
        arr, scalar = _as_array(s)
        with np.errstate(divide="ignore"):
            return _ret(self.alpha * arr ** (self.alpha - 1.0), scalar)

    def second_tilted(self, s):
        arr, scalar = _as_array(s)
        a = self.alpha
        with np.errstate(divide="ignore", invalid="ignore"):
            out = a * arr ** (a - 1.0) + (1.0 - arr) * a * (1.0 - a) * arr ** (a - 2.0)
        return _ret(out, scalar)

    def phi_inv(self, x):
        arr, scalar = _as_array(x)
        return _ret(arr ** (1.0 / self.alpha), scalar)


# ---------------------------------------------------------------------------
# power-tail engine


@lru_cache(maxsize=256)
def _expansion(b: float) -> tuple[bool, float, np.ndarray]:
    """Coefficients of ``Li_b(e^-mu)`` around ``mu = 0``.

    Returns ``(is_integer, singular_coeff, series)`` where the regular part is
    ``sum_k series[k] * mu^k``. For non-integer ``b`` the singular part is
    ``singular_coeff * mu^(b-1)``; for integer ``b = n >= 1`` it is
    ``(-mu)^(n-1)/(n-1)! * (H_(n-1) - log mu)`` and ``series[n-1] = 0``.
    """
    k = np.arange(_EXPANSION_TERMS)
    is_int = float(b).is_integer()
    if is_int and b < 1:
        raise DomainError(f"integer polylog order {b} below 1 is not needed here")
    zeta_vals = np.array([special.zeta(b - kk) if b - kk != 1.0 else 0.0 for kk in k])
    series = zeta_vals * (-1.0) ** k / special.factorial(k)
    if is_int:
        series[int(b) - 1] = 0.0
        return True, 0.0, series
    return False, float(special.gamma(1.0 - b)), series


def _li_parts(b: float, mu: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Singular part and regular part (without its constant term) of Li_b."""
    is_int, g, series = _expansion(b)
    if is_int:
        n = int(b)
        harmonic = sum(1.0 / j for j in range(1, n))
        sing = (-mu) ** (n - 1) / math.factorial(n - 1) * (harmonic - np.log(mu))
    else:
        sing = g * mu ** (b - 1.0)
    reg = np.polynomial.polynomial.polyval(mu, np.concatenate([[0.0], series[1:]]))
    return sing, reg


def _head_power_sums(b: float, L: int, mu: np.ndarray, deficit: bool) -> np.ndarray:
    if L == 0:
        return np.zeros_like(mu)
    l = np.arange(1, L + 1, dtype=float)
    weight = l ** (-b)
    if deficit:
        return (-np.expm1(-np.outer(mu, l))) @ weight
    return np.exp(-np.outer(mu, l)) @ weight


def _tail_plain(b: float, L: int, mu: np.ndarray) -> np.ndarray:
    """``sum_{l > L} l^-b e^{-mu l}`` for ``mu > 0``."""
    out = np.empty_like(mu)
    small = mu <= _SPLIT_MU
    if small.any():
        m = mu[small]
        if b == 0.0:
            li = 1.0 / np.expm1(m)
        else:
            sing, reg = _li_parts(b, m)
            li = sing + _expansion(b)[2][0] + reg
        out[small] = li - _head_power_sums(b, L, m, deficit=False)
    if (~small).any():
        m = mu[~small]
        n_terms = int(math.ceil(40.0 / m.min())) + 2
        l = np.arange(L + 1, L + 1 + n_terms, dtype=float)
        out[~small] = np.exp(-np.outer(m, l)) @ (l ** (-b))
    return out


def _tail_deficit(b: float, L: int, mu: np.ndarray) -> np.ndarray:
    """``sum_{l > L} l^-b (1 - e^{-mu l})`` for ``b > 1`` and ``mu > 0``."""
    out = np.empty_like(mu)
    small = mu <= _SPLIT_MU
    if small.any():
        m = mu[small]
        sing, reg = _li_parts(b, m)
        out[small] = -(sing + reg) - _head_power_sums(b, L, m, deficit=True)
    if (~small).any():
        out[~small] = special.zeta(b, L + 1) - _tail_plain(b, L, mu[~small])
    return out


class _PowerTail(OffspringDist):
    """Explicit head on ``1..L`` followed by ``K l^-(alpha+1)`` for ``l > L``."""

    @property
    def _head(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def _K(self) -> float:
        raise NotImplementedError

    @property
    def _L(self) -> int:
        return len(self._head)

    @property
    def c_x(self) -> float:
        return self._K / self.alpha if self._K > 0 else 0.0

    @cached_property
    def _head_l(self) -> np.ndarray:
        return np.arange(1, self._L + 1, dtype=float)

    @cached_property
    def mean(self) -> float:
        head = float(self._head @ self._head_l)
        if self._K == 0:
            return head
        return head + self._K * special.zeta(self.alpha, self._L + 1) if self.alpha > 1 else math.inf

    @cached_property
    def m2(self) -> float:
        head = float(self._head @ self._head_l**2)
        if self._K == 0:
            return head
        return head + self._K * special.zeta(self.alpha - 1.0, self._L + 1) if self.alpha > 2 else math.inf

    @property
    def finite_support(self) -> int | None:
        if self._K > 0:
            return None
        nz = np.flatnonzero(self._head)
        return int(nz[-1]) + 1

    def pmf(self, l):
        arr, scalar = _as_array(l)
        out = np.zeros_like(arr)
        L = self._L
        in_head = (arr >= 1) & (arr <= L)
        out[in_head] = self._head[arr[in_head].astype(np.int64) - 1]
        beyond = arr > L
        if self._K > 0:
            out[beyond] = self._K * arr[beyond] ** (-(self.alpha + 1.0))
        return _ret(out, scalar)

    @cached_property
    def _head_sf(self) -> np.ndarray:
        """``P(X > l)`` for ``l = 0..L`` computed from the far end."""
        tail_mass = self._K * special.zeta(self.alpha + 1.0, self._L + 1) if self._K > 0 else 0.0
        rev = np.cumsum(self._head[::-1])[::-1]
        return np.concatenate([rev, [0.0]]) + tail_mass

    def _tail_beyond(self, n: np.ndarray) -> np.ndarray:
        if self._K == 0:
            return np.zeros_like(n)
        return self._K * special.zeta(self.alpha + 1.0, n + 1.0)

    def tail(self, x):
        arr, scalar = _as_array(x)
        n = np.floor(np.maximum(arr, 0.0))
        out = np.empty_like(n)
        low = n <= self._L
        out[low] = self._head_sf[n[low].astype(np.int64)]
        out[~low] = self._tail_beyond(n[~low])
        return _ret(out, scalar)

    @cached_property
    def _sf_table(self) -> np.ndarray:
        if self._K == 0:
            return self._head_sf
        n = max(self._L, SAMPLE_TABLE_LEN)
        extra = np.arange(self._L + 1, n + 1, dtype=float)
        return np.concatenate([self._head_sf, self._tail_beyond(extra)])

    def sample(self, rng, size=None):
        n = 1 if size is None else size
        t = 1.0 - rng.random(size=n)
        table = self._sf_table
        idx = np.searchsorted(-table, -t, side="right").astype(np.int64)
        deep = idx >= len(table)
        if deep.any():
            idx[deep] = self._invert_far_tail(t[deep], len(table) - 1)
        return int(idx[0]) if size is None else idx

    def _invert_far_tail(self, t: np.ndarray, last: int) -> np.ndarray:
        a = self.alpha
        guess = (a * t / self._K) ** (-1.0 / a) - 0.5
        l = np.ceil(np.maximum(guess, last + 1.0))
        exact = l < 2.0**52
        for _ in range(8):
            if not exact.any():
                break
            le = l[exact]
            te = t[exact]
            up = self._tail_beyond(le) >= te
            down = (le - 1 > last) & (self._tail_beyond(le - 1.0) < te)
            le = le + up - down
            l[exact] = le
            if not (up.any() or down.any()):
                break
        return np.minimum(l, INT_CLIP).astype(np.int64)

    # tilted sums
    def _mu_split(self, s):
        arr, scalar = _as_array(s)
        if np.any((arr < 0) | (arr > 1)):
            raise DomainError("s must lie in [0, 1]")
        return arr, scalar, _mu_of(arr)

    def _head_tilted(self, mu: np.ndarray, power: int) -> np.ndarray:
        if self._L == 0:
            return np.zeros_like(mu)
        l = self._head_l
        with np.errstate(invalid="ignore"):
            z = np.exp(-np.outer(mu, l - 1.0))
        z[:, 0] = 1.0
        return z @ (self._head * l**power)

    def phi(self, s):
        arr, scalar, mu = self._mu_split(s)
        out = np.zeros_like(arr)
        mid = (arr > 0) & (arr < 1)
        out[arr == 1] = 1.0
        m = mu[mid]
        if m.size:
            val = np.zeros_like(m)
            if self._L:
                val += (-np.expm1(-np.outer(m, self._head_l))) @ self._head
            if self._K > 0:
                val += self._K * _tail_deficit(self.alpha + 1.0, self._L, m)
            out[mid] = val
        return _ret(out, scalar)

    def _tilted(self, s, power: int, raw_moment: float):
        arr, scalar, mu = self._mu_split(s)
        out = np.empty_like(arr)
        zero = arr == 0
        out[zero] = raw_moment
        one = arr == 1
        out[one] = float(self.pmf(1))
        mid = ~(zero | one)
        m = mu[mid]
        if m.size:
            val = self._head_tilted(m, power)
            if self._K > 0:
                val += self._K * np.exp(m) * _tail_plain(self.alpha + 1.0 - power, self._L, m)
            out[mid] = val
        return _ret(out, scalar)

    def phi_prime(self, s):
        return self._tilted(s, 1, self.mean)

    def second_tilted(self, s):
        return self._tilted(s, 2, self.m2)


@dataclass(frozen=True)
class Zeta(_PowerTail):
    """``P(X = l) = l^-(alpha+1) / zeta(alpha+1)``."""

    alpha: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise DomainError(f"Zeta needs alpha > 0, got {self.alpha}")

    @property
    def _head(self) -> np.ndarray:
        return np.empty(0)

    @property
    def _L(self) -> int:
        return 0

    @cached_property
    def _K(self) -> float:
        return 1.0 / float(special.zeta(self.alpha + 1.0))

    @property
    def spec(self) -> str:
        return f"zeta:alpha={self.alpha!r}"


@dataclass(frozen=True)
class Table(_PowerTail):
    """Explicit probabilities on ``1..L`` plus a power tail ``K l^-(alpha+1)``.

    The tail weight ``K`` is fixed by the leftover mass. The annotated tail
    constant must agree with ``K / alpha`` within 1%. Use ``alpha = inf``
    for a table that already sums to one.
    """

    probs: tuple[float, ...]
    alpha: float
    c_x_annotated: float
    source: str = ""

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size == 0 or np.any(p < 0):
            raise DomainError("table probabilities must be a non-empty non-negative vector")
        rest = 1.0 - p.sum()
        if rest < -1e-12:
            raise DomainError(f"table mass exceeds one by {-rest:.3g}")
        if math.isinf(self.alpha):
            if rest > 1e-12:
                raise DomainError("a finite table must sum to one when alpha = inf")
            return
        if not self.alpha > 0:
            raise DomainError("alpha must be positive")
        implied = self._K / self.alpha
        if not (abs(implied - self.c_x_annotated) <= 0.01 * abs(self.c_x_annotated)):
            raise DomainError(
                f"annotated c_X={self.c_x_annotated} disagrees with the leftover mass "
                f"(implied {implied:.6g})"
            )

    @cached_property
    def _head(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=float)

    @cached_property
    def _K(self) -> float:
        if math.isinf(self.alpha):
            return 0.0
        rest = max(1.0 - float(np.sum(self.probs)), 0.0)
        return rest / float(special.zeta(self.alpha + 1.0, len(self.probs) + 1))

    @property
    def spec(self) -> str:
        return f"table:path={self.source}"

    @classmethod
    def from_csv(cls, path: str | Path) -> "Table":
        """Read ``l,prob`` rows preceded by a ``# alpha=<a> cx=<c>`` line."""
        alpha = cx = None
        rows: dict[int, float] = {}
        for raw in Path(path).read_text().splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                for token in line[1:].split():
                    key, _, val = token.partition("=")
                    if key == "alpha":
                        alpha = float(val)
                    elif key == "cx":
                        cx = float(val)
                continue
            left, right = (part.strip() for part in line.split(",")[:2])
            if not left.lstrip("-").isdigit():
                continue  # column header
            rows[int(left)] = float(right)
        if alpha is None or cx is None:
            raise DomainError("table file needs a '# alpha=<a> cx=<c>' header line")
        if not rows or min(rows) < 1:
            raise DomainError("table support must start at l >= 1")
        probs = np.zeros(max(rows))
        for l, p in rows.items():
            probs[l - 1] = p
        return cls(tuple(probs.tolist()), alpha, cx, str(path))


# ---------------------------------------------------------------------------
# spec strings


def _parse_params(text: str) -> dict[str, str]:
    out = {}
    for item in filter(None, text.split(",")):
        key, sep, val = item.partition("=")
        if not sep:
            raise DomainError(f"malformed parameter '{item}'")
        out[key.strip()] = val.strip()
    return out


def parse_dist(spec: str) -> OffspringDist:
    """Build a law from ``kind:key=value`` such as ``zeta:alpha=2.3``."""
    kind, _, rest = spec.partition(":")
    params = _parse_params(rest)
    kind = kind.strip().lower()
    try:
        if kind == "constant":
            return Constant(int(params["d"]))
        if kind == "geom1":
            return ShiftedGeometric(float(params["q"]))
        if kind == "zeta":
            return Zeta(float(params["alpha"]))
        if kind == "sibuya":
            return Sibuya(float(params["alpha"]))
        if kind == "table":
            return Table.from_csv(params["path"])
    except KeyError as exc:
        raise DomainError(f"missing parameter {exc} in '{spec}'") from None
    raise DomainError(f"unknown offspring kind '{kind}'")
