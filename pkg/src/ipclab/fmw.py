"""Future-maximum-weight chain.

The chain stays put with probability ``1 - R(w) theta(w)`` and otherwise
jumps to ``theta^-1(U theta(w))``. Holding times are geometric, so a batch of
chains is advanced jump by jump instead of step by step. State is kept as
``log theta(W)`` and ``log W``; in the infinite-mean regime ``W_k`` decays
exponentially and would underflow in linear scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DomainError, RegimeError
from .offspring import Sibuya
from .survival import RESOLUTION, Regime, SurvivalSolver, alpha_hat


def _open_uniform(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniforms on (0, 1); exact 0 or 1 draws are redrawn."""
    u = rng.random(n)
    bad = u == 0.0
    while bad.any():
        u[bad] = rng.random(int(bad.sum()))
        bad = u == 0.0
    return u


@lru_cache(maxsize=4096)
def _theta(solver: SurvivalSolver, w: float) -> float:
    # a chain sits on the same level for many steps
    return solver.theta(w)


def jump_prob(solver: SurvivalSolver, w: float) -> float:
    """``R(w) theta(w) = 1 - w E[X (1 - w theta(w))^(X-1)]``."""
    if w <= solver.p_c:
        raise DomainError(f"jump probability needs w > p_c = {solver.p_c}, got {w}")
    if isinstance(solver.dist, Sibuya):
        return 1.0 - solver.dist.alpha
    theta = _theta(solver, w)
    return 1.0 - w * float(solver.dist.phi_prime(w * theta))


def _jump_prob_vec(solver: SurvivalSolver, log_w: np.ndarray, log_x: np.ndarray) -> np.ndarray:
    if isinstance(solver.dist, Sibuya):
        return np.full(log_w.shape, 1.0 - solver.dist.alpha)
    w = np.exp(log_w)
    return 1.0 - w * solver.dist.phi_prime(np.exp(log_w + log_x))


def sample_w0(solver: SurvivalSolver, rng: np.random.Generator, size=None):
    """``theta^-1(U)``: ``P(W_0 < p) = theta(p)`` because ``theta(1) = 1``."""
    n = 1 if size is None else size
    w = solver.theta_inv_vec(_open_uniform(rng, n))
    return float(w[0]) if size is None else w


def step(solver: SurvivalSolver, w: float, rng: np.random.Generator) -> float:
    if rng.random() >= jump_prob(solver, w):
        return w
    u = _open_uniform(rng, 1)[0]
    return solver.theta_inv(u * _theta(solver, w))


def quotient_factors(alpha: float, rng: np.random.Generator, size=None):
    """Ratio ``W_(k+1)/W_k`` of the Sibuya chain: 1 w.p. alpha, else ``U^((1-alpha)/alpha)``."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    n = 1 if size is None else size
    stay = rng.random(n) < alpha
    u = _open_uniform(rng, n)
    out = np.where(stay, 1.0, u ** ((1.0 - alpha) / alpha))
    return float(out[0]) if size is None else out


@dataclass
class FmwTrajectory:
    """Piecewise-constant path: level ``j`` holds from ``jump_steps[j]`` on."""

    k: int
    jump_steps: np.ndarray
    log_levels: np.ndarray
    log_thetas: np.ndarray
    p_c: float
    truncated_at: int | None = None

    @property
    def last_index(self) -> int:
        return self.k if self.truncated_at is None else self.truncated_at - 1

    @property
    def jump_indices(self) -> np.ndarray:
        return self.jump_steps[1:]

    def log_values(self) -> np.ndarray:
        idx = np.arange(self.last_index + 1)
        level = np.searchsorted(self.jump_steps, idx, side="right") - 1
        return self.log_levels[level]

    @property
    def values(self) -> np.ndarray:
        return np.exp(self.log_values())

    def log_w_at(self, i: int) -> float:
        return float(self.log_levels[np.searchsorted(self.jump_steps, i, side="right") - 1])


@dataclass
class ChainBatch:
    """Output of :func:`run_chains` for ``n`` independent chains."""

    k: int
    p_c: float
    final_log_w: np.ndarray
    final_log_theta: np.ndarray
    truncated_at: np.ndarray  # -1 when the chain reached k
    ev_trial: np.ndarray
    ev_step: np.ndarray
    ev_log_w: np.ndarray
    ev_log_theta: np.ndarray

    def trajectories(self) -> list[FmwTrajectory]:
        order = np.lexsort((self.ev_step, self.ev_trial))
        trial, steps = self.ev_trial[order], self.ev_step[order]
        lw, lt = self.ev_log_w[order], self.ev_log_theta[order]
        cuts = np.searchsorted(trial, np.arange(len(self.final_log_w) + 1))
        out = []
        for i in range(len(self.final_log_w)):
            sl = slice(cuts[i], cuts[i + 1])
            trunc = int(self.truncated_at[i])
            out.append(FmwTrajectory(self.k, steps[sl], lw[sl], lt[sl], self.p_c,
                                     None if trunc < 0 else trunc))
        return out


def run_chains(solver: SurvivalSolver, k: int, n: int, rng: np.random.Generator,
               keep_paths: bool = True) -> ChainBatch:
    """Advance ``n`` independent chains to step ``k``.

    A chain whose ``theta(W)`` would fall below the solver resolution stops
    early; ``truncated_at`` records the step of the unresolved jump.
    """
    if k < 0:
        raise DomainError("k must be non-negative")
    exact_log = isinstance(solver.dist, Sibuya)
    log_x = np.log(_open_uniform(rng, n))
    log_w = solver.log_theta_inv(log_x)
    pos = np.zeros(n, dtype=np.int64)
    truncated = np.full(n, -1, dtype=np.int64)
    events = [(np.arange(n), pos.copy(), log_w.copy(), log_x.copy())] if keep_paths else []
    active = np.arange(n)
    while active.size:
        jp = np.clip(_jump_prob_vec(solver, log_w[active], log_x[active]), 1e-300, 1.0)
        hold = rng.geometric(jp)
        nxt = pos[active] + hold
        active = active[nxt <= k]
        nxt = nxt[nxt <= k]
        if not active.size:
            break
        new_log_x = log_x[active] + np.log(_open_uniform(rng, active.size))
        if not exact_log:
            lost = new_log_x < np.log(RESOLUTION)
            truncated[active[lost]] = nxt[lost]
            active, nxt, new_log_x = active[~lost], nxt[~lost], new_log_x[~lost]
            if not active.size:
                break
        log_x[active] = new_log_x
        log_w[active] = solver.log_theta_inv(new_log_x)
        pos[active] = nxt
        if keep_paths:
            events.append((active, nxt, log_w[active].copy(), new_log_x.copy()))
    if events:
        ev = [np.concatenate(parts) for parts in zip(*events)]
    else:
        ev = [np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64), np.empty(0), np.empty(0)]
    return ChainBatch(k, solver.p_c, log_w, log_x, truncated, *ev)


def run_chain(solver: SurvivalSolver, k: int, rng: np.random.Generator) -> FmwTrajectory:
    return run_chains(solver, k, 1, rng).trajectories()[0]


def rescale(traj: FmwTrajectory, solver: SurvivalSolver) -> np.ndarray:
    """Regime rescaling for ``i = 1..k``.

    For finite mean: ``i (W_i - p_c)(alpha_hat - 1) / p_c``. For infinite mean:
    ``W_i^(1/i)``.
    """
    reg = solver.regime
    lv = traj.log_values()[1:]
    i = np.arange(1, lv.size + 1, dtype=float)
    if reg is Regime.INFINITE_MEAN:
        return np.exp(lv / i)
    if solver.p_c <= 0:
        raise RegimeError("finite-mean rescaling needs p_c > 0")
    ah = alpha_hat(solver.dist.alpha)
    return i * (np.exp(lv) - solver.p_c) * (ah - 1.0) / solver.p_c


def rescale_final(batch: ChainBatch, solver: SurvivalSolver) -> np.ndarray:
    """Rescaled ``W_k`` for every chain in a batch (same conventions as :func:`rescale`)."""
    k = batch.k
    if solver.regime is Regime.INFINITE_MEAN:
        return np.exp(batch.final_log_w / k)
    ah = alpha_hat(solver.dist.alpha)
    return k * (np.exp(batch.final_log_w) - solver.p_c) * (ah - 1.0) / solver.p_c
