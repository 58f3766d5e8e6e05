"""Hybrid sampling/gradient solver: bounded CMA-ES with candidate repair,
adaptive penalty, top-k mean refit and a single gradient line-search step.

Variants: 'hybrid' (the full algorithm), 'vanilla_cmaes' (plain clipping, no
penalty, no gradient step), and 'multi_gradient' (gradient refinement
iterated until the line search stops improving).

Objectives are batch-evaluated: L maps a (B, D) candidate matrix to (B,)
costs. grad_fn maps a single (D,) point to its raw gradient dL/dm; the
refinement steps along the negated (descent) direction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

VARIANT_HYBRID = "hybrid"
VARIANT_VANILLA = "vanilla_cmaes"
VARIANT_MULTI = "multi_gradient"


class DimensionMismatch(ValueError):
    """Decision dimension inconsistent with bounds or initial mean."""


@dataclass
class SolverConfig:
    """Solver hyperparameters; defaults follow the benchmark constants."""

    bounds: np.ndarray  # (D,) per-coordinate symmetric box
    population: int = 200
    elites: int = 50
    sigma0: float = 0.01
    beta_max: float = 1.0
    max_step: int = 100
    stagnation_patience: int = 3
    stagnation_rtol: float = 1e-4
    variant: str = VARIANT_HYBRID
    line_points: Optional[int] = None  # defaults to population
    multi_max_rounds: int = 10
    multi_tol: float = 1e-6

    def __post_init__(self):
        self.bounds = np.asarray(self.bounds, dtype=float)
        if self.elites > self.population:
            raise ValueError("elites must not exceed population")
        if self.sigma0 <= 0.0 or self.max_step < 1:
            raise ValueError("sigma0 must be positive and max_step >= 1")
        if self.variant not in (VARIANT_HYBRID, VARIANT_VANILLA, VARIANT_MULTI):
            raise ValueError(f"unknown solver variant {self.variant!r}")


@dataclass
class SolverState:
    """CMA-ES distribution state."""

    m: np.ndarray
    sigma: float
    C: np.ndarray
    p_sigma: np.ndarray
    p_c: np.ndarray
    step: int = 0


def repair_and_penalize(a_i: np.ndarray, gamma: np.ndarray, objective) -> tuple:
    """Clip a candidate to the box and penalize the clipped distance.

    Returns (a_r, l_i) with l_i = L(a_r) + alpha * d_i, d_i = ||a_i - a_r||^2
    and alpha = |L(a_i)| / d_i (alpha = 1 when L(a_i) = 0, alpha = 0 when the
    candidate was feasible). For positive costs this is the adaptive weight
    exp(log L - log d).
    """
    a_i = np.asarray(a_i, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    a_r = np.clip(a_i, -gamma, gamma)
    d = float(np.sum((a_i - a_r) ** 2))
    l_r = float(objective(a_r[None, :])[0])
    if d <= 0.0:
        return a_r, l_r
    l_raw = float(objective(a_i[None, :])[0])
    alpha = abs(l_raw) / d if l_raw != 0.0 else 1.0
    return a_r, l_r + alpha * d


def gradient_refine(m: np.ndarray, L, grad_fn, beta_max: float, k: int,
                    bounds: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One line-search refinement of the mean along the descent direction.

    Samples k step sizes uniformly in [0, beta_max] (beta = 0 always
    included), evaluates L at the clipped line points and returns the best;
    the result is never worse than m on the sampled line.
    """
    m = np.asarray(m, dtype=float)
    descent = -np.asarray(grad_fn(m), dtype=float)
    if not np.all(np.isfinite(descent)):
        return m.copy()
    betas = np.concatenate([[0.0], rng.uniform(0.0, beta_max, k)])
    pts = np.clip(m[None, :] + betas[:, None] * descent[None, :], -bounds, bounds)
    vals = np.asarray(L(pts), dtype=float)
    best = int(np.argmin(vals))
    return pts[best].copy()


def _cma_weights(D: int, mu: int):
    mueff = float(mu)  # equal recombination weights
    c_sigma = (mueff + 2.0) / (D + mueff + 5.0)
    d_sigma = 1.0 + 2.0 * max(0.0, np.sqrt((mueff - 1.0) / (D + 1.0)) - 1.0) + c_sigma
    c_c = (4.0 + mueff / D) / (D + 4.0 + 2.0 * mueff / D)
    c_1 = 2.0 / ((D + 1.3) ** 2 + mueff)
    c_mu = min(1.0 - c_1, 2.0 * (mueff - 2.0 + 1.0 / mueff) / ((D + 2.0) ** 2 + mueff))
    chi_n = np.sqrt(D) * (1.0 - 1.0 / (4.0 * D) + 1.0 / (21.0 * D * D))
    return mueff, c_sigma, d_sigma, c_c, c_1, c_mu, chi_n


def _decompose(C: np.ndarray):
    evals, evecs = np.linalg.eigh(0.5 * (C + C.T))
    evals = np.clip(evals, 1e-12, None)
    return evals, evecs


@dataclass
class OptimizeResult:
    best: np.ndarray
    best_cost: float
    cost_history: np.ndarray  # L(m) after each step, entry 0 = initial mean
    state: SolverState
    stopped_by: str


def optimize(
    L: Callable[[np.ndarray], np.ndarray],
    grad_fn: Optional[Callable[[np.ndarray], np.ndarray]],
    cfg: SolverConfig,
    seed,
    m0: Optional[np.ndarray] = None,
) -> OptimizeResult:
    """Run the solver loop and return the best in-bounds point evaluated.

    cost_history[t] is the objective at the distribution mean after step t
    (entry 0 is the initial mean), the stagnation/halting signal and the
    solver-comparison metric. Identical seeds give identical histories.
    """
    D = len(cfg.bounds)
    rng = np.random.default_rng(seed)
    if m0 is None:
        m = np.zeros(D)
    else:
        m = np.asarray(m0, dtype=float).copy()
        if m.shape != (D,):
            raise DimensionMismatch(f"m0 shape {m.shape} vs bounds ({D},)")
    if cfg.variant != VARIANT_VANILLA and grad_fn is None:
        raise ValueError(f"variant {cfg.variant!r} requires grad_fn")
    m = np.clip(m, -cfg.bounds, cfg.bounds)

    state = SolverState(m=m, sigma=cfg.sigma0, C=np.eye(D),
                        p_sigma=np.zeros(D), p_c=np.zeros(D))
    mu = cfg.elites
    mueff, c_sigma, d_sigma, c_c, c_1, c_mu, chi_n = _cma_weights(D, mu)
    k = cfg.population
    k_line = cfg.line_points if cfg.line_points is not None else cfg.population

    cost_history = [float(L(state.m[None, :])[0])]
    best = state.m.copy()
    best_cost = cost_history[0]
    stagnant = 0
    stopped_by = "max_step"

    for step in range(1, cfg.max_step + 1):
        evals, evecs = _decompose(state.C)
        z = rng.standard_normal((k, D))
        raw = state.m[None, :] + state.sigma * (z * np.sqrt(evals)[None, :]) @ evecs.T
        repaired = np.clip(raw, -cfg.bounds, cfg.bounds)
        l_rep = np.asarray(L(repaired), dtype=float)
        if cfg.variant == VARIANT_VANILLA:
            l_sel = l_rep
        else:
            d = np.sum((raw - repaired) ** 2, axis=1)
            oob = np.nonzero(d > 0.0)[0]
            l_sel = l_rep.copy()
            if len(oob):
                l_raw = np.asarray(L(raw[oob]), dtype=float)
                penalty = np.where(l_raw != 0.0, np.abs(l_raw), d[oob])
                l_sel[oob] = l_sel[oob] + penalty

        order = np.argsort(l_sel, kind="stable")
        elite_idx = order[:mu]
        elites = repaired[elite_idx]

        i_best = int(np.argmin(l_rep))
        if l_rep[i_best] < best_cost:
            best_cost = float(l_rep[i_best])
            best = repaired[i_best].copy()

        m_old = state.m
        m_new = elites.mean(axis=0)

        if cfg.variant == VARIANT_VANILLA:
            state.m = m_new
            step_cost = float(L(state.m[None, :])[0])
        else:
            rounds = 1 if cfg.variant == VARIANT_HYBRID else cfg.multi_max_rounds
            current = np.clip(m_new, -cfg.bounds, cfg.bounds)
            step_cost = float(L(current[None, :])[0])
            for _ in range(rounds):
                descent = -np.asarray(grad_fn(current), dtype=float)
                if not np.all(np.isfinite(descent)):
                    break
                betas = np.concatenate([[0.0], rng.uniform(0.0, cfg.beta_max, k_line)])
                pts = np.clip(current[None, :] + betas[:, None] * descent[None, :],
                              -cfg.bounds, cfg.bounds)
                vals = np.asarray(L(pts), dtype=float)
                j = int(np.argmin(vals))
                improvement = step_cost - float(vals[j])
                current = pts[j].copy()
                step_cost = float(vals[j])
                if improvement < cfg.multi_tol:
                    break
            state.m = np.clip(current, -cfg.bounds, cfg.bounds)

        if step_cost < best_cost:
            best_cost = step_cost
            best = state.m.copy()

        # CMA-ES state update (equal recombination weights over the elites)
        y = (elites - m_old[None, :]) / state.sigma
        y_w = y.mean(axis=0)
        inv_sqrt = evecs @ np.diag(1.0 / np.sqrt(evals)) @ evecs.T
        state.p_sigma = (1.0 - c_sigma) * state.p_sigma + np.sqrt(
            c_sigma * (2.0 - c_sigma) * mueff) * (inv_sqrt @ y_w)
        denom = np.sqrt(1.0 - (1.0 - c_sigma) ** (2.0 * step))
        hsig = float(np.linalg.norm(state.p_sigma) / denom / chi_n < 1.4 + 2.0 / (D + 1.0))
        state.p_c = (1.0 - c_c) * state.p_c + hsig * np.sqrt(
            c_c * (2.0 - c_c) * mueff) * y_w
        rank_mu = (y.T @ y) / mu
        state.C = (
            (1.0 - c_1 - c_mu) * state.C
            + c_1 * (np.outer(state.p_c, state.p_c)
                     + (1.0 - hsig ** 2) * c_c * (2.0 - c_c) * state.C)
            + c_mu * rank_mu
        )
        state.C = 0.5 * (state.C + state.C.T)
        ev = np.linalg.eigvalsh(state.C)
        if ev[0] < 1e-12:
            evals2, evecs2 = _decompose(state.C)
            state.C = evecs2 @ np.diag(evals2) @ evecs2.T
        state.sigma = float(state.sigma * np.exp(
            (c_sigma / d_sigma) * (np.linalg.norm(state.p_sigma) / chi_n - 1.0)))
        state.step = step

        prev = cost_history[-1]
        cost_history.append(step_cost)
        if abs(step_cost - prev) < cfg.stagnation_rtol * max(abs(prev), 1e-12):
            stagnant += 1
        else:
            stagnant = 0
        if stagnant >= cfg.stagnation_patience:
            stopped_by = "stagnation"
            break

    return OptimizeResult(
        best=best,
        best_cost=best_cost,
        cost_history=np.asarray(cost_history),
        state=state,
        stopped_by=stopped_by,
    )
