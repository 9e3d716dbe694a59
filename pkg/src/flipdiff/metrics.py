"""Divergences, the sliced Wasserstein metric, convergence-bound calculators,
step planners, and exact marginal propagation of the discretized backward
chain for ground-truth KL measurements on small d.

Total variation follows the integral-of-|density-difference| convention, so
it ranges over [0, 2] (twice the more common sup-of-events normalization).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import wasserstein_distance

from .errors import AssumptionViolationError, EnumerationLimitError, InvalidScoreError, PlanningError
from .samplers import sample_discretized_batch
from .schedules import TimeSchedule
from .states import DenseTable, EmpiricalSet, all_states, index_to_state

UNIFORMIZATION_TAIL = 1e-14
EXACT_BACKWARD_LIMIT = 10  # generator is 2^d x 2^d


def kl_divergence(p: DenseTable, q: DenseTable) -> float:
    """KL(p|q), +inf when p charges a q-null state."""
    if p.d != q.d:
        raise ValueError(f"dimension mismatch: {p.d} vs {q.d}")
    support = p.mass > 0
    if (q.mass[support] <= 0).any():
        return float("inf")
    pm = p.mass[support]
    return float(np.sum(pm * np.log(pm / q.mass[support])))


def tv_distance(p: DenseTable, q: DenseTable) -> float:
    """Total variation in the [0, 2] normalization."""
    if p.d != q.d:
        raise ValueError(f"dimension mismatch: {p.d} vs {q.d}")
    return float(np.abs(p.mass - q.mass).sum())


def divergences(p: DenseTable, q: DenseTable) -> tuple[float, float]:
    return kl_divergence(p, q), tv_distance(p, q)


@dataclass(frozen=True)
class SWDEstimate:
    value: float
    n_directions: int
    std_error: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def simplex_directions(d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draws from the probability simplex via exponential normalization."""
    g = rng.exponential(size=(n, d))
    return g / g.sum(axis=1, keepdims=True)


def swd(a: EmpiricalSet, b: EmpiricalSet, n_dirs: int = 1000,
        rng: np.random.Generator | None = None) -> SWDEstimate:
    """Sliced Wasserstein distance between two sample sets.

    Directions are uniform on the simplex; each projection x -> <u, x> lands
    in [0, 1] and its one-dimensional Wasserstein-1 distance is computed
    exactly by sorting. The reported value is the Monte-Carlo mean over
    directions with its standard error.
    """
    if a.d != b.d:
        raise ValueError(f"dimension mismatch: {a.d} vs {b.d}")
    rng = rng or np.random.default_rng()
    dirs = simplex_directions(a.d, n_dirs, rng)
    proj_a = a.samples.astype(np.float64) @ dirs.T
    proj_b = b.samples.astype(np.float64) @ dirs.T
    if a.n == b.n:
        # equal counts: W1 is the mean absolute difference of sorted samples
        per_dir = np.mean(np.abs(np.sort(proj_a, axis=0) - np.sort(proj_b, axis=0)), axis=0)
    else:
        per_dir = np.array([
            wasserstein_distance(proj_a[:, j], proj_b[:, j]) for j in range(n_dirs)
        ])
    value = float(per_dir.mean())
    se = float(per_dir.std(ddof=1) / np.sqrt(n_dirs)) if n_dirs > 1 else 0.0
    return SWDEstimate(value=value, n_directions=n_dirs, std_error=se)


def _h(a: np.ndarray) -> np.ndarray:
    """h(a) = a log a - a + 1 (>= 0, zero only at a = 1), with h(0) = 1."""
    a = np.asarray(a, dtype=np.float64)
    out = np.ones_like(a)
    pos = a > 0
    out[pos] = a[pos] * np.log(a[pos]) - a[pos] + 1.0
    return out


def flip_fisher_info(mu: DenseTable) -> float:
    """Fisher-like information E_mu[ sum_l h(mu(flip_l X)/mu(X)) ].

    Finite exactly when mu has full support; a zero-mass state raises,
    naming the offending state.
    """
    mass = mu.mass
    if (mass <= 0).any():
        bad = int(np.argmin(mass))
        raise AssumptionViolationError(
            f"state {index_to_state(bad, mu.d).tolist()} has zero mass; "
            "full support is required")
    idx = np.arange(mass.size)
    total = 0.0
    for coord in range(mu.d):
        ratio = mass[idx ^ (1 << coord)] / mass
        total += float(np.sum(mass * _h(ratio)))
    return total


@dataclass(frozen=True)
class BoundReport:
    """A KL convergence bound together with the quantities that built it.

    bound = exp(-t_f) * kl_init + tau * beta + eps * (t_f - eta).
    """

    kl_init: float
    beta: float
    tau: float
    eps: float
    t_f: float
    eta: float = 0.0
    measured_kl: float | None = None

    @property
    def bound(self) -> float:
        return float(np.exp(-self.t_f) * self.kl_init + self.tau * self.beta
                     + self.eps * (self.t_f - self.eta))

    @property
    def slack(self) -> float | None:
        if self.measured_kl is None:
            return None
        return self.bound - self.measured_kl

    def to_json(self) -> str:
        payload = asdict(self)
        payload["bound"] = self.bound
        payload["slack"] = self.slack
        return json.dumps(payload, sort_keys=True)


def kl_convergence_bound(kl_init: float, beta: float, tau: float, eps: float,
                         t_f: float, eta: float = 0.0,
                         measured_kl: float | None = None) -> BoundReport:
    """KL bound for the discretized backward chain; eta > 0 gives the
    early-stopped variant (beta must then be the information of the running
    marginal at time eta)."""
    for name, val in (("kl_init", kl_init), ("beta", beta), ("tau", tau),
                      ("eps", eps), ("t_f", t_f), ("eta", eta)):
        if val < 0:
            raise ValueError(f"{name} must be >= 0")
    return BoundReport(kl_init=kl_init, beta=beta, tau=tau, eps=eps, t_f=t_f,
                       eta=eta, measured_kl=measured_kl)


def early_stop_tv_bound(eta: float, lam: float, d: int) -> tuple[float, float]:
    """TV(mu_eta, mu*) upper bounds: the exact kernel form and its looser
    linearized form 2 - 2(1 - lam*eta)^d."""
    if eta < 0:
        raise ValueError("eta must be >= 0")
    exact = 2.0 - 2.0 * (0.5 + 0.5 * np.exp(-2.0 * lam * eta)) ** d
    loose = 2.0 - 2.0 * (1.0 - lam * eta) ** d
    return float(exact), float(loose)


def plan_schedule(eps: float, kl_init: float, beta: float) -> tuple[float, int, float]:
    """Largest step h and smallest K meeting the fixed-step complexity recipe;
    returns (h, k_f, t_f = h * k_f)."""
    if eps <= 0:
        raise PlanningError("target accuracy eps must be > 0")
    if kl_init <= 0:
        raise PlanningError("kl_init must be > 0")
    if beta <= 0:
        raise PlanningError("beta must be > 0 (uniform-like data needs no planning)")
    h = eps / (2.0 * beta)
    k_f = int(np.ceil(np.log(2.0 * kl_init / eps) / h))
    if k_f < 1:
        raise PlanningError("requested accuracy already holds at a single step")
    return h, k_f, h * k_f


def plan_early_stop(eps: float, d: int, lam: float, kl_init: float) -> tuple[float, float, int]:
    """Early-stopping recipe: (eta, h, k_f) with horizon t_f = eta + h * k_f."""
    if eps <= 0:
        raise PlanningError("target accuracy eps must be > 0")
    if kl_init <= 0:
        raise PlanningError("kl_init must be > 0")
    if eps >= 2.0:
        raise PlanningError("eps must be < 2 for a positive early-stop time")
    eta = (1.0 - (1.0 - eps / 2.0) ** (1.0 / d)) / lam
    if eta <= 0:
        raise PlanningError("no positive early-stop time for the requested eps")
    le = lam * eta
    h = eps**2 * le**d / (2.0 ** (d + 3) * d * (1.0 + 2.0 * le) ** d)
    k_f = int(np.ceil((np.log(2.0 * kl_init / eps**2) - eta) / h))
    k_f = max(k_f, 1)
    return eta, h, k_f


def _uniformized_step(mass: np.ndarray, rates: np.ndarray, h: float,
                      tail: float = UNIFORMIZATION_TAIL) -> np.ndarray:
    """Propagate a mass vector through exp(h*Q) where Q has off-diagonal
    entries rates[x, l] toward the coordinate-l flip of x.

    Uniformization: exp(hQ) = sum_k Pois(k; a) P^k with P = I + Q/rate_max,
    truncated when the remaining Poisson mass drops below ``tail`` and then
    renormalized (the exact result conserves mass).
    """
    d = rates.shape[1]
    exit_rate = rates.sum(axis=1)
    rate_max = float(exit_rate.max())
    if rate_max <= 0 or h <= 0:
        return mass.copy()
    a = rate_max * h
    idx = np.arange(mass.size)
    flip_idx = idx[:, None] ^ (1 << np.arange(d))

    def apply_p(v: np.ndarray) -> np.ndarray:
        out = v * (1.0 - exit_rate / rate_max)
        flow = v[:, None] * rates / rate_max
        for coord in range(d):
            out += np.bincount(flip_idx[:, coord], weights=flow[:, coord],
                               minlength=v.size)
        return out

    weight = np.exp(-a)
    cum = weight
    term = mass
    acc = weight * mass
    k = 0
    while cum < 1.0 - tail:
        term = apply_p(term)
        k += 1
        weight *= a / k
        cum += weight
        acc += weight * term
    return acc / acc.sum()


def exact_backward_marginal(src, schedule: TimeSchedule, lam: float) -> DenseTable:
    """Exact terminal law of the CTMC whose generator is frozen at each grid
    time (the object the KL convergence bound speaks about).

    Starts from the uniform distribution and propagates the full 2^d vector
    by uniformization, so d is capped at EXACT_BACKWARD_LIMIT.
    """
    d = src.d
    if d > EXACT_BACKWARD_LIMIT:
        raise EnumerationLimitError(
            f"exact backward propagation needs a 2^{d} generator; "
            f"refusing d > {EXACT_BACKWARD_LIMIT}")
    mass = np.full(1 << d, 1.0 / (1 << d))
    grid = schedule.grid
    for k in range(schedule.n_steps):
        scores = src.score_batch(grid[k], all_states(d))
        rates = lam * (1.0 - scores)
        if (rates < -lam * 1e-9).any():
            raise InvalidScoreError(f"negative backward rate at t={grid[k]!r}")
        rates = np.maximum(rates, 0.0)
        mass = _uniformized_step(mass, rates, grid[k + 1] - grid[k])
    return DenseTable(mass)


@dataclass(frozen=True)
class ScoreErrorEstimate:
    """Monte-Carlo estimate of the entropic score-approximation error."""

    eps_max: float
    std_error: float
    per_step: np.ndarray
    per_step_se: np.ndarray

    def to_json(self) -> str:
        return json.dumps({
            "eps_max": self.eps_max,
            "std_error": self.std_error,
            "per_step": self.per_step.tolist(),
            "per_step_se": self.per_step_se.tolist(),
        }, sort_keys=True)


def estimate_score_error(approx_src, exact_src, schedule: TimeSchedule, lam: float,
                         n_chains: int, rng: np.random.Generator) -> ScoreErrorEstimate:
    """Estimate the per-grid-point entropic gap
    E[sum_l (1 - s_approx) h((1 - s_exact)/(1 - s_approx))] along chains
    simulated with the approximate score, reporting the max over grid points.
    """
    _, recorded = sample_discretized_batch(approx_src, schedule, lam, n_chains, rng,
                                           record_grid=True)
    means = np.empty(len(recorded))
    ses = np.empty(len(recorded))
    for k, states in enumerate(recorded):
        t_k = schedule.grid[k]
        one_minus_appr = np.maximum(1.0 - approx_src.score_batch(t_k, states), 1e-300)
        one_minus_true = np.maximum(1.0 - exact_src.score_batch(t_k, states), 0.0)
        per_chain = (one_minus_appr * _h(one_minus_true / one_minus_appr)).sum(axis=1)
        means[k] = per_chain.mean()
        ses[k] = per_chain.std(ddof=1) / np.sqrt(n_chains)
    worst = int(np.argmax(means))
    return ScoreErrorEstimate(eps_max=float(means[worst]), std_error=float(ses[worst]),
                              per_step=means, per_step_se=ses)
