"""Monte Carlo execution of decision strategies on the generative model.

Ground truth per run: the change time comes from the zero-modified
geometric prior, the type from nu, and symbols are i.i.d. from the
pre-change density until the change takes effect, then from the type's
density.  Strategies watch only the running posterior (and the step
count), so the simulator advances the posterior recursion alongside the
stream, retires a run when its strategy stops, and prices the run both
ways: the realized cost c*(tau-theta)^+ plus the terminal charge, and the
posterior-form running cost that the optimality theory claims has the same
expectation.

Reproducibility: every run r of a call seeded with s draws exclusively
from a counter-based Philox stream keyed (s, r), consuming one uniform for
the change time, one for the type, and one per symbol, with symbol
uniforms pre-drawn in blocks of 64.  Results are therefore identical
whether runs execute one at a time, in one vectorized batch, or split
across worker threads.
"""

from __future__ import annotations

import math
import os
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .boundary import C_M, SplineBoundary, _designated, fast_member
from .model import ProblemSpec
from .posterior import h_costs, h_values_many, initial_posterior, update, update_many
from .solver import ValueTable, interpolate, interpolate_many

__all__ = [
    "Environment",
    "SimulationRecord",
    "RiskEstimate",
    "Strategy",
    "TableStrategy",
    "SplineStrategy",
    "StopAfter",
    "PosteriorThreshold",
    "run_strategy",
    "estimate_risk",
    "resolve_threads",
]

#: Symbol uniforms are drawn from each run's stream in blocks of this size.
CHUNK = 64

#: Default cap on observations per run; hitting it flags the run.
DEFAULT_N_MAX = 100_000


def _theta_from_uniform(spec: ProblemSpec, u: float) -> int:
    """Invert the change-time prior CDF at ``u`` in [0, 1)."""
    if u < spec.p0:
        return 0
    v = (u - spec.p0) / (1.0 - spec.p0)
    return max(1, math.ceil(math.log1p(-v) / math.log1p(-spec.p)))


def _pick(cum: np.ndarray, u: float) -> int:
    """Index of the first cumulative bin exceeding ``u``."""
    return min(int((cum <= u).sum()), cum.size - 1)


class Environment:
    """Lazily sampled ground truth for a single run.

    The generator is keyed (seed, run_index); symbols extend on demand and
    are stable under repeated access.
    """

    def __init__(self, spec: ProblemSpec, seed: int, run_index: int = 0):
        if seed < 0 or run_index < 0:
            raise ValueError("seed and run_index must be nonnegative")
        self.spec = spec
        self.seed = seed
        self.run_index = run_index
        self._rng = np.random.Generator(
            np.random.Philox(key=np.array([seed, run_index], dtype=np.uint64))
        )
        self.theta = _theta_from_uniform(spec, self._rng.random())
        self.mu = _pick(np.cumsum(spec.nu), self._rng.random()) + 1
        self._cum_f = np.cumsum(spec.f, axis=1)
        self._uniforms: list[np.ndarray] = []
        self._symbols: list[int] = []

    def symbol(self, n: int) -> int:
        """The n-th observation (1-based)."""
        if n < 1:
            raise ValueError(f"observation index {n} must be >= 1")
        while len(self._symbols) < n:
            step = len(self._symbols) + 1
            chunk, offset = divmod(step - 1, CHUNK)
            while len(self._uniforms) <= chunk:
                self._uniforms.append(self._rng.random(CHUNK))
            u = float(self._uniforms[chunk][offset])
            row = self.mu if self.theta <= step else 0
            self._symbols.append(_pick(self._cum_f[row], u))
        return self._symbols[n - 1]


@dataclass
class SimulationRecord:
    """Outcome of one run: ground truth, alarm, decision, and both costs."""

    theta: int
    mu: int
    observations: list[int]
    tau: int
    d: int
    realized_cost: float
    posterior_cost: float
    capped: bool
    posterior_path: list[np.ndarray] | None = None


def _realized_cost(spec: ProblemSpec, theta: int, mu: int, tau: int, d: int) -> float:
    delay = spec.c * max(tau - theta, 0)
    if tau < theta:
        return delay + float(spec.a[0, d - 1])
    return delay + float(spec.a[mu, d - 1])


# ---------------------------------------------------------------------------
# Strategies
# ---------------------------------------------------------------------------


class Strategy(ABC):
    """Maps (posterior, step count) to continue (None) or a 1-based type."""

    @abstractmethod
    def decide(self, spec: ProblemSpec, pi: np.ndarray, n: int) -> int | None:
        ...

    def decide_many(self, spec: ProblemSpec, pis: np.ndarray, n: int) -> np.ndarray:
        out = np.zeros(pis.shape[0], dtype=np.int8)
        for k in range(pis.shape[0]):
            d = self.decide(spec, pis[k], n)
            if d is not None:
                out[k] = d
        return out


class TableStrategy(Strategy):
    """Stop where the interpolated value meets the stopping cost.

    In the stopping region the solved value equals h, strictly below it in
    the continuation region, so h - V <= stop_tol recovers the region up to
    the table's own convergence slack (the default tolerance).
    """

    def __init__(self, table: ValueTable, stop_tol: float | None = None):
        self.table = table
        self.stop_tol = table.stop_tol if stop_tol is None else float(stop_tol)

    def decide(self, spec, pi, n):
        _, h, col = h_costs(spec, pi)
        if h - interpolate(self.table, pi) <= self.stop_tol:
            return col + 1
        return None

    def decide_many(self, spec, pis, n):
        values = interpolate_many(self.table.grid, self.table.values, pis)
        h_all = h_values_many(spec, pis)
        cols = h_all.argmin(axis=1)
        stop = h_all.min(axis=1) - values <= self.stop_tol
        return np.where(stop, cols + 1, 0).astype(np.int8)


class SplineStrategy(Strategy):
    """Stop by the compressed polar boundaries (2-type problems)."""

    def __init__(self, boundaries: dict[int, SplineBoundary]):
        self.boundaries = boundaries

    def decide(self, spec, pi, n):
        return fast_member(spec, self.boundaries, pi)

    def decide_many(self, spec, pis, n):
        h_all = h_values_many(spec, pis)
        cols = h_all.argmin(axis=1)
        out = np.zeros(pis.shape[0], dtype=np.int8)
        for corner in range(1, spec.num_types + 1):
            rows = np.flatnonzero(cols == corner - 1)
            if rows.size == 0:
                continue
            P = pis[rows]
            keep, _ = _designated(2, corner)
            r = np.sqrt(
                C_M[2]
                * np.maximum(
                    (1.0 + np.sum(P * P, axis=1)) / 2.0 - P[:, corner], 0.0
                )
            )
            ghat = np.empty(rows.size)
            at_corner = r <= 0.0
            ghat[at_corner] = np.inf
            if np.any(~at_corner):
                beta = np.arcsin(
                    np.clip(P[~at_corner, keep[0]] / r[~at_corner], 0.0, 1.0)
                )
                ghat[~at_corner] = self.boundaries[corner](beta)
            out[rows] = np.where(r <= ghat, corner, 0)
        return out


class StopAfter(Strategy):
    """Baseline: stop unconditionally once ``k`` observations are in."""

    def __init__(self, k: int):
        self.k = int(k)

    def decide(self, spec, pi, n):
        if n >= self.k:
            _, _, col = h_costs(spec, pi)
            return col + 1
        return None

    def decide_many(self, spec, pis, n):
        if n < self.k:
            return np.zeros(pis.shape[0], dtype=np.int8)
        return (h_values_many(spec, pis).argmin(axis=1) + 1).astype(np.int8)


class PosteriorThreshold(Strategy):
    """Baseline: stop once the change probability reaches ``threshold``."""

    def __init__(self, threshold: float):
        self.threshold = float(threshold)

    def decide(self, spec, pi, n):
        if 1.0 - pi[0] >= self.threshold:
            _, _, col = h_costs(spec, pi)
            return col + 1
        return None

    def decide_many(self, spec, pis, n):
        stop = 1.0 - pis[:, 0] >= self.threshold
        cols = h_values_many(spec, pis).argmin(axis=1)
        return np.where(stop, cols + 1, 0).astype(np.int8)


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------


def run_strategy(
    spec: ProblemSpec,
    strategy: Strategy,
    env: Environment,
    n_max: int = DEFAULT_N_MAX,
    record_path: bool = False,
) -> SimulationRecord:
    """Play one run to its alarm (reference single-stream loop).

    The strategy is consulted before the first observation, so tau = 0 is a
    possible outcome.  At ``n_max`` the run is forced to stop with the
    cheapest terminal decision and flagged.
    """
    pi = initial_posterior(spec)
    path = [pi.copy()] if record_path else None
    observations: list[int] = []
    running = 0.0
    n = 0
    capped = False
    while True:
        d = strategy.decide(spec, pi, n)
        if d is not None:
            break
        if n >= n_max:
            capped = True
            _, _, col = h_costs(spec, pi)
            d = col + 1
            break
        running += spec.c * (1.0 - pi[0])
        x = env.symbol(n + 1)
        observations.append(x)
        pi = update(spec, pi, x)
        if record_path:
            path.append(pi.copy())
        n += 1
    h_vals, _, _ = h_costs(spec, pi)
    return SimulationRecord(
        theta=env.theta,
        mu=env.mu,
        observations=observations,
        tau=n,
        d=int(d),
        realized_cost=_realized_cost(spec, env.theta, env.mu, n, int(d)),
        posterior_cost=running + float(h_vals[int(d) - 1]),
        capped=capped,
        posterior_path=path,
    )


@dataclass
class RiskEstimate:
    """Per-run outcomes of a Monte Carlo batch plus summary accessors."""

    spec: ProblemSpec = field(repr=False)
    runs: int
    seed: int
    theta: np.ndarray
    mu: np.ndarray
    tau: np.ndarray
    d: np.ndarray
    realized: np.ndarray
    posterior_form: np.ndarray
    capped: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.realized.mean())

    @property
    def std_error(self) -> float:
        if self.runs < 2:
            return 0.0
        return float(self.realized.std(ddof=1) / math.sqrt(self.runs))

    @property
    def cap_rate(self) -> float:
        return float(self.capped.mean())

    def breakdown(self) -> dict[str, float]:
        """Mean cost split into delay, false-alarm, and isolation terms."""
        delay = self.spec.c * np.maximum(self.tau - self.theta, 0)
        false_alarm = np.where(
            self.tau < self.theta, self.spec.a[0, self.d - 1], 0.0
        )
        isolation = np.where(
            self.tau >= self.theta, self.spec.a[self.mu, self.d - 1], 0.0
        )
        return {
            "delay": float(delay.mean()),
            "false_alarm": float(false_alarm.mean()),
            "false_isolation": float(isolation.mean()),
        }

    def to_json(self) -> dict:
        return {
            "runs": self.runs,
            "seed": self.seed,
            "mean": self.mean,
            "std_error": self.std_error,
            "breakdown": self.breakdown(),
            "cap_rate": self.cap_rate,
        }


def _simulate_block(
    spec: ProblemSpec,
    strategy: Strategy,
    runs: int,
    seed: int,
    n_max: int,
    run_offset: int,
) -> tuple[np.ndarray, ...]:
    """Vectorized lockstep simulation of runs [offset, offset+runs)."""
    gens = [
        np.random.Generator(
            np.random.Philox(key=np.array([seed, run_offset + r], dtype=np.uint64))
        )
        for r in range(runs)
    ]
    theta = np.empty(runs, dtype=np.int64)
    mu = np.empty(runs, dtype=np.int64)
    cum_nu = np.cumsum(spec.nu)
    for r, g in enumerate(gens):
        theta[r] = _theta_from_uniform(spec, g.random())
        mu[r] = _pick(cum_nu, g.random()) + 1
    cum_f = np.cumsum(spec.f, axis=1)

    pis = np.tile(initial_posterior(spec), (runs, 1))
    tau = np.zeros(runs, dtype=np.int64)
    d = np.zeros(runs, dtype=np.int64)
    capped = np.zeros(runs, dtype=bool)
    running = np.zeros(runs)
    post_form = np.zeros(runs)

    active = np.arange(runs)
    window = np.empty((0, CHUNK))
    window_row = np.full(runs, -1, dtype=np.int64)
    n = 0
    while active.size:
        dec = strategy.decide_many(spec, pis[active], n)
        stopping = dec > 0
        if np.any(stopping):
            done = active[stopping]
            tau[done] = n
            d[done] = dec[stopping]
            h_done = h_values_many(spec, pis[done])
            post_form[done] = running[done] + h_done[
                np.arange(done.size), d[done] - 1
            ]
            active = active[~stopping]
        if active.size == 0:
            break
        if n >= n_max:
            h_rest = h_values_many(spec, pis[active])
            tau[active] = n
            d[active] = h_rest.argmin(axis=1) + 1
            capped[active] = True
            post_form[active] = running[active] + h_rest.min(axis=1)
            break

        running[active] += spec.c * (1.0 - pis[active, 0])

        if n % CHUNK == 0:
            window = np.empty((active.size, CHUNK))
            window_row[:] = -1
            window_row[active] = np.arange(active.size)
            for row, r in enumerate(active):
                window[row] = gens[r].random(CHUNK)
        us = window[window_row[active], n % CHUNK]
        post = theta[active] <= n + 1
        rows = np.where(post, mu[active], 0)
        symbols = np.minimum(
            (cum_f[rows] <= us[:, None]).sum(axis=1), spec.alphabet_size - 1
        )
        pis[active] = update_many(spec, pis[active], symbols)
        n += 1

    realized = spec.c * np.maximum(tau - theta, 0).astype(np.float64)
    realized += np.where(tau < theta, spec.a[0, d - 1], spec.a[mu, d - 1])
    return theta, mu, tau, d, realized, post_form, capped


def resolve_threads(threads: int | None) -> int:
    """Explicit value, else the CD_THREADS variable, else the CPU count."""
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("CD_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def estimate_risk(
    spec: ProblemSpec,
    strategy: Strategy,
    runs: int,
    seed: int,
    n_max: int = DEFAULT_N_MAX,
    threads: int | None = 1,
) -> RiskEstimate:
    """Monte Carlo Bayes-risk estimate over ``runs`` independent runs.

    The run set splits into contiguous blocks, one per worker; because
    every run has its own keyed substream, the estimate is bit-identical
    for any thread count.
    """
    if runs < 1:
        raise ValueError(f"runs={runs} must be at least 1")
    workers = min(resolve_threads(threads), runs)
    bounds = np.linspace(0, runs, workers + 1).astype(int)
    jobs = [
        (int(lo), int(hi - lo)) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo
    ]
    if len(jobs) == 1:
        blocks = [_simulate_block(spec, strategy, runs, seed, n_max, 0)]
    else:
        with ThreadPoolExecutor(max_workers=len(jobs)) as pool:
            futures = [
                pool.submit(
                    _simulate_block, spec, strategy, count, seed, n_max, offset
                )
                for offset, count in jobs
            ]
            blocks = [f.result() for f in futures]

    theta, mu, tau, d, realized, post_form, capped = (
        np.concatenate(parts) for parts in zip(*blocks)
    )
    return RiskEstimate(
        spec=spec,
        runs=runs,
        seed=seed,
        theta=theta,
        mu=mu,
        tau=tau,
        d=d,
        realized=realized,
        posterior_form=post_form,
        capped=capped,
    )
