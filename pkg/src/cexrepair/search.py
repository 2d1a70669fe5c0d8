"""Counter-example search: bounded global minimisation of the satisfaction
function with differential evolution or multi-start projected descent."""

import time
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import qmc

from .errors import BudgetError, InvalidBox
from .network import as_box
from .satfn import DEFAULT_MARGIN, f_sat, f_sat_grad_input
from .spec import as_specification, bind

DIFFERENTIAL_EVOLUTION = "differential_evolution"
MULTI_START = "multistart"
OPTIMIZERS = (DIFFERENTIAL_EVOLUTION, MULTI_START)


@dataclass(frozen=True)
class SearchConfig:
    optimizer: str = DIFFERENTIAL_EVOLUTION
    max_evals: int = 2000
    seed: int = 0
    population: int = None  # DE; None means 15 * input_dim
    restarts: int = 10
    local_steps: int = 200
    sampling_density: int = 64
    mutation: float = 0.8
    crossover: float = 0.9

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}; choose from {OPTIMIZERS}")
        for name in ("restarts", "local_steps", "sampling_density"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.population is not None and self.population < 4:
            raise ValueError("differential evolution needs a population of at least 4")


@dataclass(frozen=True)
class CounterExample:
    x: np.ndarray
    property_index: int
    objective: float
    evals: int = 0
    source: str = "search"

    def to_dict(self, prop_name=None):
        d = {"property": self.property_index, "x": [float(v) for v in self.x],
             "objective": float(self.objective), "evals": int(self.evals), "source": self.source}
        if prop_name is not None:
            d["property_name"] = prop_name
        return d


class _Exhausted(Exception):
    pass


class _Counted:
    """Budgeted objective/gradient wrapper that tracks the best point seen."""

    def __init__(self, objective, gradient, lo, hi, max_evals, trace):
        self.objective, self.gradient = objective, gradient
        self.lo, self.hi, self.width = lo, hi, hi - lo
        self.max_evals = max_evals
        self.evals = 0
        self.best_x, self.best_f = None, np.inf
        self.trace = trace

    def to_x(self, u):
        return np.clip(self.lo + u * self.width, self.lo, self.hi)

    def _spend(self):
        if self.evals >= self.max_evals:
            raise _Exhausted
        self.evals += 1

    @property
    def left(self):
        return self.max_evals - self.evals

    def f(self, x):
        self._spend()
        val = float(self.objective(x))
        if val < self.best_f or self.best_x is None:
            self.best_x, self.best_f = np.array(x, dtype=np.float64), val
        if self.trace is not None:
            self.trace.append((self.evals, self.best_f))
        return val

    def grad_unit(self, u):
        """Gradient w.r.t. unit-cube coordinates (one query, or 2n without
        an analytic gradient)."""
        x = self.to_x(u)
        if self.gradient is not None:
            self._spend()
            return np.asarray(self.gradient(x), dtype=np.float64) * self.width
        g = np.zeros_like(u)
        h = 1e-6
        for i in range(len(u)):
            if self.width[i] == 0:
                continue
            up, dn = u.copy(), u.copy()
            up[i] = min(1.0, u[i] + h)
            dn[i] = max(0.0, u[i] - h)
            g[i] = (self.f(self.to_x(up)) - self.f(self.to_x(dn))) / (up[i] - dn[i])
        return g


def _differential_evolution(ev, n, config, rng):
    pop_size = config.population or 15 * n
    if ev.max_evals < pop_size:
        raise BudgetError(f"max_evals={ev.max_evals} is below the population size {pop_size}")
    F, CR = config.mutation, config.crossover
    pop = rng.random((pop_size, n))
    fit = np.array([ev.f(ev.to_x(u)) for u in pop])
    while True:
        for i in range(pop_size):
            r = rng.choice(pop_size - 1, 3, replace=False)
            r[r >= i] += 1
            mutant = np.clip(pop[r[0]] + F * (pop[r[1]] - pop[r[2]]), 0.0, 1.0)
            mask = rng.random(n) < CR
            mask[rng.integers(n)] = True
            trial = np.where(mask, mutant, pop[i])
            ft = ev.f(ev.to_x(trial))
            if ft <= fit[i]:
                pop[i], fit[i] = trial, ft


def _projected_descent(ev, u, fu, steps):
    """Projected gradient descent with backtracking in unit coordinates."""
    t = 0.25
    for _ in range(steps):
        g = ev.grad_unit(u)
        scale = np.max(np.abs(g)) if g.size else 0.0
        if not np.isfinite(scale) or scale == 0.0:
            return
        d = g / scale
        while True:
            un = np.clip(u - t * d, 0.0, 1.0)
            if np.array_equal(un, u):
                return
            fn = ev.f(ev.to_x(un))
            if fn <= fu + 1e-4 * float(g @ (un - u)):
                u, fu = un, fn
                t = min(2.0 * t, 1.0)
                break
            t *= 0.5
            if t < 1e-9:
                return


def _multi_start(ev, n, config, rng):
    if ev.max_evals < config.restarts:
        raise BudgetError(f"max_evals={ev.max_evals} is below the number of restarts")
    sobol = qmc.Sobol(d=n, scramble=True, seed=rng)
    per_restart = ev.max_evals // config.restarts
    for r in range(config.restarts):
        stop = ev.evals + per_restart if r < config.restarts - 1 else ev.max_evals
        k = min(config.sampling_density, stop - ev.evals)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            U = sobol.random(k)
        vals = [ev.f(ev.to_x(u)) for u in U]
        j = int(np.argmin(vals))
        saved = ev.max_evals
        ev.max_evals = stop
        try:
            _projected_descent(ev, U[j].copy(), vals[j], config.local_steps)
        except _Exhausted:
            pass
        finally:
            ev.max_evals = saved


def minimize(objective, box, config, gradient=None, trace=None):
    """Minimise ``objective`` over ``box`` within ``config.max_evals`` queries.

    Every objective call and every ``gradient`` call counts as one query.
    Returns ``(x_best, f_best, evals)``; ``x_best`` is the best point ever
    evaluated. ``trace``, when a list, receives ``(evals, best_so_far)``
    after every objective call.
    """
    if config.max_evals <= 0:
        raise BudgetError("max_evals must be positive")
    box = as_box(box)
    if not np.all(np.isfinite(box)):
        raise InvalidBox("search box must be finite")
    lo, hi = box[:, 0].copy(), box[:, 1].copy()
    n = len(lo)
    rng = np.random.default_rng(config.seed)
    ev = _Counted(objective, gradient, lo, hi, config.max_evals, trace)
    try:
        if config.optimizer == DIFFERENTIAL_EVOLUTION:
            _differential_evolution(ev, n, config, rng)
        else:
            _multi_start(ev, n, config, rng)
    except _Exhausted:
        pass
    return ev.best_x, ev.best_f, ev.evals


def find_counterexample(net, prop, config, property_index=0, margin=DEFAULT_MARGIN, trace=None):
    """Global-budget minimiser of the satisfaction function over the
    property's box; a counter-example only if the minimum is negative.

    The search never stops at the first violation: the most severe point
    found within the budget is returned. ``None`` does not certify safety.
    """
    bound = bind(prop, net)
    x, fx, evals = minimize(
        lambda z: f_sat(bound, net, z, margin).value,
        bound.box,
        config,
        gradient=lambda z: f_sat_grad_input(bound, net, z, margin),
        trace=trace,
    )
    if fx < 0:
        return CounterExample(x, property_index, fx, evals)
    return None


def find_all(net, spec, config, margin=DEFAULT_MARGIN):
    """One search per property with seed ``config.seed + index``; properties
    without a finding are omitted, order follows the specification."""
    found = []
    for i, prop in enumerate(as_specification(spec)):
        cx = find_counterexample(net, prop, replace(config, seed=config.seed + i), i, margin)
        if cx is not None:
            found.append(cx)
    return found


def benchmark_optimizers(net, prop, configs, property_name=None, margin=DEFAULT_MARGIN):
    """Run each configuration on the same property.

    Returns ``(rows, traces)``: one row dict per config with keys optimizer,
    property, seed, runtime_ms, objective, evals and x; ``traces[i]`` is the
    best-so-far curve ``[(evals, objective), ...]`` of row ``i``.
    """
    bound = bind(prop, net)
    rows, traces = [], []
    for config in configs:
        trace = []
        start = time.perf_counter()
        x, fx, evals = minimize(
            lambda z: f_sat(bound, net, z, margin).value,
            bound.box,
            config,
            gradient=lambda z: f_sat_grad_input(bound, net, z, margin),
            trace=trace,
        )
        runtime_ms = (time.perf_counter() - start) * 1e3
        rows.append({
            "optimizer": config.optimizer,
            "property": property_name or prop.name,
            "seed": config.seed,
            "runtime_ms": runtime_ms,
            "objective": fx,
            "evals": evals,
            "x": x,
        })
        traces.append(trace)
    return rows, traces
