"""Penalty-function repair and the search / repair / verify loop."""

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .satfn import DEFAULT_MARGIN, f_sat, f_sat_value_and_grad_params
from .search import CounterExample, SearchConfig, find_all
from .spec import as_specification
from .training import TrainConfig, accuracy, add_grads, loss, mae, train
from .verify import COUNTEREXAMPLE, UNKNOWN, VerifyConfig, verify

SUCCESS = "success"
TIMEOUT = "timeout"
FAIL = "fail"


@dataclass
class PenaltyEntry:
    counterexample: CounterExample
    property: object
    mu: float = 1.0

    @property
    def property_index(self):
        return self.counterexample.property_index


@dataclass
class PenaltyState:
    """Penalty weights and constraints ``c_i = f_sat_i(N(x_i))``.

    The penalty term is ``sum_i mu_i * max(0, tau - c_i)``; with ``tau = 0``
    this is the classic exterior penalty.
    """

    entries: list = field(default_factory=list)
    tau: float = 0.0
    margin: float = DEFAULT_MARGIN
    history: list = field(default_factory=list)

    @property
    def mu(self):
        return [e.mu for e in self.entries]

    def constraint_values(self, net):
        return np.array([
            f_sat(e.property, net, e.counterexample.x, self.margin).value for e in self.entries
        ])

    def penalty(self, net):
        c = self.constraint_values(net)
        return float(np.sum(np.array(self.mu) * np.maximum(0.0, self.tau - c))) if len(c) else 0.0

    def value_and_grad(self, net):
        total, grads = 0.0, None
        for e in self.entries:
            sv, g = f_sat_value_and_grad_params(e.property, net, e.counterexample.x, self.margin)
            if sv.value < self.tau:
                total += e.mu * (self.tau - sv.value)
                grads = [(-e.mu * w, -e.mu * b) for w, b in g] if grads is None else add_grads(grads, g, -e.mu)
        return total, grads


@dataclass(frozen=True)
class RepairConfig:
    max_inner_iters: int = 20
    epochs_per_iter: int = 10
    max_outer_rounds: int = 10
    batch_size_cx: int = 1
    tau: float = 0.0
    timeout_s: float = 600.0
    train: TrainConfig = TrainConfig()

    def __post_init__(self):
        for name in ("max_inner_iters", "epochs_per_iter", "max_outer_rounds", "batch_size_cx"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.tau < 0 or not self.timeout_s > 0:
            raise ValueError("tau must be >= 0 and timeout_s positive")


@dataclass
class RepairOutcome:
    status: str
    network: object
    certificate: dict = None
    history: list = field(default_factory=list)
    runtime: dict = field(default_factory=dict)
    counterexamples: list = field(default_factory=list)

    @property
    def rounds(self):
        return sum(1 for row in self.history if row.get("repaired"))


def penalized_loss(net, dataset, kind, state):
    """Task loss plus ``sum mu_i * max(0, tau - f_sat_i)`` over the entries."""
    return loss(net, dataset, kind) + (state.penalty(net) if state is not None else 0.0)


def repair_step(net, dataset, kind, cx_pairs, config, margin=DEFAULT_MARGIN, deadline=None):
    """Retrain under the penalised loss until every counter-example satisfies
    ``f_sat >= tau``, doubling the weight of each one still violated.

    Returns ``(network, state, iterations)``. When ``max_inner_iters`` runs
    out first, the network repairing the most counter-examples (ties: lower
    task loss) is returned. ``state.history`` holds one audit row per
    iteration (plus the initial state).
    """
    if not cx_pairs:
        raise ValueError("repair_step needs at least one counter-example")
    state = PenaltyState([PenaltyEntry(cx, prop, 1.0) for cx, prop in cx_pairs],
                         tau=config.tau, margin=margin)

    def audit(iteration, current, values):
        lam = loss(current, dataset, kind)
        mu = np.array(state.mu)
        state.history.append({
            "iteration": iteration,
            "mu": list(state.mu),
            "f_sat": [float(v) for v in values],
            "loss": lam,
            "penalized_loss": lam + float(np.sum(mu * np.maximum(0.0, state.tau - values))),
        })
        return lam

    current = net
    values = state.constraint_values(current)
    lam = audit(0, current, values)
    best = (int(np.sum(values >= state.tau)), -lam, current)
    iteration = 0
    while np.any(values < state.tau) and iteration < config.max_inner_iters:
        if deadline is not None and time.perf_counter() > deadline:
            break
        cfg = replace(config.train, epochs=config.epochs_per_iter, seed=config.train.seed + iteration)
        current = train(current, dataset, kind, cfg, penalty=state)
        values = state.constraint_values(current)
        for entry, v in zip(state.entries, values):
            if v < state.tau:
                entry.mu *= 2.0
        iteration += 1
        lam = audit(iteration, current, values)
        key = (int(np.sum(values >= state.tau)), -lam)
        if key > best[:2]:
            best = (*key, current)
    if np.any(values < state.tau):
        current = best[2]
    return current, state, iteration


def _verify_all(net, spec, verify_cfg, margin):
    return {i: verify(net, prop, verify_cfg, margin) for i, prop in enumerate(spec)}


def repair_loop(net, dataset, kind, spec, search_cfg=None, repair_cfg=None, verify_cfg=None,
                margin=DEFAULT_MARGIN, eval_dataset=None):
    """Alternate counter-example search and penalty repair; certify at the end.

    Counter-examples from every round (search or verifier) are accumulated
    and all of them are penalised in each later repair step. Accuracy and MAE
    in the history are measured on ``eval_dataset`` (default: ``dataset``)
    against the original network.
    """
    spec = as_specification(spec)
    search_cfg = search_cfg or SearchConfig()
    repair_cfg = repair_cfg or RepairConfig()
    verify_cfg = verify_cfg or VerifyConfig()
    evaluation = eval_dataset if eval_dataset is not None else dataset
    original = net
    start = time.perf_counter()
    deadline = start + repair_cfg.timeout_s
    runtime = {"search_ms": 0.0, "repair_ms": 0.0, "verify_ms": 0.0, "total_ms": 0.0}
    history, pairs = [], []

    def finish(status, certificate=None):
        runtime["total_ms"] = (time.perf_counter() - start) * 1e3
        return RepairOutcome(status, net, certificate, history, runtime, [cx for cx, _ in pairs])

    def row(rnd, found, state=None, iterations=0):
        r = {
            "round": rnd,
            "cx_count": len(found),
            "cx_total": len(pairs),
            "repaired": state is not None,
            "iterations": iterations,
            "mu": state.mu if state is not None else [],
            "f_sat": [float(f_sat(p, net, cx.x, margin).value) for cx, p in pairs],
            "accuracy": accuracy(net, evaluation),
            "mae": mae(net, original, evaluation),
            "loss": loss(net, dataset, kind),
            "wall_ms": (time.perf_counter() - start) * 1e3,
        }
        history.append(r)

    for rnd in range(repair_cfg.max_outer_rounds + 1):
        if time.perf_counter() > deadline:
            return finish(TIMEOUT)
        t = time.perf_counter()
        found = []
        for b in range(repair_cfg.batch_size_cx):
            seed = search_cfg.seed + 7919 * rnd + 104729 * b
            found.extend(find_all(net, spec, replace(search_cfg, seed=seed), margin))
        runtime["search_ms"] += (time.perf_counter() - t) * 1e3

        if not found:
            t = time.perf_counter()
            verdicts = _verify_all(net, spec, verify_cfg, margin)
            runtime["verify_ms"] += (time.perf_counter() - t) * 1e3
            found = [CounterExample(v.x, i, v.value, 0, "verifier")
                     for i, v in verdicts.items() if v.status == COUNTEREXAMPLE]
            if not found:
                row(rnd, found)
                if any(v.status == UNKNOWN for v in verdicts.values()):
                    return finish(UNKNOWN, verdicts)
                return finish(SUCCESS, verdicts)

        if rnd == repair_cfg.max_outer_rounds or time.perf_counter() > deadline:
            pairs.extend((cx, spec[cx.property_index]) for cx in found)
            row(rnd, found)
            return finish(FAIL if rnd == repair_cfg.max_outer_rounds else TIMEOUT)

        pairs.extend((cx, spec[cx.property_index]) for cx in found)
        t = time.perf_counter()
        net, state, iterations = repair_step(net, dataset, kind, pairs, repair_cfg, margin, deadline)
        runtime["repair_ms"] += (time.perf_counter() - t) * 1e3
        row(rnd, found, state, iterations)
    return finish(FAIL)  # pragma: no cover - loop always returns
