"""Command-line front end: ``attack``, ``repair``, ``verify`` and ``bench``.

Runs are described by a TOML config (see README) whose scalar settings can
be overridden with flags. Relative paths in a config file resolve against
the file's directory.
"""

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import CexRepairError
from .network import load_dataset, load_network, save_json, uniform_sample
from .repair import FAIL, SUCCESS, TIMEOUT, RepairConfig, repair_loop
from .satfn import DEFAULT_MARGIN
from .search import CounterExample, SearchConfig, benchmark_optimizers, find_all
from .spec import (Specification, acasxu_specification, bind, load_spec,
                   robustness_property)
from .training import LossKind, TrainConfig, accuracy, mae
from .verify import COUNTEREXAMPLE, UNKNOWN, VERIFIED, VerifyConfig, verify

log = logging.getLogger("cexrepair")

EXIT_OK = 0
EXIT_FOUND = 1
EXIT_ERROR = 2
EXIT_CODES = {SUCCESS: 0, TIMEOUT: 3, UNKNOWN: 4, FAIL: 5}

BENCH_COLUMNS = ["optimizer", "property", "seed", "runtime_ms", "objective", "evals", "network", "x"]


def derive_seed(seed, component):
    """Stable per-component seed: sha256 of ``"<seed>:<component>"``."""
    digest = hashlib.sha256(f"{seed}:{component}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


# ------------------------------------------------------------------ config

def _section(cls, data):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return data


def load_config(path=None, overrides=None):
    cfg = {}
    base = Path(".")
    if path is not None:
        path = Path(path)
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
        base = path.parent
    cfg["_base"] = base
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        section, _, name = key.rpartition(".")
        target = cfg.setdefault(section, {}) if section else cfg
        target[name] = value
        if not section and key in ("network", "spec", "output_dir", "dataset_path"):
            cfg["_base_" + key] = Path(".")
    return cfg


def _path(cfg, key, value=None):
    value = cfg.get(key) if value is None else value
    if value is None:
        return None
    p = Path(value)
    if p.is_absolute():
        return p
    return cfg.get("_base_" + key, cfg["_base"]) / p


def resolve_spec(cfg, net):
    name = cfg.get("spec")
    if name is None:
        raise ValueError("no spec given (config key 'spec' or --spec)")
    if name.startswith("acasxu:"):
        ks = [int(k) for k in name.split(":", 1)[1].split(",")]
        return acasxu_specification(ks)
    if name == "robustness":
        rob = cfg.get("robustness", {})
        data = load_dataset(_path(cfg, "dataset", rob["dataset"]))
        idx = int(rob.get("index", 0))
        label = int(data.labels()[idx])
        return Specification((robustness_property(
            data.inputs[idx], float(rob["epsilon"]), label, net.output_dim,
            rob.get("mode", data.label_mode)),))
    return load_spec(_path(cfg, "spec"))


def search_config(cfg):
    sec = _section(SearchConfig, dict(cfg.get("search", {})))
    sec.setdefault("seed", derive_seed(cfg.get("seed", 0), "search"))
    return SearchConfig(**sec)


def verify_config(cfg):
    return VerifyConfig(**_section(VerifyConfig, dict(cfg.get("verify", {}))))


def repair_config(cfg):
    sec = _section(RepairConfig, dict(cfg.get("repair", {})))
    train = dict(cfg.get("train", {}))
    train.setdefault("seed", derive_seed(cfg.get("seed", 0), "train"))
    sec["train"] = TrainConfig(**_section(TrainConfig, train))
    return RepairConfig(**sec)


def _dataset_box(net, spec):
    norm = net.normalization
    if norm is not None and np.all(np.isfinite(norm.input_min)) and np.all(np.isfinite(norm.input_max)):
        return np.column_stack([norm.input_min, norm.input_max])
    boxes = np.array([bind(p, net).box for p in spec])
    return np.column_stack([boxes[:, :, 0].min(axis=0), boxes[:, :, 1].max(axis=0)])


def resolve_dataset(cfg, net, spec):
    """Configured dataset, or a uniform sample of the original network."""
    sec = cfg.get("dataset", {})
    if sec.get("path"):
        data = load_dataset(_path(cfg, "dataset_path", sec["path"]))
    else:
        box = sec.get("box")
        box = np.asarray(box, dtype=np.float64) if box is not None else _dataset_box(net, spec)
        data = uniform_sample(net, int(sec.get("count", 20000)), box,
                              derive_seed(cfg.get("seed", 0), "sample"),
                              sec.get("label_mode", "argmax"))
    kind = sec.get("loss") or (LossKind.CROSS_ENTROPY if data.kind == "labels" else LossKind.MSE)
    return data, LossKind(kind)


def _prepare(cfg):
    net_path = _path(cfg, "network")
    if net_path is None:
        raise ValueError("no network given (config key 'network' or --network)")
    net = load_network(net_path)
    spec = resolve_spec(cfg, net)
    out = _path(cfg, "output_dir") or Path("out")
    out.mkdir(parents=True, exist_ok=True)
    return net, spec, out


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


# ---------------------------------------------------------------- commands

def cmd_attack(cfg):
    net, spec, out = _prepare(cfg)
    margin = float(cfg.get("margin", DEFAULT_MARGIN))
    found = find_all(net, spec, search_config(cfg), margin)
    _write_json(out / "counterexamples.json", {
        "counterexamples": [cx.to_dict(spec[cx.property_index].name) for cx in found]
    })
    log.info("%d counter-example(s) written to %s", len(found), out / "counterexamples.json")
    return EXIT_FOUND if found else EXIT_OK


def load_counterexamples(path):
    data = json.loads(Path(path).read_text())
    return [CounterExample(np.array(d["x"], dtype=np.float64), d["property"], d["objective"],
                           d.get("evals", 0), d.get("source", "search"))
            for d in data["counterexamples"]]


def _verdict_exit(verdicts):
    statuses = [v.status for v in verdicts]
    if COUNTEREXAMPLE in statuses:
        return EXIT_FOUND
    if UNKNOWN in statuses:
        return EXIT_CODES[UNKNOWN]
    return EXIT_OK


def cmd_verify(cfg):
    net, spec, out = _prepare(cfg)
    margin = float(cfg.get("margin", DEFAULT_MARGIN))
    vcfg = verify_config(cfg)
    verdicts = [verify(net, prop, vcfg, margin) for prop in spec]
    code = _verdict_exit(verdicts)
    overall = {EXIT_OK: VERIFIED, EXIT_FOUND: COUNTEREXAMPLE}.get(code, UNKNOWN)
    _write_json(out / "verdict.json", {
        "status": overall,
        "verdicts": [dict(v.to_dict(), property=i, property_name=p.name)
                     for i, (p, v) in enumerate(zip(spec, verdicts))],
    })
    log.info("verification: %s", overall)
    return code


def cmd_repair(cfg):
    net, spec, out = _prepare(cfg)
    margin = float(cfg.get("margin", DEFAULT_MARGIN))
    dataset, kind = resolve_dataset(cfg, net, spec)
    outcome = repair_loop(net, dataset, kind, spec, search_config(cfg), repair_config(cfg),
                          verify_config(cfg), margin)
    (out / "network.json").write_text(save_json(outcome.network))
    with open(out / "history.jsonl", "w") as fh:
        for row in outcome.history:
            fh.write(json.dumps(row) + "\n")
    code = EXIT_CODES[outcome.status]
    report = {
        "status": outcome.status,
        "exit_code": code,
        "rounds": outcome.rounds,
        "initial_accuracy": accuracy(net, dataset),
        "final_accuracy": accuracy(outcome.network, dataset),
        "final_mae": mae(outcome.network, net, dataset),
        "runtime": outcome.runtime,
        "certificate": None if outcome.certificate is None else {
            str(i): v.to_dict() for i, v in outcome.certificate.items()},
        "counterexamples": [cx.to_dict(spec[cx.property_index].name) for cx in outcome.counterexamples],
        "history": outcome.history,
    }
    _write_json(out / "report.json", report)
    log.info("repair finished: %s after %d round(s)", outcome.status, outcome.rounds)
    return code


def write_bench_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BENCH_COLUMNS)
        for r in rows:
            writer.writerow([r["optimizer"], r["property"], r["seed"], repr(float(r["runtime_ms"])),
                             repr(float(r["objective"])), r["evals"], r.get("network", ""),
                             ";".join(repr(float(v)) for v in r["x"])])


def read_bench_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["seed"] = int(r["seed"])
        r["evals"] = int(r["evals"])
        r["runtime_ms"] = float(r["runtime_ms"])
        r["objective"] = float(r["objective"])
        r["x"] = np.array([float(v) for v in r["x"].split(";")])
    return rows


def cmd_bench(cfg):
    bench = cfg.get("bench", {})
    networks = bench.get("networks") or [cfg.get("network")]
    if not networks or networks[0] is None:
        raise ValueError("no network given (config key 'network', bench.networks or --network)")
    optimizers = bench.get("optimizers", ["differential_evolution", "multistart"])
    seeds = bench.get("seeds", [derive_seed(cfg.get("seed", 0), "bench")])
    margin = float(cfg.get("margin", DEFAULT_MARGIN))
    base = search_config(cfg)
    out = _path(cfg, "output_dir") or Path("out")
    out.mkdir(parents=True, exist_ok=True)
    rows, trace_rows = [], []
    for net_name in networks:
        net = load_network(_path(cfg, "network", net_name))
        spec = resolve_spec(cfg, net)
        for i, prop in enumerate(spec):
            configs = [replace(base, optimizer=o, seed=s) for o in optimizers for s in seeds]
            pname = f"{i}:{prop.name}"
            got, traces = benchmark_optimizers(net, prop, configs, pname, margin)
            for r, tr in zip(got, traces):
                r["network"] = str(net_name)
                rows.append(r)
                trace_rows.extend((r["optimizer"], pname, r["seed"], net_name, e, v) for e, v in tr)
    write_bench_csv(rows, out / "bench.csv")
    with open(out / "trace.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["optimizer", "property", "seed", "network", "evals", "objective"])
        writer.writerows((o, p, s, n, e, repr(float(v))) for o, p, s, n, e, v in trace_rows)
    log.info("%d benchmark row(s) written to %s", len(rows), out / "bench.csv")
    return EXIT_OK


COMMANDS = {"attack": cmd_attack, "repair": cmd_repair, "verify": cmd_verify, "bench": cmd_bench}


def build_parser():
    parser = argparse.ArgumentParser(prog="cexrepair", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", "-c", help="TOML run configuration")
        p.add_argument("--network", help="network file (.nnet or .json)")
        p.add_argument("--spec", help="spec file, acasxu:K[,K...] or robustness")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="top-level seed")
        p.add_argument("--max-evals", type=int, help="search budget per property")
        p.add_argument("--optimizer", choices=["differential_evolution", "multistart"])
        p.add_argument("--timeout", type=float, help="repair wall-clock limit in seconds")
        p.add_argument("--max-splits", type=int, help="verifier split budget")
        p.add_argument("--verbose", "-v", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, {
            "network": args.network,
            "spec": args.spec,
            "output_dir": args.out,
            "seed": args.seed,
            "search.max_evals": args.max_evals,
            "search.optimizer": args.optimizer,
            "repair.timeout_s": args.timeout,
            "verify.max_splits": args.max_splits,
        })
        return COMMANDS[args.command](cfg)
    except (CexRepairError, OSError, ValueError, KeyError, TypeError) as exc:
        print(f"cexrepair {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
