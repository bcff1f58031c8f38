"""Command-line entry point: ``fedghbm run|sweep|probe <config.json>`` and ``fedghbm verify``.

Exit codes: 0 success, 1 runtime failure or failing verification, 2 invalid
configuration (message anchored at ``path:line``).
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import re
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import jsonschema
import numpy as np

from . import engine
from .config import RunConfig
from .errors import ConfigError, FedError
from .metrics import DeviationSample, write_deviation_csv
from .reporting import write_csv, write_json, write_run_csv
from .sampling import Sampler

log = logging.getLogger("fedghbm")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

# sweep axis -> (section, field) in the run config
SWEEP_AXES = {
    "tau": ("algorithm", "tau"),
    "participation": ("sampler", "participation"),
    "beta": ("algorithm", "beta"),
    "alpha": ("partition", "alpha"),
    "seed": (None, "seed"),
}


class ConfigFileError(Exception):
    """Invalid experiment file; ``str()`` is the line-anchored message."""

    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")


@dataclass
class Experiment:
    name: str
    output_dir: Path
    base: RunConfig
    sweep: Dict[str, list] = field(default_factory=dict)
    source: Optional[Path] = None

    def cells(self) -> List[Tuple[Dict[str, object], RunConfig]]:
        """Cartesian product of the sweep axes (axis order as in ``SWEEP_AXES``)."""
        axes = [a for a in SWEEP_AXES if self.sweep.get(a)]
        if not axes:
            return [({}, self.base)]
        out = []
        for combo in itertools.product(*(self.sweep[a] for a in axes)):
            values = dict(zip(axes, combo))
            changes: dict = {}
            for axis, v in values.items():
                section, key = SWEEP_AXES[axis]
                if section is None:
                    changes[key] = v
                else:
                    changes.setdefault(section, {})[key] = v
            out.append((values, self.base.with_updates(**changes)))
        return out


def load_schema() -> dict:
    text = resources.files("fedghbm").joinpath("schema/experiment.schema.json").read_text()
    return json.loads(text)


def _key_line(text: str, path, extra_key: Optional[str] = None) -> int:
    """Best-effort line of the JSON key addressed by ``path`` (list of keys / indices)."""
    pos = 0
    for part in list(path) + ([extra_key] if extra_key else []):
        if isinstance(part, int):
            continue
        m = re.compile(r'"%s"\s*:' % re.escape(str(part))).search(text, pos)
        if m is None:
            break
        pos = m.start()
    return text.count("\n", 0, pos) + 1


def _schema_message(err: jsonschema.ValidationError) -> Tuple[str, Optional[str]]:
    where = ".".join(str(p) for p in err.absolute_path) or "<root>"
    if err.validator == "additionalProperties":
        extra = re.findall(r"'([^']+)'", err.message)
        key = extra[0] if extra else None
        return f"unknown key {key!r} in {where}", key
    return f"{where}: {err.message}", None


def load_experiment(path) -> Experiment:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigFileError(path, 1, f"cannot read config: {exc.strerror or exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigFileError(path, exc.lineno, f"invalid JSON: {exc.msg} (column {exc.colno})") from exc

    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        msg, key = _schema_message(errors[0])
        raise ConfigFileError(path, _key_line(text, errors[0].absolute_path, key), msg)

    raw = dict(raw)
    name = raw.pop("name")
    out_dir = raw.pop("output_dir", "out")
    sweep = raw.pop("sweep", {}) or {}
    try:
        base = RunConfig.from_dict(raw)
        exp = Experiment(name, (path.parent / out_dir), base, sweep, path)
        for _, cfg in exp.cells():  # every cell must build
            _precheck(cfg)
    except (ConfigError, TypeError, ValueError) as exc:
        raise ConfigFileError(path, _key_line(text, _guess_path(str(exc))), str(exc)) from exc
    return exp


def _precheck(cfg: RunConfig) -> None:
    """Cheap feasibility checks that otherwise surface only once a run starts."""
    Sampler(cfg.sampler.kind, cfg.partition.num_clients, cfg.sampler.participation)
    n_train = cfg.task.n - int(round(cfg.task.n * cfg.task.test_fraction))
    if cfg.partition.num_clients > n_train:
        raise ConfigError(f"num_clients {cfg.partition.num_clients} exceeds {n_train} training rows")


def _guess_path(message: str) -> list:
    keys = ["cyclic", "tau", "beta", "participation", "alpha", "num_clients", "rounds", "local_steps", "kind"]
    aliases = {"cyclic": "sampler"}
    return [aliases.get(k, k) for k in keys if k in message][:1]


# outputs -----------------------------------------------------------------------


def _cell_label(values: Dict[str, object]) -> str:
    return "__".join(f"{k}-{v}" for k, v in values.items())


def _final_metrics(result) -> dict:
    last = result.records[-1]
    metric = engine.default_metric(result)
    return {
        "metric": metric,
        "final_quality": engine.final_quality(result, metric),
        "train_loss": last.train_loss,
        "test_loss": last.test_loss,
        "test_accuracy": last.test_accuracy,
        "bytes_cum": last.bytes_cum,
        "work_units": result.work_units,
        "rounds": last.round,
    }


def _manifest(result, csv_name: str, extra: Optional[dict] = None) -> dict:
    md = result.metadata
    out = {
        "config_hash": md["config_hash"],
        "seed": md["seed"],
        "seeds": {
            "master": md["seed"],
            "data": result.config.task.data_seed,
            "note": "sub-streams derive from the master seed",
        },
        "config": md["config"],
        "dim": md["dim"],
        "model_bytes": md["model_bytes"],
        "cohort_size": md["cohort_size"],
        "num_clients": md["num_clients"],
        "final": _final_metrics(result),
        "metrics_csv": csv_name,
        "wall_time": result.wall_time,
    }
    if extra:
        out.update(extra)
    return out


def _deviation_samples(result) -> List[DeviationSample]:
    out = []
    for rec in result.records:
        for tau in sorted(rec.deviations):
            out.append(rec.deviations[tau])
    return out


def _write_single(exp: Experiment, stem: str, result, extra=None) -> None:
    csv_name = f"{stem}.csv"
    write_run_csv(exp.output_dir / csv_name, result)
    if result.config.probe_taus:
        write_deviation_csv(exp.output_dir / f"{stem}.deviation.csv", _deviation_samples(result))
    write_json(exp.output_dir / f"{stem}.manifest.json", _manifest(result, csv_name, extra))


# commands ----------------------------------------------------------------------


def cmd_run(config_path) -> int:
    exp = load_experiment(config_path)
    result = engine.run(exp.base)
    _write_single(exp, exp.name, result)
    fin = _final_metrics(result)
    print(f"{exp.name}: {fin['metric']} {fin['final_quality']:.6g} -> {exp.output_dir}")
    return EXIT_OK


def cmd_sweep(config_path) -> int:
    exp = load_experiment(config_path)
    cells = exp.cells()
    if len(cells) == 1 and not cells[0][0]:
        return cmd_run(config_path)

    groups: Dict[tuple, List[float]] = {}
    group_keys = [a for a in SWEEP_AXES if a != "seed" and exp.sweep.get(a)]
    metric = None
    for values, cfg in cells:
        result = engine.run(cfg)
        stem = f"{exp.name}__{_cell_label(values)}"
        _write_single(exp, stem, result, {"cell": values})
        metric = metric or engine.default_metric(result)
        key = tuple(values[a] for a in group_keys)
        groups.setdefault(key, []).append(engine.final_quality(result, metric))
        log.info("cell %s done", values)

    header = tuple(group_keys) + ("metric", "mean", "std", "n_seeds")
    rows = []
    for key, vals in groups.items():
        arr = np.asarray(vals, dtype=np.float64)
        rows.append(key + (metric, float(arr.mean()), float(arr.std()), len(vals)))
    write_csv(exp.output_dir / f"{exp.name}.summary.csv", header, rows)
    print(f"{exp.name}: {len(cells)} cells -> {exp.output_dir}")
    return EXIT_OK


def cmd_probe(config_path) -> int:
    """Run with the deviation probe; writes only the deviation CSV and a manifest."""
    exp = load_experiment(config_path)
    cfg = exp.base
    if not cfg.probe_taus:
        period = max(1, round(1 / cfg.sampler.participation))
        cfg = cfg.with_updates(probe_taus=sorted({1, period}))
    result = engine.run(cfg)
    samples = _deviation_samples(result)
    csv_name = f"{exp.name}.deviation.csv"
    write_deviation_csv(exp.output_dir / csv_name, samples)
    means = {}
    for tau in cfg.probe_taus:
        vals = [s.deviation for s in samples if s.tau == tau and s.round >= tau]
        means[str(tau)] = float(np.mean(vals)) if vals else None
    write_json(
        exp.output_dir / f"{exp.name}.manifest.json",
        _manifest(result, csv_name, {"mean_deviation": means}),
    )
    for tau, v in means.items():
        print(f"tau={tau}: mean deviation {v}")
    return EXIT_OK


def cmd_verify() -> int:
    from .verify import format_table, run_suites

    results = run_suites()
    print(format_table(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print("FAILED: " + ", ".join(failed), file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedghbm", description="Federated momentum experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("run", "run one experiment"),
        ("sweep", "run the Cartesian product of the sweep axes"),
        ("probe", "run with the deviation probe and write its CSV"),
    ):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config", type=Path)
    sub.add_parser("verify", help="run the built-in property suites")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "verify":
            return cmd_verify()
        return {"run": cmd_run, "sweep": cmd_sweep, "probe": cmd_probe}[args.command](args.config)
    except ConfigFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FedError, FloatingPointError, ArithmeticError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
