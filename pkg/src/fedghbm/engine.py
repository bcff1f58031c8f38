"""The federated training loop.

Every random stream is keyed by the master seed, so a run is a pure function of
its :class:`~fedghbm.config.RunConfig`. Client work inside a round may run on a
thread pool; results are always merged in ascending client-id order, which
makes the trajectory independent of the worker count.
"""

from __future__ import annotations

import logging
import math
import os
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import algorithms as algos
from . import metrics
from .config import RunConfig
from .data import Partition, local_batches, partition_dirichlet, partition_domain_split, partition_iid
from .errors import FedError, RunError, UndefinedProbeError
from .params import ParamVector
from .sampling import Sampler
from .tasks import (
    Dataset,
    LogisticRegression,
    Mlp,
    QuadraticRegression,
    Task,
    evaluate,
    generate_quadratic_dataset,
    generate_synthetic_classification,
)

log = logging.getLogger(__name__)

MAX_WORKERS_ENV = "FEDGHBM_MAX_WORKERS"
BYTES_PER_PARAM = 8  # float64 on the wire

# stream tags for derive_seed
_DATA, _SPLIT, _PARTITION, _SAMPLER, _INIT, _CLIENT = range(1, 7)


def derive_seed(seed: int, *tags: int) -> int:
    return int(np.random.SeedSequence([seed, *tags]).generate_state(1)[0])


def client_rng(seed: int, client: int, t: int) -> np.random.Generator:
    return np.random.default_rng([seed, _CLIENT, client, t])


def effective_workers(requested: int) -> int:
    cap = os.environ.get(MAX_WORKERS_ENV)
    if cap:
        return max(1, min(requested, int(cap)))
    return max(1, requested)


@dataclass
class RoundRecord:
    round: int
    train_loss: float
    test_loss: Optional[float]
    test_accuracy: Optional[float]
    bytes_cum: int
    deviation: Optional[float] = None
    deviation_raw: Optional[float] = None
    deviations: Dict[int, metrics.DeviationSample] = field(default_factory=dict)


@dataclass
class RunResult:
    records: List[RoundRecord]
    final_theta: ParamVector
    config: RunConfig
    metadata: dict
    work_units: int
    wall_time: float = 0.0  # informational only, never compared

    @property
    def is_classification(self) -> bool:
        return self.records[0].test_accuracy is not None

    def series(self, metric: str, include_initial: bool = False):
        recs = self.records if include_initial else [r for r in self.records if r.round >= 1]
        return [r.round for r in recs], [getattr(r, metric) for r in recs]


class Federation:
    """Datasets, partition, task and sampler of one run, plus client execution."""

    def __init__(self, config: RunConfig):
        self.config = config
        spec = config.task
        seed = config.seed
        data_seed = spec.data_seed if spec.data_seed is not None else derive_seed(seed, _DATA)
        if spec.kind == "quadratic":
            full = generate_quadratic_dataset(
                spec.n, spec.x_low, spec.x_high, spec.coeffs, spec.noise_std, data_seed
            )
            self.task: Task = QuadraticRegression()
        else:
            full = generate_synthetic_classification(
                spec.n, spec.d_in, spec.n_classes, spec.cluster_spread, data_seed, spec.center_scale
            )
            if spec.kind == "logistic":
                self.task = LogisticRegression(spec.n_classes, spec.d_in)
            else:
                self.task = Mlp(spec.d_in, spec.hidden, spec.n_classes)

        n_test = int(round(spec.n * spec.test_fraction))
        if n_test > 0:
            perm = np.random.default_rng(derive_seed(seed, _SPLIT)).permutation(spec.n)
            self.train = full.subset(np.sort(perm[n_test:]))
            self.test: Optional[Dataset] = full.subset(np.sort(perm[:n_test]))
        else:
            self.train, self.test = full, None

        pspec = config.partition
        K = pspec.num_clients
        if pspec.kind == "iid":
            self.partition = partition_iid(self.train.n, K, derive_seed(seed, _PARTITION))
        elif pspec.kind == "dirichlet":
            self.partition = partition_dirichlet(
                self.train.labels, K, pspec.alpha, derive_seed(seed, _PARTITION)
            )
        else:
            self.partition = partition_domain_split(self.train, K)
        self.partition.validate(self.train.n)
        self.client_data = [self.train.subset(ix) for ix in self.partition.client_indices]

        self.sampler = Sampler(
            config.sampler.kind, K, config.sampler.participation, derive_seed(seed, _SAMPLER)
        )
        self.kind = config.algorithm
        self.init_seed = derive_seed(seed, _INIT)

    @property
    def K(self) -> int:
        return self.partition.K

    def run_client(self, i: int, t: int, theta, bc, state) -> ParamVector:
        data = self.client_data[i]
        rng = client_rng(self.config.seed, i, t)
        batches = local_batches(data.n, self.config.batch_size, self.kind.local_steps, rng)
        if state is None:
            state = algos.init_client(self.kind, theta.shape[0])
        return algos.client_round(self.kind, theta, bc, self.task, data, batches, state, t)

    def run_clients(self, ids, t, theta, bc, states, pool=None) -> List[ParamVector]:
        def work(i):
            try:
                return self.run_client(int(i), t, theta, bc, states.get(int(i)))
            except FedError as exc:
                raise RunError(str(exc), t, int(i)) from exc
            except (ArithmeticError, ValueError, IndexError) as exc:
                raise RunError(f"{type(exc).__name__}: {exc}", t, int(i)) from exc

        if pool is None:
            return [work(i) for i in ids]
        return list(pool.map(work, ids))


@dataclass
class RoundSnapshot:
    """Server-side view at the start of round ``t`` (model ``theta^{t-1}``)."""

    federation: Federation
    t: int
    theta: ParamVector
    broadcast: algos.Broadcast
    client_states: Dict[int, algos.ClientState]
    pool: Optional[ThreadPoolExecutor] = None

    def reference_pseudo_gradient(self) -> ParamVector:
        """Pseudo-gradient if every client had participated from ``theta``."""
        fed = self.federation
        finals = fed.run_clients(
            range(fed.K), self.t, self.theta, self.broadcast, dict(self.client_states), self.pool
        )
        return algos.pseudo_gradient(self.theta, finals)


def _evaluate(fed: Federation, theta, t, bytes_cum) -> RoundRecord:
    train_loss, _ = evaluate(fed.task, theta, fed.train)
    if fed.test is not None:
        test_loss, acc = evaluate(fed.task, theta, fed.test)
    else:
        test_loss, acc = None, None
        if fed.task.is_classification:
            _, acc = evaluate(fed.task, theta, fed.train)
    return RoundRecord(t, train_loss, test_loss, acc, bytes_cum)


def run(config: RunConfig, workers: Optional[int] = None) -> RunResult:
    start = time.perf_counter()
    fed = Federation(config)
    kind = fed.kind
    K = fed.K
    theta = fed.task.init_params(fed.init_seed)
    server = algos.init_server(kind, theta)
    client_states: Dict[int, algos.ClientState] = {}
    model_bytes = theta.shape[0] * BYTES_PER_PARAM

    taus = config.probe_taus
    pseudo_hist = deque(maxlen=max(taus)) if taus else None
    bytes_cum = 0
    work_units = 0
    records = [_evaluate(fed, theta, 0, 0)]
    n_workers = effective_workers(workers if workers is not None else config.workers)
    pool = ThreadPoolExecutor(max_workers=n_workers) if n_workers > 1 else None

    try:
        for t in range(1, config.rounds + 1):
            cohort = [int(i) for i in fed.sampler.sample(t)]
            theta_prev = server.theta
            bc = algos.broadcast(kind, server, t)
            finals = fed.run_clients(cohort, t, theta_prev, bc, client_states, pool)
            work_units += len(cohort) * kind.local_steps
            is_eval = t % config.eval_every == 0 or t == config.rounds

            sample_map = {}
            if taus:
                pseudo_hist.append(algos.pseudo_gradient(theta_prev, finals))
                if is_eval:
                    snap = RoundSnapshot(fed, t, theta_prev, bc, client_states, pool)
                    ref = snap.reference_pseudo_gradient()
                    for tau in taus:
                        try:
                            sample_map[tau] = metrics.deviation_probe(
                                snap, tau, list(pseudo_hist), reference=ref
                            )
                        except UndefinedProbeError:
                            log.warning("round %d: zero reference pseudo-gradient, probe skipped", t)

            old_states = {
                i: client_states.get(i) or algos.init_client(kind, theta.shape[0]) for i in cohort
            }
            new_states = {
                i: algos.client_state_after(kind, old_states[i], theta_prev, th, bc, t)
                for i, th in zip(cohort, finals)
            }
            deltas = None
            if kind.name == "scaffold":
                deltas = [
                    new_states[i].client_control - old_states[i].client_control for i in cohort
                ]
            try:
                server = algos.server_update(kind, server, finals, K, deltas)
            except FedError as exc:
                raise RunError(str(exc), t) from exc
            if kind.stateful:
                for i in cohort:  # ascending id
                    client_states[i] = new_states[i]

            bytes_cum += int(round(kind.comm_overhead * 2 * model_bytes * len(cohort)))
            if is_eval:
                rec = _evaluate(fed, server.theta, t, bytes_cum)
                if sample_map:
                    rec.deviations = sample_map
                    first = sample_map.get(taus[0])
                    if first is not None:
                        rec.deviation = first.deviation
                        rec.deviation_raw = first.raw
                records.append(rec)
    finally:
        if pool is not None:
            pool.shutdown()

    metadata = {
        "seed": config.seed,
        "config_hash": config.config_hash(),
        "config": config.replay_dict(),
        "dim": int(theta.shape[0]),
        "model_bytes": int(model_bytes),
        "cohort_size": fed.sampler.m,
        "num_clients": K,
    }
    return RunResult(
        records=records,
        final_theta=server.theta.copy(),
        config=config,
        metadata=metadata,
        work_units=work_units,
        wall_time=time.perf_counter() - start,
    )


def default_metric(result: RunResult) -> str:
    return "test_accuracy" if result.is_classification else "train_loss"


def _higher_is_better(metric: str) -> bool:
    return metric.endswith("accuracy")


def rounds_to_target(result: RunResult, target: float, metric: Optional[str] = None) -> Optional[int]:
    """First evaluated round whose metric reaches ``target`` (``None`` if never)."""
    metric = metric or default_metric(result)
    higher = _higher_is_better(metric)
    for r in result.records:
        if r.round < 1:
            continue
        v = getattr(r, metric)
        if v is None or math.isnan(v):
            continue
        if (v >= target) if higher else (v <= target):
            return r.round
    return None


def final_quality(result: RunResult, metric: Optional[str] = None) -> float:
    """Mean of the metric over the last tenth of the evaluations (at least one)."""
    metric = metric or default_metric(result)
    _, vals = result.series(metric)
    k = max(1, len(vals) // 10)
    return float(np.mean(vals[-k:]))
