"""Measurement instruments: the deviation probe, the tau-window deviation bound,
and the communication / compute cost ledger."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from . import params
from .errors import ConfigError, UndefinedProbeError
from .reporting import write_csv


@dataclass(frozen=True)
class DeviationSample:
    round: int
    tau: int
    deviation: float  # ||avg_tau - ref||^2 / ||ref||^2
    raw: float  # ||avg_tau - ref||^2


def deviation_probe(snapshot, tau: int, stored: Sequence[np.ndarray], reference=None) -> DeviationSample:
    """Distance between the mean of the last ``tau`` stored pseudo-gradients and the
    all-clients pseudo-gradient at the snapshot's model.

    ``snapshot`` must provide ``t`` and ``reference_pseudo_gradient()``; pass
    ``reference`` to reuse an already computed all-clients pseudo-gradient.
    The probe only reads; it never advances any stream used by the run.
    """
    if len(stored) == 0:
        raise ValueError("deviation probe needs at least one stored pseudo-gradient")
    if tau < 1:
        raise ValueError("tau must be >= 1")
    ref = reference if reference is not None else snapshot.reference_pseudo_gradient()
    denom = params.norm_sq(ref)
    if denom == 0.0:
        raise UndefinedProbeError("reference pseudo-gradient has zero norm")
    avg = params.mean(list(stored[-tau:]))
    raw = params.norm_sq(params.sub(avg, ref))
    return DeviationSample(int(snapshot.t), int(tau), raw / denom, raw)


def write_deviation_csv(path, samples: Sequence[DeviationSample]) -> None:
    write_csv(
        path,
        ("round", "tau", "deviation", "deviation_raw"),
        ((s.round, s.tau, s.deviation, s.raw) for s in samples),
    )


# tau-window deviation bound -------------------------------------------------


def client_full_gradients(task, theta, client_datasets) -> np.ndarray:
    """One full-batch gradient per client, stacked as rows."""
    return np.stack([task.grad(theta, d) for d in client_datasets])


def _row_mean(G: np.ndarray, idx) -> np.ndarray:
    return G[np.asarray(idx)].sum(axis=0) / len(idx)


@dataclass(frozen=True)
class BoundCheck:
    lhs: float  # E ||mean over window clients - global mean||^2
    rhs: float  # 8 E[((K - |window|)/K)^2] (G^2 + ||g||^2)
    holds: bool
    G2: float
    grad_norm_sq: float
    coverage: float  # E[((K - |window|)/K)^2]
    corollary_rhs: Optional[float] = None  # 8 (1 - tau C)^2 (...), cyclic only


def lemma1_bound_check(client_grads, tau: int, sampler, n_schedules: int = 1000) -> BoundCheck:
    """Monte-Carlo check of the tau-window deviation bound on an exact instance.

    ``client_grads`` holds one full gradient per client (same ``theta``).
    Windows are the unions of ``tau`` consecutive cohorts of ``sampler``
    ending at rounds ``tau, tau+1, ..., tau+n_schedules-1``.
    """
    G = np.asarray(client_grads, dtype=np.float64)
    K = G.shape[0]
    if K != sampler.K:
        raise ValueError(f"{K} client gradients for a sampler over {sampler.K} clients")
    everyone = np.arange(K)
    g = _row_mean(G, everyone)
    G2 = float(np.mean(np.sum((G - g) ** 2, axis=1)))
    gn = params.norm_sq(g)

    cohorts = [set(sampler.sample(t).tolist()) for t in range(1, tau + n_schedules)]
    lhs = 0.0
    cov = 0.0
    for end in range(tau - 1, tau - 1 + n_schedules):
        window = sorted(set().union(*cohorts[end - tau + 1 : end + 1]))
        avg = _row_mean(G, window)
        lhs += params.norm_sq(avg - g)
        cov += ((K - len(window)) / K) ** 2
    lhs /= n_schedules
    cov /= n_schedules
    rhs = 8.0 * cov * (G2 + gn)
    corollary = None
    if sampler.kind == "cyclic" and tau <= sampler.period:
        corollary = 8.0 * ((K - tau * sampler.m) / K) ** 2 * (G2 + gn)
    return BoundCheck(lhs, rhs, bool(lhs <= rhs), G2, gn, cov, corollary)


# cost ledger ----------------------------------------------------------------


@dataclass(frozen=True)
class CostRow:
    algorithm: str
    overhead: float
    model_bytes: int
    participants: int
    rounds_total: int
    rounds_to_target: int  # T when the target was never reached
    reached: bool
    bytes_budget: float  # b_a: bytes over the whole budget
    speedup: float  # s_a = r_a / T
    bytes_to_target: float  # tb_a = b_a * s_a
    bytes_reduction: float  # rtb_a = 1 - tb_a / tb_FedAvg
    work_budget: int  # gradient evaluations over the budget
    work_to_target: float
    work_reduction: float
    wall_time: float  # measured, informational


COST_COLUMNS = tuple(CostRow.__dataclass_fields__)


def cost_report(
    results: Mapping[str, "object"],
    fedavg_target: Optional[float] = None,
    metric: Optional[str] = None,
) -> List[CostRow]:
    """Bytes / work needed by each algorithm to reach FedAvg's final quality.

    ``results`` maps a label to a ``RunResult``; exactly one of them must be a
    FedAvg run. When ``fedavg_target`` is omitted it is FedAvg's final quality.
    """
    from .engine import default_metric, final_quality, rounds_to_target

    base_key = next(
        (k for k, r in results.items() if r.config.algorithm.name == "fedavg"), None
    )
    if base_key is None:
        raise ConfigError("cost report needs a FedAvg baseline run")
    base = results[base_key]
    metric = metric or default_metric(base)
    target = fedavg_target if fedavg_target is not None else final_quality(base, metric)

    partial = {}
    for label, res in results.items():
        T = res.config.rounds
        m = int(res.metadata["cohort_size"])
        mb = int(res.metadata["model_bytes"])
        kind = res.config.algorithm
        r = rounds_to_target(res, target, metric)
        reached = r is not None
        r = r if reached else T
        s = r / T
        b = kind.comm_overhead * 2 * mb * m * T
        work = m * kind.local_steps * T
        partial[label] = (kind, T, m, mb, r, reached, s, b, work, res.wall_time)

    tb0 = partial[base_key][7] * partial[base_key][6]
    tt0 = partial[base_key][8] * partial[base_key][6]
    rows = []
    for label, (kind, T, m, mb, r, reached, s, b, work, wall) in partial.items():
        tb = b * s
        tt = work * s
        rows.append(
            CostRow(
                algorithm=label,
                overhead=kind.comm_overhead,
                model_bytes=mb,
                participants=m,
                rounds_total=T,
                rounds_to_target=r,
                reached=reached,
                bytes_budget=b,
                speedup=s,
                bytes_to_target=tb,
                bytes_reduction=1.0 - tb / tb0,
                work_budget=work,
                work_to_target=tt,
                work_reduction=1.0 - tt / tt0,
                wall_time=wall,
            )
        )
    return rows


def write_cost_csv(path, rows: Sequence[CostRow]) -> None:
    write_csv(path, COST_COLUMNS, ([getattr(r, c) for c in COST_COLUMNS] for r in rows))
