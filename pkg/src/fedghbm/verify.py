"""Built-in property suites behind ``fedghbm verify``.

Each suite returns a :class:`SuiteResult`; a suite passes only if every one of
its checks does. The suites are small enough to finish in seconds.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass
from typing import Callable, List, Sequence

import numpy as np

from . import algorithms as algos
from .algorithms import AlgoKind
from .config import PartitionSpec, RunConfig, SamplerSpec, TaskSpec
from .data import local_batches
from .engine import Federation, RoundSnapshot, client_rng, run
from .metrics import client_full_gradients, deviation_probe, lemma1_bound_check
from .sampling import Sampler
from .tasks import (
    LogisticRegression,
    Mlp,
    QuadraticRegression,
    finite_diff_grad,
    generate_quadratic_dataset,
    generate_synthetic_classification,
)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def rel_max_deviation(a: Sequence[np.ndarray], b: Sequence[np.ndarray]) -> float:
    """max_t ||a_t - b_t||_inf / max(||b_t||_inf, tiny)."""
    worst = 0.0
    for x, y in zip(a, b):
        scale = max(float(np.max(np.abs(y))), np.finfo(float).tiny)
        worst = max(worst, float(np.max(np.abs(x - y))) / scale)
    return worst


def grad_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n||_inf / max(||a||_inf, ||n||_inf); zero when both vanish."""
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric))) / scale


# form equivalence -------------------------------------------------------------


def _toy_problem(seed: int = 0):
    data = generate_synthetic_classification(60, 4, 3, cluster_spread=1.5, seed=seed)
    task = LogisticRegression(3, 4)
    return task, data, task.init_params(seed)


def classical_trajectories(steps=20, beta=0.9, lr=0.1, seed=0):
    """Moving-average form vs heavy-ball form of classical momentum."""
    task, data, theta0 = _toy_problem(seed)
    th, m = theta0.copy(), np.zeros_like(theta0)
    ma = []
    for _ in range(steps):
        m = algos.hbm_moving_average(m, task.grad(th, data), beta)
        th = th - lr * m
        ma.append(th)

    hist = deque([theta0.copy()], maxlen=2)
    th = theta0.copy()
    hb = []
    for t in range(1, steps + 1):
        th = th - lr * task.grad(th, data) + beta * algos.ghbm_momentum(hist, 1, 1, t)
        hist.append(th)
        hb.append(th)
    return ma, hb


def ghbm_trajectories(tau, steps=20, beta=0.9, lr=0.1, seed=0):
    """Span-averaged moving-average form vs heavy-ball form with a tau window."""
    task, data, theta0 = _toy_problem(seed)
    th = theta0.copy()
    ms: List[np.ndarray] = []
    ma = []
    for t in range(1, steps + 1):
        s = min(tau, t - 1)
        m = task.grad(th, data)
        if s > 0:
            m = m + (beta / s) * np.sum(ms[-s:], axis=0)
        ms.append(m)
        th = th - lr * m
        ma.append(th)

    hist = deque([theta0.copy()], maxlen=tau + 1)
    th = theta0.copy()
    hb = []
    for t in range(1, steps + 1):
        th = th - lr * task.grad(th, data) + beta * algos.ghbm_momentum(hist, tau, 1, t)
        hist.append(th)
        hb.append(th)
    return ma, hb


def suite_form_equivalence(tol: float = 1e-9) -> SuiteResult:
    parts = []
    ok = True
    d = rel_max_deviation(*classical_trajectories())
    ok &= d < tol
    parts.append(f"classical {d:.1e}")
    for tau in (1, 2, 5):
        d = rel_max_deviation(*ghbm_trajectories(tau))
        ok &= d < tol
        parts.append(f"tau={tau} {d:.1e}")
    return SuiteResult("form equivalence", bool(ok), ", ".join(parts))


# reduction identities -------------------------------------------------------------


def _small_config(**algo) -> RunConfig:
    return RunConfig(
        task=TaskSpec(kind="logistic", n=400, d_in=5, n_classes=4),
        partition=PartitionSpec(kind="dirichlet", num_clients=10, alpha=0.3),
        sampler=SamplerSpec(kind="uniform", participation=0.3),
        algorithm=AlgoKind(client_lr=0.05, local_steps=3, **algo),
        rounds=8,
        batch_size=8,
        seed=3,
    )


def centralized_sgd(config: RunConfig) -> np.ndarray:
    """Plain minibatch SGD on the single client's data, same streams as a run."""
    fed = Federation(config)
    th = fed.task.init_params(fed.init_seed)
    data = fed.client_data[0]
    lr = config.algorithm.client_lr
    for t in range(1, config.rounds + 1):
        rng = client_rng(config.seed, 0, t)
        for batch in local_batches(data.n, config.batch_size, config.algorithm.local_steps, rng):
            th = th - lr * fed.task.grad(th, data, batch)
    return th


def reduction_pairs():
    """(label, config_a, config_b) pairs whose final models must agree bitwise."""
    base = _small_config(name="fedavg")
    sgd = base.with_updates(
        partition={"num_clients": 1, "kind": "iid"},
        sampler={"participation": 1.0},
        algorithm={"local_steps": 1},
    )
    return [
        ("ghbm(tau=1) == fedcm", _small_config(name="ghbm", beta=0.7, tau=1), _small_config(name="fedcm", beta=0.7)),
        ("fedavgm(beta=0) == fedavg", _small_config(name="fedavgm", beta=0.0), base),
        ("fedcm(beta=0) == fedavg", _small_config(name="fedcm", beta=0.0), base),
        ("fedprox(mu=0) == fedavg", _small_config(name="fedprox", mu=0.0), base),
        ("fedavg(K=1) == sgd", sgd, None),
    ]


def suite_reductions() -> SuiteResult:
    bad = []
    for label, a, b in reduction_pairs():
        ta = run(a).final_theta
        tb = centralized_sgd(a) if b is None else run(b).final_theta
        if not np.array_equal(ta, tb):
            bad.append(label)
    detail = "all bitwise equal" if not bad else "differ: " + "; ".join(bad)
    return SuiteResult("reduction identities", not bad, detail)


# sampler invariants ---------------------------------------------------------------


def check_sampler(s: Sampler, rounds: int) -> List[str]:
    problems = []
    for t in range(1, rounds + 1):
        ids = s.sample(t)
        if len(ids) != s.m or len(set(ids.tolist())) != s.m:
            problems.append(f"t={t}: cohort size")
        if ids.min() < 0 or ids.max() >= s.K or np.any(np.diff(ids) <= 0):
            problems.append(f"t={t}: ids out of range or unsorted")
        if not np.array_equal(ids, s.sample(t)):
            problems.append(f"t={t}: not reproducible")
    if s.kind == "cyclic":
        P = s.period
        for start in range(1, rounds - P + 2, P):
            covered = np.concatenate([s.sample(t) for t in range(start, start + P)])
            if not np.array_equal(np.sort(covered), np.arange(s.K)):
                problems.append(f"period starting at {start} is not a partition")
        if rounds > P and not np.array_equal(s.sample(1), s.sample(1 + P)):
            problems.append("cyclic schedule not periodic")
    return problems


def suite_samplers(seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng(seed)
    problems = []
    n = 0
    for _ in range(40):
        m = int(rng.integers(1, 6))
        period = int(rng.integers(1, 6))
        K = m * period
        C = m / K
        for kind in ("uniform", "cyclic"):
            s = Sampler(kind, K, C, int(rng.integers(0, 2**31)))
            if s.m != m:
                problems.append(f"{kind} K={K} C={C}: m={s.m} != {m}")
            problems += check_sampler(s, 3 * period + 1)
            n += 1
    detail = f"{n} samplers ok" if not problems else problems[0]
    return SuiteResult("sampler invariants", not problems, detail)


# gradient checks ------------------------------------------------------------------


def gradient_cases(n_draws: int = 50, seed: int = 0):
    """Yield (task name, analytic, numeric) over random parameters and batches."""
    rng = np.random.default_rng(seed)
    quad = (QuadraticRegression(), generate_quadratic_dataset(200, noise_std=1.0, seed=seed))
    logi = (LogisticRegression(4, 5), generate_synthetic_classification(120, 5, 4, seed=seed))
    mlp = (Mlp(5, 6, 4), generate_synthetic_classification(120, 5, 4, seed=seed + 1))
    for name, (task, data) in (("quadratic", quad), ("logistic", logi), ("mlp", mlp)):
        for _ in range(n_draws):
            theta = task.init_params(int(rng.integers(0, 2**31))) + rng.normal(0, 0.5, task.dim)
            batch = rng.choice(data.n, size=16, replace=False)
            yield name, task.grad(theta, data, batch), finite_diff_grad(task, theta, data, batch)


def suite_gradients(n_draws: int = 50, tol: float = 1e-5) -> SuiteResult:
    worst = {}
    for name, a, num in gradient_cases(n_draws):
        worst[name] = max(worst.get(name, 0.0), grad_rel_error(a, num))
    ok = all(v < tol for v in worst.values())
    return SuiteResult("gradient checks", ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


# zero-deviation corollary ---------------------------------------------------------


def corollary_config(seed: int = 0) -> RunConfig:
    return RunConfig(
        task=TaskSpec(kind="logistic", n=500, d_in=5, n_classes=5, test_fraction=0.0),
        partition=PartitionSpec(kind="dirichlet", num_clients=10, alpha=0.0),
        sampler=SamplerSpec(kind="cyclic", participation=0.2),
        algorithm=AlgoKind(name="fedavg", client_lr=0.1, local_steps=1),
        rounds=5,
        batch_size=None,
        seed=seed,
    )


def corollary_deviation(config: RunConfig, theta=None):
    """Probe with tau = 1/C at a fixed model after one full cyclic period."""
    fed = Federation(config)
    theta = fed.task.init_params(fed.init_seed) if theta is None else theta
    tau = fed.sampler.period
    bc = algos.Broadcast()
    stored = []
    for t in range(1, tau + 1):
        finals = fed.run_clients(fed.sampler.sample(t), t, theta, bc, {})
        stored.append(algos.pseudo_gradient(theta, finals))
    snap = RoundSnapshot(fed, tau, theta, bc, {})
    return deviation_probe(snap, tau, stored)


def suite_corollary(tol: float = 1e-10) -> SuiteResult:
    worst = max(corollary_deviation(corollary_config(s)).deviation for s in range(3))
    return SuiteResult("zero-deviation corollary", worst < tol, f"max relative {worst:.1e}")


# tau-window deviation bound -------------------------------------------------------


def random_bound_instance(rng):
    """A small heterogeneous instance: (client gradients, list of samplers)."""
    m = int(rng.integers(1, 5))
    period = int(rng.integers(2, max(3, 20 // m + 1)))
    period = min(period, 20 // m)
    K = m * period
    d_in, k = 3, 3
    data = generate_synthetic_classification(K * 6, d_in, k, seed=int(rng.integers(0, 2**31)))
    order = np.argsort(data.labels, kind="stable")  # label-skewed clients
    task = LogisticRegression(k, d_in)
    theta = task.init_params(int(rng.integers(0, 2**31))) + rng.normal(0, 1.0, task.dim)
    clients = [data.subset(ix) for ix in np.array_split(order, K)]
    G = client_full_gradients(task, theta, clients)
    C = m / K
    seed = int(rng.integers(0, 2**31))
    return G, [Sampler("uniform", K, C, seed), Sampler("cyclic", K, C, seed)]


def bound_checks(n_instances: int = 100, n_schedules: int = 200, seed: int = 0):
    rng = np.random.default_rng(seed)
    for _ in range(n_instances):
        G, samplers = random_bound_instance(rng)
        for s in samplers:
            for tau in range(1, s.period + 1):
                yield s, tau, lemma1_bound_check(G, tau, s, n_schedules)


def suite_bound(n_instances: int = 20) -> SuiteResult:
    n = 0
    for s, tau, chk in bound_checks(n_instances, n_schedules=100):
        n += 1
        if not chk.holds:
            return SuiteResult(
                "tau-window bound", False, f"{s.kind} K={s.K} tau={tau}: {chk.lhs:.3g} > {chk.rhs:.3g}"
            )
    return SuiteResult("tau-window bound", True, f"{n} cases hold")


SUITES: List[Callable[[], SuiteResult]] = [
    suite_form_equivalence,
    suite_reductions,
    suite_samplers,
    suite_gradients,
    suite_corollary,
    suite_bound,
]


def run_suites(suites=None) -> List[SuiteResult]:
    out = []
    for fn in suites or SUITES:
        t0 = time.perf_counter()
        try:
            res = fn()
        except Exception as exc:  # a crashing suite is a failing suite
            res = SuiteResult(fn.__name__.removeprefix("suite_"), False, f"{type(exc).__name__}: {exc}")
        res.seconds = time.perf_counter() - t0
        out.append(res)
    return out


def format_table(results: Sequence[SuiteResult]) -> str:
    w = max(len(r.name) for r in results)
    lines = [f"{'suite':<{w}}  result  time     detail"]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.name:<{w}}  {status:<6}  {r.seconds:6.2f}s  {r.detail}")
    return "\n".join(lines)
