"""End-to-end acceptance criteria, each with its tolerance and time budget.

Every test records a one-line PASS/FAIL summary that is printed at the end of
the pytest session (see ``conftest.py``).
"""

import time

import numpy as np
import pytest

from fedghbm import AlgoKind, PartitionSpec, RunConfig, SamplerSpec, TaskSpec, final_quality, run
from fedghbm.engine import RoundRecord, RunResult
from fedghbm.metrics import cost_report
from fedghbm.reporting import run_csv_text
from fedghbm.verify import (
    bound_checks,
    centralized_sgd,
    classical_trajectories,
    corollary_config,
    corollary_deviation,
    ghbm_trajectories,
    grad_rel_error,
    gradient_cases,
    reduction_pairs,
    rel_max_deviation,
)

SEEDS = range(5)


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0


def test_01_form_equivalence(acceptance_report):
    with Timer() as tm:
        devs = {"classical": rel_max_deviation(*classical_trajectories(steps=20))}
        for tau in (1, 2, 5):
            devs[f"tau={tau}"] = rel_max_deviation(*ghbm_trajectories(tau, steps=20))
    worst = max(devs.values())
    ok = worst < 1e-9
    detail = "max rel deviation " + ", ".join(f"{k} {v:.1e}" for k, v in devs.items())
    assert acceptance_report(1, "form equivalence", ok, detail, tm.seconds, 1.0)


def test_02_reduction_identities(acceptance_report):
    with Timer() as tm:
        bad = []
        for label, a, b in reduction_pairs():
            ta = run(a).final_theta
            tb = centralized_sgd(a) if b is None else run(b).final_theta
            if not np.array_equal(ta, tb):
                bad.append(label)
    detail = f"{len(reduction_pairs())} identities bitwise" if not bad else "differ: " + ", ".join(bad)
    assert acceptance_report(2, "reduction identities", not bad, detail, tm.seconds, 5.0)


def test_03_zero_deviation_corollary(acceptance_report):
    with Timer() as tm:
        cfg = corollary_config(0)
        assert cfg.partition.num_clients == 10 and cfg.sampler.participation == 0.2
        assert cfg.algorithm.local_steps == 1 and cfg.batch_size is None
        sample = corollary_deviation(cfg)
    ok = sample.tau == 5 and sample.deviation < 1e-10
    detail = f"tau={sample.tau} relative deviation {sample.deviation:.2e}"
    assert acceptance_report(3, "zero-deviation corollary", ok, detail, tm.seconds, 5.0)


def test_04_window_bound(acceptance_report):
    with Timer() as tm:
        n = 0
        worst_ratio = 0.0
        failures = []
        kinds = set()
        for s, tau, chk in bound_checks(n_instances=100, n_schedules=200, seed=2024):
            n += 1
            kinds.add(s.kind)
            assert s.K <= 20 and 1 <= tau <= s.period
            if chk.rhs > 0:
                worst_ratio = max(worst_ratio, chk.lhs / chk.rhs)
            if not chk.holds:
                failures.append((s.kind, s.K, tau))
    ok = not failures and kinds == {"uniform", "cyclic"}
    detail = f"{n} (instance, sampler, tau) cases, max lhs/rhs {worst_ratio:.3f}"
    if failures:
        detail += f", violations {failures[:3]}"
    assert acceptance_report(4, "tau-window deviation bound", ok, detail, tm.seconds, 60.0)


def fig2_config(name, participation, seed, tau=1):
    return RunConfig(
        task=TaskSpec(kind="quadratic", n=6400, x_low=-10.0, x_high=10.0, coeffs=(10.0, 5.0, -1.0), noise_std=0.0, test_fraction=0.0),
        partition=PartitionSpec(kind="domain_split", num_clients=10),
        sampler=SamplerSpec(kind="cyclic", participation=participation),
        algorithm=AlgoKind(name=name, beta=0.9, tau=tau, client_lr=1e-4, local_steps=2),
        rounds=500,
        batch_size=64,
        eval_every=50,
        seed=seed,
    )


def final_train_loss(res):
    return res.records[-1].train_loss


def test_05_quadratic_ordering(acceptance_report):
    with Timer() as tm:
        full = np.mean([final_train_loss(run(fig2_config("fedcm", 1.0, s))) for s in SEEDS])
        ghbm = np.mean([final_train_loss(run(fig2_config("ghbm", 0.2, s, tau=5))) for s in SEEDS])
        partial = np.mean([final_train_loss(run(fig2_config("fedcm", 0.2, s))) for s in SEEDS])
    ok = ghbm <= 1.2 * full and partial >= 2 * full
    detail = (
        f"loss fedcm(C=1) {full:.4g}, ghbm(tau=5,C=0.2) {ghbm:.4g} (ratio {ghbm / full:.3f} <= 1.2), "
        f"fedcm(C=0.2) {partial:.3g} (ratio {partial / full:.3g} >= 2)"
    )
    assert acceptance_report(5, "quadratic cyclic ordering", ok, detail, tm.seconds, 30.0)


def ablation_config(name, seed, tau=1, beta=0.9):
    return RunConfig(
        task=TaskSpec(kind="logistic", n=5000, d_in=10, n_classes=10, cluster_spread=1.0),
        partition=PartitionSpec(kind="dirichlet", num_clients=50, alpha=0.0),
        sampler=SamplerSpec(kind="uniform", participation=0.2),
        algorithm=AlgoKind(name=name, beta=beta, tau=tau, client_lr=0.03, local_steps=4),
        rounds=100,
        batch_size=16,
        eval_every=5,
        seed=seed,
    )


def test_06_tau_ablation(acceptance_report):
    with Timer() as tm:
        acc = {
            "fedavg": np.mean([final_quality(run(ablation_config("fedavg", s, beta=0.0))) for s in SEEDS]),
            "tau=1": np.mean([final_quality(run(ablation_config("ghbm", s, tau=1))) for s in SEEDS]),
            "tau=5": np.mean([final_quality(run(ablation_config("ghbm", s, tau=5))) for s in SEEDS]),
        }
    ok = acc["tau=5"] > acc["tau=1"] and acc["tau=5"] > acc["fedavg"]
    detail = "mean test accuracy " + ", ".join(f"{k} {v:.4f}" for k, v in acc.items())
    assert acceptance_report(6, "tau ablation ordering", ok, detail, tm.seconds, 120.0)


def probe_means(partition, seed, taus=(1, 5)):
    cfg = ablation_config("fedavg", seed, beta=0.0).with_updates(partition=partition, probe_taus=list(taus))
    res = run(cfg)
    out = {}
    for tau in taus:
        vals = [r.deviations[tau].deviation for r in res.records if tau in r.deviations and r.round >= max(taus)]
        out[tau] = float(np.mean(vals))
    return out


def test_07_deviation_trend(acceptance_report):
    with Timer() as tm:
        path = [probe_means({"kind": "dirichlet", "alpha": 0.0}, s) for s in SEEDS]
        iid = [probe_means({"kind": "iid"}, s) for s in SEEDS]
    p1, p5 = np.mean([d[1] for d in path]), np.mean([d[5] for d in path])
    i1, i5 = np.mean([d[1] for d in iid]), np.mean([d[5] for d in iid])
    ok = p1 > p5 and i1 <= 10 * i5
    detail = f"pathological tau=1 {p1:.3g} > tau=5 {p5:.3g}; iid tau=1 {i1:.3g} vs tau=5 {i5:.3g} (ratio {i1 / i5:.2f} <= 10)"
    assert acceptance_report(7, "deviation trend", ok, detail, tm.seconds, 120.0)


def synthetic_result(name, reach_round, T=100, dim=1000, m=10, J=4):
    """A run whose accuracy first reaches 0.8 at ``reach_round`` (``None``: never)."""
    cfg = ablation_config(name, 0).with_updates(rounds=T, algorithm={"local_steps": J})
    recs = [RoundRecord(0, 2.0, 2.0, 0.1, 0)]
    for t in range(1, T + 1):
        acc = 0.8 if reach_round is not None and t >= reach_round else 0.5
        recs.append(RoundRecord(t, 1.0, 1.0, acc, 0))
    md = {"cohort_size": m, "model_bytes": dim * 8}
    return RunResult(recs, np.zeros(dim), cfg, md, m * J * T)


def test_08_cost_accounting(acceptance_report):
    with Timer() as tm:
        results = {
            "fedavg": synthetic_result("fedavg", 80),
            "ghbm": synthetic_result("ghbm", 20),
            "scaffold": synthetic_result("scaffold", 50),
        }
        rows = {r.algorithm: r for r in cost_report(results, fedavg_target=0.8)}
        # hand computation: b_a = overhead * 2 * 8000 B * 10 clients * 100 rounds
        b = {"fedavg": 1.0 * 2 * 8000 * 10 * 100, "ghbm": 1.5 * 2 * 8000 * 10 * 100, "scaffold": 2.0 * 2 * 8000 * 10 * 100}
        s = {"fedavg": 0.8, "ghbm": 0.2, "scaffold": 0.5}
        tb = {k: b[k] * s[k] for k in b}  # 12_800_000, 4_800_000, 16_000_000
        expected_tb = {"fedavg": 12_800_000.0, "ghbm": 4_800_000.0, "scaffold": 16_000_000.0}
        rtb = {k: 1 - tb[k] / tb["fedavg"] for k in b}  # 0, 0.625, -0.25
        ok = all(
            rows[k].bytes_to_target == tb[k] == expected_tb[k] and rows[k].bytes_reduction == rtb[k]
            for k in b
        )
        ok &= (rtb["ghbm"], rtb["scaffold"]) == (0.625, -0.25)
    detail = ", ".join(f"{k}: tb {rows[k].bytes_to_target:.0f} rtb {rows[k].bytes_reduction:+.3f}" for k in rows)
    assert acceptance_report(8, "cost accounting", ok, detail, tm.seconds, 1.0)


def test_09_gradient_correctness(acceptance_report):
    with Timer() as tm:
        worst = {}
        counts = {}
        for name, a, num in gradient_cases(n_draws=50, seed=99):
            worst[name] = max(worst.get(name, 0.0), grad_rel_error(a, num))
            counts[name] = counts.get(name, 0) + 1
    ok = set(worst) == {"quadratic", "logistic", "mlp"} and all(c == 50 for c in counts.values())
    ok &= max(worst.values()) < 1e-5
    detail = "max rel error " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    assert acceptance_report(9, "gradient correctness", ok, detail, tm.seconds, 5.0)


def test_10_determinism(acceptance_report):
    cfg = ablation_config("ghbm", 11, tau=5).with_updates(rounds=60, probe_taus=[1, 5])
    with Timer() as tm:
        a = run_csv_text(run(cfg, workers=1))
        b = run_csv_text(run(cfg, workers=1))
        c = run_csv_text(run(cfg, workers=8))
        stateful = ablation_config("scaffold", 11).with_updates(rounds=40)
        d = run_csv_text(run(stateful, workers=1))
        e = run_csv_text(run(stateful, workers=8))
    ok = a == b == c and d == e
    detail = f"{len(a.splitlines()) - 1} CSV rows identical across reruns and 1 vs 8 workers"
    assert acceptance_report(10, "determinism", ok, detail, tm.seconds, 30.0)
