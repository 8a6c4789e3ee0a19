import math

import numpy as np
import pytest

from sliceplan.errors import InfeasibleRegimeError
from sliceplan.exact_ot import ot_1d
from sliceplan.measures import DiscreteMeasure, uniform_measure
from sliceplan.slicer import LinearSlicer, random_mlp_slicer
from sliceplan.train import TrainConfig
from sliceplan import experiments as exp


def test_stability_constant_hand_example():
    # printed formula evaluated by hand:
    # t = -ln(1 - 0.5/1) = ln 2;  C = 2 sqrt(2) * 1 * (0.1 + sqrt(4)) / (ln 2 - 0.1)
    expected = 2.0 * math.sqrt(2.0) * (0.1 + 2.0) / (math.log(2.0) - 0.1)
    got = exp.stability_constant(eta=1.0, delta=0.5, b_points=2, lipschitz=0.1, diam=1.0, dim=2)
    assert got == pytest.approx(expected, abs=1e-6)
    assert got == pytest.approx(10.0139, abs=1e-3)


def test_stability_constant_zero_lipschitz_simplification():
    t = -math.log(1.0 - 0.3 / 3)
    expected = 2.0 * math.sqrt(2.0) * 1.5 * math.sqrt(2.0 * 4) / t
    got = exp.stability_constant(eta=1.0, delta=0.3, b_points=3, lipschitz=0.0, diam=1.5, dim=4)
    assert got == pytest.approx(expected, rel=1e-12)


def test_stability_constant_infeasible_regimes():
    with pytest.raises(InfeasibleRegimeError):
        exp.stability_constant(eta=1.0, delta=1.5, b_points=2, lipschitz=0.1, diam=1.0, dim=2)
    with pytest.raises(InfeasibleRegimeError, match="eta\\*t"):
        exp.stability_constant(eta=0.05, delta=0.5, b_points=2, lipschitz=0.1, diam=1.0, dim=2)
    with pytest.raises(InfeasibleRegimeError):
        exp.stability_constant(eta=1.0, delta=0.5, b_points=1, lipschitz=0.1, diam=1.0, dim=2)


def test_admissible_tau():
    assert exp.admissible_tau(0.8, 10.0) == pytest.approx(0.02)


def test_shared_quantile_distance_is_tight():
    rng = np.random.default_rng(0)
    for _ in range(50):
        ms = []
        for _ in range(4):
            k = int(rng.integers(2, 10))
            w = rng.uniform(0.2, 1.0, k)
            ms.append(DiscreteMeasure(rng.standard_normal((k, 1)), w / w.sum()))
        lhs = exp.shared_quantile_plan_distance(*ms)
        rhs = ot_1d(ms[0], ms[2]).cost + ot_1d(ms[1], ms[3]).cost
        assert lhs == pytest.approx(rhs, abs=1e-9)


def test_lemma_checks_pass_quick():
    assert exp.lemma_pushforward_lipschitz_check(0, instances=80).passed
    assert exp.lemma_pushforward_uniform_check(0, instances=80).passed
    assert exp.lemma_plan_coupling_check(0, instances=80).passed


def test_hoeffding_and_variance_quick():
    assert exp.hoeffding_coverage_check(0, trials=40, ref_batches=2000).passed
    assert exp.variance_ratio_check(0, reruns=20).passed


def test_sandwich_sweep_quick():
    check = exp.sandwich_sweep(0, instances=25)
    assert check.passed
    assert check.margin >= -1e-9


def test_probe_sup_distance_sign_alignment():
    rng = np.random.default_rng(1)
    f = random_mlp_slicer(2, (8,), seed=0)
    # flipping the output layer (zero bias) negates the network exactly
    neg = random_mlp_slicer(2, (8,), seed=0)
    neg.weights[-1] = -neg.weights[-1]
    pts = rng.standard_normal((32, 2))
    assert np.max(np.abs(f.eval(pts) + neg.eval(pts))) == 0.0
    assert exp.probe_sup_distance(f, neg, pts) == pytest.approx(0.0, abs=1e-12)


def test_crossed_pair_every_matching_costs_one():
    mu, nu = exp.crossed_pair()
    from sliceplan.exact_ot import ot_assignment

    assert ot_assignment(mu, nu).cost == pytest.approx(1.0, abs=1e-15)


def test_drift_zero_drift_reuses_trained_cost():
    cfg = exp.DriftStudyConfig(
        num_tasks=3,
        rotation_per_step=0.0,
        zoom_per_step=1.0,
        n=32,
        runs=1,
        seed=5,
        hidden=(8,),
        train=TrainConfig(epochs=8, lr=0.05, optimizer="momentum", keep_best=True),
        transfer_epochs=4,
    )
    report = exp.run_drift_study(cfg)
    # identical tasks: the transferred slicer's initial cost equals the
    # previous task's trained cost exactly (same data, same parameters)
    for t in (2, 3):
        prev = report.records[t - 2]["trained_cost"]
        assert report.records[t - 1]["init_pretrained_cost"] == pytest.approx(prev, abs=0.0)


def test_drift_study_smoke_and_determinism():
    cfg = exp.DriftStudyConfig(
        num_tasks=2,
        n=48,
        runs=2,
        seed=3,
        hidden=(8, 8),
        train=TrainConfig(epochs=30, lr=0.1, optimizer="momentum", keep_best=True),
        transfer_epochs=15,
    )
    a = exp.run_drift_study(cfg)
    b = exp.run_drift_study(cfg)
    keys = ["ot_cost", "init_random_cost", "init_pretrained_cost", "trained_cost"]
    for ra, rb in zip(a.records, b.records):
        for k in keys:
            assert ra[k] == rb[k]
    assert all(r["trained_cost"] >= r["ot_cost"] - 1e-9 for r in a.records)


def test_drift_study_parallel_jobs_match_sequential():
    cfg = exp.DriftStudyConfig(
        num_tasks=2,
        n=32,
        runs=2,
        seed=1,
        hidden=(8,),
        train=TrainConfig(epochs=10, lr=0.1, keep_best=True),
        transfer_epochs=5,
    )
    seq = exp.run_drift_study(cfg, jobs=1)
    par = exp.run_drift_study(cfg, jobs=2)
    for ra, rb in zip(seq.records, par.records):
        assert ra["trained_cost"] == rb["trained_cost"]
        assert ra["init_random_cost"] == rb["init_random_cost"]


def test_minibatch_study_smoke(tmp_path):
    cfg = TrainConfig(epochs=40, lr=0.1, alpha_fraction=0.05, optimizer="momentum", keep_best=True)
    report = exp.run_minibatch_study(n=64, batch_sizes=(16,), cfg=cfg, seeds=(0,), run_dir=str(tmp_path))
    assert len(report.records) == 2
    assert (tmp_path / "plan_0_full.csv").exists()
    for r in report.records:
        assert r["trained_cost"] >= r["ot_cost"] - 1e-9


def test_amortized_perfect_slicer_control():
    # 1D-embedded pairs: the first-coordinate slicer reproduces exact OT, so
    # its costs correlate perfectly with the OT costs
    rng = np.random.default_rng(7)
    from sliceplan.exact_ot import ot_assignment, pearson
    from sliceplan.stp import lift_plan

    costs, ots = [], []
    f = LinearSlicer([1.0, 0.0])
    for k in range(8):
        x = np.column_stack([rng.standard_normal(16), np.zeros(16)])
        y = np.column_stack([rng.standard_normal(16) + k * 0.3, np.zeros(16)])
        mu, nu = uniform_measure(x), uniform_measure(y)
        costs.append(lift_plan(f, mu, nu).cost)
        ots.append(ot_assignment(mu, nu).cost)
        assert costs[-1] == pytest.approx(ots[-1], abs=1e-12)
    assert pearson(costs, ots) == pytest.approx(1.0, abs=1e-6)


def test_amortized_degenerate_family_reports_undefined():
    rng = np.random.default_rng(8)
    base = uniform_measure(rng.standard_normal((24, 2)))
    shifted = uniform_measure(base.points + [1.0, 0.0])

    class IdenticalFamily:
        name = "identical"

        def sample(self, rng):
            return base, shifted

    cfg = exp.AmortizedStudyConfig(
        n_train_pairs=2,
        n_test_pairs=3,
        seeds=(0,),
        hidden=(8,),
        per_pair_hidden=(8,),
        train=TrainConfig(epochs=4, batches_per_epoch=4, batch_size=12, lr=0.05),
        per_pair_train=TrainConfig(epochs=4, lr=0.05, keep_best=True),
    )
    report = exp.run_amortized_study([IdenticalFamily()], cfg)
    assert report.all_passed  # undefined correlations are reported, not failed
    assert any(c.name == "held_out_correlations_undefined" for c in report.checks)
    assert report.records[0]["corr_amortized"] is None


def test_theory_suite_quick_seed0():
    report = exp.run_theory_suite(seed=0, quick=True)
    for check in report.checks:
        assert check.passed, check.line()


def test_report_json_round_trip(tmp_path):
    report = exp.StudyReport("demo", config={"seed": 1})
    report.add_record(task=1, ot_cost=1.0, trained_cost=1.2)
    report.checks.append(exp.StudyCheck("ok", True, 0.5))
    path = tmp_path / "report.json"
    report.to_json(path)
    import json

    payload = json.loads(path.read_text())
    assert payload["all_passed"] is True
    assert payload["records"][0]["trained_cost"] == 1.2


def test_report_rejects_cost_below_ot():
    report = exp.StudyReport("demo", config={})
    with pytest.raises(AssertionError):
        report.add_record(task=1, ot_cost=1.0, trained_cost=0.5)
