import json

import numpy as np
import pytest

from sliceplan.errors import ConfigurationError
from sliceplan.measures import generate, DatasetSpec, uniform_measure
from sliceplan.slicer import LinearSlicer, random_linear_slicer, random_mlp_slicer
from sliceplan.stp import lift_plan
from sliceplan.train import (
    TrainConfig,
    default_context,
    incomplete_estimator,
    minibatch_kernel,
    train_amortized,
    train_minstp,
    zero_context,
)


def test_kernel_identical_batches_zero():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((5, 2))
    assert minibatch_kernel(LinearSlicer([0.4, 0.6]), X, X.copy()) == 0.0


def test_kernel_single_pair():
    f = LinearSlicer([1.0, 0.0])
    x = np.array([[0.0, 0.0]])
    y = np.array([[3.0, 4.0]])
    assert minibatch_kernel(f, x, y, p=2.0) == pytest.approx(25.0)


def test_kernel_hand_pairing():
    # first-coordinate slicer pairs (0,0)->(0,1) and (1,1)->(1,0): both cost 1
    f = LinearSlicer([1.0, 0.0])
    x = np.array([[0.0, 0.0], [1.0, 1.0]])
    y = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert minibatch_kernel(f, x, y, p=2.0) == pytest.approx(1.0, abs=1e-12)


def test_kernel_size_mismatch():
    with pytest.raises(ValueError):
        minibatch_kernel(LinearSlicer([1.0]), np.zeros((2, 1)), np.zeros((3, 1)))


def test_incomplete_full_batch_degenerates_to_hard_cost():
    rng = np.random.default_rng(1)
    mu = uniform_measure(rng.standard_normal((12, 2)))
    nu = uniform_measure(rng.standard_normal((12, 2)))
    f = random_linear_slicer(2, 4)
    mean, values = incomplete_estimator(f, mu, nu, batch_size=12, num_batches=5, seed=0)
    hard = lift_plan(f, mu, nu).cost
    np.testing.assert_allclose(values, hard, atol=1e-12)
    assert mean == pytest.approx(hard, abs=1e-12)


def test_incomplete_validation():
    f = LinearSlicer([1.0, 0.0])
    X = np.zeros((4, 2))
    with pytest.raises(ConfigurationError):
        incomplete_estimator(f, X, X, batch_size=5, num_batches=2, seed=0)
    with pytest.raises(ConfigurationError):
        incomplete_estimator(f, X, X, batch_size=2, num_batches=0, seed=0)


def test_train_identical_pair_is_zero_after_one_epoch():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((16, 2))
    mu, nu = uniform_measure(X), uniform_measure(X.copy())
    f, trace = train_minstp(mu, nu, random_linear_slicer(2, 1), TrainConfig(epochs=1, seed=0))
    assert trace.final_full_cost <= 1e-9


def test_train_loss_mostly_decreasing_on_blobs():
    mu = generate(DatasetSpec("gaussian-blobs", 256, 11))
    nu = generate(DatasetSpec("gaussian-blobs", 256, 22))
    cfg = TrainConfig(epochs=60, batch_size=64, batches_per_epoch=16, lr=0.05,
                      optimizer="momentum", seed=0)
    _, trace = train_minstp(mu, nu, random_mlp_slicer(2, (16, 16), seed=0), cfg)
    losses = np.array(trace.epoch_losses)
    warm = losses[5:]
    upticks = np.sum(np.diff(warm) > 0.05 * warm[:-1])
    assert upticks <= 0.2 * warm.size


def test_train_determinism_bitwise():
    mu = generate(DatasetSpec("gaussian-blobs", 64, 1))
    nu = generate(DatasetSpec("gaussian-blobs", 64, 2))
    cfg = TrainConfig(epochs=25, batch_size=16, batches_per_epoch=3, lr=0.05, seed=9)
    _, t1 = train_minstp(mu, nu, random_mlp_slicer(2, (8,), seed=4), cfg)
    _, t2 = train_minstp(mu, nu, random_mlp_slicer(2, (8,), seed=4), cfg)
    assert t1.epoch_losses == t2.epoch_losses
    assert t1.checkpoint == t2.checkpoint


def test_train_config_validation_names_field():
    mu = generate(DatasetSpec("gaussian-blobs", 8, 1))
    nu = generate(DatasetSpec("gaussian-blobs", 8, 2))
    with pytest.raises(ConfigurationError, match="batch_size"):
        train_minstp(mu, nu, random_linear_slicer(2, 0), TrainConfig(epochs=1, batch_size=9))
    with pytest.raises(ConfigurationError, match="lr"):
        TrainConfig(lr=0.0)
    with pytest.raises(ConfigurationError, match="alpha_fraction"):
        TrainConfig(alpha_fraction=0.0)
    with pytest.raises(ConfigurationError, match="optimizer"):
        TrainConfig(optimizer="adam")


def test_train_does_not_mutate_input_slicer():
    mu = generate(DatasetSpec("gaussian-blobs", 16, 1))
    nu = generate(DatasetSpec("gaussian-blobs", 16, 2))
    f0 = random_linear_slicer(2, 3)
    before = f0.get_params().copy()
    train_minstp(mu, nu, f0, TrainConfig(epochs=3, seed=0))
    np.testing.assert_array_equal(f0.get_params(), before)


def test_keep_best_never_worse_than_init():
    rng = np.random.default_rng(5)
    for k in range(5):
        mu = uniform_measure(rng.standard_normal((12, 2)))
        nu = uniform_measure(rng.standard_normal((12, 2)))
        f0 = random_linear_slicer(2, k)
        init = lift_plan(f0, mu, nu).cost
        cfg = TrainConfig(epochs=10, lr=0.5, seed=k, keep_best=True)
        f, _ = train_minstp(mu, nu, f0, cfg)
        assert lift_plan(f, mu, nu).cost <= init + 1e-12


def test_trace_jsonl_export(tmp_path):
    mu = generate(DatasetSpec("gaussian-blobs", 16, 1))
    nu = generate(DatasetSpec("gaussian-blobs", 16, 2))
    _, trace = train_minstp(mu, nu, random_linear_slicer(2, 0), TrainConfig(epochs=4, seed=0, full_cost_every=2))
    path = tmp_path / "trace.jsonl"
    trace.to_jsonl(path)
    lines = [json.loads(line) for line in path.read_text().splitlines()]
    assert len(lines) == 5  # 4 epochs + checkpoint
    assert lines[1]["epoch"] == 2 and "full_cost" in lines[1]
    assert "checkpoint" in lines[-1]


def test_amortized_single_pair_matches_train_minstp():
    mu = generate(DatasetSpec("gaussian-blobs", 24, 5))
    nu = generate(DatasetSpec("gaussian-blobs", 24, 6))
    cfg = TrainConfig(epochs=12, batch_size=8, batches_per_epoch=1, lr=0.05, seed=3)
    f0 = random_linear_slicer(2, 7)

    def no_context(a, b):
        return np.zeros(0)

    fa, ta = train_amortized([(mu, nu)], f0, cfg, context_fn=no_context)
    fm, tm = train_minstp(mu, nu, f0, cfg)
    assert ta.epoch_losses == tm.epoch_losses
    assert fa.get_params().tobytes() == fm.get_params().tobytes()


def test_amortized_context_dimension_checked():
    mu = generate(DatasetSpec("gaussian-blobs", 16, 5))
    nu = generate(DatasetSpec("gaussian-blobs", 16, 6))
    f0 = random_linear_slicer(2, 0)  # wrong: needs dim 2 + context length
    with pytest.raises(ConfigurationError, match="input dim"):
        train_amortized([(mu, nu)], f0, TrainConfig(epochs=1, batch_size=8), context_fn=default_context)


def test_context_descriptors():
    mu = generate(DatasetSpec("gaussian-blobs", 64, 5))
    nu = generate(DatasetSpec("gaussian-blobs", 64, 6))
    ctx = default_context(mu, nu)
    assert ctx.shape == (16,)  # 8 * d with d = 2
    np.testing.assert_allclose(ctx[:2], mu.points.mean(axis=0))
    assert zero_context(mu, nu).shape == (16,)
    assert np.all(zero_context(mu, nu) == 0)


def test_amortized_improves_over_random_on_shared_direction():
    # pairs displaced along a common direction: the amortized slicer should
    # cut costs clearly below the random slicer's
    rng = np.random.default_rng(9)
    pairs = []
    for _ in range(4):
        base = rng.standard_normal((32, 2))
        pairs.append((uniform_measure(base), uniform_measure(base + [2.5, 0.0] + 0.1 * rng.standard_normal((32, 2)))))
    ctx = zero_context
    f0 = random_mlp_slicer(2 + 16, (16, 16), seed=2)
    cfg = TrainConfig(epochs=40, batches_per_epoch=8, batch_size=16, lr=0.05, optimizer="momentum", seed=0)
    fa, _ = train_amortized(pairs, f0, cfg, context_fn=ctx)
    from sliceplan.train import amortized_pair_cost

    trained = np.mean([amortized_pair_cost(fa, m, n, ctx) for m, n in pairs])
    random_cost = np.mean(
        [amortized_pair_cost(random_mlp_slicer(18, (16, 16), seed=8), m, n, ctx) for m, n in pairs]
    )
    assert trained < random_cost
