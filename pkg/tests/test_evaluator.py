import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from blocklab.evaluator import (MLP, Arch, TrainBatch, TrainingDiverged, UniformEvaluator,
                                default_hidden, gradient_check, init_evaluator, masked_softmax)

CLASSIC_ARCH = Arch(121, (128, 128), 192)


def random_batch(arch, size, seed, value=None):
    rng = np.random.default_rng(seed)
    X = (rng.random((size, arch.input_size)) < 0.3).astype(np.float64)
    masks = rng.random((size, arch.n_actions)) < 0.4
    masks[:, 0] = True
    targets = rng.random((size, arch.n_actions)) * masks
    targets /= targets.sum(axis=1, keepdims=True)
    values = rng.random(size) if value is None else np.full(size, value)
    return TrainBatch(X, masks, targets, values)


def test_parameter_count():
    arch = Arch(121, (64, 64), 192)
    assert arch.n_params() == 121 * 64 + 64 + 64 * 64 + 64 + 64 * 192 + 192 + 64 * 1 + 1
    assert init_evaluator(arch, 0).n_params() == arch.n_params()


def test_default_width_for_classic():
    assert default_hidden(121) == (128, 128)


def test_init_is_seeded():
    a, b = init_evaluator(CLASSIC_ARCH, 3), init_evaluator(CLASSIC_ARCH, 3)
    assert a.to_bytes() == b.to_bytes()
    assert a.to_bytes() != init_evaluator(CLASSIC_ARCH, 4).to_bytes()


def test_linear_model_accepted():
    m = init_evaluator(Arch(10, (), 6), 0)
    out = m.evaluate(np.ones(10))
    assert out.policy_logits.shape == (6,) and 0 < out.value < 1


def test_uniform_evaluator():
    ev = UniformEvaluator(192)
    for x in (None, np.ones(121)):
        out = ev.evaluate(x)
        assert not out.policy_logits.any() and out.value == 0.5


def test_evaluate_is_pure():
    m = init_evaluator(CLASSIC_ARCH, 0)
    x = np.random.default_rng(0).random(121)
    before = m.to_bytes()
    a, b = m.evaluate(x), m.evaluate(x)
    assert np.array_equal(a.policy_logits, b.policy_logits) and a.value == b.value
    assert m.to_bytes() == before


def test_evaluate_rejects_wrong_length():
    with pytest.raises(ValueError):
        init_evaluator(CLASSIC_ARCH, 0).evaluate(np.zeros(120))


def test_overfit_value_to_one():
    m = init_evaluator(CLASSIC_ARCH, 0)
    batch = random_batch(CLASSIC_ARCH, 1, 0, value=1.0)
    for _ in range(1000):
        m.train_batch(batch, 0.05)
    assert m.evaluate(batch.features[0]).value > 0.95


def test_stationary_point_has_zero_gradient():
    m = init_evaluator(CLASSIC_ARCH, 1)
    batch = random_batch(CLASSIC_ARCH, 4, 1)
    _, logits, value = m._forward(batch.features)
    batch.policy_targets = masked_softmax(logits, batch.masks)
    batch.value_targets = value.copy()
    out = m.train_batch(batch, 0.0)
    assert out["grad_norm"] <= 1e-8


def test_zero_learning_rate_is_identity():
    m = init_evaluator(CLASSIC_ARCH, 2)
    before = m.to_bytes()
    for _ in range(3):
        m.train_batch(random_batch(CLASSIC_ARCH, 8, 2), 0.0)
    assert m.to_bytes() == before


def test_single_sample_loss_is_monotone():
    monotone = 0
    seeds = range(40)
    for seed in seeds:
        m = init_evaluator(CLASSIC_ARCH, seed)
        batch = random_batch(CLASSIC_ARCH, 1, seed)
        losses = []
        for _ in range(60):
            out = m.train_batch(batch, 1e-3)
            losses.append(out["policy_loss"] + out["value_loss"])
        monotone += bool(np.all(np.diff(losses[10:]) <= 1e-12))
    assert monotone / len(seeds) >= 0.95


def test_divergence_is_reported():
    m = init_evaluator(CLASSIC_ARCH, 0)
    batch = random_batch(CLASSIC_ARCH, 2, 0)
    batch.features[0, 0] = np.nan
    with pytest.raises(TrainingDiverged):
        m.train_batch(batch, 0.01)


# gradient checks

@pytest.mark.parametrize("hidden", [(), (16,), (32, 24), (8, 8, 8)])
def test_gradient_check_all_layer_types(hidden):
    arch = Arch(30, hidden, 12)
    m = init_evaluator(arch, 5, value_weight=3.0)
    assert gradient_check(m, random_batch(arch, 6, 5), eps=1e-5, n_params=400) < 1e-4


def test_gradient_check_classic_size():
    m = init_evaluator(CLASSIC_ARCH, 0)
    assert gradient_check(m, random_batch(CLASSIC_ARCH, 8, 0), eps=1e-5) < 1e-4


def test_linear_model_gradients_near_exact():
    arch = Arch(12, (), 5)
    m = init_evaluator(arch, 0)
    assert gradient_check(m, random_batch(arch, 4, 0), eps=1e-5, n_params=10_000) < 1e-6


class FaultyBiasGradient(MLP):
    """Reports the first hidden bias gradient scaled by 1.5."""

    def loss_and_grads(self, *args):
        pl, vl, grads = super().loss_and_grads(*args)
        gW, gb = grads[0]
        grads[0] = (gW, gb * 1.5)
        return pl, vl, grads


def test_injected_fault_is_detected():
    good = init_evaluator(Arch(20, (10,), 8), 0)
    bad = FaultyBiasGradient(good.arch, good.layers, good.momentum, good.value_weight)
    batch = random_batch(good.arch, 4, 0)
    assert gradient_check(good, batch, n_params=10_000) < 1e-4
    assert gradient_check(bad, batch, n_params=10_000) > 1e-2


def test_gradient_check_eps_bounds():
    m = init_evaluator(Arch(4, (), 2), 0)
    with pytest.raises(ValueError):
        gradient_check(m, random_batch(m.arch, 1, 0), eps=1e-2)


# masking

@given(arrays(np.float64, 20, elements=st.floats(-50, 50)),
       arrays(np.bool_, 20))
def test_masked_softmax(logits, mask):
    mask[0] = True
    p = masked_softmax(logits, mask)
    assert np.all(p[~mask] == 0.0)
    assert abs(p[mask].sum() - 1.0) <= 1e-9


# checkpoints

def test_checkpoint_round_trip(tmp_path):
    m = init_evaluator(CLASSIC_ARCH, 7)
    path = tmp_path / "m.sgbz"
    m.save(path)
    back = MLP.load(path, expect=CLASSIC_ARCH)
    x = np.random.default_rng(0).random(121)
    a, b = m.evaluate(x), back.evaluate(x)
    # weights are stored as float32
    assert np.allclose(a.policy_logits, b.policy_logits, atol=1e-5)
    assert back.to_bytes() == MLP.from_bytes(back.to_bytes()).to_bytes()


@pytest.mark.parametrize("corrupt", [
    lambda d: b"XXXXX" + d[5:],
    lambda d: d[:5] + (9).to_bytes(2, "little") + d[7:],
    lambda d: d[:-4],
    lambda d: d + b"\0",
])
def test_checkpoint_rejects_corruption(corrupt):
    data = init_evaluator(Arch(6, (4,), 3), 0).to_bytes()
    with pytest.raises(ValueError):
        MLP.from_bytes(corrupt(data))


def test_checkpoint_rejects_wrong_arch():
    data = init_evaluator(Arch(6, (4,), 3), 0).to_bytes()
    with pytest.raises(ValueError):
        MLP.from_bytes(data, expect=Arch(6, (5,), 3))
