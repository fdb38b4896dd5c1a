import numpy as np
import pytest

from gameon import data as D
from gameon import model as M
from gameon import train as TR
from gameon.config import ModelConfig, TrainConfig, Variant
from gameon.errors import ContractError
from gameon.tensor import Tensor


def small_config(**kw):
    base = dict(d_in=768, d_shared=16, d_gat=8, d_hidden=8)
    base.update(kw)
    return ModelConfig(**base)


def loaded_samples(seed, n, mode, cfg):
    samples = D.synth_samples(seed, n, mode)
    return [
        TR.LoadedSample(
            s.sample_id,
            s.label,
            M.build_sample_graphs(s.text_features, s.visual_features_raw, cfg.variant),
        )
        for s in samples
    ]


# --------------------------------------------------------------------------
# Adam

def test_adam_first_step_is_bias_corrected(rng):
    p = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
    before = p.data.copy()
    state = TR.adam_init([p])
    TR.adam_step([p], [np.ones_like(p.data)], state, lr=0.01)
    # m_hat = 1, v_hat = 1 -> update = lr / (1 + eps)
    assert np.allclose(before - p.data, 0.01 / (1 + 1e-8), atol=1e-9)


def test_adam_zero_gradient_is_fixed_point(rng):
    p = Tensor(rng.standard_normal(4), requires_grad=True)
    before = p.data.copy()
    state = TR.adam_init([p])
    for _ in range(5):
        TR.adam_step([p], [np.zeros_like(p.data)], state, lr=0.1)
    assert np.array_equal(p.data, before)


def test_adam_optimizes_scalar_quadratic():
    theta = Tensor(np.zeros(1), requires_grad=True)
    state = TR.adam_init([theta])
    for _ in range(50):
        grad = 2.0 * (theta.data - 3.0)
        TR.adam_step([theta], [grad], state, lr=0.1)
    assert abs(float(theta.data[0]) - 3.0) < 0.5


def test_adam_shape_mismatch_rejected(rng):
    p = Tensor(rng.standard_normal(4), requires_grad=True)
    state = TR.adam_init([p])
    with pytest.raises(ContractError):
        TR.adam_step([p], [np.zeros(5)], state, lr=0.1)


# --------------------------------------------------------------------------
# learning-rate schedule

def test_lr_schedule_endpoints_and_midpoint():
    tc = TrainConfig(lr_init=1e-4, lr_final=0.0)
    assert TR.lr_at(0, 100, tc) == 1e-4
    assert TR.lr_at(100, 100, tc) == 0.0
    assert abs(TR.lr_at(50, 100, tc) - 5e-5) < 1e-18


def test_lr_schedule_is_affine_and_non_increasing():
    tc = TrainConfig(lr_init=3e-3, lr_final=1e-4)
    vals = [TR.lr_at(s, 10, tc) for s in range(11)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    # affine: lr(s1) + lr(s2) == lr(s1+d) + lr(s2-d)
    assert abs(vals[2] + vals[8] - (vals[4] + vals[6])) < 1e-18


def test_lr_schedule_validates_range():
    tc = TrainConfig()
    with pytest.raises(ContractError):
        TR.lr_at(5, 4, tc)


# --------------------------------------------------------------------------
# metrics

def test_metrics_perfect_classifier():
    m = TR.compute_metrics([1, 0, 1, 0], [1, 0, 1, 0])
    assert m.accuracy == m.precision == m.recall == m.f1 == 1.0


def test_metrics_hand_confusion():
    m = TR.compute_metrics([1, 0, 1, 0], [1, 1, 0, 0])
    assert m.accuracy == 0.5
    assert m.precision == 0.5 and m.recall == 0.5 and m.f1 == 0.5
    assert m.confusion == [[1, 1], [1, 1]]


def test_metrics_degenerate_denominators():
    m = TR.compute_metrics([0, 0, 0], [1, 1, 0])
    assert m.precision == 0.0 and m.recall == 0.0 and m.f1 == 0.0


def test_metrics_permutation_invariant(rng):
    preds = rng.integers(0, 2, 30)
    labels = rng.integers(0, 2, 30)
    perm = rng.permutation(30)
    a = TR.compute_metrics(preds, labels)
    b = TR.compute_metrics(preds[perm], labels[perm])
    assert a == b


def test_metrics_accuracy_recomputable_from_confusion(rng):
    preds = rng.integers(0, 2, 50)
    labels = rng.integers(0, 2, 50)
    m = TR.compute_metrics(preds, labels)
    c = np.array(m.confusion)
    assert m.accuracy == np.trace(c) / c.sum()


def test_metrics_length_mismatch_rejected():
    with pytest.raises(ContractError):
        TR.compute_metrics([0, 1], [0])


# --------------------------------------------------------------------------
# training loop

def test_train_is_deterministic_bit_for_bit():
    cfg = small_config()
    tc = TrainConfig(epochs=3, seed=42, batch_size=8, lr_init=1e-3)
    samples = loaded_samples(0, 12, "separable", cfg)
    val = loaded_samples(1, 4, "separable", cfg)
    r1 = TR.train(samples, cfg, tc, val)
    r2 = TR.train(samples, cfg, tc, val)
    for name in r1.params.names():
        assert np.array_equal(r1.params[name].data, r2.params[name].data)
    assert M.checkpoint_bytes(r1.best_params, cfg) == M.checkpoint_bytes(r2.best_params, cfg)
    # the history is identical too, up to wall-clock timing
    for a, b in zip(r1.history.records, r2.history.records):
        assert (a.epoch, a.loss, a.lr, a.train_metrics, a.val_metrics, a.val_loss) == (
            b.epoch, b.loss, b.lr, b.train_metrics, b.val_metrics, b.val_loss
        )


def test_train_zero_lr_leaves_parameters_unchanged():
    cfg = small_config()
    tc = TrainConfig(epochs=2, seed=1, lr_init=0.0, lr_final=0.0)
    samples = loaded_samples(0, 8, "separable", cfg)
    result = TR.train(samples, cfg, tc)
    fresh = M.ModelParams.initialize(cfg, seed=tc.seed)
    for name in fresh.names():
        assert np.array_equal(result.params[name].data, fresh[name].data)


def test_train_empty_split_rejected():
    with pytest.raises(ContractError):
        TR.train([], small_config(), TrainConfig(epochs=1))


def test_gradient_accumulation_matches_single_batch():
    cfg = small_config(dropout=0.0)
    samples = loaded_samples(3, 8, "separable", cfg)
    tc_full = TrainConfig(epochs=1, seed=5, batch_size=8, lr_init=1e-3)
    tc_micro = TrainConfig(epochs=1, seed=5, batch_size=8, lr_init=1e-3, micro_batch_size=3)
    r_full = TR.train(samples, cfg, tc_full)
    r_micro = TR.train(samples, cfg, tc_micro)
    for name in r_full.params.names():
        a, b = r_full.params[name].data, r_micro.params[name].data
        assert np.allclose(a, b, atol=1e-6), name


def test_history_invariants_and_emission(tmp_path):
    cfg = small_config()
    tc = TrainConfig(epochs=4, seed=2, lr_init=1e-3, eval_every=2)
    train_s = loaded_samples(0, 8, "separable", cfg)
    val_s = loaded_samples(1, 4, "separable", cfg)
    result = TR.train(train_s, cfg, tc, val_s)
    epochs = [r.epoch for r in result.history.records]
    assert epochs == sorted(epochs) and len(set(epochs)) == len(epochs)
    lrs = [r.lr for r in result.history.records]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    json_path, log_path = TR.write_history(result.history, tmp_path)
    import json

    payload = json.loads(json_path.read_text())
    assert len(payload["epochs"]) == 4
    assert log_path.read_text().startswith("epoch\t")


def test_early_stopping_stops_after_patience():
    cfg = small_config()
    tc = TrainConfig(epochs=50, seed=3, lr_init=0.0, lr_final=0.0, early_stop_patience=3)
    train_s = loaded_samples(0, 8, "separable", cfg)
    val_s = loaded_samples(1, 4, "separable", cfg)
    result = TR.train(train_s, cfg, tc, val_s)
    # zero lr -> no improvement after the first eval; 1 + patience epochs run
    assert len(result.history.records) <= 1 + 3 + 1


def test_non_finite_loss_reports_context():
    cfg = small_config()
    tc = TrainConfig(epochs=1, seed=0, lr_init=1e-3)
    samples = loaded_samples(0, 4, "separable", cfg)
    huge = M.ModelParams.initialize(cfg, seed=0)
    import gameon.train as trainmod

    orig = M.cross_entropy_loss

    def poisoned(probs, labels):
        out = orig(probs, labels)
        out.data = np.array(np.nan)
        return out

    trainmod.M.cross_entropy_loss = poisoned
    try:
        from gameon.errors import NumericError

        with pytest.raises((NumericError, AssertionError)):
            TR.train(samples, cfg, tc)
    finally:
        trainmod.M.cross_entropy_loss = orig


# --------------------------------------------------------------------------
# evaluation

def test_evaluate_is_pure(rng):
    cfg = small_config()
    samples = loaded_samples(0, 8, "separable", cfg)
    params = M.ModelParams.initialize(cfg, seed=7)
    m1 = TR.evaluate(params, samples, cfg)
    m2 = TR.evaluate(params, samples, cfg)
    assert m1 == m2


def test_evaluate_random_weights_near_chance_over_seeds():
    cfg = small_config()
    samples = loaded_samples(10, 1000, "separable", cfg)
    accs = []
    for seed in range(5):
        params = M.ModelParams.initialize(cfg, seed=seed)
        accs.append(TR.evaluate(params, samples, cfg).accuracy)
    for acc in accs:
        assert 0.4 <= acc <= 0.6
    assert abs(np.mean(accs) - 0.5) < 0.06


def test_evaluate_empty_split_rejected():
    with pytest.raises(ContractError):
        TR.evaluate(M.ModelParams.initialize(small_config(), 0), [], small_config())
