import numpy as np
import pytest
from hypothesis import given, strategies as st

from starcl.netcore import Batch, LossSpec, axpy, backward, forward, init_mlp, kl_divergence, layer_norms
from starcl.rehearsal import ReplayBuffer
from starcl.star import (
    StarConfig, compute_delta, init_noise, lfg, select_correct, star_grad, star_step,
)

from .helpers import random_batch, random_net
from .oracles import central_difference, max_relative_error


def labelled_by(params, batch):
    """Same features, labels replaced by the model's own predictions."""
    return Batch(batch.features, forward(params, batch).predicted_labels)


def test_select_correct_extremes(rng):
    params = random_net(rng, hidden=[6])
    batch = labelled_by(params, random_batch(rng, params.in_dim, params.out_dim, n=12))
    kept = select_correct(params, batch)
    assert np.array_equal(kept.features, batch.features)
    wrong = Batch(batch.features, (batch.labels + 1) % params.out_dim)
    assert len(select_correct(params, wrong)) == 0


@given(st.integers(0, 2**32 - 1))
def test_select_correct_matches_row_loop(seed):
    r = np.random.default_rng(seed)
    params = random_net(r)
    batch = random_batch(r, params.in_dim, params.out_dim, n=15)
    probs = forward(params, batch).probabilities
    expected = [i for i in range(len(batch)) if int(np.argmax(probs[i])) == batch.labels[i]]
    assert np.array_equal(select_correct(params, batch).features, batch.features[expected])


def test_lfg_basic_cases(rng):
    params = random_net(rng, hidden=[5])
    batch = random_batch(rng, params.in_dim, params.out_dim, n=6)
    ref = forward(params, batch).probabilities
    assert lfg(ref, params, batch) == 0.0
    empty = Batch(np.zeros((0, params.in_dim)), np.zeros(0, dtype=int))
    assert lfg(np.zeros((0, params.out_dim)), params, empty) == 0.0
    moved = params.map(lambda t: t + 0.05 * rng.standard_normal(t.shape))
    expected = sum(kl_divergence(ref[i:i + 1], forward(moved, batch.subset([i])).probabilities)
                   for i in range(len(batch)))
    assert lfg(ref, moved, batch) == pytest.approx(expected, rel=1e-10)
    with pytest.raises(ValueError):
        lfg(ref[:2], params, batch)


def test_init_noise_cases(rng):
    params = random_net(rng)
    assert not init_noise(params, 0.0, rng).flat().any()
    zeroed = params.map(np.zeros_like)
    assert not init_noise(zeroed, 0.5, rng).flat().any()


def test_init_noise_standard_deviation():
    # one 100x100 layer with norm 10 and eps 0.01 -> std 0.1
    from starcl.netcore import Layer, ParamSet
    w = np.full((100, 100), 0.1)  # norm = sqrt(1e4 * 1e-2) = 10
    params = ParamSet((Layer("fc0", w, np.zeros(100)),))
    noise = init_noise(params, 0.01, np.random.default_rng(0))
    assert np.std(noise.layers[0].weight) == pytest.approx(0.1, rel=0.05)


def test_no_perturbation_when_gamma_and_eps_zero(rng):
    params = random_net(rng, hidden=[6])
    batch = random_batch(rng, params.in_dim, params.out_dim, n=8)
    delta, report = compute_delta(params, batch, StarConfig(gamma=0.0, epsilon=0.0), rng)
    assert not delta.flat().any()
    assert report.lfg_at_delta == 0.0


@given(st.integers(0, 2**32 - 1), st.sampled_from([0.001, 0.01, 0.05, 0.3]))
def test_ratio_law(seed, gamma):
    r = np.random.default_rng(seed)
    params = random_net(r)
    batch = random_batch(r, params.in_dim, params.out_dim, n=6)
    _, report = compute_delta(params, batch, StarConfig(gamma=gamma), r)
    theta = layer_norms(params)
    for ratio, zero, tn in zip(report.per_layer_delta_ratio, report.zero_grad_layers, theta):
        if not zero and tn > 0:
            assert ratio == pytest.approx(gamma, rel=1e-9)


def test_random_mode_ratio(rng):
    params = random_net(rng, hidden=[7])
    batch = random_batch(rng, params.in_dim, params.out_dim, n=6)
    _, report = compute_delta(params, batch, StarConfig(gamma=0.02, perturb_mode="random"), rng)
    assert report.lfg_at_delta0 == 0.0
    np.testing.assert_allclose(report.per_layer_delta_ratio, 0.02, rtol=1e-12)


def test_gradient_mode_beats_random_mode():
    wins_grad, wins_rand = [], []
    for seed in range(120):
        r = np.random.default_rng(seed)
        params = random_net(r, hidden=[8])
        batch = random_batch(r, params.in_dim, params.out_dim, n=8)
        _, g = compute_delta(params, batch, StarConfig(gamma=0.05), np.random.default_rng(seed))
        _, z = compute_delta(params, batch, StarConfig(gamma=0.05, perturb_mode="random"),
                             np.random.default_rng(seed))
        wins_grad.append(g.lfg_at_delta)
        wins_rand.append(z.lfg_at_delta)
    assert np.median(wins_grad) > np.median(wins_rand)


def test_ascent_increases_lfg_for_small_gamma():
    ups = 0
    trials = 1000
    for seed in range(trials):
        r = np.random.default_rng(seed)
        params = random_net(r, max_hidden=8)
        batch = random_batch(r, params.in_dim, params.out_dim, n=5)
        _, report = compute_delta(params, batch, StarConfig(gamma=0.01), r)
        ups += report.lfg_at_delta >= report.lfg_at_delta0
    assert ups >= 0.95 * trials


@pytest.mark.parametrize("steps", [1, 3, 5])
def test_multi_step_total_magnitude_bounded(steps, rng):
    params = random_net(rng, hidden=[6])
    batch = random_batch(rng, params.in_dim, params.out_dim, n=8)
    _, report = compute_delta(params, batch, StarConfig(gamma=0.04, ascent_steps=steps), rng)
    # each of the s steps has ratio gamma/s, so the total is at most gamma
    assert max(report.per_layer_delta_ratio) <= 0.04 * (1 + 1e-9)
    assert report.lfg_at_delta > report.lfg_at_delta0


def test_star_grad_zero_cases(rng):
    params = random_net(rng, hidden=[6])
    batch = random_batch(rng, params.in_dim, params.out_dim, n=8)
    loss, grad = star_grad(params, batch, params.zeros_like())
    assert loss == 0.0 and not grad.flat().any()
    empty = Batch(np.zeros((0, params.in_dim)), np.zeros(0, dtype=int))
    delta = params.map(lambda t: rng.standard_normal(t.shape))
    loss, grad = star_grad(params, empty, delta)
    assert loss == 0.0 and not grad.flat().any()


@given(st.integers(0, 2**32 - 1))
def test_star_grad_matches_fd_at_perturbed_point(seed):
    r = np.random.default_rng(seed)
    params = random_net(r)
    batch = random_batch(r, params.in_dim, params.out_dim, n=5)
    delta = params.map(lambda t: 0.1 * r.standard_normal(t.shape))
    ref = forward(params, batch).probabilities
    _, grad = star_grad(params, batch, delta)
    perturbed = axpy(params, delta, 1.0)
    numeric = central_difference(lambda p: lfg(ref, p, batch), perturbed)
    assert max_relative_error(grad.flat(), numeric) < 1e-4


def test_reference_is_held_constant(rng):
    # differentiating through the reference as well would give a different answer
    params = random_net(rng, hidden=[5])
    batch = random_batch(rng, params.in_dim, params.out_dim, n=6)
    delta = params.map(lambda t: 0.2 * rng.standard_normal(t.shape))
    _, grad = star_grad(params, batch, delta)
    ref = forward(params, batch).probabilities
    _, direct = backward(axpy(params, delta, 1.0), batch, LossSpec.kl(ref.copy()))
    assert np.array_equal(grad.flat(), direct.flat())

    def through_both(p):
        # theta -> KL(q_theta || q_{theta + delta}) with the reference also moving
        return lfg(forward(p, batch).probabilities, axpy(p, delta, 1.0), batch)

    numeric = central_difference(through_both, params)
    assert max_relative_error(grad.flat(), numeric) > 1e-3


def test_star_step_untrained_model_skips():
    params = init_mlp(3, [4], 4, np.random.default_rng(0)).map(np.zeros_like)
    buf = ReplayBuffer(10, np.random.default_rng(0))
    # the zero net predicts class 0 everywhere; store only other classes
    buf.update(Batch(np.ones((10, 3)), np.full(10, 2)))
    cur = Batch(np.ones((4, 3)), np.full(4, 3))
    grad, report = star_step(params, buf, cur, StarConfig(), np.random.default_rng(1))
    assert report.skipped and report.selected_count == 0
    assert not grad.flat().any()


def test_star_step_canonical_config_reports(rng):
    params = random_net(rng, hidden=[8])
    data = labelled_by(params, random_batch(rng, params.in_dim, params.out_dim, n=40))
    buf = ReplayBuffer(20, np.random.default_rng(0))
    buf.update(data)
    cur = random_batch(rng, params.in_dim, params.out_dim, n=8)
    grad, report = star_step(params, buf, cur, StarConfig(), np.random.default_rng(3))
    assert not report.skipped
    assert report.selected_count == 8
    assert report.lfg_at_delta > report.lfg_at_delta0 >= 0
    assert report.star_grad_norm == pytest.approx(np.linalg.norm(grad.flat()))
    assert all(r >= 0 for r in report.per_layer_delta_ratio)


def test_star_step_both_sources_select_jointly(rng):
    params = random_net(rng, hidden=[8])
    buf = ReplayBuffer(30, np.random.default_rng(0))
    buf.update(random_batch(rng, params.in_dim, params.out_dim, n=30))
    cur = random_batch(rng, params.in_dim, params.out_dim, n=10)
    cfg = StarConfig(data_source="both")
    _, report = star_step(params, buf, cur, cfg, np.random.default_rng(9))
    drawn = buf.draw(len(cur), rng=np.random.default_rng(9))
    expected = len(select_correct(params, drawn)) + len(select_correct(params, cur))
    assert report.selected_count == expected


def test_star_step_does_not_touch_buffer_rng(rng):
    params = random_net(rng)
    bufs = []
    for _ in range(2):
        b = ReplayBuffer(10, np.random.default_rng(5))
        b.update(random_batch(np.random.default_rng(6), params.in_dim, params.out_dim, n=20))
        bufs.append(b)
    cur = random_batch(rng, params.in_dim, params.out_dim, n=5)
    star_step(params, bufs[0], cur, StarConfig(), np.random.default_rng(0))
    assert np.array_equal(bufs[0].draw(5).features, bufs[1].draw(5).features)


@pytest.mark.parametrize("kw", [{"gamma": -1}, {"lam": float("inf")}, {"ascent_steps": 0},
                                {"selector": "x"}, {"perturb_mode": "z"}, {"data_source": "disk"}])
def test_star_config_validation(kw):
    with pytest.raises(ValueError):
        StarConfig(**kw)
