import numpy as np
import pytest

from oracles import softmax
from speakerinv import diffnet, init_zoo, inversion
from speakerinv.diffnet import Architecture
from speakerinv.inversion import MIConfig, MIConfigError, NumericalFailure, SlidingConfig, StopReason, descend


def scripted(costs):
    """cost_grad replaying ``costs``; the gradient is all ones so x_i = x0 - i * lr."""
    it = iter(costs)

    def cost_grad(x):
        return next(it), np.ones_like(x)

    return cost_grad


def run(costs, beta=3, gamma=0.0, alpha=100, lr=1.0):
    return descend(scripted(costs), np.zeros(2), MIConfig(alpha=alpha, beta=beta, gamma=gamma, lr=lr))


# -- patience boundary -------------------------------------------------------------------------

@pytest.mark.parametrize(
    "costs,beta,stop_at",
    [
        ([0.5, 0.4, 0.3, 0.2, 0.4], 3, 4),  # equal to the window max -> stop
        ([0.5, 0.4, 0.3, 0.2, 0.41], 3, 4),  # above the window max -> stop
        ([0.5, 0.4, 0.3, 0.2, 0.399, 0.1, 0.399], 3, 6),  # 0.399 < 0.4 keeps going, then ties
        ([0.9, 0.5, 0.4, 0.7], 2, 3),  # only the last beta costs count
        ([0.9, 0.5, 0.4, 0.45, 0.44, 0.46], 2, 5),
        ([0.5, 0.5], 10, 1),  # short history: compare with all of it
        ([0.5, 0.6], 10, 1),
        ([0.5, 0.49, 0.5], 10, 2),
        ([0.5, 0.49, 0.495, 0.48, 0.5], 10, 4),
    ],
)
def test_patience_boundary(costs, beta, stop_at):
    r = run(costs + [0.0] * 5, beta=beta)
    assert r.stop_reason is StopReason.PATIENCE
    assert r.iterations_run == stop_at
    assert r.costs == costs[: stop_at + 1]


def test_falling_costs_never_trigger_patience():
    costs = list(np.linspace(0.9, 0.1, 21))
    r = run(costs, beta=1, alpha=20)
    assert r.stop_reason is StopReason.MAX_ITERS
    assert r.iterations_run == 20 and len(r.costs) == 21


def test_threshold_is_inclusive():
    r = run([0.5, 0.3, 0.001, 0.0], gamma=0.001)
    assert (r.stop_reason, r.iterations_run) == (StopReason.THRESHOLD, 2)
    r = run([0.5, 0.3, 0.0011, 0.0], gamma=0.001)
    assert (r.stop_reason, r.iterations_run) == (StopReason.THRESHOLD, 3)


def test_patience_checked_before_threshold():
    r = run([0.0005, 0.0009], gamma=0.001)
    assert r.stop_reason is StopReason.PATIENCE


def test_alpha_exhaustion():
    r = run([0.9, 0.8, 0.7, 0.6], alpha=3)
    assert (r.stop_reason, r.iterations_run) == (StopReason.MAX_ITERS, 3)
    assert r.best_cost == 0.6
    np.testing.assert_array_equal(r.best_input, [-3.0, -3.0])


def test_argmin_return_against_trace():
    trace = [0.8, 0.3, 0.5, 0.3, 0.45, 0.35, 0.6]
    r = run(trace, beta=4)
    assert r.stop_reason is StopReason.PATIENCE and r.iterations_run == 6
    assert r.best_cost == min(trace) == 0.3
    np.testing.assert_array_equal(r.best_input, [-1.0, -1.0])  # earliest of the tied minima
    np.testing.assert_array_equal(r.best_so_far, np.minimum.accumulate(trace))


def test_x0_can_be_the_best():
    r = run([0.2, 0.3])
    assert r.best_cost == 0.2
    np.testing.assert_array_equal(r.best_input, [0.0, 0.0])


def test_numerical_failure_carries_last_finite():
    with pytest.raises(NumericalFailure) as exc:
        run([0.5, 0.4, float("nan")])
    np.testing.assert_array_equal(exc.value.last_finite, [-1.0, -1.0])
    assert exc.value.last_cost == 0.4 and exc.value.iteration == 2


def test_config_validation():
    for kw in ({"alpha": 0}, {"beta": 0}, {"gamma": -0.1}, {"gamma": 1.5}, {"lr": -1.0}):
        with pytest.raises(MIConfigError):
            MIConfig(**kw)
    with pytest.raises(MIConfigError):
        SlidingConfig(length=3000, window=3200)
    with pytest.raises(MIConfigError):
        SlidingConfig(length=6400, stride=0)
    with pytest.raises(MIConfigError):
        SlidingConfig(length=6400, stride=3300)


# -- toy model against a grid search -------------------------------------------------------------

def test_toy_descent_matches_grid_search():
    rng = np.random.default_rng(0)
    w = rng.standard_normal((2, 4))
    t = 1

    def c_of(x):
        return 1.0 - softmax(w @ x)[t]

    def cost_grad(x):
        p = softmax(w @ x)
        return 1.0 - p[t], -p[t] * ((np.eye(2)[t] - p) @ w)

    x0 = rng.standard_normal(4)
    r = descend(cost_grad, x0, MIConfig(alpha=5000, beta=10, gamma=0.05, lr=0.5))
    assert r.stop_reason is StopReason.THRESHOLD
    # two classes: every gradient is parallel to w[t] - w[other], so the path is a line
    v = w[t] - w[1 - t]
    v /= np.linalg.norm(v)
    step = r.best_input - x0
    assert abs(step @ v - np.linalg.norm(step)) < 1e-9
    grid = np.linspace(0.0, np.linalg.norm(step), 20001)
    costs = np.array([c_of(x0 + s * v) for s in grid])
    assert abs(costs.min() - r.best_cost) < 1e-3
    assert abs(grid[costs.argmin()] - np.linalg.norm(step)) < 1e-3 * np.linalg.norm(step) + grid[1]


# -- real model ----------------------------------------------------------------------------------

ARCH = Architecture(num_classes=4)


@pytest.fixture(scope="module")
def model():
    return diffnet.init_model(ARCH, seed=5)


def test_cost_definition(model):
    x = np.random.default_rng(1).uniform(-1, 1, 3200)
    p = diffnet.forward_full(model, x)
    for t in range(4):
        assert abs(inversion.cost(model, x, t) + p[t] - 1) < 1e-12
    d = np.random.default_rng(2).standard_normal(128)
    assert abs(inversion.cost(model, d, 2) + diffnet.forward_head(model, d)[2] - 1) < 1e-12


def test_cost_of_uniform_model():
    m = diffnet.init_model(Architecture(num_classes=20), seed=0)
    m.params["head.weight"][:] = 0.0
    m.params["head.bias"][:] = 0.0
    assert inversion.cost(m, np.zeros(3200), 7) == pytest.approx(0.95, abs=1e-15)
    m.params["head.bias"][7] = 1e4
    assert inversion.cost(m, np.zeros(3200), 7) == 0.0


def test_cost_rejects_bad_shapes(model):
    with pytest.raises(diffnet.InvalidInput):
        inversion.cost(model, np.zeros(100), 0)
    with pytest.raises(diffnet.InvalidInput):
        inversion.cost(model, np.zeros(3200), 4)


def test_gamma_one_stops_after_first_descent_step(model):
    x0 = init_zoo.generate(init_zoo.parse_init("laplace", 1), 3200)
    r = inversion.standard_mi(model, x0, 0, MIConfig(gamma=1.0, lr=1e-3))
    assert (r.stop_reason, r.iterations_run) == (StopReason.THRESHOLD, 1)
    d0 = np.zeros(128)
    r = inversion.dvector_mi(model, d0, 0, MIConfig(gamma=1.0, lr=1e-3))
    assert (r.stop_reason, r.iterations_run) == (StopReason.THRESHOLD, 1)


def test_zero_learning_rate(model):
    x0 = init_zoo.generate(init_zoo.parse_init("gumbel", 1), 3200)
    r = inversion.standard_mi(model, x0, 1, MIConfig(lr=0.0, beta=5))
    assert r.stop_reason is StopReason.PATIENCE
    assert r.iterations_run == 1
    assert len(set(r.costs)) == 1
    np.testing.assert_array_equal(r.best_input, x0)


def test_line_search_step_on_head_decreases_cost(model):
    d = np.random.default_rng(3).standard_normal(128)
    c0, g = diffnet.cost_and_grad_head(model, d, 2)
    steps = np.logspace(-4, 2, 61)
    best = min(inversion.cost(model, d - s * g, 2) for s in steps)
    assert best < c0


def test_attacks_do_not_touch_parameters(model):
    before = model.copy()
    inversion.invert_all_speakers(model, "standard", init_zoo.parse_init("white", 2), MIConfig(alpha=3, lr=0.1))
    inversion.invert_all_speakers(model, "dvector", init_zoo.parse_init("zeros", 2), MIConfig(alpha=3, lr=0.1))
    assert model.equals(before)


def test_invert_all_speakers_deterministic_and_worker_independent(model):
    cfg = MIConfig(alpha=4, lr=0.5)
    spec = init_zoo.parse_init("laplace", 3)
    a = inversion.invert_all_speakers(model, "standard", spec, cfg, workers=1)
    b = inversion.invert_all_speakers(model, "standard", spec, cfg, workers=3)
    assert sorted(a) == list(range(4))
    for t in a:
        np.testing.assert_array_equal(a[t].best_input, b[t].best_input)
        assert a[t].costs == b[t].costs
        assert a[t].best_cost == min(a[t].costs)


def test_invert_all_speakers_validates(model):
    with pytest.raises(MIConfigError):
        inversion.invert_all_speakers(model, "sideways", init_zoo.parse_init("zeros"), MIConfig())
    with pytest.raises(MIConfigError):
        inversion.invert_all_speakers(model, "sliding", init_zoo.parse_init("zeros"), MIConfig())


# -- sliding --------------------------------------------------------------------------------------

def test_sliding_output_length_and_windows(model):
    cfg = SlidingConfig(length=2 * 3200 + 4 * 500, stride=500, window=3200, inner=MIConfig(alpha=1, lr=0.0))
    r = inversion.sliding_mi(model, 0, cfg, init_zoo.parse_init("white", 1))
    assert len(r.audio) == cfg.length - 3200
    assert cfg.window_starts() == list(range(0, 3200 + 4 * 500 + 1, 500))
    assert len(r.windows) == 11
    assert SlidingConfig.for_output(3200).output_length == 3200


def test_sliding_with_no_overlap_reduces_to_standard(model):
    inner = MIConfig(alpha=15, lr=2.0)
    cfg = SlidingConfig(length=6400, stride=3200, window=3200, inner=inner)
    spec = init_zoo.parse_init("laplace", 4)
    r = inversion.sliding_mi(model, 2, cfg, spec)
    start = init_zoo.generate(spec, 6400)
    for i, k in enumerate((0, 3200)):
        ref = inversion.standard_mi(model, start[k:k + 3200], 2, inner)
        np.testing.assert_array_equal(r.windows[i].best_input, ref.best_input)
        np.testing.assert_array_equal(r.working[k:k + 3200], ref.best_input)
    np.testing.assert_array_equal(r.audio, r.working[1600:4800])


def test_sliding_overlap_feeds_previous_window(model):
    inner = MIConfig(alpha=5, lr=2.0)
    cfg = SlidingConfig(length=3700, stride=500, window=3200, inner=inner)
    start = init_zoo.generate(init_zoo.parse_init("white", 6), 3700)
    r = inversion.sliding_mi(model, 1, cfg, start)
    first = inversion.standard_mi(model, start[:3200], 1, inner)
    second_in = np.concatenate([first.best_input[500:], start[3200:]])
    second = inversion.standard_mi(model, second_in, 1, inner)
    np.testing.assert_array_equal(r.working[500:], second.best_input)
    np.testing.assert_array_equal(r.working[:500], first.best_input[:500])


def test_export_audio_clips_and_keeps_npy(tmp_path):
    from speakerinv.wav import load_wav

    x = np.array([0.5, 1.5, -2.0, 0.0] * 100)
    inversion.export_audio(tmp_path, "spk000", x, 16000, {"attack": "standard"})
    y, _ = load_wav(tmp_path / "spk000.wav")
    assert np.max(np.abs(y)) <= 1.0
    np.testing.assert_array_equal(np.load(tmp_path / "spk000.npy"), x)
    import json

    assert json.loads((tmp_path / "spk000.json").read_text())["clip_rate"] == 0.5
