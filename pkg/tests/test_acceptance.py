"""The twelve acceptance criteria, each at its stated tolerance.

The expensive ones share one default-config run (20 speakers, 30 epochs) built
through the CLI in a session fixture. Every criterion records a PASS/FAIL line
that conftest prints at the end of the session.
"""
import csv
import filecmp
import math
import time

import numpy as np
import pytest

from conftest import VERDICTS
from oracles import kink_safe_difference, periodogram_slope, power_iteration_eigs, rel_error
from speakerinv import cli, diffnet, evaluation, init_zoo, inversion, trainer
from speakerinv.diffnet import Architecture
from speakerinv.inversion import MIConfig, SlidingConfig, StopReason, descend

pytestmark = pytest.mark.slow

DIST_INITS = ("laplace", "gumbel", "white")
PLAIN_INITS = ("zeros", "ones")


def verdict(n, ok, detail):
    VERDICTS[n] = (bool(ok), detail)
    assert ok, f"criterion {n}: {detail}"


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    """gen-corpus and train with every setting at its default."""
    root = tmp_path_factory.mktemp("acceptance")
    base = ["--out-dir", str(root), "--run-name", "default"]
    assert cli.main(["gen-corpus", *base]) == 0
    t = time.perf_counter()
    assert cli.main(["train", *base]) == 0
    seconds = time.perf_counter() - t
    run = cli.Run(cli.load_config(None, env={}, overrides={("run", "out_dir"): str(root),
                                                          ("run", "name"): "default"}))
    return run, base, seconds


@pytest.fixture(scope="session")
def sweeps(default_run):
    """Learning-rate sweep over the default grid, one CSV per attack."""
    run, base, _ = default_run
    out, seconds = {}, {}
    for attack, inits in (("standard", DIST_INITS + PLAIN_INITS), ("sliding", DIST_INITS)):
        t = time.perf_counter()
        assert cli.main(["sweep", *base, "--attack", attack, "--init", ",".join(inits)]) == 0
        seconds[attack] = time.perf_counter() - t
        lines = [ln for ln in (run.reports / "sweep.csv").open() if not ln.startswith("#")]
        out[attack] = list(csv.DictReader(lines))
    return out, seconds


def best_accuracy(rows, init):
    (best,) = [r for r in rows if r["init"] == init and r["best"] == "1"]
    return float(best["mi_accuracy"]), float(best["learning_rate"])


@pytest.fixture(scope="session")
def dvector_results(default_run):
    run, _, _ = default_run
    model = run.model()
    t = time.perf_counter()
    res = inversion.invert_all_speakers(model, "dvector", init_zoo.parse_init("zeros", run.seeds()["attack"]),
                                        run.mi_config(run.lr_for("zeros")), workers=run.workers)
    return model, res, time.perf_counter() - t


# 1 ---------------------------------------------------------------------------------------------

def test_c01_gradients_match_finite_differences():
    t0 = time.perf_counter()
    arch = Architecture(num_classes=6)
    model = diffnet.init_model(arch, seed=21)
    rng = np.random.default_rng(21)
    x = rng.uniform(-0.5, 0.5, (2, arch.input_window_len))
    y = np.array([1, 4])
    _, grads = diffnet.loss_and_grad_params(model, x, y)
    worst, n = 0.0, 0
    names = list(model.names())
    per_param = {name: 3 for name in names}
    per_param[names[0]] += 50 - 10 - 3 * len(names)  # whatever is left goes to the sinc cutoffs
    for name, count in per_param.items():
        for idx in rng.choice(model.params[name].size, count, replace=False):
            def f(v, name=name):
                m = model.copy()
                m.params[name] = v.reshape(model.params[name].shape)
                return diffnet.batch_loss(m, x, y)

            worst = max(worst, rel_error(grads[name].flat[idx], kink_safe_difference(f, model.params[name], idx),
                                         floor=1e-9))
            n += 1
    _, g = diffnet.cost_and_grad_full(model, x[0], 2)
    for idx in rng.choice(x.shape[1], 10, replace=False):
        num = kink_safe_difference(lambda v: 1 - diffnet.forward_full(model, v)[2], x[0], idx)
        worst = max(worst, rel_error(g[idx], num, floor=1e-9))
        n += 1
    seconds = time.perf_counter() - t0
    verdict(1, n == 50 and worst < 1e-5 and seconds < 60,
            f"{n} coords over {len(names)} params + input, max rel err {worst:.2e}, {seconds:.1f}s")


# 2 ---------------------------------------------------------------------------------------------

def test_c02_trainability(default_run):
    run, _, seconds = default_run
    model, manifest = run.model(), run.manifest()
    tr, te = trainer.accuracy(model, manifest, "train"), trainer.accuracy(model, manifest, "test")
    epochs = run.train_config().epochs
    verdict(2, manifest.n_speakers == 20 and epochs <= 30 and tr >= 0.95 and te >= 0.85 and seconds < 600,
            f"{manifest.n_speakers} speakers, {epochs} epochs: train {tr:.3f} test {te:.3f}, {seconds:.0f}s")


# 3 ---------------------------------------------------------------------------------------------

def test_c03_sliding_beats_standard(sweeps):
    rows, seconds = sweeps
    parts, ok = [], True
    for init in DIST_INITS:
        std, std_lr = best_accuracy(rows["standard"], init)
        sl, sl_lr = best_accuracy(rows["sliding"], init)
        ok &= sl >= std and sl >= 0.5
        parts.append(f"{init} sliding {sl:.2f}@{sl_lr:g} vs standard {std:.2f}@{std_lr:g}")
    total = seconds["sliding"] + seconds["standard"]
    verdict(3, ok and total < 1800, "; ".join(parts) + f"; sweeps {total:.0f}s")


# 4 ---------------------------------------------------------------------------------------------

def test_c04_plain_inits_underperform(sweeps):
    rows = sweeps[0]["standard"]
    best_dist = max(best_accuracy(rows, i)[0] for i in DIST_INITS)
    plain = {i: best_accuracy(rows, i)[0] for i in PLAIN_INITS}
    verdict(4, all(v < best_dist for v in plain.values()),
            f"best distribution init {best_dist:.2f}; " + ", ".join(f"{k} {v:.2f}" for k, v in plain.items()))


# 5 ---------------------------------------------------------------------------------------------

def test_c05_dvector_inversion(dvector_results):
    model, res, seconds = dvector_results
    acc, count = evaluation.mi_accuracy(model, res)
    verdict(5, acc >= 0.95 and seconds < 60, f"{count}/{len(res)} speakers ({acc:.2f}), {seconds:.1f}s")


# 6 ---------------------------------------------------------------------------------------------

def test_c06_gender_leakage(default_run, dvector_results):
    run, _, _ = default_run
    model, res, _ = dvector_results
    manifest = run.manifest()
    x, lab = evaluation.DVectorBank(model, manifest).split("test")
    genders = evaluation.gender_codes(manifest.genders())
    probe = evaluation.fit_probe(x, genders[lab])
    inv = np.stack([res[t].best_input for t in range(manifest.n_speakers)])
    acc = float(np.mean(probe.predict(inv) == genders))
    bar = 0.5 + 2 * math.sqrt(0.25 / manifest.n_speakers)
    verdict(6, acc > bar, f"probe accuracy {acc:.3f} on inverted d-vectors, bar {bar:.3f}")


# 7 ---------------------------------------------------------------------------------------------

def test_c07_sliding_reduces_to_standard(default_run):
    run, _, _ = default_run
    model = run.model()
    inner = MIConfig(alpha=20, lr=5.0)
    w = model.input_window_len
    cfg = SlidingConfig(length=3 * w, stride=w, window=w, inner=inner)
    spec = init_zoo.parse_init("laplace", 8)
    start = init_zoo.generate(spec, cfg.length)
    ok = True
    for t in (0, 7):
        r = inversion.sliding_mi(model, t, cfg, spec)
        for i, k in enumerate(cfg.window_starts()):
            ref = inversion.standard_mi(model, start[k:k + w], t, inner)
            ok &= np.array_equal(r.windows[i].best_input, ref.best_input)
            ok &= np.array_equal(r.working[k:k + w], ref.best_input)
    verdict(7, ok, f"s == w == {w}: {len(cfg.window_starts())} windows x 2 classes bit-identical")


# 8 ---------------------------------------------------------------------------------------------

def _replay(costs, beta=3, gamma=0.0, alpha=100):
    it = iter(costs)
    return descend(lambda x: (next(it), np.ones_like(x)), np.zeros(2),
                   MIConfig(alpha=alpha, beta=beta, gamma=gamma, lr=1.0))


def test_c08_termination_semantics():
    checks = []
    # patience around the beta-history max: equal and rising stop, falling continues
    r = _replay([0.5, 0.4, 0.3, 0.2, 0.4, 0.0])
    checks.append((r.stop_reason, r.iterations_run) == (StopReason.PATIENCE, 4))
    r = _replay([0.5, 0.4, 0.3, 0.2, 0.41, 0.0])
    checks.append((r.stop_reason, r.iterations_run) == (StopReason.PATIENCE, 4))
    r = _replay([0.5, 0.4, 0.3, 0.2, 0.399, 0.1, 0.399, 0.0])
    checks.append((r.stop_reason, r.iterations_run) == (StopReason.PATIENCE, 6))
    # gamma stop is inclusive
    r = _replay([0.5, 0.3, 0.001, 0.0], gamma=0.001)
    checks.append((r.stop_reason, r.iterations_run) == (StopReason.THRESHOLD, 2))
    # alpha exhaustion
    r = _replay(list(np.linspace(0.9, 0.5, 6)), alpha=5)
    checks.append((r.stop_reason, r.iterations_run, len(r.costs)) == (StopReason.MAX_ITERS, 5, 6))
    # argmin against a recorded trace, earliest tie wins
    trace = [0.8, 0.3, 0.5, 0.3, 0.45, 0.35, 0.6]
    r = _replay(trace, beta=4)
    checks.append(r.costs == trace and r.best_cost == 0.3 and np.array_equal(r.best_input, [-1.0, -1.0]))
    checks.append(np.array_equal(r.best_so_far, np.minimum.accumulate(trace)))
    verdict(8, all(checks), f"{sum(checks)}/{len(checks)} exact checks")


# 9 ---------------------------------------------------------------------------------------------

def test_c09_colored_noise_slopes():
    slopes = {c: periodogram_slope(init_zoo.colored_noise(c, 2**16, seed=17)) for c in init_zoo.NOISE_EXPONENTS}
    errs = {c: abs(s - init_zoo.NOISE_EXPONENTS[c]) for c, s in slopes.items()}
    verdict(9, sorted(init_zoo.NOISE_EXPONENTS.values()) == [-2, -1, 0, 1, 2] and max(errs.values()) <= 0.3,
            ", ".join(f"{c} {slopes[c]:+.2f}" for c in sorted(slopes)))


# 10 --------------------------------------------------------------------------------------------

def test_c10_distribution_samplers():
    lap = init_zoo.sample_dist("laplace", None, 10**5, seed=23)
    gum = init_zoo.sample_dist("gumbel", None, 10**5, seed=23)
    var_err = abs(lap.var() / 9.8e-3 - 1)
    mean_err = abs(gum.mean() - 0.0577)
    verdict(10, var_err <= 0.15 and mean_err <= 0.005,
            f"laplace var {lap.var():.2e} ({var_err:.1%} off), gumbel mean {gum.mean():.4f}")


# 11 --------------------------------------------------------------------------------------------

REDUCED = """\
[run]
name = det
[corpus]
n_speakers = 5
utterances = 4
seconds = 1.5
[train]
epochs = 3
[attack]
kinds = standard,sliding
inits = laplace,white,zeros
alpha = 30
"""


def test_c11_rerun_from_lock_is_byte_identical(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "det.ini").write_text(REDUCED)
    for cmd in ("gen-corpus", "train", "invert", "evaluate"):
        assert cli.main([cmd, "--config", "det.ini"]) == 0
    lock = tmp_path / "runs" / "det" / "run.lock"
    for cmd in ("gen-corpus", "train", "invert", "evaluate"):
        assert cli.main([cmd, "--config", str(lock), "--out-dir", "rerun"]) == 0
    a, b = tmp_path / "runs" / "det", tmp_path / "rerun" / "det"
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.suffix in (".wav", ".csv"))
    same = [f for f in files if (b / f).exists() and filecmp.cmp(a / f, b / f, shallow=False)]
    verdict(11, len(files) > 0 and len(same) == len(files), f"{len(same)}/{len(files)} WAV/CSV files identical")


# 12 --------------------------------------------------------------------------------------------

def test_c12_pca_matches_power_iteration():
    x = np.random.default_rng(12).standard_normal((200, 128)) * np.linspace(3.0, 0.5, 128)
    k = 5
    pca = evaluation.pca_fit(x, k=k)
    xc = x - x.mean(axis=0)
    vals, vecs = power_iteration_eigs(xc.T @ xc / (len(x) - 1), k)
    val_err = float(np.max(np.abs(pca.explained_variance - vals) / vals))
    vec_err = float(max(1 - abs(a @ b) for a, b in zip(pca.components, vecs)))
    verdict(12, val_err < 1e-6 and vec_err < 1e-6,
            f"top {k} eigenvalues max rel err {val_err:.1e}, component misalignment {vec_err:.1e}")
