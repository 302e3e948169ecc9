import math

import numpy as np
import pytest

from oracles import power_iteration_eigs
from speakerinv import diffnet, evaluation
from speakerinv.corpus import CorpusManifest, generate_corpus
from speakerinv.diffnet import Architecture
from speakerinv.evaluation import Baselines, EvalError, EvalRow


def pca_oracle_data(seed=0, n=200, dim=128):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, dim)) * np.linspace(3.0, 0.5, dim)


def test_pca_matches_power_iteration():
    x = pca_oracle_data()
    pca = evaluation.pca_fit(x, k=5)
    xc = x - x.mean(axis=0)
    vals, vecs = power_iteration_eigs(xc.T @ xc / (len(x) - 1), 5)
    np.testing.assert_allclose(pca.explained_variance, vals, rtol=1e-6)
    for got, ref in zip(pca.components, vecs):
        assert abs(abs(got @ ref) - 1) < 1e-6


def test_pca_invariants():
    x = pca_oracle_data(1)
    pca = evaluation.pca_fit(x, k=10)
    np.testing.assert_allclose(pca.components @ pca.components.T, np.eye(10), atol=1e-8)
    assert np.all(np.diff(pca.explained_variance) <= 0)
    np.testing.assert_allclose(evaluation.pca_project(pca, pca.mean), 0.0, atol=1e-10)


def test_pca_line_and_full_basis():
    t = np.linspace(-1, 1, 50)
    direction = np.array([0.6, 0.8])
    pca = evaluation.pca_fit(np.outer(t, direction) + [1.0, 2.0], k=2)
    assert abs(abs(pca.components[0] @ direction) - 1) < 1e-8
    assert pca.explained_variance[1] < 1e-12
    x = pca_oracle_data(2, n=40, dim=6)
    full = evaluation.pca_fit(x, k=6)
    back = evaluation.pca_project(full, x) @ full.components + full.mean
    np.testing.assert_allclose(back, x, atol=1e-8)


def test_pca_errors():
    with pytest.raises(EvalError):
        evaluation.pca_fit(np.zeros((10, 3)), k=4)
    with pytest.raises(EvalError):
        evaluation.pca_fit(np.zeros((2, 3)), k=2)


def test_probe_separable_toy():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 2, 100)
    x = rng.standard_normal((100, 5))
    x[:, 2] = np.where(y == 1, np.abs(x[:, 2]) + 0.5, -np.abs(x[:, 2]) - 0.5)
    assert evaluation.gender_probe(x, y, x, y) == 1.0


def test_probe_permutation_baseline():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((80, 5))
    y = (x[:, 0] > 0).astype(int)
    test_x = rng.standard_normal((200, 5))
    test_y = (test_x[:, 0] > 0).astype(int)
    accs = [evaluation.gender_probe(x, rng.permutation(y), test_x, test_y, epochs=100) for _ in range(20)]
    assert abs(np.mean(accs) - 0.5) <= 0.15


def test_probe_needs_both_classes():
    with pytest.raises(EvalError):
        evaluation.fit_probe(np.zeros((4, 2)), np.zeros(4))


def test_gender_codes():
    np.testing.assert_array_equal(evaluation.gender_codes(["male", "female", "female"]), [0, 1, 1])
    with pytest.raises(EvalError):
        evaluation.gender_codes(["other"])


# -- metrics on a tiny model ---------------------------------------------------------------------

ARCH = Architecture(num_classes=3, n_filters=4, conv_channels=4, hidden=16, dvector_dim=8)


@pytest.fixture(scope="module")
def manifest(tmp_path_factory):
    return generate_corpus(tmp_path_factory.mktemp("c"), seed=2, n_speakers=3, utterances_per_speaker=3,
                           utterance_seconds=1.0)


@pytest.fixture(scope="module")
def model():
    m = diffnet.init_model(ARCH, 4)
    m.params["head.weight"][:] = 0.0
    m.params["head.weight"][:, :3] = 50 * np.eye(3)
    return m


def test_mi_accuracy_all_and_none(model):
    eye = np.eye(8)
    right = {t: eye[t] for t in range(3)}
    wrong = {t: eye[(t + 1) % 3] for t in range(3)}
    assert evaluation.mi_accuracy(model, right) == (1.0, 3)
    assert evaluation.mi_accuracy(model, wrong) == (0.0, 0)
    with pytest.raises(EvalError):
        evaluation.mi_accuracy(model, {})


def test_distance_to_an_original_chunk_is_zero(model, manifest):
    sp = manifest.speaker_ids[1]
    chunk = manifest.speaker_chunks(sp, "train")[0]
    bank = evaluation.DVectorBank(model, manifest)
    d = np.linalg.norm(bank.get(sp, "train") - evaluation.as_dvector(model, chunk), axis=1)
    assert d[0] < 1e-12  # batched and single-chunk BLAS paths may differ in the last ulp
    mean, std = evaluation.dvector_distance(model, chunk, manifest, sp, bank=bank)
    assert (mean, std) == (float(d.mean()), float(d.std()))
    assert evaluation.dvector_distance(model, chunk, manifest, sp) == (mean, std)
    with pytest.raises(EvalError):
        evaluation.dvector_distance(model, chunk, manifest, "ghost")


def test_within_speaker_baseline(model, manifest):
    base = evaluation.within_speaker_baseline(model, manifest)
    assert base > 0
    bank = evaluation.DVectorBank(model, manifest)
    for sp in manifest.speaker_ids:
        bank.get(sp, "train")
        bank._cache[(sp, "train")] = bank._cache[(sp, "train")][::-1].copy()
    assert evaluation.within_speaker_baseline(model, manifest, bank=bank) == pytest.approx(base, rel=1e-12)
    for sp in manifest.speaker_ids:
        bank._cache[(sp, "train")] = np.ones((4, 8))
    assert evaluation.within_speaker_baseline(model, manifest, bank=bank) == 0.0


def test_averaged_baseline_single_speaker(manifest):
    sp = manifest.speaker_ids[0]
    one = CorpusManifest(manifest.sample_rate, manifest.chunk_len, manifest.speakers[:1],
                         {sp: manifest.utterances[sp]}, root=manifest.root)
    m = diffnet.init_model(Architecture(num_classes=1, **{k: getattr(ARCH, k) for k in
                                                         ("n_filters", "conv_channels", "hidden", "dvector_dim")}), 0)
    assert evaluation.averaged_sample_baseline(m, one) == (1.0, 1.0)


def test_evaluate_inversions_pools_successes(model, manifest):
    eye = np.eye(8)
    inverted = {0: eye[0], 1: eye[1], 2: eye[0]}
    row = evaluation.evaluate_inversions(model, manifest, inverted, "dvector", "zeros", 0.1)
    assert (row.mi_accuracy, row.n_correct_speakers) == (2 / 3, 2)
    per = [evaluation.dvector_distance(model, eye[t], manifest, manifest.speaker_ids[t])[0] for t in (0, 1)]
    assert row.mean_euclidean == pytest.approx(np.mean(per), rel=1e-12)
    assert row.std_euclidean == pytest.approx(np.std(per), rel=1e-12)
    assert round(row.mi_accuracy * 3) == row.n_correct_speakers


def test_eval_row_invariants():
    with pytest.raises(EvalError):
        EvalRow("x", "standard", 0.1, 1.5, 3, 0.0, 0.0)
    with pytest.raises(EvalError):
        EvalRow("x", "standard", 0.1, 0.5, 3, 0.0, -1.0)


def test_report_round_trip(tmp_path, model, manifest):
    rows = [EvalRow("laplace", "sliding", 0.005, 0.9, 18, 0.123456789123, 0.01),
            EvalRow("zeros", "standard", 5.0, 0.0, 0, math.nan, math.nan)]
    base = Baselines(0.95, 0.9, 0.2)
    bank = evaluation.DVectorBank(model, manifest)
    _, scatter = evaluation.pca_scatter(model, manifest, {t: np.eye(8)[t] for t in range(3)}, bank)
    paths = evaluation.render_report(rows, base, tmp_path, configs={"a": 1}, scatter=scatter)
    back, footer = evaluation.read_rows_csv(paths["csv"])
    assert len(back) == 2
    assert abs(back[0].mean_euclidean - 0.123456789123) < 1e-9
    assert math.isnan(back[1].mean_euclidean)
    assert footer == {"averaged_sample_train_acc": 0.95, "averaged_sample_test_acc": 0.9,
                      "within_speaker_distance": 0.2}
    lines = paths["csv"].read_text().splitlines()
    assert lines[0] == ",".join(evaluation.EVAL_COLUMNS)
    cohorts = {ln.split(",")[2] for ln in paths["scatter"].read_text().splitlines()[1:]}
    assert cohorts <= set(evaluation.COHORTS)
    assert {"inv-male", "inv-female", "orig-male", "orig-female"} == cohorts
    with pytest.raises(EvalError):
        evaluation.render_report([], base, tmp_path)


def test_single_row_report(tmp_path):
    path = evaluation.write_rows_csv(tmp_path / "r.csv", [EvalRow("a", "standard", 1.0, 1.0, 1, 0.0, 0.0)])
    assert len(path.read_text().splitlines()) == 2
