from dataclasses import replace

import numpy as np
import pytest

from pattree import data, trainer, tree as pt
from pattree.bench import baselines, compare, metrics, plotting
from pattree.bench.oracles import feature_error_divergence, finite_diff_grad
from pattree.data import Dataset


def test_finite_diff_exact_on_quadratic():
    p = np.array([3.0])
    g = finite_diff_grad(lambda: float(p[0] ** 2), [p], h=1e-5)
    assert g[0][0] == pytest.approx(6.0, abs=1e-8)
    assert p[0] == 3.0
    assert finite_diff_grad(lambda: 4.0, [p])[0][0] == 0.0


@pytest.fixture(scope="module")
def tiny():
    return data.generate(data.SynthConfig(n_train=240, n_test=80, seed=5))


@pytest.mark.parametrize("seed", [0, 7])
def test_flat_classifier_matches_one_level_tree_bit_for_bit(tiny, seed):
    cfg = trainer.TrainConfig(schema=(), widths=(16, 24), iterations=30, batch_size=16, seed=seed)
    state = trainer.run_training(tiny[0], cfg)
    flat = baselines.train_flat(tiny[0], 24, cfg)
    assert [r[1] for r in state.history] == [r[1] for r in flat.history]
    np.testing.assert_array_equal(state.tree.root.W, flat.W1)
    np.testing.assert_array_equal(state.classifiers.W[0], flat.W2)


def test_parameter_count_matches_built_model():
    cfg = trainer.TrainConfig()
    state = trainer.init_state(cfg)
    assert baselines.pat_param_count(cfg) == state.tree.n_params() + state.classifiers.n_params()


@pytest.mark.parametrize("widths", [(16, 64, 64, 64), (16, 8, 8, 8), (10, 32, 16, 12)])
def test_matched_flat_width_within_two_percent(widths):
    cfg = trainer.TrainConfig(widths=widths)
    hidden = baselines.matched_hidden_width(cfg)
    assert abs(baselines.param_match_ratio(cfg, hidden) - 1.0) <= 0.02
    flat = baselines.FlatClassifier.init(widths[0], hidden, cfg.n_classes, 0)
    assert flat.n_params == baselines.flat_param_count(widths[0], hidden, cfg.n_classes)


def test_attribute_specific_routes_by_ground_truth(tiny):
    cfg = trainer.TrainConfig(iterations=20, batch_size=16)
    subset_models = baselines.train_attribute_specific(tiny[0], 12, cfg)
    assert len(subset_models.models) == 6
    test = tiny[1]
    proba = subset_models.predict_proba(test.features, test.attributes)
    i = 0
    model = subset_models.models[tuple(test.attributes[i])]
    np.testing.assert_allclose(proba[i], model.predict_proba(test.features[i : i + 1])[0], rtol=1e-12)
    np.testing.assert_allclose(proba.sum(1), 1.0)


def test_hard_config_only_changes_routing():
    cfg = trainer.TrainConfig()
    assert baselines.hard_config(cfg) == replace(cfg, routing="hard")


def test_accuracy_and_confusion():
    pred, truth = np.array([0, 1, 1, 2]), np.array([0, 1, 2, -1])
    assert metrics.accuracy(pred, truth) == pytest.approx(2 / 3)
    c = metrics.confusion(pred, truth, 3)
    assert c.tolist() == [[1, 0, 0], [0, 1, 0], [0, 1, 0]]
    np.testing.assert_array_equal(c.sum(1), np.bincount(truth[truth >= 0], minlength=3))


def two_blob_data(seed, n=200, scale=1.0):
    rng = np.random.default_rng(seed)
    a = rng.integers(2, size=n)
    X = np.where(a[:, None] == 0, [4.0, 0.0], [0.0, 4.0]) + 0.3 * rng.standard_normal((n, 2))
    schema = pt.AttributeSchema.from_list([("a", 2)])
    return Dataset(schema, np.arange(n), scale * X, a[:, None], np.zeros(n))


def identity_tree(centers=None, seed=0):
    tree = pt.build_tree([("a", 2)], [2, 2, 2], seed=seed)
    tree.root.W[...] = np.eye(2)
    if centers is not None:
        tree.root.centers[...] = centers
    return tree


def test_purity_is_one_with_centers_at_class_means():
    ds = two_blob_data(0)
    means = [ds.features[ds.attributes[:, 0] == s].mean(0) for s in (0, 1)]
    assert metrics.cluster_purity(identity_tree(means), ds)[(0, 0)] == 1.0


def test_purity_of_random_centers_is_near_one_half():
    vals = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n = 400
        a = rng.integers(2, size=n)
        X = rng.standard_normal((n, 2)) + np.where(a[:, None] == 0, 1.0, -1.0) * [1.0, 1.0]
        ds = Dataset(pt.AttributeSchema.from_list([("a", 2)]), np.arange(n), X, a[:, None], np.zeros(n))
        vals.append(metrics.cluster_purity(identity_tree(seed=seed + 100), ds)[(0, 0)])
    assert abs(np.mean(vals) - 0.5) <= 0.1


@pytest.mark.parametrize("scale", [1e-3, 2.0, 1e4])
def test_purity_invariant_to_rescaling(scale):
    tree = identity_tree(seed=3)
    base = metrics.cluster_purity(tree, two_blob_data(1))
    assert metrics.cluster_purity(tree, two_blob_data(1, scale=scale)) == base


def test_purity_skips_unlabeled_samples():
    ds = two_blob_data(2)
    means = [ds.features[ds.attributes[:, 0] == s].mean(0) for s in (0, 1)]
    ds.attributes[:50] = data.MISSING
    assert metrics.cluster_purity(identity_tree(means), ds)[(0, 0)] == 1.0
    ds.attributes[:] = data.MISSING
    assert np.isnan(metrics.cluster_purity(identity_tree(means), ds)[(0, 0)])


def test_smooth():
    np.testing.assert_allclose(metrics.smooth([1, 3, 5, 7], window=2), [1, 2, 4, 6])


@pytest.fixture(scope="module")
def mini_bench():
    synth = data.SynthConfig(n_train=300, n_test=100)
    cfg = trainer.TrainConfig(widths=(16, 8, 8, 8), iterations=30)
    bench = compare.BenchConfig(seeds=(1, 2), small_n_train=120)
    return synth, cfg, compare.run_benchmark(synth, cfg, bench)


def test_benchmark_produces_four_reports_per_seed(mini_bench):
    _, cfg, result = mini_bench
    assert set(result["reports"]) == {1, 2}
    for seed, reps in result["reports"].items():
        assert set(reps) == set(compare.MODELS)
        assert all(r.seed == seed for r in reps.values())
        assert reps["attribute_specific"].extra["n_train"] == 120
        assert "0,0" in reps["pat"].purity and "0,0" in reps["hard_at"].purity
        assert reps["hard_at"].config["routing"] == "hard"
        assert len(reps["pat"].loss_curve) == cfg.iterations
    assert set(result["means"]) == set(compare.MODELS) | {"flat_small"}


def test_benchmark_is_deterministic(mini_bench):
    synth, cfg, result = mini_bench
    again = compare.run_benchmark(synth, cfg, compare.BenchConfig(seeds=(2,), small_n_train=120))
    for m in compare.MODELS:
        assert again["reports"][2][m].to_dict() == result["reports"][2][m].to_dict()


def test_sweep_full_fraction_reproduces_benchmark_row(mini_bench):
    synth, cfg, result = mini_bench
    rows = compare.label_fraction_sweep(synth, cfg, (0.0, 1.0), (1, 2))
    assert [r.fraction for r in rows] == [0.0, 1.0]
    assert rows[1].accuracies == tuple(result["reports"][s]["pat"].accuracy for s in (1, 2))
    cached = compare.label_fraction_sweep(synth, cfg, (1.0,), (1, 2), cache=compare.seed_cache(result))
    assert cached[0] == rows[1]


def test_report_files_and_figures(tmp_path, mini_bench):
    _, _, result = mini_bench
    paths = compare.write_comparison(tmp_path, result)
    assert sorted(p.rsplit("/", 1)[1] for p in paths) == [
        "report_attribute_specific.json",
        "report_flat.json",
        "report_hard_at.json",
        "report_pat.json",
        "summary.tsv",
    ]
    lines = (tmp_path / "summary.tsv").read_text().splitlines()
    assert lines[0] == "seed\tmodel\taccuracy" and len(lines) == 1 + 8 + 5
    rows = [compare.SweepRow(f, 0.5, 0.01, (0.5,)) for f in compare.DEFAULT_FRACTIONS]
    compare.write_sweep(tmp_path, rows)
    assert len((tmp_path / "sweep.tsv").read_text().splitlines()) == 8
    for path in (
        plotting.plot_comparison(result, tmp_path / "c.png"),
        plotting.plot_sweep(rows, tmp_path / "s.png", reference=0.5),
        plotting.plot_loss_curves(result["reports"][1]["pat"].loss_curve, tmp_path / "l.png"),
    ):
        assert (tmp_path / path.name).stat().st_size > 1000


def test_report_round_trip(mini_bench):
    rep = mini_bench[2]["reports"][1]["pat"]
    again = metrics.MetricsReport.from_dict(__import__("json").loads(rep.dumps()))
    assert again.accuracy == rep.accuracy and again.confusion == rep.confusion


def test_feature_error_divergence_on_worked_example():
    # true gradient of the node loss at x=[1,0] is [0, p2 (1 + p1)]
    p1 = np.e / (np.e + 1.0)
    [(cos, ratio)] = feature_error_divergence([[1.0, 0.0]], np.eye(2), [1.0], [0])
    assert cos == pytest.approx(1.0, abs=1e-9)
    assert ratio == pytest.approx(1.0 / (1.0 + p1), rel=1e-6)


def test_feature_error_divergence_reports_every_sample():
    rng = np.random.default_rng(0)
    out = feature_error_divergence(rng.standard_normal((4, 5)), rng.standard_normal((3, 5)), np.ones(4), [0, 1, -1, 2])
    assert len(out) == 4
    assert all(-1.0 <= c <= 1.0 and r > 0 for c, r in out)
