import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import random_ensemble, random_tree, shapley_by_formula
from rationale_eval.core import AttributeName
from rationale_eval.errors import DataError
from rationale_eval.attribution import (AttributionResult, Background, attribute_importance, explain,
                                        export_beeswarm, make_background, read_beeswarm_csv, shapley_exact,
                                        shapley_values, write_beeswarm_csv, write_importance_csv)
from rationale_eval.predictor import Ensemble, Tree, TrainConfig, train


def tree(feature, threshold, left, right, value):
    return Tree(np.array(feature), np.array(threshold, dtype=float), np.array(left), np.array(right),
                np.array(value, dtype=float))


def unit(i, v=1.0):
    x = np.zeros(12)
    x[i] = v
    return x


# f0 < .5 ? (f1 < .5 ? 1 : 2) : 4
DEPTH2 = Ensemble(0.0, (tree([0, 1, -1, -1, -1], [0.5, 0.5, 0, 0, 0], [1, 2, -1, -1, -1], [4, 3, -1, -1, -1],
                             [0, 0, 1, 2, 4]),), 1.0)
BG4 = Background(np.array([np.zeros(12), unit(1), unit(0), unit(0) + unit(1)]))


def both_routes(model, x, bg):
    return shapley_exact(model, x, bg), shapley_values(model, x, bg)[0]


def test_constant_model_gives_zero():
    model = Ensemble(1.3, (Tree.leaf(0.4),), 0.5)
    for phi in both_routes(model, np.ones(12), BG4):
        assert np.all(phi == 0.0)


def test_stump_on_zero_background():
    model = Ensemble(0.0, (Tree.stump(0, 0.5, 0.0, 3.0),), 1.0)
    bg = Background(np.zeros((3, 12)))
    for phi in both_routes(model, np.ones(12), bg):
        assert phi[0] == pytest.approx(3.0, abs=1e-12)
        assert np.all(phi[1:] == 0.0)


def test_hand_enumerated_two_feature_game():
    # v({}) = 11/4, v({0}) = 4, v({1}) = 10/4, v({0,1}) = 4
    x = unit(0)
    expected = np.zeros(12)
    expected[0] = 0.5 * ((4 - 2.75) + (4 - 2.5))
    expected[1] = 0.5 * ((2.5 - 2.75) + (4 - 4))
    assert expected[0] == 1.375 and expected[1] == -0.125
    for phi in both_routes(DEPTH2, x, BG4):
        np.testing.assert_allclose(phi, expected, atol=1e-12)
    np.testing.assert_allclose(shapley_by_formula(DEPTH2, x, BG4.rows, 12), expected, atol=1e-12)


@pytest.mark.parametrize("seed", range(6))
def test_routes_agree_with_textbook_formula(seed):
    rng = np.random.default_rng(seed)
    d = 5
    model, _ = random_ensemble(rng, n_features=d, max_live=d)
    bg = Background(rng.uniform(-1.2, 1.2, size=(int(rng.integers(1, 6)), d)))
    x = rng.uniform(-1.2, 1.2, d)
    oracle = shapley_by_formula(model, x, bg.rows, d)
    exact, leaf = both_routes(model, x, bg)
    np.testing.assert_allclose(exact, oracle, atol=1e-10)
    np.testing.assert_allclose(leaf, oracle, atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_leaf_route_equals_enumeration(seed):
    rng = np.random.default_rng(seed)
    model, used = random_ensemble(rng)
    bg = Background(rng.uniform(-1.2, 1.2, size=(int(rng.integers(1, 8)), 12)))
    x = rng.uniform(-1.2, 1.2, 12)
    exact, leaf = both_routes(model, x, bg)
    np.testing.assert_allclose(leaf, exact, atol=1e-10)
    unused = [i for i in range(12) if i not in used]
    assert np.all(exact[unused] == 0.0) and np.all(leaf[unused] == 0.0)
    gap = exact.sum() - (model.margins(x)[0] - model.margins(bg.rows).mean())
    assert abs(gap) < 1e-9


def test_weight_shared_features_get_equal_credit():
    rng = np.random.default_rng(5)
    trees = []
    for _ in range(4):
        t = random_tree(rng, [2, 7], 3)
        swapped = t.feature.copy()
        swapped[t.feature == 2], swapped[t.feature == 7] = 7, 2
        trees += [t, Tree(swapped, t.threshold, t.left, t.right, t.value)]
    model = Ensemble(0.0, tuple(trees), 0.3)
    bg = rng.uniform(-1, 1, size=(6, 12))
    bg[:, 7] = bg[:, 2]
    x = rng.uniform(-1, 1, 12)
    x[7] = x[2]
    for phi in both_routes(model, x, Background(bg)):
        assert abs(phi[2] - phi[7]) < 1e-9


def test_empty_background_rejected():
    with pytest.raises(DataError):
        Background(np.zeros((0, 12)))
    with pytest.raises(DataError):
        make_background(np.zeros((0, 12)))


def test_make_background_sampling():
    X = np.arange(600 * 12, dtype=float).reshape(600, 12)
    a, b = make_background(X, 256, seed=3), make_background(X, 256, seed=3)
    assert len(a.rows) == 256 and np.array_equal(a.rows, b.rows)
    assert len({tuple(r) for r in a.rows}) == 256
    assert a.origin == "sample-256" and a.seed == 3
    assert len(make_background(X, full=True).rows) == 600
    assert make_background(X[:10]).origin == "full"


def trained():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, size=(80, 12))
    y = (X[:, 11] * 3 + X[:, 4] > 0).astype(float)
    model = train(X, y, TrainConfig(num_rounds=15, max_depth=3))
    return model, X


def test_explain_efficiency_and_methods_agree():
    model, X = trained()
    bg = make_background(X, 32)
    leaf = explain(model, X[:6], bg)
    enum = explain(model, X[:6], bg, method="enumerate")
    assert np.max(np.abs(leaf.efficiency_residual)) < 1e-9
    np.testing.assert_allclose(leaf.per_instance, enum.per_instance, atol=1e-10)
    with pytest.raises(ValueError):
        explain(model, X[:2], bg, method="kernel")


def test_importance_ranking_and_ties():
    model, X = trained()
    result = explain(model, X, make_background(X, 32))
    ranking = attribute_importance(result)
    assert ranking[0][0] is AttributeName.CORRECTNESS
    assert [r[1] for r in ranking] == sorted((r[1] for r in ranking), reverse=True)
    tie = AttributionResult(np.zeros((1, 12)), 0.0, np.array([0.0] * 10 + [0.5, 0.5]), np.zeros(12),
                            tuple(a.value for a in AttributeName), np.zeros(1))
    assert [r[0] for r in attribute_importance(tie)[:3]] == [AttributeName.COMPLETENESS, AttributeName.CORRECTNESS,
                                                             AttributeName.FAITHFULNESS]


def test_direction_sign_marks_negative_attributes():
    rng = np.random.default_rng(1)
    X = rng.uniform(-1, 1, size=(200, 12))
    y = (X[:, 0] - 2 * X[:, 1] > 0).astype(float)
    model = train(X, y, TrainConfig(num_rounds=30, max_depth=2))
    ranking = {a: s for a, _, s in attribute_importance(explain(model, X, make_background(X, 64)))}
    assert ranking[AttributeName.FAITHFULNESS] == 1
    assert ranking[AttributeName.HALLUCINATION] == -1


def test_beeswarm_rows_and_csv_round_trip(tmp_path):
    model, X = trained()
    single = explain(model, X[:1], make_background(X, 16))
    rows = export_beeswarm(single, X[:1])
    assert len(rows) == 12
    assert abs(sum(r[1] for r in rows) - (single.margins[0] - single.base_value)) < 1e-9
    result = explain(model, X[:5], make_background(X, 16))
    rows = export_beeswarm(result, X[:5])
    write_beeswarm_csv(rows, 12, tmp_path / "b.csv")
    back = read_beeswarm_csv(tmp_path / "b.csv")
    assert [r[0] for r in back] == [r[0] for r in rows]
    assert np.max(np.abs(np.array([r[1:] for r in back]) - np.array([r[1:] for r in rows]))) <= 1e-12
    with pytest.raises(DataError):
        export_beeswarm(result, X[:4])
    write_importance_csv(result, tmp_path / "i.csv")
    assert len((tmp_path / "i.csv").read_text().splitlines()) == 13
