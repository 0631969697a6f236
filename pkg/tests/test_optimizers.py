import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from carousel_click_models.core import EPS, Dataset, ItemAttraction, PositionGrid, RowCol, Termination
from carousel_click_models.data import AttractionInit, DataError, ExaminationInit
from carousel_click_models.likelihoods import click_log_likelihood, observed_examination_log_likelihood
from carousel_click_models.models import ClickModel, ConfigurationError, ModelKind
from carousel_click_models.optimizers import (
    Algorithm,
    FitConfig,
    cpbm_gradients,
    em_step_cpbm,
    fit,
    ga_step_cpbm,
    ga_step_oepbm,
    ga_step_rcpbm,
    mle_attraction,
    mle_examination,
    oepbm_gradients,
    pick_best,
    rcpbm_gradients,
    select_termination,
    tune_learning_rate,
)
from carousel_click_models.simulator import random_ground_truth, simulate

from conftest import SMALL, random_dataset

H = 1e-6


def random_params(rng, ds):
    att = ItemAttraction.from_arrays(ds.items, rng.uniform(0.1, 0.9, len(ds.items)))
    grid = PositionGrid(rng.uniform(0.1, 0.9, (SMALL.rows, SMALL.cols)))
    return att, grid


def fd_items(ds, att, total):
    """Central differences of ``total(att)`` per item, averaged over the item's records."""
    out = []
    for u, n in zip(ds.items, ds.item_counts):
        up = ItemAttraction({**att.table, u: att[u] + H})
        dn = ItemAttraction({**att.table, u: att[u] - H})
        out.append((total(up) - total(dn)) / (2 * H) / n)
    return np.array(out)


def fd_array(values, total, counts):
    grad = np.zeros(values.shape)
    for idx in np.ndindex(values.shape):
        if counts[idx] == 0:
            continue
        up, dn = values.copy(), values.copy()
        up[idx] += H
        dn[idx] -= H
        grad[idx] = (total(up) - total(dn)) / (2 * H) / counts[idx]
    return grad


@pytest.mark.parametrize("seed", range(6))
def test_cpbm_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng)
    att, grid = random_params(rng, ds)

    def ll(a, g):
        return click_log_likelihood(ds, ClickModel(ModelKind.CPBM, a, PositionGrid(g))).total

    g_t, g_w = cpbm_gradients(ds, att, grid)
    np.testing.assert_allclose(g_t, fd_items(ds, att, lambda a: ll(a, grid.values)), atol=1e-5)
    np.testing.assert_allclose(g_w, fd_array(grid.values.copy(), lambda g: ll(att, g), ds.cell_counts),
                               atol=1e-5)


@pytest.mark.parametrize("seed", range(6))
def test_rcpbm_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng)
    att, _ = random_params(rng, ds)
    rows, cols = rng.uniform(0.1, 0.9, SMALL.rows), rng.uniform(0.1, 0.9, SMALL.cols)

    def ll(a, r, c):
        return click_log_likelihood(ds, ClickModel(ModelKind.RCPBM, a, RowCol(r, c))).total

    g_t, g_r, g_c = rcpbm_gradients(ds, att, RowCol(rows, cols))
    np.testing.assert_allclose(g_t, fd_items(ds, att, lambda a: ll(a, rows, cols)), atol=1e-5)
    np.testing.assert_allclose(g_r, fd_array(rows.copy(), lambda r: ll(att, r, cols),
                                             ds.cell_counts.sum(axis=1)), atol=1e-5)
    np.testing.assert_allclose(g_c, fd_array(cols.copy(), lambda c: ll(att, rows, c),
                                             ds.cell_counts.sum(axis=0)), atol=1e-5)


@pytest.mark.parametrize("seed", range(6))
def test_oepbm_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng)
    att, grid = random_params(rng, ds)

    def ll(a, g):
        model = ClickModel(ModelKind.OEPBM, a, PositionGrid(g))
        return observed_examination_log_likelihood(ds, model).total

    g_t, g_w = oepbm_gradients(ds, att, grid)
    np.testing.assert_allclose(g_t, fd_items(ds, att, lambda a: ll(a, grid.values)), atol=1e-5)
    np.testing.assert_allclose(g_w, fd_array(grid.values.copy(), lambda g: ll(att, g), ds.cell_counts),
                               atol=1e-5)


def test_oepbm_gradient_vanishes_at_closed_form(rng):
    ds = random_dataset(rng, n_records=400, per_session=12)
    _, g_w = oepbm_gradients(ds, mle_attraction(ds), mle_examination(ds))
    assert np.abs(g_w).max() < 1e-8
    # theta is stationary at clicks / examined records, which is the CTR only
    # when every record is examined
    seen = ds.select(ds.examined == 1)
    g_t, _ = oepbm_gradients(seen, mle_attraction(seen), PositionGrid(np.full((3, 4), 0.5)))
    assert np.abs(g_t).max() < 1e-8


class TestEM:
    def test_all_clicked(self):
        ds = Dataset.from_records([("s", "a", 1, 1, 1, 1, 1), ("t", "a", 1, 1, 1, 1, 1)], SMALL)
        att, grid = em_step_cpbm(ds, ItemAttraction({"a": 0.3}), PositionGrid(np.full((3, 4), 0.4)))
        assert att["a"] == 1 - EPS and grid.at(1, 1) == 1 - EPS
        assert grid.at(2, 2) == 0.4  # no records: unchanged

    def test_full_examination_gives_click_mean(self, rng):
        ds = random_dataset(rng, n_records=200, per_session=10)
        att0 = ItemAttraction.constant(ds.items, 0.3)
        att, _ = em_step_cpbm(ds, att0, PositionGrid(np.full((3, 4), 1 - EPS)))
        for u in ds.items:
            assert att[u] == pytest.approx(ds.click[ds.item == u].mean(), abs=1e-5)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_record_loop(self, seed):
        rng = np.random.default_rng(seed)
        ds = random_dataset(rng)
        att, grid = random_params(rng, ds)
        new_att, new_grid = em_step_cpbm(ds, att, grid)
        th_sum, w_sum = {}, {}
        for r in ds.records:
            th, w = att[r.item], grid.at(r.row, r.col)
            post_a = 1.0 if r.click else (1 - w) * th / (1 - w * th)
            post_e = 1.0 if r.click else w * (1 - th) / (1 - w * th)
            th_sum.setdefault(r.item, []).append(post_a)
            w_sum.setdefault((r.row, r.col), []).append(post_e)
        for u, v in th_sum.items():
            assert new_att[u] == pytest.approx(np.clip(np.mean(v), EPS, 1 - EPS), rel=1e-12)
        for (i, j), v in w_sum.items():
            assert new_grid.at(i, j) == pytest.approx(np.clip(np.mean(v), EPS, 1 - EPS), rel=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_monotone(self, seed):
        rng = np.random.default_rng(seed)
        ds = random_dataset(rng, n_records=120, per_session=8)
        att, grid = random_params(rng, ds)
        prev = -np.inf
        for _ in range(30):
            cur = click_log_likelihood(ds, ClickModel(ModelKind.CPBM, att, grid)).total
            assert cur >= prev - 1e-10
            prev = cur
            att, grid = em_step_cpbm(ds, att, grid)

    def test_fixed_attraction(self, rng):
        ds = random_dataset(rng)
        att, grid = random_params(rng, ds)
        new_att, new_grid = em_step_cpbm(ds, att, grid, fixed_attraction=True)
        assert new_att == att and new_grid != grid

    def test_reaches_generating_likelihood(self):
        gt = random_ground_truth("CPBM", SMALL, n_items=20, sessions=5000, seed=4)
        ds = simulate(gt)
        cfg = FitConfig("CPBM", "EM", iterations=100, eval_checkpoints=(100,),
                        attraction_init="uniform", examination_init="gaze")
        result = fit(cfg, ds)
        true_ll = click_log_likelihood(ds, gt.model).per_session_normalized
        assert result.trace[-1].train["click"].per_session_normalized >= true_ll - 1e-3


class TestGA:
    def test_identity_at_boundary_optimum(self):
        ds = Dataset.from_records([("s", "a", 1, 1, 1, 1, 1)], SMALL)
        att0, grid0 = ItemAttraction({"a": 1 - EPS}), PositionGrid(np.full((3, 4), 1 - EPS))
        for step in (ga_step_cpbm, ga_step_oepbm):
            att, grid = step(ds, att0, grid0, 0.1)
            assert att == att0 and grid == grid0
        att, rc = ga_step_rcpbm(ds, att0, RowCol(np.full(3, 1 - EPS), np.full(4, 1 - EPS)), 0.1)
        assert att == att0 and rc.rows[0] == 1 - EPS

    def test_step_is_lr_times_average_gradient(self, rng):
        ds = random_dataset(rng)
        att, grid = random_params(rng, ds)
        g_t, g_w = cpbm_gradients(ds, att, grid)
        new_att, new_grid = ga_step_cpbm(ds, att, grid, 1e-3)
        np.testing.assert_allclose(new_att.array(ds.items) - att.array(ds.items), 1e-3 * g_t, atol=1e-15)
        np.testing.assert_allclose(new_grid.values - grid.values, 1e-3 * g_w, atol=1e-15)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10**6), st.sampled_from([0.1, 1.0, 50.0]))
    def test_clip_after_every_step(self, seed, lr):
        rng = np.random.default_rng(seed)
        ds = random_dataset(rng)
        att, grid = random_params(rng, ds)
        rc = grid.to_rowcol()
        for _ in range(3):
            att, grid = ga_step_cpbm(ds, att, grid, lr)
            _, rc = ga_step_rcpbm(ds, att, rc, lr)
            att, grid = ga_step_oepbm(ds, att, grid, lr)
            for v in (att.array(ds.items), grid.values, rc.rows, rc.cols):
                assert (v >= EPS).all() and (v <= 1 - EPS).all()


class TestConfig:
    @pytest.mark.parametrize("kwargs", [
        dict(model_kind="RCPBM", algorithm="EM"),
        dict(model_kind="CM", algorithm="GA", learning_rate=0.1),
        dict(model_kind="CPBM", algorithm="GA"),
        dict(model_kind="CPBM", algorithm="EM", eval_checkpoints=(0, 200)),
        dict(model_kind="CPBM", algorithm="EM", fixed_attraction=True, attraction_init="uniform"),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigurationError):
            FitConfig(**kwargs).validate()

    def test_roundtrip(self):
        cfg = FitConfig(ModelKind.OEPBM, Algorithm.GA, learning_rate=0.01,
                        attraction_init=AttractionInit.UNIFORM, examination_init=ExaminationInit.CAROUSEL)
        assert FitConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_field(self):
        with pytest.raises(ConfigurationError):
            FitConfig.from_dict({"model_kind": "CM", "algorithm": "MLE", "lr": 1})


@pytest.mark.parametrize("values, expected", [
    ([(0, -0.5), (50, -0.4), (100, -0.3)], 100),
    ([(0, -0.23041), (50, -0.23039), (100, -0.3)], 0),
    ([(100, -0.2), (50, -0.2)], 50),
])
def test_pick_best_ties_to_lower_iteration(values, expected):
    assert pick_best(values) == expected


@pytest.fixture(scope="module")
def data():
    gt = random_ground_truth("CPBM", SMALL, n_items=20, sessions=600, seed=7)
    ds = simulate(gt)
    half = ds.sessions[: ds.n_sessions // 2]
    return ds.with_sessions(half), ds.select(~np.isin(ds.session, half))


class TestFit:
    def test_checkpoints_recorded(self, data):
        train, test = data
        cfg = FitConfig("CPBM", "GA", learning_rate=0.01, iterations=20, eval_checkpoints=(0, 10, 20))
        result = fit(cfg, train, test=test)
        assert [cp.iteration for cp in result.trace] == [0, 10, 20]
        assert result.selected_on == "test"
        scores = [(cp.iteration, cp.test["click"].per_session_normalized) for cp in result.trace]
        assert result.best_checkpoint == pick_best(scores)

    def test_fixed_attraction_keeps_ctr(self, data):
        train, _ = data
        cfg = FitConfig("RCPBM", "GA", learning_rate=0.1, iterations=5, eval_checkpoints=(5,),
                        fixed_attraction=True)
        assert fit(cfg, train).model.attraction == mle_attraction(train)

    def test_oepbm_mle(self, data):
        train, _ = data
        model = fit(FitConfig("OEPBM", "MLE"), train).model
        assert model.examination == mle_examination(train)

    def test_cascade_termination_search(self, data):
        train, test = data
        t, scores = select_termination(train, test, "TCM", grid=(0.01, 0.5, 0.99))
        assert scores[t] == max(scores.values())
        result = fit(FitConfig("TCM", "MLE"), train, validation=test)
        assert result.hyperparameters["termination"] in np.round(np.arange(1, 101) * 0.01, 2)
        assert isinstance(result.model.examination, Termination)
        assert fit(FitConfig("CM", "MLE"), train).model.examination is None

    def test_termination_tie_goes_to_smaller_t(self):
        # no clicks after the first cell: every t explains the data equally
        rows = [("s", "a", 1, 1, 1, 1, 1)]
        ds = Dataset.from_records(rows, SMALL)
        t, _ = select_termination(ds, ds, "CCM", grid=(0.3, 0.1, 0.2))
        assert t == 0.1

    def test_missing_support_is_an_error(self):
        ds = Dataset.from_records([("s", "a", 1, 1, 1, 1, 1)], SMALL)
        with pytest.raises(DataError):
            fit(FitConfig("CPBM", "EM", iterations=1, eval_checkpoints=(1,), examination_init="carousel"), ds)

    def test_tune_learning_rate(self, data):
        train, test = data
        cfg = FitConfig("OEPBM", "GA", iterations=10, eval_checkpoints=(0, 10))
        best, tuned = tune_learning_rate(cfg, train, test)
        assert set(tuned) == {0.001, 0.01, 0.1}
        assert tuned[best][0] == max(s for s, _ in tuned.values())
