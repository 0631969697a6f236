import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from carousel_click_models.core import CarouselLayout, Dataset
from carousel_click_models.data import (
    AttractionInit,
    DataError,
    ExaminationInit,
    SplitError,
    SplitSpec,
    carousel_grid,
    filter_impressions,
    filter_sessions,
    init_attraction,
    init_examination,
    load_interactions,
    load_splits,
    negative_reduction,
    prepare,
    split_dataset,
    train_test_split,
    train_validation_split,
    write_interactions,
    write_splits,
)
from carousel_click_models.optimizers import mle_attraction, mle_examination
from carousel_click_models.simulator import random_ground_truth, simulate

from conftest import SMALL, random_dataset

HEADER = "session_id,item_id,row,col,click,examined,impressed\n"


def write(tmp_path, body, header=HEADER, name="log.csv"):
    path = tmp_path / name
    path.write_text(header + body, encoding="utf-8")
    return path


class TestLoad:
    def test_roundtrip(self, tmp_path, rng):
        ds = random_dataset(rng, impressed=0.7)
        path = tmp_path / "x.csv"
        write_interactions(ds, path)
        assert load_interactions(path, SMALL).records == ds.records

    @pytest.mark.parametrize("delim", [",", "\t", ";"])
    def test_delimiters(self, tmp_path, delim):
        header = HEADER.replace(",", delim)
        path = write(tmp_path, delim.join("s1 a 1 1 1 1 1".split()) + "\n", header)
        assert len(load_interactions(path, SMALL)) == 1

    def test_drops_click_without_exam(self, tmp_path):
        path = write(tmp_path, "s1,a,1,1,1,0,1\ns1,b,1,2,0,1,1\ns2,a,1,1,1,0,1\ns2,b,1,2,0,0,1\n")
        ds = load_interactions(path, SMALL)
        assert len(ds) == 2
        assert ds.stage_counts["dropped_click_without_exam"] == 2
        # s2 had no fixation at all, s1 fixated another item
        assert ds.stage_counts["click_sessions_without_fixation"] == 1

    def test_click_without_impression_rejected(self, tmp_path):
        path = write(tmp_path, "s1,a,1,1,1,1,0\n")
        with pytest.raises(DataError, match="impressed"):
            load_interactions(path, SMALL)

    @pytest.mark.parametrize("body, match", [
        ("s1,a,1,x,0,0,1\n", ":2:"),
        ("s1,a,1,1,0,2,1\n", "0 or 1"),
        ("s1,a,1,1,0,0\n", "fields"),
        ("s1,a,9,1,0,0,1\n", "outside"),
    ])
    def test_diagnostics(self, tmp_path, body, match):
        with pytest.raises(DataError, match=match):
            load_interactions(write(tmp_path, body), SMALL)

    def test_bad_header(self, tmp_path):
        with pytest.raises(DataError):
            load_interactions(write(tmp_path, "s1,a,1,1,0,0,1\n", header="a,b\n"), SMALL)


class TestFilters:
    def rows(self):
        return [
            ("s1", "a", 1, 1, 1, 1, 1), ("s1", "b", 1, 2, 0, 1, 1), ("s1", "c", 1, 3, 0, 0, 0),
            ("s2", "a", 1, 1, 0, 0, 1), ("s2", "b", 1, 2, 0, 1, 1),
            ("s3", "b", 1, 1, 1, 1, 1), ("s3", "d", 1, 2, 0, 0, 1),
        ]

    def test_click_less_session_removed(self):
        out = filter_sessions(Dataset.from_records(self.rows(), SMALL))
        assert set(out.sessions) == {"s1", "s3"}
        assert out.stage_counts["sessions_with_click"] == 2

    def test_never_clicked_items_removed(self):
        out = filter_sessions(Dataset.from_records(self.rows(), SMALL))
        assert set(out.items) == {"a", "b"}
        assert out.stage_counts["clicks"] == 2 and out.stage_counts["items"] == 2

    def test_clean_dataset_unchanged(self):
        rows = [r for r in self.rows() if r[0] != "s2" and r[1] in "ab"]
        ds = Dataset.from_records(rows, SMALL)
        assert filter_sessions(ds).records == ds.records

    def test_unfixated_sessions_counted(self, tmp_path):
        path = write(tmp_path, "s1,a,1,1,1,1,1\ns2,a,1,1,1,0,1\ns2,b,1,2,0,0,1\n")
        out = filter_sessions(load_interactions(path, SMALL))
        assert out.stage_counts["sessions_with_click"] == 2
        assert out.stage_counts["sessions_without_fixation_removed"] == 1
        assert out.n_sessions == 1

    def test_impression_filter_keeps_clicks(self, rng):
        ds = random_dataset(rng, n_records=200, impressed=0.5)
        out = filter_impressions(ds)
        assert out.click.sum() == ds.click.sum()
        assert (out.impressed == 1).all()
        assert 0 < negative_reduction(ds, out) < 1

    def test_prepare_counts(self):
        out = prepare(Dataset.from_records(self.rows(), SMALL))
        assert len(out) == 3  # s2 has no click; c and d are never clicked
        assert out.stage_counts["screens"] == 3


def split_rows():
    """Item a: 5 click sessions; item b: 4 click sessions; filler item f."""
    rows = []
    for s in range(5):
        rows += [(f"a{s}", "a", 1, 1, 1, 1, 1), (f"a{s}", "f", 1, 2, 0, 1, 1)]
    for s in range(4):
        rows += [(f"b{s}", "b", 1, 1, 1, 1, 1), (f"b{s}", "f", 1, 2, 0, 0, 1)]
    rows.append(("f0", "f", 1, 2, 1, 1, 1))
    return rows


class TestSplits:
    def test_five_clicks_two_test_sessions(self):
        train, test = train_test_split(Dataset.from_records(split_rows(), SMALL))
        assert sorted(set(test.sessions)) == sorted(set(test.session[test.item == "a"]))
        assert test.n_sessions == 2
        assert int(train.click[train.item == "b"].sum()) == 4  # below threshold: untouched

    def test_validation_from_four_clicks(self):
        train, _ = train_test_split(Dataset.from_records(split_rows(), SMALL))
        sub, val = train_validation_split(train)
        assert set(val.item[val.click == 1]) == {"b"} and val.n_sessions == 2
        assert int(sub.click[sub.item == "a"].sum()) == 3  # 3 clicks: nothing held out

    def test_no_item_reaches_threshold(self):
        rows = [r for r in split_rows() if not r[0].startswith("a")]
        with pytest.raises(SplitError, match="empty"):
            train_test_split(Dataset.from_records(rows, SMALL))

    def test_unsatisfiable_lists_positions(self):
        # each click of item a sits alone in its cell
        rows = [(f"s{k}", "a", 1, k + 1, 1, 1, 1) for k in range(4)]
        rows += [("s4", "a", 2, 1, 1, 1, 1)]
        with pytest.raises(SplitError, match=r"\(\d, \d\)"):
            train_test_split(Dataset.from_records(rows, SMALL), SplitSpec(max_redraw_rounds=20))

    def test_multi_click_sessions_hint(self):
        layout = CarouselLayout(rows=3, cols=4, visible_set_size=2, swipe_sets=2)
        gt = random_ground_truth("CPBM", layout, n_items=12, sessions=200, seed=0,
                                 theta_range=(0.8, 0.95), exam_range=(0.9, 1.0))
        ds = prepare(simulate(gt))
        assert ds.max_clicks_per_session > 5
        with pytest.raises(SplitError, match="first_click_only"):
            train_test_split(ds, SplitSpec(max_redraw_rounds=2))

    def test_deterministic_and_seed_sensitive(self):
        ds = Dataset.from_records(split_rows(), SMALL)
        a = train_test_split(ds, SplitSpec(seed=1))[1]
        b = train_test_split(ds, SplitSpec(seed=1))[1]
        assert a.records == b.records
        tests = {tuple(train_test_split(ds, SplitSpec(seed=s))[1].sessions) for s in range(10)}
        assert len(tests) > 1

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            SplitSpec(fraction=1.0)

    def test_write_and_load(self, tmp_path):
        splits = split_dataset(Dataset.from_records(split_rows(), SMALL))
        path = write_splits(splits, tmp_path)
        again = load_splits(path, SMALL)
        for name in ("train", "subtrain", "validation", "test"):
            assert sorted(getattr(again, name).records) == sorted(getattr(splits, name).records)
        assert json.loads((tmp_path / "manifest.json").read_text())["split_spec"]["seed"] == 0


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 1000))
def test_split_guarantees_on_simulated_logs(seed):
    layout = CarouselLayout(rows=3, cols=4, visible_set_size=2, swipe_sets=2)
    gt = random_ground_truth("CPBM", layout, n_items=30, sessions=400, seed=seed,
                             first_click_only=True)
    ds = prepare(simulate(gt))
    splits = split_dataset(ds, SplitSpec(seed=seed))
    train, test = splits.train, splits.test
    assert not set(train.sessions) & set(test.sessions)
    assert not set(splits.subtrain.sessions) & set(splits.validation.sessions)
    assert train.n_sessions + test.n_sessions == ds.n_sessions
    train_clicks = {u: int(train.click[train.item == u].sum()) for u in set(test.item[test.click == 1])}
    assert min(train_clicks.values()) >= 3
    clicked_cells = set(ds.pos[ds.click == 1])
    assert clicked_cells <= set(train.pos[train.click == 1])
    again = split_dataset(ds, SplitSpec(seed=seed))
    assert again.test.records == test.records


class TestInits:
    def ds(self):
        rows = [(f"s{k}", "a", 1, 1 + k % 4, int(k < 2), int(k < 5), 1) for k in range(8)]
        rows.append(("s0", "b", 2, 1, 0, 0, 0))
        return Dataset.from_records(rows, SMALL)

    def test_uniform(self):
        att = init_attraction(self.ds(), AttractionInit.UNIFORM)
        assert att["a"] == att["b"] == 0.5

    def test_ctr_counts_impressed_records(self):
        ds = self.ds().select(self.ds().impressed == 1)
        assert init_attraction(ds, "ctr")["a"] == pytest.approx(0.25)

    def test_ctr_undefined_without_impressions(self):
        with pytest.raises(DataError):
            init_attraction(self.ds(), "ctr")

    @pytest.mark.parametrize("seed", range(3))
    def test_ctr_and_gaze_equal_mle(self, seed):
        ds = random_dataset(np.random.default_rng(seed), n_records=300, per_session=12)
        ctr = init_attraction(ds, AttractionInit.CTR)
        assert ctr == mle_attraction(ds)
        gaze = init_examination(ds, SMALL, ExaminationInit.GAZE)
        assert gaze == mle_examination(ds)

    def test_gaze_needs_every_cell(self):
        with pytest.raises(DataError):
            init_examination(self.ds(), SMALL, ExaminationInit.GAZE)

    def test_carousel_values(self):
        grid = carousel_grid(CarouselLayout())
        assert grid[0, 0] == 1 - 1e-6
        assert grid[6, 12] == pytest.approx(0.95 ** 6 * 0.7)
        assert grid[0, 5] == pytest.approx(0.7) and grid[0, 4] == 1 - 1e-6

    def test_carousel_monotone(self):
        grid = carousel_grid(CarouselLayout())
        assert (np.diff(grid, axis=0) <= 0).all()
        assert (np.diff(grid, axis=1) <= 0).all()
