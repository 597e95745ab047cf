import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermobench.errors import ConfigurationError, InsufficientDataError, OutOfSeasonError, ShapeError
from thermobench.timeseries import (
    MINUTES_PER_WEEK,
    Dataset,
    Season,
    assign_season,
    read_csv,
    resample,
    rms_error,
    split_train_test,
    to_minutes,
    write_csv,
    zone_rms,
)


def make_dataset(values, step, start=0, flows=None, mask=None):
    values = np.asarray(values, dtype=float)
    T = values.shape[0]
    return Dataset(
        step_minutes=step,
        timestamps=start + step * np.arange(T),
        zone_temps=values,
        vav_flows=np.zeros(T) if flows is None else flows,
        t_ambient=np.full(T, 10.0),
        t_supply=np.full(T, 12.8),
        excitation_mask=np.zeros(T, bool) if mask is None else mask,
    )


def weekly_dataset(start_date, n_weeks, step=60):
    start = to_minutes(start_date)
    T = n_weeks * MINUTES_PER_WEEK // step
    return make_dataset(np.arange(T, dtype=float), step, start=start)


class TestResample:
    def test_constant_is_invariant(self):
        d = make_dataset(np.full(60, 21.0), 1)
        out = resample(d, 15)
        assert len(out) == 4
        assert np.all(out.zone_temps == 21.0)

    def test_ramp_bin_mean(self):
        out = resample(make_dataset(np.arange(15.0), 1), 15)
        assert out.zone_temps[:, 0].tolist() == [7.0]

    def test_upsample_interpolates(self):
        out = resample(make_dataset([0.0, 15.0], 60), 15)
        assert out.zone_temps[:, 0].tolist() == [0.0, 3.75, 7.5, 11.25, 15.0]
        assert out.timestamps.tolist() == [0, 15, 30, 45, 60]

    def test_mask_any_in_bin(self):
        mask = np.zeros(30, bool)
        mask[17] = True
        out = resample(make_dataset(np.zeros(30), 1, mask=mask), 15)
        assert out.excitation_mask.tolist() == [False, True]

    def test_incompatible_ratio(self):
        with pytest.raises(ConfigurationError):
            resample(make_dataset(np.zeros(10), 10), 15)

    @given(st.lists(st.floats(-50, 50), min_size=30, max_size=30))
    def test_downsample_idempotent(self, vals):
        once = resample(make_dataset(vals, 1), 15)
        twice = resample(once, 15)
        np.testing.assert_array_equal(once.zone_temps, twice.zone_temps)


class TestSeasons:
    @pytest.mark.parametrize("day,season", [
        (dt.date(2015, 10, 1), Season.FALL),
        (dt.date(2016, 1, 10), Season.WINTER),
        (dt.date(2016, 3, 1), Season.SPRING),
        (dt.date(2015, 9, 1), Season.FALL),
        (dt.date(2015, 12, 15), Season.FALL),
        (dt.date(2015, 12, 16), Season.WINTER),
        (dt.date(2016, 1, 25), Season.WINTER),
        (dt.date(2016, 1, 26), Season.SPRING),
        (dt.date(2016, 5, 15), Season.SPRING),
    ])
    def test_boundaries(self, day, season):
        assert assign_season(day) is season

    @pytest.mark.parametrize("day", [dt.date(2016, 5, 16), dt.date(2016, 7, 4), dt.date(2016, 8, 31)])
    def test_summer_gap_rejected(self, day):
        with pytest.raises(OutOfSeasonError):
            assign_season(day)

    def test_accepts_epoch_minutes(self):
        assert assign_season(to_minutes("2015-10-01T12:00")) is Season.FALL

    @given(st.dates(dt.date(2001, 1, 1), dt.date(2030, 12, 31)))
    def test_total_on_seasons(self, day):
        in_gap = (5, 15) < (day.month, day.day) < (9, 1)
        if in_gap:
            with pytest.raises(OutOfSeasonError):
                assign_season(day)
        else:
            assert assign_season(day) in set(Season)


class TestSplit:
    def test_ninety_percent_of_ten_weeks(self):
        # 2015-09-07 is a Monday
        d = weekly_dataset(dt.date(2015, 9, 7), 10)
        split = split_train_test(d, 0.9, seed=7)
        assert len(split.train[Season.FALL]) == 9
        assert len(split.test[Season.FALL]) == 1

    def test_half_of_two_weeks(self):
        d = weekly_dataset(dt.date(2015, 9, 7), 2)
        split = split_train_test(d, 0.5, seed=0)
        assert len(split.train[Season.FALL]) == 1 and len(split.test[Season.FALL]) == 1

    def test_deterministic(self):
        d = weekly_dataset(dt.date(2015, 9, 7), 6)
        a = split_train_test(d, 0.5, seed=3)
        b = split_train_test(d, 0.5, seed=3)
        assert [w.timestamps[0] for w in a.train[Season.FALL]] == [w.timestamps[0] for w in b.train[Season.FALL]]

    @given(st.integers(2, 9), st.floats(0.05, 0.95), st.integers(0, 1000))
    @settings(max_examples=30, deadline=None)
    def test_partition(self, n_weeks, frac, seed):
        d = weekly_dataset(dt.date(2015, 9, 7), n_weeks)
        split = split_train_test(d, frac, seed=seed)
        tr = {int(w.timestamps[0]) for w in split.train[Season.FALL]}
        te = {int(w.timestamps[0]) for w in split.test[Season.FALL]}
        assert not tr & te
        assert len(tr) + len(te) == n_weeks
        assert all(len(w) == MINUTES_PER_WEEK // 60 for w in split.train[Season.FALL])

    def test_weeks_start_monday(self):
        d = weekly_dataset(dt.date(2015, 9, 5), 3)  # starts Saturday
        split = split_train_test(d, 0.5, seed=0)
        for w in split.train[Season.FALL] + split.test[Season.FALL]:
            assert w.timestamps[0] % MINUTES_PER_WEEK == 0

    def test_single_week_rejected(self):
        with pytest.raises(InsufficientDataError):
            split_train_test(weekly_dataset(dt.date(2015, 9, 7), 1), 0.9, seed=0)

    def test_bad_fraction(self):
        with pytest.raises(ConfigurationError):
            split_train_test(weekly_dataset(dt.date(2015, 9, 7), 2), 1.0, seed=0)


class TestRms:
    def test_identical(self):
        assert rms_error([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_constant_offset(self):
        assert rms_error([1.0, 1.0], [0.0, 0.0]) == 1.0

    def test_direct_evaluation(self):
        assert rms_error([2.0, 0.0], [0.0, 0.0]) == pytest.approx(1.41421356, abs=1e-6)

    def test_matrix(self):
        per_zone, mean = zone_rms(np.array([[1.0, 2.0], [1.0, 0.0]]), np.zeros((2, 2)))
        np.testing.assert_allclose(per_zone, [1.0, np.sqrt(2.0)])
        assert mean == pytest.approx((1 + np.sqrt(2)) / 2)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            rms_error([1.0], [1.0, 2.0])

    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=20), st.floats(0.1, 10))
    def test_symmetric_and_homogeneous(self, xs, scale):
        a = np.asarray(xs)
        b = np.zeros_like(a)
        assert rms_error(a, b) == pytest.approx(rms_error(b, a))
        assert rms_error(scale * a, b) == pytest.approx(scale * rms_error(a, b), rel=1e-9, abs=1e-12)


class TestCsv:
    def test_round_trip(self, tmp_path):
        T = 8
        d = Dataset(
            step_minutes=15,
            timestamps=to_minutes("2015-09-07") + 15 * np.arange(T),
            zone_temps=np.column_stack([np.linspace(20, 21, T), np.linspace(22, 21, T)]),
            vav_flows=np.abs(np.sin(np.arange(T * 3))).reshape(T, 3),
            t_ambient=np.linspace(5, 9, T),
            t_supply=np.full(T, 12.8),
            excitation_mask=np.arange(T) % 3 == 0,
            solar=np.ones((T, 4)),
            zone_names=("N", "S"),
            vav_ids=("1", "2", "3"),
        )
        path = tmp_path / "d.csv"
        write_csv(d, path)
        header = path.read_text().splitlines()[0]
        assert header == "timestamp,zone_N,zone_S,vav_1,vav_2,vav_3,t_ambient,t_supply,sol_e,sol_n,sol_s,sol_w,excitation"
        back = read_csv(path)
        np.testing.assert_array_equal(back.zone_temps, d.zone_temps)
        np.testing.assert_array_equal(back.vav_flows, d.vav_flows)
        np.testing.assert_array_equal(back.excitation_mask, d.excitation_mask)
        assert back.zone_names == ("N", "S") and back.step_minutes == 15

    def test_missing_solar_and_gap_filled(self, tmp_path):
        path = tmp_path / "g.csv"
        path.write_text(
            "timestamp,zone_a,vav_1,t_ambient,t_supply,excitation\n"
            "2015-09-07T00:00,20.0,0.1,10,12.8,0\n"
            "2015-09-07T00:15,21.0,0.1,10,12.8,0\n"
            "2015-09-07T00:45,23.0,0.1,10,12.8,1\n"
        )
        d = read_csv(path)
        assert d.solar is None
        assert d.zone_temps[:, 0].tolist() == [20.0, 21.0, 22.0, 23.0]
        assert d.excitation_mask.tolist() == [False, False, False, True]
