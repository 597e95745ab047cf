import numpy as np
import pytest

from thermobench.errors import ConfigurationError
from thermobench.synth import (
    OccupancyParams,
    ScenarioConfig,
    desk_scenario,
    generate,
    lumped_scenario,
    occupancy_gains,
)
from thermobench.timeseries import MINUTES_PER_DAY, Season, split_train_test, weeks_by_season, write_csv


def weekday_median_flow(d):
    day = (d.timestamps % (7 * MINUTES_PER_DAY)) // MINUTES_PER_DAY
    return np.median(d.vav_flows.sum(axis=1)[day < 5])


class TestOccupancy:
    def test_winter_smaller(self):
        p = OccupancyParams()
        assert occupancy_gains(p, Season.WINTER).max() < occupancy_gains(p, Season.FALL).max()

    def test_afternoon_peak(self):
        prof = occupancy_gains(OccupancyParams(), Season.FALL)[:, 0]
        for day in range(5):
            base = day * 96
            assert prof[base + 3 * 4] < prof[base + 16 * 4]

    def test_zero_amplitude(self):
        assert np.all(occupancy_gains(OccupancyParams(amplitude=0.0), Season.SPRING) == 0.0)

    def test_per_zone_amplitude(self):
        prof = occupancy_gains(OccupancyParams(amplitude=[0.1, 0.2]), Season.FALL, n_zones=2)
        np.testing.assert_allclose(prof[:, 1], 2 * prof[:, 0])


class TestScenario:
    def test_negative_noise(self):
        with pytest.raises(ConfigurationError):
            ScenarioConfig(kind="difference", noise_std=-0.1)

    def test_unknown_kind(self):
        with pytest.raises(ConfigurationError):
            ScenarioConfig(kind="other")

    def test_roundtrip(self):
        cfg = desk_scenario(seed=4)
        assert ScenarioConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError, match="nope.json"):
            ScenarioConfig.load(tmp_path / "nope.json")

    def test_two_weeks_per_season(self):
        d, _ = generate(lumped_scenario())
        groups, dropped = weeks_by_season(d)
        assert not dropped
        assert {s: len(w) for s, w in groups.items()} == {Season.FALL: 3, Season.WINTER: 6, Season.SPRING: 3}
        sp = split_train_test(d, 0.9)
        assert all(len(sp.train[s]) >= 2 and len(sp.test[s]) == 1 for s in groups)


class TestGenerate:
    def test_noiseless_equals_truth(self, desk_clean):
        cfg, d, gt, sp = desk_clean
        np.testing.assert_array_equal(d.zone_temps, gt.outputs)

    def test_deterministic(self, tmp_path):
        a, _ = generate(lumped_scenario(seed=3))
        b, _ = generate(lumped_scenario(seed=3))
        write_csv(a, tmp_path / "a.csv")
        write_csv(b, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_seed_matters(self):
        a, _ = generate(lumped_scenario(seed=3))
        b, _ = generate(lumped_scenario(seed=4))
        assert not np.array_equal(a.zone_temps, b.zone_temps)

    def test_truth_independent_of_noise(self, desk, desk_clean):
        _, _, noisy, _ = desk
        _, _, clean, _ = desk_clean
        np.testing.assert_array_equal(noisy.states, clean.states)
        np.testing.assert_array_equal(noisy.inputs, clean.inputs)

    @pytest.mark.parametrize("factory", [desk_scenario, lumped_scenario])
    def test_excitation_strength(self, factory):
        d, _ = generate(factory(seed=1))
        exc = d.vav_flows[d.excitation_mask].sum(axis=1)
        assert exc.size > 0
        assert exc.min() >= 3 * weekday_median_flow(d)

    def test_excitation_on_saturdays(self, desk):
        _, d, _, _ = desk
        day = (d.timestamps[d.excitation_mask] // MINUTES_PER_DAY) % 7
        assert np.all(day == 5)

    def test_dimensions(self, desk):
        cfg, d, gt, _ = desk
        T = len(d)
        assert T == cfg.n_steps
        assert gt.states.shape == (T, gt.model.n_states)
        assert gt.gains.shape == (T, 6)
        assert d.vav_flows.shape == (T, 21)
        for s, prof in gt.gains_profiles.items():
            assert prof.shape == (672, 6)

    def test_weekend_gains_constant(self, desk):
        _, d, gt, _ = desk
        weekend = (d.timestamps % (7 * MINUTES_PER_DAY)) >= 5 * MINUTES_PER_DAY
        np.testing.assert_allclose(gt.gains[weekend], np.broadcast_to(gt.gains_const, gt.gains[weekend].shape))

    def test_lumped_truth_recursion(self, lumped_clean):
        d, gt, _ = lumped_clean
        x = gt.outputs[:, 0]
        u = d.vav_flows.sum(axis=1)
        v = d.disturbances
        pred = 0.8 * x[:-1] - 0.18 * u[:-1] + v[:-1] @ np.array([0.0019, 0.028]) + gt.gains[:-1, 0]
        np.testing.assert_allclose(x[1:], pred, atol=1e-10)
