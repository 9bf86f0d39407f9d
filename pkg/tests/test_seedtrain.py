import numpy as np
import pytest

from conftest import REFERENCE_VOLUMES, build_scales, thaw_state, train_config
from seedopt.kinetics import CultureState, ModelParameters
from seedopt.seedtrain import (
    ScaleConfig,
    SeedTrainConfig,
    ThresholdUnreachable,
    UncertaintySpec,
    execute_passaging,
    find_passaging_time,
    penalty_objectives,
    required_transfer_vcd,
    simulate_seed_train,
)


def flask(name, volume, lo=None, hi=None, **kwargs):
    lo = volume * 0.5 if lo is None else lo
    hi = volume * 1.5 if hi is None else hi
    return ScaleConfig(name=name, filling_volume=volume,
                       working_volume_range=(lo, hi), **kwargs)


class TestRequiredTransferVcd:
    def test_unit_ratio_clamped_to_range_floor(self):
        a = flask("a", 1.0)
        b = flask("b", 1.0)
        assert required_transfer_vcd(a, b, 3.15e8) == 1e9

    def test_hand_arithmetic(self):
        a = flask("a", 0.015)
        b = flask("b", 0.115)
        assert required_transfer_vcd(a, b, 3.15e8) == pytest.approx(2.415e9)

    def test_bioreactor_ratio(self):
        # 3.15e8 * 7.97 / 2.026
        a = flask("a", 2.026)
        b = flask("b", 7.97)
        assert required_transfer_vcd(a, b, 3.15e8) == pytest.approx(1.239e9, rel=1e-3)


class TestFindPassagingTime:
    def test_mean_crossing_rounds_up_to_next_hour(self):
        # deterministic ensemble crossing the threshold at t = 71.3 h
        times = np.arange(0.0, 121.0)
        growth = 3.15e8 * np.exp(0.03 * times)
        threshold = 3.15e8 * np.exp(0.03 * 71.3)
        ensemble = np.vstack([growth, growth])
        t = find_passaging_time(times, ensemble, alpha=0.0,
                                threshold=threshold, window=(48.0, 120.0))
        assert t == 72.0

    def test_zero_threshold_returns_window_start(self):
        times = np.arange(0.0, 121.0)
        ensemble = np.vstack([np.full_like(times, 2e9), np.full_like(times, 3e9)])
        t = find_passaging_time(times, ensemble, alpha=1.0, threshold=0.0,
                                window=(48.0, 120.0))
        assert t == 48.0

    def test_unreachable_raises(self):
        # two samples with mean 2e9 and sample sd 1e9 at every hour
        times = np.arange(0.0, 121.0)
        gap = 1e9 / np.sqrt(2.0)
        ensemble = np.vstack([np.full_like(times, 2e9 + gap),
                              np.full_like(times, 2e9 - gap)])
        u = ensemble.mean(axis=0) - ensemble.std(axis=0, ddof=1)
        assert u[0] == pytest.approx(1e9)
        with pytest.raises(ThresholdUnreachable):
            find_passaging_time(times, ensemble, alpha=1.0, threshold=1.5e9,
                                window=(48.0, 120.0))

    def test_alpha_pushes_time_later_and_utility_lower(self):
        times = np.arange(0.0, 121.0)
        rng = np.random.default_rng(4)
        base = 3.15e8 * np.exp(0.03 * times)
        ensemble = base * rng.lognormal(0.0, 0.08, size=(64, 1))
        threshold = 1.5e9
        previous_t = None
        previous_u = None
        for alpha in (0.0, 0.5, 1.0, 2.0):
            t = find_passaging_time(times, ensemble, alpha, threshold, (48.0, 120.0))
            idx = int(np.searchsorted(times, t))
            u_at_t = (ensemble.mean(axis=0) - alpha * ensemble.std(axis=0, ddof=1))[idx]
            if previous_t is not None:
                assert t >= previous_t
                assert u_at_t <= previous_u + 1e-6 * abs(previous_u)
            previous_t = t
            previous_u = u_at_t

    def test_alpha_zero_is_the_mean(self):
        times = np.arange(48.0, 121.0)
        rng = np.random.default_rng(9)
        ensemble = 1e9 + 1e7 * times + 1e8 * rng.standard_normal((32, times.size))
        threshold = float(ensemble.mean(axis=0)[5])
        t = find_passaging_time(times, ensemble, 0.0, threshold, (48.0, 120.0))
        crossing = times[np.argmax(ensemble.mean(axis=0) >= threshold)]
        assert t == crossing

    def test_requires_two_samples(self):
        times = np.arange(48.0, 121.0)
        with pytest.raises(ValueError):
            find_passaging_time(times, np.ones((1, times.size)), 1.0, 1.0,
                                (48.0, 120.0))


class TestExecutePassaging:
    def source(self, xv=2e9, v=1.0):
        return CultureState(t=72.0, xv=xv, xt=1.1 * xv, c_glc=5.0, c_gln=1.0,
                            c_lac=8.0, c_amm=2.0, c_titer=10.0, v=v)

    def test_boundary_no_discard(self):
        target = 3.15e8
        nxt = flask("next", 4.0)
        src = self.source(xv=target * 4.0 / 1.0, v=1.0)
        out = execute_passaging(src, nxt, target)
        assert out.xv == pytest.approx(target)
        assert out.v == 4.0

    def test_double_density_discards_half(self):
        target = 3.15e8
        nxt = flask("next", 4.0)
        src = self.source(xv=2 * target * 4.0 / 1.0, v=1.0)
        out = execute_passaging(src, nxt, target)
        assert out.xv == pytest.approx(target)
        # only half of the source volume was needed
        assert out.c_titer == pytest.approx(src.c_titer * 0.5 / 4.0)

    def test_volume_weighted_glucose_mixture(self):
        # suspension at 5 mmol/L glucose, medium at 30, half-half mixture:
        # xv = 2*target makes the required suspension exactly V_next/2
        target = 3.15e8
        nxt = flask("next", 2.0, medium_c_glc=30.0)
        src = self.source(xv=2 * target, v=1.0)
        out = execute_passaging(src, nxt, target)
        assert out.v == 2.0
        assert out.xv == pytest.approx(target)
        assert out.c_glc == pytest.approx(17.5)

    def test_under_seeding_recorded_not_error(self):
        target = 3.15e8
        nxt = flask("next", 10.0)
        src = self.source(xv=1e9, v=1.0)  # needs 3.15 L of suspension, has 1
        out = execute_passaging(src, nxt, target)
        assert out.xv == pytest.approx(1e9 * 1.0 / 10.0)
        assert out.xv < target

    def test_medium_carries_no_cells_or_metabolites(self):
        target = 3.15e8
        nxt = flask("next", 4.0, medium_c_glc=35.0, medium_c_gln=4.0)
        src = self.source(xv=4 * target * 4.0, v=1.0)
        out = execute_passaging(src, nxt, target)
        keep = (target * 4.0 / src.xv) / 4.0
        assert out.c_lac == pytest.approx(src.c_lac * keep)
        assert out.c_amm == pytest.approx(src.c_amm * keep)
        assert out.xt == pytest.approx(src.xt * keep)

    def test_cell_mass_balance(self, rng):
        target = 3.15e8
        for _ in range(100):
            v_next = float(rng.uniform(0.5, 20.0))
            nxt = flask("next", v_next)
            src = self.source(xv=float(rng.uniform(5e8, 8e9)),
                              v=float(rng.uniform(0.05, 5.0)))
            out = execute_passaging(src, nxt, target)
            assert out.xv * out.v <= src.xv * src.v * (1 + 1e-9)


class TestSimulateSeedTrain:
    def test_reference_duration_is_structural(self, default_params):
        cfg = train_config(REFERENCE_VOLUMES, n_mc=16,
                           passaging_mode="fixed", fixed_interval=72.0)
        res = simulate_seed_train(None, cfg, default_params)
        assert res.objectives.duration == 576.0
        assert len(res.protocol) == 8
        assert res.protocol[-1].time == 576.0

    def test_duration_is_sum_of_passaging_times(self, default_params):
        cfg = train_config((0.015, 0.114, 0.431, 2.026, 7.97), n_mc=32)
        res = simulate_seed_train(None, cfg, default_params)
        gaps = np.diff([0.0] + [e.time for e in res.protocol])
        assert res.objectives.duration == pytest.approx(sum(gaps))
        assert all(48.0 <= g <= 120.0 for g in gaps)

    def test_zero_uncertainty_deviation_is_all_or_nothing(self, default_params):
        cfg = train_config(REFERENCE_VOLUMES, n_mc=8,
                           passaging_mode="fixed", fixed_interval=72.0)
        cfg.uncertainty = UncertaintySpec(mu_max_rel_sd=0.0, initial_vcd_rel_sd=0.0,
                                          rng_seed=1)
        res = simulate_seed_train(None, cfg, default_params)
        assert res.objectives.deviation_rate in (0.0, 100.0)

    def test_deviation_counts_flagged_samples_exactly(self, default_params):
        cfg = train_config(REFERENCE_VOLUMES, n_mc=64,
                           passaging_mode="fixed", fixed_interval=72.0)
        res = simulate_seed_train(None, cfg, default_params)
        expected = 100.0 * res.mc_violation_flags.mean()
        assert res.objectives.deviation_rate == pytest.approx(expected)

    def test_deviation_stable_under_doubled_sample_count(self, default_params):
        # doubling n_mc on the same seed stream moves D within a binomial
        # 99% confidence interval
        volumes = (0.015, 0.114, 0.431, 2.026, 7.97)
        d_small = simulate_seed_train(
            None, train_config(volumes, n_mc=500, seed=3), default_params
        ).objectives.deviation_rate
        d_large = simulate_seed_train(
            None, train_config(volumes, n_mc=1000, seed=3), default_params
        ).objectives.deviation_rate
        p = (5 * d_small + 10 * d_large) / 15 / 100.0
        sd_diff = 100.0 * np.sqrt(p * (1 - p) * (1 / 500 + 1 / 1000))
        assert abs(d_large - d_small) <= 2.58 * sd_diff + 1e-9

    def test_reproducibility_bit_identical(self, default_params):
        runs = [
            simulate_seed_train(None, train_config((0.015, 0.1, 0.4, 2.0, 7.0),
                                                    n_mc=32, seed=11),
                                default_params)
            for _ in range(2)
        ]
        a, b = runs
        assert a.objectives == b.objectives
        assert np.array_equal(a.mc_violation_flags, b.mc_violation_flags)
        for name in a.bands:
            assert np.array_equal(a.bands[name].mean, b.bands[name].mean)
            assert np.array_equal(a.bands[name].q05, b.bands[name].q05)

    def test_band_quantiles_ordered(self, default_params):
        cfg = train_config((0.015, 0.1, 0.4, 2.0, 7.0), n_mc=32)
        res = simulate_seed_train(None, cfg, default_params)
        for band in res.bands.values():
            assert np.all(band.q05 <= band.q95 + 1e-12)

    def test_zero_uncertainty_bands_collapse(self, default_params):
        cfg = train_config((0.015, 0.1, 0.4, 2.0, 7.0), n_mc=4)
        cfg.uncertainty = UncertaintySpec(0.0, 0.0, rng_seed=0)
        res = simulate_seed_train(None, cfg, default_params)
        for band in res.bands.values():
            assert np.array_equal(band.q05, band.q95)
            assert np.allclose(band.mean, band.q05)

    def test_threshold_unreachable_yields_penalty(self, default_params):
        # a 100x volume jump cannot be bridged within the passaging window
        scales = [
            flask("tiny", 0.015, lo=0.014, hi=0.016),
            flask("huge", 1.5),
            ScaleConfig(name="production", filling_volume=9600.0,
                        working_volume_range=(9000.0, 10000.0), vessel="production"),
        ]
        cfg = SeedTrainConfig(scales=scales, initial_state=thaw_state(),
                              uncertainty=UncertaintySpec(rng_seed=3), n_mc=16)
        res = simulate_seed_train(None, cfg, default_params)
        assert res.failure == "tiny"
        assert res.objectives.deviation_rate == 100.0
        assert res.objectives.duration == 120.0 * len(scales) * 2
        assert res.objectives == penalty_objectives(cfg, False)
        assert np.all(res.mc_violation_flags)

    def test_four_objective_mode_reports_production(self, default_params):
        cfg = train_config((0.015, 0.114, 0.431, 2.026, 7.97), n_mc=16)
        res = simulate_seed_train(None, cfg, default_params, objectives="four")
        assert res.objectives.titer_end is not None
        assert res.objectives.titer_end > 0
        assert 0.0 <= res.objectives.viability_end <= 100.0
        arr = res.objectives.as_array(four_objectives=True)
        assert arr.shape == (4,)

    def test_two_objective_mode_has_no_production_values(self, default_params):
        cfg = train_config((0.015, 0.114, 0.431, 2.026, 7.97), n_mc=8)
        res = simulate_seed_train(None, cfg, default_params)
        assert res.objectives.titer_end is None
        with pytest.raises(ValueError):
            res.objectives.as_array(four_objectives=True)

    def test_explicit_volumes_override_scales(self, default_params):
        cfg = train_config(REFERENCE_VOLUMES, n_mc=8)
        x = np.array([0.015, 0.1, 0.5, 2.5, 7.0])
        res = simulate_seed_train(x, cfg, default_params)
        assert res.objectives.duration > 0

    def test_volume_validation(self, default_params):
        cfg = train_config(REFERENCE_VOLUMES, n_mc=8)
        with pytest.raises(ValueError):
            simulate_seed_train(np.array([0.015, 0.1]), cfg, default_params)
        with pytest.raises(ValueError):
            simulate_seed_train(np.array([0.015, 0.1, 0.5, 2.5, 100.0]),
                                cfg, default_params)

    def test_protocol_volume_bookkeeping(self, default_params):
        cfg = train_config((0.015, 0.1, 0.4, 2.0, 7.0), n_mc=16)
        res = simulate_seed_train(None, cfg, default_params)
        volumes = [s.filling_volume for s in cfg.scales]
        for event in res.protocol:
            next_volume = volumes[event.scale_index + 1]
            assert event.suspension_volume_used + event.medium_volume_added == \
                pytest.approx(next_volume)
            assert event.suspension_volume_used + event.suspension_discarded <= \
                volumes[event.scale_index] + 1e-9

    def test_per_event_counting_mode(self, default_params):
        kwargs = dict(n_mc=32, passaging_mode="fixed", fixed_interval=72.0)
        cfg_traj = train_config(REFERENCE_VOLUMES, **kwargs)
        cfg_event = train_config(REFERENCE_VOLUMES, **kwargs,
                                 violation_counting="per-event")
        d_traj = simulate_seed_train(None, cfg_traj, default_params).objectives
        d_event = simulate_seed_train(None, cfg_event, default_params).objectives
        # per-event normalizes by all checks, so it can only be lower
        assert d_event.deviation_rate <= d_traj.deviation_rate


class TestConfigValidation:
    def test_production_must_be_last(self):
        scales = build_scales(REFERENCE_VOLUMES)
        scales[-1], scales[-2] = scales[-2], scales[-1]
        cfg = SeedTrainConfig(scales=scales, initial_state=thaw_state())
        with pytest.raises(ValueError):
            cfg.validate()

    def test_target_inside_seeding_range(self):
        cfg = train_config(REFERENCE_VOLUMES)
        cfg.target_seeding_vcd = 9e8
        with pytest.raises(ValueError):
            cfg.validate()

    def test_n_mc_minimum(self):
        cfg = train_config(REFERENCE_VOLUMES)
        cfg.n_mc = 1
        with pytest.raises(ValueError):
            cfg.validate()

    def test_working_range_contains_target(self):
        with pytest.raises(ValueError):
            ScaleConfig(name="bad", filling_volume=5.0,
                        working_volume_range=(1.0, 4.0)).validate()
