import math

import numpy as np
import pytest

from tripletsim.analysis import (
    BinningConfig,
    Coincidence2DHistogram,
    PeakLocation,
    accidental_mean,
    analyze_stream,
    build_threefold_histogram,
    car,
    locate_central_peak,
    merge_bins,
    noise_tail_probability,
    occupancy_histogram,
    poisson_fit,
    snr,
    success_probability_estimate,
)
from tripletsim.errors import InsufficientStatisticsError, PeakNotFoundError
from tripletsim.pairstats import poisson_pair_probability
from tripletsim.simulate import TimeTagStream, expected_rates, simulate_run
from conftest import boosted_config

TICK = 82.3125e-12

# small geometry for oracle tests: merged bin = 4 ticks, pulse period = 3 merged bins
SMALL = BinningConfig(
    base_bin_s=TICK, merge_factor=4, window_half_span_s=3e-9, rep_period_s=TICK * 12
)


def stream_from_ticks(ch1=(), ch2=(), ch3=(), resolution=TICK):
    channels = np.concatenate(
        [np.full(len(c), k, dtype=np.uint8) for k, c in ((1, ch1), (2, ch2), (3, ch3))]
    )
    ticks = np.concatenate(
        [np.asarray(c, dtype=np.int64) for c in (ch1, ch2, ch3)]
    )
    order = np.lexsort((channels, ticks))
    return TimeTagStream(resolution, channels[order], ticks[order])


def random_stream(rng, n_events, span_ticks):
    channels = rng.integers(1, 4, n_events).astype(np.uint8)
    ticks = np.sort(rng.integers(0, span_ticks, n_events)).astype(np.int64)
    return TimeTagStream(TICK, channels, ticks)


def brute_force_histogram(stream, cfg):
    """Independent oracle: full pairwise masks and dict accumulation."""
    f = cfg.merge_factor
    w = cfg.n_half_merged * f + (f // 2) - 1 if f > 1 else cfg.n_half_merged
    t1 = stream.channel_ticks(1)
    t2 = stream.channel_ticks(2)
    t3 = stream.channel_ticks(3)
    counts = {}
    for t0 in t2:
        d1 = t1 - t0
        d1 = d1[np.abs(d1) <= w]
        d3 = t3 - t0
        d3 = d3[np.abs(d3) <= w]
        for a in d1:
            for b in d3:
                key = (int(a), int(b))
                counts[key] = counts.get(key, 0) + 1
    return counts


def as_dict(h):
    return {(int(i), int(j)): int(v) for i, j, v in zip(h.i_idx, h.j_idx, h.values)}


class TestBinningConfig:
    def test_defaults(self):
        cfg = BinningConfig()
        assert cfg.merged_bin_s == pytest.approx(1.317e-9, rel=1e-12)
        assert cfg.n_half_merged == 228
        assert cfg.rep_period_bins == 76
        assert cfg.n_bins_total == 457 * 457 == 208849

    def test_bad_merge_factor(self):
        with pytest.raises(ValueError):
            BinningConfig(merge_factor=0)

    def test_rep_period_must_sit_on_grid(self):
        with pytest.raises(ValueError, match="integer number of merged bins"):
            BinningConfig(base_bin_s=TICK, merge_factor=4, rep_period_s=1e-9)


class TestHistogramOracle:
    def test_matches_brute_force_on_random_streams(self):
        rng = np.random.default_rng(987)
        for trial in range(20):
            n = int(rng.integers(10, 1001))
            stream = random_stream(rng, n, 2000)
            h = build_threefold_histogram(stream, SMALL)
            assert as_dict(h) == brute_force_histogram(stream, SMALL), trial

    def test_single_triple_at_zero_delay(self):
        stream = stream_from_ticks(ch1=[100], ch2=[100], ch3=[100])
        h = build_threefold_histogram(stream, SMALL)
        assert as_dict(h) == {(0, 0): 1}
        assert h.total_reference_events == 1

    def test_reference_only_stream_is_empty(self):
        stream = stream_from_ticks(ch2=[5, 10, 20])
        h = build_threefold_histogram(stream, SMALL)
        assert h.total_counts == 0
        assert h.total_reference_events == 3

    def test_unsorted_stream_rejected(self):
        broken = TimeTagStream.__new__(TimeTagStream)
        object.__setattr__(broken, "resolution_s", TICK)
        object.__setattr__(broken, "channels", np.array([1, 2, 3], dtype=np.uint8))
        object.__setattr__(broken, "timestamps", np.array([300, 100, 200], dtype=np.int64))
        with pytest.raises(ValueError, match="sorted"):
            build_threefold_histogram(broken, SMALL)

    def test_resolution_mismatch_rejected(self):
        stream = stream_from_ticks(ch1=[1], ch2=[1], ch3=[1], resolution=1e-12)
        with pytest.raises(ValueError, match="resolution"):
            build_threefold_histogram(stream, SMALL)

    def test_shards_add_to_full(self):
        rng = np.random.default_rng(55)
        stream = random_stream(rng, 600, 1500)
        h = build_threefold_histogram(stream, SMALL)
        n2 = len(stream.channel_ticks(2))
        parts = [
            build_threefold_histogram(stream, SMALL, ref_range=(0, n2 // 3)),
            build_threefold_histogram(stream, SMALL, ref_range=(n2 // 3, n2)),
        ]
        combined = parts[0].add(parts[1])
        assert as_dict(combined) == as_dict(h)
        assert combined.total_reference_events == h.total_reference_events


class TestMergeBins:
    def test_identity(self):
        rng = np.random.default_rng(1)
        h = build_threefold_histogram(random_stream(rng, 400, 1000), SMALL)
        m = merge_bins(h, 1)
        assert as_dict(m) == as_dict(h)

    def test_sixteen_fold_width(self):
        cfg = BinningConfig()
        stream = stream_from_ticks(ch1=[1000], ch2=[1000], ch3=[1000])
        h = build_threefold_histogram(stream, cfg)
        m = merge_bins(h, 16)
        assert m.bin_width_s == pytest.approx(1.317e-9, rel=1e-12)
        assert m.n_half == 228

    @pytest.mark.parametrize("factor", list(range(1, 33)))
    def test_count_conservation(self, factor):
        rng = np.random.default_rng(factor)
        h = build_threefold_histogram(random_stream(rng, 500, 1200), SMALL)
        m = merge_bins(h, factor)
        assert m.total_counts == h.total_counts

    def test_bad_factor(self):
        rng = np.random.default_rng(2)
        h = build_threefold_histogram(random_stream(rng, 50, 500), SMALL)
        with pytest.raises(ValueError):
            merge_bins(h, 0)

    def test_block_alignment_keeps_center(self):
        # a fine count at tick d lands in merged bin round(d / factor)
        stream = stream_from_ticks(ch1=[107], ch2=[100], ch3=[93])
        h = build_threefold_histogram(stream, SMALL)
        m = merge_bins(h, 4)
        assert as_dict(m) == {(2, -2): 1}


class TestCentralPeak:
    def test_single_nonzero_bin(self):
        h = Coincidence2DHistogram.from_entries(TICK, 10, [3], [-2], 1)
        peak = locate_central_peak(h, search_radius=3)
        assert (peak.i, peak.j, peak.count) == (3, -2, 1)

    def test_tie_breaks_toward_small_delay_then_lexicographic(self):
        h = Coincidence2DHistogram.from_entries(
            TICK, 10, [2, -1, 1], [2, 0, 0], 1
        )
        peak = locate_central_peak(h, search_radius=3)
        assert (peak.i, peak.j) == (-1, 0)

    def test_all_zero_region(self):
        h = Coincidence2DHistogram.from_entries(TICK, 10, [9], [9], 1)
        with pytest.raises(PeakNotFoundError):
            locate_central_peak(h, search_radius=3)

    def test_simulated_peak_near_configured_offset(self):
        cfg = boosted_config(3_000_000, seed=9, jitter_s=150e-12)
        stream = simulate_run(cfg)
        fine = build_threefold_histogram(stream, BinningConfig())
        merged = merge_bins(fine, 16)
        peak = locate_central_peak(merged)
        merged_w = 16 * TICK
        assert abs(peak.delay_i_s - cfg.peak_offset_s) <= merged_w
        assert abs(peak.delay_j_s - cfg.peak_offset_s) <= merged_w


def lattice_histogram(cfg, peak_count, lattice_value, n_half=None):
    """Merged-grid histogram with a peak at zero and uniform neighbor bins."""
    n_half = cfg.n_half_merged if n_half is None else n_half
    r = cfg.rep_period_bins
    i_idx, j_idx, values = [0], [0], [peak_count]
    kmax = n_half // r
    for a in range(-kmax, kmax + 1):
        for b in range(-kmax, kmax + 1):
            if (a, b) != (0, 0):
                i_idx.append(a * r)
                j_idx.append(b * r)
                values.append(lattice_value)
    return Coincidence2DHistogram(cfg.merged_bin_s, n_half, i_idx, j_idx, values, 1)


class TestAccidentals:
    def test_default_lattice_has_48_bins(self):
        # +/- 3 pulse periods fit on each axis of the default grid
        cfg = BinningConfig()
        h = Coincidence2DHistogram.from_entries(cfg.merged_bin_s, cfg.n_half_merged, [0], [0], 1)
        peak = PeakLocation(0, 0, 1, 0.0, 0.0)
        est = accidental_mean(h, peak, cfg)
        assert est.n_bins == 48
        assert est.mean == 0.0

    def test_uniform_lattice_value(self):
        cfg = BinningConfig()
        h = lattice_histogram(cfg, peak_count=40, lattice_value=7)
        peak = locate_central_peak(h)
        est = accidental_mean(h, peak, cfg)
        assert est.mean == 7.0
        assert est.n_bins == 48

    def test_insufficient_bins(self):
        cfg = BinningConfig(window_half_span_s=100e-9)  # only one pulse period fits
        h = Coincidence2DHistogram.from_entries(cfg.merged_bin_s, cfg.n_half_merged, [0], [0], 1)
        peak = PeakLocation(0, 0, 1, 0.0, 0.0)
        est = accidental_mean(h, peak, cfg)
        assert est.n_bins == 8
        with pytest.raises(InsufficientStatisticsError):
            accidental_mean(h, peak, cfg, min_bins=20)


class TestCar:
    def test_reference_values(self):
        est = car(33, 3.51, n_accidental_bins=41)
        assert est.value == pytest.approx(9.4, abs=0.05)
        # CAR * sqrt(1/33 + 1/(41 * 3.51)), frozen from direct evaluation
        assert est.error == pytest.approx(1.8147, abs=1e-3)
        assert abs(est.error - 1.9) <= 0.2 * 1.9

    def test_unity(self):
        assert car(7, 7.0).value == pytest.approx(1.0)

    def test_zero_central(self):
        est = car(0, 2.0)
        assert est.value == 0.0
        assert est.error == 0.0

    def test_zero_accidentals_lower_bound(self):
        est = car(10, 0.0, n_accidental_bins=48)
        assert est.is_lower_bound
        assert est.value == 480.0


class TestOccupancy:
    def test_empty_histogram(self):
        cfg = BinningConfig()
        h = Coincidence2DHistogram.from_entries(cfg.merged_bin_s, cfg.n_half_merged, [], [], 0)
        occ = occupancy_histogram(h)
        assert occ == {0: cfg.n_bins_total}

    def test_single_triple(self):
        cfg = BinningConfig()
        h = Coincidence2DHistogram.from_entries(cfg.merged_bin_s, cfg.n_half_merged, [0], [0], 1)
        occ = occupancy_histogram(h)
        assert occ == {0: cfg.n_bins_total - 1, 1: 1}


class TestPoissonFit:
    def test_synthetic_noise_floor(self):
        rng = np.random.default_rng(4242)
        n_bins = 208849
        mean = 0.048
        for _ in range(3):
            sample = rng.poisson(mean, n_bins)
            values, freqs = np.unique(sample, return_counts=True)
            occ = dict(zip(values.tolist(), freqs.tolist()))
            fit = poisson_fit(occ)
            se = math.sqrt(mean / n_bins)
            assert abs(fit.mean - mean) < 3 * se

    def test_all_zero(self):
        fit = poisson_fit({0: 100})
        assert fit.mean == 0.0

    def test_outlier_excluded(self):
        n = 208849
        fit = poisson_fit({0: n - 1, 33: 1})
        assert fit.mean == pytest.approx(0.0, abs=1e-9)
        assert 33 in fit.excluded_counts

    def test_empty_rejected(self):
        from tripletsim.errors import FitError

        with pytest.raises(FitError):
            poisson_fit({})
        with pytest.raises(FitError):
            poisson_fit({3: 0})


class TestScalarStatistics:
    def test_noise_tail_reference(self):
        p = noise_tail_probability(0.048, 33)
        assert 3.3e-81 / 2 < p < 3.3e-81 * 2

    def test_noise_tail_trivial(self):
        assert noise_tail_probability(0.7, 0) == pytest.approx(math.exp(-0.7), rel=1e-12)
        assert noise_tail_probability(1.0, 1) == pytest.approx(math.exp(-1.0), rel=1e-12)

    @pytest.mark.parametrize("mean", [0.0, 0.048, 0.5, 3.0])
    @pytest.mark.parametrize("n", [0, 1, 5, 21, 33, 50])
    def test_pmf_consistency_with_pair_statistics(self, mean, n):
        a = noise_tail_probability(mean, n)
        b = poisson_pair_probability(mean, n)
        if b > 0:
            assert abs(a - b) / b < 1e-12
        else:
            assert a == b

    def test_snr_reference(self):
        assert snr(33, 0.048) == pytest.approx(687.5, rel=1e-12)
        assert snr(33, 0.048) > 680

    def test_snr_trivial(self):
        assert snr(5, 5.0) == 1.0
        assert snr(0, 0.3) == 0.0

    def test_snr_zero_noise(self):
        assert snr(10, 0.0, n_bins=208849) == 10 * 208849
        with pytest.raises(ValueError):
            snr(10, 0.0)

    def test_success_probability(self):
        n_pulses = int(11.5 * 3600 * 10e6)
        est = success_probability_estimate(33, n_pulses)
        assert est.value == pytest.approx(7.971e-11, rel=1e-3)
        assert est.error == pytest.approx(math.sqrt(33) / n_pulses, rel=1e-12)
        assert success_probability_estimate(0, 100).value == 0.0
        assert success_probability_estimate(100, 100).value == 1.0


class TestAnalyzeStream:
    def test_empty_stream_report(self):
        stream = TimeTagStream(TICK, np.empty(0, np.uint8), np.empty(0, np.int64))
        report = analyze_stream(stream, BinningConfig())
        assert report.central_count == 0
        assert report.car_is_lower_bound
        assert report.success_probability == 0.0
        assert report.occupancy == {0: 208849}

    def test_closed_loop_three_configs(self):
        # simulated success probability against the analytic central-count
        # expectation, three configs with >= 100 expected triples
        bincfg = BinningConfig()
        cases = [
            boosted_config(10_000_000, seed=111),
            boosted_config(20_000_000, seed=222, jitter_s=150e-12),
            boosted_config(10_000_000, seed=333, pdc2=0.5),
        ]
        for cfg in cases:
            stream = simulate_run(cfg, n_threads=2)
            rates = expected_rates(cfg, merged_bin_s=bincfg.merged_bin_s)
            assert rates.expected_central_count >= 100
            report = analyze_stream(stream, bincfg, n_pulses=cfg.n_pulses)
            expected_p = rates.expected_central_count / cfg.n_pulses
            sigma_p = math.sqrt(rates.expected_central_count) / cfg.n_pulses
            assert abs(report.success_probability - expected_p) < 4 * sigma_p

    def test_closed_loop_with_leakage(self):
        # parasitic photons on the secondary arms land in the central bin at
        # the pulse times; the expectation must carry their cross terms
        from conftest import ARM_TRANSMISSION, baseline_source, make_arms
        from tripletsim.simulate import SimConfig

        bincfg = BinningConfig()
        cfg = SimConfig(
            source=baseline_source(pdc2=2.7e-1),
            arms=make_arms(jitter=(30e-12,) * 3, leakage=(0.0, 0.2, 0.2)),
            n_pulses=20_000_000,
            rng_seed=41,
        )
        stream = simulate_run(cfg, n_threads=2)
        rates = expected_rates(cfg, merged_bin_s=bincfg.merged_bin_s)
        report = analyze_stream(stream, bincfg, n_pulses=cfg.n_pulses)
        sigma = math.sqrt(rates.expected_central_count)
        assert abs(report.central_count - rates.expected_central_count) < 4 * sigma
        # the leakage terms are a ~30% effect here, so dropping them would
        # miss by far more than the 4 sigma band
        no_leak = SimConfig(
            source=cfg.source,
            arms=make_arms(jitter=(30e-12,) * 3),
            n_pulses=cfg.n_pulses,
            rng_seed=cfg.rng_seed,
        )
        bare = expected_rates(no_leak, merged_bin_s=bincfg.merged_bin_s)
        assert rates.expected_central_count > bare.expected_central_count + 8 * sigma

    def test_closed_loop_with_pileup_collapse(self):
        # dead time below the pulse period collapses same-pulse multiplicity;
        # at mean pairs ~0.5 the collapsed and product expectations differ by
        # many sigma, so this pins the collapse branch
        from conftest import baseline_source, make_arms
        from tripletsim.simulate import SimConfig

        bincfg = BinningConfig()
        cfg = SimConfig(
            source=baseline_source(pdc2=2.7e-1, pump_w=50e-6),
            arms=make_arms(jitter=(30e-12,) * 3, dead_times=(5e-9,) * 3),
            n_pulses=20_000_000,
            rng_seed=51,
        )
        stream = simulate_run(cfg, n_threads=2)
        rates = expected_rates(cfg, merged_bin_s=bincfg.merged_bin_s)
        report = analyze_stream(stream, bincfg, n_pulses=cfg.n_pulses)
        sigma = math.sqrt(rates.expected_central_count)
        assert abs(report.central_count - rates.expected_central_count) < 4 * sigma

    def test_car_decreases_with_mean_pair_number(self):
        # higher-order emission grows accidentals faster than the peak
        from tripletsim.pairstats import SourceParams
        from tripletsim.simulate import SimConfig
        from conftest import make_arms

        bincfg = BinningConfig()
        cars = []
        for mu_target in (0.05, 1.0):
            pump = 10e-6 * mu_target / 0.10846507556427523
            cfg = SimConfig(
                source=SourceParams(pump, 532e-9, 10e6, 0.5, 8.1e-8, 0.3),
                arms=make_arms(jitter=(150e-12,) * 3, dark_rates=(100.0,) * 3),
                n_pulses=2_000_000,
                rng_seed=4,
            )
            stream = simulate_run(cfg, n_threads=2)
            report = analyze_stream(stream, bincfg, n_pulses=cfg.n_pulses)
            cars.append(report.car)
        assert cars[0] > cars[1]
