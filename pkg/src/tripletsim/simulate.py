"""Pulse-by-pulse stochastic simulation of the cascaded source and detectors.

Each pump pulse draws a Poissonian number of primary pairs.  A pair's idler
photon heads to channel 1; its signal photon converts in the second stage
with the stage-2 pair efficiency, feeding channels 2 and 3.  Channel tags
acquire the fixed electronic delay of their arm plus Gaussian detector
jitter, dark counts arrive homogeneously over the run, parasitic leakage
photons land on the secondary channels at the pulse times, and each channel
enforces a non-paralyzable dead time.  Output is an ordered stream of
(channel, tick) records, bit-reproducible for a fixed seed independent of
the worker count.
"""

from __future__ import annotations

import math
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .constants import DEFAULT_TICK_S
from .pairstats import ArmEfficiencies, SourceParams, mean_pairs_from_pump, triplet_success_probability

__all__ = [
    "Arm",
    "CHANNEL_I1",
    "CHANNEL_I2",
    "CHANNEL_S2",
    "ChannelModel",
    "DetectorModel",
    "ExpectedRates",
    "MOSI_SNSPD",
    "SimConfig",
    "TimeTagStream",
    "expected_rates",
    "simulate_run",
]

CHANNEL_I1 = 1
CHANNEL_S2 = 2
CHANNEL_I2 = 3

# Pulses per RNG block; parallel workers and the serial path draw identical
# per-block streams, so results do not depend on the thread count.
BLOCK_PULSES = 1 << 17


@dataclass(frozen=True)
class DetectorModel:
    """Binary click detector with dark counts, Gaussian jitter and dead time."""

    efficiency: float
    dark_rate_hz: float = 0.0
    jitter_sigma_s: float = 0.0
    dead_time_s: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError(f"efficiency must lie in [0, 1], got {self.efficiency}")
        for name in ("dark_rate_hz", "jitter_sigma_s", "dead_time_s"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


# Next-generation nanowire detector preset: ~87% efficiency with ~75 ns
# recovery, the upgrade path that bounds usable pump repetition rates.
MOSI_SNSPD = DetectorModel(
    efficiency=0.87, dark_rate_hz=100.0, jitter_sigma_s=50e-12, dead_time_s=75e-9
)


@dataclass(frozen=True)
class ChannelModel:
    """Optical path in front of a detector.

    leakage_rate_per_pulse is the mean number of parasitic primary-stage
    photons entering the arm per pump pulse (higher-order idler photons that
    survive demultiplexing, broadband parasitic down-conversion, ...); they
    are detected like signal photons.
    """

    transmission: float = 1.0
    leakage_rate_per_pulse: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.transmission <= 1.0:
            raise ValueError(f"transmission must lie in [0, 1], got {self.transmission}")
        if self.leakage_rate_per_pulse < 0:
            raise ValueError("leakage_rate_per_pulse must be >= 0")


@dataclass(frozen=True)
class Arm:
    channel: ChannelModel
    detector: DetectorModel

    @property
    def detection_prob(self) -> float:
        return self.channel.transmission * self.detector.efficiency


@dataclass(frozen=True)
class TimeTagStream:
    """Ordered (channel, timestamp) records at a fixed tick resolution."""

    resolution_s: float
    channels: np.ndarray  # uint8, values 1..3
    timestamps: np.ndarray  # int64 ticks, non-decreasing

    def __post_init__(self):
        if self.resolution_s <= 0:
            raise ValueError("resolution_s must be > 0")
        if self.channels.shape != self.timestamps.shape:
            raise ValueError("channels and timestamps must have equal length")
        if len(self.timestamps) and np.any(np.diff(self.timestamps) < 0):
            raise ValueError("timestamps must be non-decreasing")

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def n_records(self) -> int:
        return len(self.timestamps)

    def channel_ticks(self, channel: int) -> np.ndarray:
        """Sorted timestamps (ticks) of one channel."""
        return self.timestamps[self.channels == channel]


@dataclass(frozen=True)
class SimConfig:
    """Full description of one simulated acquisition run."""

    source: SourceParams
    arms: tuple[Arm, Arm, Arm]  # (i1, s2, i2)
    rep_period_s: float = 100e-9
    n_pulses: int = 1
    peak_offset_s: float = -0.165e-9
    rng_seed: int = 0
    resolution_s: float = DEFAULT_TICK_S

    def __post_init__(self):
        if self.n_pulses <= 0:
            raise ValueError("n_pulses must be > 0")
        if self.rep_period_s <= 0:
            raise ValueError("rep_period_s must be > 0")
        if self.resolution_s <= 0:
            raise ValueError("resolution_s must be > 0")
        if len(self.arms) != 3:
            raise ValueError("exactly three arms (i1, s2, i2) required")
        if self.arms[0].channel.leakage_rate_per_pulse != 0.0:
            raise ValueError("leakage feeds the secondary channels only; set arm i1 leakage to 0")
        if abs(self.rep_period_s * self.source.rep_rate_hz - 1.0) > 1e-6:
            raise ValueError(
                "rep_period_s must equal 1 / source.rep_rate_hz; "
                f"got {self.rep_period_s} vs {1.0 / self.source.rep_rate_hz}"
            )
        span_ticks = self.n_pulses * self.rep_period_s / self.resolution_s
        if span_ticks >= 2**62:
            raise ValueError("run span overflows the tick range; reduce n_pulses or coarsen ticks")

    @property
    def mean_pairs(self) -> float:
        """Mean primary pairs per pulse behind the injected pump."""
        return mean_pairs_from_pump(self.source, include_injection=True)

    def arm_efficiencies(self) -> ArmEfficiencies:
        return ArmEfficiencies(
            eta_i1=self.arms[0].detection_prob,
            eta_s2=self.arms[1].detection_prob,
            eta_i2=self.arms[2].detection_prob,
        )

    def with_seed(self, seed: int) -> "SimConfig":
        return replace(self, rng_seed=seed)


def _block_rng(seed: int, block_index: int) -> np.random.Generator:
    """Counter-based per-block stream: key = (run seed, block index)."""
    key = np.array([seed & (2**64 - 1), block_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _simulate_block(config: SimConfig, block_index: int, p_start: int, p_stop: int):
    """Raw (unsorted, pre-dead-time) tick arrays per channel for one pulse block.

    Draw order is fixed: pair numbers, channel-1 detections, conversions,
    channel-2/3 detections, leakage, per-channel jitter, then dark counts.
    """
    rng = _block_rng(config.rng_seed, block_index)
    n = p_stop - p_start
    rep = config.rep_period_s
    res = config.resolution_s
    mean_m = config.mean_pairs
    arm1, arm2, arm3 = config.arms

    m = rng.poisson(mean_m, n)
    n1 = rng.binomial(m, arm1.detection_prob) if arm1.detection_prob > 0 else np.zeros(n, np.int64)
    conv = rng.binomial(m, config.source.pdc2_efficiency)
    n2 = rng.binomial(conv, arm2.detection_prob) if arm2.detection_prob > 0 else np.zeros(n, np.int64)
    n3 = rng.binomial(conv, arm3.detection_prob) if arm3.detection_prob > 0 else np.zeros(n, np.int64)

    leak2 = arm2.channel.leakage_rate_per_pulse * arm2.detection_prob
    leak3 = arm3.channel.leakage_rate_per_pulse * arm3.detection_prob
    l2 = rng.poisson(leak2, n) if leak2 > 0 else np.zeros(n, np.int64)
    l3 = rng.poisson(leak3, n) if leak3 > 0 else np.zeros(n, np.int64)

    pulse_t = (np.arange(p_start, p_stop, dtype=np.float64)) * rep
    out = {}
    per_channel = (
        (CHANNEL_I1, n1, config.peak_offset_s, arm1.detector),
        (CHANNEL_S2, n2 + l2, 0.0, arm2.detector),
        (CHANNEL_I2, n3 + l3, config.peak_offset_s, arm3.detector),
    )
    for channel, counts, delay, det in per_channel:
        total = int(counts.sum())
        t = np.repeat(pulse_t, counts) + delay
        if det.jitter_sigma_s > 0 and total:
            t = t + rng.normal(0.0, det.jitter_sigma_s, total)
        ticks = np.rint(t / res).astype(np.int64)
        out[channel] = ticks[ticks >= 0]

    block_t0 = p_start * rep
    block_span = n * rep
    for channel, det in (
        (CHANNEL_I1, arm1.detector),
        (CHANNEL_S2, arm2.detector),
        (CHANNEL_I2, arm3.detector),
    ):
        if det.dark_rate_hz > 0:
            n_dark = rng.poisson(det.dark_rate_hz * block_span)
            if n_dark:
                t = block_t0 + rng.random(n_dark) * block_span
                ticks = np.rint(t / res).astype(np.int64)
                out[channel] = np.concatenate([out[channel], ticks])
    return out


def _apply_dead_time(ticks_sorted: np.ndarray, dead_ticks: int) -> np.ndarray:
    """Non-paralyzable dead time: greedy accept, skip tags inside the window."""
    if dead_ticks <= 0 or len(ticks_sorted) < 2:
        return ticks_sorted
    accepted = []
    i = 0
    n = len(ticks_sorted)
    while i < n:
        t = ticks_sorted[i]
        accepted.append(t)
        i = int(np.searchsorted(ticks_sorted, t + dead_ticks, side="left"))
    return np.asarray(accepted, dtype=np.int64)


def simulate_run(config: SimConfig, n_threads: int = 1, progress: bool = False) -> TimeTagStream:
    """Simulate the full run and return the merged, dead-time-filtered stream.

    Deterministic for a fixed rng_seed: pulse blocks use independent
    counter-based streams keyed by (seed, block), so serial and parallel
    execution produce identical output.
    """
    if config.mean_pairs > 10:
        warnings.warn(
            f"mean pair number {config.mean_pairs:.3g} per pulse is far outside the "
            "Poissonian pumping regime the source model assumes",
            stacklevel=2,
        )
    n_blocks = (config.n_pulses + BLOCK_PULSES - 1) // BLOCK_PULSES
    bounds = [
        (b, b * BLOCK_PULSES, min((b + 1) * BLOCK_PULSES, config.n_pulses))
        for b in range(n_blocks)
    ]

    if n_threads > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            results = list(
                pool.map(lambda a: _simulate_block(config, *a), bounds)
            )
    else:
        results = []
        report_every = max(1, n_blocks // 10)
        for b, p0, p1 in bounds:
            results.append(_simulate_block(config, b, p0, p1))
            if progress and (b + 1) % report_every == 0:
                print(f"simulate: {p1}/{config.n_pulses} pulses", file=sys.stderr)

    channels_out = []
    ticks_out = []
    for channel, arm in zip((CHANNEL_I1, CHANNEL_S2, CHANNEL_I2), config.arms):
        ticks = np.concatenate([r[channel] for r in results]) if results else np.empty(0, np.int64)
        ticks.sort(kind="stable")
        dead_ticks = math.ceil(arm.detector.dead_time_s / config.resolution_s - 1e-12)
        ticks = _apply_dead_time(ticks, dead_ticks)
        channels_out.append(np.full(len(ticks), channel, dtype=np.uint8))
        ticks_out.append(ticks)

    channels = np.concatenate(channels_out)
    ticks = np.concatenate(ticks_out)
    order = np.lexsort((channels, ticks))
    return TimeTagStream(
        resolution_s=config.resolution_s,
        channels=channels[order],
        timestamps=ticks[order],
    )


# ---------------------------------------------------------------------------
# Closed-form expectations (the simulator's statistical oracle)
# ---------------------------------------------------------------------------


def _poisson_pgf(mu: float, x: float) -> float:
    """E[x^m] for m ~ Poisson(mu)."""
    return math.exp(-mu * (1.0 - x))


@dataclass(frozen=True)
class ExpectedRates:
    """Analytic expectations for a SimConfig.

    triplet_probability_per_pulse is the separable cascade formula (one pair
    producing all three detections).  expected_central_count additionally
    includes same-pulse higher-order combinations and leakage, which the
    coincidence analyzer cannot distinguish from genuine triplets, and is the
    quantity to compare against the measured central-bin count.
    """

    mean_pairs: float
    singles_rates_hz: tuple[float, float, float]
    singles_counts: tuple[float, float, float]
    triplet_probability_per_pulse: float
    triplet_rate_hz: float
    expected_triplets: float
    expected_central_count: float | None = None


def _central_bin_containment(config: SimConfig, merged_bin_s: float) -> float:
    """Probability that both relative delays of a triplet land in the peak bin.

    The delays share the channel-2 jitter, so the pair (tau1 - tau2,
    tau3 - tau2) is a correlated bivariate normal centered on the arm delay.
    """
    s1 = config.arms[0].detector.jitter_sigma_s
    s2 = config.arms[1].detector.jitter_sigma_s
    s3 = config.arms[2].detector.jitter_sigma_s
    if s1 == s2 == s3 == 0.0:
        return 1.0
    from scipy.stats import multivariate_normal

    w = merged_bin_s
    off = config.peak_offset_s
    k = round(off / w)  # merged bin holding the peak
    lo, hi = (k - 0.5) * w - off, (k + 0.5) * w - off
    cov = np.array(
        [[s1**2 + s2**2, s2**2], [s2**2, s3**2 + s2**2]], dtype=float
    )
    cov += np.eye(2) * (1e-30 + 1e-12 * cov.max())
    mvn = multivariate_normal(mean=[0.0, 0.0], cov=cov)
    return float(
        mvn.cdf([hi, hi]) - mvn.cdf([lo, hi]) - mvn.cdf([hi, lo]) + mvn.cdf([lo, lo])
    )


def expected_rates(config: SimConfig, merged_bin_s: float | None = None) -> ExpectedRates:
    """Closed-form singles and triple-coincidence expectations for a config.

    With merged_bin_s given, expected_central_count predicts the central-bin
    count of the two-dimensional three-fold histogram, including same-pulse
    higher-order pair combinations and leakage.  Dark-count contributions to
    the central bin are not modelled; the prediction is accurate while the
    per-bin noise floor is negligible against the peak.  Dead-time corrections
    use the steady-state non-paralyzable form and same-pulse pile-up collapse,
    both documented approximations; with all dead times zero the formulas are
    exact.
    """
    mu = config.mean_pairs
    p2c = config.source.pdc2_efficiency
    arm1, arm2, arm3 = config.arms
    p1, p2, p3 = (a.detection_prob for a in config.arms)
    leak2 = arm2.channel.leakage_rate_per_pulse * p2
    leak3 = arm3.channel.leakage_rate_per_pulse * p3
    rep = config.rep_period_s
    span = config.n_pulses * rep

    photons_per_pulse = (mu * p1, mu * p2c * p2 + leak2, mu * p2c * p3 + leak3)
    dead = tuple(a.detector.dead_time_s for a in config.arms)
    darks = tuple(a.detector.dark_rate_hz for a in config.arms)

    rates = []
    for per_pulse, dark, tau in zip(photons_per_pulse, darks, dead):
        if tau > 0:
            # same-pulse pile-up collapses to one accepted click per pulse
            per_pulse_eff = -math.expm1(-per_pulse)
        else:
            per_pulse_eff = per_pulse
        rate = per_pulse_eff / rep + dark
        if tau >= rep:
            # dead window spans later pulses: steady-state non-paralyzable loss
            rate = rate / (1.0 + rate * tau)
        # for 0 < tau < rep only click-dark overlaps are lost, O(dark * tau)
        rates.append(rate)
    singles_rates = tuple(rates)
    singles_counts = tuple(r * span for r in singles_rates)

    p_triple = triplet_success_probability(config.source, config.arm_efficiencies())

    central = None
    if merged_bin_s is not None:
        if all(t == 0.0 for t in dead):
            # E[n1 n2 n3] per pulse with full multiplicities
            e_m2 = mu + mu**2
            e_m2m1 = mu**3 + 2 * mu**2
            photon_term = p1 * p2 * p3 * (p2c * e_m2 + p2c**2 * e_m2m1)
            leak_term = (
                leak3 * e_m2 * p1 * p2c * p2
                + leak2 * e_m2 * p1 * p2c * p3
                + mu * p1 * leak2 * leak3
            )
            per_pulse_central = photon_term + leak_term
        else:
            # E[1{n1>0} 1{n2>0} 1{n3>0}]: dead time collapses same-pulse tags
            q1 = 1.0 - p1
            q2 = 1.0 - p2c * p2
            q3 = 1.0 - p2c * p3
            q23 = 1.0 - p2c * (p2 + p3 - p2 * p3)
            c2 = math.exp(-leak2)
            c3 = math.exp(-leak3)
            per_pulse_central = (
                1.0
                - c2 * _poisson_pgf(mu, q2)
                - c3 * _poisson_pgf(mu, q3)
                + c2 * c3 * _poisson_pgf(mu, q23)
                - _poisson_pgf(mu, q1)
                + c2 * _poisson_pgf(mu, q1 * q2)
                + c3 * _poisson_pgf(mu, q1 * q3)
                - c2 * c3 * _poisson_pgf(mu, q1 * q23)
            )
            # cross-pulse blocking by earlier clicks on each channel
            for rate, tau in zip(singles_rates, dead):
                if tau >= rep:
                    per_pulse_central *= 1.0 / (1.0 + rate * tau)
        central = (
            per_pulse_central
            * config.n_pulses
            * _central_bin_containment(config, merged_bin_s)
        )

    return ExpectedRates(
        mean_pairs=mu,
        singles_rates_hz=singles_rates,
        singles_counts=singles_counts,
        triplet_probability_per_pulse=p_triple,
        triplet_rate_hz=p_triple * config.source.rep_rate_hz,
        expected_triplets=p_triple * config.n_pulses,
        expected_central_count=central,
    )
