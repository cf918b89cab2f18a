"""Three-fold coincidence analysis of time-tag streams.

Channel-2 detections (the rarest, so the cheapest reference) pseudo-herald
the other two channels: for every channel-2 tag, each channel-1 tag within
the window contributes a relative delay tau1 - tau2 and each channel-3 tag a
delay tau3 - tau2; every (channel-1, channel-3) pair increments exactly one
bin of a two-dimensional histogram.  Merging the tagger ticks sixteen-fold
absorbs the joint timing jitter.  The central bin holds the time-correlated
triples; bins displaced by multiples of the pulse period hold accidentals;
the occupancy statistics of all bins separate both from Poissonian noise.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .constants import DEFAULT_TICK_S
from .errors import InsufficientStatisticsError, PeakNotFoundError, FitError
from .pairstats import log_poisson_pmf
from .simulate import CHANNEL_I1, CHANNEL_I2, CHANNEL_S2, TimeTagStream

__all__ = [
    "AccidentalEstimate",
    "BinningConfig",
    "CarEstimate",
    "Coincidence2DHistogram",
    "PeakLocation",
    "PoissonFit",
    "RateEstimate",
    "TripletReport",
    "accidental_mean",
    "analyze_merged",
    "analyze_stream",
    "build_threefold_histogram",
    "car",
    "derive_n_pulses",
    "locate_central_peak",
    "merge_bins",
    "noise_tail_probability",
    "occupancy_histogram",
    "poisson_fit",
    "snr",
    "success_probability_estimate",
]


@dataclass(frozen=True)
class BinningConfig:
    """Geometry of the two-dimensional coincidence histogram."""

    base_bin_s: float = DEFAULT_TICK_S
    merge_factor: int = 16
    window_half_span_s: float = 300e-9
    rep_period_s: float = 100e-9

    def __post_init__(self):
        if self.merge_factor < 1:
            raise ValueError("merge_factor must be >= 1")
        if self.base_bin_s <= 0 or self.window_half_span_s <= 0 or self.rep_period_s <= 0:
            raise ValueError("all time scales must be > 0")
        r = self.rep_period_bins
        if r < 1:
            raise ValueError("rep_period_s must exceed one merged bin")
        drift = abs(r * self.merged_bin_s - self.rep_period_s) / self.rep_period_s
        if drift > 0.01:
            raise ValueError(
                f"rep_period_s is {drift:.1%} away from an integer number of merged bins"
            )
        if self.n_half_merged < 1:
            raise ValueError("window_half_span_s must cover at least one merged bin")

    @property
    def merged_bin_s(self) -> float:
        return self.base_bin_s * self.merge_factor

    @property
    def n_half_merged(self) -> int:
        """Merged bins on each side of zero delay (grid is 2n+1 per axis)."""
        return round(self.window_half_span_s / self.merged_bin_s)

    @property
    def rep_period_bins(self) -> int:
        return round(self.rep_period_s / self.merged_bin_s)

    @property
    def n_bins_total(self) -> int:
        n = 2 * self.n_half_merged + 1
        return n * n


class Coincidence2DHistogram:
    """Sparse 2-D histogram of (tau1 - tau2, tau3 - tau2) delays.

    Bin k covers delays [(k - 1/2) w, (k + 1/2) w) with w = bin_width_s, so
    bin 0 is centered on zero delay.  Counts are stored as deduplicated
    coordinate triples; the default merged grid (457 x 457) densifies to a
    couple of megabytes while the fine tick-resolution grid stays sparse.
    """

    def __init__(self, bin_width_s, n_half, i_idx, j_idx, values, total_reference_events):
        order = np.lexsort((j_idx, i_idx))
        self.bin_width_s = float(bin_width_s)
        self.n_half = int(n_half)
        self.i_idx = np.asarray(i_idx, dtype=np.int64)[order]
        self.j_idx = np.asarray(j_idx, dtype=np.int64)[order]
        self.values = np.asarray(values, dtype=np.int64)[order]
        self.total_reference_events = int(total_reference_events)
        if len(self.values) and (
            np.any(np.abs(self.i_idx) > self.n_half) or np.any(np.abs(self.j_idx) > self.n_half)
        ):
            raise ValueError("bin indices outside the histogram grid")
        if np.any(self.values < 0):
            raise ValueError("negative bin counts")

    @classmethod
    def from_entries(cls, bin_width_s, n_half, i_entries, j_entries, total_reference_events):
        """Accumulate raw per-pair bin indices into deduplicated counts."""
        i_entries = np.asarray(i_entries, dtype=np.int64)
        j_entries = np.asarray(j_entries, dtype=np.int64)
        if i_entries.size == 0:
            return cls(bin_width_s, n_half, [], [], [], total_reference_events)
        side = 2 * n_half + 1
        keys = (i_entries + n_half) * side + (j_entries + n_half)
        uniq, counts = np.unique(keys, return_counts=True)
        return cls(
            bin_width_s,
            n_half,
            uniq // side - n_half,
            uniq % side - n_half,
            counts,
            total_reference_events,
        )

    @property
    def n_axis_bins(self) -> int:
        return 2 * self.n_half + 1

    @property
    def n_bins_total(self) -> int:
        return self.n_axis_bins**2

    @property
    def total_counts(self) -> int:
        return int(self.values.sum())

    def count_at(self, i: int, j: int) -> int:
        side = self.n_axis_bins
        key = (i + self.n_half) * side + (j + self.n_half)
        keys = (self.i_idx + self.n_half) * side + (self.j_idx + self.n_half)
        pos = np.searchsorted(keys, key)
        if pos < len(keys) and keys[pos] == key:
            return int(self.values[pos])
        return 0

    def dense(self) -> np.ndarray:
        """Materialize the full count matrix (guarded against huge fine grids)."""
        if self.n_bins_total > 2**24:
            raise MemoryError(
                f"{self.n_axis_bins}^2 bins is too large to densify; merge first"
            )
        out = np.zeros((self.n_axis_bins, self.n_axis_bins), dtype=np.int64)
        out[self.i_idx + self.n_half, self.j_idx + self.n_half] = self.values
        return out

    def add(self, other: "Coincidence2DHistogram") -> "Coincidence2DHistogram":
        """Bin-wise sum; used to merge reference-event shards."""
        if other.n_half != self.n_half or other.bin_width_s != self.bin_width_s:
            raise ValueError("histograms have different geometry")
        return Coincidence2DHistogram.from_entries(
            self.bin_width_s,
            self.n_half,
            np.concatenate([np.repeat(self.i_idx, self.values), np.repeat(other.i_idx, other.values)]),
            np.concatenate([np.repeat(self.j_idx, self.values), np.repeat(other.j_idx, other.values)]),
            self.total_reference_events + other.total_reference_events,
        )


def _channel_arrays(stream: TimeTagStream):
    t = stream.timestamps
    if len(t) and np.any(np.diff(t) < 0):
        raise ValueError("stream must be sorted by timestamp")
    return (
        stream.channel_ticks(CHANNEL_I1),
        stream.channel_ticks(CHANNEL_S2),
        stream.channel_ticks(CHANNEL_I2),
    )


def build_threefold_histogram(
    stream: TimeTagStream,
    cfg: BinningConfig,
    ref_range: tuple[int, int] | None = None,
) -> Coincidence2DHistogram:
    """Fine (one bin per tick) 2-D histogram around the channel-2 references.

    Single streaming pass: two sliding windows over channels 1 and 3 advance
    monotonically with the reference tag, so the cost is O(N + pairs).
    ref_range restricts the pass to a slice of the channel-2 events; shards
    built this way add up to the full histogram exactly.
    """
    if abs(stream.resolution_s - cfg.base_bin_s) > 1e-4 * cfg.base_bin_s:
        raise ValueError(
            f"stream resolution {stream.resolution_s} does not match the analysis "
            f"base bin {cfg.base_bin_s}"
        )
    t1, t2, t3 = _channel_arrays(stream)
    f = cfg.merge_factor
    # symmetric fine window whose merged image stays inside the merged grid;
    # the negative edge bin gives up its single outermost tick for symmetry
    n_half_fine = cfg.n_half_merged * f + (f // 2) - 1 if f > 1 else cfg.n_half_merged
    w = n_half_fine

    lo, hi = (0, len(t2)) if ref_range is None else ref_range
    refs = t2[lo:hi]

    i_parts = []
    j_parts = []
    lo1 = hi1 = lo3 = hi3 = 0
    n1, n3 = len(t1), len(t3)
    for t0 in refs:
        tmin, tmax = t0 - w, t0 + w
        while lo1 < n1 and t1[lo1] < tmin:
            lo1 += 1
        if hi1 < lo1:
            hi1 = lo1
        while hi1 < n1 and t1[hi1] <= tmax:
            hi1 += 1
        while lo3 < n3 and t3[lo3] < tmin:
            lo3 += 1
        if hi3 < lo3:
            hi3 = lo3
        while hi3 < n3 and t3[hi3] <= tmax:
            hi3 += 1
        c1 = hi1 - lo1
        c3 = hi3 - lo3
        if c1 and c3:
            d1 = t1[lo1:hi1] - t0
            d3 = t3[lo3:hi3] - t0
            i_parts.append(np.repeat(d1, c3))
            j_parts.append(np.tile(d3, c1))

    i_all = np.concatenate(i_parts) if i_parts else np.empty(0, np.int64)
    j_all = np.concatenate(j_parts) if j_parts else np.empty(0, np.int64)
    return Coincidence2DHistogram.from_entries(
        cfg.base_bin_s, n_half_fine, i_all, j_all, total_reference_events=len(refs)
    )


def merge_bins(h: Coincidence2DHistogram, factor: int) -> Coincidence2DHistogram:
    """Block-sum the histogram so factor fine bins form one merged bin.

    Merged bin k collects the factor fine bins centered on k * factor, so the
    zero bin stays centered on zero delay.  The merged grid is extended to
    cover every fine bin, which conserves total counts exactly for any factor
    (ragged edges are padded with implicit zero bins).
    """
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if factor == 1:
        return Coincidence2DHistogram(
            h.bin_width_s, h.n_half, h.i_idx, h.j_idx, h.values, h.total_reference_events
        )
    half = factor // 2
    n_half_m = (h.n_half + half) // factor
    i_m = (h.i_idx + half) // factor
    j_m = (h.j_idx + half) // factor
    side = 2 * n_half_m + 1
    keys = (i_m + n_half_m) * side + (j_m + n_half_m)
    order = np.argsort(keys, kind="stable")
    keys = keys[order]
    vals = h.values[order]
    uniq, starts = np.unique(keys, return_index=True)
    sums = np.add.reduceat(vals, starts)
    return Coincidence2DHistogram(
        h.bin_width_s * factor,
        n_half_m,
        uniq // side - n_half_m,
        uniq % side - n_half_m,
        sums,
        h.total_reference_events,
    )


@dataclass(frozen=True)
class PeakLocation:
    i: int
    j: int
    count: int
    delay_i_s: float
    delay_j_s: float


def locate_central_peak(h: Coincidence2DHistogram, search_radius: int = 3) -> PeakLocation:
    """Highest bin inside the search square around zero delay.

    Ties resolve toward the smallest delay magnitude, then lexicographically.
    """
    r = search_radius
    mask = (np.abs(h.i_idx) <= r) & (np.abs(h.j_idx) <= r) & (h.values > 0)
    if not np.any(mask):
        raise PeakNotFoundError(
            f"no counts within {r} bins of zero delay"
        )
    cand = sorted(
        zip(h.values[mask], h.i_idx[mask], h.j_idx[mask]),
        key=lambda t: (-t[0], t[1] ** 2 + t[2] ** 2, (t[1], t[2])),
    )
    count, i, j = cand[0]
    return PeakLocation(
        i=int(i),
        j=int(j),
        count=int(count),
        delay_i_s=int(i) * h.bin_width_s,
        delay_j_s=int(j) * h.bin_width_s,
    )


@dataclass(frozen=True)
class AccidentalEstimate:
    mean: float
    counts: list[int]
    offsets: list[tuple[int, int]]

    @property
    def n_bins(self) -> int:
        return len(self.counts)


def accidental_mean(
    h: Coincidence2DHistogram,
    peak: PeakLocation,
    cfg: BinningConfig,
    min_bins: int = 5,
) -> AccidentalEstimate:
    """Mean count of the neighbor-pulse bins around the peak.

    Samples every in-grid bin displaced from the peak by nonzero integer
    multiples of the pulse period along either axis (axial, diagonal and
    mixed displacements), where accidental coincidences involving neighboring
    pulses accumulate.
    """
    if abs(h.bin_width_s - cfg.merged_bin_s) > 1e-6 * cfg.merged_bin_s:
        raise ValueError("histogram is not on the merged grid of this config")
    r = cfg.rep_period_bins
    kmax = (h.n_half + max(abs(peak.i), abs(peak.j))) // r + 1
    offsets = []
    counts = []
    for a in range(-kmax, kmax + 1):
        for b in range(-kmax, kmax + 1):
            if a == 0 and b == 0:
                continue
            i = peak.i + a * r
            j = peak.j + b * r
            if abs(i) <= h.n_half and abs(j) <= h.n_half:
                offsets.append((a, b))
                counts.append(h.count_at(i, j))
    if len(counts) < min_bins:
        raise InsufficientStatisticsError(
            f"only {len(counts)} neighbor-pulse bins inside the window (need {min_bins})"
        )
    return AccidentalEstimate(
        mean=float(np.mean(counts)), counts=counts, offsets=offsets
    )


@dataclass(frozen=True)
class CarEstimate:
    """Coincidence-to-accidental ratio with Poisson-propagated uncertainty."""

    value: float
    error: float
    is_lower_bound: bool = False


def car(central: int, accidental: float, n_accidental_bins: int = 41) -> CarEstimate:
    """central / accidental with error CAR sqrt(1/central + 1/(n_bins accidental)).

    A zero accidental mean leaves the ratio undefined; the estimate then
    carries the lower bound obtained from one count spread over all sampled
    bins and is flagged as such.
    """
    if central < 0 or accidental < 0:
        raise ValueError("counts must be >= 0")
    if accidental == 0.0:
        return CarEstimate(
            value=float(central * n_accidental_bins), error=math.inf, is_lower_bound=True
        )
    value = central / accidental
    if central == 0:
        return CarEstimate(value=0.0, error=0.0)
    error = value * math.sqrt(1.0 / central + 1.0 / (n_accidental_bins * accidental))
    return CarEstimate(value=value, error=error)


def occupancy_histogram(h: Coincidence2DHistogram) -> dict[int, int]:
    """How many bins hold how many counts, over the full grid (zeros included)."""
    occ = Counter(int(v) for v in h.values)
    occ[0] = occ.get(0, 0) + h.n_bins_total - len(h.values)
    return dict(sorted(occ.items()))


@dataclass(frozen=True)
class PoissonFit:
    mean: float
    chi2: float
    dof: int
    n_bins_included: int
    excluded_counts: list[int]


def poisson_fit(
    occupancy: dict[int, int],
    exclude_sigma: float = 10.0,
    max_iterations: int = 10,
) -> PoissonFit:
    """Maximum-likelihood Poisson mean of the per-bin occupancy.

    The ML estimate of a Poisson mean is the weighted sample mean.  Count
    values above mean + exclude_sigma * sqrt(mean) are dropped and the mean
    re-estimated until stable, so a histogram dominated by noise bins is
    fitted by the noise while isolated signal and accidental bins are flagged
    as outliers.  Goodness of fit is a chi-square over the included count
    values with expected frequency >= 5.
    """
    if not occupancy:
        raise FitError("empty occupancy histogram")
    if any(k < 0 or v < 0 for k, v in occupancy.items()):
        raise ValueError("occupancy keys and frequencies must be >= 0")
    values = np.array(sorted(occupancy))
    freqs = np.array([occupancy[int(k)] for k in values], dtype=float)

    included = np.ones(len(values), dtype=bool)
    mean = 0.0
    for _ in range(max_iterations):
        n = freqs[included].sum()
        if n == 0:
            raise FitError("all occupancy bins excluded by the outlier threshold")
        mean = float(np.dot(values[included], freqs[included]) / n)
        threshold = mean + exclude_sigma * math.sqrt(mean)
        new_included = values <= threshold
        if np.array_equal(new_included, included):
            break
        included = new_included

    n_included = int(freqs[included].sum())
    chi2 = 0.0
    dof = 0
    for k, obs in zip(values[included], freqs[included]):
        expected = n_included * math.exp(log_poisson_pmf(mean, int(k)))
        if expected >= 5.0:
            chi2 += (obs - expected) ** 2 / expected
            dof += 1
    return PoissonFit(
        mean=mean,
        chi2=chi2,
        dof=max(dof - 1, 0),
        n_bins_included=n_included,
        excluded_counts=[int(k) for k in values[~included]],
    )


def noise_tail_probability(mean: float, n: int) -> float:
    """Poisson probability of n counts at the fitted noise mean, in log space."""
    return math.exp(log_poisson_pmf(mean, n))


def snr(central: int, noise_mean: float, n_bins: int | None = None) -> float:
    """Signal-to-noise ratio of the central count against the per-bin noise mean.

    A vanishing noise mean makes the ratio infinite; with the bin total given
    the resolvable lower bound central * n_bins is returned instead.
    """
    if central < 0 or noise_mean < 0:
        raise ValueError("inputs must be >= 0")
    if noise_mean > 0:
        return central / noise_mean
    if n_bins is None:
        raise ValueError("noise_mean is 0; pass n_bins to report the lower bound")
    return float(central * n_bins)


@dataclass(frozen=True)
class RateEstimate:
    value: float
    error: float


def success_probability_estimate(central: int, n_pulses: int) -> RateEstimate:
    """Raw per-pulse triplet detection probability, central / n_pulses.

    The error is the Poisson counting uncertainty sqrt(central) / n_pulses.
    No dead-time or duty-cycle correction is applied.
    """
    if n_pulses <= 0:
        raise ValueError("n_pulses must be > 0")
    if central < 0:
        raise ValueError("central must be >= 0")
    return RateEstimate(
        value=central / n_pulses, error=math.sqrt(central) / n_pulses
    )


@dataclass(frozen=True)
class TripletReport:
    """Aggregate result of the full coincidence analysis of one stream."""

    central_count: int
    central_error: float
    peak_bin: tuple[int, int] | None
    peak_delay_ns: tuple[float, float] | None
    accidental_mean: float
    n_accidental_bins: int
    car: float
    car_error: float
    car_is_lower_bound: bool
    noise_mean_per_bin: float
    fit_chi2: float
    fit_dof: int
    fit_excluded_counts: list[int]
    snr: float
    snr_is_lower_bound: bool
    noise_tail_probability: float
    success_probability: float
    success_error: float
    n_pulses: int
    n_bins_total: int
    occupancy: dict[int, int] = field(repr=False)

    def to_dict(self) -> dict:
        d = {
            "central_count": self.central_count,
            "central_error": self.central_error,
            "peak_bin": list(self.peak_bin) if self.peak_bin is not None else None,
            "peak_delay_ns": list(self.peak_delay_ns) if self.peak_delay_ns is not None else None,
            "accidental_mean": self.accidental_mean,
            "n_accidental_bins": self.n_accidental_bins,
            "car": None if math.isinf(self.car) else self.car,
            "car_error": None if math.isinf(self.car_error) else self.car_error,
            "car_is_lower_bound": self.car_is_lower_bound,
            "noise_mean_per_bin": self.noise_mean_per_bin,
            "fit_chi2": self.fit_chi2,
            "fit_dof": self.fit_dof,
            "fit_excluded_counts": self.fit_excluded_counts,
            "snr": self.snr,
            "snr_is_lower_bound": self.snr_is_lower_bound,
            "noise_tail_probability": self.noise_tail_probability,
            "success_probability": self.success_probability,
            "success_error": self.success_error,
            "n_pulses": self.n_pulses,
            "n_bins_total": self.n_bins_total,
            "occupancy": {str(k): v for k, v in self.occupancy.items()},
        }
        return d


def derive_n_pulses(stream: TimeTagStream, cfg: BinningConfig) -> int:
    """Pulse count estimated from the stream extent (last tag rounds up)."""
    if len(stream):
        span = (int(stream.timestamps[-1]) + 1) * stream.resolution_s
        return max(1, math.ceil(span / cfg.rep_period_s))
    return 1


def analyze_stream(
    stream: TimeTagStream,
    cfg: BinningConfig,
    peak_search_radius: int = 3,
    fit_exclude_sigma: float = 10.0,
    n_pulses: int | None = None,
) -> TripletReport:
    """Run the full pipeline: histogram, merge, peak, accidentals, statistics."""
    fine = build_threefold_histogram(stream, cfg)
    merged = merge_bins(fine, cfg.merge_factor)
    if n_pulses is None:
        n_pulses = derive_n_pulses(stream, cfg)
    return analyze_merged(
        merged,
        cfg,
        n_pulses=n_pulses,
        peak_search_radius=peak_search_radius,
        fit_exclude_sigma=fit_exclude_sigma,
    )


def analyze_merged(
    merged: Coincidence2DHistogram,
    cfg: BinningConfig,
    n_pulses: int,
    peak_search_radius: int = 3,
    fit_exclude_sigma: float = 10.0,
) -> TripletReport:
    """Statistics of an already merged histogram."""
    try:
        peak = locate_central_peak(merged, peak_search_radius)
        central = peak.count
        peak_bin = (peak.i, peak.j)
        peak_delay = (peak.delay_i_s * 1e9, peak.delay_j_s * 1e9)
    except PeakNotFoundError:
        peak = PeakLocation(0, 0, 0, 0.0, 0.0)
        central = 0
        peak_bin = None
        peak_delay = None

    acc = accidental_mean(merged, peak, cfg)
    car_est = car(central, acc.mean, n_accidental_bins=acc.n_bins)

    occupancy = occupancy_histogram(merged)
    fit = poisson_fit(occupancy, exclude_sigma=fit_exclude_sigma)

    if fit.mean > 0:
        snr_value = snr(central, fit.mean)
        snr_lower = False
    else:
        snr_value = snr(central, 0.0, n_bins=merged.n_bins_total)
        snr_lower = True

    success = success_probability_estimate(central, n_pulses)

    return TripletReport(
        central_count=central,
        central_error=math.sqrt(central),
        peak_bin=peak_bin,
        peak_delay_ns=peak_delay,
        accidental_mean=acc.mean,
        n_accidental_bins=acc.n_bins,
        car=car_est.value,
        car_error=car_est.error,
        car_is_lower_bound=car_est.is_lower_bound,
        noise_mean_per_bin=fit.mean,
        fit_chi2=fit.chi2,
        fit_dof=fit.dof,
        fit_excluded_counts=fit.excluded_counts,
        snr=snr_value,
        snr_is_lower_bound=snr_lower,
        noise_tail_probability=noise_tail_probability(fit.mean, central),
        success_probability=success.value,
        success_error=success.error,
        n_pulses=n_pulses,
        n_bins_total=merged.n_bins_total,
        occupancy=occupancy,
    )
