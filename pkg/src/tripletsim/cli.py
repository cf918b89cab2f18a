"""Command-line front end: simulate, analyze, phasematch, report.

One command per process; data goes to files (or stdout for single-value
results), diagnostics to stderr, exit code 0 only on success.  Output files
are written atomically.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import tempfile


from . import analysis, phasematch, ttag
from .config import (
    AnalyzeOptions,
    config_hash,
    default_config,
    load_config,
    parse_analyze,
    parse_phasematch,
    parse_simulate,
)
from .errors import ConfigError, TripletSimError, TtagFormatError
from .simulate import expected_rates, simulate_run

THREADS_ENV = "TRIPLETSIM_THREADS"


def _atomic_write_text(path, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".out-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(rows) -> str:
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def _default_threads() -> int:
    value = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(value))
    except ValueError:
        return 1


def cmd_simulate(args) -> int:
    tree = load_config(args.config)
    if "simulate" not in tree:
        raise ConfigError("config.simulate: section required by this command")
    sim_cfg = parse_simulate(tree["simulate"])
    if args.seed is not None:
        sim_cfg = sim_cfg.with_seed(args.seed)
        tree["simulate"]["rng_seed"] = args.seed

    stream = simulate_run(sim_cfg, n_threads=args.threads, progress=True)
    ttag.write_ttag(args.output, stream)

    rates = expected_rates(sim_cfg)
    manifest = {
        "schema_version": tree["schema_version"],
        "config_sha256": config_hash(tree),
        "rng_seed": sim_cfg.rng_seed,
        "n_pulses": sim_cfg.n_pulses,
        "n_records": stream.n_records,
        "resolution_ps": sim_cfg.resolution_s * 1e12,
        "expected": {
            "mean_pairs_per_pulse": rates.mean_pairs,
            "singles_counts": list(rates.singles_counts),
            "singles_rates_hz": list(rates.singles_rates_hz),
            "triplet_probability_per_pulse": rates.triplet_probability_per_pulse,
            "triplet_rate_hz": rates.triplet_rate_hz,
            "expected_triplets": rates.expected_triplets,
        },
    }
    manifest_path = args.output + ".manifest.json"
    _atomic_write_text(manifest_path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(
        f"wrote {stream.n_records} records to {args.output} (manifest {manifest_path})",
        file=sys.stderr,
    )
    return 0


def _histogram_csv(h) -> str:
    rows = [["tau1_minus_tau2_ns", "tau3_minus_tau2_ns", "count"]]
    scale = h.bin_width_s * 1e9
    for i, j, v in zip(h.i_idx, h.j_idx, h.values):
        rows.append([f"{i * scale:.6f}", f"{j * scale:.6f}", int(v)])
    return _csv_text(rows)


def _occupancy_csv(occupancy: dict) -> str:
    rows = [["threefolds_per_bin", "absolute_frequency"]]
    for k, v in sorted(occupancy.items()):
        rows.append([k, v])
    return _csv_text(rows)


def _manifest_pulses(ttag_path) -> int | None:
    """Pulse count from the simulation manifest next to the file, if present."""
    manifest_path = os.fspath(ttag_path) + ".manifest.json"
    if not os.path.exists(manifest_path):
        return None
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError):
        return None
    n = manifest.get("n_pulses")
    return n if isinstance(n, int) and n > 0 else None


def cmd_analyze(args) -> int:
    tree = load_config(args.config)
    opts = parse_analyze(tree.get("analyze", {})) if "analyze" in tree else AnalyzeOptions(
        binning=analysis.BinningConfig()
    )
    stream = ttag.read_ttag(args.ttag)

    n_pulses = opts.n_pulses if opts.n_pulses is not None else _manifest_pulses(args.ttag)
    if n_pulses is None:
        n_pulses = analysis.derive_n_pulses(stream, opts.binning)
    fine = analysis.build_threefold_histogram(stream, opts.binning)
    merged = analysis.merge_bins(fine, opts.binning.merge_factor)
    report = analysis.analyze_merged(
        merged,
        opts.binning,
        n_pulses=n_pulses,
        peak_search_radius=opts.peak_search_radius,
        fit_exclude_sigma=opts.fit_exclude_sigma,
    )

    os.makedirs(args.output, exist_ok=True)
    report_dict = report.to_dict()
    if args.format == "csv":
        rows = [["key", "value"]] + [
            [k, json.dumps(v)] for k, v in report_dict.items() if k != "occupancy"
        ]
        _atomic_write_text(os.path.join(args.output, "report.csv"), _csv_text(rows))
    else:
        _atomic_write_text(
            os.path.join(args.output, "report.json"),
            json.dumps(report_dict, indent=2, sort_keys=True) + "\n",
        )
    _atomic_write_text(os.path.join(args.output, "histogram.csv"), _histogram_csv(merged))
    _atomic_write_text(
        os.path.join(args.output, "occupancy.csv"), _occupancy_csv(report.occupancy)
    )
    print(
        f"central={report.central_count} car={report.car:.3g} snr={report.snr:.3g} "
        f"noise_mean={report.noise_mean_per_bin:.3g}",
        file=sys.stderr,
    )
    return 0


def cmd_phasematch(args) -> int:
    tree = load_config(args.config)
    if "phasematch" not in tree:
        raise ConfigError("config.phasematch: section required by this command")
    plan = parse_phasematch(tree["phasematch"])

    def emit(text: str) -> None:
        if args.output is None or args.output == "-":
            sys.stdout.write(text)
        else:
            _atomic_write_text(args.output, text)

    if args.mode == "solve":
        sol = phasematch.solve_phasematched_signal(
            plan.lambda_p_m, plan.grating, plan.temperature_c, plan.dispersion, plan.bracket_m
        )
        payload = {
            "lambda_s_m": sol.lambda_s_m,
            "lambda_i_m": sol.lambda_i_m,
            "residual_delta_k_per_m": sol.residual_delta_k,
            "n_roots": sol.n_roots,
        }
        if args.format == "csv":
            emit(_csv_text([payload.keys(), payload.values()]))
        else:
            emit(json.dumps(payload, indent=2) + "\n")
    elif args.mode == "tune":
        curve = phasematch.temperature_tuning_curve(
            plan.grating,
            plan.lambda_p_m,
            plan.tune_range_c,
            plan.tune_steps,
            plan.dispersion,
            plan.bracket_m,
        )
        rows = [["temperature_c", "lambda_s_m", "lambda_i_m"]]
        for pt in curve:
            rows.append(
                [
                    repr(pt.temperature_c),
                    "" if pt.lambda_s_m is None else repr(pt.lambda_s_m),
                    "" if pt.lambda_i_m is None else repr(pt.lambda_i_m),
                ]
            )
        emit(_csv_text(rows))
    elif args.mode == "shg":
        peak = phasematch.shg_peak_wavelength(
            plan.grating, plan.temperature_c, plan.dispersion, plan.shg_scan_m, plan.length_m
        )
        if args.format == "csv":
            lams, resp = phasematch.shg_response(
                plan.grating, plan.temperature_c, plan.dispersion, plan.shg_scan_m, plan.length_m
            )
            rows = [["lambda_fundamental_m", "response"]]
            rows += [[repr(float(l)), repr(float(r))] for l, r in zip(lams, resp)]
            emit(_csv_text(rows))
        else:
            emit(json.dumps({"shg_peak_m": peak}, indent=2) + "\n")
    elif args.mode == "acceptance":
        acc = phasematch.pump_acceptance_bandwidth(
            plan.grating,
            plan.temperature_c,
            plan.dispersion,
            plan.length_m,
            plan.acceptance_scan_m,
            n_pump=plan.acceptance_points,
        )
        payload = {
            "fwhm_m": acc.fwhm_m,
            "peak_m": acc.peak_m,
            "fit_residual_rms": acc.residual_rms,
        }
        if args.format == "csv":
            rows = [["pump_lambda_m", "integrated_response"]]
            rows += [
                [repr(float(p)), repr(float(r))]
                for p, r in zip(acc.pump_grid_m, acc.response)
            ]
            emit(_csv_text(rows))
        else:
            emit(json.dumps(payload, indent=2) + "\n")
    return 0


def cmd_report(args) -> int:
    with open(args.report, "r", encoding="utf-8") as fh:
        rep = json.load(fh)
    car = rep.get("car")
    car_err = rep.get("car_error")
    if car is None:
        car_text = "undefined"
    elif rep.get("car_is_lower_bound"):
        car_text = f">= {car:.3g} (no accidental counts)"
    else:
        car_text = f"{car:.3g} +/- {car_err:.2g}"
    lines = [
        f"pulses analyzed        {rep.get('n_pulses')}",
        f"central three-folds    {rep.get('central_count')} +/- {rep.get('central_error'):.2f}",
        f"peak delay (ns)        {rep.get('peak_delay_ns')}",
        f"accidental mean        {rep.get('accidental_mean'):.4g} over {rep.get('n_accidental_bins')} bins",
        "car                    " + car_text,
        f"noise mean per bin     {rep.get('noise_mean_per_bin'):.4g}",
        f"snr                    {rep.get('snr'):.4g}"
        + (" (lower bound)" if rep.get("snr_is_lower_bound") else ""),
        f"noise tail p(central)  {rep.get('noise_tail_probability'):.3g}",
        f"success probability    {rep.get('success_probability'):.4g} +/- {rep.get('success_error'):.2g}",
    ]
    print("\n".join(lines))
    return 0


def cmd_write_config(args) -> int:
    _atomic_write_text(args.output, json.dumps(default_config(), indent=2) + "\n")
    print(f"wrote default config to {args.output}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tripletsim",
        description="Cascaded down-conversion triplet source: simulation, "
        "coincidence analysis and phase-matching design.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run the source simulation, write a TTAG file")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--output", required=True, help="output .ttag path")
    p_sim.add_argument("--seed", type=int, default=None, help="override the config rng_seed")
    p_sim.add_argument("--threads", type=int, default=_default_threads())
    p_sim.set_defaults(func=cmd_simulate)

    p_an = sub.add_parser("analyze", help="coincidence analysis of a TTAG file")
    p_an.add_argument("ttag", help="input .ttag path")
    p_an.add_argument("--config", required=True)
    p_an.add_argument("--output", required=True, help="output directory for report and CSVs")
    p_an.add_argument("--format", choices=("json", "csv"), default="json")
    p_an.set_defaults(func=cmd_analyze)

    p_pm = sub.add_parser("phasematch", help="quasi-phase-matching design calculations")
    p_pm.add_argument("mode", choices=("solve", "tune", "shg", "acceptance"))
    p_pm.add_argument("--config", required=True)
    p_pm.add_argument("--output", default="-", help="output file, '-' for stdout")
    p_pm.add_argument("--format", choices=("json", "csv"), default=None)
    p_pm.set_defaults(func=cmd_phasematch)

    p_rep = sub.add_parser("report", help="pretty-print an analysis report")
    p_rep.add_argument("report", help="report.json produced by analyze")
    p_rep.set_defaults(func=cmd_report)

    p_cfg = sub.add_parser("write-config", help="write the baseline config file")
    p_cfg.add_argument("--output", required=True)
    p_cfg.set_defaults(func=cmd_write_config)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "format", None) is None and args.command == "phasematch":
        args.format = "csv" if args.mode == "tune" else "json"
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TtagFormatError as exc:
        print(f"time-tag file error: {exc}", file=sys.stderr)
        return 3
    except (TripletSimError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
