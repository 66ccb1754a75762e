"""Command-line front end: ``biphoton <command> [options]``.

Indices on the command line and in files are 1-based. Exit codes: 0 success,
1 usage or input error, 2 numerical failure, 3 verification FAIL.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from biphoton import rates, reconstruction, scans
from biphoton.device import DeviceSpec, load_device, reference_device_path
from biphoton.engines import (
    angular_frequency,
    fit_proportionality,
    sfg_efficiency_green,
    sfg_simulate_ode,
    sfg_tensor,
    spdc_tensor,
)
from biphoton.errors import ConfigError, DegenerateConfigurationError, FitError, NumericalAccuracyError
from biphoton.propagation import propagate, propagate_backward

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_FAIL = 0, 1, 2, 3
PASS_THRESHOLD = 1e-6


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dump(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _matrix(m):
    return [[float(v) for v in row] for row in np.asarray(m)]


def _device(args) -> DeviceSpec:
    return load_device(args.config or reference_device_path())


def _index(value: int, n: int, name: str) -> int:
    if not 1 <= value <= n:
        raise UsageError(f"{name}={value} outside 1..{n}")
    return value - 1


def psi_to_json(psi, **meta) -> dict:
    psi = np.asarray(psi, dtype=complex)
    doc = {"psi": [[[float(v.real), float(v.imag)] for v in row] for row in psi],
           "units": {"psi": "[re, im] overlap integral in um"}}
    doc.update(meta)
    return doc


def psi_from_json(doc) -> np.ndarray:
    """Complex matrix from {"psi": ...} or from a reconstruction document."""
    if "psi" in doc:
        return np.array([[complex(*v) for v in row] for row in doc["psi"]])
    if doc.get("phases") is None or "amplitudes" not in doc:
        raise UsageError("document needs 'psi', or 'amplitudes' together with complete 'phases'")
    phases = reconstruction.PhaseSet.from_json(doc["phases"])
    return reconstruction.reconstruct_state(np.array(doc["amplitudes"], dtype=float), phases)


# --- commands ------------------------------------------------------------

def _write_table(out_dir: Path, name: str, table: scans.ScanTable) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_text(table.to_csv())
    return path


def cmd_scan(args, config: scans.ScanConfig | None = None) -> int:
    if config is None:
        path = Path(args.scan_config)
        config = scans.parse_scan_config(path.read_text(), base_dir=path.parent)
        if args.jobs:
            config = scans.ScanConfig(**{**config.__dict__, "jobs": args.jobs})
    spec = load_device(config.device) if config.device else _device(args)
    out_dir = Path(args.out_dir)
    result = scans.run_scan(config, spec)
    if config.kind == "sfg_map":
        out_dir.mkdir(parents=True, exist_ok=True)
        for emap in result:
            rates.write_efficiency_map(out_dir / rates.map_filename(emap.input_pair), emap)
        print(f"wrote {len(result)} maps of {result[0].eta.shape[0]}x{result[0].eta.shape[1]} "
              f"points to {out_dir}")
    else:
        name = "degenerate_scan.csv" if config.kind == "degenerate_pump_scan" else "spdc_spectrum.csv"
        print(f"wrote {_write_table(out_dir, name, result)}")
    return EXIT_OK


def _pairs(text: str | None, n: int):
    if not text:
        return None
    out = []
    for item in text.split(","):
        a, _, b = item.strip().partition("-")
        try:
            out.append((_index(int(a), n, "pair"), _index(int(b), n, "pair")))
        except ValueError:
            raise UsageError(f"bad pair {item!r}; expected e.g. 1-2") from None
    return tuple(out)


def cmd_simulate_sfg_map(args) -> int:
    spec = _device(args)
    n = spec.n_waveguides
    config = scans.ScanConfig(
        kind="sfg_map", device=args.config,
        signal_grid=scans.Grid(args.start, args.stop, args.step),
        idler_grid=scans.Grid(args.idler_start, args.idler_stop, args.step)
        if args.idler_start is not None else None,
        pairs=_pairs(args.pairs, n), output_waveguide=_index(args.output, n, "output"),
        jobs=args.jobs)
    return cmd_scan(args, config)


def cmd_degenerate_scan(args) -> int:
    spec = _device(args)
    config = scans.ScanConfig(kind="degenerate_pump_scan", device=args.config,
                              pump_grid=scans.Grid(args.start, args.stop, args.step),
                              pump_input=_index(args.n_p, spec.n_waveguides, "n_p"), jobs=args.jobs)
    return cmd_scan(args, config)


def cmd_spdc_spectrum(args) -> int:
    spec = _device(args)
    center = 2 * args.lambda_p
    config = scans.ScanConfig(kind="spdc_spectrum", device=args.config,
                              signal_grid=scans.Grid(center - args.bandwidth / 2,
                                                     center + args.bandwidth / 2, args.step),
                              lambda_p=args.lambda_p, pump_power=args.pump_power,
                              pump_input=_index(args.n_p, spec.n_waveguides, "n_p"), jobs=args.jobs)
    return cmd_scan(args, config)


def expected_pair_rates(spec: DeviceSpec, n_p: int, lambda_p: float, bandwidth: float,
                        step: float, jobs: int = 1) -> np.ndarray:
    """Pairs/s per watt of pump for every ordered output element, integrated over the band."""
    center = 2 * lambda_p
    grid = scans.Grid(center - bandwidth / 2, center + bandwidth / 2, step)
    table = scans.spdc_spectrum(spec, grid, lambda_p, n_p, pump_power=1.0, jobs=jobs)
    n = spec.n_waveguides
    sums = table.rows[:, 2:].sum(axis=0)
    return sums.reshape(n, n)


def cmd_simulate_spdc(args) -> int:
    spec = _device(args)
    n = spec.n_waveguides
    n_p = _index(args.n_p, n, "n_p")
    if args.pump_power < 0 or not args.dt > 0:
        raise UsageError("need pump power >= 0 and dt > 0")
    per_watt = expected_pair_rates(spec, n_p, args.lambda_p, args.bandwidth, args.step, args.jobs)
    rate = args.pump_power * per_watt
    total = float(rate.sum())
    mu = args.transmissions if args.transmissions else [1.0] * n
    if len(mu) != n:
        raise UsageError(f"--transmissions needs {n} values")
    effs = tuple(args.detector_efficiencies)
    records = reconstruction.synth_coincidences(np.sqrt(rate), total, args.dt, mu, effs,
                                                seed=args.seed,
                                                accidental_rate=args.accidental_rate)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rates.write_records(out_dir / "coincidences.csv", records)
    expected = rate * args.dt * np.outer(mu, mu) * effs[0] * effs[1]
    counts = np.zeros((n, n), dtype=int)
    for r in records:
        counts[r.output_pair] = r.counts_in_peak - r.accidentals
    _dump(out_dir / "spdc.json", {
        "pump_input": n_p + 1, "lambda_p_nm": args.lambda_p, "bandwidth_nm": args.bandwidth,
        "pump_power_W": args.pump_power, "dt_s": args.dt, "seed": args.seed,
        "pair_rate_per_s": _matrix(rate), "total_pair_rate_per_s": total,
        "expected_net_counts": _matrix(expected), "net_counts": counts.tolist(),
        "units": {"pair_rate_per_s": "1/s at the source", "counts": "coincidences in dt"},
    })
    print(f"total pair rate {total:.6g} /s; wrote {out_dir / 'coincidences.csv'}")
    return EXIT_OK


def cmd_wavefunction(args) -> int:
    spec = _device(args)
    n_p = _index(args.n_p, spec.n_waveguides, "n_p")
    ls = args.lambda_s
    li = args.lambda_i if args.lambda_i is not None else ls
    psi = spdc_tensor(spec, angular_frequency(ls), angular_frequency(li))[n_p]
    out = Path(args.out_dir) / "wavefunction.json"
    _dump(out, psi_to_json(psi, pump_input=n_p + 1, lambda_s_nm=ls, lambda_i_nm=li))
    print(f"wrote {out}")
    return EXIT_OK


def _band_wavelengths(spec, lam_s, lam_i):
    lam_p = 1 / (1 / lam_s + 1 / lam_i)
    return {"pump": lam_p, "signal": lam_s, "idler": lam_i}


def verify_correspondence(spec: DeviceSpec, trials: int, seed=None, ode_trials: int = 1,
                          span: float = 3.0) -> dict:
    """Residuals of the three correspondence checks over random frequency draws.

    Signal and idler wavelengths are drawn uniformly within ``span`` nm of
    each band's reference wavelength.
    """
    rng = np.random.default_rng(seed)
    n = spec.n_waveguides
    ref_s = spec.band("signal").reference_wavelength
    ref_i = spec.band("idler").reference_wavelength
    prop, recip, ode = [], [], []
    for t in range(trials):
        lam_s = ref_s + rng.uniform(-span, span)
        lam_i = ref_i + rng.uniform(-span, span)
        ws, wi = angular_frequency(lam_s), angular_frequency(lam_i)
        psi = spdc_tensor(spec, ws, wi)
        xi = sfg_tensor(spec, ws, wi)
        prop.append(fit_proportionality(psi, xi)[1])
        z1 = rng.uniform(0, spec.total_length)
        z0 = rng.uniform(0, z1)
        for band, lam in _band_wavelengths(spec, lam_s, lam_i).items():
            u = propagate(spec, band, lam, z0, z1).entries
            ub = propagate_backward(spec, band, lam, z0, z1).entries
            recip.append(float(np.max(np.abs(ub - u.T)) / max(np.max(np.abs(u)), 1e-300)))
        if t < ode_trials:
            n_s, n_i = (int(k) for k in rng.integers(0, n, 2))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                res = sfg_simulate_ode(spec, n_s, n_i, ws, wi, 1e-6, 1e-6)
            green = sfg_efficiency_green(spec, n_s, n_i, ws, wi)
            scale = np.max(green)
            ode.append(float(np.max(np.abs(res.eta - green)) / scale) if scale > 0 else
                       float(np.max(res.eta) > 0))
    report = {
        "trials": trials,
        "ode_trials": min(ode_trials, trials),
        "proportionality_residual": max(prop, default=0.0),
        "reciprocity_residual": max(recip, default=0.0),
        "ode_green_residual": max(ode, default=0.0),
        "threshold": PASS_THRESHOLD,
    }
    keys = ("proportionality_residual", "reciprocity_residual", "ode_green_residual")
    report["result"] = "PASS" if all(report[k] < PASS_THRESHOLD for k in keys) else "FAIL"
    return report


def cmd_verify_correspondence(args) -> int:
    spec = _device(args)
    if args.trials < 1:
        raise UsageError("--trials must be at least 1")
    report = verify_correspondence(spec, args.trials, args.seed, args.ode_trials)
    report["device"] = spec.name
    _dump(Path(args.out_dir) / "correspondence.json", report)
    print(f"{report['result']}: proportionality {report['proportionality_residual']:.3e}, "
          f"reciprocity {report['reciprocity_residual']:.3e}, "
          f"ode {report['ode_green_residual']:.3e}")
    return EXIT_OK if report["result"] == "PASS" else EXIT_FAIL


def reconstruct(maps_dir, lambda_p: float, bandwidth: float, traces_dir=None,
                counts=None) -> dict:
    maps = rates.read_map_dir(maps_dir)
    if not maps:
        raise UsageError(f"no sfg_map_s*_i*.csv files in {maps_dir}")
    n = max(max(m.input_pair) for m in maps) + 1
    amplitudes = rates.relative_amplitudes_from_sfg(maps, lambda_p, bandwidth, n)
    doc = {
        "lambda_p_nm": lambda_p,
        "bandwidth_nm": bandwidth,
        "amplitudes": _matrix(amplitudes),
        "predicted_rate_per_W": float(sum(rates.band_rate(m, lambda_p, bandwidth) for m in maps)),
        "phases": None,
        "schmidt_number": None,
        "units": {"amplitudes": "squared relative amplitude, unit sum",
                  "predicted_rate_per_W": "pairs/s per W of pump, summed over measured maps"},
    }
    notes = []
    triples = {}
    if traces_dir is not None and Path(traces_dir).is_dir():
        triples = reconstruction.read_trace_dir(traces_dir)
    if triples:
        phases = reconstruction.phases_from_traces(triples, n)
        doc["phases"] = phases.to_json()
        if phases.complete:
            state = reconstruction.reconstruct_state(amplitudes, phases)
            doc["schmidt_number"] = reconstruction.schmidt(state).schmidt_number
        else:
            notes.append("phases incomplete; Schmidt number omitted")
    else:
        notes.append("no interferogram traces; phases omitted")
    if counts is not None:
        spdc = rates.relative_amplitudes_from_counts(rates.read_records(counts), n)
        doc["spdc_amplitudes"] = _matrix(spdc)
        doc["fidelity"] = reconstruction.fidelity(amplitudes, spdc)
    doc["notes"] = notes
    return doc


def cmd_reconstruct(args) -> int:
    doc = reconstruct(args.maps_dir, args.lambda_p, args.bandwidth, args.traces_dir, args.counts)
    out = Path(args.out_dir) / "reconstruction.json"
    _dump(out, doc)
    line = f"wrote {out}"
    if doc.get("fidelity") is not None:
        line += f"; fidelity {doc['fidelity']:.6f}"
    if doc["schmidt_number"] is not None:
        line += f"; Schmidt number {doc['schmidt_number']:.6f}"
    print(line)
    return EXIT_OK


def cmd_fit_phases(args) -> int:
    triples = reconstruction.read_trace_dir(args.traces_dir)
    if not triples:
        raise UsageError(f"no complete trace triples in {args.traces_dir}")
    n = args.n or max(max(p) for p in triples) + 1
    phases = reconstruction.phases_from_traces(triples, n)
    out = Path(args.out_dir) / "phases.json"
    _dump(out, phases.to_json())
    print(f"wrote {out}")
    return EXIT_OK


def cmd_schmidt(args) -> int:
    psi = psi_from_json(json.loads(Path(args.psi).read_text()))
    result = reconstruction.schmidt(psi)
    out = Path(args.out_dir) / "schmidt.json"
    _dump(out, result.to_json())
    print(f"Schmidt number {result.schmidt_number:.6f}; wrote {out}")
    return EXIT_OK


def cmd_synthesize_traces(args) -> int:
    psi = psi_from_json(json.loads(Path(args.psi).read_text()))
    n = psi.shape[0]
    rng = np.random.default_rng(args.seed)
    theta_s = rng.uniform(-np.pi, np.pi, n)
    theta_i = rng.uniform(-np.pi, np.pi, n)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = 0
    for ns in range(n):
        for ni in range(n):
            if (ns, ni) == (0, 0):
                continue
            tr = reconstruction.synthesize_traces(
                psi, (ns, ni), args.f, args.periods / args.f, args.samples_per_period * args.f,
                args.noise, seed=rng, theta_s=theta_s, theta_i=theta_i)
            for trace in tr[:3]:
                reconstruction.write_trace(out_dir / reconstruction.trace_filename((ns, ni), trace.kind),
                                           trace)
            written += 1
    truth = reconstruction.gauge_reduced_phases(psi, theta_s - theta_s[0], theta_i - theta_i[0])
    _dump(out_dir / "truth.json", {"theta": _matrix(truth), "units": "rad",
                                   "theta_s": [float(v) for v in theta_s - theta_s[0]],
                                   "theta_i": [float(v) for v in theta_i - theta_i[0]]})
    print(f"wrote {3 * written} traces to {out_dir}")
    return EXIT_OK


# --- parser --------------------------------------------------------------

def _common(p):
    p.add_argument("--config", help="device INI file (default: shipped reference device)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=".")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="biphoton", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate-sfg-map", help="SFG efficiency maps per input pair")
    _common(p)
    p.add_argument("--start", type=float, default=1547.0, help="signal start (nm)")
    p.add_argument("--stop", type=float, default=1553.0, help="signal stop (nm)")
    p.add_argument("--step", type=float, default=0.25)
    p.add_argument("--idler-start", type=float)
    p.add_argument("--idler-stop", type=float)
    p.add_argument("--pairs", help="comma list such as 1-1,1-2 (default: all n_s <= n_i)")
    p.add_argument("--output", type=int, default=1, help="SFG output waveguide")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_simulate_sfg_map)

    p = sub.add_parser("degenerate-scan", help="|psi|^2 versus pump wavelength, degenerate photons")
    _common(p)
    p.add_argument("--start", type=float, default=773.5)
    p.add_argument("--stop", type=float, default=776.5)
    p.add_argument("--step", type=float, default=0.05)
    p.add_argument("--n-p", type=int, default=1)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_degenerate_scan)

    p = sub.add_parser("spdc-spectrum", help="pair rate per signal bin for every element")
    _common(p)
    p.add_argument("--lambda-p", type=float, default=775.0)
    p.add_argument("--bandwidth", type=float, default=6.0)
    p.add_argument("--step", type=float, default=0.25)
    p.add_argument("--n-p", type=int, default=1)
    p.add_argument("--pump-power", type=float, default=1.0, help="W")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_spdc_spectrum)

    p = sub.add_parser("scan", help="run a scan described by a [scan] INI file")
    _common(p)
    p.add_argument("scan_config")
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("simulate-spdc", help="Poisson coincidence records for a pumped device")
    _common(p)
    p.add_argument("--n-p", type=int, default=1)
    p.add_argument("--lambda-p", type=float, default=775.0)
    p.add_argument("--bandwidth", type=float, default=6.0)
    p.add_argument("--step", type=float, default=0.25)
    p.add_argument("--pump-power", type=float, default=32e-6, help="W")
    p.add_argument("--dt", type=float, default=28.57, help="acquisition time (s)")
    p.add_argument("--transmissions", type=float, nargs="+", help="per output waveguide")
    p.add_argument("--detector-efficiencies", type=float, nargs=2, default=(1.0, 1.0))
    p.add_argument("--accidental-rate", type=float, default=0.0, help="1/s")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_simulate_spdc)

    p = sub.add_parser("wavefunction", help="biphoton amplitudes at one signal/idler pair")
    _common(p)
    p.add_argument("--n-p", type=int, default=1)
    p.add_argument("--lambda-s", type=float, default=1550.0)
    p.add_argument("--lambda-i", type=float)
    p.set_defaults(func=cmd_wavefunction)

    p = sub.add_parser("verify-correspondence", help="check SPDC/SFG correspondence on a device")
    _common(p)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--ode-trials", type=int, default=1)
    p.set_defaults(func=cmd_verify_correspondence)

    p = sub.add_parser("reconstruct", help="amplitudes, phases and Schmidt number from measurements")
    _common(p)
    p.add_argument("--maps-dir", required=True)
    p.add_argument("--traces-dir")
    p.add_argument("--counts", help="coincidence CSV for the SPDC comparison")
    p.add_argument("--lambda-p", type=float, default=775.0)
    p.add_argument("--bandwidth", type=float, default=6.0)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("fit-phases", help="PhaseSet from interferogram trace files")
    _common(p)
    p.add_argument("--traces-dir", required=True)
    p.add_argument("--n", type=int, help="number of waveguides (default: inferred)")
    p.set_defaults(func=cmd_fit_phases)

    p = sub.add_parser("schmidt", help="Schmidt decomposition of a wavefunction JSON")
    _common(p)
    p.add_argument("--psi", required=True)
    p.set_defaults(func=cmd_schmidt)

    p = sub.add_parser("synthesize-traces", help="noiseless or noisy interferograms from a wavefunction")
    _common(p)
    p.add_argument("--psi", required=True)
    p.add_argument("--f", type=float, default=500e3, help="modulation frequency (Hz)")
    p.add_argument("--periods", type=int, default=10)
    p.add_argument("--samples-per-period", type=int, default=50)
    p.add_argument("--noise", type=float, default=0.0)
    p.set_defaults(func=cmd_synthesize_traces)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (NumericalAccuracyError, FitError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, DegenerateConfigurationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
