"""Wavelength-scan drivers producing plot-ready tables.

Each scan point is independent, so points are dispatched to a process pool
when ``jobs > 1``; results are assembled in grid order, which keeps the
output identical for any pool size.
"""

from __future__ import annotations

import configparser
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from biphoton.device import DeviceSpec, load_device, reference_device_path
from biphoton.engines import angular_frequency, sfg_tensor, spdc_tensor
from biphoton.errors import ConfigError
from biphoton.rates import EfficiencyMap, integrated_pair_rate

SCAN_KINDS = ("sfg_map", "degenerate_pump_scan", "spdc_spectrum")


@dataclass(frozen=True)
class Grid:
    start: float
    stop: float
    step: float

    def __post_init__(self):
        if not self.step > 0:
            raise ConfigError("grid.step", f"step must be positive, got {self.step}")
        if self.stop < self.start:
            raise ConfigError("grid.stop", f"stop {self.stop} is below start {self.start}")

    def points(self) -> np.ndarray:
        count = int(np.floor((self.stop - self.start) / self.step + 1e-9)) + 1
        return self.start + self.step * np.arange(count)


@dataclass(frozen=True)
class ScanConfig:
    """One scan: ``kind`` selects which grids and indices are used.

    sfg_map: ``signal_grid`` x ``idler_grid`` for every pair in ``pairs``,
    read at output waveguide ``output_waveguide``.
    degenerate_pump_scan: ``pump_grid`` with lambda_s = lambda_i = 2 lambda_p.
    spdc_spectrum: ``signal_grid`` on the energy-conservation line of ``lambda_p``.
    """

    kind: str
    device: str | None = None
    signal_grid: Grid | None = None
    idler_grid: Grid | None = None
    pump_grid: Grid | None = None
    lambda_p: float | None = None
    pairs: tuple[tuple[int, int], ...] | None = None
    pump_input: int = 0
    output_waveguide: int = 0
    pump_power: float = 1.0
    out_dir: str = "."
    jobs: int = 1

    def __post_init__(self):
        if self.kind not in SCAN_KINDS:
            raise ConfigError("scan.kind", f"kind must be one of {SCAN_KINDS}, got {self.kind!r}")
        need = {"sfg_map": ("signal_grid",), "degenerate_pump_scan": ("pump_grid",),
                "spdc_spectrum": ("signal_grid", "lambda_p")}[self.kind]
        for name in need:
            if getattr(self, name) is None:
                raise ConfigError(f"scan.{name}", f"required for kind {self.kind}")
        if self.pump_power < 0:
            raise ConfigError("scan.pump_power", "must be non-negative")
        if self.jobs < 1:
            raise ConfigError("scan.jobs", "must be at least 1")

    def load_device(self) -> DeviceSpec:
        return load_device(self.device if self.device else reference_device_path())

    def check_indices(self, spec: DeviceSpec) -> None:
        n = spec.n_waveguides
        idx = [("scan.pump_input", self.pump_input), ("scan.output_waveguide", self.output_waveguide)]
        for pair in self.pairs or ():
            idx += [("scan.pairs", k) for k in pair]
        for path, k in idx:
            if not 0 <= k < n:
                raise ConfigError(path, f"index {k + 1} outside 1..{n}")


def default_pairs(n: int) -> tuple[tuple[int, int], ...]:
    """Unordered input pairs n_s <= n_i, including the diagonal."""
    return tuple((a, b) for a in range(n) for b in range(a, n))


def _parse_grid(sec, prefix, path):
    keys = [f"{prefix}_{k}" for k in ("start", "stop", "step")]
    if not any(k in sec for k in keys):
        return None
    try:
        return Grid(*(float(sec[k]) for k in keys))
    except KeyError as exc:
        raise ConfigError(f"{path}.{exc.args[0]}", "missing grid bound") from None
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None


def parse_scan_config(text: str, base_dir: str | Path = ".") -> ScanConfig:
    """Read a ``[scan]`` INI section; indices in the file are 1-based."""
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("scan", f"unreadable scan file: {exc}") from None
    if "scan" not in parser:
        raise ConfigError("scan", "missing [scan] section")
    sec = parser["scan"]
    known = {"kind", "device", "lambda_p", "pairs", "pump_input", "output_waveguide", "pump_power",
             "out_dir", "jobs"}
    known |= {f"{g}_{k}" for g in ("signal", "idler", "pump") for k in ("start", "stop", "step")}
    for key in sec:
        if key not in known:
            raise ConfigError(f"scan.{key}", "unknown key")
    if "kind" not in sec:
        raise ConfigError("scan.kind", "required")

    def num(key, kind=float, default=None):
        if key not in sec:
            return default
        try:
            return kind(sec[key])
        except ValueError:
            raise ConfigError(f"scan.{key}", f"not a number: {sec[key]!r}") from None

    pairs = None
    if "pairs" in sec:
        try:
            pairs = tuple(tuple(int(v) - 1 for v in item.split("-")) for item in sec["pairs"].split(","))
        except ValueError:
            raise ConfigError("scan.pairs", "expected e.g. '1-1, 1-2, 2-3'") from None
        if any(len(p) != 2 for p in pairs):
            raise ConfigError("scan.pairs", "each pair needs two indices")
    device = sec.get("device")
    if device:
        device = str(Path(base_dir) / device)
    return ScanConfig(
        kind=sec["kind"].strip(),
        device=device,
        signal_grid=_parse_grid(sec, "signal", "scan.signal"),
        idler_grid=_parse_grid(sec, "idler", "scan.idler"),
        pump_grid=_parse_grid(sec, "pump", "scan.pump"),
        lambda_p=num("lambda_p"),
        pairs=pairs,
        pump_input=num("pump_input", int, 1) - 1,
        output_waveguide=num("output_waveguide", int, 1) - 1,
        pump_power=num("pump_power", float, 1.0),
        out_dir=sec.get("out_dir", "."),
        jobs=num("jobs", int, 1),
    )


def _pool_map(fn, args: Sequence, jobs: int):
    if jobs <= 1 or len(args) <= 1:
        return [fn(a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, args, chunksize=max(1, len(args) // (4 * jobs))))


def _sfg_point(args):
    spec, ls, li = args
    return sfg_tensor(spec, angular_frequency(ls), angular_frequency(li))


def _spdc_point(args):
    spec, ls, li = args
    return spdc_tensor(spec, angular_frequency(ls), angular_frequency(li))


def sfg_maps(spec: DeviceSpec, signal_grid: Grid, idler_grid: Grid | None = None,
             pairs=None, output_waveguide: int = 0, jobs: int = 1) -> list[EfficiencyMap]:
    """Efficiency maps kappa^2 |xi[out, n_s, n_i]|^2 over the wavelength grid for each pair."""
    ls = signal_grid.points()
    li = (idler_grid or signal_grid).points()
    pairs = default_pairs(spec.n_waveguides) if pairs is None else tuple(pairs)
    points = [(spec, a, b) for a in ls for b in li]
    tensors = _pool_map(_sfg_point, points, jobs)
    stack = np.array([t[output_waveguide] for t in tensors]).reshape(ls.size, li.size,
                                                                    spec.n_waveguides,
                                                                    spec.n_waveguides)
    eta = spec.kappa ** 2 * np.abs(stack) ** 2
    return [EfficiencyMap(p, ls, li, eta[:, :, p[0], p[1]], output_waveguide=output_waveguide)
            for p in pairs]


@dataclass(frozen=True)
class ScanTable:
    """Column-oriented result of a 1-D scan."""

    columns: tuple[str, ...]
    rows: np.ndarray

    def to_csv(self) -> str:
        lines = [",".join(self.columns)]
        lines += [",".join(repr(float(v)) for v in row) for row in self.rows]
        return "\n".join(lines) + "\n"

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.columns.index(name)]


def _pair_label(p):
    return f"s{p[0] + 1}_i{p[1] + 1}"


def degenerate_pump_scan(spec: DeviceSpec, pump_grid: Grid, pump_input: int = 0,
                         pairs=None, jobs: int = 1) -> ScanTable:
    """|psi|^2 per element, normalized over all N^2 elements, versus pump wavelength.

    Signal and idler are degenerate at twice the pump wavelength. The
    ``norm2_um2`` column keeps the absolute scale sum |psi|^2.
    """
    lp = pump_grid.points()
    pairs = default_pairs(spec.n_waveguides) if pairs is None else tuple(pairs)
    tensors = _pool_map(_spdc_point, [(spec, 2 * x, 2 * x) for x in lp], jobs)
    rows = []
    for x, t in zip(lp, tensors):
        p = np.abs(t[pump_input]) ** 2
        total = p.sum()
        rel = p / total if total > 0 else p
        rows.append([x] + [rel[a, b] for a, b in pairs] + [total])
    cols = ("lambda_p_nm",) + tuple(f"rel_{_pair_label(p)}" for p in pairs) + ("norm2_um2",)
    return ScanTable(cols, np.array(rows, dtype=float).reshape(len(rows), len(cols)))


def spdc_spectrum(spec: DeviceSpec, signal_grid: Grid, lambda_p: float, pump_input: int = 0,
                  pairs=None, pump_power: float = 1.0, jobs: int = 1) -> ScanTable:
    """Pair rate per signal bin on the energy-conservation line, for each ordered element.

    Rates are pump_power * kappa^2 |psi|^2 converted with the discretized rate
    formula at the grid step, in pairs/s per bin.
    """
    ls = signal_grid.points()
    ls = ls[ls > lambda_p]
    if ls.size == 0:
        raise ConfigError("scan.signal", "no signal wavelengths above the pump wavelength")
    li = 1 / (1 / lambda_p - 1 / ls)
    n = spec.n_waveguides
    pairs = tuple((a, b) for a in range(n) for b in range(n)) if pairs is None else tuple(pairs)
    tensors = _pool_map(_spdc_point, [(spec, a, b) for a, b in zip(ls, li)], jobs)
    rows = []
    for a, b, t in zip(ls, li, tensors):
        eta = spec.kappa ** 2 * np.abs(t[pump_input]) ** 2
        rates = [pump_power * integrated_pair_rate(eta[p], a, b, lambda_p, signal_grid.step)
                 for p in pairs]
        rows.append([a, b] + rates)
    cols = ("lambda_s_nm", "lambda_i_nm") + tuple(f"rate_{_pair_label(p)}_per_s" for p in pairs)
    return ScanTable(cols, np.array(rows, dtype=float))


def run_scan(config: ScanConfig, spec: DeviceSpec | None = None):
    """Execute ``config``; returns a list of EfficiencyMaps or a ScanTable."""
    spec = config.load_device() if spec is None else spec
    config.check_indices(spec)
    if config.kind == "sfg_map":
        return sfg_maps(spec, config.signal_grid, config.idler_grid, config.pairs,
                        config.output_waveguide, config.jobs)
    if config.kind == "degenerate_pump_scan":
        return degenerate_pump_scan(spec, config.pump_grid, config.pump_input, config.pairs,
                                    config.jobs)
    return spdc_spectrum(spec, config.signal_grid, config.lambda_p, config.pump_input,
                         config.pairs, config.pump_power, config.jobs)
