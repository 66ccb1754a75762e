"""Classical SFG efficiencies to SPDC pair rates, and the reduction of coincidence counts.

Speed of light is the exact SI value 299 792 458 m/s.
"""

from __future__ import annotations

import csv
import math
import re
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT


@dataclass(frozen=True)
class EfficiencyMap:
    """eta[j, k] (W^-1) at (lambda_s_grid[j], lambda_i_grid[k]) for one input pair."""

    input_pair: tuple[int, int]
    lambda_s_grid: np.ndarray
    lambda_i_grid: np.ndarray
    eta: np.ndarray
    shg_corrected: bool = False
    output_waveguide: int = 0

    def __post_init__(self):
        ls = np.asarray(self.lambda_s_grid, dtype=float)
        li = np.asarray(self.lambda_i_grid, dtype=float)
        eta = np.asarray(self.eta, dtype=float)
        object.__setattr__(self, "lambda_s_grid", ls)
        object.__setattr__(self, "lambda_i_grid", li)
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "input_pair", tuple(int(k) for k in self.input_pair))
        if eta.shape != (ls.size, li.size):
            raise ValueError(f"eta has shape {eta.shape}, grids imply {(ls.size, li.size)}")
        for name, grid in (("lambda_s_grid", ls), ("lambda_i_grid", li)):
            if grid.size > 1 and np.any(np.diff(grid) <= 0):
                raise ValueError(f"{name} must be strictly increasing")
        if np.any(eta < 0) or not np.all(np.isfinite(eta)):
            raise ValueError("eta must be finite and non-negative")


@dataclass(frozen=True)
class CoincidenceRecord:
    output_pair: tuple[int, int]
    counts_in_peak: int
    accidentals: int
    acquisition_time: float
    transmissions: tuple[float, float] = (1.0, 1.0)
    detector_efficiencies: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if self.counts_in_peak < 0 or self.accidentals < 0:
            raise ValueError("counts must be non-negative")
        if not self.acquisition_time > 0:
            raise ValueError("acquisition_time must be positive")
        for name in ("transmissions", "detector_efficiencies"):
            for v in getattr(self, name):
                if not 0 < v <= 1:
                    raise ValueError(f"{name} must lie in (0, 1], got {v}")


def pair_rate_spectral_density(eta: float, omega_s: float, omega_i: float) -> float:
    """(1/P_p) dN/(d omega_s dt) = omega_s omega_i / (2 pi omega_p^2) * eta."""
    if eta < 0:
        raise ValueError(f"eta must be non-negative, got {eta}")
    if not (omega_s > 0 and omega_i > 0):
        raise ValueError("frequencies must be positive")
    omega_p = omega_s + omega_i
    return omega_s * omega_i / (2 * math.pi * omega_p ** 2) * eta


def integrated_pair_rate(eta, lambda_s, lambda_i, lambda_p: float, delta_lambda: float,
                         tol: float | None = None) -> float:
    """Pair rate per watt of pump (s^-1 W^-1) from efficiencies on the energy-conservation line.

    sum_j eta_j * lambda_p^2 / (lambda_s_j lambda_i_j) * c * delta_lambda / lambda_s_j^2,
    wavelengths in nm. ``tol`` (nm, default delta_lambda/2) bounds the allowed
    idler offset from 1/lambda_i = 1/lambda_p - 1/lambda_s.
    """
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    ls = np.atleast_1d(np.asarray(lambda_s, dtype=float))
    li = np.atleast_1d(np.asarray(lambda_i, dtype=float))
    if eta.size == 0:
        raise ValueError("empty slice")
    if not (eta.shape == ls.shape == li.shape):
        raise ValueError("eta, lambda_s and lambda_i must have the same length")
    if np.any(eta < 0):
        raise ValueError("eta must be non-negative")
    tol = delta_lambda / 2 if tol is None else tol
    target = 1 / (1 / lambda_p - 1 / ls)
    off = np.abs(li - target)
    if np.any(off > tol):
        raise ValueError(f"slice violates energy conservation by up to {off.max():.3g} nm")
    nm = 1e-9
    terms = eta * lambda_p ** 2 / (ls * li) * SPEED_OF_LIGHT * (delta_lambda * nm) / (ls * nm) ** 2
    return float(np.sum(terms))


class EnergySlice(NamedTuple):
    lambda_s: np.ndarray
    lambda_i: np.ndarray
    eta: np.ndarray


def energy_slice(emap: EfficiencyMap, lambda_p: float, bandwidth: float,
                 center: float | None = None) -> EnergySlice:
    """Grid points on 1/lambda_s + 1/lambda_i = 1/lambda_p within the signal band.

    For each signal wavelength within ``bandwidth`` of ``center`` (default
    2*lambda_p) the nearest idler grid point is taken if it lies within half
    an idler grid step of the exact partner wavelength.
    """
    center = 2 * lambda_p if center is None else center
    ls, li = emap.lambda_s_grid, emap.lambda_i_grid
    half = (np.min(np.diff(li)) / 2) if li.size > 1 else 1e-9 * li[0]
    in_band = np.abs(ls - center) <= bandwidth / 2 * (1 + 1e-12)
    rows, idler, values = [], [], []
    for j in np.flatnonzero(in_band):
        if ls[j] <= lambda_p:
            continue
        partner = 1 / (1 / lambda_p - 1 / ls[j])
        k = int(np.argmin(np.abs(li - partner)))
        if abs(li[k] - partner) <= half * (1 + 1e-9):
            rows.append(ls[j])
            idler.append(li[k])
            values.append(emap.eta[j, k])
    return EnergySlice(np.array(rows), np.array(idler), np.array(values))


def _grid_step(grid):
    return float(np.min(np.diff(grid))) if grid.size > 1 else 0.0


def band_rate(emap: EfficiencyMap, lambda_p: float, bandwidth: float) -> float:
    """integrated_pair_rate over the energy-conservation slice of one map."""
    sl = energy_slice(emap, lambda_p, bandwidth)
    if sl.eta.size == 0:
        raise ValueError(f"map {emap.input_pair} has no points on the {lambda_p} nm pump line")
    step = _grid_step(emap.lambda_s_grid) or bandwidth
    tol = max(_grid_step(emap.lambda_i_grid) / 2, 1e-9)
    return integrated_pair_rate(sl.eta, sl.lambda_s, sl.lambda_i, lambda_p, step, tol=tol * (1 + 1e-9))


def _fill_matrix(values: Mapping[tuple[int, int], float], n: int | None) -> np.ndarray:
    if not values:
        raise ValueError("no inputs")
    size = max(max(p) for p in values) + 1
    n = size if n is None else n
    out = np.full((n, n), np.nan)
    for (a, b), v in values.items():
        out[a, b] = v
    for (a, b), v in values.items():
        if np.isnan(out[b, a]):
            out[b, a] = v
    out = np.nan_to_num(out, nan=0.0)
    total = out.sum()
    if not total > 0:
        raise ValueError("all inputs are zero")
    return out / total


def relative_amplitudes_from_sfg(maps: Iterable[EfficiencyMap], lambda_p: float,
                                 bandwidth: float, n: int | None = None) -> np.ndarray:
    """|psi|^2 matrix (unit sum) from band-integrated SFG efficiencies.

    Each element is sum_j eta_j over its map's energy-conservation slice. A
    pair measured in one order only fills its transposed element too.
    """
    maps = list(maps)
    if not maps:
        raise ValueError("no maps given")
    ref = maps[0]
    for m in maps[1:]:
        if not (np.array_equal(m.lambda_s_grid, ref.lambda_s_grid)
                and np.array_equal(m.lambda_i_grid, ref.lambda_i_grid)):
            raise ValueError(f"map {m.input_pair} does not share the grid of map {ref.input_pair}")
    span = ref.lambda_s_grid[-1] - ref.lambda_s_grid[0]
    if bandwidth > span + _grid_step(ref.lambda_s_grid) + 1e-9:
        raise ValueError(f"bandwidth {bandwidth} nm exceeds the grid span {span} nm")
    sums = {}
    for m in maps:
        sums[m.input_pair] = float(np.sum(energy_slice(m, lambda_p, bandwidth).eta))
    return _fill_matrix(sums, n)


def spdc_rate_from_counts(rec: CoincidenceRecord) -> float:
    """Pair rate (1/s): net coincidences over time, transmissions and detector efficiencies."""
    mu_s, mu_i = rec.transmissions
    e1, e2 = rec.detector_efficiencies
    net = rec.counts_in_peak - rec.accidentals
    if net < 0:
        warnings.warn(
            f"accidentals ({rec.accidentals}) exceed peak counts ({rec.counts_in_peak}) "
            f"for pair {rec.output_pair}; rate clamped to 0",
            RuntimeWarning,
            stacklevel=2,
        )
        net = 0
    return net / (rec.acquisition_time * mu_s * mu_i * e1 * e2)


def relative_amplitudes_from_counts(records: Iterable[CoincidenceRecord], n: int | None = None,
                                    power_factors: Mapping[tuple[int, int], float] | None = None
                                    ) -> np.ndarray:
    """|psi|^2 matrix (unit sum) from coincidences corrected for channel transmissions.

    ``power_factors`` rescale individual pairs, e.g. by the ratio of a
    reference channel's average singles to its value during that
    acquisition, to undo pump power drifts.
    """
    factors = power_factors or {}
    rates = {}
    for rec in records:
        rates[tuple(rec.output_pair)] = spdc_rate_from_counts(rec) * factors.get(tuple(rec.output_pair), 1.0)
    return _fill_matrix(rates, n)


class ShgCorrected(NamedTuple):
    power: float
    clamped: bool


def shg_subtract(measured_total: float, shg_signal_only: float, shg_idler_only: float) -> ShgCorrected:
    """Remove second-harmonic contributions from a sum-frequency power reading."""
    for v in (measured_total, shg_signal_only, shg_idler_only):
        if v < 0:
            raise ValueError("powers must be non-negative")
    net = measured_total - shg_signal_only - shg_idler_only
    if net < 0:
        return ShgCorrected(0.0, True)
    return ShgCorrected(net, False)


# --- files ---------------------------------------------------------------

MAP_HEADER = ("lambda_s_nm", "lambda_i_nm", "eta_per_W")
RECORD_HEADER = ("ns", "ni", "counts", "accidentals", "dt_s", "mu_s", "mu_i", "eta1", "eta2")
_MAP_NAME = re.compile(r"sfg_map_s(\d+)_i(\d+)\.csv$")


def map_filename(pair: Sequence[int]) -> str:
    return f"sfg_map_s{pair[0] + 1}_i{pair[1] + 1}.csv"


def write_efficiency_map(path: str | Path, emap: EfficiencyMap) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MAP_HEADER)
        for j, ls in enumerate(emap.lambda_s_grid):
            for k, li in enumerate(emap.lambda_i_grid):
                w.writerow((repr(float(ls)), repr(float(li)), repr(float(emap.eta[j, k]))))


def read_efficiency_map(path: str | Path, input_pair: Sequence[int] | None = None,
                        shg_corrected: bool = False) -> EfficiencyMap:
    path = Path(path)
    if input_pair is None:
        m = _MAP_NAME.search(path.name)
        if not m:
            raise ValueError(f"cannot infer the input pair from file name {path.name!r}")
        input_pair = (int(m.group(1)) - 1, int(m.group(2)) - 1)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = tuple(h.strip() for h in rows[0])
    if header != MAP_HEADER:
        raise ValueError(f"{path}: expected header {','.join(MAP_HEADER)}, got {','.join(header)}")
    data = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=float).reshape(-1, 3)
    ls = np.unique(data[:, 0])
    li = np.unique(data[:, 1])
    eta = np.full((ls.size, li.size), np.nan)
    eta[np.searchsorted(ls, data[:, 0]), np.searchsorted(li, data[:, 1])] = data[:, 2]
    if np.any(np.isnan(eta)):
        raise ValueError(f"{path}: map is not a complete rectangular grid")
    return EfficiencyMap(tuple(input_pair), ls, li, eta, shg_corrected)


def read_map_dir(directory: str | Path) -> list[EfficiencyMap]:
    files = sorted(p for p in Path(directory).iterdir() if _MAP_NAME.search(p.name))
    return [read_efficiency_map(p) for p in files]


def write_records(path: str | Path, records: Iterable[CoincidenceRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RECORD_HEADER)
        for r in records:
            w.writerow((r.output_pair[0] + 1, r.output_pair[1] + 1, r.counts_in_peak, r.accidentals,
                        repr(float(r.acquisition_time)), *(repr(float(v)) for v in r.transmissions),
                        *(repr(float(v)) for v in r.detector_efficiencies)))


def read_records(path: str | Path) -> list[CoincidenceRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh, skipinitialspace=True)
        missing = set(RECORD_HEADER) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        out = []
        for row in reader:
            out.append(CoincidenceRecord(
                (int(row["ns"]) - 1, int(row["ni"]) - 1),
                int(row["counts"]),
                int(row["accidentals"]),
                float(row["dt_s"]),
                (float(row["mu_s"]), float(row["mu_i"])),
                (float(row["eta1"]), float(row["eta2"])),
            ))
    return out
