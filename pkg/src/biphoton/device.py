"""Device description: geometry, per-band coupled-mode parameters and poling.

Units are fixed throughout the package: lengths in um, wavelengths in nm,
angular frequencies in rad/s, powers in W. Waveguide indices are 0-based in
the Python API and 1-based in every file and on the command line.
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from biphoton.errors import ConfigError

BANDS = ("pump", "signal", "idler")


@dataclass(frozen=True)
class PolingPattern:
    """Quasi-phase-matching grating with half-period defects.

    ``defects`` are measured from ``region_start``; every domain after a
    defect is translated by half a period. ``amplitude`` scales the
    nonlinearity, either globally or per waveguide.
    """

    period: float
    duty_cycle: float
    region_start: float
    region_end: float
    defects: tuple[float, ...] = ()
    amplitude: float | tuple[float, ...] = 1.0

    def __post_init__(self):
        object.__setattr__(self, "defects", tuple(float(d) for d in self.defects))
        if not isinstance(self.amplitude, (int, float)):
            object.__setattr__(self, "amplitude", tuple(float(a) for a in self.amplitude))
        if not self.period > 0:
            raise ConfigError("poling.period", f"must be positive, got {self.period}")
        if not 0 < self.duty_cycle < 1:
            raise ConfigError("poling.duty_cycle", f"must lie in (0, 1), got {self.duty_cycle}")
        if not self.region_start < self.region_end:
            raise ConfigError(
                "poling.region_end",
                f"region_start ({self.region_start}) must be < region_end ({self.region_end})",
            )
        length = self.length
        previous = -math.inf
        for k, d in enumerate(self.defects):
            if not 0 <= d < length:
                raise ConfigError(
                    f"poling.defects[{k}]", f"{d} um lies outside the poled region [0, {length})"
                )
            if d <= previous:
                raise ConfigError(f"poling.defects[{k}]", "defects must be strictly increasing")
            previous = d

    @property
    def length(self) -> float:
        return self.region_end - self.region_start

    def amplitudes(self, n: int) -> np.ndarray:
        if isinstance(self.amplitude, tuple):
            if len(self.amplitude) != n:
                raise ConfigError(
                    "poling.amplitude", f"expected 1 or {n} values, got {len(self.amplitude)}"
                )
            return np.array(self.amplitude, dtype=float)
        return np.full(n, float(self.amplitude))

    def sign(self, z):
        return poling_sign(self, z)

    def boundaries(self) -> np.ndarray:
        """Sorted absolute positions of every domain wall, defect and region edge."""
        lam, duty = self.period, self.duty_cycle
        edges = [0.0, *self.defects, self.length]
        points = [np.array(edges)]
        for j in range(len(edges) - 1):
            lo, hi = edges[j], edges[j + 1]
            shift = j * lam / 2
            m0 = math.floor((lo - shift) / lam) - 1
            m1 = math.ceil((hi - shift) / lam) + 1
            m = np.arange(m0, m1 + 1)
            for offset in (0.0, duty):
                cand = shift + (m + offset) * lam
                points.append(cand[(cand > lo) & (cand < hi)])
        u = np.unique(np.concatenate(points))
        # merge walls that coincide with defects up to rounding
        keep = np.concatenate(([True], np.diff(u) > 1e-9 * lam))
        return self.region_start + u[keep]


def poling_sign(pattern: PolingPattern, z):
    """Sign of the nonlinearity at ``z``: +1/-1 inside the poled region, 0 outside.

    The first ``duty_cycle`` fraction of every period is positive; each defect
    passed shifts the pattern by half a period. Accepts scalars or arrays.
    """
    z_arr = np.asarray(z, dtype=float)
    u = z_arr - pattern.region_start
    inside = (u >= 0) & (z_arr <= pattern.region_end)
    passed = np.searchsorted(np.asarray(pattern.defects, dtype=float), u, side="right")
    phase = (u - passed * (pattern.period / 2)) / pattern.period
    frac = phase - np.floor(phase)
    sign = np.where(frac < pattern.duty_cycle, 1, -1)
    out = np.where(inside, sign, 0).astype(int)
    if out.ndim == 0:
        return int(out)
    return out


@dataclass(frozen=True)
class BandParams:
    """Coupled-mode parameters of one frequency band.

    ``beta0`` is the propagation constant at ``reference_wavelength`` (rad/um),
    scalar or one value per waveguide; it may be given relative to the band
    carrier, with the carrier mismatch in ``DeviceSpec.mismatch0``. ``beta1``
    is the dispersion slope in rad/um per nm. ``coupling`` holds the
    nearest-neighbour constants (scalar or N-1 values) and ``loss`` the
    power attenuation per waveguide in 1/um.

    ``nonreciprocity`` adds an antisymmetric part to the coupling that the
    backward-travelling wave sees with the same orientation. It exists only
    to demonstrate that the correspondence needs reciprocity; physical
    devices keep it at zero.
    """

    band: str
    beta0: float | tuple[float, ...] = 0.0
    beta1: float = 0.0
    reference_wavelength: float = 1550.0
    coupling: complex | tuple[complex, ...] = 0.0
    loss: float | tuple[float, ...] = 0.0
    nonreciprocity: float = 0.0

    def __post_init__(self):
        if self.band not in BANDS:
            raise ConfigError(f"band.{self.band}", f"unknown band, expected one of {BANDS}")
        for name in ("beta0", "coupling", "loss"):
            value = getattr(self, name)
            if not isinstance(value, (int, float, complex)):
                object.__setattr__(self, name, tuple(value))
        if not self.reference_wavelength > 0:
            raise ConfigError(f"band.{self.band}.reference_wavelength", "must be positive")
        loss = np.atleast_1d(np.asarray(self.loss, dtype=float))
        for k, a in enumerate(loss):
            if a < 0 or not np.isfinite(a):
                raise ConfigError(f"band.{self.band}.loss[{k}]", f"must be >= 0, got {a}")

    def _expand(self, name: str, size: int, dtype=float) -> np.ndarray:
        value = getattr(self, name)
        if isinstance(value, tuple):
            if len(value) != size:
                raise ConfigError(
                    f"band.{self.band}.{name}", f"expected 1 or {size} values, got {len(value)}"
                )
            return np.array(value, dtype=dtype)
        return np.full(size, value, dtype=dtype)

    def betas(self, n: int, wavelength: float | None = None) -> np.ndarray:
        lam = self.reference_wavelength if wavelength is None else wavelength
        return self._expand("beta0", n) + self.beta1 * (lam - self.reference_wavelength)

    def losses(self, n: int) -> np.ndarray:
        return self._expand("loss", n)

    def couplings(self, n: int) -> np.ndarray:
        return self._expand("coupling", max(n - 1, 0), dtype=complex)


@dataclass(frozen=True)
class DeviceSpec:
    """An N-waveguide chi(2) array.

    ``total_length`` is the coupling region; the poling region sits inside
    it. ``kappa`` (W^-1/2 um^-1) converts the dimensionless overlap into a
    sum-frequency field, so that eta = kappa**2 * |xi|**2. ``sbend_length``
    adds uncoupled, unpoled straight sections at both facets.
    """

    n_waveguides: int
    total_length: float
    bands: Mapping[str, BandParams]
    poling: PolingPattern
    mismatch0: float = 0.0
    kappa: float = 1.0
    sbend_length: float = 0.0
    name: str = "device"
    metadata: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if int(self.n_waveguides) != self.n_waveguides or self.n_waveguides < 1:
            raise ConfigError("device.n_waveguides", f"must be a positive integer, got {self.n_waveguides}")
        object.__setattr__(self, "n_waveguides", int(self.n_waveguides))
        if not self.total_length > 0:
            raise ConfigError("device.total_length", "must be positive")
        if self.sbend_length < 0:
            raise ConfigError("device.sbend_length", "must be >= 0")
        missing = [b for b in BANDS if b not in self.bands]
        if missing:
            raise ConfigError(f"band.{missing[0]}", "section missing")
        for key, params in self.bands.items():
            if params.band != key:
                raise ConfigError(f"band.{key}", f"holds parameters for band {params.band!r}")
            n = self.n_waveguides
            params.betas(n)
            params.losses(n)
            params.couplings(n)
        if self.poling.region_start < 0 or self.poling.region_end > self.total_length:
            raise ConfigError(
                "poling.region_end",
                f"poled region [{self.poling.region_start}, {self.poling.region_end}] "
                f"exceeds device [0, {self.total_length}]",
            )
        self.poling.amplitudes(self.n_waveguides)

    def band(self, name: str) -> BandParams:
        try:
            return self.bands[name]
        except KeyError:
            raise ConfigError(f"band.{name}", "unknown band") from None


def coupling_matrix(spec: DeviceSpec, band: str, wavelength: float | None = None) -> np.ndarray:
    """Coupled-mode matrix H with da/dz = i H a.

    Diagonal: beta_n(lambda) + i*alpha_n/2, so forward amplitudes decay under
    loss. Off-diagonals are filled from the same values on both sides, hence
    H == H.T bitwise unless the nonreciprocity hook is set. The same matrix
    governs backward-travelling waves (in their own direction of travel);
    reciprocity is then the statement H == H.T.
    """
    params = spec.band(band)
    n = spec.n_waveguides
    h = np.diag(params.betas(n, wavelength) + 0.5j * params.losses(n)).astype(complex)
    c = params.couplings(n)
    k = np.arange(n - 1)
    h[k, k + 1] = c
    h[k + 1, k] = c
    if params.nonreciprocity and n > 1:
        h[k, k + 1] += params.nonreciprocity
        h[k + 1, k] -= params.nonreciprocity
    return h


def bend_factors(spec: DeviceSpec, band: str, wavelength: float | None = None) -> np.ndarray:
    """Per-waveguide transmission of one uncoupled S-bend section."""
    params = spec.band(band)
    n = spec.n_waveguides
    diag = params.betas(n, wavelength) + 0.5j * params.losses(n)
    return np.exp(1j * diag * spec.sbend_length)


# --- configuration file --------------------------------------------------

_DEVICE_KEYS = ("name", "n_waveguides", "total_length", "mismatch0", "kappa", "sbend_length")
_POLING_KEYS = ("period", "duty_cycle", "region_start", "region_end", "defects", "amplitude")
_BAND_KEYS = ("beta0", "beta1", "reference_wavelength", "coupling", "loss", "nonreciprocity")
_REQUIRED = {
    "device": ("n_waveguides", "total_length"),
    "poling": ("period", "duty_cycle", "region_start", "region_end"),
    "band": ("beta0", "reference_wavelength"),
}


def _number(text: str, path: str, kind=float):
    try:
        if kind is complex:
            value = complex(text.replace(" ", ""))
            return value.real if value.imag == 0 else value
        return kind(text)
    except ValueError:
        raise ConfigError(path, f"not a valid number: {text!r}") from None


def _numbers(text: str, path: str, kind=float):
    parts = [p.strip() for p in text.split(",") if p.strip()]
    values = tuple(_number(p, f"{path}[{k}]", kind) for k, p in enumerate(parts))
    return values


def _scalar_or_list(text: str, path: str, kind=float):
    values = _numbers(text, path, kind)
    if not values:
        raise ConfigError(path, "empty value")
    return values[0] if len(values) == 1 else values


def parse_device_config(text: str) -> DeviceSpec:
    """Parse the sectioned key/value device document.

    Sections: ``[device]``, ``[poling]``, ``[band.pump]``, ``[band.signal]``,
    ``[band.idler]``. List values are comma separated. Keys in ``[device]``
    beyond the known fields are kept as numeric metadata (e.g. ``pitch``).
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("<document>", str(exc)) from None

    def section(name):
        if not parser.has_section(name):
            raise ConfigError(name, "section missing")
        return parser[name]

    def need(sec, key, path, group):
        if key not in sec:
            if key in _REQUIRED[group]:
                raise ConfigError(path, "required field missing")
            return None
        return sec[key]

    dev = section("device")
    for key in _REQUIRED["device"]:
        need(dev, key, f"device.{key}", "device")
    metadata = {}
    for key, value in dev.items():
        if key not in _DEVICE_KEYS:
            metadata[key] = _number(value, f"device.{key}")

    pol = section("poling")
    for key in _REQUIRED["poling"]:
        need(pol, key, f"poling.{key}", "poling")
    unknown = set(pol) - set(_POLING_KEYS)
    if unknown:
        raise ConfigError(f"poling.{sorted(unknown)[0]}", "unknown field")
    poling = PolingPattern(
        period=_number(pol["period"], "poling.period"),
        duty_cycle=_number(pol["duty_cycle"], "poling.duty_cycle"),
        region_start=_number(pol["region_start"], "poling.region_start"),
        region_end=_number(pol["region_end"], "poling.region_end"),
        defects=_numbers(pol.get("defects", ""), "poling.defects"),
        amplitude=_scalar_or_list(pol.get("amplitude", "1"), "poling.amplitude"),
    )

    bands = {}
    for name in BANDS:
        sec = section(f"band.{name}")
        path = f"band.{name}"
        for key in _REQUIRED["band"]:
            need(sec, key, f"{path}.{key}", "band")
        unknown = set(sec) - set(_BAND_KEYS)
        if unknown:
            raise ConfigError(f"{path}.{sorted(unknown)[0]}", "unknown field")
        bands[name] = BandParams(
            band=name,
            beta0=_scalar_or_list(sec["beta0"], f"{path}.beta0"),
            beta1=_number(sec.get("beta1", "0"), f"{path}.beta1"),
            reference_wavelength=_number(sec["reference_wavelength"], f"{path}.reference_wavelength"),
            coupling=_scalar_or_list(sec.get("coupling", "0"), f"{path}.coupling", complex),
            loss=_scalar_or_list(sec.get("loss", "0"), f"{path}.loss"),
            nonreciprocity=_number(sec.get("nonreciprocity", "0"), f"{path}.nonreciprocity"),
        )

    n_text = dev["n_waveguides"]
    try:
        n_value = int(n_text)
    except ValueError:
        raise ConfigError("device.n_waveguides", f"not an integer: {n_text!r}") from None
    return DeviceSpec(
        n_waveguides=n_value,
        total_length=_number(dev["total_length"], "device.total_length"),
        bands=bands,
        poling=poling,
        mismatch0=_number(dev.get("mismatch0", "0"), "device.mismatch0"),
        kappa=_number(dev.get("kappa", "1"), "device.kappa"),
        sbend_length=_number(dev.get("sbend_length", "0"), "device.sbend_length"),
        name=dev.get("name", "device"),
        metadata=metadata,
    )


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, complex):
        return repr(value).strip("()")
    return repr(float(value))


def dump_device_config(spec: DeviceSpec) -> str:
    """Serialize ``spec`` so that ``parse_device_config`` reproduces it."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser["device"] = {
        "name": spec.name,
        "n_waveguides": str(spec.n_waveguides),
        "total_length": _fmt(spec.total_length),
        "mismatch0": _fmt(spec.mismatch0),
        "kappa": _fmt(spec.kappa),
        "sbend_length": _fmt(spec.sbend_length),
        **{k: _fmt(v) for k, v in spec.metadata.items()},
    }
    p = spec.poling
    parser["poling"] = {
        "period": _fmt(p.period),
        "duty_cycle": _fmt(p.duty_cycle),
        "region_start": _fmt(p.region_start),
        "region_end": _fmt(p.region_end),
        "defects": _fmt(p.defects),
        "amplitude": _fmt(p.amplitude),
    }
    for name in BANDS:
        b = spec.bands[name]
        sec = {
            "beta0": _fmt(b.beta0),
            "beta1": _fmt(b.beta1),
            "reference_wavelength": _fmt(b.reference_wavelength),
            "coupling": _fmt(b.coupling),
            "loss": _fmt(b.loss),
        }
        if b.nonreciprocity:
            sec["nonreciprocity"] = _fmt(b.nonreciprocity)
        parser[f"band.{name}"] = sec
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def load_device(path: str | Path) -> DeviceSpec:
    return parse_device_config(Path(path).read_text())


def reference_device_path() -> Path:
    """Path of the shipped three-waveguide reference configuration."""
    return Path(str(resources.files("biphoton") / "data" / "reference_device.ini"))


def uniform_device(n: int, length: float, period: float, *, coupling: float = 0.0,
                   loss: float = 0.0, mismatch0: float | None = None,
                   defects: Sequence[float] = (), kappa: float = 1.0) -> DeviceSpec:
    """Small helper for tests and examples: identical bands, fully poled."""
    bands = {
        b: BandParams(band=b, beta0=0.0, reference_wavelength=1550.0 if b != "pump" else 775.0,
                      coupling=coupling, loss=loss)
        for b in BANDS
    }
    return DeviceSpec(
        n_waveguides=n,
        total_length=length,
        bands=bands,
        poling=PolingPattern(period, 0.5, 0.0, length, tuple(defects)),
        mismatch0=2 * math.pi / period if mismatch0 is None else mismatch0,
        kappa=kappa,
    )
