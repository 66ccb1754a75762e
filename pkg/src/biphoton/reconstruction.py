"""Phase retrieval from SFG interferograms, fidelity and Schmidt decomposition.

Phases are wrapped to (-pi, pi] everywhere. Interferometric phases are only
defined up to per-mode signal and idler offsets (the probe-beam gauge), so
the measured matrix is arg psi[s, i] - arg psi[0, 0] - theta_s[s] - theta_i[i].
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from biphoton.errors import DegenerateConfigurationError, FitError
from biphoton.rates import CoincidenceRecord

KINDS = ("sfg", "signal", "idler")


def wrap_phase(x):
    """Map angles onto (-pi, pi]."""
    out = np.pi - np.mod(np.pi - np.asarray(x, dtype=float), 2 * np.pi)
    return float(out) if np.ndim(out) == 0 else out


def phase_distance(a, b):
    """Distance on the unit circle, |arg(exp(i(a - b)))|."""
    return np.abs(np.angle(np.exp(1j * (np.asarray(a) - np.asarray(b)))))


@dataclass(frozen=True)
class InterferogramTrace:
    time: np.ndarray
    value: np.ndarray
    f: float
    kind: str = "sfg"

    def __post_init__(self):
        t = np.asarray(self.time, dtype=float)
        v = np.asarray(self.value, dtype=float)
        object.__setattr__(self, "time", t)
        object.__setattr__(self, "value", v)
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if t.shape != v.shape or t.ndim != 1:
            raise ValueError("time and value must be 1-D arrays of equal length")
        if not self.f > 0:
            raise ValueError("modulation frequency must be positive")
        if t.size < 2:
            raise ValueError("need at least two samples")
        dt = np.diff(t)
        if np.any(dt <= 0) or np.ptp(dt) > 1e-6 * dt.mean():
            raise ValueError("samples must be uniformly spaced in time")
        if 1 / (dt.mean() * self.f) < 4:
            raise ValueError("need at least 4 samples per modulation period")
        if (t[-1] - t[0] + dt.mean()) * self.f < 3 * (1 - 1e-9):
            raise ValueError("trace must span at least 3 modulation periods")


@dataclass(frozen=True)
class ToneFit:
    """y = a cos(c - 2 pi f t) + d; ``cov`` is over (a, c, d)."""

    a: float
    c: float
    d: float
    cov: np.ndarray
    rms: float

    @property
    def sigma_c(self) -> float:
        return float(math.sqrt(self.cov[1, 1]))


@dataclass(frozen=True)
class TwoToneFit:
    """y = a1 cos(c1 - 2 pi f t) + a2 cos(c2 - 4 pi f t) + d; ``cov`` over (a1, c1, a2, c2, d)."""

    a1: float
    c1: float
    a2: float
    c2: float
    d: float
    cov: np.ndarray
    rms: float

    @property
    def sigma_c2(self) -> float:
        return float(math.sqrt(self.cov[3, 3]))


def _harmonic_fit(trace: InterferogramTrace, harmonics: Sequence[int]):
    t = trace.time
    y = trace.value
    cols = []
    for k in harmonics:
        w = 2 * np.pi * k * trace.f * t
        cols += [np.cos(w), np.sin(w)]
    cols.append(np.ones_like(t))
    x = np.column_stack(cols)
    p = x.shape[1]
    if t.size <= p:
        raise FitError(f"{t.size} samples cannot determine {p} parameters")
    coef, _, rank, sv = np.linalg.lstsq(x, y, rcond=None)
    resid = y - x @ coef
    rms = float(np.sqrt(np.mean(resid ** 2)))
    if rank < p or not np.all(np.isfinite(coef)):
        raise FitError(f"design matrix has rank {rank} < {p}; sampling aliases the harmonics",
                       residual_rms=rms, rank=int(rank))
    dof = t.size - p
    sigma2 = float(resid @ resid) / dof
    cov_lin = sigma2 * np.linalg.inv(x.T @ x)
    # (A_k, B_k) -> (a_k, c_k) with a cos(c - wt) = a cos c cos wt + a sin c sin wt
    jac = np.zeros((p, p))
    params = []
    for h in range(len(harmonics)):
        A, B = coef[2 * h], coef[2 * h + 1]
        a = math.hypot(A, B)
        c = math.atan2(B, A)
        params += [a, wrap_phase(c)]
        if a > 0:
            jac[2 * h, 2 * h:2 * h + 2] = (A / a, B / a)
            jac[2 * h + 1, 2 * h:2 * h + 2] = (-B / a ** 2, A / a ** 2)
        else:
            jac[2 * h + 1, 2 * h:2 * h + 2] = np.inf
    jac[-1, -1] = 1.0
    params.append(float(coef[-1]))
    with np.errstate(invalid="ignore"):
        cov = jac @ cov_lin @ jac.T
    return params, np.nan_to_num(cov, nan=np.inf), rms


def fit_single_tone(trace: InterferogramTrace, f: float | None = None) -> ToneFit:
    """Closed-form least squares for a single tone at the modulation frequency."""
    if f is not None and f != trace.f:
        trace = InterferogramTrace(trace.time, trace.value, f, trace.kind)
    (a, c, d), cov, rms = _harmonic_fit(trace, (1,))
    return ToneFit(a, c, d, cov, rms)


def fit_two_tone(trace: InterferogramTrace, f: float | None = None) -> TwoToneFit:
    """Closed-form least squares with tones at f and 2f plus an offset."""
    if f is not None and f != trace.f:
        trace = InterferogramTrace(trace.time, trace.value, f, trace.kind)
    (a1, c1, a2, c2, d), cov, rms = _harmonic_fit(trace, (1, 2))
    return TwoToneFit(a1, c1, a2, c2, d, cov, rms)


def extract_relative_phase(fit_sfg: TwoToneFit, fit_signal: ToneFit, fit_idler: ToneFit):
    """(c2 - c_s - c_i wrapped, 1-sigma from the three fits in quadrature)."""
    phase = wrap_phase(fit_sfg.c2 - fit_signal.c - fit_idler.c)
    sigma = math.sqrt(fit_sfg.cov[3, 3] + fit_signal.cov[1, 1] + fit_idler.cov[1, 1])
    return phase, sigma


class TraceTriple(NamedTuple):
    sfg: InterferogramTrace
    signal: InterferogramTrace
    idler: InterferogramTrace
    truth: dict


def _gauge(values, n, rng):
    if values is None:
        v = rng.uniform(-np.pi, np.pi, n)
    else:
        v = np.asarray(values, dtype=float)
        if v.shape != (n,):
            raise ValueError(f"gauge phases must have shape ({n},)")
    return v - v[0]


def synthesize_traces(psi, pair: tuple[int, int], f: float, duration: float, sample_rate: float,
                      noise_sigma: float = 0.0, seed=None, theta_s=None, theta_i=None,
                      delta_phi_s: float | None = None, delta_phi_i: float | None = None
                      ) -> TraceTriple:
    """Photodiode traces of the three interferometers for one probe pair.

    Signal and idler are each split between waveguide 0 (the reference,
    phase-ramped at 2 pi f t) and the probe waveguides ``pair``. The SFG
    trace is |sum over the four input combinations|^2, which carries a 2f
    tone from the reference/probe product and f tones from the mixed
    combinations. ``theta_s``/``theta_i`` are the per-mode linear phases of
    the probe beams at the detected output; unspecified phases are drawn
    from ``seed``.
    """
    amp = np.asarray(getattr(psi, "psi", psi), dtype=complex)
    n = amp.shape[0]
    ns, ni = pair
    if (ns, ni) == (0, 0):
        raise DegenerateConfigurationError("pair (0, 0) is the phase reference itself")
    if amp[0, 0] == 0 or amp[ns, ni] == 0:
        raise DegenerateConfigurationError("reference and probed elements must be non-zero")
    rng = np.random.default_rng(seed)
    th_s = _gauge(theta_s, n, rng)
    th_i = _gauge(theta_i, n, rng)
    dps = rng.uniform(-np.pi, np.pi) if delta_phi_s is None else float(delta_phi_s)
    dpi = rng.uniform(-np.pi, np.pi) if delta_phi_i is None else float(delta_phi_i)
    amp = amp / np.max(np.abs(amp))

    count = int(round(duration * sample_rate))
    t = np.arange(count) / sample_rate
    ramp = np.exp(2j * np.pi * f * t)
    s_in = {0: ramp, 1: np.full_like(ramp, np.exp(1j * dps))}
    i_in = {0: ramp, 1: np.full_like(ramp, np.exp(1j * dpi))}
    s_mode = {0: 0, 1: ns}
    i_mode = {0: 0, 1: ni}
    field = np.zeros_like(ramp)
    for a in (0, 1):
        for b in (0, 1):
            field += amp[s_mode[a], i_mode[b]] * s_in[a] * i_in[b]
    sfg = np.abs(field) ** 2
    signal = np.abs(s_in[0] + np.exp(1j * th_s[ns]) * s_in[1]) ** 2
    idler = np.abs(i_in[0] + np.exp(1j * th_i[ni]) * i_in[1]) ** 2
    if noise_sigma > 0:
        sfg = sfg + rng.normal(0, noise_sigma, count)
        signal = signal + rng.normal(0, noise_sigma, count)
        idler = idler + rng.normal(0, noise_sigma, count)

    theta_sfg = np.angle(amp[ns, ni]) - np.angle(amp[0, 0])
    truth = {
        "phase": wrap_phase(theta_sfg - th_s[ns] - th_i[ni]),
        "c2": wrap_phase(theta_sfg + dps + dpi),
        "c_s": wrap_phase(th_s[ns] + dps),
        "c_i": wrap_phase(th_i[ni] + dpi),
        "theta_s": th_s,
        "theta_i": th_i,
    }
    return TraceTriple(
        InterferogramTrace(t, sfg, f, "sfg"),
        InterferogramTrace(t, signal, f, "signal"),
        InterferogramTrace(t, idler, f, "idler"),
        truth,
    )


@dataclass(frozen=True)
class PhaseSet:
    """Gauge-reduced phases relative to element (0, 0); NaN where not measured."""

    theta: np.ndarray
    uncertainties: np.ndarray

    def __post_init__(self):
        th = np.array(self.theta, dtype=float)
        sig = np.array(self.uncertainties, dtype=float)
        th[0, 0] = 0.0
        sig[0, 0] = 0.0
        finite = np.isfinite(th)
        th[finite] = wrap_phase(th[finite])
        object.__setattr__(self, "theta", th)
        object.__setattr__(self, "uncertainties", sig)

    @property
    def complete(self) -> bool:
        return bool(np.all(np.isfinite(self.theta)))

    def to_json(self) -> dict:
        def rows(m):
            return [[None if not np.isfinite(v) else float(v) for v in r] for r in m]
        return {"units": "rad", "reference": [1, 1], "convention": "wrapped to (-pi, pi]",
                "theta": rows(self.theta), "uncertainties": rows(self.uncertainties)}

    @classmethod
    def from_json(cls, doc: Mapping) -> "PhaseSet":
        def arr(m):
            return np.array([[np.nan if v is None else v for v in r] for r in m], dtype=float)
        return cls(arr(doc["theta"]), arr(doc["uncertainties"]))


def phases_from_traces(traces: Mapping[tuple[int, int], TraceTriple | Sequence[InterferogramTrace]],
                       n: int) -> PhaseSet:
    theta = np.full((n, n), np.nan)
    sigma = np.full((n, n), np.nan)
    for (ns, ni), tr in traces.items():
        sfg, sig, idl = tr[0], tr[1], tr[2]
        phase, err = extract_relative_phase(fit_two_tone(sfg), fit_single_tone(sig),
                                            fit_single_tone(idl))
        theta[ns, ni] = phase
        sigma[ns, ni] = err
    return PhaseSet(theta, sigma)


def measure_phases(psi, f: float = 500e3, periods: int = 10, samples_per_period: int = 50,
                   noise_sigma: float = 0.0, seed=None, theta_s=None, theta_i=None):
    """Synthesize and fit every probe pair; returns (PhaseSet, truth matrix)."""
    amp = np.asarray(getattr(psi, "psi", psi), dtype=complex)
    n = amp.shape[0]
    rng = np.random.default_rng(seed)
    th_s = _gauge(theta_s, n, rng)
    th_i = _gauge(theta_i, n, rng)
    traces = {}
    for ns in range(n):
        for ni in range(n):
            if (ns, ni) == (0, 0):
                continue
            traces[(ns, ni)] = synthesize_traces(
                amp, (ns, ni), f, periods / f, samples_per_period * f, noise_sigma,
                seed=rng, theta_s=th_s, theta_i=th_i)
    return phases_from_traces(traces, n), gauge_reduced_phases(amp, th_s, th_i)


def gauge_reduced_phases(psi, theta_s, theta_i) -> np.ndarray:
    amp = np.asarray(getattr(psi, "psi", psi), dtype=complex)
    th_s = np.asarray(theta_s, dtype=float)
    th_i = np.asarray(theta_i, dtype=float)
    rel = np.angle(amp) - np.angle(amp[0, 0]) - th_s[:, None] - th_i[None, :]
    out = wrap_phase(rel)
    out[0, 0] = 0.0
    return out


def reconstruct_state(probabilities, phases: PhaseSet) -> np.ndarray:
    """sqrt(|psi|^2) * exp(i theta); requires a complete PhaseSet."""
    p = np.asarray(probabilities, dtype=float)
    if not phases.complete:
        raise DegenerateConfigurationError("phases missing for some elements")
    return np.sqrt(p) * np.exp(1j * phases.theta)


def _as_probability(m, name):
    m = np.asarray(m, dtype=float)
    if np.any(m < 0):
        raise ValueError(f"{name} has negative entries")
    total = m.sum()
    if not total > 0:
        raise ValueError(f"{name} sums to zero")
    return m / total


def fidelity(p, q) -> float:
    """sum sqrt(p * q) after renormalizing both matrices to unit sum."""
    p = _as_probability(p, "p")
    q = _as_probability(q, "q")
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {q.shape}")
    return float(np.sum(np.sqrt(p * q)))


def _mc_chunk(p, sp, q, sq, cycles, seed_seq):
    rng = np.random.default_rng(seed_seq)
    pp = np.clip(p + sp * rng.standard_normal((cycles,) + p.shape), 0, None)
    qq = np.clip(q + sq * rng.standard_normal((cycles,) + q.shape), 0, None)
    axes = tuple(range(1, pp.ndim))
    pp /= pp.sum(axis=axes, keepdims=True)
    qq /= qq.sum(axis=axes, keepdims=True)
    return np.sum(np.sqrt(pp * qq), axis=axes)


def fidelity_error_mc(p, sigma_p, q, sigma_q, n_cycles: int = 10**6, seed=0,
                      chunk: int = 100_000, jobs: int = 1):
    """Monte Carlo mean and standard deviation of the fidelity.

    Each cycle perturbs every entry with its own Gaussian sigma, clamps
    negative values to zero and renormalizes both matrices. Chunks draw from
    independent child seeds, so the result does not depend on ``jobs``.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    sp = np.broadcast_to(np.asarray(sigma_p, dtype=float), p.shape)
    sq = np.broadcast_to(np.asarray(sigma_q, dtype=float), q.shape)
    if np.any(sp < 0) or np.any(sq < 0):
        raise ValueError("sigmas must be non-negative")
    if not np.any(sp) and not np.any(sq):
        return fidelity(p, q), 0.0
    sizes = [min(chunk, n_cycles - k) for k in range(0, n_cycles, chunk)]
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(jobs) as pool:
            parts = list(pool.map(_mc_chunk, *zip(*[(p, sp, q, sq, m, s) for m, s in zip(sizes, seeds)])))
    else:
        parts = [_mc_chunk(p, sp, q, sq, m, s) for m, s in zip(sizes, seeds)]
    values = np.concatenate(parts)
    return float(values.mean()), float(values.std(ddof=1))


@dataclass(frozen=True)
class SchmidtResult:
    """psi / |psi| = sum_j sqrt(coefficients[j]) * outer(left[j], right[j])."""

    coefficients: np.ndarray
    left: np.ndarray
    right: np.ndarray
    schmidt_number: float

    def to_json(self) -> dict:
        def cplx(m):
            return [[[float(v.real), float(v.imag)] for v in r] for r in m]
        return {
            "schmidt_number": self.schmidt_number,
            "coefficients": [float(c) for c in self.coefficients],
            "left_modes": cplx(self.left),
            "right_modes": cplx(self.right),
            "units": {"schmidt_number": "dimensionless", "coefficients": "probability",
                      "modes": "[re, im] amplitude per waveguide"},
        }


def schmidt(psi) -> SchmidtResult:
    amp = np.asarray(getattr(psi, "psi", psi), dtype=complex)
    norm = np.linalg.norm(amp)
    if norm == 0:
        raise ValueError("zero wavefunction has no Schmidt decomposition")
    u, s, vh = np.linalg.svd(amp / norm)
    coeffs = s ** 2
    coeffs = coeffs / coeffs.sum()
    return SchmidtResult(coeffs, u.T, vh, float(1 / np.sum(coeffs ** 2)))


def synth_coincidences(psi, total_rate: float, dt: float, transmissions, detector_effs=(1.0, 1.0),
                       seed=None, accidental_rate: float = 0.0) -> list[CoincidenceRecord]:
    """Poisson coincidence counts for every ordered output pair.

    The expected net count of pair (s, i) is |psi[s,i]|^2 / sum|psi|^2 *
    total_rate * dt * mu_s * mu_i * eta1 * eta2; ``accidental_rate`` (1/s)
    adds a background measured in an equal window away from the peak.
    """
    if total_rate < 0 or accidental_rate < 0:
        raise ValueError("rates must be non-negative")
    amp = np.asarray(getattr(psi, "psi", psi), dtype=complex)
    n = amp.shape[0]
    p = np.abs(amp) ** 2
    p = p / p.sum() if p.sum() > 0 else p
    mu = np.broadcast_to(np.asarray(transmissions, dtype=float), (n,))
    e1, e2 = detector_effs
    rng = np.random.default_rng(seed)
    records = []
    for s in range(n):
        for i in range(n):
            mean = p[s, i] * total_rate * dt * mu[s] * mu[i] * e1 * e2
            acc = accidental_rate * dt
            peak = int(rng.poisson(mean + acc))
            background = int(rng.poisson(acc)) if acc > 0 else 0
            records.append(CoincidenceRecord((s, i), peak, background, dt, (mu[s], mu[i]), (e1, e2)))
    return records


# --- files ---------------------------------------------------------------

def trace_filename(pair: Sequence[int], kind: str) -> str:
    return f"trace_s{pair[0] + 1}_i{pair[1] + 1}_{kind}.csv"


def write_trace(path: str | Path, trace: InterferogramTrace) -> None:
    with open(path, "w") as fh:
        fh.write(f"# f_hz={trace.f!r}\n# kind={trace.kind}\ntime_s,value\n")
        for t, v in zip(trace.time, trace.value):
            fh.write(f"{float(t)!r},{float(v)!r}\n")


def read_trace(path: str | Path, kind: str | None = None) -> InterferogramTrace:
    f_hz = None
    found_kind = kind
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                if key.strip() == "f_hz":
                    f_hz = float(value)
                elif key.strip() == "kind" and kind is None:
                    found_kind = value.strip()
                continue
            if line.replace(" ", "") == "time_s,value":
                continue
            t, v = line.split(",")
            rows.append((float(t), float(v)))
    if f_hz is None:
        raise ValueError(f"{path}: missing '# f_hz=<value>' header")
    data = np.array(rows, dtype=float).reshape(-1, 2)
    return InterferogramTrace(data[:, 0], data[:, 1], f_hz, found_kind or "sfg")


def read_trace_dir(directory: str | Path) -> dict[tuple[int, int], tuple]:
    """Complete (sfg, signal, idler) triples found in ``directory``, keyed by 0-based pair."""
    import re

    pattern = re.compile(r"trace_s(\d+)_i(\d+)_(sfg|signal|idler)\.csv$")
    found: dict[tuple[int, int], dict] = {}
    for p in Path(directory).iterdir():
        m = pattern.search(p.name)
        if m:
            pair = (int(m.group(1)) - 1, int(m.group(2)) - 1)
            found.setdefault(pair, {})[m.group(3)] = read_trace(p, m.group(3))
    return {pair: (d["sfg"], d["signal"], d["idler"]) for pair, d in sorted(found.items())
            if all(k in d for k in KINDS)}


def dump_json(path: str | Path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
