"""SPDC biphoton amplitudes and reverse-direction SFG, computed by separate routes.

The SPDC route propagates the pump forward from the input facet and the
generated photons forward to the output facet. The SFG route launches
signal and idler backward from the output facet and carries the generated
sum-frequency field back to the input facet. ``sfg_simulate_ode`` integrates
the driven coupled-mode equations directly and serves as an oracle for the
SFG overlap integral.

Both overlap routes use composite 3-point Gauss-Legendre quadrature on a grid
whose breakpoints include every domain wall of the poling pattern, so the
piecewise-constant nonlinearity never straddles a sub-interval.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from biphoton.device import DeviceSpec, bend_factors, coupling_matrix
from biphoton.errors import NumericalAccuracyError
from biphoton.propagation import Exponential, _backward_matrix

STEPS_PER_PERIOD = 40
GAUSS_NODES = 3
DEPLETION_LIMIT = 1e-4
_CHUNK = 8192


def wavelength_nm(omega: float) -> float:
    if not omega > 0:
        raise ValueError(f"angular frequency must be positive, got {omega}")
    return 2 * math.pi * SPEED_OF_LIGHT / omega * 1e9


def angular_frequency(wavelength: float) -> float:
    """rad/s for a vacuum wavelength in nm."""
    if not wavelength > 0:
        raise ValueError(f"wavelength must be positive, got {wavelength}")
    return 2 * math.pi * SPEED_OF_LIGHT / (wavelength * 1e-9)


def _wavelengths(omega_s, omega_i):
    if not (omega_s > 0 and omega_i > 0):
        raise ValueError(f"frequencies must be positive, got omega_s={omega_s}, omega_i={omega_i}")
    return wavelength_nm(omega_s + omega_i), wavelength_nm(omega_s), wavelength_nm(omega_i)


@dataclass(frozen=True)
class BiphotonWavefunction:
    """psi[n_s, n_i] for a pump launched into waveguide ``pump_input``.

    ``scale`` is the Frobenius norm of the raw amplitudes, kept when the
    matrix is normalized so that absolute values can be restored.
    """

    psi: np.ndarray
    pump_input: int
    omega_s: float
    omega_i: float
    normalization: str = "raw"
    scale: float = 1.0

    def normalized(self) -> "BiphotonWavefunction":
        norm = float(np.linalg.norm(self.psi))
        if norm == 0:
            raise ValueError("cannot normalize a zero wavefunction")
        if self.normalization == "unit-norm":
            return self
        return replace(self, psi=self.psi / norm, normalization="unit-norm", scale=norm)

    def probabilities(self) -> np.ndarray:
        p = np.abs(self.psi) ** 2
        return p / p.sum()


@dataclass(frozen=True)
class SfgResult:
    """Sum-frequency output per waveguide for one pair of input beams.

    ``xi`` is the complex output field divided by sqrt(P_s * P_i) (W^-1/2),
    ``eta`` = P_SFG / (P_s * P_i) in W^-1.
    """

    xi: np.ndarray
    eta: np.ndarray
    inputs: dict
    depleted: bool = False
    info: dict = field(default_factory=dict)


def quadrature_grid(spec: DeviceSpec, step: float | None = None):
    """Nodes, weights and poling sign for the overlap integrals."""
    pattern = spec.poling
    h = pattern.period / STEPS_PER_PERIOD if step is None else float(step)
    edges = pattern.boundaries()
    lengths = np.diff(edges)
    mids = edges[:-1] + lengths / 2
    signs = np.asarray(pattern.sign(mids), dtype=float)
    nsub = np.maximum(np.ceil(lengths / h * (1 - 1e-12)).astype(int), 1)
    owner = np.repeat(np.arange(lengths.size), nsub)
    first = np.repeat(np.cumsum(nsub) - nsub, nsub)
    j = np.arange(owner.size) - first
    sub_h = lengths[owner] / nsub[owner]
    left = edges[:-1][owner] + j * sub_h
    x, w = np.polynomial.legendre.leggauss(GAUSS_NODES)
    nodes = (left[:, None] + sub_h[:, None] * (x + 1) / 2).ravel()
    weights = (sub_h[:, None] * w / 2).ravel()
    return nodes, weights, np.repeat(signs[owner], GAUSS_NODES)


def _band_exponentials(spec, omega_s, omega_i, route):
    lam_p, lam_s, lam_i = _wavelengths(omega_s, omega_i)
    matrix = coupling_matrix if route == "spdc" else _backward_matrix
    exps = tuple(Exponential(matrix(spec, b, lam)) for b, lam in
                 (("pump", lam_p), ("signal", lam_s), ("idler", lam_i)))
    bends = tuple(bend_factors(spec, b, lam) for b, lam in
                  (("pump", lam_p), ("signal", lam_s), ("idler", lam_i)))
    return exps, bends


def _tensor_nodal(spec, exps, z, coef, route):
    """Overlap from explicit propagator matrices at every node (general H)."""
    n = spec.n_waveguides
    length = spec.total_length
    exp_p, exp_s, exp_i = exps
    amp = spec.poling.amplitudes(n)
    out = np.zeros((n, n, n), dtype=complex)
    for lo in range(0, z.size, _CHUNK):
        zc = z[lo:lo + _CHUNK]
        cc = coef[lo:lo + _CHUNK]
        up = exp_p(zc)
        us = exp_s(length - zc)
        ui = exp_i(length - zc)
        if route == "spdc":
            # psi[p, s, i] = sum_n U_p(0->z)[n, p] U_s(z->L)[s, n] U_i(z->L)[i, n]
            a = up * (cc[:, None, None] * amp[None, :, None])          # m, n, p
            x = a[:, :, :, None] * us.transpose(0, 2, 1)[:, :, None, :]  # m, n, p, s
            y = ui.transpose(0, 2, 1)                                    # m, n, i
        else:
            # xi[p, s, i] = sum_n Ub_p(z->0)[p, n] Ub_s(L->z)[n, s] Ub_i(L->z)[n, i]
            a = up.transpose(0, 2, 1) * (cc[:, None, None] * amp[None, :, None])  # m, n, p
            x = a[:, :, :, None] * us[:, :, None, :]                               # m, n, p, s
            y = ui                                                                 # m, n, i
        m = zc.size
        out += (x.reshape(m * n, n * n).T @ y.reshape(m * n, n)).reshape(n, n, n)
    return out


def _tensor_modal(spec, exps, z, coef, route):
    """Same quadrature sum, factorized through the eigenmodes of each band.

    With U(dz) = V exp(i mu dz) V^-1 the node sum collapses onto
    J[a, b, c] = sum_m coef_m exp(i mu_a z_m) exp(i nu_b (L - z_m)) exp(i rho_c (L - z_m)).
    """
    n = spec.n_waveguides
    length = spec.total_length
    amp = spec.poling.amplitudes(n)
    (vp, wp, mu), (vs, ws, nu), (vi, wi, rho) = [(e.v, e.v_inv, e.mu) for e in exps]
    j = np.zeros((n, n, n), dtype=complex)
    for lo in range(0, z.size, _CHUNK):
        zc = z[lo:lo + _CHUNK]
        ep = np.exp(1j * np.multiply.outer(zc, mu)) * coef[lo:lo + _CHUNK, None]
        es = np.exp(1j * np.multiply.outer(length - zc, nu))
        ei = np.exp(1j * np.multiply.outer(length - zc, rho))
        x = (ep[:, :, None] * es[:, None, :]).reshape(zc.size, n * n)
        j += (x.T @ ei).reshape(n, n, n)
    if route == "spdc":
        g = np.einsum("n,na,bn,cn->abc", amp, vp, ws, wi)
        return np.einsum("ap,sb,ic,abc->psi", wp, vs, vi, g * j)
    g = np.einsum("n,an,nb,nc->abc", amp, wp, vs, vi)
    return np.einsum("pa,bs,ci,abc->psi", vp, ws, wi, g * j)


def _tensor(spec: DeviceSpec, omega_s, omega_i, step, route, method="auto"):
    n = spec.n_waveguides
    exps, (bp, bs, bi) = _band_exponentials(spec, omega_s, omega_i, route)
    if not np.any(spec.poling.amplitudes(n)):
        return np.zeros((n, n, n), dtype=complex)
    z, w, sign = quadrature_grid(spec, step)
    coef = w * sign * np.exp(1j * spec.mismatch0 * z)
    modal = all(e.diagonalizable for e in exps)
    if method == "nodal" or (method == "auto" and not modal):
        out = _tensor_nodal(spec, exps, z, coef, route)
    elif method in ("auto", "modal"):
        out = _tensor_modal(spec, exps, z, coef, route)
    else:
        raise ValueError(f"unknown method {method!r}")
    return out * bp[:, None, None] * bs[None, :, None] * bi[None, None, :]


def _converged(spec, omega_s, omega_i, step, route, tol):
    h = spec.poling.period / STEPS_PER_PERIOD if step is None else step
    coarse = _tensor(spec, omega_s, omega_i, h, route)
    fine = _tensor(spec, omega_s, omega_i, h / 2, route)
    scale = np.max(np.abs(fine))
    change = np.max(np.abs(fine - coarse)) / scale if scale > 0 else 0.0
    if change > tol:
        raise NumericalAccuracyError(
            f"overlap integral changed by {change:.3e} (relative) on halving the step {h} um"
        )
    return fine


def spdc_tensor(spec: DeviceSpec, omega_s: float, omega_i: float, step: float | None = None,
                check_convergence: bool = False, tol: float = 1e-8) -> np.ndarray:
    """Raw biphoton amplitudes T[n_p, n_s, n_i] for every pump input at once."""
    if check_convergence:
        return _converged(spec, omega_s, omega_i, step, "spdc", tol)
    return _tensor(spec, omega_s, omega_i, step, "spdc")


def sfg_tensor(spec: DeviceSpec, omega_s: float, omega_i: float, step: float | None = None,
               check_convergence: bool = False, tol: float = 1e-8) -> np.ndarray:
    """Dimensionless SFG amplitudes X[n_p, n_s, n_i] from the backward Green route."""
    if check_convergence:
        return _converged(spec, omega_s, omega_i, step, "sfg", tol)
    return _tensor(spec, omega_s, omega_i, step, "sfg")


def _check_index(spec, k, name):
    if not 0 <= k < spec.n_waveguides:
        raise ValueError(f"{name}={k} outside 0..{spec.n_waveguides - 1}")


def spdc_wavefunction(spec: DeviceSpec, n_p: int, omega_s: float, omega_i: float, *,
                      step: float | None = None, check_convergence: bool = False,
                      tol: float = 1e-8) -> BiphotonWavefunction:
    """Biphoton amplitudes psi[n_s, n_i] for the pump in waveguide ``n_p``.

    The pump frequency is omega_s + omega_i. Values are raw overlap integrals
    (units of um); ``BiphotonWavefunction.normalized`` rescales to unit norm.
    """
    _check_index(spec, n_p, "n_p")
    t = spdc_tensor(spec, omega_s, omega_i, step, check_convergence, tol)
    psi = t[n_p]
    return BiphotonWavefunction(psi, n_p, omega_s, omega_i, "raw", float(np.linalg.norm(psi)))


def sfg_amplitude_green(spec: DeviceSpec, n_s: int, n_i: int, omega_s: float, omega_i: float,
                        *, step: float | None = None, check_convergence: bool = False,
                        tol: float = 1e-8) -> np.ndarray:
    """Conversion amplitudes xi[n_p] for signal into ``n_s`` and idler into ``n_i``.

    Multiply by ``spec.kappa`` to get the output field per sqrt(P_s P_i);
    eta = kappa**2 * |xi|**2.
    """
    _check_index(spec, n_s, "n_s")
    _check_index(spec, n_i, "n_i")
    return sfg_tensor(spec, omega_s, omega_i, step, check_convergence, tol)[:, n_s, n_i]


def sfg_efficiency_green(spec: DeviceSpec, n_s: int, n_i: int, omega_s: float,
                         omega_i: float, **kwargs) -> np.ndarray:
    xi = sfg_amplitude_green(spec, n_s, n_i, omega_s, omega_i, **kwargs)
    return spec.kappa ** 2 * np.abs(xi) ** 2


def _ode_grid(spec: DeviceSpec, step: float):
    # s = L - z is the distance travelled by the backward signal/idler beams
    length = spec.total_length
    walls = length - spec.poling.boundaries()
    edges = np.unique(np.concatenate(([0.0, length], walls)))
    lengths = np.diff(edges)
    keep = lengths > 1e-12 * length
    edges = np.concatenate((edges[:-1][keep], [length]))
    lengths = np.diff(edges)
    nsub = np.maximum(np.ceil(lengths / step * (1 - 1e-12)).astype(int), 1)
    parts = [np.linspace(a, b, k + 1)[:-1] for a, b, k in zip(edges[:-1], edges[1:], nsub)]
    return np.concatenate(parts + [[length]])


def sfg_simulate_ode(spec: DeviceSpec, n_s: int, n_i: int, omega_s: float, omega_i: float,
                     P_s: float, P_i: float, *, step: float | None = None) -> SfgResult:
    """Undepleted-pump SFG by fixed-step RK4 on the coupled-mode equations.

    Signal and idler are launched backward with powers ``P_s``, ``P_i`` (W);
    the sum-frequency field is driven by kappa * g(z) * a_s * a_i and read
    out at the input facet. Each band is integrated in a frame rotating at
    its mean propagation constant, so large absolute betas are harmless.
    """
    _check_index(spec, n_s, "n_s")
    _check_index(spec, n_i, "n_i")
    if not (P_s > 0 and P_i > 0):
        raise ValueError(f"input powers must be positive, got P_s={P_s}, P_i={P_i}")
    lam_p, lam_s, lam_i = _wavelengths(omega_s, omega_i)
    n = spec.n_waveguides
    length = spec.total_length
    h = spec.poling.period / STEPS_PER_PERIOD if step is None else float(step)

    mats = [_backward_matrix(spec, b, lam) for b, lam in
            (("signal", lam_s), ("idler", lam_i), ("pump", lam_p))]
    carriers = [float(np.mean(m.diagonal().real)) for m in mats]
    big = np.zeros((3 * n, 3 * n), dtype=complex)
    for k, (m, cbar) in enumerate(zip(mats, carriers)):
        big[k * n:(k + 1) * n, k * n:(k + 1) * n] = 1j * (m - cbar * np.eye(n))
    rate = carriers[0] + carriers[1] - carriers[2]

    s = _ode_grid(spec, h)
    hs = np.diff(s)
    z_mid = length - (s[:-1] + hs / 2)
    gain = spec.kappa * spec.poling.amplitudes(n)
    sign = np.asarray(spec.poling.sign(z_mid), dtype=float)

    def phase(si):
        return np.exp(1j * (spec.mismatch0 * (length - si) + rate * si))

    ph0, ph_half, ph1 = phase(s[:-1]), phase(s[:-1] + hs / 2), phase(s[1:])

    y = np.zeros(3 * n, dtype=complex)
    y[n_s] = math.sqrt(P_s) * bend_factors(spec, "signal", lam_s)[n_s]
    y[n + n_i] = math.sqrt(P_i) * bend_factors(spec, "idler", lam_i)[n_i]

    def f(state, drive):
        out = big @ state
        if drive is not None:
            out[2 * n:] += drive * state[:n] * state[n:2 * n]
        return out

    for k in range(hs.size):
        dk = hs[k]
        g = gain * sign[k]
        if sign[k] == 0:
            d0 = dm = d1 = None
        else:
            d0, dm, d1 = g * ph0[k], g * ph_half[k], g * ph1[k]
        k1 = f(y, d0)
        k2 = f(y + 0.5 * dk * k1, dm)
        k3 = f(y + 0.5 * dk * k2, dm)
        k4 = f(y + dk * k3, d1)
        y = y + (dk / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(y)):
        raise NumericalAccuracyError("RK4 integration produced non-finite amplitudes")

    field_out = np.exp(1j * carriers[2] * length) * y[2 * n:] * bend_factors(spec, "pump", lam_p)
    norm = math.sqrt(P_s * P_i)
    xi = field_out / norm
    eta = np.abs(field_out) ** 2 / (P_s * P_i)
    p_sfg = float(np.sum(np.abs(field_out) ** 2))
    depletion = p_sfg / min(P_s, P_i)
    depleted = depletion > DEPLETION_LIMIT
    if depleted:
        warnings.warn(
            f"generated power is {depletion:.2e} of the weaker input; "
            "the undepleted-pump assumption no longer holds",
            RuntimeWarning,
            stacklevel=2,
        )
    inputs = {"n_s": n_s, "n_i": n_i, "omega_s": omega_s, "omega_i": omega_i,
              "P_s": P_s, "P_i": P_i}
    return SfgResult(xi, eta, inputs, depleted, {"steps": int(hs.size), "step": h,
                                                  "depletion": depletion})


def fit_proportionality(a, b):
    """Least-squares complex constant k with a ~ k * b, and the residual.

    The residual is max|a - k b| / max|a|, i.e. relative to the largest
    element rather than element by element.
    """
    a = np.asarray(a, dtype=complex).ravel()
    b = np.asarray(b, dtype=complex).ravel()
    bb = np.vdot(b, b).real
    if bb == 0:
        return 0j, (0.0 if not np.any(a) else math.inf)
    k = np.vdot(b, a) / bb
    scale = np.max(np.abs(a))
    if scale == 0:
        return k, 0.0
    return complex(k), float(np.max(np.abs(a - k * b)) / scale)
