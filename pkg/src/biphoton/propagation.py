"""Linear transfer matrices of the array, U(z0 -> z1) = exp(i H (z1 - z0))."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from biphoton.device import DeviceSpec, coupling_matrix

# above this eigenvector condition number the scaling-and-squaring route is used
MAX_EIGVEC_CONDITION = 1e8


@dataclass(frozen=True)
class TransferMatrix:
    entries: np.ndarray
    z_from: float
    z_to: float
    band: str
    wavelength: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# row,col,real,imag\n")
        for (r, c), v in np.ndenumerate(self.entries):
            buf.write(f"{r + 1},{c + 1},{v.real!r},{v.imag!r}\n")
        return buf.getvalue()


class Exponential:
    """exp(i H dz) for many dz, sharing one factorization of H.

    Uses the eigendecomposition when the eigenvector matrix is well
    conditioned, otherwise scipy's scaling-and-squaring ``expm``.
    """

    def __init__(self, h: np.ndarray):
        self.h = np.asarray(h, dtype=complex)
        mu, v = np.linalg.eig(self.h)
        cond = np.linalg.cond(v)
        self.diagonalizable = bool(np.isfinite(cond) and cond < MAX_EIGVEC_CONDITION)
        if self.diagonalizable:
            self.mu = mu
            self.v = v
            self.v_inv = np.linalg.inv(v)

    def __call__(self, dz) -> np.ndarray:
        dz = np.asarray(dz, dtype=float)
        if self.diagonalizable:
            phases = np.exp(1j * np.multiply.outer(dz, self.mu))
            return np.einsum("ia,...a,aj->...ij", self.v, phases, self.v_inv)
        flat = dz.reshape(-1)
        out = np.stack([scipy.linalg.expm(1j * self.h * d) for d in flat]) if flat.size else \
            np.empty((0,) + self.h.shape, dtype=complex)
        return out.reshape(dz.shape + self.h.shape)


def exponential(h: np.ndarray, dz: float) -> np.ndarray:
    return Exponential(h)(dz)


def _check_interval(spec: DeviceSpec, z_from: float, z_to: float):
    if not 0 <= z_from <= z_to <= spec.total_length:
        raise ValueError(
            f"need 0 <= z_from <= z_to <= {spec.total_length}, got z_from={z_from}, z_to={z_to}"
        )


def propagate(spec: DeviceSpec, band: str, wavelength: float, z_from: float,
              z_to: float) -> TransferMatrix:
    """Forward transfer matrix of ``band`` over [z_from, z_to]."""
    _check_interval(spec, z_from, z_to)
    h = coupling_matrix(spec, band, wavelength)
    return TransferMatrix(exponential(h, z_to - z_from), z_from, z_to, band, wavelength)


def propagate_backward(spec: DeviceSpec, band: str, wavelength: float, z_from: float,
                       z_to: float) -> TransferMatrix:
    """Transfer matrix for light launched at ``z_to`` travelling back to ``z_from``.

    Built from the backward wave's own coupled-mode equations, not by
    transposing the forward result; for a reciprocal device the two agree,
    U_back = U_fwd.T.
    """
    _check_interval(spec, z_from, z_to)
    h = _backward_matrix(spec, band, wavelength)
    return TransferMatrix(exponential(h, z_to - z_from), z_to, z_from, band, wavelength)


def _backward_matrix(spec, band, wavelength):
    # the backward wave obeys the same nearest-neighbour equations; with the
    # nonreciprocity hook its antisymmetric part keeps the forward orientation
    return coupling_matrix(spec, band, wavelength)


def mode_amplitudes(spec: DeviceSpec, band: str, wavelength: float, input_vector,
                    z_grid) -> np.ndarray:
    """Amplitudes U(0 -> z) @ a0 at each z of ``z_grid``; shape (len(z_grid), N)."""
    a0 = np.asarray(input_vector, dtype=complex)
    if a0.shape != (spec.n_waveguides,):
        raise ValueError(f"input_vector must have shape ({spec.n_waveguides},), got {a0.shape}")
    if not np.all(np.isfinite(a0)):
        raise ValueError("input_vector must be finite")
    z = np.asarray(z_grid, dtype=float)
    if z.size and (z.min() < 0 or z.max() > spec.total_length):
        raise ValueError(f"z_grid must lie within [0, {spec.total_length}]")
    u = Exponential(coupling_matrix(spec, band, wavelength))(z)
    return u @ a0
