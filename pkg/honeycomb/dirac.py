"""Effective Dirac system for the slowly varying envelopes V_1, V_2.

The system is solved exactly in time: on the periodic grid every Fourier mode
evolves by the 2x2 unitary exp(-i Omega(xi) T), which has a closed form since
Omega(xi)^2 = |eta|^2 |xi|^2 I.
"""

import math
import warnings
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.linalg import expm

from config import Config, EnvelopeSpec, GaussianSpec

from .errors import DegenerateConeError, InvalidArgumentError

PAULI_1 = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_2 = np.array([[0, -1j], [1j, 0]], dtype=complex)


@dataclass(frozen=True)
class DiracParams:
    delta: float
    omega_star: float
    a_delta: complex
    eta_sharp: complex
    lambda_delta: float

    @classmethod
    def from_eta(cls, eta: complex, omega_star: float = 1.0, delta: float = 1.0) -> "DiracParams":
        """Parameters with a prescribed eta, for experiments on the envelope system alone"""
        a = -2j * omega_star * eta
        return cls(delta=delta, omega_star=omega_star, a_delta=a, eta_sharp=complex(eta), lambda_delta=abs(eta))

    @property
    def speed(self) -> float:
        return abs(self.eta_sharp)

    @property
    def theta(self) -> np.ndarray:
        return np.diag([self.eta_sharp, np.conj(self.eta_sharp)])


def dirac_params(delta: float, c: complex, D1_area: float, c1_star: float) -> DiracParams:
    """omega* = sqrt(c1 delta / |D1|), a = i c delta / |D1|, eta = i a / (2 omega*)"""
    if delta <= 0 or D1_area <= 0 or c1_star <= 0:
        raise InvalidArgumentError("delta, |D1| and c1 must be positive")
    if c == 0:
        raise DegenerateConeError("c = 0: the Dirac system degenerates")

    omega = math.sqrt(c1_star * delta / D1_area)
    a = 1j * c * delta / D1_area
    eta = 1j * a / (2.0 * omega)
    lam = 0.5 * math.sqrt(1.0 / (D1_area * c1_star)) * abs(c) * math.sqrt(delta)
    return DiracParams(delta=float(delta), omega_star=omega, a_delta=complex(a), eta_sharp=complex(eta),
                       lambda_delta=lam)


def omega_symbol(xi: np.ndarray, params: DiracParams) -> np.ndarray:
    """Omega(xi) for one xi (2,) or many (..., 2), returned with trailing (2, 2)"""
    xi = np.asarray(xi, dtype=float)
    eta = params.eta_sharp
    out = np.zeros(xi.shape[:-1] + (2, 2), dtype=complex)
    out[..., 0, 1] = eta * (xi[..., 0] + 1j * xi[..., 1])
    out[..., 1, 0] = np.conj(eta) * (xi[..., 0] - 1j * xi[..., 1])
    return out


def clifford_errors(params: DiracParams) -> Tuple[float, float]:
    """(|{T1, T2}|, max_j |T_j^2 - |eta|^2 I|) with T_j = Theta sigma_j"""
    T1 = params.theta @ PAULI_1
    T2 = params.theta @ PAULI_2
    anti = float(np.max(np.abs(T1 @ T2 + T2 @ T1)))
    eye = abs(params.eta_sharp) ** 2 * np.eye(2)
    square = float(max(np.max(np.abs(T1 @ T1 - eye)), np.max(np.abs(T2 @ T2 - eye))))
    return anti, square


@dataclass(frozen=True)
class EnvelopeGrid:
    """Periodic square grid centered at the origin"""

    n: int
    span: float

    def __post_init__(self):
        if self.n < 2 or self.span <= 0:
            raise InvalidArgumentError(f"grid needs n >= 2 and span > 0, got n={self.n}, span={self.span}")

    @property
    def spacing(self) -> float:
        return self.span / self.n

    @property
    def axis(self) -> np.ndarray:
        return (np.arange(self.n) - self.n // 2) * self.spacing

    @property
    def points(self) -> np.ndarray:
        X, Y = np.meshgrid(self.axis, self.axis, indexing="ij")
        return np.stack([X, Y], axis=-1)

    @property
    def frequencies(self) -> np.ndarray:
        """xi grid matching np.fft.fft2 ordering"""
        k = 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.spacing)
        K1, K2 = np.meshgrid(k, k, indexing="ij")
        return np.stack([K1, K2], axis=-1)

    @property
    def cell_area(self) -> float:
        return self.spacing ** 2


@dataclass(frozen=True)
class EnvelopeField:
    grid: EnvelopeGrid
    V1: np.ndarray
    V2: np.ndarray
    time: float = 0.0
    wrapped: bool = False

    def __post_init__(self):
        shape = (self.grid.n, self.grid.n)
        if self.V1.shape != shape or self.V2.shape != shape:
            raise InvalidArgumentError(f"envelope arrays must have shape {shape}")

    @property
    def stacked(self) -> np.ndarray:
        return np.stack([self.V1, self.V2])

    def l2_norm(self) -> float:
        return discrete_l2(self.grid, self.stacked)


@dataclass(frozen=True)
class InitialEnvelopes:
    grid: EnvelopeGrid
    F1: np.ndarray
    F2: np.ndarray

    @classmethod
    def from_spec(cls, grid: EnvelopeGrid, spec: EnvelopeSpec) -> "InitialEnvelopes":
        pts = grid.points
        return cls(grid=grid, F1=sample_gaussian(spec.F1, pts), F2=sample_gaussian(spec.F2, pts))

    @property
    def stacked(self) -> np.ndarray:
        return np.stack([self.F1, self.F2])

    def boundary_decay(self) -> float:
        return boundary_decay(self.stacked)

    def as_field(self) -> EnvelopeField:
        return EnvelopeField(grid=self.grid, V1=self.F1, V2=self.F2, time=0.0)


def sample_gaussian(spec: GaussianSpec, points: np.ndarray) -> np.ndarray:
    d = points - np.asarray(spec.center)
    r2 = np.einsum("...k,...k->...", d, d)
    return spec.amplitude * np.exp(1j * spec.phase) * np.exp(-r2 / (2.0 * spec.width ** 2))


def discrete_l2(grid: EnvelopeGrid, values: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.abs(values) ** 2) * grid.cell_area))


def boundary_decay(values: np.ndarray) -> float:
    """Largest magnitude on the box edges relative to the peak"""
    mag = np.abs(values).reshape((-1,) + values.shape[-2:])
    peak = float(mag.max())
    if peak == 0.0:
        return 0.0
    edge = max(mag[:, 0, :].max(), mag[:, -1, :].max(), mag[:, :, 0].max(), mag[:, :, -1].max())
    return float(edge) / peak


def _sgn(z: np.ndarray) -> np.ndarray:
    mag = np.abs(z)
    return np.where(mag > 0, z / np.where(mag > 0, mag, 1.0), 0.0)


def propagate_fourier(Fhat1: np.ndarray, Fhat2: np.ndarray, T: float, params: DiracParams,
                      xi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """exp(-i Omega(xi) T) applied mode by mode"""
    if Fhat1.shape != Fhat2.shape or xi.shape[:-1] != Fhat1.shape:
        raise InvalidArgumentError(f"mode arrays {Fhat1.shape}, {Fhat2.shape} do not match xi {xi.shape}")
    eta = params.eta_sharp
    speed = abs(eta) * np.linalg.norm(xi, axis=-1)
    cos, sin = np.cos(speed * T), np.sin(speed * T)
    s12 = _sgn(eta * (-1j * xi[..., 0] + xi[..., 1]))
    s21 = _sgn(np.conj(eta) * (-1j * xi[..., 0] - xi[..., 1]))
    return cos * Fhat1 + sin * s12 * Fhat2, cos * Fhat2 + sin * s21 * Fhat1


def propagate_expm(Fhat: np.ndarray, T: float, params: DiracParams, xi: np.ndarray) -> np.ndarray:
    """Reference propagation by a dense matrix exponential per mode; Fhat has shape (2, ...)"""
    omegas = omega_symbol(xi, params).reshape(-1, 2, 2)
    flat = Fhat.reshape(2, -1)
    out = np.empty_like(flat, dtype=complex)
    for k, omega in enumerate(omegas):
        out[:, k] = expm(-1j * omega * T) @ flat[:, k]
    return out.reshape(Fhat.shape)


def evolve_real(F: InitialEnvelopes, T: float, params: DiracParams) -> EnvelopeField:
    """FFT, exact propagation to time T, inverse FFT"""
    decay = F.boundary_decay()
    wrapped = decay > Config.DECAY_TOL
    if wrapped:
        warnings.warn(f"initial envelopes reach {decay:.2e} of their peak on the box edge; enlarge the box")

    xi = F.grid.frequencies
    V1, V2 = propagate_fourier(np.fft.fft2(F.F1), np.fft.fft2(F.F2), T, params, xi)
    return EnvelopeField(grid=F.grid, V1=np.fft.ifft2(V1), V2=np.fft.ifft2(V2), time=float(T), wrapped=wrapped)


def spectral_derivative(grid: EnvelopeGrid, values: np.ndarray, order: Tuple[int, int]) -> np.ndarray:
    """d^n1/dx1^n1 d^n2/dx2^n2 on the last two axes"""
    xi = grid.frequencies
    symbol = (1j * xi[..., 0]) ** order[0] * (1j * xi[..., 1]) ** order[1]
    return np.fft.ifft2(symbol * np.fft.fft2(values, axes=(-2, -1)), axes=(-2, -1))


def dirac_operator(grid: EnvelopeGrid, V: np.ndarray, params: DiracParams) -> np.ndarray:
    """M(d) V = (a (d1 + i d2) V2, -conj(a) (d1 - i d2) V1)"""
    a = params.a_delta
    d1 = spectral_derivative(grid, V, (1, 0))
    d2 = spectral_derivative(grid, V, (0, 1))
    return np.stack([a * (d1[1] + 1j * d2[1]), -np.conj(a) * (d1[0] - 1j * d2[0])])


def laplacian(grid: EnvelopeGrid, V: np.ndarray) -> np.ndarray:
    return spectral_derivative(grid, V, (2, 0)) + spectral_derivative(grid, V, (0, 2))


@dataclass(frozen=True)
class ResidualDiagnostics:
    dirac_residual: float
    wave_residual: float
    dt: float


def residual_diagnostics(F: InitialEnvelopes, params: DiracParams, T: float, dt: float) -> ResidualDiagnostics:
    """Sup-norm residuals of the Dirac and wave equations, time derivatives by central differences"""
    if dt <= 0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        before, now, after = (evolve_real(F, t, params).stacked for t in (T - dt, T, T + dt))

    dV = (after - before) / (2.0 * dt)
    d2V = (after - 2.0 * now + before) / dt ** 2
    dirac = 2j * params.omega_star * dV - dirac_operator(F.grid, now, params)
    wave = d2V - abs(params.eta_sharp) ** 2 * laplacian(F.grid, now)
    return ResidualDiagnostics(dirac_residual=float(np.max(np.abs(dirac))),
                               wave_residual=float(np.max(np.abs(wave))), dt=float(dt))


def sobolev_norm(grid: EnvelopeGrid, values: np.ndarray, order: Tuple[int, int]) -> float:
    """Discrete L2 norm of the spectral derivative d^order of (V1, V2)"""
    return discrete_l2(grid, spectral_derivative(grid, values, order))


def fourier_decay(grid: EnvelopeGrid, values: np.ndarray, power: int = 4) -> float:
    """max over xi of (1 + |xi|)^power |V-hat(xi)|, summed over both components"""
    xi = np.linalg.norm(grid.frequencies, axis=-1)
    hat = np.abs(np.fft.fft2(values, axes=(-2, -1)))
    return float(np.max((1.0 + xi) ** power * np.sqrt(np.sum(hat ** 2, axis=0))))
