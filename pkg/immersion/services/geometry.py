"""
Algebraic layer of the Gauss-Codazzi system in geodesic coordinates.

Coordinates are ordered (x, t): index 1 is x, index 2 is t, and the metric is
g = B^2 dx^2 + dt^2. All functions accept scalars or numpy arrays and return
values of the same shape.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .exceptions import DomainError, HyperbolicityError

DEGENERACY_THRESHOLD = 1e-10


@dataclass(frozen=True)
class RawForms:
    """Second-form coefficients L, M, N with metric coefficient B and curvature K."""

    L: np.ndarray
    M: np.ndarray
    N: np.ndarray
    B: np.ndarray
    K: np.ndarray

    def gauss_residual(self):
        return self.L * self.N - self.M**2 - self.K * self.B**2


@dataclass(frozen=True)
class ScaledState:
    l: np.ndarray
    m: np.ndarray
    n: np.ndarray


@dataclass(frozen=True)
class RiemannState:
    u: np.ndarray
    v: np.ndarray


@dataclass(frozen=True)
class FundamentalForms:
    """First and second fundamental forms at one or many nodes."""

    g11: np.ndarray
    g12: np.ndarray
    g22: np.ndarray
    h11: np.ndarray
    h12: np.ndarray
    h22: np.ndarray

    def metric_determinant(self):
        return self.g11 * self.g22 - self.g12**2

    def is_positive_definite(self) -> bool:
        return bool(np.all(self.g11 > 0) and np.all(self.metric_determinant() > 0))


@dataclass(frozen=True)
class ChristoffelSymbols:
    """Non-trivial symbols of g = B^2 dx^2 + dt^2; the rest vanish."""

    x_xt: np.ndarray
    t_xx: np.ndarray
    x_xx: np.ndarray = 0.0

    def as_array(self) -> np.ndarray:
        """Return Gamma[k, i, j] with index 0 = x and 1 = t (scalar inputs only)."""
        gamma = np.zeros((2, 2, 2))
        gamma[0, 0, 0] = self.x_xx
        gamma[0, 0, 1] = gamma[0, 1, 0] = self.x_xt
        gamma[1, 0, 0] = self.t_xx
        return gamma


def _check_curvature(B, K):
    if np.any(np.asarray(B) <= 0):
        raise DomainError("Metric coefficient B must be positive.")
    if np.any(np.asarray(K) == 0):
        raise DomainError("Scaling undefined for vanishing Gauss curvature.")


def to_scaled(forms: RawForms) -> ScaledState:
    """
    Scale (L, M, N) into the dimensionless variables (l, m, n).

    Args:
        forms: Raw coefficients with B > 0 and K < 0

    Returns:
        ScaledState with l = L/(B^2 sqrt|K|), m = M/(B sqrt|K|), n = N/sqrt|K|
    """
    _check_curvature(forms.B, forms.K)
    root = np.sqrt(np.abs(forms.K))
    return ScaledState(
        l=forms.L / (forms.B**2 * root),
        m=forms.M / (forms.B * root),
        n=forms.N / root,
    )


def from_scaled(state: ScaledState, B, K) -> RawForms:
    """Inverse of to_scaled for the given B and K."""
    _check_curvature(B, K)
    root = np.sqrt(np.abs(K))
    return RawForms(
        L=state.l * B**2 * root,
        M=state.m * B * root,
        N=state.n * root,
        B=B,
        K=K,
    )


def to_riemann(l, m) -> RiemannState:
    """
    Riemann invariants u = (1 - m)/l, v = -(1 + m)/l.

    Raises:
        HyperbolicityError: if l vanishes anywhere
    """
    l = np.asarray(l, dtype=float)
    m = np.asarray(m, dtype=float)
    if np.any(l == 0):
        raise HyperbolicityError("l = 0: Riemann invariants undefined.")
    return RiemannState(u=(1.0 - m) / l, v=-(1.0 + m) / l)


def from_riemann(state: RiemannState) -> ScaledState:
    """
    Recover (l, m, n) from (u, v).

    Raises:
        HyperbolicityError: if |u - v| < DEGENERACY_THRESHOLD anywhere
    """
    u = np.asarray(state.u, dtype=float)
    v = np.asarray(state.v, dtype=float)
    difference = u - v
    if np.any(np.abs(difference) < DEGENERACY_THRESHOLD):
        raise HyperbolicityError(
            f"Degenerate Riemann state: |u - v| below {DEGENERACY_THRESHOLD}."
        )
    return ScaledState(
        l=2.0 / difference,
        m=-(u + v) / difference,
        n=2.0 * u * v / difference,
    )


def gauss_residual(state: ScaledState):
    return state.l * state.n - state.m**2 + 1.0


def eigenvalues(l, m) -> Tuple[np.ndarray, np.ndarray]:
    """Characteristic eigenvalues (m - 1)/l and (m + 1)/l."""
    l = np.asarray(l, dtype=float)
    if np.any(l == 0):
        raise HyperbolicityError("l = 0: eigenvalues undefined.")
    return (m - 1.0) / l, (m + 1.0) / l


def hyperbolicity_gap(state: RiemannState):
    return state.v - state.u


def christoffel(B, dB_dt, dB_dx=0.0) -> ChristoffelSymbols:
    """
    Christoffel symbols of g = B^2 dx^2 + dt^2.

    Args:
        B: Metric coefficient (positive)
        dB_dt: Time derivative of B
        dB_dx: Space derivative of B, zero for the x-independent metric

    Returns:
        ChristoffelSymbols with Gamma^x_xt = B_t/B, Gamma^t_xx = -B B_t
        and Gamma^x_xx = B_x/B
    """
    if np.any(np.asarray(B) <= 0):
        raise DomainError("Metric coefficient B must be positive.")
    return ChristoffelSymbols(
        x_xt=dB_dt / B,
        t_xx=-B * dB_dt,
        x_xx=dB_dx / B,
    )


def fundamental_forms(forms: RawForms) -> FundamentalForms:
    """
    Fundamental forms of the geodesic gauge.

    The coefficients obeying LN - M^2 = K B^2 are the covariant h_ij, so
    h11 = L, h12 = M, h22 = N.
    """
    B = np.asarray(forms.B, dtype=float)
    return FundamentalForms(
        g11=B**2,
        g12=np.zeros_like(B),
        g22=np.ones_like(B),
        h11=forms.L,
        h12=forms.M,
        h22=forms.N,
    )


def normalized_coefficients(forms: RawForms):
    """Coefficients h_ij / sqrt|g|; multiplying them by B gives h_ij back."""
    return forms.L / forms.B, forms.M / forms.B, forms.N / forms.B
