"""
Curvature profiles and the geodesic metric coefficient h(t).

The metric coefficient solves h'' = k* h with h(0) = 1, h'(0) = 0, where
k* = |K| is the decaying Gauss curvature magnitude. This module also provides
the constant C1 bounding h', the sign-switch time T*, the comparison function
phi and the sufficiency checks for logarithmically decaying curvature.
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import integrate
from scipy.interpolate import CubicHermiteSpline

from .exceptions import (
    BlowUpError,
    DivergenceError,
    DomainError,
    MissingInputError,
    RefinementError,
    SignSwitchError,
)

logger = logging.getLogger(__name__)

LN3_SHORTCUT = 1.09
INTEGRATOR_TOLERANCE = 1e-8
QUADRATURE_OPTIONS = {"epsabs": 1e-14, "epsrel": 1e-13, "limit": 400}


class CurvatureProfile(ABC):
    """Analytic description of k*(t) = |K|(t) for an x-independent curvature."""

    kind = "abstract"
    cutoff = 50.0

    @abstractmethod
    def k_star(self, t):
        """Evaluate k*(t)."""

    @abstractmethod
    def dlnk_dt(self, t):
        """Evaluate d/dt ln k*(t)."""

    @abstractmethod
    def tail_moments(self, T: float) -> Tuple[float, float]:
        """Return (int_T^inf k*, int_T^inf s k*) in closed form."""

    @abstractmethod
    def parameters(self) -> Dict[str, object]:
        """Parameters echoed into summaries."""

    def dlnk_dx(self, x, t):
        """Space derivative of ln|K|; identically zero for these profiles."""
        return np.zeros_like(np.asarray(x, dtype=float))

    def breakpoints(self) -> Sequence[float]:
        return ()

    def describe(self) -> Dict[str, object]:
        return {"kind": self.kind, **self.parameters()}


@dataclass(frozen=True)
class HongPower(CurvatureProfile):
    """k*(t) = C / (1 + |t|)^(2 + delta/2) with 0 < delta < 4."""

    C: float = 1.0
    delta: float = 2.0
    kind = "hong_power"

    def __post_init__(self):
        if self.C <= 0:
            raise DomainError("HongPower requires C > 0.")
        if not 0 < self.delta < 4:
            raise DomainError("HongPower requires 0 < delta < 4.")

    @property
    def exponent(self) -> float:
        return 2.0 + self.delta / 2.0

    def k_star(self, t):
        return self.C * (1.0 + np.abs(t)) ** (-self.exponent)

    def dlnk_dt(self, t):
        t = np.asarray(t, dtype=float)
        # right derivative at the kink t = 0
        side = np.where(t < 0, -1.0, 1.0)
        return -self.exponent * side / (1.0 + np.abs(t))

    def tail_moments(self, T):
        a = self.exponent
        base = 1.0 + T
        tail = self.C * base ** (1.0 - a) / (a - 1.0)
        first = self.C * (base ** (2.0 - a) / (a - 2.0) - base ** (1.0 - a) / (a - 1.0))
        return tail, first

    def parameters(self):
        return {"C": self.C, "delta": self.delta}


@dataclass(frozen=True)
class LogDecay(CurvatureProfile):
    """k*(t) = 1 / ((3 + t)^2 (ln(3 + t))^p) with p > 1."""

    p: float = 3.0
    kind = "log_decay"

    def __post_init__(self):
        if self.p <= 1:
            raise DomainError("LogDecay requires p > 1.")

    def k_star(self, t):
        shifted = 3.0 + np.asarray(t, dtype=float)
        return 1.0 / (shifted**2 * np.log(shifted) ** self.p)

    def dlnk_dt(self, t):
        shifted = 3.0 + np.asarray(t, dtype=float)
        return -2.0 / shifted - self.p / (shifted * np.log(shifted))

    def tail_moments(self, T):
        # w = ln(3 + s) turns the integrand into exp(-w) w^-p
        w0 = math.log(3.0 + T)
        tail, _ = integrate.quad(
            lambda w: math.exp(-w) * w ** (-self.p), w0, np.inf, **QUADRATURE_OPTIONS
        )
        first = w0 ** (1.0 - self.p) / (self.p - 1.0) - 3.0 * tail
        return tail, first

    def parameters(self):
        return {"p": self.p}


@dataclass(frozen=True)
class ConstantProfile(CurvatureProfile):
    """Constant k*; only k* = 0 is integrable."""

    value: float = 0.0
    kind = "constant"

    def __post_init__(self):
        if self.value < 0:
            raise DomainError("Curvature magnitude cannot be negative.")

    def k_star(self, t):
        return np.full_like(np.asarray(t, dtype=float), self.value)

    def dlnk_dt(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    def tail_moments(self, T):
        if self.value != 0:
            raise DivergenceError("A constant non-zero curvature is not integrable.")
        return 0.0, 0.0

    def parameters(self):
        return {"value": self.value}


@dataclass(frozen=True)
class Tabulated(CurvatureProfile):
    """
    Sampled k* interpolated log-linearly between samples.

    Beyond the last sample the profile continues as the power law through the
    last two samples; it is integrable with its first moment only when that
    power exceeds 2.
    """

    times: Tuple[float, ...] = ()
    values: Tuple[float, ...] = ()
    kind = "tabulated"

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.size < 2 or times.size != values.size:
            raise DomainError("Tabulated profile needs at least two (t, k*) samples.")
        if times[0] != 0 or np.any(np.diff(times) <= 0):
            raise DomainError("Sample times must start at 0 and increase strictly.")
        if np.any(values <= 0):
            raise DomainError("Sampled curvature magnitudes must be positive.")

    @property
    def cutoff(self) -> float:
        return float(self.times[-1])

    @cached_property
    def _log_values(self):
        return np.log(np.asarray(self.values, dtype=float))

    @cached_property
    def tail_exponent(self) -> float:
        t = np.asarray(self.times[-2:], dtype=float)
        logs = self._log_values[-2:]
        return -float((logs[1] - logs[0]) / (math.log1p(t[1]) - math.log1p(t[0])))

    def k_star(self, t):
        t = np.asarray(t, dtype=float)
        inside = np.exp(np.interp(t, self.times, self._log_values))
        last_t, last_k = self.times[-1], self.values[-1]
        outside = last_k * ((1.0 + t) / (1.0 + last_t)) ** (-self.tail_exponent)
        return np.where(t <= last_t, inside, outside)

    def dlnk_dt(self, t):
        t = np.asarray(t, dtype=float)
        times = np.asarray(self.times, dtype=float)
        slopes = np.diff(self._log_values) / np.diff(times)
        index = np.clip(np.searchsorted(times, t, side="right") - 1, 0, slopes.size - 1)
        return np.where(
            t <= times[-1], slopes[index], -self.tail_exponent / (1.0 + t)
        )

    def tail_moments(self, T):
        a = self.tail_exponent
        if a <= 2:
            raise DivergenceError(
                f"Tabulated tail decays like t^-{a:.3g}; t k*(t) is not integrable."
            )
        scale = self.values[-1] * (1.0 + self.times[-1]) ** a
        base = 1.0 + T
        tail = scale * base ** (1.0 - a) / (a - 1.0)
        first = scale * (base ** (2.0 - a) / (a - 2.0) - base ** (1.0 - a) / (a - 1.0))
        return tail, first

    def breakpoints(self):
        return tuple(self.times[1:-1])

    def parameters(self):
        return {"times": list(self.times), "values": list(self.values)}


def build_profile(kind: str, **params) -> CurvatureProfile:
    """Construct a profile from its config kind and parameters."""
    builders = {
        HongPower.kind: HongPower,
        LogDecay.kind: LogDecay,
        ConstantProfile.kind: ConstantProfile,
        Tabulated.kind: Tabulated,
    }
    if kind not in builders:
        raise DomainError(f"Unknown curvature profile kind: {kind}")
    params = {
        key: tuple(value) if isinstance(value, list) else value for key, value in params.items()
    }
    return builders[kind](**params)


def k_star(profile: CurvatureProfile, t):
    return profile.k_star(t)


def dlnk_dt(profile: CurvatureProfile, t):
    return profile.dlnk_dt(t)


@dataclass(frozen=True)
class ProfileMoments:
    integral: float
    first_moment: float

    @property
    def C1(self) -> float:
        return self.integral * math.exp(self.first_moment)


def profile_moments(profile: CurvatureProfile) -> ProfileMoments:
    """
    Integrals of k* and s k* over [0, inf).

    Quadrature covers [0, cutoff]; the remainder comes from the profile's
    closed-form tail.
    """
    cutoff = profile.cutoff
    points = [p for p in profile.breakpoints() if 0 < p < cutoff] or None
    tail, first_tail = profile.tail_moments(cutoff)
    head, _ = integrate.quad(
        lambda s: float(profile.k_star(s)), 0.0, cutoff, points=points, **QUADRATURE_OPTIONS
    )
    first_head, _ = integrate.quad(
        lambda s: s * float(profile.k_star(s)),
        0.0,
        cutoff,
        points=points,
        **QUADRATURE_OPTIONS,
    )
    return ProfileMoments(integral=head + tail, first_moment=first_head + first_tail)


def compute_C1(profile: CurvatureProfile) -> float:
    """C1 = int k* exp(int s k*), the uniform bound on h'."""
    return profile_moments(profile).C1


@dataclass(frozen=True, eq=False)
class MetricSolution:
    """Sampled h(t), h'(t) on a uniform grid, with the integrals of the sandwich bounds."""

    profile: CurvatureProfile
    t: np.ndarray
    h: np.ndarray
    dh: np.ndarray
    k: np.ndarray
    integral_k: np.ndarray
    double_integral_k: np.ndarray
    C1: Optional[float]
    error_estimate: float
    T_star: Optional[float] = None

    @property
    def step(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def t_max(self) -> float:
        return float(self.t[-1])

    @property
    def dln_h(self) -> np.ndarray:
        return self.dh / self.h

    @cached_property
    def _h_spline(self):
        return CubicHermiteSpline(self.t, self.h, self.dh)

    @cached_property
    def _dh_spline(self):
        # (h')' = k* h
        return CubicHermiteSpline(self.t, self.dh, self.k * self.h)

    def _check_range(self, t):
        t = np.asarray(t, dtype=float)
        slack = 1e-9 * max(1.0, self.t_max)
        if np.any(t < self.t[0] - slack) or np.any(t > self.t_max + slack):
            raise DomainError(
                f"Time outside metric grid [0, {self.t_max}]: "
                f"[{np.min(t)}, {np.max(t)}]"
            )
        return t

    def h_at(self, t):
        return self._h_spline(self._check_range(t))

    def dh_at(self, t):
        return self._dh_spline(self._check_range(t))

    def dln_h_at(self, t):
        t = self._check_range(t)
        return self._dh_spline(t) / self._h_spline(t)

    def sign_switch(self) -> np.ndarray:
        return self.dln_h + 0.25 * self.profile.dlnk_dt(self.t)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "t": self.t,
                "k_star": self.k,
                "h": self.h,
                "dh": self.dh,
                "dln_h": self.dln_h,
                "S": self.sign_switch(),
            }
        )


def _rk4_propagate(profile: CurvatureProfile, t_max: float, steps: int):
    """
    Fixed-step classical RK4 for (h, h')' = [[0, 1], [k*, 0]] (h, h').

    The stage algebra of a linear system collapses into one 2x2 propagator
    per step, evaluated for all steps at once.
    """
    t = np.linspace(0.0, t_max, steps + 1)
    c = t_max / steps
    k0 = profile.k_star(t[:-1])
    km = profile.k_star(t[:-1] + 0.5 * c)
    k1 = profile.k_star(t[1:])

    p00 = 1.0 + c / 6.0 * (c * k0 + 2.0 * c * km + c**3 * km * k0 / 4.0)
    p01 = c / 6.0 * (6.0 + c**2 * km)
    p10 = c / 6.0 * (
        k0 + 4.0 * km + k1 + c**2 * km * k0 / 2.0 + c**2 * k1 * km / 2.0
    )
    p11 = 1.0 + c / 6.0 * (2.0 * c * km + c * k1 + c**3 * k1 * km / 4.0)

    h_values = [1.0]
    dh_values = [0.0]
    y0, y1 = 1.0, 0.0
    for a, b, d, e in zip(p00.tolist(), p01.tolist(), p10.tolist(), p11.tolist()):
        y0, y1 = a * y0 + b * y1, d * y0 + e * y1
        h_values.append(y0)
        dh_values.append(y1)
    return t, np.array(h_values), np.array(dh_values)


def solve_h(
    profile: CurvatureProfile,
    t_max: float,
    step: float,
    tolerance: float = INTEGRATOR_TOLERANCE,
) -> MetricSolution:
    """
    Integrate h'' = k* h, h(0) = 1, h'(0) = 0 on [0, t_max].

    The solution is computed with step and step/2; the half-step values are
    kept and the difference, divided by 15, is the Richardson error estimate.

    Args:
        profile: Curvature profile
        t_max: Final time (> 0)
        step: Requested step (> 0); adjusted so the grid ends at t_max
        tolerance: Bound on the estimate relative to max(1, |h|)

    Returns:
        MetricSolution on the grid of the requested step

    Raises:
        RefinementError: if the error estimate exceeds the tolerance
    """
    if t_max <= 0 or step <= 0:
        raise DomainError("solve_h requires t_max > 0 and step > 0.")

    steps = max(2, int(math.ceil(t_max / step - 1e-9)))
    t, h_coarse, dh_coarse = _rk4_propagate(profile, t_max, steps)
    _, h_fine, dh_fine = _rk4_propagate(profile, t_max, 2 * steps)
    h, dh = h_fine[::2], dh_fine[::2]

    scale = np.maximum(1.0, np.abs(h))
    estimate = float(
        np.max(np.maximum(np.abs(h - h_coarse), np.abs(dh - dh_coarse)) / scale) / 15.0
    )
    if estimate > tolerance:
        raise RefinementError(
            f"Richardson estimate {estimate:.3e} exceeds tolerance {tolerance:.1e}; "
            f"reduce the step below {t_max / steps:.4g}."
        )

    return _assemble_metric(profile, t, h, dh, estimate)


def _assemble_metric(profile, t, h, dh, error_estimate) -> MetricSolution:
    k = profile.k_star(t)
    integral_k = integrate.cumulative_simpson(k, x=t, initial=0.0)
    double_integral_k = integrate.cumulative_simpson(integral_k, x=t, initial=0.0)

    try:
        C1 = compute_C1(profile)
    except DivergenceError:
        C1 = None

    metric = MetricSolution(
        profile=profile,
        t=t,
        h=h,
        dh=dh,
        k=k,
        integral_k=integral_k,
        double_integral_k=double_integral_k,
        C1=C1,
        error_estimate=error_estimate,
    )
    try:
        metric = replace(metric, T_star=find_T_star(metric))
    except SignSwitchError:
        logger.info(f"No sign switch for {profile.describe()} on [0, {metric.t_max}]")
    return metric


def metric_from_frame(
    profile: CurvatureProfile, frame: pd.DataFrame, error_estimate: float = 0.0
) -> MetricSolution:
    """
    Rebuild a MetricSolution from the t, h, dh columns of MetricSolution.to_frame().

    Raises:
        MissingInputError: if a column is missing or the grid is too short
    """
    missing = [name for name in ("t", "h", "dh") if name not in frame.columns]
    if missing or len(frame) < 3:
        raise MissingInputError(f"Metric table lacks columns {missing} or rows.")
    t = frame["t"].to_numpy(dtype=float)
    if t[0] != 0 or np.any(np.diff(t) <= 0):
        raise DomainError("Metric table times must start at 0 and increase strictly.")
    h = frame["h"].to_numpy(dtype=float)
    dh = frame["dh"].to_numpy(dtype=float)
    return _assemble_metric(profile, t, h, dh, error_estimate)


def sandwich_bounds_violation(metric: MetricSolution) -> Dict[str, float]:
    """
    Largest violation of the h' and h sandwich bounds over the grid.

    Negative or zero entries mean the bound holds at every node.
    """
    if metric.C1 is None:
        raise DivergenceError("C1 undefined for a non-integrable profile.")
    return {
        "dh_lower": float(np.max(metric.integral_k - metric.dh)),
        "dh_upper": float(np.max(metric.dh - metric.C1)),
        "h_lower": float(np.max(1.0 + metric.double_integral_k - metric.h)),
        "h_upper": float(np.max(metric.h - (1.0 + metric.C1 * metric.t))),
    }


def dln_h(metric: MetricSolution, t):
    return metric.dln_h_at(t)


def metric_asymptotics(metric: MetricSolution, times: Sequence[float]) -> List[float]:
    """|t d/dt ln h - 1| at the given times."""
    return [abs(float(t * metric.dln_h_at(t)) - 1.0) for t in times]


def sign_switch(metric: MetricSolution, profile: Optional[CurvatureProfile], t):
    profile = profile or metric.profile
    return metric.dln_h_at(t) + 0.25 * profile.dlnk_dt(t)


def find_T_star(metric: MetricSolution, profile: Optional[CurvatureProfile] = None) -> float:
    """
    Smallest grid time after which S(t) > 0 on the rest of the grid.

    Raises:
        SignSwitchError: if S is not positive at the end of the grid
    """
    profile = profile or metric.profile
    S = metric.dln_h + 0.25 * profile.dlnk_dt(metric.t)
    nonpositive = np.flatnonzero(S <= 0)
    if nonpositive.size == 0:
        return float(metric.t[0])
    last = int(nonpositive[-1])
    if last == metric.t.size - 1:
        raise SignSwitchError(
            f"No sign switch detected on [0, {metric.t_max}] for {profile.describe()}"
        )
    return float(metric.t[last + 1])


@dataclass(frozen=True, eq=False)
class PhiSolution:
    """Comparison function phi on [T, t_max]."""

    anchor: float
    psi0: float
    b: float
    t: np.ndarray
    phi: np.ndarray
    method: str

    def evaluate(self, t):
        return np.interp(t, self.t, self.phi)

    def is_decreasing(self) -> bool:
        return bool(np.all(np.diff(self.phi) < 0))


def _phi_grid(metric: MetricSolution, T: float, t_max: Optional[float]):
    t_max = metric.t_max if t_max is None else t_max
    if not 0 <= T < t_max:
        raise DomainError(f"Anchor time {T} must lie in [0, {t_max}).")
    steps = max(2, int(math.ceil((t_max - T) / metric.step - 1e-9)))
    return np.linspace(T, t_max, steps + 1)


def _phi_coefficient(metric, profile, T, psi0):
    if psi0 <= 0:
        raise DomainError("psi0 must be positive.")
    k_anchor = float(profile.k_star(T))
    if k_anchor <= 0:
        raise DomainError("phi coefficient b undefined for vanishing curvature.")
    return psi0 / (float(metric.h_at(T)) * math.sqrt(k_anchor))


def phi_explicit(
    metric: MetricSolution,
    profile: CurvatureProfile,
    T: float,
    psi0: float,
    t_max: Optional[float] = None,
) -> PhiSolution:
    """
    phi(t) = b h sqrt(k*) / (1 - 2 b^2 int_T^t h h' k* ds)^(1/2).

    Raises:
        BlowUpError: if the denominator reaches zero before t_max
    """
    b = _phi_coefficient(metric, profile, T, psi0)
    t = _phi_grid(metric, T, t_max)
    h = metric.h_at(t)
    k = profile.k_star(t)
    accumulated = integrate.cumulative_simpson(h * metric.dh_at(t) * k, x=t, initial=0.0)
    denominator = 1.0 - 2.0 * b**2 * accumulated
    if np.any(denominator <= 0):
        blow_up = t[np.argmax(denominator <= 0)]
        raise BlowUpError(f"phi blows up near t = {blow_up:.6g} (psi0 = {psi0}).")
    phi = b * h * np.sqrt(k) / np.sqrt(denominator)
    phi[0] = psi0
    return PhiSolution(anchor=T, psi0=psi0, b=b, t=t, phi=phi, method="explicit")


def phi_ode(
    metric: MetricSolution,
    profile: CurvatureProfile,
    T: float,
    psi0: float,
    t_max: Optional[float] = None,
) -> PhiSolution:
    """Integrate phi' = phi (1 + phi^2) d/dt ln h + (phi/2) d/dt ln k* directly."""
    b = _phi_coefficient(metric, profile, T, psi0)
    t = _phi_grid(metric, T, t_max)

    def rhs(time, y):
        value = y[0]
        return [
            value * (1.0 + value**2) * float(metric.dln_h_at(time))
            + 0.5 * value * float(profile.dlnk_dt(time))
        ]

    result = integrate.solve_ivp(
        rhs,
        (t[0], t[-1]),
        [psi0],
        method="DOP853",
        t_eval=t,
        rtol=1e-11,
        atol=1e-14,
    )
    if not result.success or result.y.shape[1] != t.size:
        raise BlowUpError(f"phi integration failed: {result.message}")
    return PhiSolution(anchor=T, psi0=psi0, b=b, t=t, phi=result.y[0], method="ode")


@dataclass(frozen=True)
class DecayReport:
    """Sufficiency of logarithmic decay p for the sign-switch argument."""

    p: float
    lhs: float
    rhs: float
    satisfied: bool
    lhs_exact: float
    satisfied_exact: bool
    first_moment: float
    first_moment_bound: float
    first_moment_bound_holds: bool
    integral: float
    C1: float
    primitive_holds: bool

    def as_dict(self) -> Dict[str, object]:
        return dict(self.__dict__)


def decay_sufficiency_log(p: float) -> DecayReport:
    """
    Evaluate exp{1 / ((p - 1) 1.09^(p - 1))} < 2, its exact ln 3 variant,
    the first-moment bound and the primitive inequality int k* > C1 / 2.
    """
    if p <= 1:
        raise DomainError("Logarithmic decay requires p > 1.")
    lhs = math.exp(1.0 / ((p - 1.0) * LN3_SHORTCUT ** (p - 1.0)))
    bound = math.log(3.0) ** (1.0 - p) / (p - 1.0)
    lhs_exact = math.exp(bound)
    moments = profile_moments(LogDecay(p=p))
    return DecayReport(
        p=p,
        lhs=lhs,
        rhs=2.0,
        satisfied=lhs < 2.0,
        lhs_exact=lhs_exact,
        satisfied_exact=lhs_exact < 2.0,
        first_moment=moments.first_moment,
        first_moment_bound=bound,
        first_moment_bound_holds=moments.first_moment <= bound,
        integral=moments.integral,
        C1=moments.C1,
        primitive_holds=moments.integral > moments.C1 / 2.0,
    )


@dataclass(frozen=True)
class DecayScan:
    reports: List[DecayReport] = field(default_factory=list)

    @property
    def threshold(self) -> Optional[float]:
        """First scanned p passing the 1.09 test."""
        return next((r.p for r in self.reports if r.satisfied), None)

    @property
    def is_monotone(self) -> bool:
        flags = [r.satisfied for r in sorted(self.reports, key=lambda r: r.p)]
        return all(later or not earlier for earlier, later in zip(flags, flags[1:]))


def scan_decay_thresholds(p_values: Sequence[float]) -> DecayScan:
    return DecayScan(reports=[decay_sufficiency_log(p) for p in p_values])
