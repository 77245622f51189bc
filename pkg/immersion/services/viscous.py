"""
Vanishing-viscosity solver for the parabolically regularized Gauss-Codazzi system.

The periodic x-domain is discretized with J nodes and marched in time with
Heun's method (explicit second-order Runge-Kutta). Transport uses upwind
one-sided differences chosen by the sign of the characteristic speeds,
second order away from discrete extrema and first order next to them.
Diffusion uses the standard three-point Laplacian.

Two representations are supported: (u, v) Riemann invariants, where the
viscous term is the exact chain-rule image of mu (l_xx, m_xx), and the
conservative (l, m) form, where the transport is upwinded through the
characteristic decomposition of the flux Jacobian.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import integrate

from .data_generator import DataSpec, generate_rough_data
from .exceptions import ConfigurationError, HyperbolicityError, SignSwitchError, SolverAbort
from .fields import FieldState, Representation
from .metric import CurvatureProfile, MetricSolution, solve_h

logger = logging.getLogger(__name__)

GAP_MIN = 1e-8
VISCOUS_FORMS = ("derived", "printed")


@dataclass(frozen=True)
class SolverConfig:
    """
    Parameters of one viscous run.

    T1 = None means t1_factor * T*, with T* taken from the metric solution.
    """

    profile: CurvatureProfile
    mu: float = 1e-3
    J: int = 128
    psi0: float = 0.1
    T1: Optional[float] = None
    span: float = 10.0
    t1_factor: float = 2.0
    cfl: float = 0.4
    max_step: float = 0.05
    output_interval: float = 0.1
    representation: Representation = Representation.UV
    data: DataSpec = field(default_factory=DataSpec)
    seed: int = 0
    gap_min: float = GAP_MIN
    extremum_fallback: bool = True
    viscous_form: str = "derived"
    metric_step: float = 0.01
    metric_horizon: float = 200.0

    def __post_init__(self):
        if self.mu <= 0:
            raise ConfigurationError("mu must be positive.", {"mu": self.mu})
        if self.J < 8:
            raise ConfigurationError("J must be at least 8.", {"J": self.J})
        if not 0 < self.cfl < 1:
            raise ConfigurationError("cfl must lie in (0, 1).", {"cfl": self.cfl})
        if self.span <= 0 or self.output_interval <= 0 or self.max_step <= 0:
            raise ConfigurationError("span, output_interval and max_step must be positive.")
        if self.psi0 <= 0:
            raise ConfigurationError("psi0 must be positive.", {"psi0": self.psi0})
        if self.viscous_form not in VISCOUS_FORMS:
            raise ConfigurationError(
                f"viscous_form must be one of {VISCOUS_FORMS}.",
                {"viscous_form": self.viscous_form},
            )
        object.__setattr__(self, "representation", Representation(self.representation))

    def with_mu(self, mu: float) -> "SolverConfig":
        return replace(self, mu=mu)


@dataclass(frozen=True)
class RegionMargins:
    """Distances to the four edges of the invariant region; all positive inside."""

    u_lower: float
    u_upper: float
    v_lower: float
    v_upper: float

    @property
    def minimum(self) -> float:
        return min(self.u_lower, self.u_upper, self.v_lower, self.v_upper)

    @property
    def inside(self) -> bool:
        return self.minimum >= 0


@dataclass(frozen=True)
class MonitorRecord:
    t: float
    dt: float
    cfl_ratio: float
    min_gap: float
    margins: RegionMargins
    max_abs_l: float


@dataclass(eq=False)
class Trajectory:
    """Snapshots at the output times plus the per-step monitor log."""

    config: SolverConfig
    metric: MetricSolution
    T1: float
    T2: float
    snapshots: List[FieldState]
    monitor: List[MonitorRecord]
    cfl_reductions: int = 0

    @property
    def times(self) -> np.ndarray:
        return np.array([snapshot.t for snapshot in self.snapshots])

    @property
    def final(self) -> FieldState:
        return self.snapshots[-1]

    def stacked(self, representation=Representation.LM) -> Tuple[np.ndarray, np.ndarray]:
        """Return the two unknowns of the representation as (S, J) arrays."""
        states = [snapshot.convert(representation) for snapshot in self.snapshots]
        return (
            np.stack([state.first for state in states]),
            np.stack([state.second for state in states]),
        )

    def summary(self) -> Dict[str, object]:
        minimum_margin = min(record.margins.minimum for record in self.monitor)
        min_gap = min(record.min_gap for record in self.monitor)
        gap_excess = min(
            record.min_gap - 2.0 * math.exp(-record.t) * self.config.psi0
            for record in self.monitor
        )
        return {
            "T1": self.T1,
            "T2": self.T2,
            "T_star": self.metric.T_star,
            "mu": self.config.mu,
            "J": self.config.J,
            "representation": self.config.representation.value,
            "steps": len(self.monitor),
            "snapshots": len(self.snapshots),
            "cfl_reductions": self.cfl_reductions,
            "min_region_margin": minimum_margin,
            "region_preserved": minimum_margin >= -1e-8,
            "min_gap": min_gap,
            "min_gap_excess": gap_excess,
            "max_abs_l": max(record.max_abs_l for record in self.monitor),
        }


def centered_first(a: np.ndarray, dx: float) -> np.ndarray:
    return (np.roll(a, -1) - np.roll(a, 1)) / (2.0 * dx)


def centered_second(a: np.ndarray, dx: float) -> np.ndarray:
    return (np.roll(a, -1) - 2.0 * a + np.roll(a, 1)) / dx**2


def extremum_mask(*arrays: np.ndarray) -> np.ndarray:
    """
    Nodes within two cells of a discrete extremum of any of the arrays,
    i.e. where (a_{j+1} - a_j)(a_j - a_{j-1}) <= 0.
    """
    flagged = np.zeros(arrays[0].shape, dtype=bool)
    for a in arrays:
        flagged |= (np.roll(a, -1) - a) * (a - np.roll(a, 1)) <= 0
    widened = flagged.copy()
    for shift in (-2, -1, 1, 2):
        widened |= np.roll(flagged, shift)
    return widened


def upwind_derivative(a, speed, dx, low_order=None) -> np.ndarray:
    """
    One-sided derivative taken from the upwind side of each node.

    Args:
        a: Periodic values
        speed: Advection speed per node; backward differences where >= 0
        dx: Grid spacing
        low_order: Boolean mask of nodes that use first-order stencils;
            None means second order everywhere

    Returns:
        Array of derivative approximations
    """
    previous, before = np.roll(a, 1), np.roll(a, 2)
    following, after = np.roll(a, -1), np.roll(a, -2)
    backward = (3.0 * a - 4.0 * previous + before) / (2.0 * dx)
    forward = (-3.0 * a + 4.0 * following - after) / (2.0 * dx)
    if low_order is not None:
        backward = np.where(low_order, (a - previous) / dx, backward)
        forward = np.where(low_order, (following - a) / dx, forward)
    return np.where(speed >= 0, backward, forward)


def _metric_coefficients(metric: MetricSolution, profile: CurvatureProfile, x, t):
    return (
        float(metric.h_at(t)),
        float(metric.dln_h_at(t)),
        float(profile.dlnk_dt(t)),
        profile.dlnk_dx(x, t),
    )


def _check_gap(u, v, gap_min):
    gap = v - u
    smallest = float(np.min(gap))
    if not smallest >= gap_min:
        raise HyperbolicityError(f"Hyperbolicity gap {smallest:.3e} below {gap_min:.1e}.")
    return gap


def viscous_terms_uv(u, v, dx, form="derived") -> Tuple[np.ndarray, np.ndarray]:
    """
    Viscous brackets of the (u, v) equations without the factor mu.

    "derived" is the chain-rule image of (l_xx, m_xx); "printed" is the
    bracket in its commonly quoted closed form.
    """
    u_x, v_x = centered_first(u, dx), centered_first(v, dx)
    u_xx, v_xx = centered_second(u, dx), centered_second(v, dx)
    gap = v - u
    if form == "derived":
        cross = (v_x - u_x) / gap
        return u_xx - 2.0 * u_x * cross, v_xx - 2.0 * v_x * cross
    jump = (u_x - v_x) ** 2 / gap
    common = u_x**2 - v_x**2
    return (
        (common - 2.0 * u * jump - u * u_xx) / gap,
        (common - 2.0 * v * jump + v * v_xx) / gap,
    )


def viscous_bracket_discrepancy(state: FieldState) -> float:
    """Largest difference between the derived and printed viscous brackets."""
    riemann = state.riemann()
    derived = viscous_terms_uv(riemann.u, riemann.v, state.dx, "derived")
    printed = viscous_terms_uv(riemann.u, riemann.v, state.dx, "printed")
    return float(
        max(np.max(np.abs(derived[0] - printed[0])), np.max(np.abs(derived[1] - printed[1])))
    )


def source_uv(u, v, B, a, d, kx):
    return (
        -v * (1.0 + u**2) * a + 0.25 * (u - v) * (d + u / B * kx),
        -u * (1.0 + v**2) * a + 0.25 * (v - u) * (d + v / B * kx),
    )


def rhs_uv(
    state: FieldState,
    t: float,
    mu: float,
    metric: MetricSolution,
    profile: CurvatureProfile,
    *,
    extremum_fallback: bool = True,
    viscous_form: str = "derived",
    gap_min: float = GAP_MIN,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Semi-discrete right-hand side of the (u, v) system.

    Raises:
        HyperbolicityError: if min(v - u) < gap_min
    """
    u, v = state.first, state.second
    _check_gap(u, v, gap_min)
    dx = state.dx
    B, a, d, kx = _metric_coefficients(metric, profile, state.x, t)
    low_order = extremum_mask(u, v) if extremum_fallback else None

    du, dv = source_uv(u, v, B, a, d, kx)
    du -= v / B * upwind_derivative(u, v, dx, low_order)
    dv -= u / B * upwind_derivative(v, u, dx, low_order)
    if mu:
        viscous_u, viscous_v = viscous_terms_uv(u, v, dx, viscous_form)
        du += mu * viscous_u
        dv += mu * viscous_v
    return du, dv


def transport_lm(l, m, B, dx, low_order=None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Upwinded -(1/B) A w_x for w = (l, m).

    w_x is split along the eigenvectors r1 = (1, -u), r2 = (1, -v) of A and
    each wave is differenced on the side its speed u/B or v/B comes from.
    """
    u = (1.0 - m) / l
    v = -(1.0 + m) / l
    gap = v - u
    l_x1 = upwind_derivative(l, u, dx, low_order)
    m_x1 = upwind_derivative(m, u, dx, low_order)
    l_x2 = upwind_derivative(l, v, dx, low_order)
    m_x2 = upwind_derivative(m, v, dx, low_order)
    alpha = (m_x1 + v * l_x1) / gap
    beta = -(m_x2 + u * l_x2) / gap
    return (
        -(u * alpha + v * beta) / B,
        (u**2 * alpha + v**2 * beta) / B,
    )


def source_lm(l, m, B, a, d, kx):
    n = (m**2 - 1.0) / l
    return (
        -(l - n) * a - 0.5 * l * d + m / (2.0 * B) * kx,
        -2.0 * m * a - 0.5 * m * d + 0.5 * n * kx,
    )


def rhs_lm(
    state: FieldState,
    t: float,
    mu: float,
    metric: MetricSolution,
    profile: CurvatureProfile,
    *,
    extremum_fallback: bool = True,
    gap_min: float = GAP_MIN,
    **_,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Semi-discrete right-hand side of the conservative (l, m) system.

    Raises:
        HyperbolicityError: if l >= 0 somewhere or the gap -2/l < gap_min
    """
    l, m = state.first, state.second
    if np.any(l >= 0):
        raise HyperbolicityError("l must stay negative in the hyperbolic region.")
    _check_gap(np.zeros_like(l), -2.0 / l, gap_min)
    dx = state.dx
    B, a, d, kx = _metric_coefficients(metric, profile, state.x, t)
    low_order = None
    if extremum_fallback:
        low_order = extremum_mask((1.0 - m) / l, -(1.0 + m) / l)

    dl, dm = source_lm(l, m, B, a, d, kx)
    transport_l, transport_m = transport_lm(l, m, B, dx, low_order)
    dl += transport_l + mu * centered_second(l, dx)
    dm += transport_m + mu * centered_second(m, dx)
    return dl, dm


RIGHT_HAND_SIDES = {Representation.UV: rhs_uv, Representation.LM: rhs_lm}


def step(state: FieldState, dt: float, config: SolverConfig, metric: MetricSolution) -> FieldState:
    """One Heun step of size dt."""
    rhs = RIGHT_HAND_SIDES[state.representation]
    options = {
        "extremum_fallback": config.extremum_fallback,
        "viscous_form": config.viscous_form,
        "gap_min": config.gap_min,
    }
    t = state.t
    k1 = rhs(state, t, config.mu, metric, config.profile, **options)
    predictor = state.with_values(t + dt, state.first + dt * k1[0], state.second + dt * k1[1])
    k2 = rhs(predictor, t + dt, config.mu, metric, config.profile, **options)
    return state.with_values(
        t + dt,
        state.first + 0.5 * dt * (k1[0] + k2[0]),
        state.second + 0.5 * dt * (k1[1] + k2[1]),
    )


def allowed_step(state: FieldState, config: SolverConfig, metric: MetricSolution) -> float:
    """
    Largest step satisfying the transport and diffusion CFL conditions.

    The transport speed includes the first-order part of the viscous bracket
    in (u, v) form.
    """
    riemann = state.riemann()
    B = float(metric.h_at(state.t))
    dx = state.dx
    speed = float(np.max(np.maximum(np.abs(riemann.u), np.abs(riemann.v)))) / B
    if state.representation is Representation.UV:
        gap = riemann.v - riemann.u
        cross = np.abs(centered_first(gap, dx)) / gap
        speed += 2.0 * config.mu * float(np.max(cross))
    limits = [config.max_step, config.cfl * dx**2 / (2.0 * config.mu)]
    if speed > 0:
        limits.append(config.cfl * dx / speed)
    return min(limits)


def monitor_region(state: FieldState, t: float, psi0: float) -> RegionMargins:
    """
    Margins of the invariant region
    e^{-t} psi0 <= -u <= psi0 and e^{-t} psi0 <= v <= psi0.
    """
    riemann = state.riemann()
    inner = math.exp(-t) * psi0
    u, v = np.asarray(riemann.u), np.asarray(riemann.v)
    return RegionMargins(
        u_lower=float(np.min(-u - inner)),
        u_upper=float(np.min(psi0 + u)),
        v_lower=float(np.min(v - inner)),
        v_upper=float(np.min(psi0 - v)),
    )


def prepare_metric(
    config: SolverConfig, metric: Optional[MetricSolution] = None
) -> Tuple[MetricSolution, float, float]:
    """
    Metric solution covering [0, T2] together with the time window [T1, T2].

    Raises:
        SignSwitchError: if T1 is derived from T* and no sign switch exists
    """
    if metric is None:
        metric = solve_h(config.profile, config.metric_horizon, config.metric_step)
    if config.T1 is None:
        if metric.T_star is None:
            raise SignSwitchError(
                f"T* unavailable for {config.profile.describe()}; set T1 explicitly."
            )
        T1 = config.t1_factor * metric.T_star
    else:
        T1 = config.T1
    T2 = T1 + config.span
    if T2 > metric.t_max:
        logger.info(f"Extending metric grid from {metric.t_max} to {T2}")
        metric = solve_h(config.profile, T2, metric.step)
    return metric, T1, T2


def _record(state, t, dt, allowed, config):
    riemann = state.riemann()
    return MonitorRecord(
        t=t,
        dt=dt,
        cfl_ratio=dt / allowed,
        min_gap=float(np.min(riemann.v - riemann.u)),
        margins=monitor_region(state, t, config.psi0),
        max_abs_l=float(np.max(np.abs(state.l))),
    )


def solve(
    config: SolverConfig,
    metric: Optional[MetricSolution] = None,
    initial: Optional[FieldState] = None,
) -> Trajectory:
    """
    March the viscous system from T1 to T2.

    Snapshots are stored every output_interval. Within each interval the
    step is the largest uniform subdivision not exceeding the CFL limit,
    recomputed after every step so the limit is never violated.

    Args:
        config: Run parameters
        metric: Precomputed metric solution; solved on demand when None
        initial: Initial state at T1; generated from config.data when None

    Returns:
        Trajectory with output snapshots and monitor log

    Raises:
        SolverAbort: on loss of hyperbolicity or non-finite values
    """
    metric, T1, T2 = prepare_metric(config, metric)
    if initial is None:
        initial = generate_rough_data(config.data, config.J, T1, config.psi0, config.seed)
    state = initial.convert(config.representation)
    state = state.with_values(T1, state.first, state.second)

    intervals = max(1, int(round(config.span / config.output_interval)))
    outputs = np.linspace(T1, T2, intervals + 1)
    snapshots = [state]
    monitor = [_record(state, T1, 0.0, allowed_step(state, config, metric), config)]
    reductions = 0
    logger.info(
        f"Solving mu={config.mu} J={config.J} on [{T1:.4g}, {T2:.4g}] "
        f"({config.representation.value})"
    )

    for target in outputs[1:]:
        previous_dt = None
        while state.t < target:
            remaining = target - state.t
            try:
                allowed = allowed_step(state, config, metric)
                substeps = max(1, int(math.ceil(remaining / allowed - 1e-9)))
                dt = remaining / substeps
                candidate = step(state, dt, config, metric)
            except HyperbolicityError as exc:
                raise SolverAbort(f"{exc} at t = {state.t:.6g}", state=state) from exc
            if not np.all(np.isfinite(candidate.first) & np.isfinite(candidate.second)):
                raise SolverAbort(f"Non-finite values at t = {state.t + dt:.6g}", state=state)
            if previous_dt is not None and dt < previous_dt * (1.0 - 1e-9):
                reductions += 1
                logger.debug(f"Step reduced to {dt:.3e} at t = {state.t:.6g}")
            previous_dt = dt
            if substeps == 1:
                candidate = candidate.with_values(target, candidate.first, candidate.second)
            state = candidate
            monitor.append(_record(state, state.t, dt, allowed, config))
        snapshots.append(state)

    trajectory = Trajectory(
        config=config,
        metric=metric,
        T1=T1,
        T2=T2,
        snapshots=snapshots,
        monitor=monitor,
        cfl_reductions=reductions,
    )
    summary = trajectory.summary()
    if not summary["region_preserved"]:
        logger.warning(
            f"Invariant region left: margin {summary['min_region_margin']:.3e} (mu={config.mu})"
        )
    return trajectory


def source_ode_oracle(
    metric: MetricSolution,
    profile: CurvatureProfile,
    u0: float,
    v0: float,
    times,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Spatially constant solution of the (u, v) system from u0, v0 at times[0].

    Returns:
        u and v sampled at times
    """
    times = np.asarray(times, dtype=float)

    def rhs(t, y):
        B, a, d, _ = _metric_coefficients(metric, profile, np.zeros(1), t)
        du, dv = source_uv(y[0], y[1], B, a, d, 0.0)
        return [du, dv]

    result = integrate.solve_ivp(
        rhs,
        (times[0], times[-1]),
        [u0, v0],
        method="DOP853",
        t_eval=times,
        rtol=1e-12,
        atol=1e-14,
    )
    if not result.success:
        raise HyperbolicityError(f"Source oracle failed: {result.message}")
    return result.y[0], result.y[1]
