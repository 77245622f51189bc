"""
Entropy pair, dissipation norms, weak residuals and the viscosity sweep.

The entropy of the conservative system is eta(l, m) = -(m^2 + 1)/l with flux
q(l, m, h) = (m^3 - m)/(h l^2). Compactness of the viscous family is measured
through the quantities the limit argument controls: the dissipation norm
sqrt(mu) |d_x (l, m)|_{L^2}, the weak residuals of both balance laws against
a fixed bank of bump functions, and consecutive distances along a decreasing
viscosity sequence.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import integrate

from .exceptions import DomainError, LaboratoryError
from .fields import PERIOD, FieldState, Representation
from .metric import CurvatureProfile, MetricSolution
from .viscous import (
    SolverConfig,
    Trajectory,
    centered_first,
    extremum_mask,
    prepare_metric,
    solve,
    source_lm,
    transport_lm,
)

logger = logging.getLogger(__name__)

BANK_VERSION = 1
WINDOW_LEAD = 0.05
RESIDUAL_NOISE = 0.05


@dataclass(frozen=True)
class EntropyPair:
    eta: np.ndarray
    q: np.ndarray


@dataclass(frozen=True)
class HessianReport:
    pd: bool
    eigenvalues: Tuple[float, float]
    determinant: float


def entropy_eval(l, m, h) -> EntropyPair:
    """
    Evaluate eta = -(m^2 + 1)/l and q = (m^3 - m)/(h l^2).

    Raises:
        DomainError: if l = 0 or h <= 0 anywhere
    """
    l = np.asarray(l, dtype=float)
    if np.any(l == 0):
        raise DomainError("Entropy undefined at l = 0.")
    if np.any(np.asarray(h) <= 0):
        raise DomainError("Entropy flux requires h > 0.")
    return EntropyPair(eta=-(m**2 + 1.0) / l, q=(m**3 - m) / (h * l**2))


def entropy_gradient(l, m):
    return (m**2 + 1.0) / l**2, -2.0 * m / l


def entropy_hessian(l: float, m: float) -> np.ndarray:
    scale = -2.0 / l
    return scale * np.array([[(m**2 + 1.0) / l**2, -m / l], [-m / l, 1.0]])


def hessian_pd(l: float, m: float) -> HessianReport:
    """
    Definiteness of the entropy Hessian by Sylvester's criterion.

    The determinant is 4/l^4 in closed form; the smaller eigenvalue is
    recovered as det/lambda_max to stay accurate for large |m|.
    """
    if l == 0:
        raise DomainError("Entropy Hessian undefined at l = 0.")
    hessian = entropy_hessian(l, m)
    trace = hessian[0, 0] + hessian[1, 1]
    determinant = 4.0 / l**4
    root = math.sqrt(max(0.25 * trace**2 - determinant, 0.0))
    if trace >= 0:
        largest = 0.5 * trace + root
        smallest = determinant / largest
    else:
        smallest = 0.5 * trace - root
        largest = determinant / smallest
    return HessianReport(
        pd=bool(hessian[0, 0] > 0 and determinant > 0),
        eigenvalues=(smallest, largest),
        determinant=determinant,
    )


def _coefficients(metric: MetricSolution, profile: CurvatureProfile, t: float):
    return float(metric.h_at(t)), float(metric.dln_h_at(t)), float(profile.dlnk_dt(t))


def entropy_source(state: FieldState, metric: MetricSolution, profile: CurvatureProfile):
    """
    The lower-order term C(x, t) = eta_l S_l + eta_m S_m of the entropy balance.
    """
    scaled = state.scaled()
    B, a, d = _coefficients(metric, profile, state.t)
    source_l, source_m = source_lm(scaled.l, scaled.m, B, a, d, 0.0)
    eta_l, eta_m = entropy_gradient(scaled.l, scaled.m)
    return eta_l * source_l + eta_m * source_m


def entropy_identity_residual(
    state: FieldState,
    metric: MetricSolution,
    profile: CurvatureProfile,
    extremum_fallback: bool = False,
) -> np.ndarray:
    """
    Discrete eta_l T_l + eta_m T_m + d_x q for the transport part T.

    Vanishes identically for the continuous system; on smooth states the
    discrete value is a second-order truncation error.
    """
    scaled = state.scaled()
    l, m = scaled.l, scaled.m
    B = float(metric.h_at(state.t))
    low_order = None
    if extremum_fallback:
        low_order = extremum_mask((1.0 - m) / l, -(1.0 + m) / l)
    transport_l, transport_m = transport_lm(l, m, B, state.dx, low_order)
    eta_l, eta_m = entropy_gradient(l, m)
    q = entropy_eval(l, m, B).q
    return eta_l * transport_l + eta_m * transport_m + centered_first(q, state.dx)


@dataclass(frozen=True)
class Window:
    """Compact space-time window [t0, t1] x [x0, x1]."""

    t0: float
    t1: float
    x0: float = 0.0
    x1: float = PERIOD

    def __post_init__(self):
        if not (self.t0 < self.t1 and self.x0 < self.x1):
            raise DomainError(f"Degenerate window {self}.")

    @classmethod
    def for_trajectory(cls, trajectory: Trajectory, lead: float = WINDOW_LEAD) -> "Window":
        span = trajectory.T2 - trajectory.T1
        return cls(t0=trajectory.T1 + lead * span, t1=trajectory.T2)

    def is_full_period(self) -> bool:
        return self.x0 <= 0.0 and self.x1 >= PERIOD

    def time_mask(self, times) -> np.ndarray:
        slack = 1e-9 * max(1.0, abs(self.t1))
        return (times >= self.t0 - slack) & (times <= self.t1 + slack)

    def space_mask(self, x) -> np.ndarray:
        return (x >= self.x0) & (x < self.x1)

    def check_inside(self, trajectory: Trajectory):
        times = trajectory.times
        slack = 1e-9 * max(1.0, abs(self.t1))
        if self.t0 < times[0] - slack or self.t1 > times[-1] + slack:
            raise DomainError(
                f"Window [{self.t0}, {self.t1}] outside trajectory "
                f"[{times[0]}, {times[-1]}]."
            )
        if np.count_nonzero(self.time_mask(times)) < 2:
            raise DomainError("Window holds fewer than two snapshots.")


def _bump(z):
    """phi(z) = exp(-1/(1 - z^2)) on |z| < 1 and its derivative."""
    z = np.asarray(z, dtype=float)
    inside = np.abs(z) < 1.0
    safe = np.where(inside, 1.0 - z**2, 1.0)
    value = np.where(inside, np.exp(-1.0 / safe), 0.0)
    return value, np.where(inside, value * (-2.0 * z / safe**2), 0.0)


@dataclass(frozen=True)
class BumpFunction:
    """
    Tensor-product bump chi(x, t) = phi((x - xc)/rx) phi((t - tc)/rt).

    The x factor is periodic; the t centre and radius are fractions of the
    window's time extent.
    """

    x_center: float
    x_radius: float
    t_fraction: float
    t_radius_fraction: float

    def support(self, window: Window) -> Tuple[float, float]:
        extent = window.t1 - window.t0
        centre = window.t0 + self.t_fraction * extent
        radius = self.t_radius_fraction * extent
        return centre - radius, centre + radius

    def check_support(self, window: Window):
        start, end = self.support(window)
        if start < window.t0 - 1e-12 or end > window.t1 + 1e-12:
            raise DomainError(f"Test function support [{start}, {end}] leaves the window.")
        if not window.is_full_period():
            x_low, x_high = self.x_center - self.x_radius, self.x_center + self.x_radius
            if x_low < window.x0 or x_high > window.x1:
                raise DomainError("Test function x-support leaves the window.")

    def evaluate(self, x, t, window: Window):
        """Return chi, chi_t and chi_x on the grid (t[:, None], x[None, :])."""
        extent = window.t1 - window.t0
        centre = window.t0 + self.t_fraction * extent
        radius = self.t_radius_fraction * extent
        offset = np.mod(np.asarray(x) - self.x_center + math.pi, PERIOD) - math.pi
        phi_x, dphi_x = _bump(offset / self.x_radius)
        phi_t, dphi_t = _bump((np.asarray(t) - centre) / radius)
        chi = phi_t[:, None] * phi_x[None, :]
        chi_t = (dphi_t / radius)[:, None] * phi_x[None, :]
        chi_x = phi_t[:, None] * (dphi_x / self.x_radius)[None, :]
        return chi, chi_t, chi_x


DEFAULT_BANK = tuple(
    BumpFunction(
        x_center=PERIOD * centre,
        x_radius=3.0 * math.pi / 8.0,
        t_fraction=fraction,
        t_radius_fraction=0.3,
    )
    for fraction in (0.35, 0.65)
    for centre in (1.0 / 8.0, 3.0 / 8.0, 5.0 / 8.0, 7.0 / 8.0)
)


def _window_arrays(trajectory: Trajectory, window: Window):
    window.check_inside(trajectory)
    mask = window.time_mask(trajectory.times)
    times = trajectory.times[mask]
    l, m = trajectory.stacked(Representation.LM)
    x = trajectory.snapshots[0].x
    columns = window.space_mask(x)
    return times, x, columns, l[mask], m[mask]


def _space_integral(values, columns, dx):
    return np.sum(values[:, columns], axis=1) * dx


@dataclass(frozen=True)
class DissipationReport:
    mu: float
    times: np.ndarray
    l_norms: np.ndarray
    m_norms: np.ndarray
    l_spacetime: float
    m_spacetime: float

    @property
    def sup(self) -> float:
        return float(max(np.max(self.l_norms), np.max(self.m_norms)))


def dissipation_norm(trajectory: Trajectory, window: Optional[Window] = None) -> DissipationReport:
    """
    Per-time sqrt(mu) |D+ l|_{L^2} and sqrt(mu) |D+ m|_{L^2} over the window,
    with their space-time L^2 norms.
    """
    window = window or Window.for_trajectory(trajectory)
    times, x, columns, l, m = _window_arrays(trajectory, window)
    dx = x[1] - x[0]
    mu = trajectory.config.mu

    def per_time(values):
        difference = (np.roll(values, -1, axis=1) - values) / dx
        return np.sqrt(mu * _space_integral(difference**2, columns, dx))

    l_norms, m_norms = per_time(l), per_time(m)
    return DissipationReport(
        mu=mu,
        times=times,
        l_norms=l_norms,
        m_norms=m_norms,
        l_spacetime=float(math.sqrt(integrate.trapezoid(l_norms**2, times))),
        m_spacetime=float(math.sqrt(integrate.trapezoid(m_norms**2, times))),
    )


@dataclass(frozen=True)
class WeakResidual:
    index: int
    law_l: float
    law_m: float


def weak_residual(
    trajectory: Trajectory,
    bank: Sequence[BumpFunction] = DEFAULT_BANK,
    window: Optional[Window] = None,
) -> List[WeakResidual]:
    """
    Weak residuals |int int (w chi_t - f chi_x + s chi) dx dt| of
    l_t = (m/h)_x + s_l and m_t = (n/h)_x + s_m for every test function.

    Space integrals are periodic rectangle sums, time integrals trapezoidal
    over the snapshots inside the window.

    Raises:
        DomainError: if a test function's support leaves the window or the
            window leaves the trajectory
    """
    window = window or Window.for_trajectory(trajectory)
    times, x, columns, l, m = _window_arrays(trajectory, window)
    dx = x[1] - x[0]
    profile = trajectory.config.profile
    metric = trajectory.metric
    h = metric.h_at(times)[:, None]
    a = metric.dln_h_at(times)[:, None]
    d = np.asarray(profile.dlnk_dt(times), dtype=float)[:, None]
    n = (m**2 - 1.0) / l
    source_l, source_m = source_lm(l, m, h, a, d, 0.0)

    residuals = []
    for index, chi_function in enumerate(bank):
        chi_function.check_support(window)
        chi, chi_t, chi_x = chi_function.evaluate(x, times, window)
        law_l = l * chi_t - (m / h) * chi_x + source_l * chi
        law_m = m * chi_t - (n / h) * chi_x + source_m * chi
        residuals.append(
            WeakResidual(
                index=index,
                law_l=abs(float(integrate.trapezoid(_space_integral(law_l, columns, dx), times))),
                law_m=abs(float(integrate.trapezoid(_space_integral(law_m, columns, dx), times))),
            )
        )
    return residuals


def linf_bound(T2: float, psi0: float) -> float:
    """Bound A on |(l, m, n)| implied by the invariant region up to T2."""
    return max(math.exp(T2) / psi0, 1.0, psi0)


def linf_norm(trajectory: Trajectory) -> float:
    l, m = trajectory.stacked(Representation.LM)
    n = (m**2 - 1.0) / l
    return float(max(np.max(np.abs(l)), np.max(np.abs(m)), np.max(np.abs(n))))


def window_distance(first: Trajectory, second: Trajectory, window: Window) -> Dict[str, float]:
    """L^1 and L^2 distances of (l, m) between two runs on a common grid."""
    times, x, columns, l1, m1 = _window_arrays(first, window)
    other_times, _, _, l2, m2 = _window_arrays(second, window)
    if times.shape != other_times.shape or not np.allclose(times, other_times):
        raise DomainError("Runs do not share output times.")
    dx = x[1] - x[0]
    absolute = _space_integral(np.abs(l1 - l2) + np.abs(m1 - m2), columns, dx)
    square = _space_integral((l1 - l2) ** 2 + (m1 - m2) ** 2, columns, dx)
    return {
        "l1": float(integrate.trapezoid(absolute, times)),
        "l2": float(math.sqrt(integrate.trapezoid(square, times))),
    }


def _solve_job(arguments):
    config, metric = arguments
    try:
        return solve(config, metric=metric)
    except LaboratoryError as exc:
        return exc


def run_solves(configs: Sequence[SolverConfig], metric: MetricSolution, jobs: int = 1) -> list:
    """
    Solve each config; results are trajectories or the raised errors, in
    input order.
    """
    work = [(config, metric) for config in configs]
    if jobs <= 1 or len(work) <= 1:
        return [_solve_job(item) for item in work]
    with ProcessPoolExecutor(max_workers=jobs) as executor:
        return list(executor.map(_solve_job, work))


@dataclass
class SweepReport:
    mu_values: List[float]
    window: Window
    distances: List[Dict[str, float]] = field(default_factory=list)
    dissipation: List[Dict[str, float]] = field(default_factory=list)
    dissipation_sup: Optional[float] = None
    dissipation_slope: Optional[float] = None
    weak_residuals: Dict[float, List[WeakResidual]] = field(default_factory=dict)
    gauss_residual: Optional[float] = None
    linf_max: Optional[float] = None
    linf_bound: Optional[float] = None
    entropy_source_max: Optional[float] = None
    failures: Dict[float, str] = field(default_factory=dict)
    bank_version: int = BANK_VERSION

    @property
    def l1_distances(self) -> List[float]:
        return [entry["l1"] for entry in self.distances]

    def distances_decreasing(self) -> bool:
        values = self.l1_distances
        return all(b < a for a, b in zip(values, values[1:]))

    def residuals_decreasing(self, noise: float = RESIDUAL_NOISE) -> bool:
        """Every weak residual shrinks along the sweep up to relative noise."""
        ordered = [self.weak_residuals[mu] for mu in self.mu_values if mu in self.weak_residuals]
        for earlier, later in zip(ordered, ordered[1:]):
            for before, after in zip(earlier, later):
                if after.law_l > before.law_l * (1.0 + noise):
                    return False
                if after.law_m > before.law_m * (1.0 + noise):
                    return False
        return True

    @property
    def max_residuals(self) -> List[float]:
        """Largest residual over the bank and both laws, per finished viscosity."""
        return [
            max(max(item.law_l, item.law_m) for item in self.weak_residuals[mu])
            for mu in self.mu_values
            if self.weak_residuals.get(mu)
        ]

    def max_residual_decreasing(self, noise: float = RESIDUAL_NOISE) -> bool:
        values = self.max_residuals
        return all(b <= a * (1.0 + noise) for a, b in zip(values, values[1:]))

    def residual_frame(self) -> pd.DataFrame:
        rows = [
            {"mu": mu, "chi": item.index, "law_l": item.law_l, "law_m": item.law_m}
            for mu in self.mu_values
            for item in self.weak_residuals.get(mu, [])
        ]
        return pd.DataFrame(rows, columns=["mu", "chi", "law_l", "law_m"])

    def as_dict(self) -> Dict[str, object]:
        return {
            "mu_values": self.mu_values,
            "window": asdict(self.window),
            "bank_version": self.bank_version,
            "distances": self.distances,
            "distances_decreasing": self.distances_decreasing(),
            "dissipation": self.dissipation,
            "dissipation_sup": self.dissipation_sup,
            "dissipation_slope": self.dissipation_slope,
            "weak_residuals": {
                str(mu): [asdict(item) for item in items]
                for mu, items in self.weak_residuals.items()
            },
            "residuals_decreasing": self.residuals_decreasing(),
            "max_residuals": self.max_residuals,
            "max_residual_decreasing": self.max_residual_decreasing(),
            "gauss_residual": self.gauss_residual,
            "linf_max": self.linf_max,
            "linf_bound": self.linf_bound,
            "entropy_source_max": self.entropy_source_max,
            "failures": {str(mu): message for mu, message in self.failures.items()},
        }


def mu_sweep(
    config: SolverConfig,
    mu_values: Sequence[float],
    jobs: int = 1,
    window: Optional[Window] = None,
    bank: Sequence[BumpFunction] = DEFAULT_BANK,
    metric: Optional[MetricSolution] = None,
) -> Tuple[SweepReport, Dict[float, Trajectory]]:
    """
    Run one solve per viscosity on common grid, data and seed and measure
    the compactness proxies.

    Args:
        config: Base configuration; its mu is replaced per run
        mu_values: Strictly decreasing viscosities
        jobs: Number of worker processes
        window: Space-time window; defaults to the trajectory window
        bank: Test functions for the weak residuals
        metric: Precomputed metric solution

    Returns:
        The report and the successful trajectories keyed by mu
    """
    mu_values = [float(mu) for mu in mu_values]
    if not mu_values or any(b >= a for a, b in zip(mu_values, mu_values[1:])):
        raise DomainError("mu_values must be non-empty and strictly decreasing.")

    metric, T1, T2 = prepare_metric(config, metric)
    window = window or Window(t0=T1 + WINDOW_LEAD * (T2 - T1), t1=T2)
    logger.info(f"Sweeping mu over {mu_values} with {jobs} job(s)")
    results = run_solves([config.with_mu(mu) for mu in mu_values], metric, jobs)

    report = SweepReport(mu_values=mu_values, window=window)
    trajectories: Dict[float, Trajectory] = {}
    for mu, result in zip(mu_values, results):
        if isinstance(result, Exception):
            report.failures[mu] = f"{type(result).__name__}: {result}"
            logger.warning(f"Solve failed for mu={mu}: {result}")
        else:
            trajectories[mu] = result

    finished = [mu for mu in mu_values if mu in trajectories]
    for coarse, fine in zip(finished, finished[1:]):
        distance = window_distance(trajectories[coarse], trajectories[fine], window)
        report.distances.append({"mu_a": coarse, "mu_b": fine, **distance})

    for mu in finished:
        trajectory = trajectories[mu]
        dissipation = dissipation_norm(trajectory, window)
        report.dissipation.append(
            {
                "mu": mu,
                "sup_l": float(np.max(dissipation.l_norms)),
                "sup_m": float(np.max(dissipation.m_norms)),
                "l_spacetime": dissipation.l_spacetime,
                "m_spacetime": dissipation.m_spacetime,
            }
        )
        report.weak_residuals[mu] = weak_residual(trajectory, bank, window)

    if finished:
        sups = [max(entry["sup_l"], entry["sup_m"]) for entry in report.dissipation]
        report.dissipation_sup = max(sups)
        if len(finished) > 1 and min(sups) > 0:
            slope, _ = np.polyfit(np.log(finished), np.log(sups), 1)
            report.dissipation_slope = float(slope)

        finest = trajectories[finished[-1]]
        l, m = finest.stacked(Representation.LM)
        n = (m**2 - 1.0) / l
        if finest.config.representation is Representation.UV:
            scaled = [snapshot.scaled() for snapshot in finest.snapshots]
            report.gauss_residual = float(
                max(np.max(np.abs(s.l * s.n - s.m**2 + 1.0)) for s in scaled)
            )
        else:
            report.gauss_residual = float(np.max(np.abs(l * n - m**2 + 1.0)))
        report.linf_max = max(linf_norm(trajectories[mu]) for mu in finished)
        report.linf_bound = linf_bound(T2, config.psi0)
        report.entropy_source_max = float(
            max(
                np.max(np.abs(entropy_source(snapshot, metric, config.profile)))
                for snapshot in finest.snapshots
            )
        )
    return report, trajectories
