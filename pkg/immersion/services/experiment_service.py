import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from django.db import DatabaseError, transaction

from .. import __version__
from ..models import ExperimentRun
from . import bundles
from .compactness import Window, mu_sweep
from .data_generator import generate_run_id
from .exceptions import (
    BlowUpError,
    DomainError,
    LaboratoryError,
    MissingInputError,
    SolverAbort,
)
from .fields import Representation
from .metric import (
    LogDecay,
    build_profile,
    metric_from_frame,
    sandwich_bounds_violation,
    metric_asymptotics,
    phi_explicit,
    phi_ode,
    profile_moments,
    scan_decay_thresholds,
    solve_h,
)
from .surface import (
    cylinder_field,
    cylinder_points,
    export_obj,
    form_field_from_trajectory,
    frame_integrate,
    load_obj,
    mesh_topology_report,
    plane_field,
    surface_deviation,
    verify_forms,
)
from .viscous import (
    SolverConfig,
    Trajectory,
    prepare_metric,
    solve,
    viscous_bracket_discrepancy,
)

logger = logging.getLogger(__name__)

ASYMPTOTIC_TIMES = (50.0, 100.0, 200.0)
BUNDLE_INPUTS = ("trajectory.bin", "metric.csv", "summary.json")


def scan_frame(scan) -> pd.DataFrame:
    return pd.DataFrame([report.as_dict() for report in scan.reports])


class ExperimentService:
    """
    Runs one laboratory command and writes its output bundle.

    Every bundle holds config.json with the configuration echo, code version,
    seed, run id and input checksums. Runs are recorded in the ExperimentRun
    registry when the database is available.
    """

    def __init__(self, config, out_dir, jobs: Optional[int] = None):
        self.config = config
        self.out_dir = Path(out_dir)
        self.jobs = jobs or config.section("experiment")["jobs"]
        self.stats = {"files_written": 0, "runs": 0, "completed": 0, "failed": 0}

    def _path(self, name: str) -> Path:
        return self.out_dir / name

    def _write_json(self, name, payload):
        bundles.write_json(self._path(name), payload)
        self.stats["files_written"] += 1

    def _write_csv(self, name, frame: pd.DataFrame):
        bundles.write_csv(self._path(name), frame)
        self.stats["files_written"] += 1

    def _input_paths(self, extra: Optional[List[Path]] = None) -> List[Path]:
        paths = [Path(self.config.source_path)] if self.config.source_path else []
        return paths + list(extra or [])

    def _write_config_echo(self, command: str, run_id: str, inputs: Optional[List[Path]] = None):
        self._write_json(
            "config.json",
            {
                "command": command,
                "run_id": run_id,
                "code_version": __version__,
                "seed": self.config.seed,
                "checksums": bundles.checksums(self._input_paths(inputs)),
                **self.config.echo(),
            },
        )

    def _register(self, run_id: str, command: str, status: str, summary: Dict[str, Any]):
        """
        Record the run; the registry is optional and never fails a run.
        """
        try:
            with transaction.atomic():
                ExperimentRun.objects.update_or_create(
                    run_id=run_id,
                    defaults={
                        "command": command,
                        "status": status,
                        "seed": self.config.seed,
                        "config": json.loads(bundles.dumps_json(self.config.sections)),
                        "summary": json.loads(bundles.dumps_json(summary)),
                        "bundle_path": str(self.out_dir),
                        "code_version": __version__,
                    },
                )
        except DatabaseError as e:
            logger.warning(f"Run registry unavailable, {run_id} not recorded: {e}")

    def _start(self, command: str, index: int = 0) -> str:
        self.stats["runs"] += 1
        run_id = generate_run_id(command, self.config.seed, index)
        logger.info(f"Starting {command} run {run_id}")
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return run_id

    def _finish(self, run_id: str, command: str, summary: Dict[str, Any]) -> Dict[str, Any]:
        summary = {"run_id": run_id, **summary}
        self._register(run_id, command, ExperimentRun.Status.COMPLETED, summary)
        self.stats["completed"] += 1
        logger.info(f"{command} completed. Stats: {self.stats}")
        return summary

    def _fail(self, run_id: str, command: str, error: LaboratoryError, status=None):
        self.stats["failed"] += 1
        logger.error(f"{command} run {run_id} failed: {error}")
        self._register(
            run_id,
            command,
            status or ExperimentRun.Status.FAILED,
            {"error": type(error).__name__, "message": str(error)},
        )

    def _metric(self, horizon: Optional[float] = None):
        profile_section = self.config.section("profile")
        return solve_h(
            self.config.profile,
            horizon or profile_section["metric_horizon"],
            profile_section["metric_step"],
            tolerance=self.config.tolerances["integrator"],
        )

    def _phi_summary(self, metric) -> Dict[str, Any]:
        """Agreement of the explicit and integrated comparison functions."""
        solver = self.config.section("solver")
        span = self.config.section("profile")["phi_span"]
        if metric.T_star is None and solver["T1"] is None:
            return {"available": False, "reason": "no sign switch"}
        anchor = solver["T1"] if solver["T1"] is not None else solver["t1_factor"] * metric.T_star
        if anchor + span > metric.t_max:
            metric = self._metric(anchor + span)
        try:
            arguments = (metric, self.config.profile, anchor, solver["psi0"], anchor + span)
            explicit = phi_explicit(*arguments)
            integrated = phi_ode(*arguments)
        except (BlowUpError, DomainError) as e:
            return {"available": False, "reason": str(e)}
        return {
            "available": True,
            "anchor": anchor,
            "psi0": solver["psi0"],
            "span": span,
            "b": explicit.b,
            "max_difference": float(np.max(np.abs(explicit.phi - integrated.phi))),
            "decreasing": explicit.is_decreasing(),
            "final": float(explicit.phi[-1]),
        }

    def run_metric(self) -> Dict[str, Any]:
        """
        Solve the metric ODE and report C1, T*, the sandwich bounds, the
        comparison function and, for log-decay profiles, the p-threshold scan.

        Returns:
            Summary dictionary also written to metric_summary.json
        """
        command = "metric"
        run_id = self._start(command)
        profile = self.config.profile
        try:
            metric = self._metric()
            try:
                moments = profile_moments(profile)
                moment_summary = {
                    "integral": moments.integral,
                    "first_moment": moments.first_moment,
                }
            except LaboratoryError as e:
                moment_summary = {"error": str(e)}
            asymptotic_times = [t for t in ASYMPTOTIC_TIMES if t <= metric.t_max]
            summary = {
                "profile": profile.describe(),
                "t_max": metric.t_max,
                "step": metric.step,
                "error_estimate": metric.error_estimate,
                "C1": metric.C1,
                "T_star": metric.T_star,
                "moments": moment_summary,
                "bounds_violation": sandwich_bounds_violation(metric),
                "asymptotics": dict(
                    zip(map(str, asymptotic_times), metric_asymptotics(metric, asymptotic_times))
                ),
                "phi": self._phi_summary(metric),
            }
            if isinstance(profile, LogDecay):
                scan = scan_decay_thresholds(self.config.section("profile")["p_scan"])
                summary["decay_scan"] = {"threshold": scan.threshold, "monotone": scan.is_monotone}
                self._write_csv("decay_scan.csv", scan_frame(scan))
        except LaboratoryError as e:
            self._fail(run_id, command, e)
            raise

        self._write_config_echo(command, run_id)
        self._write_csv("metric.csv", metric.to_frame())
        self._write_json("metric_summary.json", summary)
        return self._finish(run_id, command, summary)

    def run_verify_decay(self) -> Dict[str, Any]:
        """Evaluate the logarithmic-decay sufficiency test over p_scan."""
        command = "verify_decay"
        run_id = self._start(command)
        try:
            scan = scan_decay_thresholds(self.config.section("profile")["p_scan"])
        except LaboratoryError as e:
            self._fail(run_id, command, e)
            raise
        summary = {
            "threshold": scan.threshold,
            "monotone": scan.is_monotone,
            "reports": [report.as_dict() for report in scan.reports],
        }
        self._write_config_echo(command, run_id)
        self._write_csv("decay_scan.csv", scan_frame(scan))
        self._write_json("decay_summary.json", summary)
        return self._finish(run_id, command, summary)

    def _trajectory_summary(self, trajectory: Trajectory) -> Dict[str, Any]:
        summary = {
            **trajectory.summary(),
            "profile": self.config.profile.describe(),
            "psi0": trajectory.config.psi0,
            "seed": trajectory.config.seed,
            "metric_step": trajectory.metric.step,
            "metric_error_estimate": trajectory.metric.error_estimate,
            "l_lower_bound": -2.0 * math.exp(trajectory.T2) / trajectory.config.psi0,
        }
        if trajectory.config.representation is Representation.UV:
            summary["viscous_bracket_discrepancy"] = max(
                viscous_bracket_discrepancy(snapshot) for snapshot in trajectory.snapshots
            )
        return summary

    def _write_trajectory(self, trajectory: Trajectory):
        bundles.write_checkpoint(
            self._path("trajectory.bin"),
            trajectory.snapshots,
            trajectory.config.psi0,
            trajectory.config.mu,
        )
        self.stats["files_written"] += 1
        self._write_csv("trajectory.csv", bundles.trajectory_frame(trajectory.snapshots))
        self._write_csv("monitor.csv", bundles.monitor_frame(trajectory.monitor))
        self._write_csv("metric.csv", trajectory.metric.to_frame())

    def run_solve(self) -> Dict[str, Any]:
        """
        Run one viscous solve.

        Raises:
            SolverAbort: with snapshot_path set to the written diagnostic
                checkpoint
        """
        command = "solve"
        run_id = self._start(command)
        solver_config = self.config.solver_config()
        try:
            trajectory = solve(solver_config, metric=self._metric())
        except SolverAbort as e:
            if e.state is not None:
                path = bundles.write_checkpoint(
                    self._path("abort_snapshot.bin"),
                    [e.state],
                    solver_config.psi0,
                    solver_config.mu,
                )
                e.snapshot_path = str(path)
            self._write_config_echo(command, run_id)
            self._fail(run_id, command, e, ExperimentRun.Status.ABORTED)
            raise
        except LaboratoryError as e:
            self._fail(run_id, command, e)
            raise

        summary = self._trajectory_summary(trajectory)
        summary["region_tolerance_met"] = bool(
            summary["min_region_margin"] >= -self.config.tolerances["region"]
        )
        self._write_config_echo(command, run_id)
        self._write_trajectory(trajectory)
        self._write_json("summary.json", summary)
        return self._finish(run_id, command, summary)

    def run_sweep(self) -> Dict[str, Any]:
        """
        Run the viscosity sweep for every configured seed.

        Aborted solves are annotated in the report rather than failing the run.
        """
        command = "sweep"
        run_id = self._start(command)
        sweep = self.config.section("sweep")
        seeds = sweep["seeds"] or [self.config.seed]
        reports = []
        frames = []
        try:
            metric = self._metric()
            for seed in seeds:
                base = self.config.solver_config(seed=seed)
                report, _ = mu_sweep(
                    base,
                    sweep["mu_list"],
                    jobs=self.jobs,
                    window=self._sweep_window(base, metric),
                    metric=metric,
                )
                payload = report.as_dict()
                payload["seed"] = seed
                if report.gauss_residual is not None:
                    payload["gauss_within_tolerance"] = bool(
                        report.gauss_residual <= self.config.tolerances["gauss"]
                    )
                reports.append(payload)
                frame = report.residual_frame()
                frame.insert(0, "seed", seed)
                frames.append(frame)
                logger.info(f"Sweep for seed {seed}: distances {report.l1_distances}")
        except LaboratoryError as e:
            self._fail(run_id, command, e)
            raise

        summary = {
            "mu_list": sweep["mu_list"],
            "seeds": seeds,
            "reports": reports,
        }
        self._write_config_echo(command, run_id)
        self._write_json("sweep_report.json", summary)
        self._write_csv("weak_residuals.csv", pd.concat(frames, ignore_index=True))
        return self._finish(run_id, command, summary)

    def _sweep_window(self, base: SolverConfig, metric) -> Optional[Window]:
        _, T1, T2 = prepare_metric(base, metric)
        lead = self.config.section("sweep")["window_lead"]
        return Window(t0=T1 + lead * (T2 - T1), t1=T2)

    def load_trajectory_bundle(self, bundle) -> Trajectory:
        """
        Rebuild a trajectory from a solve bundle (trajectory.bin, metric.csv and
        summary.json). The metric is the one the solve ran with.

        Raises:
            MissingInputError: if the bundle or one of its files is missing
        """
        bundle = Path(bundle)
        summary_path = bundle / "summary.json"
        if not summary_path.is_file():
            raise MissingInputError(f"Trajectory bundle not found: {bundle}")
        summary = json.loads(summary_path.read_text())
        checkpoint = bundles.read_checkpoint(bundle / "trajectory.bin")
        description = dict(summary["profile"])
        profile = build_profile(description.pop("kind"), **description)
        T1, T2 = summary["T1"], summary["T2"]
        config = SolverConfig(
            profile=profile,
            mu=checkpoint.mu,
            J=checkpoint.snapshots[0].J,
            psi0=checkpoint.psi0,
            T1=T1,
            span=T2 - T1,
            representation=checkpoint.representation,
            seed=summary.get("seed", 0),
        )
        metric_path = bundle / "metric.csv"
        if not metric_path.is_file():
            raise MissingInputError(f"Metric table not found: {metric_path}")
        metric = metric_from_frame(
            profile,
            pd.read_csv(metric_path, float_precision="round_trip"),
            summary.get("metric_error_estimate", 0.0),
        )
        if metric.t_max < T2:
            raise MissingInputError(f"Metric table ends at {metric.t_max} before T2 = {T2}.")
        return Trajectory(
            config=config,
            metric=metric,
            T1=T1,
            T2=T2,
            snapshots=checkpoint.snapshots,
            monitor=[],
        )

    def run_reconstruct(self, bundle: Optional[str] = None) -> Dict[str, Any]:
        """
        Reconstruct the immersion from a fixture or a solve bundle, verify
        both fundamental forms and export the mesh.
        """
        command = "reconstruct"
        run_id = self._start(command)
        section = self.config.section("reconstruct")
        bundle = bundle or section["bundle"]
        inputs = []
        reference = None
        try:
            if section["source"] == "plane":
                form_field = plane_field(
                    section["nx"], section["nt"], t_extent=section["t_extent"]
                )
            elif section["source"] == "cylinder":
                form_field = cylinder_field(
                    section["radius"], section["nx"], section["nt"], section["t_extent"]
                )
                reference = cylinder_points(section["radius"], form_field.x, form_field.t)
            else:
                if not bundle:
                    raise MissingInputError("reconstruct needs a trajectory bundle.")
                trajectory = self.load_trajectory_bundle(bundle)
                inputs = [Path(bundle) / name for name in BUNDLE_INPUTS]
                form_field = form_field_from_trajectory(trajectory)

            surface = frame_integrate(
                form_field,
                anchor=(section["anchor_t"], section["anchor_x"]),
                order=section["order"],
                renormalize_every=section["renormalize_every"],
            )
            report = verify_forms(surface, form_field)
        except LaboratoryError as e:
            self._fail(run_id, command, e)
            raise

        self._write_config_echo(command, run_id, inputs)
        mesh_path = export_obj(surface, self._path("surface.obj"))
        self.stats["files_written"] += 1
        summary = {
            "source": section["source"],
            "grid": list(form_field.shape),
            "residuals": report.as_dict(),
            "surface": surface.metadata,
            "gauss_residual": float(np.max(np.abs(form_field.gauss_residual()))),
            "frame_within_tolerance": bool(
                surface.metadata["gram_residual"] <= self.config.tolerances["frame"]
            ),
            "mesh": mesh_topology_report(load_obj(mesh_path)),
        }
        if reference is not None:
            summary["deviation_from_reference"] = surface_deviation(surface.points, reference)
        self._write_json("residuals.json", summary)
        return self._finish(run_id, command, summary)
