"""
Experiment configuration: INI text validated section by section with strict
serializers, then frozen into an ExperimentConfig.
"""

import configparser
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional

from rest_framework import serializers

from .services.data_generator import DataSpec
from .services.exceptions import ConfigurationError, DomainError, MissingInputError
from .services.metric import INTEGRATOR_TOLERANCE, CurvatureProfile, build_profile
from .services.viscous import GAP_MIN, SolverConfig

DEFAULT_MU_LIST = [1e-2, 5e-3, 2.5e-3, 1.25e-3]
DEFAULT_P_SCAN = [2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]


class CommaSeparatedListField(serializers.Field):
    """
    List of numbers written as "a, b, c".
    Accepts a string or an already split list.
    """

    def __init__(self, child=float, **kwargs):
        self.child = child
        super().__init__(**kwargs)

    def to_internal_value(self, data):
        if isinstance(data, str):
            items = [item.strip() for item in data.split(",") if item.strip()]
        else:
            items = list(data)
        try:
            return [self.child(item) for item in items]
        except (TypeError, ValueError):
            raise serializers.ValidationError(
                f"Expected a comma-separated list of {self.child.__name__} values."
            )

    def to_representation(self, value):
        return ", ".join(str(item) for item in value)


class StrictSectionSerializer(serializers.Serializer):
    """Rejects keys that are not declared fields."""

    def to_internal_value(self, data):
        unknown = sorted(set(data) - set(self.fields))
        if unknown:
            raise serializers.ValidationError({key: ["Unknown key."] for key in unknown})
        return super().to_internal_value(data)


class ExperimentSectionSerializer(StrictSectionSerializer):
    name = serializers.CharField(default="experiment")
    seed = serializers.IntegerField(min_value=0, default=0)
    jobs = serializers.IntegerField(min_value=1, default=1)


class ProfileSectionSerializer(StrictSectionSerializer):
    kind = serializers.ChoiceField(
        choices=["hong_power", "log_decay", "constant", "tabulated"], default="hong_power"
    )
    C = serializers.FloatField(default=1.0)
    delta = serializers.FloatField(default=2.0)
    p = serializers.FloatField(default=3.0)
    value = serializers.FloatField(default=0.0)
    times = CommaSeparatedListField(required=False)
    values = CommaSeparatedListField(required=False)
    metric_step = serializers.FloatField(default=0.01)
    metric_horizon = serializers.FloatField(default=200.0)
    phi_span = serializers.FloatField(default=100.0)
    p_scan = CommaSeparatedListField(default=list(DEFAULT_P_SCAN))

    PARAMETERS = {
        "hong_power": ("C", "delta"),
        "log_decay": ("p",),
        "constant": ("value",),
        "tabulated": ("times", "values"),
    }

    def validate_metric_step(self, value):
        """Validate the integrator step is positive."""
        if value <= 0:
            raise serializers.ValidationError("metric_step must be positive.")
        return value

    def validate_metric_horizon(self, value):
        """Validate the integration horizon is positive."""
        if value <= 0:
            raise serializers.ValidationError("metric_horizon must be positive.")
        return value

    def validate(self, attrs):
        params = {name: attrs.get(name) for name in self.PARAMETERS[attrs["kind"]]}
        if attrs["kind"] == "tabulated" and (params["times"] is None or params["values"] is None):
            raise serializers.ValidationError("tabulated profiles need times and values.")
        try:
            attrs["profile"] = build_profile(attrs["kind"], **params)
        except DomainError as e:
            raise serializers.ValidationError(str(e))
        return attrs


class SolverSectionSerializer(StrictSectionSerializer):
    mu = serializers.FloatField(default=1e-3)
    J = serializers.IntegerField(min_value=8, default=128)
    psi0 = serializers.FloatField(default=0.1)
    T1 = serializers.FloatField(required=False, allow_null=True, default=None)
    t1_factor = serializers.FloatField(default=2.0)
    span = serializers.FloatField(default=10.0)
    cfl = serializers.FloatField(default=0.4)
    max_step = serializers.FloatField(default=0.05)
    output_interval = serializers.FloatField(default=0.1)
    representation = serializers.ChoiceField(choices=["uv", "lm"], default="uv")
    viscous_form = serializers.ChoiceField(choices=["derived", "printed"], default="derived")
    extremum_fallback = serializers.BooleanField(default=True)

    def validate_mu(self, value):
        """Validate viscosity is positive."""
        if value <= 0:
            raise serializers.ValidationError("mu must be positive.")
        return value

    def validate_psi0(self, value):
        """Validate region size is positive."""
        if value <= 0:
            raise serializers.ValidationError("psi0 must be positive.")
        return value

    def validate_cfl(self, value):
        """Validate the CFL number lies in (0, 1)."""
        if not 0 < value < 1:
            raise serializers.ValidationError("cfl must lie in (0, 1).")
        return value

    def validate(self, attrs):
        for name in ("span", "max_step", "output_interval", "t1_factor"):
            if attrs[name] <= 0:
                raise serializers.ValidationError({name: ["Must be positive."]})
        if attrs["T1"] is not None and attrs["T1"] <= 0:
            raise serializers.ValidationError({"T1": ["Must be positive."]})
        return attrs


class DataSectionSerializer(StrictSectionSerializer):
    kind = serializers.ChoiceField(choices=list(DataSpec.KINDS), default="pieces")
    level = serializers.FloatField(default=0.5)
    inner_low = serializers.FloatField(default=0.4)
    inner_high = serializers.FloatField(default=0.7)
    pieces = serializers.IntegerField(min_value=1, default=16)

    def validate(self, attrs):
        if not 0 < attrs["inner_low"] < attrs["inner_high"] <= 1:
            raise serializers.ValidationError("Require 0 < inner_low < inner_high <= 1.")
        if not 0 < attrs["level"] <= 1:
            raise serializers.ValidationError({"level": ["Must lie in (0, 1]."]})
        return attrs


class SweepSectionSerializer(StrictSectionSerializer):
    mu_list = CommaSeparatedListField(default=list(DEFAULT_MU_LIST))
    seeds = CommaSeparatedListField(child=int, default=list)
    window_lead = serializers.FloatField(default=0.05)

    def validate_mu_list(self, value):
        """Validate viscosities are positive and strictly decreasing."""
        if not value:
            raise serializers.ValidationError("mu_list cannot be empty.")
        if any(mu <= 0 for mu in value):
            raise serializers.ValidationError("Viscosities must be positive.")
        if any(b >= a for a, b in zip(value, value[1:])):
            raise serializers.ValidationError("mu_list must be strictly decreasing.")
        return value

    def validate_seeds(self, value):
        """Validate seeds are non-negative."""
        if any(seed < 0 for seed in value):
            raise serializers.ValidationError("Seeds cannot be negative.")
        return value

    def validate_window_lead(self, value):
        if not 0 <= value < 1:
            raise serializers.ValidationError("window_lead must lie in [0, 1).")
        return value


class ReconstructSectionSerializer(StrictSectionSerializer):
    source = serializers.ChoiceField(
        choices=["trajectory", "plane", "cylinder"], default="trajectory"
    )
    bundle = serializers.CharField(required=False, allow_blank=True, default="")
    radius = serializers.FloatField(default=1.0)
    nx = serializers.IntegerField(min_value=3, default=64)
    nt = serializers.IntegerField(min_value=3, default=64)
    t_extent = serializers.FloatField(default=1.0)
    order = serializers.ChoiceField(choices=["t_first", "x_first"], default="t_first")
    renormalize_every = serializers.IntegerField(min_value=0, default=16)
    anchor_t = serializers.IntegerField(min_value=0, default=0)
    anchor_x = serializers.IntegerField(min_value=0, default=0)

    def validate_radius(self, value):
        """Validate cylinder radius is positive."""
        if value <= 0:
            raise serializers.ValidationError("radius must be positive.")
        return value


class TolerancesSectionSerializer(StrictSectionSerializer):
    region = serializers.FloatField(default=1e-8)
    gap_min = serializers.FloatField(default=GAP_MIN)
    integrator = serializers.FloatField(default=INTEGRATOR_TOLERANCE)
    gauss = serializers.FloatField(default=1e-8)
    frame = serializers.FloatField(default=1e-6)

    def validate(self, attrs):
        for name, value in attrs.items():
            if value <= 0:
                raise serializers.ValidationError({name: ["Tolerances must be positive."]})
        return attrs


SECTION_SERIALIZERS = {
    "experiment": ExperimentSectionSerializer,
    "profile": ProfileSectionSerializer,
    "solver": SolverSectionSerializer,
    "data": DataSectionSerializer,
    "sweep": SweepSectionSerializer,
    "reconstruct": ReconstructSectionSerializer,
    "tolerances": TolerancesSectionSerializer,
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated configuration with the normalized echo and the raw text."""

    raw_text: str
    sections: Dict[str, Dict[str, Any]]
    profile: CurvatureProfile
    tolerance_overrides: Dict[str, float]
    source_path: Optional[str] = None

    @property
    def seed(self) -> int:
        return self.sections["experiment"]["seed"]

    @property
    def tolerances(self) -> Dict[str, float]:
        return self.sections["tolerances"]

    def section(self, name: str) -> Dict[str, Any]:
        return self.sections[name]

    def data_spec(self) -> DataSpec:
        return DataSpec(**self.sections["data"])

    def solver_config(self, seed: Optional[int] = None) -> SolverConfig:
        solver = self.sections["solver"]
        profile = self.sections["profile"]
        return SolverConfig(
            profile=self.profile,
            mu=solver["mu"],
            J=solver["J"],
            psi0=solver["psi0"],
            T1=solver["T1"],
            span=solver["span"],
            t1_factor=solver["t1_factor"],
            cfl=solver["cfl"],
            max_step=solver["max_step"],
            output_interval=solver["output_interval"],
            representation=solver["representation"],
            data=self.data_spec(),
            seed=self.seed if seed is None else seed,
            gap_min=self.tolerances["gap_min"],
            extremum_fallback=solver["extremum_fallback"],
            viscous_form=solver["viscous_form"],
            metric_step=profile["metric_step"],
            metric_horizon=profile["metric_horizon"],
        )

    def echo(self) -> Dict[str, Any]:
        return {
            "sections": self.sections,
            "raw_text": self.raw_text,
            "tolerance_overrides": self.tolerance_overrides,
        }


def parse_config_text(text: str, seed: Optional[int] = None, source_path=None) -> ExperimentConfig:
    """
    Parse and validate configuration text.

    Args:
        text: INI text; missing sections take their defaults
        seed: Optional override of [experiment] seed
        source_path: Path echoed into the bundle

    Returns:
        ExperimentConfig

    Raises:
        ConfigurationError: on syntax errors, unknown sections or keys and
            invalid values
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigurationError(f"Malformed configuration: {e}")

    unknown = sorted(set(parser.sections()) - set(SECTION_SERIALIZERS))
    if unknown:
        raise ConfigurationError(f"Unknown sections: {', '.join(unknown)}", {"sections": unknown})

    sections: Dict[str, Dict[str, Any]] = {}
    errors: Dict[str, Any] = {}
    profile = None
    for name, serializer_class in SECTION_SERIALIZERS.items():
        data = dict(parser[name]) if parser.has_section(name) else {}
        serializer = serializer_class(data=data)
        if not serializer.is_valid():
            errors[name] = serializer.errors
            continue
        validated = dict(serializer.validated_data)
        if name == "profile":
            profile = validated.pop("profile")
        sections[name] = validated
    if errors:
        raise ConfigurationError("Invalid configuration.", errors)

    if seed is not None:
        if seed < 0:
            raise ConfigurationError("Seed cannot be negative.", {"seed": seed})
        sections["experiment"]["seed"] = seed

    overrides = {}
    if parser.has_section("tolerances"):
        overrides = {key: sections["tolerances"][key] for key in parser["tolerances"]}

    return ExperimentConfig(
        raw_text=text,
        sections=sections,
        profile=profile,
        tolerance_overrides=overrides,
        source_path=str(source_path) if source_path else None,
    )


def load_experiment_config(path, seed: Optional[int] = None) -> ExperimentConfig:
    """
    Raises:
        MissingInputError: if the file does not exist
        ConfigurationError: if it does not validate
    """
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"Configuration file not found: {path}")
    return parse_config_text(path.read_text(), seed=seed, source_path=path)
