import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from faker import Faker

from .exceptions import DomainError
from .fields import FieldState, periodic_grid

fake = Faker()


@dataclass(frozen=True)
class DataSpec:
    """
    Initial-data recipe.

    kind is one of constant, two_step, pieces, random_cell or smooth. Values
    of |u| and |v| are drawn from [inner_low, inner_high] * psi0, a sub-box
    of the invariant region clipped away from its inner edge e^{-T1} psi0.
    """

    kind: str = "pieces"
    level: float = 0.5
    inner_low: float = 0.4
    inner_high: float = 0.7
    pieces: int = 16

    KINDS = ("constant", "two_step", "pieces", "random_cell", "smooth")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise DomainError(f"Unknown data kind: {self.kind}")
        if not 0 < self.inner_low < self.inner_high <= 1:
            raise DomainError("Require 0 < inner_low < inner_high <= 1.")
        if self.pieces < 1:
            raise DomainError("pieces must be positive.")


class RoughDataGenerator:
    """
    Generates deterministic initial data inside the invariant region.
    Uses numpy's Generator seeded per call so equal seeds give equal data.
    """

    @classmethod
    def admissible_box(cls, spec: DataSpec, T1: float, psi0: float) -> Tuple[float, float]:
        """
        Magnitude range for |u| and |v|.

        Args:
            spec: Data recipe
            T1: Initial time (> 0)
            psi0: Region size (> 0)

        Returns:
            (low, high) with e^{-T1} psi0 < low < high <= psi0
        """
        if psi0 <= 0:
            raise DomainError("psi0 must be positive.")
        inner_edge = math.exp(-T1)
        if T1 <= 0 or spec.inner_high <= inner_edge:
            raise DomainError(
                f"Empty admissible box at T1 = {T1}: e^(-T1) = {inner_edge:.4g}."
            )
        if spec.kind == "constant" and not inner_edge < spec.level <= 1:
            raise DomainError(f"Constant level {spec.level} outside the invariant region.")
        low = spec.inner_low
        if low <= inner_edge:
            low = inner_edge + 0.25 * (spec.inner_high - inner_edge)
        return low * psi0, spec.inner_high * psi0

    @classmethod
    def generate_magnitudes(cls, spec, J, low, high, rng) -> Tuple[np.ndarray, np.ndarray]:
        """
        Draw |u| and |v| per cell according to the recipe.

        Returns:
            Two arrays of length J with values in [low, high]
        """
        if spec.kind == "constant":
            value = spec.level * high / spec.inner_high
            return np.full(J, value), np.full(J, value)

        if spec.kind == "smooth":
            x = periodic_grid(J)
            centre, amplitude = 0.5 * (low + high), 0.5 * (high - low)
            phase = rng.uniform(0.0, 2.0 * math.pi, size=2)
            return (
                centre + amplitude * np.sin(x + phase[0]),
                centre + amplitude * np.cos(x + phase[1]),
            )

        blocks = {"two_step": 2, "pieces": spec.pieces, "random_cell": J}[spec.kind]
        blocks = min(blocks, J)
        values = rng.uniform(low, high, size=(2, blocks))
        index = (np.arange(J) * blocks) // J
        return values[0][index], values[1][index]

    @classmethod
    def generate_rough_data(
        cls, spec: DataSpec, J: int, T1: float, psi0: float, seed: int
    ) -> FieldState:
        """
        Generate initial (u, v) at time T1.

        Args:
            spec: Data recipe
            J: Number of cells
            T1: Initial time
            psi0: Region size
            seed: Random seed

        Returns:
            UV FieldState strictly inside the invariant region
        """
        low, high = cls.admissible_box(spec, T1, psi0)
        rng = np.random.default_rng(seed)
        u_magnitude, v_magnitude = cls.generate_magnitudes(spec, J, low, high, rng)
        return FieldState.from_uv(T1, -u_magnitude, v_magnitude)


def generate_rough_data(spec, J, T1, psi0, seed) -> FieldState:
    return RoughDataGenerator.generate_rough_data(spec, J, T1, psi0, seed)


def generate_run_id(command: str, seed: int, index: int = 0) -> str:
    """Deterministic run identifier for a (command, seed, job index) triple."""
    fake.seed_instance(f"{command}-{seed}-{index}")
    return fake.uuid4()
