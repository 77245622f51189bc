"""
Periodic field states of the second-fundamental-form unknowns.
"""

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .geometry import RiemannState, ScaledState, from_riemann, to_riemann

PERIOD = 2.0 * math.pi


class Representation(str, Enum):
    UV = "uv"
    LM = "lm"


def periodic_grid(J: int) -> np.ndarray:
    """Nodes x_j = 2 pi j / J of the periodic domain [0, 2 pi)."""
    return PERIOD * np.arange(J) / J


@dataclass(frozen=True, eq=False)
class FieldState:
    """
    One time level: (u, v) in UV mode, (l, m) in LM mode with n = (m^2 - 1)/l.
    """

    representation: Representation
    t: float
    first: np.ndarray
    second: np.ndarray

    @classmethod
    def from_uv(cls, t, u, v):
        return cls(Representation.UV, float(t), np.asarray(u, float), np.asarray(v, float))

    @classmethod
    def from_lm(cls, t, l, m):
        return cls(Representation.LM, float(t), np.asarray(l, float), np.asarray(m, float))

    @property
    def J(self) -> int:
        return self.first.size

    @property
    def dx(self) -> float:
        return PERIOD / self.J

    @property
    def x(self) -> np.ndarray:
        return periodic_grid(self.J)

    def riemann(self) -> RiemannState:
        if self.representation is Representation.UV:
            return RiemannState(u=self.first, v=self.second)
        return to_riemann(self.first, self.second)

    def scaled(self) -> ScaledState:
        if self.representation is Representation.LM:
            l, m = self.first, self.second
            return ScaledState(l=l, m=m, n=(m**2 - 1.0) / l)
        return from_riemann(RiemannState(u=self.first, v=self.second))

    @property
    def u(self):
        return self.riemann().u

    @property
    def v(self):
        return self.riemann().v

    @property
    def l(self):
        return self.scaled().l

    @property
    def m(self):
        return self.scaled().m

    @property
    def n(self):
        return self.scaled().n

    def convert(self, representation: Representation) -> "FieldState":
        representation = Representation(representation)
        if representation is self.representation:
            return self
        if representation is Representation.UV:
            riemann = self.riemann()
            return FieldState.from_uv(self.t, riemann.u, riemann.v)
        scaled = self.scaled()
        return FieldState.from_lm(self.t, scaled.l, scaled.m)

    def with_values(self, t, first, second) -> "FieldState":
        return FieldState(self.representation, float(t), first, second)
