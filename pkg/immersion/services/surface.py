"""
Surface reconstruction from fundamental forms.

Given g = B^2 dx^2 + dt^2 and the second form (L, M, N) on an (x, t) grid, the
Gauss-Weingarten system

    d_t r1 = (B'/B) r1 + M n            d_x r1 = (B_x/B) r1 - B B' r2 + L n
    d_t r2 = N n                        d_x r2 = (B'/B) r1 + M n
    d_t n  = -(M/B^2) r1 - N r2         d_x n  = -(L/B^2) r1 - M r2

is integrated for the frame (r1, r2, n) = (d_x y, d_t y, normal) together with
y itself. Integration runs along one coordinate line through the anchor and
then along the other coordinate for all lines at once, using classical RK4
with coefficients interpolated linearly between grid nodes.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, NamedTuple, Tuple

import numpy as np

from .bundles import atomic_write_text
from .exceptions import DomainError, FrameIntegrationError, MissingInputError
from .fields import PERIOD, Representation
from .geometry import FundamentalForms, RawForms, christoffel, fundamental_forms
from .viscous import Trajectory

logger = logging.getLogger(__name__)

RENORMALIZE_EVERY = 16
ORDERS = ("t_first", "x_first")


def _uniform_spacing(values: np.ndarray, name: str) -> float:
    if values.ndim != 1 or values.size < 2:
        raise DomainError(f"{name} grid needs at least two nodes.")
    steps = np.diff(values)
    spacing = float(steps[0])
    if spacing <= 0 or not np.allclose(steps, spacing, rtol=1e-9, atol=1e-12):
        raise DomainError(f"{name} grid must be increasing and uniform.")
    return spacing


@dataclass(frozen=True, eq=False)
class FormField:
    """
    First and second forms on an Nt x Nx grid.

    B, dB and K depend on t only; L, M and N have shape (Nt, Nx).
    """

    x: np.ndarray
    t: np.ndarray
    B: np.ndarray
    dB: np.ndarray
    K: np.ndarray
    L: np.ndarray
    M: np.ndarray
    N: np.ndarray
    provenance: str = "fixture"

    def __post_init__(self):
        shape = (self.t.size, self.x.size)
        for name in ("L", "M", "N"):
            if getattr(self, name).shape != shape:
                raise DomainError(f"{name} must have shape {shape}.")
        if not np.all(np.asarray(self.B) > 0):
            raise DomainError("Metric is not positive definite: B <= 0 somewhere.")
        _uniform_spacing(self.x, "x")
        _uniform_spacing(self.t, "t")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.t.size, self.x.size

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    def _column(self, values):
        return np.broadcast_to(np.asarray(values, dtype=float)[:, None], self.shape)

    def raw_forms(self) -> RawForms:
        return RawForms(
            L=self.L,
            M=self.M,
            N=self.N,
            B=self._column(self.B),
            K=self._column(self.K),
        )

    def forms(self) -> FundamentalForms:
        return fundamental_forms(self.raw_forms())

    def gauss_residual(self) -> np.ndarray:
        return self.raw_forms().gauss_residual()

    def coefficient_matrices(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        Gauss-Weingarten matrices C_t and C_x of shape (Nt, Nx, 3, 3).

        Along coordinate j, d r_i = Gamma^k_ij r_k + h_ij n and
        d n = -g^kk h_kj r_k; the metric is diagonal.
        """
        forms = self.forms()
        symbols = christoffel(self._column(self.B), self._column(self.dB))
        # gamma[k][i][j], index 0 = x and 1 = t
        gamma = (
            ((symbols.x_xx, symbols.x_xt), (symbols.x_xt, 0.0)),
            ((symbols.t_xx, 0.0), (0.0, 0.0)),
        )
        second = ((forms.h11, forms.h12), (forms.h12, forms.h22))
        inverse = (1.0 / forms.g11, 1.0 / forms.g22)

        matrices = []
        for j in (1, 0):
            C = np.zeros(self.shape + (3, 3))
            for i in (0, 1):
                for k in (0, 1):
                    C[..., i, k] = gamma[k][i][j]
                C[..., i, 2] = second[i][j]
                C[..., 2, i] = -inverse[i] * second[i][j]
            matrices.append(C)
        C_t, C_x = matrices
        return C_t, C_x


def plane_field(
    nx: int = 17, nt: int = 17, x_extent: float = 1.0, t_extent: float = 1.0
) -> FormField:
    x = np.linspace(0.0, x_extent, nx)
    t = np.linspace(0.0, t_extent, nt)
    zeros = np.zeros((nt, nx))
    return FormField(
        x=x,
        t=t,
        B=np.ones(nt),
        dB=np.zeros(nt),
        K=np.zeros(nt),
        L=zeros,
        M=zeros.copy(),
        N=zeros.copy(),
        provenance="plane",
    )


def cylinder_field(
    radius: float = 1.0, nx: int = 64, nt: int = 64, t_extent: float = 1.0
) -> FormField:
    """Cylinder of the given radius, one full turn in x; L = -1/r, M = N = 0."""
    if radius <= 0:
        raise DomainError("Cylinder radius must be positive.")
    x = np.linspace(0.0, PERIOD * radius, nx)
    t = np.linspace(0.0, t_extent, nt)
    return FormField(
        x=x,
        t=t,
        B=np.ones(nt),
        dB=np.zeros(nt),
        K=np.zeros(nt),
        L=np.full((nt, nx), -1.0 / radius),
        M=np.zeros((nt, nx)),
        N=np.zeros((nt, nx)),
        provenance=f"cylinder(r={radius})",
    )


def cylinder_points(radius: float, x, t) -> np.ndarray:
    """Closed-form immersion y = (r sin(x/r), t, r (cos(x/r) - 1)) on the grid."""
    X, T = np.meshgrid(np.asarray(x), np.asarray(t))
    return np.stack(
        [radius * np.sin(X / radius), T, radius * (np.cos(X / radius) - 1.0)], axis=-1
    )


def form_field_from_trajectory(trajectory: Trajectory, close_period: bool = True) -> FormField:
    """
    Unscale solver snapshots into (L, M, N) with B = h(t) and K = -k*(t).

    With close_period the first column is repeated at x = 2 pi so the grid
    spans the whole period.
    """
    times = trajectory.times
    metric = trajectory.metric
    profile = trajectory.config.profile
    B = np.asarray(metric.h_at(times), dtype=float)
    dB = np.asarray(metric.dh_at(times), dtype=float)
    k = np.asarray(profile.k_star(times), dtype=float)
    l, m = trajectory.stacked(Representation.LM)
    n = (m**2 - 1.0) / l
    x = trajectory.snapshots[0].x
    if close_period:
        l, m, n = (np.concatenate([a, a[:, :1]], axis=1) for a in (l, m, n))
        x = np.append(x, PERIOD)
    root = np.sqrt(k)[:, None]
    return FormField(
        x=x,
        t=times,
        B=B,
        dB=dB,
        K=-k,
        L=l * (B**2)[:, None] * root,
        M=m * B[:, None] * root,
        N=n * root,
        provenance=f"solver(mu={trajectory.config.mu}, J={trajectory.config.J})",
    )


@dataclass(eq=False)
class ImmersionSurface:
    x: np.ndarray
    t: np.ndarray
    points: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    frame_normals: np.ndarray
    metadata: Dict[str, object] = field(default_factory=dict)

    @property
    def normals(self) -> np.ndarray:
        """Unit normals r1 x r2 / |r1 x r2|."""
        cross = np.cross(self.r1, self.r2)
        return cross / np.linalg.norm(cross, axis=-1, keepdims=True)


def _reproject(frame, g11, g22):
    """Gram-Schmidt the frame back onto |r1|^2 = g11, r1.r2 = 0, |r2|^2 = g22."""
    r1, r2 = frame[:, 0], frame[:, 1]
    r1 = r1 * (np.sqrt(g11) / np.linalg.norm(r1, axis=-1))[:, None]
    r2 = r2 - (np.sum(r2 * r1, axis=-1) / np.sum(r1 * r1, axis=-1))[:, None] * r1
    r2 = r2 * (np.sqrt(g22) / np.linalg.norm(r2, axis=-1))[:, None]
    normal = np.cross(r1, r2)
    normal /= np.linalg.norm(normal, axis=-1, keepdims=True)
    return np.stack([r1, r2, normal], axis=1)


def _sweep(frame, point, coefficients, spacing, row, g11, g22, renormalize_every):
    """
    RK4 along one direction for a batch of lines.

    Args:
        frame: (batch, 3, 3) initial frames, rows r1, r2, n
        point: (batch, 3) initial points
        coefficients: (steps + 1, batch, 3, 3) matrices at the nodes
        spacing: Signed step length
        row: Frame row that is d y / d s (0 along x, 1 along t)
        g11, g22: (steps + 1, batch) metric entries for re-projection
        renormalize_every: Re-projection period; 0 disables it
    """
    count = coefficients.shape[0]
    frames = np.empty((count,) + frame.shape)
    points = np.empty((count,) + point.shape)
    frames[0], points[0] = frame, point
    h = spacing
    for index in range(count - 1):
        start, end = coefficients[index], coefficients[index + 1]
        middle = 0.5 * (start + end)
        k1 = start @ frame
        stage2 = frame + 0.5 * h * k1
        k2 = middle @ stage2
        stage3 = frame + 0.5 * h * k2
        k3 = middle @ stage3
        stage4 = frame + h * k3
        k4 = end @ stage4
        point = point + h / 6.0 * (
            frame[:, row] + 2.0 * stage2[:, row] + 2.0 * stage3[:, row] + stage4[:, row]
        )
        frame = frame + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if renormalize_every and (index + 1) % renormalize_every == 0:
            frame = _reproject(frame, g11[index + 1], g22[index + 1])
        if not (np.all(np.isfinite(frame)) and np.all(np.isfinite(point))):
            raise FrameIntegrationError(f"Non-finite frame after step {index + 1}.")
        frames[index + 1], points[index + 1] = frame, point
    return frames, points


def _integrate_line(frame, point, coefficients, anchor, spacing, row, g11, g22, renormalize_every):
    """Integrate forward and backward from the anchor index along axis 0."""
    count = coefficients.shape[0]
    frames = np.empty((count,) + frame.shape)
    points = np.empty((count,) + point.shape)
    forward = _sweep(
        frame, point, coefficients[anchor:], spacing, row,
        g11[anchor:], g22[anchor:], renormalize_every,
    )
    frames[anchor:], points[anchor:] = forward
    if anchor > 0:
        backward = _sweep(
            frame, point, coefficients[anchor::-1], -spacing, row,
            g11[anchor::-1], g22[anchor::-1], renormalize_every,
        )
        frames[: anchor + 1] = backward[0][::-1]
        points[: anchor + 1] = backward[1][::-1]
    return frames, points


def frame_integrate(
    form_field: FormField,
    anchor: Tuple[int, int] = (0, 0),
    order: str = "t_first",
    renormalize_every: int = RENORMALIZE_EVERY,
) -> ImmersionSurface:
    """
    Reconstruct the immersion from its fundamental forms.

    The anchor frame is (B e1, e2, e3) at y = 0, compatible with g at the
    anchor node.

    Args:
        form_field: Forms on the grid
        anchor: (t index, x index) of the anchor node
        order: "t_first" integrates the anchor t-line first, "x_first" the
            anchor x-line
        renormalize_every: Gram-Schmidt period in steps; 0 disables it

    Returns:
        ImmersionSurface with points, frames and drift metadata

    Raises:
        FrameIntegrationError: on an unknown order, a bad anchor or a
            non-finite frame
    """
    if order not in ORDERS:
        raise FrameIntegrationError(f"Unknown integration order: {order}")
    Nt, Nx = form_field.shape
    i0, j0 = anchor
    if not (0 <= i0 < Nt and 0 <= j0 < Nx):
        raise FrameIntegrationError(f"Anchor {anchor} outside the {Nt} x {Nx} grid.")

    forms = form_field.forms()
    g11, g22 = np.asarray(forms.g11), np.asarray(forms.g22)
    C_t, C_x = form_field.coefficient_matrices()
    start = np.diag([np.sqrt(g11[i0, j0]), 1.0, 1.0])[None]
    origin = np.zeros((1, 3))
    dt, dx = form_field.dt, form_field.dx

    if order == "t_first":
        line_frames, line_points = _integrate_line(
            start, origin, C_t[:, j0][:, None], i0, dt, 1,
            g11[:, j0][:, None], g22[:, j0][:, None], renormalize_every,
        )
        frames, points = _integrate_line(
            line_frames[:, 0], line_points[:, 0], np.swapaxes(C_x, 0, 1), j0, dx, 0,
            g11.T, g22.T, renormalize_every,
        )
        frames, points = np.swapaxes(frames, 0, 1), np.swapaxes(points, 0, 1)
    else:
        line_frames, line_points = _integrate_line(
            start, origin, C_x[i0][:, None], j0, dx, 0,
            g11[i0][:, None], g22[i0][:, None], renormalize_every,
        )
        frames, points = _integrate_line(
            line_frames[:, 0], line_points[:, 0], C_t, i0, dt, 1,
            g11, g22, renormalize_every,
        )

    r1, r2, frame_normals = frames[..., 0, :], frames[..., 1, :], frames[..., 2, :]
    gram = {
        "g11": np.abs(np.sum(r1 * r1, axis=-1) - g11),
        "g12": np.abs(np.sum(r1 * r2, axis=-1)),
        "g22": np.abs(np.sum(r2 * r2, axis=-1) - g22),
    }
    cross = np.cross(r1, r2)
    gram_determinant = np.sum(cross * cross, axis=-1)
    metadata = {
        "order": order,
        "anchor": [int(i0), int(j0)],
        "renormalize_every": int(renormalize_every),
        "provenance": form_field.provenance,
        "gram_residual": float(max(np.max(value) for value in gram.values())),
        "normal_length_drift": float(
            np.max(np.abs(np.linalg.norm(frame_normals, axis=-1) - 1.0))
        ),
        "orthogonality_drift": float(
            max(
                np.max(np.abs(np.sum(frame_normals * r1, axis=-1)) / np.linalg.norm(r1, axis=-1)),
                np.max(np.abs(np.sum(frame_normals * r2, axis=-1)) / np.linalg.norm(r2, axis=-1)),
            )
        ),
        "min_gram_ratio": float(np.min(gram_determinant / forms.metric_determinant())),
    }
    logger.info(
        f"Reconstructed {Nt} x {Nx} surface ({order}); "
        f"gram residual {metadata['gram_residual']:.3e}"
    )
    return ImmersionSurface(
        x=form_field.x,
        t=form_field.t,
        points=points,
        r1=r1,
        r2=r2,
        frame_normals=frame_normals,
        metadata=metadata,
    )


@dataclass(frozen=True)
class FormResidualReport:
    components: Dict[str, Dict[str, float]]

    def _collect(self, names, key):
        return max(self.components[name][key] for name in names)

    @property
    def first_max(self) -> float:
        return self._collect(("g11", "g12", "g22"), "max")

    @property
    def second_max(self) -> float:
        return self._collect(("h11", "h12", "h22"), "max")

    @property
    def first_l2(self) -> float:
        return self._collect(("g11", "g12", "g22"), "l2")

    @property
    def second_l2(self) -> float:
        return self._collect(("h11", "h12", "h22"), "l2")

    def as_dict(self) -> Dict[str, object]:
        return {
            "components": self.components,
            "first_max": self.first_max,
            "first_l2": self.first_l2,
            "second_max": self.second_max,
            "second_l2": self.second_l2,
        }


def discrete_forms(points: np.ndarray, dx: float, dt: float) -> Dict[str, np.ndarray]:
    """Fundamental forms of a gridded surface by central differences at interior nodes."""
    y = points
    if y.shape[0] < 3 or y.shape[1] < 3:
        raise DomainError("Discrete forms need at least 3 x 3 nodes.")
    centre = y[1:-1, 1:-1]
    y_x = (y[1:-1, 2:] - y[1:-1, :-2]) / (2.0 * dx)
    y_t = (y[2:, 1:-1] - y[:-2, 1:-1]) / (2.0 * dt)
    y_xx = (y[1:-1, 2:] - 2.0 * centre + y[1:-1, :-2]) / dx**2
    y_tt = (y[2:, 1:-1] - 2.0 * centre + y[:-2, 1:-1]) / dt**2
    y_xt = (y[2:, 2:] - y[2:, :-2] - y[:-2, 2:] + y[:-2, :-2]) / (4.0 * dx * dt)
    normal = np.cross(y_x, y_t)
    normal /= np.linalg.norm(normal, axis=-1, keepdims=True)

    def dot(a, b):
        return np.sum(a * b, axis=-1)

    return {
        "g11": dot(y_x, y_x),
        "g12": dot(y_x, y_t),
        "g22": dot(y_t, y_t),
        "h11": dot(y_xx, normal),
        "h12": dot(y_xt, normal),
        "h22": dot(y_tt, normal),
    }


def verify_forms(surface: ImmersionSurface, form_field: FormField) -> FormResidualReport:
    """
    Compare the forms recovered from the surface with the prescribed ones.

    Returns:
        Max and RMS residual per component over the interior nodes
    """
    if surface.points.shape[:2] != form_field.shape:
        raise DomainError("Surface and form field grids differ.")
    recovered = discrete_forms(surface.points, form_field.dx, form_field.dt)
    forms = form_field.forms()
    components = {}
    for name, values in recovered.items():
        expected = np.asarray(getattr(forms, name))[1:-1, 1:-1]
        difference = np.abs(values - expected)
        components[name] = {
            "max": float(np.max(difference)),
            "l2": float(np.sqrt(np.mean(difference**2))),
        }
    return FormResidualReport(components=components)


class RigidAlignment(NamedTuple):
    rotation: np.ndarray
    translation: np.ndarray
    aligned: np.ndarray
    rms: float


def rigid_align(points: np.ndarray, reference: np.ndarray) -> RigidAlignment:
    """
    Proper rigid motion minimizing the RMS distance of points to reference
    (Kabsch).
    """
    source = np.asarray(points, dtype=float).reshape(-1, 3)
    target = np.asarray(reference, dtype=float).reshape(-1, 3)
    if source.shape != target.shape:
        raise DomainError("Point sets must have the same shape.")
    source_mean, target_mean = source.mean(axis=0), target.mean(axis=0)
    covariance = (source - source_mean).T @ (target - target_mean)
    U, _, Vt = np.linalg.svd(covariance)
    sign = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    rotation = Vt.T @ np.diag([1.0, 1.0, sign]) @ U.T
    translation = target_mean - rotation @ source_mean
    aligned = source @ rotation.T + translation
    rms = float(np.sqrt(np.mean(np.sum((aligned - target) ** 2, axis=-1))))
    return RigidAlignment(rotation, translation, aligned.reshape(np.shape(points)), rms)


def surface_deviation(points: np.ndarray, reference: np.ndarray) -> float:
    """Largest pointwise distance after optimal rigid alignment."""
    alignment = rigid_align(points, reference)
    return float(np.max(np.linalg.norm(alignment.aligned - np.asarray(reference), axis=-1)))


def obj_text(surface: ImmersionSurface) -> str:
    points = surface.points
    if not np.all(np.isfinite(points)):
        raise DomainError("Cannot export non-finite coordinates.")
    Nt, Nx = points.shape[:2]
    lines = [
        f"v {float(x):.17g} {float(y):.17g} {float(z):.17g}" for x, y, z in points.reshape(-1, 3)
    ]
    for i in range(Nt - 1):
        for j in range(Nx - 1):
            a = i * Nx + j + 1
            b, c, d = a + 1, a + Nx + 1, a + Nx
            lines.append(f"f {a} {b} {c}")
            lines.append(f"f {a} {c} {d}")
    return "\n".join(lines) + "\n"


def export_obj(surface: ImmersionSurface, path) -> Path:
    """
    Write the surface as a Wavefront OBJ mesh: vertices in grid-major order
    (t rows, x columns), each quad split into two triangles wound along +x
    then +t.
    """
    return atomic_write_text(path, obj_text(surface))


class ObjMesh(NamedTuple):
    vertices: np.ndarray
    faces: np.ndarray


def load_obj(path) -> ObjMesh:
    """Parse v and f lines of an OBJ file; faces are returned zero-based."""
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"Mesh not found: {path}")
    vertices, faces = [], []
    for line in path.read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            vertices.append([float(value) for value in parts[1:4]])
        elif parts[0] == "f":
            faces.append([int(value.split("/")[0]) - 1 for value in parts[1:4]])
    return ObjMesh(np.array(vertices, dtype=float), np.array(faces, dtype=int))


def mesh_topology_report(mesh: ObjMesh) -> Dict[str, object]:
    """
    Edge statistics of a triangle mesh.

    A consistently wound manifold mesh uses every directed edge at most once
    and every undirected edge at most twice.
    """
    directed: Dict[Tuple[int, int], int] = {}
    for face in mesh.faces.tolist():
        for a, b in ((face[0], face[1]), (face[1], face[2]), (face[2], face[0])):
            directed[(a, b)] = directed.get((a, b), 0) + 1
    undirected: Dict[Tuple[int, int], int] = {}
    for (a, b), count in directed.items():
        key = (min(a, b), max(a, b))
        undirected[key] = undirected.get(key, 0) + count
    boundary = sum(1 for count in undirected.values() if count == 1)
    nonmanifold = sum(1 for count in undirected.values() if count > 2)
    repeated = sum(1 for count in directed.values() if count > 1)
    referenced = np.unique(mesh.faces) if mesh.faces.size else np.array([], dtype=int)
    return {
        "vertices": int(len(mesh.vertices)),
        "faces": int(len(mesh.faces)),
        "edges": len(undirected),
        "boundary_edges": boundary,
        "nonmanifold_edges": nonmanifold,
        "inconsistent_edges": repeated,
        "unreferenced_vertices": int(len(mesh.vertices) - referenced.size),
        "manifold": nonmanifold == 0,
        "consistent_winding": repeated == 0,
    }
