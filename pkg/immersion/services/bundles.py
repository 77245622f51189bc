"""
Output bundles: atomic file writes, JSON and CSV emitters, checksums and the
binary trajectory checkpoint.

Checkpoint layout (little-endian):

    magic        4 bytes  b"GCVL"
    version      u16      1
    representation u8     0 = uv, 1 = lm
    reserved     u8       0
    J            u32      nodes per snapshot
    S            u32      number of snapshots
    psi0         f64
    mu           f64
    times        f64[S]
    snapshots    S x (first f64[J], second f64[J])
"""

import dataclasses
import hashlib
import json
import os
import struct
import tempfile
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, NamedTuple

import numpy as np
import pandas as pd
from django.core.serializers.json import DjangoJSONEncoder

from .exceptions import MissingInputError
from .fields import FieldState, Representation

CHECKPOINT_MAGIC = b"GCVL"
CHECKPOINT_VERSION = 1
CHECKPOINT_HEADER = struct.Struct("<4sHBBIIdd")
REPRESENTATION_CODES = {Representation.UV: 0, Representation.LM: 1}


def atomic_write_bytes(path, data: bytes) -> Path:
    """Write to a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    handle, temporary = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(handle, "wb") as stream:
            stream.write(data)
        os.replace(temporary, path)
    except BaseException:
        if os.path.exists(temporary):
            os.unlink(temporary)
        raise
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


class LaboratoryJSONEncoder(DjangoJSONEncoder):
    """DjangoJSONEncoder that also understands numpy values, enums and dataclasses."""

    def default(self, o):
        if isinstance(o, np.integer):
            return int(o)
        if isinstance(o, np.floating):
            return float(o)
        if isinstance(o, np.bool_):
            return bool(o)
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, Enum):
            return o.value
        if isinstance(o, Path):
            return str(o)
        if dataclasses.is_dataclass(o) and not isinstance(o, type):
            return dataclasses.asdict(o)
        return super().default(o)


def dumps_json(payload) -> str:
    return json.dumps(payload, cls=LaboratoryJSONEncoder, sort_keys=True, indent=2) + "\n"


def write_json(path, payload) -> Path:
    return atomic_write_text(path, dumps_json(payload))


def write_csv(path, frame: pd.DataFrame) -> Path:
    text = frame.to_csv(index=False, float_format="%.17g", lineterminator="\n")
    return atomic_write_text(path, text)


def sha256_file(path) -> str:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"Input file not found: {path}")
    digest = hashlib.sha256()
    with path.open("rb") as stream:
        for chunk in iter(lambda: stream.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def checksums(paths: Iterable) -> Dict[str, str]:
    return {str(path): sha256_file(path) for path in paths}


class Checkpoint(NamedTuple):
    representation: Representation
    psi0: float
    mu: float
    snapshots: List[FieldState]

    @property
    def times(self) -> np.ndarray:
        return np.array([snapshot.t for snapshot in self.snapshots])


def encode_checkpoint(snapshots: List[FieldState], psi0: float, mu: float) -> bytes:
    representation = snapshots[0].representation
    J = snapshots[0].J
    header = CHECKPOINT_HEADER.pack(
        CHECKPOINT_MAGIC,
        CHECKPOINT_VERSION,
        REPRESENTATION_CODES[representation],
        0,
        J,
        len(snapshots),
        psi0,
        mu,
    )
    body = [np.asarray([snapshot.t for snapshot in snapshots], dtype="<f8").tobytes()]
    for snapshot in snapshots:
        state = snapshot.convert(representation)
        body.append(np.asarray(state.first, dtype="<f8").tobytes())
        body.append(np.asarray(state.second, dtype="<f8").tobytes())
    return header + b"".join(body)


def write_checkpoint(path, snapshots: List[FieldState], psi0: float, mu: float) -> Path:
    return atomic_write_bytes(path, encode_checkpoint(snapshots, psi0, mu))


def read_checkpoint(path) -> Checkpoint:
    """
    Raises:
        MissingInputError: if the file does not exist
        ValueError: on a wrong magic, version or size
    """
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"Checkpoint not found: {path}")
    data = path.read_bytes()
    if len(data) < CHECKPOINT_HEADER.size:
        raise ValueError(f"Checkpoint truncated before its header: {path}")
    magic, version, code, _, J, count, psi0, mu = CHECKPOINT_HEADER.unpack_from(data, 0)
    if magic != CHECKPOINT_MAGIC or version != CHECKPOINT_VERSION:
        raise ValueError(f"Not a version {CHECKPOINT_VERSION} checkpoint: {path}")
    expected = CHECKPOINT_HEADER.size + 8 * count * (1 + 2 * J)
    if len(data) != expected:
        raise ValueError(f"Checkpoint size {len(data)} differs from expected {expected}.")

    representation = {value: key for key, value in REPRESENTATION_CODES.items()}[code]
    offset = CHECKPOINT_HEADER.size
    times = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
    offset += 8 * count
    snapshots = []
    for t in times:
        first = np.frombuffer(data, dtype="<f8", count=J, offset=offset).copy()
        second = np.frombuffer(data, dtype="<f8", count=J, offset=offset + 8 * J).copy()
        offset += 16 * J
        snapshots.append(FieldState(representation, float(t), first, second))
    return Checkpoint(representation, psi0, mu, snapshots)


def trajectory_frame(snapshots: List[FieldState]) -> pd.DataFrame:
    """Long-format table with columns t, x, u, v, l, m, n."""
    columns = {name: [] for name in ("t", "x", "u", "v", "l", "m", "n")}
    for snapshot in snapshots:
        riemann, scaled = snapshot.riemann(), snapshot.scaled()
        columns["t"].append(np.full(snapshot.J, snapshot.t))
        columns["x"].append(snapshot.x)
        columns["u"].append(riemann.u)
        columns["v"].append(riemann.v)
        columns["l"].append(scaled.l)
        columns["m"].append(scaled.m)
        columns["n"].append(scaled.n)
    return pd.DataFrame({name: np.concatenate(values) for name, values in columns.items()})


def monitor_frame(records) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "t": record.t,
                "dt": record.dt,
                "cfl_ratio": record.cfl_ratio,
                "min_gap": record.min_gap,
                "margin_u_lower": record.margins.u_lower,
                "margin_u_upper": record.margins.u_upper,
                "margin_v_lower": record.margins.v_lower,
                "margin_v_upper": record.margins.v_upper,
                "max_abs_l": record.max_abs_l,
            }
            for record in records
        ]
    )
