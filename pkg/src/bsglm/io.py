"""File formats: volume series, CSV tables, state checkpoints, PGM slices.

The volume-series file is a text header (key value lines, terminated by
``end_header``) followed by a raw little-endian float32 payload of T
frames, each a full nx*ny*nz grid in x-fastest scan order. Masks are
volumes with one frame and nonzero entries inside the mask.

The model-state checkpoint is a flat binary record: the magic
``BSGLMST1``, three little-endian uint64 (K, N, P), then little-endian
float64 arrays in order W (K x N, row-major), A (P x N), lambda (N),
alpha (K), beta (P).
"""

from __future__ import annotations

import csv
import json
import platform
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
import scipy

from .lattice import VoxelLattice
from .model import ModelState

__all__ = [
    "VolumeSeries",
    "write_volume_series",
    "read_volume_series",
    "embed_masked",
    "extract_masked",
    "mask_from_volume",
    "write_design_csv",
    "read_design_csv",
    "write_matrix_csv",
    "read_matrix_csv",
    "save_state",
    "load_state",
    "write_pgm",
    "export_triplets",
    "Manifest",
    "write_manifest",
    "read_manifest",
]

_VOLUME_MAGIC = "bsglm-volume 1"
_STATE_MAGIC = b"BSGLMST1"


@dataclass(frozen=True)
class VolumeSeries:
    dims: tuple[int, int, int]
    voxel_size: tuple[float, float, float]
    frames: np.ndarray  # (T, nx*ny*nz) float32, x-fastest scan order
    scaling: str = "none"

    @property
    def t(self) -> int:
        return self.frames.shape[0]


def write_volume_series(
    path,
    dims: tuple[int, int, int],
    frames: np.ndarray,
    voxel_size: tuple[float, float, float] = (1.0, 1.0, 1.0),
    scaling: str = "none",
) -> None:
    nx, ny, nz = dims
    frames = np.ascontiguousarray(frames, dtype=np.float32).reshape(-1, nx * ny * nz)
    header = (
        f"{_VOLUME_MAGIC}\n"
        f"dims {nx} {ny} {nz}\n"
        f"voxel_size {voxel_size[0]:.17g} {voxel_size[1]:.17g} {voxel_size[2]:.17g}\n"
        f"T {frames.shape[0]}\n"
        "dtype float32\n"
        "byteorder little\n"
        f"scaling {scaling}\n"
        "end_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(frames.astype("<f4").tobytes())


def read_volume_series(path) -> VolumeSeries:
    with open(path, "rb") as fh:
        first = fh.readline().decode("ascii").strip()
        if first != _VOLUME_MAGIC:
            raise ValueError(f"{path}: not a volume-series file")
        meta: dict[str, str] = {}
        while True:
            line = fh.readline().decode("ascii").strip()
            if line == "end_header":
                break
            if not line:
                raise ValueError(f"{path}: truncated header")
            key, _, value = line.partition(" ")
            meta[key] = value
        dims = tuple(int(v) for v in meta["dims"].split())
        voxel_size = tuple(float(v) for v in meta["voxel_size"].split())
        t = int(meta["T"])
        payload = fh.read()
    n = dims[0] * dims[1] * dims[2]
    frames = np.frombuffer(payload, dtype="<f4", count=t * n).reshape(t, n)
    if frames.shape != (t, n):
        raise ValueError(f"{path}: payload length does not match header")
    return VolumeSeries(
        dims=dims, voxel_size=voxel_size, frames=frames, scaling=meta.get("scaling", "none")
    )


def embed_masked(lattice: VoxelLattice, values: np.ndarray) -> np.ndarray:
    """In-mask values (T, N) or (N,) -> full-grid frames, zero outside."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    n_grid = lattice.grid_to_voxel.shape[0]
    out = np.zeros((values.shape[0], n_grid), dtype=np.float32)
    inside = lattice.grid_to_voxel >= 0
    out[:, inside] = values[:, lattice.grid_to_voxel[inside]]
    return out


def extract_masked(vs: VolumeSeries, lattice: VoxelLattice) -> np.ndarray:
    """Full-grid frames -> in-mask values (T, N) in lattice voxel order."""
    inside = lattice.grid_to_voxel >= 0
    out = np.empty((vs.t, lattice.n_voxels))
    out[:, lattice.grid_to_voxel[inside]] = vs.frames[:, inside]
    return out


def mask_from_volume(vs: VolumeSeries) -> np.ndarray:
    """Boolean (nx, ny, nz) mask from a one-frame volume."""
    nx, ny, nz = vs.dims
    flat = vs.frames[0] != 0.0
    return flat.reshape(nz, ny, nx).transpose(2, 1, 0)


# ---------------------------------------------------------------------------
# CSV tables


def write_design_csv(path, x: np.ndarray, names: list[str] | None = None) -> None:
    x = np.asarray(x, dtype=float)
    if names is None:
        names = [f"reg{j}" for j in range(x.shape[1])]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in x:
            writer.writerow([f"{v:.17g}" for v in row])


def read_design_csv(path) -> tuple[np.ndarray, list[str]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        names = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    return np.asarray(rows), names


def write_matrix_csv(path, a: np.ndarray, header: list[str] | None = None) -> None:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if header is not None:
            writer.writerow(header)
        for row in a:
            writer.writerow([f"{v:.17g}" for v in row])


def read_matrix_csv(path, has_header: bool = True) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if has_header:
            next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    return np.asarray(rows)


# ---------------------------------------------------------------------------
# model-state checkpoint


def save_state(path, state: ModelState) -> None:
    k, n = state.w.shape
    p = state.a.shape[0]
    with open(path, "wb") as fh:
        fh.write(_STATE_MAGIC)
        fh.write(np.asarray([k, n, p], dtype="<u8").tobytes())
        for arr in (state.w, state.a, state.lam, state.alpha, state.beta):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_state(path) -> ModelState:
    with open(path, "rb") as fh:
        magic = fh.read(len(_STATE_MAGIC))
        if magic != _STATE_MAGIC:
            raise ValueError(f"{path}: not a model-state checkpoint")
        k, n, p = (int(v) for v in np.frombuffer(fh.read(24), dtype="<u8"))
        def take(count):
            return np.frombuffer(fh.read(8 * count), dtype="<f8").copy()
        w = take(k * n).reshape(k, n)
        a = take(p * n).reshape(p, n)
        lam = take(n)
        alpha = take(k)
        beta = take(p)
    return ModelState(w=w, a=a, lam=lam, alpha=alpha, beta=beta)


# ---------------------------------------------------------------------------
# grayscale slice renders and debug export


def write_pgm(path, image: np.ndarray, lo: float | None = None, hi: float | None = None) -> None:
    """8-bit binary portable graymap of a 2D array (row 0 at the top)."""
    image = np.asarray(image, dtype=float)
    if image.ndim != 2:
        raise ValueError("image must be 2D")
    lo = float(image.min()) if lo is None else lo
    hi = float(image.max()) if hi is None else hi
    span = hi - lo if hi > lo else 1.0
    scaled = np.clip((image - lo) / span * 255.0, 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii"))
        fh.write(scaled.tobytes())


def export_triplets(path, matrix) -> None:
    """Coordinate-triplet text dump (row col value) of a sparse matrix."""
    coo = matrix.full.tocoo() if hasattr(matrix, "full") else matrix.tocoo()
    with open(path, "w") as fh:
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {v:.17g}\n")


# ---------------------------------------------------------------------------
# run manifest


@dataclass
class Manifest:
    command: list[str]
    seed: int | None
    config: dict
    versions: dict = dc_field(default_factory=dict)
    outputs: list[str] = dc_field(default_factory=list)
    started: str = ""
    elapsed_seconds: float = 0.0


def write_manifest(path, manifest: Manifest) -> None:
    payload = {
        "command": manifest.command,
        "seed": manifest.seed,
        "config": manifest.config,
        "versions": manifest.versions
        or {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "outputs": manifest.outputs,
        "started": manifest.started or time.strftime("%Y-%m-%dT%H:%M:%S"),
        "elapsed_seconds": manifest.elapsed_seconds,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path) -> Manifest:
    with open(path) as fh:
        payload = json.load(fh)
    return Manifest(
        command=payload["command"],
        seed=payload.get("seed"),
        config=payload.get("config", {}),
        versions=payload.get("versions", {}),
        outputs=payload.get("outputs", []),
        started=payload.get("started", ""),
        elapsed_seconds=payload.get("elapsed_seconds", 0.0),
    )
