"""Gridded velocity trajectories, noise injection, subsampling and KFLD I/O.

Arrays are indexed ``[i, j, k]`` for ``(x, y, t)``. On disk the payload is
x-fastest, then y, then t (Fortran order of the ``(nx, ny, nt)`` array).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"KFLD"
VERSION = 1
_HEADER = struct.Struct("<4sIQQQddd")


class KfldError(IOError):
    """Base class for trajectory file errors."""


class BadMagicError(KfldError):
    pass


class VersionMismatchError(KfldError):
    pass


class TruncatedFileError(KfldError):
    pass


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int
    nt: int
    dx: float
    dy: float
    dt: float

    def __post_init__(self):
        for name in ("nx", "ny", "nt"):
            n = getattr(self, name)
            if int(n) != n or n < 1:
                raise ValueError(f"{name} must be a positive integer, got {n!r}")
            object.__setattr__(self, name, int(n))
        for name in ("dx", "dy", "dt"):
            d = float(getattr(self, name))
            if not (np.isfinite(d) and d > 0):
                raise ValueError(f"{name} must be positive, got {d!r}")
            object.__setattr__(self, name, d)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nt)

    @property
    def Lx(self) -> float:
        return self.nx * self.dx

    @property
    def Ly(self) -> float:
        return self.ny * self.dy


@dataclass(frozen=True, eq=False)
class FlowSeries:
    """Velocity components ``u``, ``v`` sampled on ``grid``.

    The arrays are made read-only on construction; operations return new
    series instead of mutating.
    """

    grid: GridSpec
    u: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)

    def __post_init__(self):
        for name in ("u", "v"):
            a = np.asarray(getattr(self, name), dtype=np.float64)
            if a.shape != self.grid.shape:
                raise ValueError(
                    f"{name} has shape {a.shape}, grid expects {self.grid.shape}"
                )
            if not np.isfinite(a).all():
                raise ValueError(f"{name} contains non-finite values")
            if a.flags.writeable:
                a = a.view()
                a.flags.writeable = False
            object.__setattr__(self, name, a)

    def __eq__(self, other):
        if not isinstance(other, FlowSeries):
            return NotImplemented
        return (
            self.grid == other.grid
            and np.array_equal(self.u, other.u)
            and np.array_equal(self.v, other.v)
        )


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float
    seed: int = 0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma!r}")


def noise_stream(shape, seed) -> tuple[np.ndarray, np.ndarray]:
    """Standard-normal fields for u and v drawn from ``seed``.

    ``add_noise`` adds ``sigma`` times exactly these arrays.
    """
    rng = np.random.default_rng(seed)
    zu = rng.standard_normal(shape)
    zv = rng.standard_normal(shape)
    return zu, zv


def add_noise(series: FlowSeries, noise: NoiseSpec) -> FlowSeries:
    """Add i.i.d. zero-mean Gaussian noise of standard deviation ``sigma``."""
    if noise.sigma == 0:
        return FlowSeries(series.grid, series.u.copy(), series.v.copy())
    zu, zv = noise_stream(series.grid.shape, noise.seed)
    zu *= noise.sigma
    zu += series.u
    zv *= noise.sigma
    zv += series.v
    return FlowSeries(series.grid, zu, zv)


def subsample_time(series: FlowSeries, stride: int) -> FlowSeries:
    """Keep snapshots ``0, stride, 2*stride, ...``."""
    if int(stride) != stride or stride < 1:
        raise ValueError(f"stride must be a positive integer, got {stride!r}")
    g = series.grid
    if stride > g.nt:
        raise ValueError(f"stride {stride} exceeds number of snapshots {g.nt}")
    if stride == 1:
        return FlowSeries(g, series.u.copy(), series.v.copy())
    u = np.ascontiguousarray(series.u[:, :, ::stride])
    v = np.ascontiguousarray(series.v[:, :, ::stride])
    grid = GridSpec(g.nx, g.ny, u.shape[2], g.dx, g.dy, g.dt * stride)
    return FlowSeries(grid, u, v)


def write_series(series: FlowSeries, path) -> None:
    g = series.grid
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, g.nx, g.ny, g.nt, g.dx, g.dy, g.dt))
        for a in (series.u, series.v):
            # transpose of an (nx, ny, nt) array in C order is x-fastest
            np.ascontiguousarray(a.T, dtype="<f8").tofile(fh)


def read_series(path) -> FlowSeries:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < 4 or head[:4] != MAGIC:
            raise BadMagicError(f"{path}: bad magic {head[:4]!r}, expected {MAGIC!r}")
        if len(head) < _HEADER.size:
            raise TruncatedFileError(f"{path}: truncated header")
        _, version, nx, ny, nt, dx, dy, dt = _HEADER.unpack(head)
        if version != VERSION:
            raise VersionMismatchError(
                f"{path}: version {version} not supported (expected {VERSION})"
            )
        grid = GridSpec(nx, ny, nt, dx, dy, dt)
        count = nx * ny * nt
        arrays = []
        for name in ("u", "v"):
            a = np.fromfile(fh, dtype="<f8", count=count)
            if a.size != count:
                raise TruncatedFileError(
                    f"{path}: truncated payload in {name} ({a.size} of {count} values)"
                )
            arrays.append(a.reshape(nt, ny, nx).T.astype(np.float64, copy=False))
        if fh.read(1):
            raise KfldError(f"{path}: trailing bytes after payload")
    return FlowSeries(grid, *arrays)
