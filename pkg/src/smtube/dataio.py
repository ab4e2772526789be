"""Regressor datasets built from raw input/output trajectories; CSV persistence.

The regressor layout is fixed throughout the toolkit: for model order ``o``
and prediction step ``p`` the sample anchored at time k is

    phi = [y(k), ..., y(k-o+1), u(k-1), ..., u(k-o+1), u(k), ..., u(k+p-1)]

with target y(k+p), giving vectors of length 2*o - 1 + p.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# 17 significant digits round-trip any finite double exactly.
FLOAT_FMT = "%.17g"


@dataclass(frozen=True)
class Trajectory:
    """One open-loop experiment: input u, noisy output y, optional noise-free z."""

    u: np.ndarray
    y: np.ndarray
    z: np.ndarray | None = None
    ts: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float).reshape(-1))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float).reshape(-1))
        if self.u.size != self.y.size:
            raise ValueError("u and y must have equal length")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.y))):
            raise ValueError("non-finite trajectory samples")
        if self.z is not None:
            z = np.asarray(self.z, dtype=float).reshape(-1)
            if z.size != self.u.size:
                raise ValueError("z length must match u")
            object.__setattr__(self, "z", z)
        if not self.ts > 0:
            raise ValueError("sample period must be positive")

    def __len__(self) -> int:
        return self.u.size


@dataclass(frozen=True)
class RegressorSample:
    phi: np.ndarray
    target: float
    origin: int


@dataclass(frozen=True)
class RegressorDataset:
    """All (phi, target) pairs of one trajectory for a fixed (o, p)."""

    p: int
    o: int
    phi: np.ndarray       # (n_samples, 2o-1+p)
    targets: np.ndarray   # (n_samples,)
    origins: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        phi = np.atleast_2d(np.asarray(self.phi, dtype=float))
        targets = np.asarray(self.targets, dtype=float).reshape(-1)
        if phi.shape[0] != targets.size:
            raise ValueError("row count of phi must match targets")
        if phi.shape[1] != self.dim:
            raise ValueError(f"phi width {phi.shape[1]} != 2o-1+p = {self.dim}")
        if targets.size == 0:
            raise ValueError("dataset must contain at least one sample")
        origins = self.origins
        if origins is None:
            origins = np.arange(targets.size)
        origins = np.asarray(origins, dtype=int).reshape(-1)
        if origins.size != targets.size:
            raise ValueError("origins length must match targets")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "origins", origins)

    @property
    def dim(self) -> int:
        return 2 * self.o - 1 + self.p

    @property
    def n_samples(self) -> int:
        return self.targets.size

    @property
    def samples(self) -> list[RegressorSample]:
        return [RegressorSample(self.phi[i], float(self.targets[i]), int(self.origins[i]))
                for i in range(self.n_samples)]


def build_regressors(traj: Trajectory, o: int, p: int) -> RegressorDataset:
    """Slice a trajectory into all valid (phi, target) pairs for (o, p).

    One sample per anchor k in [o-1, len-p-1], hence len - p - o + 1 samples.
    """
    if o < 1 or p < 1:
        raise ValueError("o and p must be >= 1")
    n = len(traj)
    n_samples = n - p - o + 1
    if n_samples < 1:
        raise ValueError(f"trajectory too short: need at least o+p = {o + p} samples")
    u, y = traj.u, traj.y
    dim = 2 * o - 1 + p
    phi = np.empty((n_samples, dim))
    targets = np.empty(n_samples)
    ks = np.arange(o - 1, n - p)
    for col in range(o):                      # y(k) ... y(k-o+1)
        phi[:, col] = y[ks - col]
    for col in range(o - 1):                  # u(k-1) ... u(k-o+1)
        phi[:, o + col] = u[ks - 1 - col]
    for col in range(p):                      # u(k) ... u(k+p-1)
        phi[:, 2 * o - 1 + col] = u[ks + col]
    targets[:] = y[ks + p]
    return RegressorDataset(p=p, o=o, phi=phi, targets=targets, origins=ks)


def subsample_fraction(ds: RegressorDataset, fraction: float) -> RegressorDataset:
    """Chronological prefix of ceil(fraction * n_samples) samples."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    count = int(np.ceil(fraction * ds.n_samples))
    if count < 1:
        raise ValueError("subsample would be empty")
    return RegressorDataset(p=ds.p, o=ds.o, phi=ds.phi[:count],
                            targets=ds.targets[:count], origins=ds.origins[:count])


def hausdorff_gap(a: np.ndarray, b: np.ndarray) -> float:
    """One-sided gap max_{x in a} min_{y in b} ||x - y||_2 over point sets.

    Zero iff a is contained in b as a point set; deliberately not symmetric.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.size == 0 or b.size == 0:
        raise ValueError("point sets must be non-empty")
    if a.shape[1] != b.shape[1]:
        raise ValueError("point sets must share the ambient dimension")
    gap = 0.0
    for row in a:
        d2 = np.einsum("ij,ij->i", b - row, b - row)
        gap = max(gap, float(np.sqrt(d2.min())))
    return gap


# -- CSV persistence ---------------------------------------------------------


def trajectory_to_csv(traj: Trajectory, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if traj.z is not None:
            w.writerow(["k", "u", "y", "z"])
            for k in range(len(traj)):
                w.writerow([k, FLOAT_FMT % traj.u[k], FLOAT_FMT % traj.y[k],
                            FLOAT_FMT % traj.z[k]])
        else:
            w.writerow(["k", "u", "y"])
            for k in range(len(traj)):
                w.writerow([k, FLOAT_FMT % traj.u[k], FLOAT_FMT % traj.y[k]])


def trajectory_from_csv(path: str | Path, ts: float = 1.0) -> Trajectory:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header[:3] != ["k", "u", "y"]:
            raise ValueError(f"unexpected trajectory header: {header}")
        has_z = len(header) > 3 and header[3] == "z"
        u, y, z = [], [], []
        for row in r:
            u.append(float(row[1]))
            y.append(float(row[2]))
            if has_z:
                z.append(float(row[3]))
    return Trajectory(u=np.array(u), y=np.array(y),
                      z=np.array(z) if has_z else None, ts=ts)


def dataset_to_csv(ds: RegressorDataset, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "target"] + [f"phi_{j}" for j in range(ds.dim)])
        for i in range(ds.n_samples):
            w.writerow([int(ds.origins[i]), FLOAT_FMT % ds.targets[i]]
                       + [FLOAT_FMT % v for v in ds.phi[i]])


def dataset_from_csv(path: str | Path, o: int, p: int) -> RegressorDataset:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        dim = len(header) - 2
        if dim != 2 * o - 1 + p:
            raise ValueError("column count inconsistent with (o, p)")
        origins, targets, phi = [], [], []
        for row in r:
            origins.append(int(row[0]))
            targets.append(float(row[1]))
            phi.append([float(v) for v in row[2:]])
    return RegressorDataset(p=p, o=o, phi=np.array(phi), targets=np.array(targets),
                            origins=np.array(origins))
