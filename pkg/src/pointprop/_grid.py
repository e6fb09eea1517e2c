from dataclasses import dataclass

import numpy as np

MAX_CELLS_PER_AXIS = 4096


@dataclass(frozen=True)
class PointGrid:
    """Points bucketed into a uniform grid on the x-z (ground) plane."""

    pts: np.ndarray
    order: np.ndarray
    cell_start: np.ndarray
    lo_x: float
    lo_z: float
    cell: float
    nx: int
    nz: int

    @classmethod
    def build(cls, points, cell=0.25):
        xyz = np.ascontiguousarray(np.asarray(points, dtype=np.float64)[:, :3])
        if len(xyz) == 0:
            return cls(xyz, np.zeros(0, np.int64), np.zeros(2, np.int64),
                       0.0, 0.0, float(cell), 1, 1)
        lo = xyz[:, [0, 2]].min(axis=0)
        hi = xyz[:, [0, 2]].max(axis=0)
        extent = float(max(hi[0] - lo[0], hi[1] - lo[1]))
        cell = max(float(cell), extent / (MAX_CELLS_PER_AXIS - 1))
        nx = int((hi[0] - lo[0]) // cell) + 1
        nz = int((hi[1] - lo[1]) // cell) + 1
        ix = np.floor((xyz[:, 0] - lo[0]) / cell).astype(np.int64).clip(0, nx - 1)
        iz = np.floor((xyz[:, 2] - lo[1]) / cell).astype(np.int64).clip(0, nz - 1)
        cid = ix * nz + iz
        order = np.argsort(cid, kind="stable").astype(np.int64)
        start = np.zeros(nx * nz + 1, dtype=np.int64)
        np.cumsum(np.bincount(cid, minlength=nx * nz), out=start[1:])
        return cls(np.ascontiguousarray(xyz[order]), order, start,
                   float(lo[0]), float(lo[1]), cell, nx, nz)

    @property
    def args(self):
        return (self.cell_start, self.lo_x, self.lo_z, self.cell, self.nx, self.nz)

    def sorted_values(self, values):
        return np.ascontiguousarray(np.asarray(values)[self.order])
