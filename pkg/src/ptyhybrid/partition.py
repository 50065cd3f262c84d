"""Row-strip decomposition of the object with halos, pattern locality and
unique pattern ownership."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class StripPartition:
    workers: int
    height: int
    width: int
    halo: int
    interior: tuple
    extended: tuple

    def summary(self):
        return {
            "workers": self.workers,
            "halo": self.halo,
            "interior": [list(r) for r in self.interior],
            "extended": [list(r) for r in self.extended],
        }


def make_strips(H, W, n_probe, P):
    """Split rows ``[0, H)`` into ``P`` strips, remainder rows to the lowest ids."""
    if P < 1:
        raise ConfigurationError(f"need at least one worker, got {P}")
    if H < P * n_probe:
        raise ConfigurationError(
            f"{P} strips of height >= {n_probe} do not fit in {H} rows; "
            f"at most {max(H // n_probe, 1)} workers are feasible"
        )
    base, extra = divmod(H, P)
    halo = n_probe - 1
    interior, extended = [], []
    start = 0
    for i in range(P):
        stop = start + base + (1 if i < extra else 0)
        interior.append((start, stop))
        extended.append((max(start - halo, 0), min(stop + halo, H)))
        start = stop
    return StripPartition(P, H, W, halo, tuple(interior), tuple(extended))


def local_pattern_set(part, scan, n):
    """Per-worker ascending index arrays of patterns whose footprint rows
    intersect the worker's interior."""
    rows = np.asarray(scan)[:, 0]
    out = []
    for a, b in part.interior:
        out.append(np.flatnonzero((rows < b) & (rows + n > a)))
    return out


def owner_of(part, pos, n):
    """Worker whose interior holds the footprint's centre row."""
    centre = int(pos[0]) + n // 2
    for i, (a, b) in enumerate(part.interior):
        if a <= centre < b:
            return i
    raise ConfigurationError(f"centre row {centre} outside the partition")


def owners(part, scan, n):
    return np.array([owner_of(part, pos, n) for pos in scan], dtype=np.int64)


@dataclass
class WorkerShard:
    """One worker's slice of the problem, in extended-row coordinates."""

    worker_id: int
    rows: tuple
    interior: tuple
    psi_ext: np.ndarray
    local_index: np.ndarray
    local_scan: np.ndarray
    local_d: np.ndarray
    owned: np.ndarray

    def interior_slice(self):
        """Rows of ``psi_ext`` that belong to the interior."""
        off = self.rows[0]
        return slice(self.interior[0] - off, self.interior[1] - off)


def make_shards(part, psi, scan, d, n):
    """Distribute ``psi`` rows and diffraction patterns to the workers."""
    local = local_pattern_set(part, scan, n)
    own = owners(part, scan, n)
    shards = []
    for i, idx in enumerate(local):
        r0, r1 = part.extended[i]
        local_scan = np.asarray(scan)[idx].copy()
        local_scan[:, 0] -= r0
        shards.append(WorkerShard(
            worker_id=i,
            rows=(r0, r1),
            interior=part.interior[i],
            psi_ext=psi[r0:r1].copy(),
            local_index=idx,
            local_scan=local_scan,
            local_d=d[idx],
            owned=own[idx] == i,
        ))
    return shards
