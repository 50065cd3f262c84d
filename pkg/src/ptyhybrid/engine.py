"""Hybrid multi-worker execution of the conjugate-gradient solver.

Each iteration runs four stages separated by barriers:

* GRAD   -- every worker computes the gradient of its local patterns.
* DIR    -- interior gradient rows are gathered on the master, which owns the
            only full-size arrays and computes the Dai-Yuan direction, then
            scatters each worker its extended rows of the direction.
* LS     -- every line-search trial is an all-reduce of per-worker partial
            objectives over owned patterns, summed in ascending worker order.
* UPDATE -- workers step their extended sub-image and exchange borders.

Workers are threads talking over addressed FIFO channels. The transport is
an interface; only the in-process one exists.
"""

import enum
import itertools
import logging
import math
import queue
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DeadlockTimeout, EngineError, NumericalFailure, ProtocolError
from .field import WORKING_DTYPE
from .metrics import squared_step
from .objective import ml_gradient, ml_objective
from .operators import forward_g
from .partition import make_shards, make_strips
from .solver import (STAGES, IterationTrace, SolverConfig, dai_yuan_direction,
                     line_search)

logger = logging.getLogger(__name__)


class Tag(enum.Enum):
    GATHER_GRAD = "gather_grad"
    SCATTER_DIR = "scatter_dir"
    PARTIAL_F = "partial_f"
    BCAST_F = "bcast_f"
    BORDER = "border"
    PARTIAL_STEP = "partial_step"


@dataclass(frozen=True)
class StageMessage:
    tag: Tag
    iter: int
    ls_trial: int
    sender: int
    payload: object

    @property
    def nbytes(self):
        parts = self.payload if isinstance(self.payload, tuple) else (self.payload,)
        arrays = [p for p in parts if isinstance(p, np.ndarray)]
        return sum(a.nbytes for a in arrays) if arrays else 8


@dataclass(frozen=True)
class EngineConfig:
    workers: int = 1
    master_id: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)
    consistency_check: bool = False
    timeout: float = 120.0

    def __post_init__(self):
        from .errors import ConfigurationError
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        if not 0 <= self.master_id < self.workers:
            raise ConfigurationError("master_id must name one of the workers")
        if self.solver.solver != "cg":
            raise ConfigurationError("the parallel engine runs the cg solver only")


class Transport:
    """Point-to-point channels; messages between a pair arrive in send order."""

    def send(self, dst, msg):
        raise NotImplementedError

    def recv(self, me, sender, tag, iter, ls_trial=-1, timeout=None):
        raise NotImplementedError

    def abort(self):
        raise NotImplementedError


class InProcessTransport(Transport):
    poll = 0.05

    def __init__(self, workers):
        self._channels = {(s, d): queue.SimpleQueue()
                          for s in range(workers) for d in range(workers)}
        self.aborted = threading.Event()

    def send(self, dst, msg):
        self._channels[(msg.sender, dst)].put(msg)

    def abort(self):
        self.aborted.set()

    def recv(self, me, sender, tag, iter, ls_trial=-1, timeout=120.0):
        chan = self._channels[(sender, me)]
        deadline = time.monotonic() + timeout
        while True:
            if self.aborted.is_set():
                raise EngineError(f"worker {me}: run aborted by a peer")
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise DeadlockTimeout(
                    f"worker {me} timed out waiting for {tag.name} from worker "
                    f"{sender} (iteration {iter}, trial {ls_trial})")
            try:
                msg = chan.get(timeout=min(self.poll, remaining))
            except queue.Empty:
                continue
            if (msg.tag, msg.iter, msg.ls_trial) != (tag, iter, ls_trial):
                raise ProtocolError(
                    f"worker {me} expected {tag.name} iter={iter} trial={ls_trial} "
                    f"from worker {sender}, got {msg.tag.name} iter={msg.iter} "
                    f"trial={msg.ls_trial}")
            return msg


def stage_grad(shard, probe):
    """Gradient of the shard's local patterns over its extended rows."""
    if len(shard.local_index) == 0:
        return np.zeros_like(shard.psi_ext)
    return ml_gradient(shard.psi_ext, probe, shard.local_scan, shard.local_d)


def _rows_overlap(a, b):
    lo, hi = max(a[0], b[0]), min(a[1], b[1])
    return (lo, hi) if lo < hi else None


class _Worker:
    def __init__(self, engine, shard):
        self.engine = engine
        self.shard = shard
        self.wid = shard.worker_id
        self.is_master = self.wid == engine.config.master_id
        self.owned_scan = shard.local_scan[shard.owned]
        self.owned_d = shard.local_d[shard.owned]
        # master-only full-size state
        self.grad_prev = None
        self.dir_prev = None
        self.last_direction = None
        self.stage = "setup"
        self.iter = -1
        self.wait = 0.0
        self.bytes_sent = dict.fromkeys(Tag, 0)
        self.records = []

    # -- messaging -------------------------------------------------------
    def _send(self, dst, tag, m, payload, k=-1):
        msg = StageMessage(tag, m, k, self.wid, payload)
        self.bytes_sent[tag] += msg.nbytes
        self.engine.transport.send(dst, msg)

    def _recv(self, src, tag, m, k=-1):
        t0 = time.perf_counter()
        try:
            return self.engine.transport.recv(self.wid, src, tag, m, k,
                                              self.engine.config.timeout).payload
        finally:
            self.wait += time.perf_counter() - t0

    def barrier(self):
        if self.engine.P == 1:
            return
        t0 = time.perf_counter()
        try:
            self.engine.barrier.wait()
        except threading.BrokenBarrierError:
            if self.engine.transport.aborted.is_set():
                raise EngineError(f"worker {self.wid}: run aborted by a peer") from None
            raise DeadlockTimeout(
                f"worker {self.wid} timed out at the barrier ending stage "
                f"{self.stage} of iteration {self.iter}") from None
        finally:
            self.wait += time.perf_counter() - t0

    def reduce(self, value, m, k, tag=Tag.PARTIAL_F):
        """Sum ``value`` over workers in ascending id on the master.

        Returns the total on the master and None elsewhere.
        """
        master = self.engine.config.master_id
        if not self.is_master:
            self._send(master, tag, m, float(value), k)
            return None
        total = 0.0
        for w in range(self.engine.P):
            total += float(value) if w == self.wid else self._recv(w, tag, m, k)
        return total

    def allreduce(self, value, m, k):
        total = self.reduce(value, m, k)
        master = self.engine.config.master_id
        if self.is_master:
            for w in range(self.engine.P):
                if w != self.wid:
                    self._send(w, Tag.BCAST_F, m, total, k)
            return total
        return self._recv(master, Tag.BCAST_F, m, k)

    # -- stages ----------------------------------------------------------
    def partial_objective(self, psi_ext):
        if len(self.owned_scan) == 0:
            return 0.0
        return ml_objective(forward_g(psi_ext, self.engine.probe, self.owned_scan),
                            self.owned_d)

    def grad(self):
        return stage_grad(self.shard, self.engine.probe)

    def gather_scatter(self, g_ext, m):
        eng = self.engine
        master = eng.config.master_id
        mine = g_ext[self.shard.interior_slice()]
        if not self.is_master:
            self._send(master, Tag.GATHER_GRAD, m, mine.copy())
            return self._recv(master, Tag.SCATTER_DIR, m)
        full = np.empty(eng.shape, dtype=g_ext.dtype)
        for w, (a, b) in enumerate(eng.partition.interior):
            full[a:b] = mine if w == self.wid else self._recv(w, Tag.GATHER_GRAD, m)
        direction = dai_yuan_direction(full, self.grad_prev, self.dir_prev)
        self.grad_prev, self.dir_prev = full, direction.dir
        self.last_direction = direction
        own = None
        for w, (a, b) in enumerate(eng.partition.extended):
            piece = direction.dir[a:b].copy()
            if w == self.wid:
                own = piece
            else:
                self._send(w, Tag.SCATTER_DIR, m, piece)
        return own

    def ls_allreduce(self, eta_ext, f0, m):
        trials = itertools.count()
        psi_ext = self.shard.psi_ext

        def eval_f(gamma):
            return self.allreduce(self.partial_objective(psi_ext + gamma * eta_ext),
                                  m, next(trials))

        return line_search(eval_f, f0, self.engine.config.solver)

    def update_exchange(self, gamma, eta_ext, m):
        """Step the extended sub-image, exchange borders; returns the
        interior squared step (summed on the master, None elsewhere)."""
        old = self.shard.psi_ext
        new = old + gamma * eta_ext
        inner = self.shard.interior_slice()
        sq = squared_step(new[inner], old[inner])
        self.shard.psi_ext = new
        self.exchange_borders(m)
        return self.reduce(sq, m, -1, tag=Tag.PARTIAL_STEP)

    def exchange_borders(self, m):
        eng = self.engine
        part = eng.partition
        r0 = self.shard.rows[0]
        neighbours = [w for w in (self.wid - 1, self.wid + 1) if 0 <= w < eng.P]
        for w in neighbours:
            span = _rows_overlap(part.interior[self.wid], part.extended[w])
            if span:
                rows = self.shard.psi_ext[span[0] - r0:span[1] - r0].copy()
                self._send(w, Tag.BORDER, m, (span, rows))
        for w in neighbours:
            span = _rows_overlap(part.interior[w], part.extended[self.wid])
            if not span:
                continue
            got_span, rows = self._recv(w, Tag.BORDER, m)
            if tuple(got_span) != span:
                raise ProtocolError(f"worker {self.wid} got border rows {got_span}, "
                                    f"expected {span}")
            local = self.shard.psi_ext[span[0] - r0:span[1] - r0]
            if eng.config.consistency_check and not np.array_equal(local, rows):
                diff = np.abs(local.astype(np.complex128) - rows)
                diff[np.isnan(diff)] = np.inf
                r, c = np.unravel_index(np.argmax(diff), diff.shape)
                raise NumericalFailure(
                    f"halo mismatch on worker {self.wid}: max |diff| "
                    f"{diff[r, c]:.3e} at row {span[0] + r}, col {c}",
                    stage="update", iteration=m)
            local[...] = rows

    # -- driver ----------------------------------------------------------
    def _timed(self, name, fn, *args):
        self.stage = name
        self.wait = 0.0
        t0 = time.perf_counter()
        out = fn(*args)
        self.barrier()
        return out, 1e3 * (time.perf_counter() - t0), 1e3 * self.wait

    def run(self, iters, callback=None):
        eng = self.engine
        self.stage = "init"
        t_loop = time.perf_counter()
        self.wait = 0.0
        f = self.allreduce(self.partial_objective(self.shard.psi_ext), -1, -1)
        if not math.isfinite(f):
            raise NumericalFailure("non-finite initial objective", stage="init")
        self.init_s = time.perf_counter() - t_loop
        self.init_wait = self.wait
        for m in range(iters):
            self.iter = m
            before = dict(self.bytes_sent)
            g, ms_g, w_g = self._timed("grad", self.grad)
            eta, ms_d, w_d = self._timed("dir", self.gather_scatter, g, m)
            ls, ms_l, w_l = self._timed("ls", self.ls_allreduce, eta, f, m)
            sq, ms_u, w_u = self._timed("update", self.update_exchange, ls.gamma, eta, m)
            f = ls.f_new
            record = {
                "ls": ls,
                "stage_ms": (ms_g, ms_d, ms_l, ms_u),
                "wait_ms": (w_g, w_d, w_l, w_u),
                "sent": {t: self.bytes_sent[t] - before[t] for t in Tag},
            }
            if self.is_master:
                record["step_norm"] = math.sqrt(sq)
                record["restarted"] = self.last_direction.restarted
                record["alpha"] = self.last_direction.alpha
                if callback is not None:
                    callback(eng._trace(m, record))
            self.records.append(record)
        self.loop_s = time.perf_counter() - t_loop


@dataclass
class ParallelResult:
    psi: np.ndarray
    traces: list
    partition: object
    timing: dict
    worker_records: Optional[list] = None


class Engine:
    """Partitioned problem plus the workers that solve it."""

    def __init__(self, dataset, config=None, dtype=WORKING_DTYPE, psi0=None):
        self.t_created = time.perf_counter()
        self.config = config or EngineConfig()
        self.P = self.config.workers
        self.shape = tuple(dataset.shape)
        n = dataset.probe_size
        self.probe = dataset.probe.astype(dtype)
        self.partition = make_strips(self.shape[0], self.shape[1], n, self.P)
        if psi0 is None:
            psi0 = np.ones(self.shape, dtype=dtype)
        shards = make_shards(self.partition, psi0.astype(dtype),
                             dataset.scan, dataset.d, n)
        self.transport = InProcessTransport(self.P)
        self.barrier = threading.Barrier(self.P, timeout=self.config.timeout)
        self.workers = [_Worker(self, s) for s in shards]
        row_bytes = self.shape[1] * np.dtype(dtype).itemsize
        self.border_bytes = self._border_rows() * row_bytes
        self.gather_bytes = row_bytes * sum(
            b - a for w, (a, b) in enumerate(self.partition.interior)
            if w != self.config.master_id)

    def _border_rows(self):
        part = self.partition
        rows = 0
        for w in range(self.P):
            for nb in (w - 1, w + 1):
                if 0 <= nb < self.P:
                    span = _rows_overlap(part.interior[w], part.extended[nb])
                    rows += span[1] - span[0] if span else 0
        return rows

    @property
    def master(self):
        return self.workers[self.config.master_id]

    def _trace(self, m, record):
        ls = record["ls"]
        sent = record["sent"]
        return IterationTrace(
            iter=m, objective=ls.f_new, gamma=ls.gamma, shrinks=ls.shrinks,
            step_norm=record["step_norm"], stage_ms=record["stage_ms"],
            restarted=record["restarted"], wait_ms=record["wait_ms"],
            bytes_gathered=self.gather_bytes, bytes_scattered=sent[Tag.SCATTER_DIR],
            bytes_border=self.border_bytes,
        )

    def assemble(self):
        """Unite the interior rows of every shard into the full object."""
        out = np.empty(self.shape, dtype=self.workers[0].shard.psi_ext.dtype)
        for w in self.workers:
            a, b = w.shard.interior
            out[a:b] = w.shard.psi_ext[w.shard.interior_slice()]
        return out

    def _spmd(self, fn, args=None):
        """Run ``fn(worker, *args[w])`` on every worker concurrently."""
        results = [None] * self.P
        errors = [None] * self.P

        def body(i):
            w = self.workers[i]
            try:
                results[i] = fn(w, *(args[i] if args else ()))
            except BaseException as err:  # noqa: BLE001 - re-raised below
                errors[i] = err
                self.transport.abort()
                self.barrier.abort()

        if self.P == 1:
            body(0)
        else:
            threads = [threading.Thread(target=body, args=(i,), name=f"worker-{i}")
                       for i in range(self.P)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
        self._raise_first(errors)
        return results

    def _raise_first(self, errors):
        failed = [(i, e) for i, e in enumerate(errors) if e is not None]
        if not failed:
            return
        # prefer the root cause over peers that merely observed the abort
        root = [(i, e) for i, e in failed
                if not (type(e) is EngineError and "aborted" in str(e))]
        i, err = (root or failed)[0]
        w = self.workers[i]
        if isinstance(err, NumericalFailure):
            if err.stage is None:
                err.stage = w.stage
            if err.iteration is None and w.iter >= 0:
                err.iteration = w.iter
            raise err
        if isinstance(err, EngineError):
            raise err
        raise EngineError(f"worker {i} failed in stage {w.stage} "
                          f"(iteration {w.iter}): {err!r}") from err

    # stage-level entry points, one call runs the stage on every worker
    def stage_grad_all(self):
        return self._spmd(lambda w: w.grad())

    def stage_dir_gather_scatter(self, local_grads, m=0):
        return self._spmd(lambda w, g: w.gather_scatter(g, m),
                          [(g,) for g in local_grads])

    def stage_ls_allreduce(self, etas, f0, m=0):
        return self._spmd(lambda w, eta: w.ls_allreduce(eta, f0, m),
                          [(e,) for e in etas])

    def stage_update_exchange(self, gamma, etas, m=0):
        return self._spmd(lambda w, eta: w.update_exchange(gamma, eta, m),
                          [(e,) for e in etas])

    def allreduce_scalars(self, values, m=0, k=0):
        return self._spmd(lambda w, v: w.allreduce(v, m, k), [(v,) for v in values])

    def run(self, iters, callback=None):
        if iters < 1:
            from .errors import ConfigurationError
            raise ConfigurationError("iters must be >= 1")
        self._spmd(lambda w: w.run(iters, callback))
        psi = self.assemble()
        traces = [self._trace(m, r) for m, r in enumerate(self.master.records)]
        for m, t in enumerate(traces):
            sent = [w.records[m]["sent"] for w in self.workers]
            if (sum(x[Tag.BORDER] for x in sent) != t.bytes_border
                    or sum(x[Tag.GATHER_GRAD] for x in sent) != t.bytes_gathered):
                raise ProtocolError(f"iteration {m}: message volume differs from the partition plan")
        total = time.perf_counter() - self.t_created
        master = self.master
        records = master.records
        stage_wait = sum(sum(r["wait_ms"]) for r in records) / 1e3
        stage_time = sum(sum(r["stage_ms"]) for r in records) / 1e3
        timing = {
            "total_s": total,
            "setup_s": total - master.loop_s,
            "compute_s": (master.init_s - master.init_wait) + (stage_time - stage_wait),
            "comm_wait_s": master.init_wait + stage_wait,
            "stage_mean_ms": {
                name: float(np.mean([r["stage_ms"][i] for r in records]))
                for i, name in enumerate(STAGES)
            },
            "wait_mean_ms": {
                name: float(np.mean([r["wait_ms"][i] for r in records]))
                for i, name in enumerate(STAGES)
            },
        }
        return ParallelResult(psi, traces, self.partition, timing,
                              [w.records for w in self.workers])


def run_parallel(dataset, config=None, iters=128, dtype=WORKING_DTYPE,
                 psi0=None, callback=None):
    """Partition ``dataset``, run ``iters`` hybrid iterations on
    ``config.workers`` workers and return a :class:`ParallelResult`."""
    engine = Engine(dataset, config, dtype=dtype, psi0=psi0)
    return engine.run(iters, callback=callback)
