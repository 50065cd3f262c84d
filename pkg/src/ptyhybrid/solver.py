"""Single-worker reference solver: Dai-Yuan conjugate gradient with
backtracking line search, and the constant-step gradient-descent baseline."""

import dataclasses
import math
import time
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import ConfigurationError, NumericalFailure
from .metrics import step_norm
from .objective import ml_gradient, objective_at

RESTART_THRESHOLD = 1e-30
STAGES = ("grad", "dir", "ls", "update")


@dataclass(frozen=True)
class SolverConfig:
    solver: str = "cg"
    gamma0: float = 1.0
    tau: float = 0.5
    t: float = 0.0
    max_shrinks: int = 32
    gd_gamma: Optional[float] = None

    def __post_init__(self):
        if self.solver not in ("cg", "gd"):
            raise ConfigurationError(f"unknown solver {self.solver!r}")
        if not self.gamma0 > 0:
            raise ConfigurationError("gamma0 must be positive")
        if not 0 < self.tau < 1:
            raise ConfigurationError("tau must lie in (0, 1)")
        if self.max_shrinks < 1:
            raise ConfigurationError("max_shrinks must be >= 1")
        if self.solver == "gd" and (self.gd_gamma is None or self.gd_gamma < 0):
            raise ConfigurationError("gradient descent needs a constant step gd_gamma >= 0")

    def as_dict(self):
        return dataclasses.asdict(self)


@dataclass
class SolverState:
    psi: np.ndarray
    f_cached: float
    config: SolverConfig = field(default_factory=SolverConfig)
    m: int = 0
    grad_prev: Optional[np.ndarray] = None
    dir_prev: Optional[np.ndarray] = None


@dataclass
class IterationTrace:
    iter: int
    objective: float
    gamma: float
    shrinks: int
    step_norm: float
    stage_ms: tuple = (0.0, 0.0, 0.0, 0.0)
    restarted: bool = False
    # filled by the parallel engine only
    wait_ms: tuple = (0.0, 0.0, 0.0, 0.0)
    bytes_gathered: int = 0
    bytes_scattered: int = 0
    bytes_border: int = 0

    def numerics(self):
        """The deterministic part of the trace (everything but timings)."""
        return (self.iter, self.objective, self.gamma, self.shrinks,
                self.step_norm, self.restarted)


def inner(a, b):
    """``sum(conj(a) * b)`` accumulated in double precision."""
    return complex(np.vdot(a.astype(np.complex128, copy=False),
                           b.astype(np.complex128, copy=False)))


class Direction(NamedTuple):
    dir: np.ndarray
    restarted: bool
    alpha: Optional[complex]


def dai_yuan_direction(grad, grad_prev=None, dir_prev=None):
    """Dai-Yuan search direction ``-g + alpha * eta_prev``.

    ``alpha = ||g||^2 / <eta_prev, g - g_prev>`` is kept complex. Without
    history, or when the denominator vanishes or alpha is not finite, the
    direction restarts at steepest descent.
    """
    if (grad_prev is None) != (dir_prev is None):
        raise ValueError("grad_prev and dir_prev must be given together")
    if not np.all(np.isfinite(grad)):
        raise NumericalFailure("non-finite gradient", stage="dir")
    if grad_prev is None:
        return Direction(-grad, False, None)
    if not (np.all(np.isfinite(grad_prev)) and np.all(np.isfinite(dir_prev))):
        raise NumericalFailure("non-finite direction history", stage="dir")
    denom = inner(dir_prev, grad - grad_prev)
    if abs(denom) < RESTART_THRESHOLD:
        return Direction(-grad, True, None)
    alpha = inner(grad, grad).real / denom
    if not (math.isfinite(alpha.real) and math.isfinite(alpha.imag)):
        return Direction(-grad, True, None)
    return Direction(-grad + alpha * dir_prev, False, alpha)


class LineSearchResult(NamedTuple):
    gamma: float
    shrinks: int
    f_new: float
    stalled: bool


def trial_step(config, k):
    return config.gamma0 * config.tau ** k


def line_search(eval_f, f0, config):
    """Backtrack from ``gamma0`` by factor ``tau`` until
    ``eval_f(gamma) <= f0 + gamma * t``.

    Makes at most ``max_shrinks`` trials; if none is accepted the step is
    0 and ``stalled`` is set.
    """
    for k in range(config.max_shrinks):
        gamma = trial_step(config, k)
        f = eval_f(gamma)
        if not math.isfinite(f):
            raise NumericalFailure(f"non-finite objective at trial step {gamma!r}",
                                   stage="ls")
        if f <= f0 + gamma * config.t:
            return LineSearchResult(gamma, k, f, False)
    return LineSearchResult(0.0, config.max_shrinks, f0, True)


def initial_state(dataset, config=None, dtype=np.complex64, psi0=None):
    """Flat ``1+0i`` start (unless ``psi0`` is given) with its objective cached."""
    config = config or SolverConfig()
    if psi0 is None:
        psi0 = np.ones(dataset.shape, dtype=dtype)
    psi0 = psi0.astype(dtype, copy=True)
    f0 = objective_at(psi0, dataset.probe, dataset.scan, dataset.d)
    if not math.isfinite(f0):
        raise NumericalFailure("non-finite initial objective", stage="init")
    return SolverState(psi=psi0, f_cached=f0, config=config)


def cg_iterate(state, probe, scan, d):
    config = state.config
    clock = time.perf_counter
    t0 = clock()
    grad = ml_gradient(state.psi, probe, scan, d)
    t1 = clock()
    try:
        direction = dai_yuan_direction(grad, state.grad_prev, state.dir_prev)
    except NumericalFailure as err:
        err.iteration = state.m
        raise
    eta = direction.dir
    t2 = clock()

    def eval_f(gamma):
        return objective_at(state.psi + gamma * eta, probe, scan, d)

    try:
        ls = line_search(eval_f, state.f_cached, config)
    except NumericalFailure as err:
        err.iteration = state.m
        raise
    t3 = clock()
    psi = state.psi + ls.gamma * eta
    norm = step_norm(psi, state.psi)
    t4 = clock()
    trace = IterationTrace(
        iter=state.m, objective=ls.f_new, gamma=ls.gamma, shrinks=ls.shrinks,
        step_norm=norm,
        stage_ms=tuple(1e3 * x for x in (t1 - t0, t2 - t1, t3 - t2, t4 - t3)),
        restarted=direction.restarted,
    )
    new = SolverState(psi=psi, f_cached=ls.f_new, config=config, m=state.m + 1,
                      grad_prev=grad, dir_prev=eta)
    return new, trace


def gd_iterate(state, probe, scan, d):
    """One constant-step gradient-descent update ``psi - gamma * grad``."""
    config = state.config
    gamma = float(config.gd_gamma)
    clock = time.perf_counter
    t0 = clock()
    grad = ml_gradient(state.psi, probe, scan, d)
    t1 = clock()
    psi = state.psi - gamma * grad
    f = objective_at(psi, probe, scan, d)
    if not math.isfinite(f):
        raise NumericalFailure("non-finite objective after gradient step",
                               stage="update", iteration=state.m)
    norm = step_norm(psi, state.psi)
    t2 = clock()
    trace = IterationTrace(
        iter=state.m, objective=f, gamma=gamma, shrinks=0, step_norm=norm,
        stage_ms=(1e3 * (t1 - t0), 0.0, 0.0, 1e3 * (t2 - t1)),
    )
    return SolverState(psi=psi, f_cached=f, config=config, m=state.m + 1), trace


def run_reference(dataset, config=None, iters=128, dtype=np.complex64,
                  psi0=None, callback=None):
    """Run the single-worker solver; returns ``(psi, traces)``.

    ``callback(trace)`` is invoked after every iteration.
    """
    if iters < 1:
        raise ConfigurationError("iters must be >= 1")
    config = config or SolverConfig()
    step = cg_iterate if config.solver == "cg" else gd_iterate
    state = initial_state(dataset, config, dtype=dtype, psi0=psi0)
    traces = []
    for _ in range(iters):
        state, trace = step(state, dataset.probe, dataset.scan, dataset.d)
        traces.append(trace)
        if callback is not None:
            callback(trace)
    return state.psi, traces


def tune_gd_gamma(dataset, iters=32, max_k=40, dtype=np.complex64):
    """Largest ``gamma = 2**-k`` for which ``iters`` GD steps keep the
    objective finite and strictly decreasing.

    Returns ``(gamma, traces)`` of the selected run.
    """
    for k in range(max_k + 1):
        gamma = 2.0 ** -k
        config = SolverConfig(solver="gd", gd_gamma=gamma)
        state = initial_state(dataset, config, dtype=dtype)
        f_prev = state.f_cached
        traces = []
        ok = True
        for _ in range(iters):
            try:
                state, trace = gd_iterate(state, dataset.probe, dataset.scan, dataset.d)
            except NumericalFailure:
                ok = False
                break
            if not trace.objective < f_prev:
                ok = False
                break
            f_prev = trace.objective
            traces.append(trace)
        if ok:
            return gamma, traces
    raise ConfigurationError(f"no step 2**-k with k <= {max_k} gives monotone descent")
