"""Path simulation with state-space-preserving discretization, the moment ODE
oracle, and Monte Carlo invariance statistics.

Noise is drawn from counter-based Philox streams keyed by (seed, step) with
one row per path, so ensembles are bit-identical across runs and adding paths
never perturbs existing ones.  The full-truncation scheme projects the state
onto the state space before evaluating the diffusion coefficient and stores
the projected state, which keeps membership exact along the whole path.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import (AffineScalar, ModelSpec, Polyhedron, QuadraticForm,
                   QuadraticSpace, psd_square_root)
from .errors import PreconditionFailedError, SigmaMismatchError
from .quadratic import _canonical_cone_form, _canonical_parabolic_form
from .tolerances import TOL


class Scheme(Enum):
    FULL_TRUNCATION_EULER = "full-truncation"
    PLAIN_EULER = "plain"


@dataclass(frozen=True)
class SimConfig:
    x0: np.ndarray
    horizon: float
    steps: int
    n_paths: int
    seed: int
    scheme: Scheme = Scheme.FULL_TRUNCATION_EULER

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        if self.horizon <= 0 or self.steps <= 0 or self.n_paths <= 0:
            raise PreconditionFailedError("horizon, steps and n_paths must be positive")


@dataclass
class PathEnsemble:
    times: np.ndarray            # (steps+1,)
    states: np.ndarray           # (n_paths, steps+1, p)
    exit_flags: np.ndarray       # (n_paths,) first exit step index, -1 if none
    nonfinite: np.ndarray        # (n_paths,) bool

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]


def _step_normals(seed: int, step: int, n_paths: int, p: int) -> np.ndarray:
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(step)],
                   dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))
    return rng.standard_normal((n_paths, p))


def generic_square_root(model: ModelSpec):
    """Pointwise symmetric root |theta(x)|^(1/2); batched eigendecomposition."""
    theta = model.diffusion

    def sigma(x):
        return psd_square_root(theta(np.asarray(x, dtype=float)))

    return sigma


def make_projector(space) -> callable:
    """Cheap exact projections for the canonical state-space shapes.

    Polyhedral spaces must be in canonical coordinates (facets u_i(x) = x_i):
    the projection clamps the facet coordinates at zero.  Parabolic spaces
    clamp x_1 at y^T y; conical spaces clamp x_1 at |y| radially.  General
    state spaces must be canonicalized first.
    """
    if isinstance(space, Polyhedron):
        q, p = space.gamma.shape
        # coordinate facets u_i(x) = x_j are clamped at zero; any remaining
        # facets are the extra cuts of the canonical polyhedron C, which the
        # (admissible) drift keeps nonnegative without projection
        coord = []
        noncoord = 0
        for i in range(q):
            row = space.gamma[i]
            j = int(np.argmax(np.abs(row)))
            unit = np.zeros(p)
            unit[j] = 1.0
            if abs(space.delta[i]) <= TOL.feasibility and \
                    float(np.abs(row - unit).max()) <= TOL.feasibility:
                coord.append(j)
            else:
                noncoord += 1
        if not coord and noncoord:
            raise PreconditionFailedError(
                "full-truncation projection needs canonical facets u_i(x) = x_i; "
                "canonicalize the model first")
        idx = np.array(sorted(set(coord)), dtype=int)

        def proj(x):
            out = x.copy()
            if idx.size:
                out[..., idx] = np.maximum(out[..., idx], 0.0)
            return out

        return proj
    if isinstance(space, QuadraticSpace):
        p = space.dim
        qpar = _canonical_parabolic_form(space.form, p)
        if qpar is not None:
            def proj(x):
                out = x.copy()
                yy = np.sum(out[..., 1:qpar] ** 2, axis=-1)
                out[..., 0] = np.maximum(out[..., 0], yy)
                return out

            return proj
        qcone = _canonical_cone_form(space.form, p)
        if qcone is not None:
            def proj(x):
                out = x.copy()
                r = np.linalg.norm(out[..., 1:qcone], axis=-1)
                out[..., 0] = np.maximum(out[..., 0], r * (1.0 + 1e-12))
                return out

            return proj
        raise PreconditionFailedError(
            "full-truncation projection needs a canonical quadric")
    raise PreconditionFailedError(f"unsupported state space {type(space)!r}")


class _ExitTracker:
    """Running first-exit and worst-violation statistics over path blocks."""

    def __init__(self, space, n_paths: int, tol: float):
        self.space = space
        self.tol = tol
        self.exit_step = np.full(n_paths, -1, dtype=int)
        if isinstance(space, Polyhedron):
            self.worst = np.full(space.n_facets, np.inf)
        else:
            self.worst = np.array([np.inf])

    def update(self, step: int, states: np.ndarray) -> None:
        if states.shape[0] == 0:
            return
        if isinstance(self.space, Polyhedron):
            vals = self.space.evaluate(states)          # (n, q)
            self.worst = np.minimum(self.worst, vals.min(axis=0))
            out = np.any(vals < -self.tol, axis=1)
        else:
            vals = self.space.signed_value(states)      # (n,)
            self.worst[0] = min(self.worst[0], float(vals.min()))
            out = vals < -self.tol
        fresh = out & (self.exit_step < 0)
        self.exit_step[fresh] = step


@dataclass
class ExitStats:
    exit_fraction: float
    worst_violation: np.ndarray   # per facet (polyhedral) or the Phi value
    exit_steps: np.ndarray        # (n_paths,), -1 for none
    histogram: tuple[np.ndarray, np.ndarray]  # counts, bin edges (time units)


def _stats_from_tracker(tracker: _ExitTracker, times: np.ndarray) -> ExitStats:
    n = tracker.exit_step.shape[0]
    exited = tracker.exit_step >= 0
    frac = float(np.count_nonzero(exited)) / n if n else 0.0
    exit_times = times[tracker.exit_step[exited]] if exited.any() else np.zeros(0)
    hist = np.histogram(exit_times, bins=20,
                        range=(0.0, float(times[-1])) if len(times) else (0.0, 1.0))
    worst = np.where(np.isfinite(tracker.worst), tracker.worst, 0.0)
    return ExitStats(frac, worst, tracker.exit_step.copy(), hist)


def _check_start(model: ModelSpec, sigma, cfg: SimConfig) -> None:
    if cfg.x0.shape != (model.dimension,):
        raise PreconditionFailedError(
            f"x0 has shape {cfg.x0.shape}, expected ({model.dimension},)")
    if not bool(model.state_space.contains(cfg.x0, tol=TOL.membership)):
        raise PreconditionFailedError("x0 is outside the state space")
    S = np.asarray(sigma(cfg.x0[None]))[0]
    resid = float(np.abs(S @ S.T - model.diffusion(cfg.x0)).max())
    scale = 1.0 + float(np.abs(model.diffusion(cfg.x0)).max())
    if resid > TOL.feasibility * scale:
        raise SigmaMismatchError(
            f"sigma sigma^T differs from theta at x0 by {resid:.3e}")


def _run(model: ModelSpec, sigma, cfg: SimConfig, projector,
         on_step=None, keep_paths: bool = True):
    """Shared Euler stepping kernel.

    ``on_step(step_index, states)`` is called for every stored grid index
    including 0; when keep_paths is false the full array is not materialized.
    """
    _check_start(model, sigma, cfg)
    p = model.dimension
    n = cfg.n_paths
    dt = cfg.horizon / cfg.steps
    sqdt = np.sqrt(dt)
    full_trunc = cfg.scheme is Scheme.FULL_TRUNCATION_EULER
    if full_trunc and projector is None:
        projector = make_projector(model.state_space)

    x = np.tile(cfg.x0, (n, 1))
    states = np.empty((n, cfg.steps + 1, p)) if keep_paths else None
    if keep_paths:
        states[:, 0] = x
    nonfinite = np.zeros(n, dtype=bool)
    if on_step is not None:
        on_step(0, x)

    a, b = model.drift.a, model.drift.b
    for step in range(cfg.steps):
        xs = projector(x) if full_trunc else x
        noise = _step_normals(cfg.seed, step, n, p)
        S = np.asarray(sigma(xs))
        with np.errstate(over="ignore", invalid="ignore"):
            x_new = x + (x @ a.T + b) * dt + \
                np.einsum("nij,nj->ni", S, noise) * sqdt
        bad = ~np.isfinite(x_new).all(axis=1)
        if bad.any():
            nonfinite |= bad
            x_new[bad] = x[bad]  # freeze exploded paths at the last finite state
        if full_trunc:
            x_new = projector(x_new)
        x = x_new
        if keep_paths:
            states[:, step + 1] = x
        if on_step is not None:
            on_step(step + 1, x)
    return states, x, nonfinite


def simulate_paths(model: ModelSpec, sigma, cfg: SimConfig,
                   projector=None) -> PathEnsemble:
    """Euler simulation of the affine SDE; returns the full path ensemble.

    Under the full-truncation scheme the state is projected onto the state
    space before each diffusion evaluation and after each update, so every
    stored state is a member; under the plain scheme states evolve freely and
    the square-root guards in sigma handle excursions.
    """
    times = np.linspace(0.0, cfg.horizon, cfg.steps + 1)
    tracker = _ExitTracker(model.state_space, cfg.n_paths, 1e-8)

    def on_step(step, x):
        tracker.update(step, x)

    states, _, nonfinite = _run(model, sigma, cfg, projector, on_step=on_step)
    return PathEnsemble(times, states, tracker.exit_step, nonfinite)


@dataclass
class SimSummary:
    """Streaming reductions over an ensemble that was never materialized."""

    times: np.ndarray
    final_states: np.ndarray
    exit_stats: ExitStats
    functional_minima: np.ndarray  # (n_functionals, n_paths)
    nonfinite: np.ndarray


def simulate_summary(model: ModelSpec, sigma, cfg: SimConfig, projector=None,
                     functionals: tuple = (), tol: float = 1e-8) -> SimSummary:
    """Run the same stepping kernel as simulate_paths but reduce on the fly.

    Produces final states, per-path minima of the given functionals over the
    whole grid, and exit statistics, without storing the paths; results agree
    exactly with reducing a stored ensemble (same noise keying).
    """
    times = np.linspace(0.0, cfg.horizon, cfg.steps + 1)
    tracker = _ExitTracker(model.state_space, cfg.n_paths, tol)
    minima = np.full((len(functionals), cfg.n_paths), np.inf)

    def on_step(step, x):
        tracker.update(step, x)
        for k, fn in enumerate(functionals):
            minima[k] = np.minimum(minima[k], fn(x))

    _, final, nonfinite = _run(model, sigma, cfg, projector,
                               on_step=on_step, keep_paths=False)
    return SimSummary(times, final, _stats_from_tracker(tracker, times),
                      minima, nonfinite)


def mean_ode(model: ModelSpec, x0, horizon: float,
             n_steps: int = 10_000) -> tuple[np.ndarray, np.ndarray]:
    """Fourth-order fixed-step integration of the mean dynamics dm/dt = a m + b."""
    a, b = model.drift.a, model.drift.b
    x0 = np.asarray(x0, dtype=float)
    h = horizon / n_steps
    times = np.linspace(0.0, horizon, n_steps + 1)
    out = np.empty((n_steps + 1, x0.shape[0]))
    out[0] = x0
    m = x0.copy()

    def f(v):
        return a @ v + b

    for k in range(n_steps):
        k1 = f(m)
        k2 = f(m + 0.5 * h * k1)
        k3 = f(m + 0.5 * h * k2)
        k4 = f(m + h * k3)
        m = m + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        out[k + 1] = m
    return times, out


def invariance_monte_carlo(ens: PathEnsemble, space, tol: float) -> ExitStats:
    """Empirical invariance statistics of a stored ensemble: fraction of paths
    leaving the state space by more than tol, worst violations, and the
    first-exit-time histogram."""
    tracker = _ExitTracker(space, ens.n_paths, tol)
    for step in range(ens.states.shape[1]):
        tracker.update(step, ens.states[:, step])
    return _stats_from_tracker(tracker, ens.times)


def boundary_attainment(ens: PathEnsemble, functional, eps: float) -> float:
    """Fraction of paths whose functional value drops below eps at any grid time."""
    if ens.n_paths == 0:
        return 0.0
    if isinstance(functional, (AffineScalar, QuadraticForm)):
        vals = functional(ens.states.reshape(-1, ens.states.shape[-1]))
        vals = np.asarray(vals).reshape(ens.states.shape[:2])
    else:
        vals = np.asarray(functional(ens.states))
    hit = np.any(vals < eps, axis=1)
    return float(np.count_nonzero(hit)) / ens.n_paths
