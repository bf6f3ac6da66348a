"""Closed-loop simulation of the true system under a fitted policy.

Receding-horizon use of the finite-horizon solvers: the feedback field
at the initial time is recomputed conceptually every step, which for a
time-invariant problem means the same fitted policy is evaluated at the
current state each step. The loop is

    observe x_k -> clamp into the policy's trusted box -> u_k ->
    x_{k+1} = x_k + (a(x_k) + U u_k) dt + B_plant sqrt(dt) xi_k,

so the clamp only limits what the CONTROLLER sees; the plant itself
evolves from the true state with its own (possibly richer) noise
matrix `plant_diffusion`. Steps where psi underflowed substitute u = 0
and are counted on the trajectory.

Ensembles run seed-for-seed in lockstep: each seed pre-draws its own
noise sequence from `numpy.random.default_rng(seed)`, so a batched run
and a solo run of the same seed produce identical paths.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import NonFinite, ValidationError
from .koopman import split_steps
from . import validation as _val

logger = logging.getLogger(__name__)


def clamp_state(x, lower, upper):
    """Componentwise clamp of state(s) into [lower, upper]."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if np.any(upper < lower):
        raise ValidationError("clamp upper corner must dominate lower corner")
    return np.clip(np.asarray(x, dtype=float), lower, upper)


class ZeroPolicy:
    """Always-zero feedback; the uncontrolled baseline."""

    def __init__(self, n_inputs):
        self.n_inputs = int(n_inputs)

    def fit(self, problem=None, y=None):
        return self

    def control_field(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.zeros((X.shape[0], self.n_inputs)), np.ones(X.shape[0], dtype=bool)

    def predict(self, X):
        u, _ = self.control_field(X)
        return u[0] if np.asarray(X).ndim == 1 else u


@dataclass(frozen=True)
class Controller:
    """A fitted policy plus the state box it is trusted on.

    ``policy`` must expose ``control_field(X) -> (u, ok)``; the solvers'
    policy classes and `ZeroPolicy` all do.
    """

    policy: object
    clamp_lower: np.ndarray
    clamp_upper: np.ndarray

    def __post_init__(self):
        lo = _val.as_vector("clamp_lower", self.clamp_lower)
        hi = _val.as_vector("clamp_upper", self.clamp_upper, lo.shape[0])
        if np.any(hi <= lo):
            raise ValidationError("clamp box must have positive extent")
        object.__setattr__(self, "clamp_lower", lo)
        object.__setattr__(self, "clamp_upper", hi)


@dataclass
class Trajectory:
    """One closed-loop run.

    ``times`` and ``states`` have one more entry than ``controls``: row
    k of ``controls`` acted between times k and k+1.
    """

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    seed: object = None
    underflow_steps: int = 0

    def __post_init__(self):
        if len(self.times) != len(self.states) or len(self.times) != len(self.controls) + 1:
            raise ValidationError(
                "need len(times) == len(states) == len(controls) + 1"
            )

    def to_csv(self, path, stride=1, active_inputs=None, provenance=()):
        """Write rows t, x1 .. xN, u<k> for control steps 0, stride, ..

        Control columns are limited to ``active_inputs`` (1-based names
        follow the input index). The final state has no control row and
        is not exported.
        """
        stride = int(stride)
        if stride < 1:
            raise ValidationError("stride must be a positive integer")
        n_inp = self.controls.shape[1]
        cols = list(range(n_inp)) if active_inputs is None else list(active_inputs)
        header = ["t"] + [f"x{i + 1}" for i in range(self.states.shape[1])]
        header += [f"u{k + 1}" for k in cols]
        with open(path, "w", encoding="utf-8") as fh:
            for line in provenance:
                fh.write(f"# {line}\n")
            fh.write(",".join(header) + "\n")
            for k in range(0, len(self.controls), stride):
                row = [self.times[k]] + list(self.states[k]) + [
                    self.controls[k][c] for c in cols
                ]
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _simulate_batch(problem, controller, duration, dt, x0, gens, seeds):
    n = problem.dim
    n_inp = problem.n_inputs
    B = problem.plant_diffusion
    nw_dim = B.shape[1]
    whole, rem = split_steps(duration, dt)
    steps = [dt] * whole + ([rem] if rem else [])
    if not steps:
        raise ValidationError("duration must cover at least one step")
    m = len(gens)

    noise = np.stack([g.standard_normal((len(steps), nw_dim)) for g in gens])
    times = np.empty(len(steps) + 1)
    times[0] = 0.0
    states = np.empty((m, len(steps) + 1, n))
    controls = np.empty((m, len(steps), n_inp))
    underflow = np.zeros(m, dtype=int)

    x = np.tile(np.asarray(x0, dtype=float), (m, 1))
    states[:, 0] = x
    t = 0.0
    Umat = problem.control_map
    for k, h in enumerate(steps):
        xt = np.clip(x, controller.clamp_lower, controller.clamp_upper)
        u, ok = controller.policy.control_field(xt)
        underflow += ~ok
        x = x + (problem.drift_batch(x) + u @ Umat.T) * h \
            + (noise[:, k, :] @ B.T) * np.sqrt(h)
        if not np.all(np.isfinite(x)):
            raise NonFinite(
                f"plant state left the finite range on step {k + 1} of {len(steps)}"
            )
        t += h
        times[k + 1] = t
        states[:, k + 1] = x
        controls[:, k] = u
    times[-1] = duration

    total_under = int(underflow.sum())
    if total_under:
        logger.info(
            "substituted u = 0 on %d step(s) where psi underflowed", total_under
        )
    return [
        Trajectory(
            times=times.copy(),
            states=states[i],
            controls=controls[i],
            seed=seeds[i],
            underflow_steps=int(underflow[i]),
        )
        for i in range(m)
    ]


def closed_loop_run(problem, controller, duration, dt, rng, x0=None):
    """Simulate one closed-loop trajectory.

    Parameters
    ----------
    problem : ControlProblem
        Supplies the plant: drift, control map, and `plant_diffusion`.
    controller : Controller
    duration : float
        Simulated time span (the trajectory clock starts at 0).
    dt : float
    rng : int or numpy Generator
        Seed or generator for the plant noise.
    x0 : array_like, optional
        Initial state; defaults to the origin.

    Returns
    -------
    Trajectory
    """
    if x0 is None:
        x0 = np.zeros(problem.dim)
    x0 = _val.as_vector("x0", x0, problem.dim)
    seed = rng if isinstance(rng, (int, np.integer)) else None
    gen = np.random.default_rng(rng)
    return _simulate_batch(problem, controller, duration, dt, x0, [gen], [seed])[0]


def closed_loop_ensemble(problem, controller, duration, dt, seeds, x0=None):
    """Simulate one trajectory per seed, in lockstep.

    Each seed's noise comes from its own ``default_rng(seed)``, so the
    results match seed-for-seed solo runs of `closed_loop_run`.
    """
    if x0 is None:
        x0 = np.zeros(problem.dim)
    x0 = _val.as_vector("x0", x0, problem.dim)
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValidationError("ensemble needs at least one seed")
    gens = [np.random.default_rng(s) for s in seeds]
    return _simulate_batch(problem, controller, duration, dt, x0, gens, seeds)
