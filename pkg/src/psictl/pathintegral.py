"""Monte Carlo evaluation of the desirability function.

For the linear PDE solved by the other two backends, psi has the
stochastic representation

    psi(x, t) = E[ exp(-phi(X(t_end))/lambda)
                   * exp( integral_t^t_end g(X(s)) ds ) ],
    g = -V/lambda,

where X runs the UNCONTROLLED model dynamics dX = a(X) ds + B dW from
X(t) = x. `feynman_kac_psi` estimates this expectation with
Euler-Maruyama path ensembles; the running-cost integral uses the
left-endpoint rule on the same time mesh, and both state costs are
nonnegative so every path weight lies in [0, 1].

Reproducibility: paths are generated in fixed-size chunks, each from a
counter-based generator keyed by (seed, chunk index), so an estimate is
a pure function of (seed, n_paths) regardless of chunk scheduling.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import NonFinite, ValidationError
from .koopman import split_steps
from .polynomial import Polynomial
from . import validation as _val

_CHUNK = 16384
_PROBE_STRIDE = 2**32  # block-index spacing between probes of one estimator


class RngStream:
    """Family of independent generators keyed by (seed, block index)."""

    def __init__(self, seed, base=0):
        seed = int(seed)
        base = int(base)
        if seed < 0 or seed >= 2**64:
            raise ValidationError("seed must fit in an unsigned 64-bit integer")
        if base < 0:
            raise ValidationError("block base must be nonnegative")
        self.seed = seed
        self.base = base

    def block(self, index):
        key = np.array([self.seed, self.base + int(index)], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, base={self.base})"


def _as_stream(rng):
    if isinstance(rng, RngStream):
        return rng
    if isinstance(rng, (int, np.integer)):
        return RngStream(int(rng))
    raise ValidationError(
        "rng must be an integer seed or an RngStream (counter-based streams "
        "keep chunked ensembles reproducible)"
    )


def _drift_function(drift, dim):
    """Normalize a drift argument to a batch-callable (m, dim) -> (m, dim)."""
    if callable(drift):
        return drift
    comps = []
    for item in drift:
        if isinstance(item, str):
            comps.append(Polynomial.parse(item, dim))
        elif isinstance(item, Polynomial):
            comps.append(item)
        else:
            raise ValidationError("drift entries must be polynomials or strings")
    if len(comps) != dim:
        raise ValidationError("one drift component per coordinate required")

    def fn(X):
        out = np.empty_like(X)
        for i, poly in enumerate(comps):
            out[:, i] = poly.eval_batch(X)
        return out

    return fn


def euler_maruyama_path(drift, diffusion, x0, t0, t1, dt, rng):
    """Simulate one path of dx = a(x) dt + B dW.

    Parameters
    ----------
    drift : sequence or callable
        Polynomials (or strings) per coordinate, or a batch-callable.
    diffusion : (n, n_w) array
    x0 : array_like
        Initial state at time t0.
    t0, t1 : float
        With t1 >= t0. A trailing partial step covers remainders.
    dt : float
    rng : int, RngStream, or numpy Generator

    Returns
    -------
    (times, states)
        Arrays of shape (n_steps + 1,) and (n_steps + 1, n).
    """
    if isinstance(rng, np.random.Generator):
        gen = rng
    else:
        gen = _as_stream(rng).block(0)
    B = np.asarray(diffusion, dtype=float)
    x0 = _val.as_vector("x0", x0)
    n = x0.shape[0]
    if B.ndim != 2 or B.shape[0] != n:
        raise ValidationError("diffusion must have one row per coordinate")
    fn = _drift_function(drift, n)
    nw, rem = split_steps(float(t1) - float(t0), dt)
    steps = [dt] * nw + ([rem] if rem else [])

    times = np.empty(len(steps) + 1)
    states = np.empty((len(steps) + 1, n))
    times[0] = t0
    states[0] = x0
    x = x0[None, :].copy()
    t = float(t0)
    for k, h in enumerate(steps):
        xi = gen.standard_normal(B.shape[1])
        x = x + fn(x) * h + (B @ xi) * np.sqrt(h)
        t += h
        times[k + 1] = t
        states[k + 1] = x[0]
    if not np.all(np.isfinite(states)):
        raise NonFinite("path left the finite range; reduce dt or the horizon")
    times[-1] = t1
    return times, states


@dataclass(frozen=True)
class FkEstimate:
    """Monte Carlo estimate of psi at one state and time."""

    mean: float
    stderr: float
    n_paths: int


def feynman_kac_psi(problem, x, t, n_paths, rng, dt=1e-4):
    """Estimate psi(x, t) by averaging exponentiated path costs.

    Parameters
    ----------
    problem : ControlProblem
    x : array_like
        Query state.
    t : float
        Start time of the estimate; must not exceed the horizon end.
    n_paths : int
        At least 2 (the standard error needs a variance).
    rng : int or RngStream
        Counter-based stream; chunk c of the ensemble draws from block
        c of the stream, making the estimate reproducible.
    dt : float
        Euler-Maruyama step.

    Returns
    -------
    FkEstimate
    """
    n_paths = int(n_paths)
    if n_paths < 2:
        raise ValidationError("n_paths must be at least 2")
    x = _val.as_vector("x", x, problem.dim)
    t = float(t)
    if t > problem.t_end:
        raise ValidationError("start time lies beyond the horizon end")
    stream = _as_stream(rng)
    dt = _val.positive_scalar("dt", dt)

    lam = problem.lam
    B = problem.diffusion
    drift_fn = problem.drift_batch
    nw, rem = split_steps(problem.t_end - t, dt)
    steps = [dt] * nw + ([rem] if rem else [])

    weights = np.empty(n_paths)
    done = 0
    chunk_index = 0
    while done < n_paths:
        m = min(_CHUNK, n_paths - done)
        gen = stream.block(chunk_index)
        X = np.tile(x, (m, 1))
        integral = np.zeros(m)
        for h in steps:
            integral -= (problem.running_cost(X) / lam) * h
            xi = gen.standard_normal((m, B.shape[1]))
            X = X + drift_fn(X) * h + (xi @ B.T) * np.sqrt(h)
        if not np.all(np.isfinite(X)):
            raise NonFinite(
                "a sample path left the finite range; reduce dt or the horizon"
            )
        weights[done:done + m] = np.exp(
            -problem.terminal_cost(X) / lam + integral
        )
        done += m
        chunk_index += 1

    mean = float(np.mean(weights))
    stderr = float(np.std(weights, ddof=1) / np.sqrt(n_paths))
    return FkEstimate(mean=mean, stderr=stderr, n_paths=n_paths)


def write_fk_csv(probes, times, estimates, path, provenance=()):
    """Write probe estimates as CSV: x1 .. xN, t, mean, stderr, npaths."""
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    times = np.asarray(times, dtype=float)
    header = [f"x{i + 1}" for i in range(probes.shape[1])]
    header += ["t", "mean", "stderr", "npaths"]
    with open(path, "w", encoding="utf-8") as fh:
        for line in provenance:
            fh.write(f"# {line}\n")
        fh.write(",".join(header) + "\n")
        for row, t, est in zip(probes, times, estimates):
            fh.write(
                ",".join(repr(float(c)) for c in row)
                + f",{float(t)!r},{float(est.mean)!r},{float(est.stderr)!r},{est.n_paths}\n"
            )


class PathIntegralEstimator(BaseEstimator):
    """Monte Carlo psi estimates with frozen, per-probe random streams.

    Parameters
    ----------
    n_paths : int
        Ensemble size per probe.
    dt : float
        Euler-Maruyama step.
    seed : int
        Stream seed; probe k draws from blocks k * 2^32 + c.
    """

    def __init__(self, n_paths=100000, dt=1e-4, seed=0):
        self.n_paths = n_paths
        self.dt = dt
        self.seed = seed

    def fit(self, problem, y=None):
        self.problem_ = problem
        return self

    def estimate(self, X, t=None):
        """Per-row `FkEstimate` list for probe states X at time t."""
        check_is_fitted(self, "problem_")
        X = _val.as_state_batch(X, self.problem_.dim)
        if t is None:
            t = self.problem_.t_start
        out = []
        for k, row in enumerate(X):
            stream = RngStream(self.seed, base=k * _PROBE_STRIDE)
            out.append(
                feynman_kac_psi(
                    self.problem_, row, t, self.n_paths, stream, self.dt
                )
            )
        return out

    def desirability(self, X, t=None):
        """Means only, as an array aligned with the rows of X."""
        return np.array([e.mean for e in self.estimate(X, t)])
