"""Problem definitions for exponentially transformed stochastic control.

The systems handled here have polynomial drift, state-independent
diffusion, affine control entry, and quadratic state costs:

    dx = (a(x) + U u) dt + B dW,
    J  = phi(x(t_end)) + integral of (V(x) + u^T R u / 2) dt.

The substitution psi = exp(-J*/lambda) turns the value PDE linear
provided noise and control authority are proportional,

    B B^T = lambda * U R^-1 U^T,

which pins the temperature ``lambda``. `compute_lambda` finds it (or
explains why none exists) and `ControlProblem` is the validated bundle
every solver consumes.
"""

import numpy as np

from .exceptions import (
    NoiseOnUncontrolled,
    NotProportional,
    SingularWeight,
    ValidationError,
)
from .polynomial import Polynomial

_PROP_TOL = 1e-12


def _as_matrix(name, value, rows=None, cols=None):
    m = np.asarray(value, dtype=float)
    if m.ndim != 2:
        raise ValidationError(f"{name} must be a 2-d matrix, got shape {m.shape}")
    if rows is not None and m.shape[0] != rows:
        raise ValidationError(f"{name} must have {rows} rows, got {m.shape[0]}")
    if cols is not None and m.shape[1] != cols:
        raise ValidationError(f"{name} must have {cols} columns, got {m.shape[1]}")
    if not np.all(np.isfinite(m)):
        raise ValidationError(f"{name} contains non-finite entries")
    m = m.copy()
    m.setflags(write=False)
    return m


class QuadraticCost:
    """Separable quadratic cost sum_i (x_i - c_i)^2 / (2 s_i^2).

    Parameters
    ----------
    centers : array_like
        Target point c, one entry per state coordinate.
    widths : array_like
        Scale s_i > 0 per coordinate. ``inf`` switches a coordinate off
        (zero weight), so an all-``inf`` cost is identically zero.
    offset : float, optional
        Constant added to the cost, >= 0. Useful for state-independent
        running rates; keeps path weights exp(-cost/lambda) bounded by 1.
    """

    def __init__(self, centers, widths, offset=0.0):
        self.centers = np.asarray(centers, dtype=float).copy()
        self.widths = np.asarray(widths, dtype=float).copy()
        self.offset = float(offset)
        if self.centers.ndim != 1 or self.centers.shape != self.widths.shape:
            raise ValidationError("centers and widths must be 1-d and congruent")
        if not np.all(np.isfinite(self.centers)):
            raise ValidationError("cost centers must be finite")
        if np.any(self.widths <= 0) or np.any(np.isnan(self.widths)):
            raise ValidationError("cost widths must be positive (inf allowed)")
        if not np.isfinite(self.offset) or self.offset < 0:
            raise ValidationError("cost offset must be finite and nonnegative")
        with np.errstate(divide="ignore"):
            self.weights = np.where(np.isinf(self.widths), 0.0, 0.5 / self.widths**2)
        for a in (self.centers, self.widths, self.weights):
            a.setflags(write=False)

    @property
    def dim(self):
        return self.centers.shape[0]

    def __call__(self, X):
        """Evaluate at states; last axis indexes coordinates."""
        X = np.asarray(X, dtype=float)
        return ((X - self.centers) ** 2 * self.weights).sum(axis=-1) + self.offset

    def gradient(self, X):
        X = np.asarray(X, dtype=float)
        return 2.0 * self.weights * (X - self.centers)

    def as_polynomial(self, nvars=None):
        """The cost as a Polynomial (extra trailing variables allowed)."""
        nvars = self.dim if nvars is None else int(nvars)
        out = Polynomial.constant(self.offset, nvars)
        for i in range(self.dim):
            if self.weights[i] == 0.0:
                continue
            xi = Polynomial.variable(i, nvars)
            out = out + self.weights[i] * (xi - self.centers[i]) * (xi - self.centers[i])
        return out

    def gradient_polynomial(self, axis, nvars=None):
        """d(cost)/dx_axis as a Polynomial: 2 w_i (x_i - c_i)."""
        nvars = self.dim if nvars is None else int(nvars)
        if self.weights[axis] == 0.0:
            return Polynomial.zero(nvars)
        xi = Polynomial.variable(axis, nvars)
        return 2.0 * self.weights[axis] * (xi - self.centers[axis])

    def __repr__(self):
        base = f"QuadraticCost(centers={self.centers.tolist()}, widths={self.widths.tolist()}"
        if self.offset:
            base += f", offset={self.offset}"
        return base + ")"


def _proportionality_parts(diffusion, control_map, control_weight):
    """Return (S, M, active) with S = B B^T and M = U R^-1 U^T.

    ``active`` are the input indices with positive weight. Inactive
    inputs must not actuate anything (zero U column), otherwise the
    quadratic control cost cannot bound them.
    """
    B = np.asarray(diffusion, dtype=float)
    U = np.asarray(control_map, dtype=float)
    R = np.asarray(control_weight, dtype=float)
    if B.ndim != 2 or U.ndim != 2 or R.ndim != 2:
        raise ValidationError("diffusion, control map and weight must be matrices")
    n = B.shape[0]
    if U.shape[0] != n:
        raise ValidationError("control map row count must match state dimension")
    k = U.shape[1]
    if R.shape != (k, k):
        raise ValidationError("control weight must be square with one row per input")
    if not np.allclose(R, R.T, atol=1e-12):
        raise ValidationError("control weight must be symmetric")

    active = [i for i in range(k) if R[i, i] > 0.0]
    inert = [i for i in range(k) if i not in active]
    for i in inert:
        if np.any(R[i, :] != 0.0) or np.any(R[:, i] != 0.0):
            raise SingularWeight(
                f"input {i + 1} has zero diagonal weight but nonzero couplings"
            )
        if np.any(U[:, i] != 0.0):
            raise SingularWeight(
                f"input {i + 1} actuates the state but carries zero cost weight"
            )
    if active:
        Ra = R[np.ix_(active, active)]
        if np.linalg.cond(Ra) > 1e12:
            raise SingularWeight("control weight is singular on the actuated inputs")
        Ua = U[:, active]
        M = Ua @ np.linalg.solve(Ra, Ua.T)
    else:
        M = np.zeros((n, n))
    S = B @ B.T
    return S, M, active


def _check_proportionality(S, M, lam):
    scale = max(1.0, float(np.max(np.abs(S))), float(np.max(np.abs(M))) * abs(lam))
    tol = _PROP_TOL * scale
    for i in range(S.shape[0]):
        if M[i, i] <= tol / max(1.0, abs(lam)) and S[i, i] > tol:
            raise NoiseOnUncontrolled(
                f"coordinate {i + 1} is noisy but has no control authority"
            )
    if np.max(np.abs(S - lam * M)) > tol:
        raise NotProportional(
            "noise covariance B B^T is not lambda * U R^-1 U^T for "
            f"lambda={lam!r} (max deviation {np.max(np.abs(S - lam * M)):.3e})"
        )


def compute_lambda(diffusion, control_map, control_weight):
    """Temperature lambda with B B^T = lambda * U R^-1 U^T.

    Parameters
    ----------
    diffusion : (n, n_w) array
        Noise matrix B of the model dynamics.
    control_map : (n, k) array
        Control entry matrix U.
    control_weight : (k, k) array
        Quadratic control cost matrix R, positive definite on the
        actuated inputs (zero rows/columns mark unused inputs).

    Returns
    -------
    float
        The unique positive proportionality constant.

    Raises
    ------
    SingularWeight
        If R is singular on the actuated inputs.
    NoiseOnUncontrolled
        If some coordinate carries noise but no control authority.
    NotProportional
        If no single positive constant matches all entries.
    """
    S, M, _ = _proportionality_parts(diffusion, control_map, control_weight)
    peak = np.unravel_index(np.argmax(np.abs(M)), M.shape)
    if np.abs(M[peak]) <= _PROP_TOL * max(1.0, float(np.max(np.abs(S)))):
        if np.max(np.abs(S)) > _PROP_TOL:
            raise NoiseOnUncontrolled(
                "dynamics are noisy but U R^-1 U^T vanishes identically"
            )
        raise NotProportional(
            "both B B^T and U R^-1 U^T vanish; lambda is undetermined"
        )
    lam = float(S[peak] / M[peak])
    if lam <= 0.0:
        raise NotProportional(f"proportionality constant must be positive, got {lam!r}")
    _check_proportionality(S, M, lam)
    return lam


class ControlProblem:
    """Validated control problem consumed by every solver.

    Parameters
    ----------
    drift : sequence
        One drift component per state coordinate, each a `Polynomial`
        over the state variables or a string parsed as one
        (variables ``x1 .. xN``).
    diffusion : (n, n_w) array
        Model noise matrix B. Must satisfy the proportionality
        constraint against `control_map` and `control_weight`.
    control_map : (n, k) array
        Control entry matrix U.
    control_weight : (k, k) array
        Control cost matrix R.
    terminal_cost, running_cost : QuadraticCost
        phi and V. Their dimension must equal the state dimension.
    t_start, t_end : float
        Horizon, with t_end > t_start.
    lam : float, optional
        Temperature. Computed from the proportionality constraint when
        omitted; when given it is checked against the matrices (useful
        for degenerate cases where both sides vanish).
    plant_diffusion : array, optional
        Noise matrix of the simulated plant when it differs from the
        model used to derive the controller. Defaults to `diffusion`.
        Only the closed-loop simulator reads this field.
    """

    def __init__(
        self,
        drift,
        diffusion,
        control_map,
        control_weight,
        terminal_cost,
        running_cost,
        t_start=0.0,
        t_end=1.0,
        lam=None,
        plant_diffusion=None,
    ):
        comps = []
        for item in drift:
            if isinstance(item, str):
                comps.append(Polynomial.parse(item, len(drift)))
            elif isinstance(item, Polynomial):
                if item.nvars != len(drift):
                    raise ValidationError(
                        "drift polynomial variable count must equal state dimension"
                    )
                comps.append(item)
            else:
                raise ValidationError("drift entries must be polynomials or strings")
        self.drift = tuple(comps)
        n = len(self.drift)

        self.diffusion = _as_matrix("diffusion", diffusion, rows=n)
        self.control_map = _as_matrix("control_map", control_map, rows=n)
        self.control_weight = _as_matrix(
            "control_weight", control_weight,
            rows=self.control_map.shape[1], cols=self.control_map.shape[1],
        )
        if plant_diffusion is None:
            self.plant_diffusion = self.diffusion
        else:
            self.plant_diffusion = _as_matrix("plant_diffusion", plant_diffusion, rows=n)

        if not isinstance(terminal_cost, QuadraticCost) or not isinstance(
            running_cost, QuadraticCost
        ):
            raise ValidationError("costs must be QuadraticCost instances")
        if terminal_cost.dim != n or running_cost.dim != n:
            raise ValidationError("cost dimension must equal state dimension")
        self.terminal_cost = terminal_cost
        self.running_cost = running_cost

        self.t_start = float(t_start)
        self.t_end = float(t_end)
        if not np.isfinite(self.t_start) or not np.isfinite(self.t_end):
            raise ValidationError("horizon endpoints must be finite")
        if self.t_end <= self.t_start:
            raise ValidationError("t_end must exceed t_start")

        S, M, active = _proportionality_parts(
            self.diffusion, self.control_map, self.control_weight
        )
        if lam is None:
            self.lam = compute_lambda(
                self.diffusion, self.control_map, self.control_weight
            )
        else:
            self.lam = float(lam)
            if not np.isfinite(self.lam) or self.lam <= 0.0:
                raise ValidationError("lambda must be a positive finite number")
            _check_proportionality(S, M, self.lam)
        self._active_inputs = tuple(active)

    # -- derived quantities --------------------------------------------

    @property
    def dim(self):
        return len(self.drift)

    @property
    def n_inputs(self):
        return self.control_map.shape[1]

    @property
    def n_noise(self):
        return self.diffusion.shape[1]

    @property
    def active_inputs(self):
        """Indices of inputs with positive cost weight."""
        return self._active_inputs

    def noise_covariance(self):
        """B B^T of the model dynamics."""
        return self.diffusion @ self.diffusion.T

    def control_gain(self):
        """Gain G with u = G (grad psi / psi); G = lambda R^+ U^T.

        Rows of inert inputs are zero. Shape (n_inputs, dim).
        """
        G = np.zeros((self.n_inputs, self.dim))
        act = list(self._active_inputs)
        if act:
            Ra = self.control_weight[np.ix_(act, act)]
            Ua = self.control_map[:, act]
            G[act, :] = self.lam * np.linalg.solve(Ra, Ua.T)
        return G

    def drift_batch(self, X):
        """Drift a(x) for a batch of states, shape (m, dim) -> (m, dim)."""
        X = np.asarray(X, dtype=float)
        out = np.empty_like(X)
        for i, poly in enumerate(self.drift):
            out[:, i] = poly.eval_batch(X)
        return out

    def __repr__(self):
        return (
            f"ControlProblem(dim={self.dim}, n_inputs={self.n_inputs}, "
            f"lam={self.lam!r}, horizon=({self.t_start!r}, {self.t_end!r}))"
        )
