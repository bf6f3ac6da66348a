"""Finite-difference solver for the linear desirability PDE.

The transformed value equation

    d(psi)/dt + sum_i a_i d_i(psi)
              + 1/2 sum_ij [B B^T]_ij d_i d_j(psi) + g psi = 0,
    g = -V/lambda,   psi(x, t_end) = exp(-phi(x)/lambda),

is integrated backward on a uniform box grid with explicit time
stepping: each backward step is psi <- psi + dt * (L psi + g psi).
Spatial derivatives are second-order central in the interior with
first-order one-sided stencils on the boundary ring, which are evolved
exactly like interior points (no artificial boundary data is imposed;
the scheme simply loses one order in the outermost cells). The explicit
step is subject to the usual diffusion bound

    dt <= cfl_safety * min(dx)^2 / max|B B^T|,

checked up front.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import (
    DesirabilityUnderflow,
    OutOfDomain,
    StabilityViolation,
    Unstable,
    ValidationError,
)
from .koopman import split_steps
from . import validation as _val

_BLOWUP = 1e12


class UniformGrid:
    """Axis-aligned uniform grid over a box.

    Parameters
    ----------
    lower, upper : array_like
        Box corners, one entry per axis.
    spacing : float or array_like
        Grid step per axis; each span must be an integer multiple.
    """

    def __init__(self, lower, upper, spacing):
        self.lower = _val.as_vector("grid lower corner", lower)
        self.upper = _val.as_vector("grid upper corner", upper, self.lower.shape[0])
        spacing = np.asarray(spacing, dtype=float)
        if spacing.ndim == 0:
            spacing = np.full(self.lower.shape, float(spacing))
        self.spacing = _val.as_vector("grid spacing", spacing, self.lower.shape[0])
        if np.any(self.spacing <= 0):
            raise ValidationError("grid spacing must be positive")
        if np.any(self.upper <= self.lower):
            raise ValidationError("grid upper corner must exceed lower corner")
        counts = (self.upper - self.lower) / self.spacing
        rounded = np.round(counts)
        if np.any(np.abs(counts - rounded) > 1e-6):
            raise ValidationError(
                "grid span must be an integer number of cells per axis"
            )
        self.shape = tuple(int(c) + 1 for c in rounded)
        if any(s < 3 for s in self.shape):
            raise ValidationError("grid needs at least 3 points per axis")
        for a in (self.lower, self.upper, self.spacing):
            a.setflags(write=False)

    @property
    def dim(self):
        return self.lower.shape[0]

    def axes(self):
        return [
            np.linspace(self.lower[i], self.upper[i], self.shape[i])
            for i in range(self.dim)
        ]

    def mesh(self):
        """Stacked coordinates, shape (*shape, dim)."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def __repr__(self):
        return (
            f"UniformGrid(lower={self.lower.tolist()}, upper={self.upper.tolist()}, "
            f"spacing={self.spacing.tolist()})"
        )


class PsiField:
    """Grid samples of psi at a fixed time."""

    __slots__ = ("grid", "values", "time")

    def __init__(self, grid, values, time):
        values = np.asarray(values, dtype=float).copy()
        if values.shape != grid.shape:
            raise ValidationError(
                f"field shape {values.shape} does not match grid {grid.shape}"
            )
        values.setflags(write=False)
        self.grid = grid
        self.values = values
        self.time = float(time)

    def __repr__(self):
        return f"PsiField(shape={self.values.shape}, time={self.time!r})"


def _sl(ndim, axis, s):
    out = [slice(None)] * ndim
    out[axis] = s
    return tuple(out)


def _d1(f, dx, axis):
    """First derivative: central interior, one-sided boundary ring."""
    nd = f.ndim
    out = np.empty_like(f)
    out[_sl(nd, axis, slice(1, -1))] = (
        f[_sl(nd, axis, slice(2, None))] - f[_sl(nd, axis, slice(0, -2))]
    ) / (2.0 * dx)
    out[_sl(nd, axis, 0)] = (
        f[_sl(nd, axis, 1)] - f[_sl(nd, axis, 0)]
    ) / dx
    out[_sl(nd, axis, -1)] = (
        f[_sl(nd, axis, -1)] - f[_sl(nd, axis, -2)]
    ) / dx
    return out


def _d2(f, dx, axis):
    """Second derivative: central interior, shifted stencil on the ring."""
    nd = f.ndim
    out = np.empty_like(f)
    out[_sl(nd, axis, slice(1, -1))] = (
        f[_sl(nd, axis, slice(2, None))]
        - 2.0 * f[_sl(nd, axis, slice(1, -1))]
        + f[_sl(nd, axis, slice(0, -2))]
    ) / dx**2
    out[_sl(nd, axis, 0)] = (
        f[_sl(nd, axis, 0)] - 2.0 * f[_sl(nd, axis, 1)] + f[_sl(nd, axis, 2)]
    ) / dx**2
    out[_sl(nd, axis, -1)] = (
        f[_sl(nd, axis, -1)] - 2.0 * f[_sl(nd, axis, -2)] + f[_sl(nd, axis, -3)]
    ) / dx**2
    return out


def solve_hjb(problem, grid, dt, cfl_safety=0.25):
    """Integrate the desirability PDE backward over the problem horizon.

    Parameters
    ----------
    problem : ControlProblem
    grid : UniformGrid
        Must match the problem dimension.
    dt : float
        Explicit time step (a trailing partial step covers remainders).
    cfl_safety : float
        Fraction of the explicit diffusion bound the step may use. The
        default 0.25 is conservative; 1.0 admits the classical limit.

    Returns
    -------
    PsiField
        psi at the problem start time.

    Raises
    ------
    StabilityViolation
        If dt exceeds the stability bound up front.
    Unstable
        If grid values exceed 1e12 or go non-finite while stepping.
    """
    if grid.dim != problem.dim:
        raise ValidationError("grid dimension does not match the problem")
    dt = _val.positive_scalar("dt", dt)
    cfl_safety = _val.positive_scalar("cfl_safety", cfl_safety)

    C = problem.noise_covariance()
    peak = float(np.max(np.abs(C)))
    if peak > 0.0:
        bound = cfl_safety * float(np.min(grid.spacing)) ** 2 / peak
        if dt > bound * (1.0 + 1e-9):
            raise StabilityViolation(
                f"dt={dt!r} exceeds the explicit stability bound {bound!r} "
                f"(cfl_safety={cfl_safety!r}, min dx={float(np.min(grid.spacing))!r}, "
                f"max |BB^T|={peak!r})"
            )

    mesh = grid.mesh()
    lam = problem.lam
    psi = np.exp(-problem.terminal_cost(mesh) / lam)
    gfield = -problem.running_cost(mesh) / lam
    afields = [poly(*np.moveaxis(mesh, -1, 0)) for poly in problem.drift]
    dxs = grid.spacing

    n, rem = split_steps(problem.t_end - problem.t_start, dt)
    steps = [dt] * n + ([rem] if rem else [])
    dim = grid.dim
    for k, h in enumerate(steps):
        rhs = gfield * psi
        for i in range(dim):
            rhs += afields[i] * _d1(psi, dxs[i], i)
            if C[i, i] != 0.0:
                rhs += 0.5 * C[i, i] * _d2(psi, dxs[i], i)
            for j in range(i + 1, dim):
                if C[i, j] != 0.0:
                    rhs += C[i, j] * _d1(_d1(psi, dxs[j], j), dxs[i], i)
        psi = psi + h * rhs
        peak_val = float(np.max(np.abs(psi)))
        if not np.isfinite(peak_val) or peak_val > _BLOWUP:
            raise Unstable(
                f"grid values reached {peak_val!r} on step {k + 1} of {len(steps)}"
            )
    return PsiField(grid, psi, problem.t_start)


# -- queries --------------------------------------------------------------


def _interior_check(grid, X):
    lo = grid.lower + grid.spacing
    hi = grid.upper - grid.spacing
    bad = np.any(X < lo - 1e-12, axis=1) | np.any(X > hi + 1e-12, axis=1)
    if np.any(bad):
        raise OutOfDomain(
            f"state {X[bad][0].tolist()} is not at least one cell inside the grid"
        )


def interpolate_psi(field, X):
    """Multilinear interpolation of psi at state(s) X (interior only)."""
    grid = field.grid
    x = np.asarray(X, dtype=float)
    single = x.ndim == 1
    X = _val.as_state_batch(x, grid.dim)
    _interior_check(grid, X)
    rel = (X - grid.lower) / grid.spacing
    base = np.floor(rel).astype(int)
    base = np.minimum(base, np.asarray(grid.shape) - 2)
    frac = rel - base
    out = np.zeros(X.shape[0])
    for corner in np.ndindex(*(2,) * grid.dim):
        w = np.ones(X.shape[0])
        idx = []
        for ax, c in enumerate(corner):
            w *= frac[:, ax] if c else (1.0 - frac[:, ax])
            idx.append(base[:, ax] + c)
        out += w * field.values[tuple(idx)]
    return float(out[0]) if single else out


def fd_control_terms(field, X, problem, floor=1e-12):
    """Controls from the grid field with underflow masking.

    Gradient uses the central difference at the nearest interior node;
    psi itself is interpolated. Returns ``(u, ok, psi)``.
    """
    grid = field.grid
    X = _val.as_state_batch(X, grid.dim)
    _interior_check(grid, X)
    psi = interpolate_psi(field, X)
    node = np.round((X - grid.lower) / grid.spacing).astype(int)
    node = np.clip(node, 1, np.asarray(grid.shape) - 2)
    grad = np.empty_like(X)
    for ax in range(grid.dim):
        up = node.copy()
        up[:, ax] += 1
        dn = node.copy()
        dn[:, ax] -= 1
        grad[:, ax] = (
            field.values[tuple(up.T)] - field.values[tuple(dn.T)]
        ) / (2.0 * grid.spacing[ax])
    ok = psi > floor
    u = np.zeros((X.shape[0], problem.n_inputs))
    if np.any(ok):
        u[ok] = (grad[ok] / psi[ok, None]) @ problem.control_gain().T
    return u, ok, psi


def fd_control(field, x, problem, floor=1e-12):
    """Optimal feedback from a solved field; raises on psi underflow."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    u, ok, _ = fd_control_terms(field, np.atleast_2d(x), problem, floor)
    if not np.all(ok):
        bad = np.atleast_2d(x)[~ok]
        raise DesirabilityUnderflow(
            f"psi underflowed the floor {floor!r} at {int((~ok).sum())} state(s), "
            f"first offender {bad[0].tolist()}",
            states=bad,
            mask=~ok,
        )
    return u[0] if single else u


def write_psi_csv(field, path, provenance=()):
    """Write grid samples as CSV with columns x1 .. xN, psi.

    Rows follow row-major grid order. Provenance strings become leading
    ``#`` comment lines.
    """
    mesh = field.grid.mesh().reshape(-1, field.grid.dim)
    vals = field.values.reshape(-1)
    header = [f"x{i + 1}" for i in range(field.grid.dim)] + ["psi"]
    with open(path, "w", encoding="utf-8") as fh:
        for line in provenance:
            fh.write(f"# {line}\n")
        fh.write(f"# time = {float(field.time)!r}\n")
        fh.write(",".join(header) + "\n")
        for row, v in zip(mesh, vals):
            fh.write(",".join(repr(float(c)) for c in row) + f",{float(v)!r}\n")


class HjbPolicy(BaseEstimator):
    """Receding-horizon feedback from the finite-difference solver.

    ``fit`` integrates the desirability PDE backward on a uniform grid;
    ``predict`` interpolates the resulting field and returns the
    feedback at the initial time.

    Parameters
    ----------
    lower, upper : float or array_like
        Grid box corners (scalars are broadcast to every axis).
    spacing : float or array_like
        Grid step.
    dt : float
        Explicit time step.
    cfl_safety : float
        Fraction of the diffusion stability bound allowed.
    psi_floor : float
        Underflow floor for the feedback gain.
    """

    def __init__(self, lower=-2.0, upper=2.0, spacing=0.01, dt=1e-4,
                 cfl_safety=0.25, psi_floor=1e-12):
        self.lower = lower
        self.upper = upper
        self.spacing = spacing
        self.dt = dt
        self.cfl_safety = cfl_safety
        self.psi_floor = psi_floor

    def _box(self, dim):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.ndim == 0:
            lo = np.full(dim, float(lo))
        if hi.ndim == 0:
            hi = np.full(dim, float(hi))
        return lo, hi

    def fit(self, problem, y=None):
        lo, hi = self._box(problem.dim)
        grid = UniformGrid(lo, hi, self.spacing)
        self.field_ = solve_hjb(problem, grid, self.dt, self.cfl_safety)
        self.problem_ = problem
        return self

    def desirability(self, X):
        check_is_fitted(self, "field_")
        return interpolate_psi(self.field_, X)

    def control_field(self, X):
        """Controls plus validity mask; underflowed rows are zeroed."""
        check_is_fitted(self, "field_")
        u, ok, _ = fd_control_terms(self.field_, X, self.problem_, self.psi_floor)
        return u, ok

    def predict(self, X):
        """Optimal feedback at state(s) X; raises on psi underflow."""
        check_is_fitted(self, "field_")
        return fd_control(self.field_, X, self.problem_, self.psi_floor)
