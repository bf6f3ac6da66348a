"""Coefficient-ODE solver on a truncated monomial lattice.

The desirability function is expanded in monomials of the extended
state (x1 .. xN, z),

    psi(x, t) = sum over n of P(n1, .., nN, nz, t) x^n z^nz,

and the linear PDE  d(psi)/dt + (L' + g) psi = 0  becomes a linear ODE
for the coefficient tensor P. Each operator term c * x^alpha * d^beta
acts on the lattice as a shift: the coefficient at m receives
contributions from n = m - alpha + beta with a falling-factorial
weight, so the whole right-hand side compiles to a short list of
(offset, factor-grid) pairs applied with array slicing.

Time convention: `CoeffOde.apply` returns dP/ds where s = t_end - t is
time to go, i.e. the lattice translation of +(L' + g); equivalently
dP/dt is its negation. `integrate_backward` therefore runs a plain
forward RK4 in s from the terminal tensor, and the result at s equal to
the horizon is the coefficient tensor at the initial time.

The terminal condition psi(x, t_end) = exp(-phi(x)/lambda) = z is exact
in this basis: a single unit coefficient at (0, .., 0, nz=1).
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import (
    CutoffTooSmall,
    DesirabilityUnderflow,
    NonFinite,
    ParseError,
    ValidationError,
)
from . import validation as _val

_STEP_REL_TOL = 1e-9


class CoeffTensor:
    """Monomial coefficients on a truncated lattice at a fixed time.

    Attributes
    ----------
    values : ndarray
        Shape ``(*cutoffs, nz_levels)``; axis -1 indexes the power of z.
    time : float
        The time the coefficients refer to.
    """

    __slots__ = ("values", "time")

    def __init__(self, values, time):
        values = np.asarray(values, dtype=float).copy()
        if values.ndim < 2:
            raise ValidationError(
                "coefficient tensor needs at least one state axis plus the z axis"
            )
        values.setflags(write=False)
        self.values = values
        self.time = float(time)

    @property
    def cutoffs(self):
        return self.values.shape[:-1]

    @property
    def nz_levels(self):
        return self.values.shape[-1]

    @property
    def dim(self):
        return self.values.ndim - 1

    def __repr__(self):
        return f"CoeffTensor(shape={self.values.shape}, time={self.time!r})"


def terminal_condition(cutoffs, nz_levels=2, time=0.0):
    """Coefficients of psi = z: a single 1 at (0, .., 0, nz=1)."""
    cutoffs = tuple(int(c) for c in cutoffs)
    if any(c < 1 for c in cutoffs) or nz_levels < 2:
        raise ValidationError("cutoffs must be >= 1 and nz_levels >= 2")
    values = np.zeros(cutoffs + (int(nz_levels),))
    values[(0,) * len(cutoffs) + (1,)] = 1.0
    return CoeffTensor(values, time)


class CoeffOde:
    """Compiled lattice translation of a polynomial-coefficient operator.

    Holds per-offset factor grids and the slice pairs that route source
    coefficients to their targets. `apply` evaluates dP/ds (s = time to
    go) as a handful of shifted elementwise multiply-adds.
    """

    def __init__(self, shape, entries):
        self.shape = tuple(shape)
        self._entries = entries  # list of (offset, tgt_slices, src_slices, factors)

    @property
    def offsets(self):
        """Lattice offsets (target minus source) with nonzero factors."""
        return [e[0] for e in self._entries]

    def apply(self, values):
        """Right-hand side dP/ds for a coefficient array of matching shape."""
        values = np.asarray(values, dtype=float)
        if values.shape != self.shape:
            raise ValidationError(
                f"coefficient array shape {values.shape} does not match "
                f"lattice shape {self.shape}"
            )
        out = np.zeros(self.shape)
        for _, tgt, src, fac in self._entries:
            out[tgt] += fac * values[src]
        return out

    def __repr__(self):
        return f"CoeffOde(shape={self.shape}, n_offsets={len(self._entries)})"


def _falling_factorial(size, order):
    n = np.arange(size, dtype=float)
    out = np.ones(size)
    for j in range(order):
        out *= n - j
    return out


def compile_ode(generator, g_term, cutoffs, nz_levels=2):
    """Compile (L' + g) into a shift stencil on the coefficient lattice.

    Parameters
    ----------
    generator, g_term : PolyOperator
        Extended generator and running-cost multiplication operator over
        (x1 .. xN, z), z last, as produced by `ito_extend`.
    cutoffs : sequence of int
        Lattice extent per state axis; powers run 0 .. cutoff-1.
    nz_levels : int
        Number of z powers kept (2 suffices when the terminal tensor is
        the bare observable z and the generator never raises nz).

    Returns
    -------
    CoeffOde

    Raises
    ------
    CutoffTooSmall
        If a term shifts mass farther than the lattice extent, so its
        action would be lost entirely.
    """
    cutoffs = tuple(int(c) for c in cutoffs)
    if any(c < 1 for c in cutoffs) or int(nz_levels) < 1:
        raise ValidationError("cutoffs and nz_levels must be positive")
    shape = cutoffs + (int(nz_levels),)
    naxes = len(shape)
    if generator.nvars != naxes or g_term.nvars != naxes:
        raise ValidationError(
            f"operators over {generator.nvars} variables do not match "
            f"{naxes} lattice axes (state axes plus z)"
        )

    grids = {}
    for op in (generator, g_term):
        for coeff, powers, derivs in op.terms():
            offset = tuple(p - d for p, d in zip(powers, derivs))
            for ax in range(naxes):
                if abs(offset[ax]) >= shape[ax]:
                    raise CutoffTooSmall(
                        f"term x^{powers} d^{derivs} shifts axis {ax + 1} by "
                        f"{offset[ax]}, beyond lattice extent {shape[ax]}"
                    )
            factor = np.full(shape, float(coeff))
            for ax in range(naxes):
                if derivs[ax]:
                    vec = _falling_factorial(shape[ax], derivs[ax])
                    view = [1] * naxes
                    view[ax] = -1
                    factor *= vec.reshape(view)
            if offset in grids:
                grids[offset] += factor
            else:
                grids[offset] = factor

    entries = []
    for offset in sorted(grids):
        factor = grids[offset]
        src, tgt = [], []
        for ax, d in enumerate(offset):
            lo = max(0, -d)
            hi = min(shape[ax], shape[ax] - d)
            src.append(slice(lo, hi))
            tgt.append(slice(lo + d, hi + d))
        src = tuple(src)
        tgt = tuple(tgt)
        fac = np.ascontiguousarray(factor[src])
        if np.any(fac):
            entries.append((offset, tgt, src, fac))
    return CoeffOde(shape, entries)


def split_steps(span, dt):
    """Whole steps and remainder covering a nonnegative span."""
    if dt <= 0.0 or not np.isfinite(dt):
        raise ValidationError("dt must be positive and finite")
    if span < 0.0:
        raise ValidationError("time span must be nonnegative")
    n = int(np.floor(span / dt + _STEP_REL_TOL))
    rem = span - n * dt
    if rem <= _STEP_REL_TOL * dt:
        rem = 0.0
    return n, rem


def integrate_backward(ode, terminal, t_final, t_initial, dt):
    """Integrate the coefficient ODE from t_final back to t_initial.

    Runs classical RK4 with fixed step ``dt`` in the time-to-go
    variable (a trailing partial step covers any remainder).

    Parameters
    ----------
    ode : CoeffOde
    terminal : CoeffTensor
        Coefficients at ``t_final``; ``terminal.time`` must agree.
    t_final, t_initial : float
        With t_final >= t_initial.
    dt : float
        Positive step size.

    Returns
    -------
    CoeffTensor
        Coefficients at ``t_initial``.
    """
    if terminal.values.shape != ode.shape:
        raise ValidationError("terminal tensor shape does not match the ode lattice")
    if not np.isclose(terminal.time, t_final, rtol=1e-9, atol=1e-12):
        raise ValidationError(
            f"terminal tensor is at time {terminal.time!r}, expected {t_final!r}"
        )
    span = float(t_final) - float(t_initial)
    n, rem = split_steps(span, dt)

    P = terminal.values.astype(float, copy=True)
    steps = [dt] * n + ([rem] if rem else [])
    for k, h in enumerate(steps):
        k1 = ode.apply(P)
        k2 = ode.apply(P + 0.5 * h * k1)
        k3 = ode.apply(P + 0.5 * h * k2)
        k4 = ode.apply(P + h * k3)
        P += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(P)):
            raise NonFinite(
                f"coefficient tensor lost finiteness on step {k + 1} of {len(steps)}"
            )
    return CoeffTensor(P, t_initial)


# -- evaluation ---------------------------------------------------------


def _vandermonde(x, ncols, with_deriv=False):
    V = np.vander(np.asarray(x, dtype=float), ncols, increasing=True)
    if not with_deriv:
        return V, None
    D = np.zeros_like(V)
    if ncols > 1:
        D[:, 1:] = V[:, :-1] * np.arange(1, ncols)
    return V, D


def _nonzero_levels(values):
    flat = values.reshape(-1, values.shape[-1])
    return [l for l in range(values.shape[-1]) if np.any(flat[:, l])]


def _polynomial_parts(values, X, want_grad):
    """S_l(x) = sum_n P(n, l) x^n per z level, and its x-gradients.

    Returns (levels, S, G) with S of shape (n_levels, m) and G of shape
    (n_levels, m, dim) or None.
    """
    dim = values.ndim - 1
    m = X.shape[0]
    levels = _nonzero_levels(values)
    S = np.zeros((len(levels), m))
    G = np.zeros((len(levels), m, dim)) if want_grad else None

    if dim == 1:
        V, D = _vandermonde(X[:, 0], values.shape[0], want_grad)
        for a, l in enumerate(levels):
            S[a] = V @ values[:, l]
            if want_grad:
                G[a, :, 0] = D @ values[:, l]
    elif dim == 2:
        V1, D1 = _vandermonde(X[:, 0], values.shape[0], want_grad)
        V2, D2 = _vandermonde(X[:, 1], values.shape[1], want_grad)
        for a, l in enumerate(levels):
            P = values[:, :, l]
            A = V1 @ P
            S[a] = np.einsum("mj,mj->m", A, V2)
            if want_grad:
                G[a, :, 0] = np.einsum("mj,mj->m", D1 @ P, V2)
                G[a, :, 1] = np.einsum("mj,mj->m", A, D2)
    else:
        # reference path for higher dimensions: one state at a time
        mats = [
            _vandermonde(X[:, i], values.shape[i], want_grad) for i in range(dim)
        ]
        for a, l in enumerate(levels):
            P = values[..., l]
            for r in range(m):
                rows = [mats[i][0][r] for i in range(dim)]
                T = P
                for i in range(dim):
                    T = np.tensordot(rows[i], T, axes=(0, 0))
                S[a, r] = T
                if want_grad:
                    for i in range(dim):
                        T = P
                        for j in range(dim):
                            vec = mats[j][1][r] if j == i else mats[j][0][r]
                            T = np.tensordot(vec, T, axes=(0, 0))
                        G[a, r, i] = T
    return levels, S, G


def _psi_and_gradient(coeffs, X, cost, lam, want_grad):
    values = coeffs.values
    dim = values.ndim - 1
    X = _val.as_state_batch(X, dim)
    z = np.exp(-cost(X) / lam)
    levels, S, G = _polynomial_parts(values, X, want_grad)
    psi = np.zeros(X.shape[0])
    weighted = np.zeros(X.shape[0])  # sum of l * z^l * S_l, for the chain rule
    grad = np.zeros_like(X) if want_grad else None
    for a, l in enumerate(levels):
        zl = z**l
        psi += zl * S[a]
        if want_grad:
            weighted += l * zl * S[a]
            grad += zl[:, None] * G[a]
    if want_grad:
        grad -= (cost.gradient(X) / lam) * weighted[:, None]
    return psi, grad


def eval_psi(coeffs, x, cost, lam):
    """Evaluate psi at one state or a batch of states.

    The z coordinate is eliminated on the fly: z = exp(-phi(x)/lambda)
    with ``cost`` the terminal cost phi. Returns a float for a single
    state, else an array of shape (m,).
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    psi, _ = _psi_and_gradient(coeffs, np.atleast_2d(x), cost, lam, False)
    return float(psi[0]) if single else psi


def eval_psi_grid(coeffs, axes, cost, lam):
    """Evaluate psi on a product grid given per-axis coordinate arrays.

    Much faster than a flat batch for grids because the lattice is
    contracted once per axis. Returns an array of shape
    ``(len(axes[0]), .., len(axes[-1]))``.
    """
    values = coeffs.values
    dim = values.ndim - 1
    if len(axes) != dim:
        raise ValidationError(f"expected {dim} coordinate arrays")
    axes = [np.asarray(a, dtype=float) for a in axes]
    levels = _nonzero_levels(values)
    if dim == 1:
        V, _ = _vandermonde(axes[0], values.shape[0])
        S = [V @ values[:, l] for l in levels]
        mesh = axes[0][:, None]
        phi = cost(mesh)
    elif dim == 2:
        V1, _ = _vandermonde(axes[0], values.shape[0])
        V2, _ = _vandermonde(axes[1], values.shape[1])
        S = [
            np.einsum("xa,yb,ab->xy", V1, V2, values[:, :, l], optimize=True)
            for l in levels
        ]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        phi = cost(mesh)
    else:
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        flat = mesh.reshape(-1, dim)
        return eval_psi(coeffs, flat, cost, lam).reshape(mesh.shape[:-1])
    z = np.exp(-phi / lam)
    psi = np.zeros(z.shape)
    for a, l in enumerate(levels):
        psi += z**l * S[a]
    return psi


def control_terms(coeffs, X, problem, floor=1e-12):
    """Feedback controls with underflow masking.

    Returns ``(u, ok, psi)`` where rows of ``u`` with ``~ok`` (psi at or
    below the floor) are zero. The raising wrapper is `eval_control`.
    """
    X = _val.as_state_batch(X, problem.dim)
    psi, grad = _psi_and_gradient(
        coeffs, X, problem.terminal_cost, problem.lam, True
    )
    ok = psi > floor
    u = np.zeros((X.shape[0], problem.n_inputs))
    if np.any(ok):
        ratio = grad[ok] / psi[ok, None]
        u[ok] = ratio @ problem.control_gain().T
    return u, ok, psi


def eval_control(coeffs, x, problem, floor=1e-12):
    """Optimal feedback u = lambda R^-1 U^T grad(psi)/psi at state(s) x.

    Raises
    ------
    DesirabilityUnderflow
        If psi at any query state is at or below ``floor``; the
        offending states ride on the exception.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    u, ok, psi = control_terms(coeffs, np.atleast_2d(x), problem, floor)
    if not np.all(ok):
        bad = np.atleast_2d(x)[~ok]
        raise DesirabilityUnderflow(
            f"psi underflowed the floor {floor!r} at {int((~ok).sum())} state(s), "
            f"first offender {bad[0].tolist()}",
            states=bad,
            mask=~ok,
        )
    return u[0] if single else u


# -- serialization -------------------------------------------------------


def write_coefficients_csv(coeffs, path, provenance=()):
    """Write a coefficient tensor as CSV.

    Columns are ``n1 .. nN, nz, value`` and rows are emitted in
    lexicographic order over the index tuple (row-major lattice order).
    Provenance strings become leading ``#`` comment lines; the tensor
    time is always recorded that way so the file round-trips.
    """
    values = coeffs.values
    dim = values.ndim - 1
    header = [f"n{i + 1}" for i in range(dim)] + ["nz", "value"]
    with open(path, "w", encoding="utf-8") as fh:
        for line in provenance:
            fh.write(f"# {line}\n")
        fh.write(f"# time = {float(coeffs.time)!r}\n")
        fh.write(",".join(header) + "\n")
        for idx in np.ndindex(values.shape):
            fh.write(
                ",".join(str(i) for i in idx) + f",{float(values[idx])!r}\n"
            )


def read_coefficients_csv(path):
    """Read a coefficient tensor written by `write_coefficients_csv`."""
    time = 0.0
    rows = []
    header = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("time") and "=" in body:
                    time = float(body.split("=", 1)[1])
                continue
            if header is None:
                header = line.split(",")
                if header[-1] != "value" or header[-2] != "nz":
                    raise ParseError("coefficient CSV must end in nz,value columns",
                                     line=lineno)
                continue
            parts = line.split(",")
            if len(parts) != len(header):
                raise ParseError(f"expected {len(header)} fields", line=lineno)
            rows.append(([int(p) for p in parts[:-1]], float(parts[-1])))
    if header is None or not rows:
        raise ParseError("coefficient CSV has no data rows")
    naxes = len(header) - 1
    shape = tuple(max(r[0][ax] for r in rows) + 1 for ax in range(naxes))
    values = np.zeros(shape)
    seen = set()
    for idx, val in rows:
        key = tuple(idx)
        if key in seen:
            raise ParseError(f"duplicate lattice index {key}")
        seen.add(key)
        values[key] = val
    return CoeffTensor(values, time)


# -- estimator facade ----------------------------------------------------


class KoopmanPolicy(BaseEstimator):
    """Receding-horizon feedback from the coefficient-ODE solver.

    ``fit`` extends the generator with the exponentiated-cost
    observable, compiles the lattice stencil, and integrates the
    coefficients back over the problem horizon. ``predict`` then maps
    states to the optimal feedback evaluated at the initial time, which
    is the policy a receding-horizon loop replays at every step.

    Parameters
    ----------
    cutoff : int or tuple of int
        Lattice extent per state axis (powers 0 .. cutoff-1).
    nz_levels : int
        Number of z powers kept.
    dt : float
        RK4 step for the backward integration.
    psi_floor : float
        Underflow floor for the feedback gain.
    """

    def __init__(self, cutoff=60, nz_levels=2, dt=1e-4, psi_floor=1e-12):
        self.cutoff = cutoff
        self.nz_levels = nz_levels
        self.dt = dt
        self.psi_floor = psi_floor

    def fit(self, problem, y=None):
        from .operators import ito_extend

        cutoffs = self.cutoff
        if np.isscalar(cutoffs):
            cutoffs = (int(cutoffs),) * problem.dim
        cutoffs = tuple(int(c) for c in cutoffs)
        if len(cutoffs) != problem.dim:
            raise ValidationError("one cutoff per state axis required")

        generator, g_term = ito_extend(problem)
        self.ode_ = compile_ode(generator, g_term, cutoffs, self.nz_levels)
        terminal = terminal_condition(cutoffs, self.nz_levels, time=problem.t_end)
        self.coeffs_ = integrate_backward(
            self.ode_, terminal, problem.t_end, problem.t_start, self.dt
        )
        self.problem_ = problem
        return self

    def desirability(self, X):
        """psi at the initial time for state(s) X."""
        check_is_fitted(self, "coeffs_")
        return eval_psi(
            self.coeffs_, X, self.problem_.terminal_cost, self.problem_.lam
        )

    def cost_to_go(self, X):
        """-lambda * log(psi); infinite where psi is not positive."""
        check_is_fitted(self, "coeffs_")
        psi = np.asarray(self.desirability(X))
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(psi > 0.0, -self.problem_.lam * np.log(
                np.where(psi > 0.0, psi, 1.0)
            ), np.inf)
        return float(out) if out.ndim == 0 else out

    def control_field(self, X):
        """Controls plus validity mask; underflowed rows are zeroed."""
        check_is_fitted(self, "coeffs_")
        u, ok, _ = control_terms(self.coeffs_, X, self.problem_, self.psi_floor)
        return u, ok

    def predict(self, X):
        """Optimal feedback at state(s) X; raises on psi underflow."""
        check_is_fitted(self, "coeffs_")
        x = np.asarray(X, dtype=float)
        single = x.ndim == 1
        u = eval_control(self.coeffs_, np.atleast_2d(x), self.problem_, self.psi_floor)
        return u[0] if single else u
