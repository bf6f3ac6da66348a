"""Linear differential operators with polynomial coefficients.

`PolyOperator` represents sums of terms ``c * x^alpha * d^beta`` acting
on polynomials over a fixed variable set. `ito_extend` builds the two
operators that drive the coefficient-ODE solver: the generator of the
diffusion extended with the observable

    z = exp(-phi(x) / lambda),

whose drift and noise loading follow from Ito's lemma, and the
multiplication operator for the running-cost term -V/lambda. By
construction the extension closes over polynomials whenever phi is
quadratic: every coefficient that appears is again a polynomial in
(x, z).

Convention: extended operators act on polynomials over (x1 .. xN, z)
with z as the LAST variable.
"""

import numpy as np

from .exceptions import NonQuadraticCost, ValidationError
from .polynomial import Polynomial
from .problem import QuadraticCost


class PolyOperator:
    """Sum of terms ``coeff * x^powers * d^derivs`` over ``nvars`` variables.

    Terms are stored in a dict keyed by ``(powers, derivs)`` exponent
    tuples; zero coefficients are dropped, so equality is structural.
    """

    __slots__ = ("nvars", "_terms")

    def __init__(self, nvars, terms=None):
        nvars = int(nvars)
        if nvars < 1:
            raise ValidationError("operator needs at least one variable")
        self.nvars = nvars
        data = {}
        if terms:
            for (powers, derivs), c in terms.items():
                powers = tuple(int(p) for p in powers)
                derivs = tuple(int(d) for d in derivs)
                if len(powers) != nvars or len(derivs) != nvars:
                    raise ValidationError("term exponent arity mismatch")
                if any(p < 0 for p in powers) or any(d < 0 for d in derivs):
                    raise ValidationError("negative exponent in operator term")
                c = float(c)
                if c != 0.0:
                    key = (powers, derivs)
                    data[key] = data.get(key, 0.0) + c
        self._terms = {k: c for k, c in data.items() if c != 0.0}

    @classmethod
    def zero(cls, nvars):
        return cls(nvars)

    @classmethod
    def derivative(cls, axis, nvars, order=1):
        """The bare operator d^order / dx_axis^order."""
        derivs = [0] * nvars
        derivs[axis] = int(order)
        return cls(nvars, {((0,) * nvars, tuple(derivs)): 1.0})

    @classmethod
    def from_coefficient(cls, poly, derivs):
        """Operator ``poly(x) * d^derivs`` for a polynomial coefficient."""
        derivs = tuple(int(d) for d in derivs)
        if len(derivs) != poly.nvars:
            raise ValidationError("derivative tuple arity must match polynomial")
        terms = {(powers, derivs): c for powers, c in poly.terms()}
        return cls(poly.nvars, terms)

    @classmethod
    def multiplication(cls, poly):
        """Multiplication by a polynomial (zero-derivative operator)."""
        return cls.from_coefficient(poly, (0,) * poly.nvars)

    # -- algebra -------------------------------------------------------

    def __add__(self, other):
        if not isinstance(other, PolyOperator):
            return NotImplemented
        if self.nvars != other.nvars:
            raise ValidationError("operators over different variable counts")
        data = dict(self._terms)
        for k, c in other._terms.items():
            data[k] = data.get(k, 0.0) + c
        return PolyOperator(self.nvars, data)

    def __mul__(self, scalar):
        if not isinstance(scalar, (int, float)):
            return NotImplemented
        return PolyOperator(
            self.nvars, {k: c * scalar for k, c in self._terms.items()}
        )

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other)

    def __eq__(self, other):
        if not isinstance(other, PolyOperator):
            return NotImplemented
        return self.nvars == other.nvars and self._terms == other._terms

    def __hash__(self):
        return hash((self.nvars, frozenset(self._terms.items())))

    # -- inspection ----------------------------------------------------

    def terms(self):
        """Terms as (coeff, powers, derivs), ordered by (derivs, powers)."""
        ordered = sorted(self._terms.items(), key=lambda kv: (kv[0][1], kv[0][0]))
        return [(c, powers, derivs) for (powers, derivs), c in ordered]

    def n_terms(self):
        return len(self._terms)

    def is_zero(self):
        return not self._terms

    def max_derivative(self):
        if not self._terms:
            return 0
        return max(sum(d) for _, d in self._terms)

    def __repr__(self):
        if not self._terms:
            return "PolyOperator(0)"
        parts = []
        for c, powers, derivs in self.terms():
            bits = [repr(c)]
            for i, p in enumerate(powers):
                if p:
                    bits.append(f"x{i + 1}^{p}" if p > 1 else f"x{i + 1}")
            for i, d in enumerate(derivs):
                if d:
                    bits.append(f"d{i + 1}^{d}" if d > 1 else f"d{i + 1}")
            parts.append("*".join(bits))
        return "PolyOperator(" + " + ".join(parts) + ")"

    # -- action --------------------------------------------------------

    def apply(self, poly):
        """Apply to a polynomial, returning a polynomial.

        Exact symbolic application: differentiate, then multiply by the
        monomial coefficient. No truncation happens here.
        """
        if not isinstance(poly, Polynomial):
            raise ValidationError("operand must be a Polynomial")
        if poly.nvars != self.nvars:
            raise ValidationError(
                f"operand has {poly.nvars} variables, operator has {self.nvars}"
            )
        result = Polynomial.zero(self.nvars)
        for (powers, derivs), c in self._terms.items():
            g = poly
            for axis, order in enumerate(derivs):
                for _ in range(order):
                    g = g.diff(axis)
                if g.is_zero():
                    break
            if g.is_zero():
                continue
            result = result + c * Polynomial(self.nvars, {powers: 1.0}) * g
        return result


def apply_operator(op, poly):
    """Functional alias for ``op.apply(poly)``."""
    return op.apply(poly)


def ito_extend(problem):
    """Extend the process generator with z = exp(-phi(x)/lambda).

    Given the model diffusion dx = a(x) dt + B dW and the terminal cost
    phi, Ito's lemma gives the observable dynamics

        dz = a_z dt + b_z . dW,
        a_z = z [ -sum_i a_i phi_i / lambda
                  + 1/2 sum_ij C_ij (phi_i phi_j / lambda^2
                                     - phi_ij / lambda) ],
        b_z_j = -z sum_i B_ij phi_i / lambda,

    with C = B B^T and phi_i the partial derivatives of phi. The
    generator of the joint process (x, z) is then

        L' = sum_i a_i d_i + a_z d_z + 1/2 sum_ij C_ij d_i d_j
             + sum_i (B b_z)_i d_i d_z + 1/2 (b_z . b_z) d_z^2,

    where (B b_z)_i = -z sum_k C_ik phi_k / lambda and
    b_z . b_z = z^2 sum_ik C_ik phi_i phi_k / lambda^2.

    Parameters
    ----------
    problem : ControlProblem
        Supplies drift, model diffusion, lambda, and the costs. The
        terminal cost must be quadratic so the extension closes over
        polynomials.

    Returns
    -------
    (PolyOperator, PolyOperator)
        ``(generator, g_term)`` over variables (x1 .. xN, z), z last:
        the extended generator L' and the multiplication operator
        g = -V(x)/lambda for the running cost.
    """
    if not isinstance(problem.terminal_cost, QuadraticCost) or not isinstance(
        problem.running_cost, QuadraticCost
    ):
        raise NonQuadraticCost(
            "observable extension requires quadratic terminal and running costs"
        )
    n = problem.dim
    nv = n + 1  # x variables plus z, z last
    lam = problem.lam
    C = problem.noise_covariance()
    z = Polynomial.variable(n, nv)

    # x-space ingredients, lifted to (x, z)
    a = [poly.with_vars(nv) for poly in problem.drift]
    phi_d = [
        problem.terminal_cost.gradient_polynomial(i, nvars=n) for i in range(n)
    ]
    phi_dd = [[phi_d[i].diff(j) for j in range(n)] for i in range(n)]
    phi_d_l = [p.with_vars(nv) for p in phi_d]

    gen = PolyOperator.zero(nv)

    # drift of x
    for i in range(n):
        e_i = [0] * nv
        e_i[i] = 1
        gen = gen + PolyOperator.from_coefficient(a[i], e_i)

    # drift of z (Ito correction included)
    a_z = Polynomial.zero(n)
    for i in range(n):
        a_z = a_z - (1.0 / lam) * problem.drift[i] * phi_d[i]
        for j in range(n):
            if C[i, j] == 0.0:
                continue
            a_z = a_z + 0.5 * C[i, j] * (
                (1.0 / lam**2) * phi_d[i] * phi_d[j]
                - (1.0 / lam) * phi_dd[i][j]
            )
    e_z = [0] * nv
    e_z[n] = 1
    gen = gen + PolyOperator.from_coefficient(z * a_z.with_vars(nv), e_z)

    # second order in x
    for i in range(n):
        for j in range(n):
            if C[i, j] == 0.0:
                continue
            d2 = [0] * nv
            d2[i] += 1
            d2[j] += 1
            coeff = Polynomial.constant(0.5 * C[i, j], nv)
            gen = gen + PolyOperator.from_coefficient(coeff, d2)

    # mixed x-z second order
    for i in range(n):
        cross = Polynomial.zero(nv)
        for k in range(n):
            if C[i, k] == 0.0:
                continue
            cross = cross - (C[i, k] / lam) * phi_d_l[k]
        if cross.is_zero():
            continue
        d_iz = [0] * nv
        d_iz[i] += 1
        d_iz[n] += 1
        gen = gen + PolyOperator.from_coefficient(z * cross, d_iz)

    # pure z second order
    quad = Polynomial.zero(nv)
    for i in range(n):
        for k in range(n):
            if C[i, k] == 0.0:
                continue
            quad = quad + (0.5 * C[i, k] / lam**2) * (phi_d_l[i] * phi_d_l[k])
    if not quad.is_zero():
        d_zz = [0] * nv
        d_zz[n] = 2
        gen = gen + PolyOperator.from_coefficient(z * z * quad, d_zz)

    g_term = PolyOperator.multiplication(
        (-1.0 / lam) * problem.running_cost.as_polynomial(nvars=nv)
    )
    return gen, g_term
