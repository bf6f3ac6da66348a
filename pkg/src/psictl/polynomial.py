"""Sparse multivariate polynomials with real coefficients.

A polynomial over variables ``x1 .. xN`` is stored as a dict mapping
exponent tuples to float coefficients. Zero coefficients are dropped so
two polynomials are equal iff their dicts are. Instances are treated as
immutable; all arithmetic returns new objects.

These are small symbolic objects used to define drifts and to build
differential operators, not a performance-critical evaluation path.
Batched numeric evaluation compiles the term list to numpy arrays once.
"""

import re

import numpy as np

from .exceptions import ParseError, ValidationError

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<var>x\d+)"
    r"|(?P<op>[-+*^]))"
)


class Polynomial:
    """A real polynomial in ``nvars`` variables.

    Parameters
    ----------
    nvars : int
        Number of variables. Exponent tuples have exactly this length.
    coeffs : mapping, optional
        Maps exponent tuples to coefficients. Zeros are dropped.
    """

    __slots__ = ("nvars", "_coef")

    def __init__(self, nvars, coeffs=None):
        nvars = int(nvars)
        if nvars < 1:
            raise ValidationError("polynomial needs at least one variable")
        self.nvars = nvars
        coef = {}
        if coeffs:
            for powers, c in coeffs.items():
                powers = tuple(int(p) for p in powers)
                if len(powers) != nvars:
                    raise ValidationError(
                        f"exponent tuple {powers} does not have {nvars} entries"
                    )
                if any(p < 0 for p in powers):
                    raise ValidationError(f"negative exponent in {powers}")
                c = float(c)
                if c != 0.0:
                    coef[powers] = coef.get(powers, 0.0) + c
        self._coef = {p: c for p, c in coef.items() if c != 0.0}

    # -- constructors -------------------------------------------------

    @classmethod
    def zero(cls, nvars):
        return cls(nvars)

    @classmethod
    def constant(cls, value, nvars):
        return cls(nvars, {(0,) * nvars: value})

    @classmethod
    def variable(cls, index, nvars):
        """The monomial x_{index} (0-based index)."""
        if not 0 <= index < nvars:
            raise ValidationError(f"variable index {index} out of range")
        powers = [0] * nvars
        powers[index] = 1
        return cls(nvars, {tuple(powers): 1.0})

    @classmethod
    def parse(cls, text, nvars):
        """Parse expressions like ``"x2 - x1^2*x2 + 0.5"``.

        Grammar: sum of terms; each term is a ``*``-separated product of
        numbers and powers ``x<i>^<k>``. Variables are 1-based in the
        text. No parentheses.
        """
        tokens = []
        pos = 0
        while pos < len(text):
            m = _TOKEN.match(text, pos)
            if not m:
                if text[pos:].strip():
                    raise ParseError(f"bad character in polynomial: {text[pos:]!r}")
                break
            tokens.append((m.lastgroup, m.group(m.lastgroup)))
            pos = m.end()
        if not tokens:
            raise ParseError("empty polynomial expression")

        result = cls.zero(nvars)
        i = 0
        n = len(tokens)
        while i < n:
            sign = 1.0
            while i < n and tokens[i][0] == "op" and tokens[i][1] in "+-":
                if tokens[i][1] == "-":
                    sign = -sign
                i += 1
            coeff = sign
            powers = [0] * nvars
            expect_factor = True
            while i < n:
                kind, val = tokens[i]
                if kind == "num":
                    coeff *= float(val)
                    i += 1
                elif kind == "var":
                    idx = int(val[1:]) - 1
                    if not 0 <= idx < nvars:
                        raise ParseError(
                            f"variable {val} out of range for {nvars} variables"
                        )
                    exp = 1
                    if i + 1 < n and tokens[i + 1] == ("op", "^"):
                        if i + 2 >= n or tokens[i + 2][0] != "num":
                            raise ParseError(f"missing exponent after {val}^")
                        exp_txt = tokens[i + 2][1]
                        if "." in exp_txt or "e" in exp_txt or "E" in exp_txt:
                            raise ParseError(f"exponent must be an integer: {exp_txt}")
                        exp = int(exp_txt)
                        i += 2
                    powers[idx] += exp
                    i += 1
                else:
                    break
                expect_factor = False
                if i < n and tokens[i] == ("op", "*"):
                    i += 1
                    expect_factor = True
                else:
                    break
            if expect_factor:
                raise ParseError(f"dangling operator in polynomial: {text!r}")
            result = result + cls(nvars, {tuple(powers): coeff})
        return result

    # -- algebra ------------------------------------------------------

    def _check_same(self, other):
        if self.nvars != other.nvars:
            raise ValidationError("polynomials over different variable counts")

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(other, self.nvars)
        self._check_same(other)
        coef = dict(self._coef)
        for p, c in other._coef.items():
            coef[p] = coef.get(p, 0.0) + c
        return Polynomial(self.nvars, coef)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.nvars, {p: -c for p, c in self._coef.items()})

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(other, self.nvars)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return Polynomial(
                self.nvars, {p: c * other for p, c in self._coef.items()}
            )
        self._check_same(other)
        coef = {}
        for p1, c1 in self._coef.items():
            for p2, c2 in other._coef.items():
                key = tuple(a + b for a, b in zip(p1, p2))
                coef[key] = coef.get(key, 0.0) + c1 * c2
        return Polynomial(self.nvars, coef)

    __rmul__ = __mul__

    def __pow__(self, k):
        k = int(k)
        if k < 0:
            raise ValidationError("negative polynomial power")
        out = Polynomial.constant(1.0, self.nvars)
        for _ in range(k):
            out = out * self
        return out

    def diff(self, axis):
        """Partial derivative with respect to variable ``axis`` (0-based)."""
        if not 0 <= axis < self.nvars:
            raise ValidationError(f"axis {axis} out of range")
        coef = {}
        for p, c in self._coef.items():
            if p[axis] == 0:
                continue
            q = list(p)
            q[axis] -= 1
            coef[tuple(q)] = c * p[axis]
        return Polynomial(self.nvars, coef)

    def with_vars(self, nvars):
        """Reinterpret over a larger variable set (new variables appended)."""
        if nvars < self.nvars:
            raise ValidationError("cannot drop variables")
        pad = (0,) * (nvars - self.nvars)
        return Polynomial(nvars, {p + pad: c for p, c in self._coef.items()})

    # -- inspection ---------------------------------------------------

    def terms(self):
        """Sorted list of (powers, coefficient) pairs."""
        return sorted(self._coef.items())

    def degree(self):
        if not self._coef:
            return 0
        return max(sum(p) for p in self._coef)

    def max_power(self, axis):
        if not self._coef:
            return 0
        return max(p[axis] for p in self._coef)

    def is_zero(self):
        return not self._coef

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.nvars == other.nvars and self._coef == other._coef

    def __hash__(self):
        return hash((self.nvars, frozenset(self._coef.items())))

    def allclose(self, other, tol=1e-12):
        self._check_same(other)
        keys = set(self._coef) | set(other._coef)
        return all(
            abs(self._coef.get(k, 0.0) - other._coef.get(k, 0.0)) <= tol
            for k in keys
        )

    def __repr__(self):
        if not self._coef:
            return "0"
        parts = []
        for powers, c in self.terms():
            factors = []
            if abs(c) != 1.0 or not any(powers):
                factors.append(repr(abs(c)))
            for i, p in enumerate(powers):
                if p == 1:
                    factors.append(f"x{i + 1}")
                elif p > 1:
                    factors.append(f"x{i + 1}^{p}")
            mono = "*".join(factors)
            parts.append(("- " if c < 0 else "+ ") + mono)
        text = " ".join(parts)
        return text[2:] if text.startswith("+ ") else "-" + text[2:]

    # -- evaluation ---------------------------------------------------

    def __call__(self, *coords):
        """Evaluate at a point or on broadcastable coordinate arrays.

        Accepts either ``p(x1, x2, ...)`` with one argument per variable
        or ``p(point)`` with a length-``nvars`` sequence.
        """
        if len(coords) == 1 and self.nvars != 1:
            coords = tuple(np.asarray(coords[0], dtype=float))
        if len(coords) != self.nvars:
            raise ValidationError(
                f"expected {self.nvars} coordinates, got {len(coords)}"
            )
        coords = [np.asarray(c, dtype=float) for c in coords]
        shape = np.broadcast(*coords).shape if len(coords) > 1 else coords[0].shape
        total = np.zeros(shape)
        for powers, c in self._coef.items():
            term = np.full(shape, c)
            for x, p in zip(coords, powers):
                if p:
                    term = term * x**p
            total = total + term
        if total.ndim == 0:
            return float(total)
        return total

    def eval_batch(self, X):
        """Evaluate at a batch of states, shape (m, nvars) -> (m,)."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.nvars:
            raise ValidationError(f"expected states of shape (m, {self.nvars})")
        out = np.zeros(X.shape[0])
        for powers, c in self._coef.items():
            term = np.full(X.shape[0], c)
            for i, p in enumerate(powers):
                if p:
                    term *= X[:, i] ** p
            out += term
        return out
