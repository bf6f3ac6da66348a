"""Input validation helpers shared by solvers and estimators."""

import numpy as np

from .exceptions import ValidationError


def as_state_batch(X, dim):
    """Coerce to a (m, dim) float array; a single state becomes one row."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != dim:
        raise ValidationError(
            f"expected states of shape (m, {dim}), got {X.shape}"
        )
    if not np.all(np.isfinite(X)):
        raise ValidationError("states contain non-finite entries")
    return X


def as_vector(name, x, dim=None):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValidationError(f"{name} must be 1-d, got shape {x.shape}")
    if dim is not None and x.shape[0] != dim:
        raise ValidationError(f"{name} must have length {dim}, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ValidationError(f"{name} contains non-finite entries")
    return x


def positive_scalar(name, value):
    value = float(value)
    if not np.isfinite(value) or value <= 0.0:
        raise ValidationError(f"{name} must be a positive finite number")
    return value


def nonneg_int(name, value):
    ivalue = int(value)
    if ivalue != value or ivalue < 0:
        raise ValidationError(f"{name} must be a nonnegative integer")
    return ivalue
