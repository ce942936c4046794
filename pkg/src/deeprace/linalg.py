"""Dense linear algebra and elementwise nonlinearities for the network code.

Matrices are 2-D float64 numpy arrays (row-major), vectors are 1-D float64
arrays.  Everything here is a pure function; inputs are never mutated.
"""

from __future__ import annotations

import numpy as np

Matrix = np.ndarray  # 2-D, float64, row-major
Vector = np.ndarray  # 1-D, float64


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def as_matrix(a, rows: int | None = None, cols: int | None = None) -> Matrix:
    """Coerce to a 2-D float64 array, optionally checking the shape."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={m.ndim}")
    if rows is not None and m.shape[0] != rows:
        raise ShapeError(f"expected {rows} rows, got {m.shape[0]}")
    if cols is not None and m.shape[1] != cols:
        raise ShapeError(f"expected {cols} cols, got {m.shape[1]}")
    return m


def as_vector(a, length: int | None = None) -> Vector:
    """Coerce to a 1-D float64 array, optionally checking the length."""
    v = np.asarray(a, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"expected a 1-D vector, got ndim={v.ndim}")
    if length is not None and v.shape[0] != length:
        raise ShapeError(f"expected length {length}, got {v.shape[0]}")
    return v


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product a @ b with an explicit shape check."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def hadamard(a: Vector, b: Vector) -> Vector:
    """Elementwise product of two equal-length vectors."""
    a = as_vector(a)
    b = as_vector(b)
    if a.shape != b.shape:
        raise ShapeError(f"hadamard length mismatch: {a.shape} vs {b.shape}")
    return a * b


def add(a: Vector, b: Vector) -> Vector:
    """Elementwise sum of two equal-length vectors."""
    a = as_vector(a)
    b = as_vector(b)
    if a.shape != b.shape:
        raise ShapeError(f"add length mismatch: {a.shape} vs {b.shape}")
    return a + b


def concat(a: Vector, b: Vector) -> Vector:
    """Concatenation [a, b]."""
    return np.concatenate([as_vector(a), as_vector(b)])


def scale(a, s: float):
    """Scalar multiple of a vector or matrix."""
    return np.asarray(a, dtype=np.float64) * float(s)


def sigmoid(x):
    """Numerically stable logistic function, elementwise.

    Uses 1/(1+e^-x) for x >= 0 and e^x/(1+e^x) for x < 0 so the
    exponential never overflows; saturates cleanly at 0 and 1.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh_elem(x):
    """Elementwise hyperbolic tangent."""
    return np.tanh(np.asarray(x, dtype=np.float64))
