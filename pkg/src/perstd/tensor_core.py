"""Dense third-order tensor algebra.

Tensors are numpy float arrays of shape (n1, n2, n3); matrices are 2-d
arrays.  Modes are numbered 1, 2, 3.  The mode-m unfolding of a tensor is
the (prod of other dims) x n_m matrix whose column i_m stacks the entries
of the slice t[..., i_m, ...] with the lower-numbered remaining mode
varying fastest.  Under this convention the unfoldings of a rank-R tensor
with factor matrices (A, B, C) are

    unfold(t, 1) == khatri_rao(C, B) @ A.T
    unfold(t, 2) == khatri_rao(C, A) @ B.T
    unfold(t, 3) == khatri_rao(B, A) @ C.T

and mode products satisfy unfold(mode_product(t, M, m), m) ==
unfold(t, m) @ M.T.

Text interchange format: a tensor file starts with a header line
``T3 n1 n2 n3`` followed by n1*n2*n3 whitespace-separated values with the
first mode varying fastest; a matrix file starts with ``M rows cols``
followed by row-major values.  Writers emit 17 significant digits so
float64 values round-trip exactly.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

MODES = (1, 2, 3)


def _as_tensor(t):
    t = np.asarray(t, dtype=float)
    if t.ndim != 3:
        raise ValueError(f"expected a third-order tensor, got ndim={t.ndim}")
    return t


def _as_matrix(m):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise ValueError(f"expected a matrix, got ndim={m.ndim}")
    return m


def _check_mode(mode):
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def unfold(t, mode):
    """Matricize a tensor along one mode.

    Parameters
    ----------
    t : ndarray, shape (n1, n2, n3)
    mode : int
        Mode to unfold along, 1-based.

    Returns
    -------
    ndarray, shape (prod of remaining dims, n_mode)
        Column i holds slice i of the given mode, lower-numbered
        remaining mode varying fastest.
    """
    t = _as_tensor(t)
    _check_mode(mode)
    axis = mode - 1
    rest = [ax for ax in range(3) if ax != axis]
    moved = np.transpose(t, rest + [axis])
    return moved.reshape(-1, t.shape[axis], order="F")


def fold(m, mode, dims):
    """Inverse of :func:`unfold`: rebuild a tensor from its mode unfolding.

    ``dims`` is the full (n1, n2, n3) of the target tensor; the unfolding
    must have shape (prod of the other two dims, dims[mode-1]).
    """
    m = _as_matrix(m)
    _check_mode(mode)
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3:
        raise ValueError(f"dims must have length 3, got {dims}")
    axis = mode - 1
    rest = [ax for ax in range(3) if ax != axis]
    expect = (dims[rest[0]] * dims[rest[1]], dims[axis])
    if m.shape != expect:
        raise ValueError(
            f"unfolding shape {m.shape} does not match dims {dims} for mode {mode}"
        )
    moved = m.reshape(dims[rest[0]], dims[rest[1]], dims[axis], order="F")
    inverse = np.argsort(rest + [axis])
    return np.transpose(moved, inverse)


def mode_product(t, b, mode):
    """Multiply a tensor by a matrix along one mode.

    Result dim along ``mode`` is b.shape[0]; requires b.shape[1] equal to
    the tensor dim along ``mode``.
    """
    t = _as_tensor(t)
    b = _as_matrix(b)
    _check_mode(mode)
    axis = mode - 1
    if b.shape[1] != t.shape[axis]:
        raise ValueError(
            f"matrix has {b.shape[1]} columns, tensor mode {mode} has size {t.shape[axis]}"
        )
    out = np.tensordot(t, b, axes=([axis], [1]))
    # tensordot appends the new axis last; move it back into place
    return np.moveaxis(out, 2, axis)


def multilinear_product(t, mats):
    """Apply one matrix per mode: t x1 mats[0] x2 mats[1] x3 mats[2]."""
    if len(mats) != 3:
        raise ValueError(f"expected three matrices, got {len(mats)}")
    out = _as_tensor(t)
    for mode, b in zip(MODES, mats):
        out = mode_product(out, b, mode)
    return out


def khatri_rao(a, b):
    """Column-wise Khatri-Rao product.

    Column r of the result is kron(a[:, r], b[:, r]), so the row index of
    ``b`` varies fastest.  Shapes (I, R) and (J, R) give (I*J, R).
    """
    a = _as_matrix(a)
    b = _as_matrix(b)
    if a.shape[1] != b.shape[1]:
        raise ValueError(
            f"column counts differ: {a.shape[1]} vs {b.shape[1]}"
        )
    return (a[:, None, :] * b[None, :, :]).reshape(a.shape[0] * b.shape[0], a.shape[1])


def cp_tensor(a, b, c):
    """Evaluate the rank-R tensor with factor matrices (a, b, c).

    Factors may have zero columns, in which case the result is the zero
    tensor of shape (a rows, b rows, c rows).
    """
    a = _as_matrix(a)
    b = _as_matrix(b)
    c = _as_matrix(c)
    if not (a.shape[1] == b.shape[1] == c.shape[1]):
        raise ValueError(
            f"factor column counts differ: {a.shape[1]}, {b.shape[1]}, {c.shape[1]}"
        )
    return np.einsum("ir,jr,kr->ijk", a, b, c)


@dataclass(frozen=True)
class CpdFactors:
    """Factor matrices of a third-order CP decomposition.

    All three matrices must share the same number of columns (the rank),
    at least one.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a", _as_matrix(self.a))
        object.__setattr__(self, "b", _as_matrix(self.b))
        object.__setattr__(self, "c", _as_matrix(self.c))
        if not (self.a.shape[1] == self.b.shape[1] == self.c.shape[1]):
            raise ValueError(
                "factor column counts differ: "
                f"{self.a.shape[1]}, {self.b.shape[1]}, {self.c.shape[1]}"
            )
        if self.a.shape[1] < 1:
            raise ValueError("rank must be at least 1")

    @property
    def rank(self):
        return self.a.shape[1]

    @property
    def dims(self):
        return (self.a.shape[0], self.b.shape[0], self.c.shape[0])

    def matrices(self):
        return (self.a, self.b, self.c)

    def reconstruct(self):
        return cp_tensor(self.a, self.b, self.c)


def cp_reconstruct(factors):
    """Dense tensor represented by a :class:`CpdFactors`."""
    return cp_tensor(factors.a, factors.b, factors.c)


def _format_values(values):
    return "\n".join("%.17g" % v for v in values)


def write_tensor(path, t):
    """Write a tensor in the ``T3`` text format (first mode fastest)."""
    t = _as_tensor(t)
    n1, n2, n3 = t.shape
    body = _format_values(t.reshape(-1, order="F"))
    with open(path, "w") as fh:
        fh.write(f"T3 {n1} {n2} {n3}\n{body}\n")


def read_tensor(path):
    """Read a tensor written by :func:`write_tensor`."""
    with open(path) as fh:
        tokens = fh.read().split()
    if len(tokens) < 4 or tokens[0] != "T3":
        raise ValueError(f"{os.fspath(path)}: not a T3 tensor file")
    try:
        dims = tuple(int(v) for v in tokens[1:4])
    except ValueError:
        raise ValueError(f"{os.fspath(path)}: malformed T3 header") from None
    if any(d < 1 for d in dims):
        raise ValueError(f"{os.fspath(path)}: non-positive dims {dims}")
    count = dims[0] * dims[1] * dims[2]
    if len(tokens) - 4 != count:
        raise ValueError(
            f"{os.fspath(path)}: expected {count} values, found {len(tokens) - 4}"
        )
    values = np.array([float(v) for v in tokens[4:]])
    return values.reshape(dims, order="F")


def write_matrix(path, m):
    """Write a matrix in the ``M`` text format (row-major)."""
    m = _as_matrix(m)
    body = _format_values(m.reshape(-1, order="C"))
    with open(path, "w") as fh:
        fh.write(f"M {m.shape[0]} {m.shape[1]}\n{body}\n")


def read_matrix(path):
    """Read a matrix written by :func:`write_matrix`."""
    with open(path) as fh:
        tokens = fh.read().split()
    if len(tokens) < 3 or tokens[0] != "M":
        raise ValueError(f"{os.fspath(path)}: not an M matrix file")
    try:
        rows, cols = int(tokens[1]), int(tokens[2])
    except ValueError:
        raise ValueError(f"{os.fspath(path)}: malformed M header") from None
    if rows < 1 or cols < 1:
        raise ValueError(f"{os.fspath(path)}: non-positive shape ({rows}, {cols})")
    if len(tokens) - 3 != rows * cols:
        raise ValueError(
            f"{os.fspath(path)}: expected {rows * cols} values, found {len(tokens) - 3}"
        )
    values = np.array([float(v) for v in tokens[3:]])
    return values.reshape(rows, cols, order="C")
