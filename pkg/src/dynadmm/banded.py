"""Small banded operators for structured Jacobians and Gauss-Newton matrices."""

from __future__ import annotations

import numpy as np
import scipy.linalg

__all__ = ["Tridiagonal", "SymBanded", "as_dense"]


class Tridiagonal:
    """Square tridiagonal matrix; ``sub[q]`` is entry ``(q + 1, q)``, ``sup[q]`` is ``(q, q + 1)``."""

    __slots__ = ("sub", "diag", "sup")

    def __init__(self, sub, diag, sup):
        self.sub = np.asarray(sub, dtype=float)
        self.diag = np.asarray(diag, dtype=float)
        self.sup = np.asarray(sup, dtype=float)

    @property
    def shape(self):
        return (self.diag.size, self.diag.size)

    def dot(self, v):
        out = self.diag * v
        out[:-1] += self.sup * v[1:]
        out[1:] += self.sub * v[:-1]
        return out

    def T_dot(self, v):
        out = self.diag * v
        out[1:] += self.sup * v[:-1]
        out[:-1] += self.sub * v[1:]
        return out

    def gram(self):
        """``J^T J`` as a symmetric matrix of bandwidth 2."""
        a, b, c = self.sub, self.diag, self.sup
        d = b.size
        ab = np.zeros((3, d))
        main = b * b
        main[1:] += c * c
        main[:-1] += a * a
        ab[2] = main
        ab[1, 1:] = b[:-1] * c + a * b[1:]
        ab[0, 2:] = a[:-1] * c[1:]
        return SymBanded(ab)

    def toarray(self):
        return np.diag(self.diag) + np.diag(self.sup, 1) + np.diag(self.sub, -1)


class SymBanded:
    """Symmetric banded matrix in LAPACK upper storage ``ab[u + i - j, j] = a[i, j]``."""

    __slots__ = ("ab",)

    def __init__(self, ab):
        self.ab = ab

    @classmethod
    def from_diagonal(cls, diag, bandwidth):
        diag = np.asarray(diag, dtype=float)
        ab = np.zeros((bandwidth + 1, diag.size))
        ab[-1] = diag
        return cls(ab)

    @property
    def bandwidth(self):
        return self.ab.shape[0] - 1

    def diagonal(self):
        return self.ab[-1].copy()

    def add_scaled(self, other, scale):
        """``self += scale * other`` in place (bandwidths may differ)."""
        u = self.bandwidth
        v = other.bandwidth
        if v > u:
            grown = np.zeros((v + 1, self.ab.shape[1]))
            grown[v - u:] = self.ab
            self.ab = grown
            u = v
        self.ab[u - v:] += scale * other.ab
        return self

    def add_diagonal(self, values):
        self.ab[-1] += values
        return self

    def solve_shifted(self, mu, rhs):
        """Solve ``(A + mu I) x = rhs`` by banded Cholesky."""
        ab = self.ab.copy()
        ab[-1] += mu
        return scipy.linalg.solveh_banded(ab, rhs, check_finite=False)

    def toarray(self):
        u = self.bandwidth
        out = np.diag(self.ab[u])
        for k in range(1, u + 1):
            band = self.ab[u - k, k:]
            out += np.diag(band, k) + np.diag(band, -k)
        return out


def as_dense(J):
    """Dense copy of an ndarray or a banded operator."""
    return J.toarray() if hasattr(J, "toarray") else np.asarray(J, dtype=float)
