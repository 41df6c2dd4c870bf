"""One-dimensional multiquadric RBF interpolation with exact derivatives."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg

from .errors import IllConditionedError

CONDITION_WARN = 1e12
_CONDITION_FAIL = 1e16


def _check_shape(shape):
    if not shape > 0:
        raise ValueError(f"shape parameter must be positive, got {shape}")


def multiquadric(r, shape):
    """phi(r) = sqrt(1 + r^2 / shape^2)."""
    _check_shape(shape)
    r = np.asarray(r, dtype=float)
    return np.sqrt(1.0 + (r / shape) ** 2)


def multiquadric_d1(d, shape):
    """d/dx phi(|x - c|) at signed displacement d = x - c."""
    _check_shape(shape)
    d = np.asarray(d, dtype=float)
    return d / (shape * shape * np.sqrt(1.0 + (d / shape) ** 2))


def multiquadric_d2(d, shape):
    """d^2/dx^2 phi(|x - c|) at signed displacement d = x - c."""
    _check_shape(shape)
    d = np.asarray(d, dtype=float)
    return 1.0 / (shape * shape * np.sqrt(1.0 + (d / shape) ** 2) ** 3)


class NodeSet:
    """Centers plus a factored Gram matrix, shared by every fit on the same nodes.

    The solver fits two data vectors per time step on one node set, so the
    LU factorization and the derivative collocation matrices are built once.
    Multiquadric Gram matrices are not positive definite; LU with partial
    pivoting is used rather than Cholesky.
    """

    def __init__(self, centers, shape):
        _check_shape(shape)
        centers = np.asarray(centers, dtype=float).ravel()
        if centers.size == 0:
            raise ValueError("need at least one center")
        if centers.size > 1 and np.any(np.diff(centers) <= 0):
            raise ValueError("centers must be strictly increasing")
        centers.setflags(write=False)
        self.centers = centers
        self.shape = float(shape)
        self.gram = multiquadric(centers[:, None] - centers[None, :], self.shape)
        self.condition = float(np.linalg.cond(self.gram))
        if not np.isfinite(self.condition) or self.condition > _CONDITION_FAIL:
            raise IllConditionedError(
                f"Gram matrix numerically singular (condition {self.condition:.3g})", self.condition
            )
        if self.condition > CONDITION_WARN:
            warnings.warn(f"RBF Gram condition number {self.condition:.3g} exceeds {CONDITION_WARN:g}")
        self._lu = scipy.linalg.lu_factor(self.gram)

    def __len__(self):
        return self.centers.size

    @cached_property
    def d1_matrix(self) -> np.ndarray:
        """Row i maps weights to the first derivative at center i."""
        return multiquadric_d1(self.centers[:, None] - self.centers[None, :], self.shape)

    @cached_property
    def d2_matrix(self) -> np.ndarray:
        return multiquadric_d2(self.centers[:, None] - self.centers[None, :], self.shape)

    def solve(self, values) -> np.ndarray:
        """Interpolation weights for one vector (N,) or many columns (N, k)."""
        y = np.asarray(values, dtype=float)
        if y.shape[0] != len(self):
            raise ValueError(f"expected {len(self)} values, got {y.shape[0]}")
        if not np.all(np.isfinite(y)):
            raise ValueError("values must be finite")
        xi = scipy.linalg.lu_solve(self._lu, y)
        tol = 1e-8 * (1.0 + np.abs(y).max(initial=0.0))
        resid = y - self.gram @ xi
        if np.abs(resid).max(initial=0.0) > tol:
            xi = xi + scipy.linalg.lu_solve(self._lu, resid)
            resid = y - self.gram @ xi
            if np.abs(resid).max(initial=0.0) > tol:
                raise IllConditionedError(
                    f"interpolation residual {np.abs(resid).max():.3g} exceeds tolerance", self.condition
                )
        return xi

    def fit(self, values) -> "Interpolant":
        return Interpolant(self.centers, self.solve(values), self.shape)


@dataclass(frozen=True, eq=False)
class Interpolant:
    """I(x) = sum_i weights[i] * phi(|x - centers[i]|)."""

    centers: np.ndarray
    weights: np.ndarray
    shape: float

    def _disp(self, x):
        x = np.asarray(x, dtype=float)
        return x[..., None] - self.centers

    def _out(self, x, vals):
        return float(vals) if np.ndim(x) == 0 else vals

    def __call__(self, x):
        return self._out(x, multiquadric(self._disp(x), self.shape) @ self.weights)

    def d1(self, x):
        return self._out(x, multiquadric_d1(self._disp(x), self.shape) @ self.weights)

    def d2(self, x):
        return self._out(x, multiquadric_d2(self._disp(x), self.shape) @ self.weights)

    def derivatives(self, x):
        """Value, first and second derivative in one pass over the distances."""
        d = self._disp(x)
        s2 = self.shape * self.shape
        phi = np.sqrt(1.0 + d * d / s2)
        v = phi @ self.weights
        g = (d / (s2 * phi)) @ self.weights
        h = (1.0 / (s2 * phi**3)) @ self.weights
        return v, g, h


def fit(centers, values, shape) -> Interpolant:
    return NodeSet(centers, shape).fit(values)


def eval(interp: Interpolant, x):  # noqa: A001 - mirrors the operation name
    return interp(x)


def eval_d1(interp: Interpolant, x):
    return interp.d1(x)


def eval_d2(interp: Interpolant, x):
    return interp.d2(x)
