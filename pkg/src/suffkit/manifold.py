"""Target manifolds ``phi(x_f) = 0`` with first and second derivatives."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from suffkit.dynamics import N_STATE


class ManifoldDegeneracyError(ValueError):
    """The constraint gradient is rank deficient."""


@dataclass(frozen=True)
class TargetManifold:
    """Constraint ``phi: R^n -> R^s`` with gradient (s x n) and Hessians (s x n x n)."""

    s: int
    phi: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    hessians: Callable[[np.ndarray], np.ndarray]
    chart: str = "meoe"
    affine: bool = False
    name: str = "custom"

    def __post_init__(self):
        if not 0 < self.s <= N_STATE:
            raise ValueError(f"constraint count must be in 1..{N_STATE}, got {self.s}")

    @property
    def n(self) -> int:
        return N_STATE

    def tangent(self, x_f) -> np.ndarray:
        return tangent_basis(self, x_f)


def gram_schmidt_complement(rows: np.ndarray, n: int = N_STATE, tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis (as columns) of the orthogonal complement of ``rows``.

    The coordinate vectors e_1..e_n are orthogonalized against the rows and
    against each other; those with the largest residuals are kept, in index
    order, so that e.g. the complement of e_1 is (e_2, ..., e_n).
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    q = []
    for r in rows:
        v = r.copy()
        for _ in range(2):
            for u in q:
                v -= (u @ v) * u
        nv = np.linalg.norm(v)
        if nv <= tol * max(1.0, np.linalg.norm(r)):
            raise ManifoldDegeneracyError("constraint rows are linearly dependent")
        q.append(v / nv)
    k = n - len(q)
    if k == 0:
        return np.zeros((n, 0))
    qm = np.array(q)
    resid = np.eye(n) - qm.T @ (qm @ np.eye(n))
    norms = np.linalg.norm(resid, axis=0)
    keep = sorted(np.argsort(-norms, kind="stable")[:k])
    basis = list(q)
    out = []
    for j in keep:
        v = np.eye(n)[j]
        for _ in range(2):
            for u in basis:
                v = v - (u @ v) * u
        v /= np.linalg.norm(v)
        basis.append(v)
        out.append(v)
    return np.column_stack(out)


def tangent_basis(mfd: TargetManifold, x_f) -> np.ndarray:
    """Orthonormal n x (n - s) basis of ker grad(phi)(x_f)."""
    g = np.atleast_2d(mfd.grad(np.asarray(x_f, dtype=float)))
    if np.linalg.matrix_rank(g) < mfd.s:
        raise ManifoldDegeneracyError("constraint gradient is rank deficient at the final point")
    return gram_schmidt_complement(g, mfd.n)


def affine_target(a, b, chart: str = "meoe", name: str = "affine") -> TargetManifold:
    """``phi(x) = a x - b`` with zero Hessians."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    s = a.shape[0]
    if a.shape[1] != N_STATE or b.shape != (s,):
        raise ValueError("affine target needs an s x 7 matrix and an s-vector")
    if np.linalg.matrix_rank(a) < s:
        raise ManifoldDegeneracyError("affine constraint matrix is rank deficient")
    zeros = np.zeros((s, N_STATE, N_STATE))
    return TargetManifold(
        s=s,
        phi=lambda x: a @ np.asarray(x, dtype=float) - b,
        grad=lambda x: a.copy(),
        hessians=lambda x: zeros.copy(),
        chart=chart,
        affine=True,
        name=name,
    )


def meoe_target(P: float, ex: float, ey: float, hx: float, hy: float, l_f: float) -> TargetManifold:
    """Fix the final orbit and true longitude, leave the final mass free."""
    a = np.hstack([np.eye(6), np.zeros((6, 1))])
    return affine_target(a, [P, ex, ey, hx, hy, l_f], chart="meoe", name="meoe_orbit")


def fixed_endpoint_target(x_f, chart: str = "meoe") -> TargetManifold:
    """``phi(x) = x - x_f`` (s = n)."""
    return affine_target(np.eye(N_STATE), np.asarray(x_f, dtype=float), chart=chart, name="fixed_endpoint")
