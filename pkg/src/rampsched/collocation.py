"""Orthogonal collocation on finite elements with Radau nodes.

Radau points include the right element endpoint, so element-boundary
continuity reduces to sharing the endpoint variable with the next element's
start.  The differentiation matrix expresses state derivatives at the
collocation points from the element's node values; the quadrature weights
integrate polynomials of degree 2K-2 exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as P

_RADAU = {
    2: (1.0 / 3.0, 1.0),
    3: ((4.0 - np.sqrt(6.0)) / 10.0, (4.0 + np.sqrt(6.0)) / 10.0, 1.0),
}


def radau_points(pts: int) -> np.ndarray:
    if pts not in _RADAU:
        raise ValueError("pts must be 2 or 3")
    return np.array(_RADAU[pts])


def _lagrange_coeffs(nodes: np.ndarray, i: int) -> np.ndarray:
    c = np.array([1.0])
    for k, xk in enumerate(nodes):
        if k == i:
            continue
        c = P.polymul(c, np.array([-xk, 1.0]))
        c /= (nodes[i] - xk)
    return c


def diff_matrix(pts: int) -> np.ndarray:
    """D[j, i] = dL_i/dtau at collocation point j, nodes = [0, tau_1..K]."""
    tau = radau_points(pts)
    nodes = np.concatenate([[0.0], tau])
    D = np.empty((pts, pts + 1))
    for i in range(pts + 1):
        dcoef = P.polyder(_lagrange_coeffs(nodes, i))
        for j, tj in enumerate(tau):
            D[j, i] = P.polyval(tj, dcoef)
    return D


def quad_weights(pts: int) -> np.ndarray:
    """Weights over the collocation points with int_0^1 f = sum w_j f(tau_j)."""
    tau = radau_points(pts)
    w = np.empty(pts)
    for j in range(pts):
        c = np.array([1.0])
        for k, xk in enumerate(tau):
            if k == j:
                continue
            c = P.polymul(c, np.array([-xk, 1.0]))
            c /= (tau[j] - xk)
        w[j] = P.polyval(1.0, P.polyint(c)) - P.polyval(0.0, P.polyint(c))
    return w


@dataclass(frozen=True)
class CollocationGrid:
    horizon: float
    elems_per_hour: int
    pts: int

    @property
    def n_elem(self) -> int:
        return int(round(self.horizon * self.elems_per_hour))

    @property
    def h(self) -> float:
        return 1.0 / self.elems_per_hour

    @property
    def tau(self) -> np.ndarray:
        return radau_points(self.pts)

    @property
    def D(self) -> np.ndarray:
        return diff_matrix(self.pts)

    @property
    def weights(self) -> np.ndarray:
        return quad_weights(self.pts)

    @property
    def n_points(self) -> int:
        """Collocation points over the horizon (element starts excluded)."""
        return self.n_elem * self.pts

    def t_point(self, e: int, j: int) -> float:
        """Time of collocation point j (1-based within element e)."""
        return (e + self.tau[j - 1]) * self.h

    def all_times(self) -> np.ndarray:
        """t = 0 plus every collocation point time, increasing."""
        out = [0.0]
        for e in range(self.n_elem):
            for j in range(1, self.pts + 1):
                out.append(self.t_point(e, j))
        return np.array(out)


def collocation_grid(horizon: float, elems_per_hour: int,
                     pts: int) -> CollocationGrid:
    if pts not in (2, 3):
        raise ValueError("pts must be 2 or 3")
    if horizon <= 0 or elems_per_hour <= 0:
        raise ValueError("horizon and elems_per_hour must be positive")
    if abs(round(horizon * elems_per_hour) - horizon * elems_per_hour) > 1e-9:
        raise ValueError("horizon must be a whole number of elements")
    return CollocationGrid(float(horizon), int(elems_per_hour), int(pts))
