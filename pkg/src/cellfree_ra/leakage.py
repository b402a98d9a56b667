"""Leakage covariances: the power a node's beams deposit on users it does not serve.

Three interchangeable strategies:

``standard``
    Sum of ``h_hat h_hat^H + Theta`` over nearby outside users (needs their CSI).
``statistical``
    Sum of the outside users' large-scale gains times the identity.
``traffic``
    Expected leakage under the traffic density, integrated over an annulus
    around the DU. Independent of the instantaneous user drop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import LocalCsi, inverse_path_loss_km, path_loss_linear
from .geometry import NetworkRealization, pairwise_wrap_distance, traffic_pdf

METHODS = ("standard", "statistical", "traffic")


@dataclass(frozen=True)
class LeakageMethod:
    """Strategy tag plus the integration parameters (meters).

    ``inner_radius=None`` places the inner edge of the integration annulus at
    the distance where the path loss equals the connection threshold.
    """

    kind: str = "standard"
    outer_radius: float = 1000.0
    inner_radius: float | None = None
    exclusion: float = 20.0
    grid: float = 10.0

    def __post_init__(self):
        if self.kind not in METHODS:
            raise ValueError(f"leakage method must be one of {METHODS}, got {self.kind!r}")
        if self.exclusion < 20.0:
            raise ValueError("integration exclusion distance must be at least 20 m")
        if not self.outer_radius > 0 or not self.grid > 0:
            raise ValueError("outer_radius and grid must be positive")
        if self.inner_radius is not None and not 0 <= self.inner_radius < self.outer_radius:
            raise ValueError("need 0 <= inner_radius < outer_radius")

    def resolved_inner(self, rho: float) -> float:
        if self.inner_radius is not None:
            return self.inner_radius
        return min(1e3 * inverse_path_loss_km(rho), self.outer_radius)


def traffic_integral(traffic, layout, dus_xy, inner: float, outer: float, exclusion: float,
                     grid: float, region_points=None):
    """Per-DU scalar sum of path loss weighted by the traffic density.

    The integration set is every grid point whose distance to the *closest*
    DU in ``dus_xy`` lies in ``[inner, outer]``; the integrand for DU ``r``
    is ``beta(d_r + exclusion) * pdf``. Returns an array (len(dus_xy),) of
    per-user expected gains (multiply by the user count for the total).
    """
    if region_points is None:
        pts, cell = layout.grid(grid)
    else:
        pts, cell = region_points, grid**2
    dus_xy = np.atleast_2d(dus_xy)
    d = pairwise_wrap_distance(dus_xy, pts, layout.wrap)  # (n_du, n_pts)
    dmin = d.min(axis=0)
    sel = (dmin >= inner) & (dmin <= outer)
    if not sel.any():
        return np.zeros(len(dus_xy))
    pdf = traffic_pdf(traffic, pts[sel, 0], pts[sel, 1])  # 1/km^2
    beta = path_loss_linear((d[:, sel] + exclusion) / 1e3)
    return beta @ pdf * (cell / 1e6)


class LeakageContext:
    """Per-realization leakage builder shared by all nodes.

    Geometry-dependent pieces (outside-user neighborhoods, traffic integrals)
    are computed once; CSI enters through a node's ``LocalCsi`` view.
    """

    def __init__(self, realization: NetworkRealization, method: LeakageMethod, *, noise: float,
                 rho: float, user_density: float):
        self.realization = realization
        self.method = method
        self.noise = noise
        self.rho = rho
        self.user_density = user_density
        self._dist = realization.distances()
        self.near = self._dist <= method.outer_radius
        self._served = realization.membership()
        self._traffic_du: np.ndarray | None = None
        self._traffic_cu: dict = {}

    # -- neighborhoods -------------------------------------------------

    def outside_users_du(self, r: int) -> np.ndarray:
        """Users not served by DU ``r`` that lie inside its leakage disk."""
        return np.flatnonzero(self.near[r] & ~self._served[r])

    def outside_users_cu(self, q: int) -> np.ndarray:
        """Users outside the CU's user set lying inside some member DU's disk."""
        dus = self.realization.cu_dus(q)
        mask = self.near[dus].any(axis=0) & ~self._served[dus].any(axis=0)
        return np.flatnonzero(mask)

    def estimates_needed(self, per_cu: bool = False) -> np.ndarray:
        """(n_du, n_users) mask of pairs whose estimates must exist at the DU.

        With ``per_cu`` every DU also estimates every user of its CU, since
        the CU accounts for the interference its DUs cause to those users.
        """
        need = self._served.copy()
        if per_cu:
            real = self.realization
            for q in range(real.Q):
                need[np.ix_(real.cu_dus(q), real.cu_users[q])] = True
        if self.method.kind == "standard":
            need |= self.near
        return need

    # -- traffic integrals ---------------------------------------------

    def _expected_users(self) -> float:
        return self.user_density * self.realization.layout.area_km2

    def traffic_scalar_du(self) -> np.ndarray:
        if self._traffic_du is None:
            m = self.method
            inner = m.resolved_inner(self.rho)
            real = self.realization
            out = np.array([
                traffic_integral(real.traffic, real.layout, real.du_positions[r], inner,
                                 m.outer_radius, m.exclusion, m.grid)[0]
                for r in range(real.n_du)
            ])
            self._traffic_du = out * self._expected_users() / self.noise
        return self._traffic_du

    def traffic_scalar_cu(self, q: int) -> np.ndarray:
        if q not in self._traffic_cu:
            m = self.method
            real = self.realization
            dus = real.cu_dus(q)
            vals = traffic_integral(real.traffic, real.layout, real.du_positions[dus],
                                    m.resolved_inner(self.rho), m.outer_radius, m.exclusion, m.grid)
            self._traffic_cu[q] = vals * self._expected_users() / self.noise
        return self._traffic_cu[q]

    # -- covariances ---------------------------------------------------

    def du(self, r: int, csi: LocalCsi) -> np.ndarray:
        """M x M leakage covariance of DU ``r``."""
        M = csi.M
        kind = self.method.kind
        if kind == "traffic":
            return self.traffic_scalar_du()[r] * np.eye(M)
        users = self.outside_users_du(r)
        if kind == "statistical":
            return float(csi.gain(r, users).sum()) * np.eye(M)
        return standard_covariance(csi.h_hat(r, users), csi.theta(r, users))

    def cu(self, q: int, csi: LocalCsi) -> np.ndarray:
        """(n*M) x (n*M) leakage covariance of CU ``q`` (DUs in ascending order)."""
        dus = self.realization.cu_dus(q)
        M = csi.M
        kind = self.method.kind
        if kind == "traffic":
            return np.kron(np.diag(self.traffic_scalar_cu(q)), np.eye(M))
        users = self.outside_users_cu(q)
        if kind == "statistical":
            diag = [float(csi.gain(r, users).sum()) for r in dus]
            return np.kron(np.diag(diag), np.eye(M))
        n = len(dus)
        H = np.zeros((len(users), n * M), dtype=complex)
        theta = np.zeros(n * M)
        for k, r in enumerate(dus):
            have = csi.has_estimate(r, users)
            sub = users[have]
            H[have, k * M:(k + 1) * M] = csi.h_hat(r, sub)
            theta[k * M:(k + 1) * M] = csi.theta(r, sub).sum()
        return H.T @ H.conj() + np.diag(theta)


def standard_covariance(h_hat: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """``sum_u h_u h_u^H + theta_u I`` for rows ``h_hat[u]``."""
    h_hat = np.atleast_2d(h_hat)
    M = h_hat.shape[1]
    return h_hat.T @ h_hat.conj() + float(np.sum(theta)) * np.eye(M)
