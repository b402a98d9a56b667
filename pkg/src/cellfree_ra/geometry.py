"""Hexagonal virtual-cell layout, wraparound metric, user placement and clusters.

All positions are in meters. Hexagons are flat-topped with circumradius
``cell_radius``; adjacent centers sit ``sqrt(3) * cell_radius`` apart.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

SQRT3 = math.sqrt(3.0)
SUPPORTED_Q = (1, 7)


@dataclass(frozen=True)
class NetworkConfig:
    """Physical and simulation parameters of one network scenario.

    Defaults follow the full-scale scenario: 7 virtual cells of radius 500 m,
    10 DUs per CU with 8 antennas each, 200 users/km^2.
    """

    Q: int = 7
    N: int = 10
    M: int = 8
    cell_radius: float = 500.0
    user_density: float = 200.0
    du_exclusion_radius: float = 20.0
    rho: float | None = None
    tau_p: int = 32
    tau_d: int = 200
    p_du_dbm: float = 30.0
    p_user_dbm: float = 20.0
    noise_psd_dbm_hz: float = -174.0
    noise_figure_db: float = 8.0
    bandwidth_hz: float = 180e3
    shadowing_sigma_db: float = 4.0
    traffic_mode: str = "uniform"
    hotspot_prob: float = 0.5
    hotspot_sigma: float = 50.0
    n_hotspots_min: int = 4
    n_hotspots_max: int = 6
    seed: int = 0

    def __post_init__(self):
        for name in ("Q", "N", "M", "tau_p", "tau_d"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("cell_radius", "user_density", "du_exclusion_radius",
                     "bandwidth_hz", "shadowing_sigma_db", "hotspot_sigma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.rho is not None and not self.rho > 0:
            raise ValueError(f"rho must be > 0, got {self.rho}")
        if self.traffic_mode not in ("uniform", "hotspots"):
            raise ValueError(f"traffic_mode must be 'uniform' or 'hotspots', got {self.traffic_mode!r}")
        if not 0.0 <= self.hotspot_prob <= 1.0:
            raise ValueError(f"hotspot_prob must lie in [0, 1], got {self.hotspot_prob}")
        if not 1 <= self.n_hotspots_min <= self.n_hotspots_max:
            raise ValueError("need 1 <= n_hotspots_min <= n_hotspots_max")

    @property
    def p_du(self) -> float:
        """DU power budget in watts."""
        return 10 ** ((self.p_du_dbm - 30.0) / 10.0)

    @property
    def p_user(self) -> float:
        """User pilot power in watts."""
        return 10 ** ((self.p_user_dbm - 30.0) / 10.0)

    @property
    def connection_threshold(self) -> float:
        if self.rho is not None:
            return self.rho
        from .channel import path_loss_linear

        return float(path_loss_linear(0.4))


# ---------------------------------------------------------------------------
# hexagon helpers


def hex_area(radius: float) -> float:
    return 1.5 * SQRT3 * radius**2


def in_hexagon(points, center, radius) -> np.ndarray:
    d = np.atleast_2d(points) - np.asarray(center)
    ax, ay = np.abs(d[:, 0]), np.abs(d[:, 1])
    # small slack so boundary points of adjacent cells count as inside
    tol = 1e-9 * radius
    return (ay <= SQRT3 / 2 * radius + tol) & (SQRT3 * ax + ay <= SQRT3 * radius + tol)


def _rot(v, deg):
    t = math.radians(deg)
    c, s = math.cos(t), math.sin(t)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


def cell_centers(Q: int, radius: float) -> np.ndarray:
    if Q not in SUPPORTED_Q:
        raise ValueError(f"wraparound tiling only available for Q in {SUPPORTED_Q}, got Q={Q}")
    centers = [np.zeros(2)]
    if Q == 7:
        d = SQRT3 * radius
        centers += [_rot(np.array([d, 0.0]), 30 + 60 * k) for k in range(6)]
    return np.array(centers)


def wrap_shifts(Q: int, radius: float) -> np.ndarray:
    """Identity plus the six translations that map the layout onto its images."""
    if Q == 1:
        base = _rot(np.array([SQRT3 * radius, 0.0]), 30)
    elif Q == 7:
        # 2*a1 + a2 in the hexagonal lattice: length sqrt(21) * radius
        base = SQRT3 * radius * np.array([SQRT3, 2.0])
    else:
        raise ValueError(f"wraparound tiling only available for Q in {SUPPORTED_Q}, got Q={Q}")
    return np.vstack([np.zeros(2)] + [_rot(base, 60 * k) for k in range(6)])


def wrap_distance(a, b, wrap) -> np.ndarray:
    """Minimum distance between ``a`` and the images ``b + v`` for v in ``wrap``.

    ``a`` and ``b`` broadcast against each other over their leading axes; the
    last axis holds (x, y).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    diff = a - b
    d = diff[..., None, :] - np.asarray(wrap)
    return np.sqrt(np.min(np.sum(d * d, axis=-1), axis=-1))


def pairwise_wrap_distance(A, B, wrap) -> np.ndarray:
    """(len(A), len(B)) matrix of wraparound distances."""
    A = np.asarray(A, dtype=float).reshape(-1, 2)
    B = np.asarray(B, dtype=float).reshape(-1, 2)
    best = None
    for v in np.asarray(wrap):
        dx = A[:, None, 0] - B[None, :, 0] - v[0]
        dy = A[:, None, 1] - B[None, :, 1] - v[1]
        d2 = dx * dx + dy * dy
        best = d2 if best is None else np.minimum(best, d2)
    return np.sqrt(best)


@dataclass(frozen=True)
class Layout:
    """CU centers and wraparound displacement set for a hexagonal tiling."""

    Q: int
    radius: float
    centers: np.ndarray
    wrap: np.ndarray

    @classmethod
    def hexagonal(cls, Q: int, radius: float) -> "Layout":
        return cls(Q, radius, cell_centers(Q, radius), wrap_shifts(Q, radius))

    @property
    def area_km2(self) -> float:
        return self.Q * hex_area(self.radius) / 1e6

    def contains(self, points) -> np.ndarray:
        points = np.atleast_2d(points)
        inside = np.zeros(len(points), dtype=bool)
        for c in self.centers:
            inside |= in_hexagon(points, c, self.radius)
        return inside

    def cell_of(self, points) -> np.ndarray:
        """Index of the hexagon containing each point (-1 if outside)."""
        points = np.atleast_2d(points)
        idx = np.full(len(points), -1)
        for q, c in enumerate(self.centers):
            idx[(idx < 0) & in_hexagon(points, c, self.radius)] = q
        return idx

    def fold(self, points) -> np.ndarray:
        """Map points onto their image inside the simulated region."""
        pts = np.array(np.atleast_2d(points), dtype=float)
        for _ in range(8):
            out = ~self.contains(pts)
            if not out.any():
                return pts
            cand = pts[out, None, :] - self.wrap[None, 1:, :]
            # pick the shift that brings each point closest to the origin
            k = np.argmin(np.sum(cand**2, axis=-1), axis=1)
            pts[out] = cand[np.arange(len(k)), k]
        if (~self.contains(pts)).any():
            raise ValueError("could not fold points into the simulated region")
        return pts

    def sample_in_cell(self, q: int, n: int, rng) -> np.ndarray:
        c, R = self.centers[q], self.radius
        out = np.empty((0, 2))
        while len(out) < n:
            m = max(2 * (n - len(out)), 8)
            cand = c + rng.uniform([-R, -SQRT3 / 2 * R], [R, SQRT3 / 2 * R], size=(m, 2))
            out = np.vstack([out, cand[in_hexagon(cand, c, R)]])
        return out[:n]

    def sample_uniform(self, n: int, rng) -> np.ndarray:
        cells = rng.integers(0, self.Q, size=n)
        pts = np.empty((n, 2))
        for q in range(self.Q):
            sel = cells == q
            if sel.any():
                pts[sel] = self.sample_in_cell(q, int(sel.sum()), rng)
        return pts

    def grid(self, spacing: float) -> tuple[np.ndarray, float]:
        """Midpoint grid over the region; returns (points, cell area in m^2)."""
        return _region_grid(self.Q, float(self.radius), float(spacing)), spacing**2


@lru_cache(maxsize=16)
def _region_grid(Q: int, radius: float, spacing: float) -> np.ndarray:
    lay = Layout.hexagonal(Q, radius)
    lo = lay.centers.min(axis=0) - radius
    hi = lay.centers.max(axis=0) + radius
    xs = np.arange(lo[0] + spacing / 2, hi[0], spacing)
    ys = np.arange(lo[1] + spacing / 2, hi[1], spacing)
    X, Y = np.meshgrid(xs, ys)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    pts = pts[lay.contains(pts)]
    pts.setflags(write=False)
    return pts


def build_layout(cfg: NetworkConfig, rng) -> tuple[Layout, np.ndarray, np.ndarray]:
    """Hexagon centers, DU positions (N uniform per cell) and owning CU of each DU."""
    layout = Layout.hexagonal(cfg.Q, cfg.cell_radius)
    du_pos = np.vstack([layout.sample_in_cell(q, cfg.N, rng) for q in range(cfg.Q)])
    du_cu = np.repeat(np.arange(cfg.Q), cfg.N)
    return layout, du_pos, du_cu


# ---------------------------------------------------------------------------
# traffic


@dataclass(frozen=True)
class TrafficModel:
    """Uniform/hotspot mixture density over the simulated region (per km^2)."""

    mode: str
    P_h: float
    centers: np.ndarray
    sigma_h: float
    area_km2: float
    f_h: float = 1.0
    wrap: np.ndarray = field(default_factory=lambda: np.zeros((1, 2)))

    @property
    def n_hotspots(self) -> int:
        return len(self.centers)

    def raw_density(self, points) -> np.ndarray:
        points = np.atleast_2d(points)
        uni = np.full(len(points), 1.0 / self.area_km2)
        if self.mode == "uniform" or self.P_h >= 1.0 or self.n_hotspots == 0:
            return uni if self.mode == "uniform" or self.n_hotspots == 0 else self.P_h * uni
        s_km = self.sigma_h / 1e3
        d = pairwise_wrap_distance(points, self.centers, self.wrap) / 1e3
        gauss = np.exp(-(d**2) / (2 * s_km**2)).sum(axis=1) / (self.n_hotspots * 2 * np.pi * s_km**2)
        return self.P_h * uni + (1 - self.P_h) * gauss


def traffic_pdf(traffic: TrafficModel, x, y) -> np.ndarray:
    """Traffic density in users-per-km^2 units (integrates to one over the region)."""
    pts = np.column_stack([np.ravel(x), np.ravel(y)])
    out = traffic.f_h * traffic.raw_density(pts)
    return out.reshape(np.shape(x)) if np.ndim(x) else float(out[0])


def make_traffic(cfg: NetworkConfig, layout: Layout, rng, *, grid_spacing: float = 5.0) -> TrafficModel:
    """Draw hotspot centers and normalize the mixture by grid quadrature."""
    if cfg.traffic_mode == "uniform":
        return TrafficModel("uniform", 1.0, np.zeros((0, 2)), cfg.hotspot_sigma, layout.area_km2,
                            1.0, layout.wrap)
    n_h = int(rng.integers(cfg.n_hotspots_min, cfg.n_hotspots_max + 1))
    centers = layout.sample_uniform(n_h, rng)
    tm = TrafficModel("hotspots", cfg.hotspot_prob, centers, cfg.hotspot_sigma, layout.area_km2,
                      1.0, layout.wrap)
    if tm.P_h >= 1.0:
        return tm
    # uniform part integrates to one exactly; only the Gaussian part needs quadrature
    pts, cell = layout.grid(grid_spacing)
    gauss_only = TrafficModel("hotspots", 0.0, centers, cfg.hotspot_sigma, layout.area_km2, 1.0, layout.wrap)
    g_mass = float(gauss_only.raw_density(pts).sum() * cell / 1e6)
    f_h = 1.0 / (tm.P_h + (1 - tm.P_h) * g_mass)
    return TrafficModel("hotspots", tm.P_h, centers, cfg.hotspot_sigma, layout.area_km2, f_h, layout.wrap)


def sample_users(cfg: NetworkConfig, traffic: TrafficModel, layout: Layout, du_pos, rng,
                 *, max_attempts: int = 10_000) -> np.ndarray:
    """Poisson number of users, i.i.d. positions from the traffic mixture.

    Positions closer than ``cfg.du_exclusion_radius`` to any DU are redrawn.
    """
    n = int(rng.poisson(cfg.user_density * layout.area_km2))
    out = _draw_traffic_points(traffic, layout, n, rng)
    if len(du_pos) == 0:
        return out
    pending = np.arange(n)
    for _ in range(max_attempts):
        bad = pairwise_wrap_distance(out[pending], du_pos, layout.wrap).min(axis=1) < cfg.du_exclusion_radius
        pending = pending[bad]
        if len(pending) == 0:
            return out
        out[pending] = _draw_traffic_points(traffic, layout, len(pending), rng)
    raise RuntimeError(f"could not place {len(pending)} users outside the DU exclusion disks "
                       f"after {max_attempts} attempts")


def _draw_traffic_points(traffic: TrafficModel, layout: Layout, n: int, rng) -> np.ndarray:
    if traffic.mode == "uniform" or traffic.n_hotspots == 0:
        return layout.sample_uniform(n, rng)
    uniform = rng.random(n) < traffic.P_h
    pts = np.empty((n, 2))
    pts[uniform] = layout.sample_uniform(int(uniform.sum()), rng)
    k = int((~uniform).sum())
    if k:
        c = traffic.centers[rng.integers(traffic.n_hotspots, size=k)]
        pts[~uniform] = layout.fold(c + rng.normal(0.0, traffic.sigma_h, size=(k, 2)))
    return pts


# ---------------------------------------------------------------------------
# clusters


@dataclass
class NetworkRealization:
    """Geometry of one network drop plus the user-centric serving sets.

    ``clusters[u]`` is the DU list C_u, ``served[r]`` the user list E_r,
    ``cu_users[q]`` the user list of CU q and ``cluster_in_cell[(q, u)]`` the
    DUs of C_u owned by CU q.
    """

    layout: Layout
    du_positions: np.ndarray
    du_cu: np.ndarray
    user_positions: np.ndarray
    traffic: TrafficModel
    gain: np.ndarray | None = None  # (n_du, n_users) linear shadowing * path loss
    clusters: list = field(default_factory=list)
    served: list = field(default_factory=list)
    cu_users: list = field(default_factory=list)
    cluster_in_cell: dict = field(default_factory=dict)

    @property
    def wrap(self) -> np.ndarray:
        return self.layout.wrap

    @property
    def n_du(self) -> int:
        return len(self.du_positions)

    @property
    def n_users(self) -> int:
        return len(self.user_positions)

    @property
    def Q(self) -> int:
        return self.layout.Q

    def cu_dus(self, q: int) -> np.ndarray:
        return np.flatnonzero(self.du_cu == q)

    def distances(self) -> np.ndarray:
        """(n_du, n_users) wraparound distances in meters."""
        return pairwise_wrap_distance(self.du_positions, self.user_positions, self.wrap)

    def membership(self) -> np.ndarray:
        """(n_du, n_users) boolean matrix, True where r is in C_u."""
        mem = np.zeros((self.n_du, self.n_users), dtype=bool)
        for u, c in enumerate(self.clusters):
            mem[c, u] = True
        return mem


def form_clusters(realization: NetworkRealization, gain, rho: float) -> NetworkRealization:
    """Fill C_u, E_r, the per-CU user sets and the per-(CU, user) DU lists.

    C_u holds every DU whose average gain reaches ``rho`` plus the strongest DU
    (lowest index on ties), so no cluster is empty.
    """
    gain = np.asarray(gain, dtype=float)
    n_du, n_u = gain.shape
    mem = gain >= rho
    if n_u:
        best = np.argmax(gain, axis=0)  # first maximum = lowest DU index
        mem[best, np.arange(n_u)] = True
    realization.gain = gain
    realization.clusters = [np.flatnonzero(mem[:, u]) for u in range(n_u)]
    realization.served = [np.flatnonzero(mem[r]) for r in range(n_du)]
    du_cu = realization.du_cu
    realization.cu_users = []
    realization.cluster_in_cell = {}
    for q in range(realization.Q):
        in_q = mem[du_cu == q].any(axis=0)
        users = np.flatnonzero(in_q)
        realization.cu_users.append(users)
        for u in users:
            c = realization.clusters[u]
            realization.cluster_in_cell[(q, int(u))] = c[du_cu[c] == q]
    return realization


def check_derived_sets(realization: NetworkRealization) -> None:
    """Rebuild E_r, U_q and D_qu from C_u alone and compare; raises on mismatch."""
    n_du = realization.n_du
    served = [[] for _ in range(n_du)]
    for u, c in enumerate(realization.clusters):
        if len(c) == 0:
            raise AssertionError(f"empty cluster for user {u}")
        for r in c:
            served[r].append(u)
    for r in range(n_du):
        if list(realization.served[r]) != served[r]:
            raise AssertionError(f"E_r mismatch at DU {r}")
    for q in range(realization.Q):
        dus = realization.cu_dus(q)
        expect = sorted(set().union(*[set(served[r]) for r in dus])) if len(dus) else []
        if list(realization.cu_users[q]) != expect:
            raise AssertionError(f"U_q mismatch at CU {q}")
        for u in range(realization.n_users):
            d = [r for r in realization.clusters[u] if realization.du_cu[r] == q]
            got = realization.cluster_in_cell.get((q, u))
            if d:
                if got is None or list(got) != d:
                    raise AssertionError(f"D_qu mismatch at ({q}, {u})")
            elif got is not None and len(got):
                raise AssertionError(f"D_qu should be empty at ({q}, {u})")


def realization_to_csv(realization: NetworkRealization, path) -> None:
    """One row per DU and per user: kind, index, cu, x, y."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "index", "cu", "x_m", "y_m", "cluster"])
        for r, (x, y) in enumerate(realization.du_positions):
            w.writerow(["du", r, int(realization.du_cu[r]), repr(float(x)), repr(float(y)), ""])
        for u, (x, y) in enumerate(realization.user_positions):
            c = realization.clusters[u] if realization.clusters else []
            w.writerow(["user", u, "", repr(float(x)), repr(float(y)), " ".join(map(str, c))])
