"""Large-scale fading, pilot grouping and LMMSE channel estimation.

Channel quantities handed to the solvers are noise-normalized: every gain is
divided by the downlink noise power, so receivers see unit-variance noise and
the DU power budget stays in watts.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import NetworkConfig, NetworkRealization, pairwise_wrap_distance


def path_loss_db(d_km):
    """Path loss in dB at distance ``d_km`` (km)."""
    d = np.asarray(d_km, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    out = -112.4271 - 38.0 * np.log10(d)
    return float(out) if out.ndim == 0 else out


def path_loss_linear(d_km):
    return 10.0 ** (np.asarray(path_loss_db(d_km)) / 10.0)


def inverse_path_loss_km(gain_linear: float) -> float:
    """Distance (km) at which the path loss equals ``gain_linear``."""
    return 10.0 ** ((-112.4271 - 10.0 * math.log10(gain_linear)) / 38.0)


def noise_power_dbm(cfg: NetworkConfig) -> float:
    return cfg.noise_psd_dbm_hz + 10.0 * math.log10(cfg.bandwidth_hz) + cfg.noise_figure_db


def noise_power(cfg: NetworkConfig) -> float:
    """Receiver noise power in watts."""
    return 10.0 ** ((noise_power_dbm(cfg) - 30.0) / 10.0)


def draw_shadowing(rng, shape, sigma_db: float) -> np.ndarray:
    """i.i.d. lognormal shadowing factors (linear)."""
    return 10.0 ** (rng.normal(0.0, sigma_db, size=shape) / 10.0)


@dataclass(frozen=True)
class LargeScaleFading:
    """Per-(DU, user) path loss, shadowing and their product, all linear."""

    beta: np.ndarray
    psi: np.ndarray

    @property
    def gain(self) -> np.ndarray:
        return self.psi * self.beta

    @classmethod
    def draw(cls, realization: NetworkRealization, cfg: NetworkConfig, rng) -> "LargeScaleFading":
        d = realization.distances()
        beta = path_loss_linear(np.maximum(d, 1e-3) / 1e3)
        psi = draw_shadowing(rng, d.shape, cfg.shadowing_sigma_db)
        return cls(beta, psi)

    def to_csv(self, path) -> None:
        n_du, n_u = self.beta.shape
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["du", "user", "path_loss", "shadowing", "gain"])
            for r in range(n_du):
                for u in range(n_u):
                    w.writerow([r, u, repr(float(self.beta[r, u])), repr(float(self.psi[r, u])),
                                repr(float(self.beta[r, u] * self.psi[r, u]))])


# ---------------------------------------------------------------------------
# pilots


@dataclass(frozen=True)
class PilotPlan:
    groups: list
    pilot_of: np.ndarray
    tau_p: int

    @property
    def n_users(self) -> int:
        return len(self.pilot_of)

    def copilots(self, u: int) -> np.ndarray:
        """Users sharing the pilot of ``u`` (``u`` included)."""
        return np.flatnonzero(self.pilot_of == self.pilot_of[u])

    def copilot_matrix(self) -> np.ndarray:
        return self.pilot_of[:, None] == self.pilot_of[None, :]

    def sequences(self) -> np.ndarray:
        """(n_users, tau_p) rows of the unitary DFT basis."""
        basis = np.fft.fft(np.eye(self.tau_p)) / math.sqrt(self.tau_p)
        return basis[self.pilot_of]


def constrained_complete_linkage(dist: np.ndarray, max_size: int) -> list:
    """Agglomerate with complete linkage, never letting a group exceed ``max_size``.

    Merging stops once no pair of groups can be joined legally. Groups come back
    as sorted index arrays, ordered by their smallest member.
    """
    n = len(dist)
    if n == 0:
        return []
    D = np.array(dist, dtype=float, copy=True)
    np.fill_diagonal(D, np.inf)
    size = np.ones(n, dtype=int)
    members = [[i] for i in range(n)]
    alive = np.ones(n, dtype=bool)
    if max_size < 2:
        D[:] = np.inf
    while True:
        flat = int(np.argmin(D))
        i, j = divmod(flat, n)
        if not np.isfinite(D[i, j]):
            break
        if i > j:
            i, j = j, i
        members[i] += members[j]
        members[j] = []
        size[i] += size[j]
        alive[j] = False
        D[i, :] = np.maximum(D[i, :], D[j, :])
        D[:, i] = D[i, :]
        D[j, :] = np.inf
        D[:, j] = np.inf
        D[i, i] = np.inf
        too_big = size[i] + size > max_size
        D[i, too_big] = np.inf
        D[too_big, i] = np.inf
    groups = [np.array(sorted(m)) for m, a in zip(members, alive) if a]
    groups.sort(key=lambda g: g[0])
    return groups


def assign_pilots_hac(user_positions, tau_p: int, rng, wrap=None) -> PilotPlan:
    """Group users into compact sets of at most ``tau_p`` and give each group
    a random permutation of the orthogonal pilots."""
    pts = np.asarray(user_positions, dtype=float).reshape(-1, 2)
    wrap = np.zeros((1, 2)) if wrap is None else wrap
    groups = constrained_complete_linkage(pairwise_wrap_distance(pts, pts, wrap), tau_p)
    pilot_of = np.empty(len(pts), dtype=int)
    for g in groups:
        pilot_of[g] = rng.permutation(tau_p)[: len(g)]
    return PilotPlan(groups, pilot_of, tau_p)


# ---------------------------------------------------------------------------
# estimation


@dataclass(frozen=True)
class TrueChannels:
    """Actual small-scale-faded channels; used only to score achieved SINR."""

    h: np.ndarray  # (n_du, n_users, M), noise-normalized


@dataclass
class ChannelEstimates:
    """LMMSE estimates and their per-pair scalar covariances.

    Covariances are multiples of the identity, so ``psi[r, u]`` and
    ``theta[r, u]`` stand for ``psi[r, u] * I_M``. ``available[r, u]`` marks
    pairs for which DU ``r`` holds an estimate.
    """

    h_hat: np.ndarray
    psi: np.ndarray
    theta: np.ndarray
    D: np.ndarray
    available: np.ndarray

    @property
    def M(self) -> int:
        return self.h_hat.shape[2]

    def restrict(self, mask) -> "ChannelEstimates":
        """Copy holding estimates only where ``mask`` is True."""
        mask = np.asarray(mask, dtype=bool) & self.available
        return ChannelEstimates(np.where(mask[:, :, None], self.h_hat, 0.0), self.psi, self.theta,
                                self.D, mask)

    def view(self, dus) -> "LocalCsi":
        return LocalCsi(self, dus)


class LocalCsi:
    """Read access to the CSI held at a set of DUs; any other DU raises."""

    def __init__(self, est: ChannelEstimates, dus):
        self._est = est
        self.dus = frozenset(int(r) for r in np.atleast_1d(dus))
        self.touched: set = set()

    def _check(self, r: int) -> int:
        r = int(r)
        if r not in self.dus:
            raise PermissionError(f"DU {r} is outside this node's local view")
        self.touched.add(r)
        return r

    @property
    def M(self) -> int:
        return self._est.M

    def h_hat(self, r, users) -> np.ndarray:
        r = self._check(r)
        users = np.asarray(users, dtype=int)
        if not self._est.available[r, users].all():
            missing = users[~self._est.available[r, users]]
            raise LookupError(f"DU {r} holds no estimate for users {missing.tolist()}")
        return self._est.h_hat[r, users]

    def theta(self, r, users) -> np.ndarray:
        r = self._check(r)
        return self._est.theta[r, np.asarray(users, dtype=int)]

    def gain(self, r, users) -> np.ndarray:
        r = self._check(r)
        return self._est.D[r, np.asarray(users, dtype=int)]

    def has_estimate(self, r, users) -> np.ndarray:
        r = self._check(r)
        return self._est.available[r, np.asarray(users, dtype=int)]


def estimate_statistics(D: np.ndarray, plan: PilotPlan, p_user: float, noise_var: float = 1.0):
    """Scalar estimate/error variances (psi, theta) for every (DU, user) pair."""
    if p_user <= 0:
        raise ValueError("pilot power must be positive")
    C = plan.copilot_matrix().astype(float)
    den = D @ C + noise_var / p_user  # sum over copilots of D[r, u']
    if np.any(den <= 0):
        raise FloatingPointError("non-positive LMMSE normalization")
    psi = D**2 / den
    return psi, D - psi, den


def draw_small_scale(D: np.ndarray, M: int, rng) -> np.ndarray:
    n_du, n_u = D.shape
    g = (rng.standard_normal((n_du, n_u, M)) + 1j * rng.standard_normal((n_du, n_u, M))) / math.sqrt(2)
    return g * np.sqrt(D)[:, :, None]


def lmmse_estimate(D, plan: PilotPlan, M: int, p_user: float, rng, *, mode: str = "pilots",
                   needed=None, noise_var: float = 1.0) -> tuple[TrueChannels, ChannelEstimates]:
    """Draw true channels and the matching LMMSE estimates for one coherence block.

    ``mode="pilots"`` synthesizes the received training signal and projects it
    on each pilot; ``mode="statistics"`` draws estimate and error directly
    from their Gaussian laws. ``needed`` masks the pairs whose estimates are
    kept (default: all).
    """
    D = np.asarray(D, dtype=float)
    psi, theta, den = estimate_statistics(D, plan, p_user, noise_var)
    n_du, n_u = D.shape
    if mode == "pilots":
        h = draw_small_scale(D, M, rng)
        phi = plan.sequences()
        tau = plan.tau_p
        noise = (rng.standard_normal((n_du, M, tau)) + 1j * rng.standard_normal((n_du, M, tau))) * math.sqrt(noise_var / 2)
        Y = math.sqrt(p_user) * np.einsum("rum,ut->rmt", h, phi) + noise
        y_proj = np.einsum("rmt,ut->rum", Y, phi.conj()) / math.sqrt(p_user)
        h_hat = (D / den)[:, :, None] * y_proj
    elif mode == "statistics":
        h_hat = draw_small_scale(psi, M, rng)
        h = h_hat + draw_small_scale(theta, M, rng)
    else:
        raise ValueError(f"unknown estimation mode {mode!r}")
    available = np.ones((n_du, n_u), dtype=bool) if needed is None else np.asarray(needed, dtype=bool)
    h_hat = np.where(available[:, :, None], h_hat, 0.0)
    return TrueChannels(h), ChannelEstimates(h_hat, psi, theta, D, available)


@dataclass
class ChannelSet:
    """Everything channel-related for one realization and one slot."""

    large_scale: LargeScaleFading
    noise: float
    pilots: PilotPlan
    truth: TrueChannels | None = None
    estimates: ChannelEstimates | None = None
    extras: dict = field(default_factory=dict)

    @property
    def D(self) -> np.ndarray:
        return self.large_scale.gain / self.noise
