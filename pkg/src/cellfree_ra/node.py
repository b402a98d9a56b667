"""Quadratic-transform machinery shared by the DU and CU solvers.

A *node* is a DU (one transmitter) or a CU (several DUs). Its users' beams
are stacked over the node's DUs in ascending order, ``M`` entries per DU.
Beam ``w_u`` may be nonzero only on the DUs in ``mask[u]``.

All quantities are noise-normalized, so the noise term in every
denominator equals one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq


@dataclass
class NodeProblem:
    """Local data a node needs to optimize its beams.

    Attributes
    ----------
    dus : ndarray
        Global indices of the node's DUs (ascending).
    users : ndarray
        Global indices of the users the node optimizes for.
    mask : ndarray, shape (K, n)
        ``mask[u, k]`` is True when local DU ``k`` may transmit to user ``u``.
    h : ndarray, shape (K, n*M)
        Stacked channel estimates from every node DU to every user.
    theta : ndarray, shape (K, n)
        Estimation-error variance per (user, DU).
    G : ndarray, shape (n*M, n*M)
        Leakage covariance of the node.
    delta : ndarray, shape (K,)
        Fairness weights.
    p : float
        Per-DU power budget.
    """

    dus: np.ndarray
    users: np.ndarray
    mask: np.ndarray
    h: np.ndarray
    theta: np.ndarray
    G: np.ndarray
    delta: np.ndarray
    p: float
    M: int

    @property
    def K(self) -> int:
        return len(self.users)

    @property
    def n(self) -> int:
        return len(self.dus)

    def support(self, u: int) -> np.ndarray:
        """Stacked coordinates on which beam ``u`` may be nonzero."""
        blocks = np.flatnonzero(self.mask[u])
        return (blocks[:, None] * self.M + np.arange(self.M)).ravel()

    def block_power(self, W: np.ndarray) -> np.ndarray:
        """(K, n) squared norm of each user's beam on each DU."""
        return (np.abs(W) ** 2).reshape(self.K, self.n, self.M).sum(axis=2)

    def du_power(self, W: np.ndarray) -> np.ndarray:
        return self.block_power(W).sum(axis=0)

    def zero_beams(self) -> np.ndarray:
        return np.zeros((self.K, self.n * self.M), dtype=complex)


@dataclass
class Terms:
    """Signal and denominator of every user for fixed beams and schedule."""

    T: np.ndarray      # T[u, v] = h_u^H w_v
    signal: np.ndarray  # s_u |h_u^H w_u|^2
    A: np.ndarray       # leakage + interference + error + noise


def terms(prob: NodeProblem, W: np.ndarray, s: np.ndarray) -> Terms:
    s = np.asarray(s, dtype=float)
    T = prob.h.conj() @ W.T
    Pth = prob.theta @ prob.block_power(W).T  # Pth[u, v] = sum_k theta_uk ||w_vk||^2
    leak = np.einsum("ud,de,ue->u", W.conj(), prob.G, W).real
    inter = np.abs(T) ** 2 + Pth
    own = np.diag(inter)
    A = leak + s * np.diag(Pth) + inter @ s - s * own + 1.0
    signal = s * np.abs(np.diag(T)) ** 2
    return Terms(T, signal, A)


def slinr(prob: NodeProblem, W, s) -> np.ndarray:
    """Signal-to-leakage-interference-and-noise ratio of every user."""
    t = terms(prob, W, s)
    return t.signal / t.A


def zeta_update(prob: NodeProblem, W, s, xi) -> np.ndarray:
    t = terms(prob, W, s)
    s = np.asarray(s, dtype=float)
    return s * np.sqrt(prob.delta * (1 + xi)) * np.diag(t.T).conj() / (t.signal + t.A)


def f2(prob: NodeProblem, W, s, xi, zeta) -> float:
    """Quadratic-transform surrogate of the weighted pseudo-rate."""
    t = terms(prob, W, s)
    s = np.asarray(s, dtype=float)
    d = prob.delta
    c = np.sqrt(d * (1 + xi)) * s * np.diag(t.T)
    quad = 2 * np.real(zeta * c) - np.abs(zeta) ** 2 * (t.signal + t.A)
    return float(np.sum(d * (np.log1p(xi) - xi)) + np.sum(quad))


def weighted_pseudo_rate(prob: NodeProblem, W, s) -> float:
    return float(np.sum(prob.delta * np.log1p(slinr(prob, W, s))))


def lagrangian(prob: NodeProblem, W, s, xi, zeta, mu, lam=None, alpha=None) -> float:
    """f2 minus the priced power and weighted-capacity constraints."""
    val = f2(prob, W, s, xi, zeta) - float(np.dot(mu, prob.du_power(W) - prob.p))
    if lam is not None and alpha is not None:
        cap = (alpha * prob.block_power(W)).sum(axis=0) - prob.M
        val -= float(np.dot(lam, cap))
    return val


# ---------------------------------------------------------------------------
# beam update


@dataclass
class BeamSolution:
    W: np.ndarray
    mu: np.ndarray
    sweeps: int
    rescaled: bool = False
    notes: list = field(default_factory=list)


def _power_fn(c, z2):
    def power(mu):
        den = c + mu
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(den > 0, z2 / den**2, np.where(z2 > 0, np.inf, 0.0))
        return float(out.sum())
    return power


def _solve_mu(c, z2, p) -> float:
    """Smallest mu >= 0 with sum z2/(c+mu)^2 <= p (bisection-type root find)."""
    c = np.maximum(c, 0.0)
    power = _power_fn(c, z2)
    if power(0.0) <= p:
        return 0.0
    hi = 1.0
    while power(hi) > p:
        hi *= 2.0
        if hi > 1e300:
            raise FloatingPointError("power multiplier bracket diverged")
    lo = hi / 2.0 if hi > 1.0 else 0.0
    if power(lo) <= p:
        lo = 0.0
    mu = brentq(lambda m: power(m) - p, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    # step to the feasible side of the root
    while power(mu) > p:
        mu = mu * (1 + 1e-15) + 1e-300
    return mu


def _solve_batch(Kmat, g):
    """Solve a stack of Hermitian systems, falling back to pseudo-inverses."""
    try:
        return np.linalg.solve(Kmat, g[..., None])[..., 0]
    except np.linalg.LinAlgError:
        return np.einsum("kij,kj->ki", np.linalg.pinv(Kmat, hermitian=True), g)


def _eig_solve(K0, g, mu):
    """(K0 + mu I)^+ g for a stack of Hermitian K0 via eigendecomposition."""
    c, V = np.linalg.eigh(K0)
    z = np.einsum("kji,kj->ki", V.conj(), g)
    den = c + mu
    floor = np.abs(c).max(axis=1, keepdims=True) * 1e-14 + 1e-300
    inv = np.where(den > floor, 1.0 / np.where(den > floor, den, 1.0), 0.0)
    return np.einsum("kij,kj->ki", V, inv * z)


@dataclass
class _Group:
    """Users sharing one beam support, with their stacked quadratic forms."""

    rows: np.ndarray
    blocks: np.ndarray
    cols: np.ndarray
    K0: np.ndarray  # (n_users, b*M, b*M)
    g: np.ndarray   # (n_users, b*M)
    parts: dict = field(default_factory=dict)  # DU -> (own coords, other coords, other DUs)


def _groups(prob: NodeProblem, active, zz, s, S, lam, alpha, a) -> list:
    M = prob.M
    patterns: dict = {}
    for u in active:
        patterns.setdefault(prob.mask[u].tobytes(), []).append(u)
    out = []
    for rows in patterns.values():
        rows = np.array(rows)
        blocks = np.flatnonzero(prob.mask[rows[0]])
        cols = prob.support(rows[0])
        Gs = prob.G[np.ix_(cols, cols)]
        Ss = S[np.ix_(cols, cols)]
        K0 = zz[rows, None, None] * Gs[None] + s[rows, None, None] * Ss[None]
        shift = np.repeat(lam[blocks][None, :] * alpha[np.ix_(rows, blocks)], M, axis=1)
        K0[:, np.arange(len(cols)), np.arange(len(cols))] += shift
        grp = _Group(rows, blocks, cols, K0, a[rows, None] * prob.h[np.ix_(rows, cols)])
        for j, k in enumerate(blocks):
            own = np.arange(j * M, (j + 1) * M)
            rest = np.concatenate([np.arange(i * M, (i + 1) * M) for i in range(len(blocks)) if i != j]
                                  or [np.zeros(0, dtype=int)])
            grp.parts[int(k)] = (own, rest, np.delete(blocks, j))
        out.append(grp)
    return out


def update_beams(prob: NodeProblem, s, xi, zeta, *, lam=None, alpha=None,
                 max_sweeps: int = 50, tol: float = 1e-10) -> BeamSolution:
    """Closed-form beams with per-DU power multipliers.

    Each DU's multiplier is found by a one-dimensional root search on that
    DU's power with the other multipliers held fixed; sweeps over the DUs
    repeat until every DU meets its budget (a single sweep is exact when the
    node has one DU).
    """
    K, n, M = prob.K, prob.n, prob.M
    s = np.asarray(s, dtype=float)
    zeta = np.asarray(zeta, dtype=complex)
    lam = np.zeros(n) if lam is None else np.asarray(lam, dtype=float)
    alpha = np.zeros((K, n)) if alpha is None else np.asarray(alpha, dtype=float)
    a = s * zeta.conj() * np.sqrt(prob.delta * (1 + xi))
    zz = np.abs(zeta) ** 2
    h = prob.h
    S = h.T @ (zz[:, None] * h.conj())
    S[np.diag_indices_from(S)] += np.repeat(zz @ prob.theta, M)
    active = [u for u in range(K) if a[u] != 0 and prob.mask[u].any()]
    W = prob.zero_beams()
    mu = np.zeros(n)
    if not active:
        return BeamSolution(W, mu, 0)
    groups = _groups(prob, active, zz, s, S, lam, alpha, a)

    if n == 1:
        (grp,) = groups
        c, V = np.linalg.eigh(grp.K0)
        z = np.einsum("kji,kj->ki", V.conj(), grp.g)
        mu[0] = _solve_mu(c.ravel(), np.abs(z.ravel()) ** 2, prob.p)
        W[np.ix_(grp.rows, grp.cols)] = _eig_solve(grp.K0, grp.g, mu[0])
        return BeamSolution(W, mu, 1)

    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        mu_prev = mu.copy()
        for k in range(n):
            cs, z2s = [], []
            for grp in groups:
                if k not in grp.parts:
                    continue
                bk, rest, others = grp.parts[k]
                K0 = grp.K0
                if len(rest):
                    Kr = K0[:, rest[:, None], rest[None, :]]
                    Kr[:, np.arange(len(rest)), np.arange(len(rest))] += np.repeat(mu[others], M)
                    B = K0[:, bk[:, None], rest[None, :]]
                    rhs = np.concatenate([np.conj(np.swapaxes(B, 1, 2)), grp.g[:, rest, None]], axis=2)
                    try:
                        X = np.linalg.solve(Kr, rhs)
                    except np.linalg.LinAlgError:
                        X = np.linalg.pinv(Kr, hermitian=True) @ rhs
                    Sch = K0[:, bk[:, None], bk[None, :]] - B @ X[:, :, :M]
                    b = grp.g[:, bk] - (B @ X[:, :, M:])[:, :, 0]
                else:
                    Sch, b = K0, grp.g
                Sch = (Sch + np.conj(np.swapaxes(Sch, 1, 2))) / 2
                c, V = np.linalg.eigh(Sch)
                cs.append(c.ravel())
                z2s.append((np.abs(np.einsum("kji,kj->ki", V.conj(), b)) ** 2).ravel())
            if cs:
                mu[k] = _solve_mu(np.concatenate(cs), np.concatenate(z2s), prob.p)
        for grp in groups:
            Kf = grp.K0.copy()
            Kf[:, np.arange(len(grp.cols)), np.arange(len(grp.cols))] += np.repeat(mu[grp.blocks], M)
            W[np.ix_(grp.rows, grp.cols)] = _solve_batch(Kf, grp.g)
        pw = prob.du_power(W)
        feasible = np.all(pw <= prob.p * (1 + 1e-9))
        tight = np.all(np.abs(pw[mu > 0] - prob.p) <= 1e-7 * prob.p)
        moved = np.max(np.abs(mu - mu_prev) / (np.abs(mu) + 1e-30)) if np.any(mu > 0) else 0.0
        if feasible and tight and moved < tol:
            break
    sol = BeamSolution(W, mu, sweeps)
    pw = prob.du_power(W)
    over = pw > prob.p * (1 + 1e-9)
    if over.any():
        fac = np.ones(n)
        fac[over] = np.sqrt(prob.p / pw[over])
        sol.W = (W.reshape(K, n, M) * fac[None, :, None]).reshape(K, n * M)
        sol.rescaled = True
        sol.notes.append(f"rescaled DUs {np.flatnonzero(over).tolist()} after {sweeps} sweeps")
    return sol


def conjugate_beams(prob: NodeProblem, users_per_du, power_per_du) -> np.ndarray:
    """Unit-direction conjugate beams: DU ``k`` sends ``sqrt(power_per_du[k])``
    along ``h_hat`` to each user in ``users_per_du[k]`` (local row indices)."""
    W = prob.zero_beams()
    M = prob.M
    for k, rows in enumerate(users_per_du):
        for u in rows:
            hk = prob.h[u, k * M:(k + 1) * M]
            nrm = np.linalg.norm(hk)
            if nrm > 0:
                W[u, k * M:(k + 1) * M] = np.sqrt(power_per_du[k]) * hk / nrm
    return W
