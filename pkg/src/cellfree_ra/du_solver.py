"""Per-DU resource allocation: block coordinate ascent over (xi, zeta, W, s).

Each DU works only with the channels it estimated itself, so DUs run fully
in parallel without exchanging anything.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import node
from .node import NodeProblem

ZERO_BEAM = 1e-10  # beams with ||w||^2 <= ZERO_BEAM * p count as switched off


class ConvergenceWarning(UserWarning):
    pass


@dataclass
class NodeResult:
    """Outcome of one node's solver run.

    ``W`` holds one stacked beam per row of ``problem.users``; ``schedule``
    has shape (K, n) and marks which DU serves which user.
    """

    problem: NodeProblem
    W: np.ndarray
    schedule: np.ndarray
    xi: np.ndarray
    zeta: np.ndarray
    mu: np.ndarray
    trace: list
    iterations: int
    converged: bool
    step_log: list = field(default_factory=list)
    lam: np.ndarray | None = None
    alpha: np.ndarray | None = None
    flags: list = field(default_factory=list)

    @property
    def value(self) -> float:
        return self.trace[-1] if self.trace else 0.0


def build_du_problem(r: int, realization, csi, leakage, delta, p: float) -> NodeProblem:
    """Assemble DU ``r``'s local problem from its own CSI view."""
    users = np.asarray(realization.served[r], dtype=int)
    M = csi.M
    G = leakage.du(r, csi)
    if len(users):
        h = csi.h_hat(r, users)
        theta = csi.theta(r, users)[:, None]
    else:
        h = np.zeros((0, M), dtype=complex)
        theta = np.zeros((0, 1))
    return NodeProblem(
        dus=np.array([r]), users=users, mask=np.ones((len(users), 1), dtype=bool),
        h=np.asarray(h, dtype=complex), theta=np.asarray(theta, dtype=float), G=G,
        delta=np.asarray(delta, dtype=float)[users], p=float(p), M=M,
    )


def hungarian_utility(prob: NodeProblem, B: np.ndarray) -> np.ndarray:
    """Utility of giving beam ``B[m]`` to user ``u`` with all beams active.

    Entry (u, m) is ``delta_u * log(1 + |h_u^H b_m|^2 / A~_um)`` where the
    denominator collects the leakage of ``b_m``, the error and interference
    caused by every beam, and the noise.
    """
    if len(B) == 0:
        return np.zeros((prob.K, 0))
    Tb = prob.h.conj() @ B.T
    g2 = np.abs(Tb) ** 2
    bn = (np.abs(B) ** 2).sum(axis=1)
    lb = np.einsum("md,de,me->m", B.conj(), prob.G, B).real
    th = prob.theta[:, 0]
    total = g2.sum(axis=1) + th * bn.sum()
    A = lb[None, :] + total[:, None] - g2 + 1.0
    return prob.delta[:, None] * np.log1p(g2 / A)


def schedule_hungarian(prob: NodeProblem, W: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Reassign the nonzero beams of ``W`` to users, maximizing the pseudo-rate.

    Returns the permuted beams, the new 0/1 schedule and the assignment value.
    """
    norms = (np.abs(W) ** 2).sum(axis=1)
    beams = np.flatnonzero(norms > ZERO_BEAM * prob.p)
    B = W[beams]
    U = hungarian_utility(prob, B)
    s = np.zeros(prob.K)
    W_new = prob.zero_beams()
    if len(beams) == 0:
        return W_new, s, 0.0
    rows, cols = assign(U)
    W_new[rows] = B[cols]
    s[rows] = 1.0
    return W_new, s, float(U[rows, cols].sum())


def assign(utility: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Maximum-utility matching of rows (users) to columns (beams).

    When there are fewer users than beams, zero-utility dummy users absorb
    the surplus beams and are dropped from the returned pairs.
    """
    n_u, n_b = utility.shape
    pad = max(0, n_b - n_u)
    U = np.vstack([utility, np.zeros((pad, n_b))]) if pad else utility
    rows, cols = linear_sum_assignment(U, maximize=True)
    keep = rows < n_u
    return rows[keep], cols[keep]


def initial_schedule(prob: NodeProblem) -> tuple[np.ndarray, np.ndarray]:
    """Conjugate beams for all users, keep the M with the largest pseudo-rate,
    then re-split the power over the kept users."""
    K, M, p = prob.K, prob.M, prob.p
    W0 = node.conjugate_beams(prob, [range(K)], [p / K])
    ones = np.ones(K)
    wps = prob.delta * np.log1p(node.slinr(prob, W0, ones))
    keep = np.argsort(-wps, kind="stable")[: min(M, K)]
    s = np.zeros(K)
    s[keep] = 1.0
    W = node.conjugate_beams(prob, [np.sort(keep)], [p / len(keep)])
    return W, s


def run_algorithm1(prob: NodeProblem, *, max_iter: int = 100, tol: float = 1e-4,
                   log_steps: bool = False, warn: bool = True) -> NodeResult:
    """Alternate closed-form xi, zeta and beam updates with Hungarian scheduling.

    The trace records the weighted pseudo-rate at the start of every
    iteration. With ``log_steps`` each block update is logged as
    ``(iteration, step, value_before, value_after)``.
    """
    K = prob.K
    if K == 0:
        z = np.zeros(0)
        return NodeResult(prob, prob.zero_beams(), np.zeros((0, 1)), z, z.astype(complex),
                          np.zeros(1), [0.0], 0, True)
    W, s = initial_schedule(prob)
    log = []
    trace = []
    xi = zeta = None
    mu = np.zeros(1)
    converged = False
    best = None
    it = 0
    for it in range(1, max_iter + 1):
        if log_steps and xi is not None:
            before = node.f2(prob, W, s, xi, zeta)
        xi = node.slinr(prob, W, s)
        zeta = node.zeta_update(prob, W, s, xi)
        val = float(np.sum(prob.delta * np.log1p(xi)))
        if log_steps and it > 1:
            log.append((it, "xi_zeta", before, node.f2(prob, W, s, xi, zeta)))
        trace.append(val)
        if best is None or val > best[0]:
            best = (val, W, s, xi, zeta, mu)
        if it > 1 and abs(val - trace[-2]) <= tol * max(abs(trace[-2]), 1e-12):
            converged = True
            break
        sol = node.update_beams(prob, s, xi, zeta)
        if log_steps:
            log.append((it, "W", node.f2(prob, W, s, xi, zeta), node.f2(prob, sol.W, s, xi, zeta)))
        W_beam, mu = sol.W, sol.mu
        W_new, s_new, _ = schedule_hungarian(prob, W_beam)
        if log_steps:
            log.append((it, "schedule", node.weighted_pseudo_rate(prob, W_beam, s),
                        node.weighted_pseudo_rate(prob, W_new, s_new)))
        W, s = W_new, s_new
    if not converged:
        # the loop exits after a full update; score the final iterate
        xi = node.slinr(prob, W, s)
        zeta = node.zeta_update(prob, W, s, xi)
        trace.append(float(np.sum(prob.delta * np.log1p(xi))))
        if trace[-1] > best[0]:
            best = (trace[-1], W, s, xi, zeta, mu)
        if warn:
            warnings.warn(f"DU {prob.dus[0]}: no convergence within {max_iter} iterations",
                          ConvergenceWarning, stacklevel=2)
    _, W, s, xi, zeta, mu = best
    res = NodeResult(prob, W, s[:, None].copy(), xi, zeta, mu, trace, it, converged, log)
    if not converged:
        res.flags.append("max_iter")
    return res
