"""Per-CU resource allocation with stacked per-cluster beams.

Scheduling is relaxed into a reweighted l1 capacity constraint per DU,
``sum_u alpha_ru ||w_ru||^2 <= M``, priced by a multiplier that is raised
whenever the constraint is violated. The final schedule is read off the
beam norms.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import node
from .du_solver import ZERO_BEAM, ConvergenceWarning, NodeResult
from .node import NodeProblem

LAMBDA_FLOOR = 1e-3
LAMBDA_CAP = 1e3


@dataclass(frozen=True)
class ConcatIndex:
    """Block layout of one user's stacked vector over its DUs (ascending)."""

    dus: tuple
    M: int

    @classmethod
    def of(cls, dus, M: int) -> "ConcatIndex":
        dus = tuple(sorted(int(r) for r in dus))
        if not dus:
            raise ValueError("a stacked vector needs at least one DU")
        return cls(dus, M)

    def offset(self, r: int) -> int:
        return self.dus.index(int(r)) * self.M

    def stack(self, blocks: dict) -> np.ndarray:
        return np.concatenate([np.asarray(blocks[r]).reshape(self.M) for r in self.dus])

    def unstack(self, vec) -> dict:
        vec = np.asarray(vec)
        return {r: vec[k * self.M:(k + 1) * self.M].copy() for k, r in enumerate(self.dus)}

    def block_diag(self, scalars: dict) -> np.ndarray:
        """Block-diagonal matrix with ``scalars[r] * I_M`` on DU ``r``'s block."""
        return np.kron(np.diag([float(scalars[r]) for r in self.dus]), np.eye(self.M))


def build_cu_problem(q: int, realization, csi, leakage, delta, p: float) -> NodeProblem:
    """Assemble CU ``q``'s problem from the CSI of its own DUs."""
    dus = realization.cu_dus(q)
    users = np.asarray(realization.cu_users[q], dtype=int)
    M = csi.M
    n, K = len(dus), len(users)
    mem = np.zeros((K, n), dtype=bool)
    for i, u in enumerate(users):
        local = realization.cluster_in_cell[(q, int(u))]
        mem[i, np.searchsorted(dus, local)] = True
    h = np.zeros((K, n * M), dtype=complex)
    theta = np.zeros((K, n))
    for k, r in enumerate(dus):
        if K:
            h[:, k * M:(k + 1) * M] = csi.h_hat(r, users)
            theta[:, k] = csi.theta(r, users)
    return NodeProblem(dus=np.asarray(dus), users=users, mask=mem, h=h, theta=theta,
                       G=leakage.cu(q, csi), delta=np.asarray(delta, dtype=float)[users],
                       p=float(p), M=M)


def update_alpha(block_power, eps: float) -> np.ndarray:
    """Reweighting ``1 / (||w_ru||^2 + eps)``."""
    return 1.0 / (np.asarray(block_power, dtype=float) + eps)


def extract_schedule(prob: NodeProblem, W, threshold: float | None = None):
    """Schedule from beam norms, keeping at most M users per DU.

    Returns the schedule (K, n) and the beams with the dropped blocks zeroed.
    """
    thr = ZERO_BEAM * prob.p if threshold is None else threshold
    bp = prob.block_power(W)
    s = (bp > thr) & prob.mask
    for k in range(prob.n):
        on = np.flatnonzero(s[:, k])
        if len(on) > prob.M:
            order = on[np.argsort(-bp[on, k], kind="stable")]
            s[order[prob.M:], k] = False
    W = (W.reshape(prob.K, prob.n, prob.M) * s[:, :, None]).reshape(prob.K, prob.n * prob.M)
    return s.astype(float), W


def capacity(prob: NodeProblem, W, alpha) -> np.ndarray:
    return (alpha * prob.block_power(W) * prob.mask).sum(axis=0)


def penalized(prob, W, xi, zeta, lam, alpha) -> float:
    """f2 minus the priced weighted capacity; the quantity each block step raises
    while alpha and lambda stay fixed."""
    ones = np.ones(prob.K)
    return node.f2(prob, W, ones, xi, zeta) - float(np.dot(lam, capacity(prob, W, alpha)))


def run_algorithm2(prob: NodeProblem, *, max_iter: int = 100, tol: float = 1e-4,
                   eps: float | None = None, max_escalations: int = 25,
                   log_steps: bool = False, warn: bool = True) -> NodeResult:
    """Alternate xi, zeta, beams (with multiplier escalation) and alpha.

    The trace holds the weighted pseudo-rate at the start of each iteration.
    With ``log_steps`` each block step is logged as
    ``(iteration, step, before, after)`` using the penalized objective under
    the alpha and lambda in force during that step.
    """
    K, n, M, p = prob.K, prob.n, prob.M, prob.p
    eps = 0.01 * p / M if eps is None else eps
    if K == 0:
        z = np.zeros(0)
        return NodeResult(prob, prob.zero_beams(), np.zeros((0, n)), z, z.astype(complex),
                          np.zeros(n), [0.0], 0, True, lam=np.zeros(n), alpha=np.zeros((0, n)))
    ones = np.ones(K)
    per_du = [np.flatnonzero(prob.mask[:, k]) for k in range(n)]
    W = node.conjugate_beams(prob, per_du, [p / max(len(r), 1) for r in per_du])
    alpha = update_alpha(prob.block_power(W), eps)
    lam = np.zeros(n)
    mu = np.zeros(n)
    trace, log, flags = [], [], []
    xi = zeta = None
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if log_steps and xi is not None:
            before = penalized(prob, W, xi, zeta, lam, alpha)
        xi = node.slinr(prob, W, ones)
        zeta = node.zeta_update(prob, W, ones, xi)
        if log_steps and it > 1:
            log.append((it, "xi_zeta", before, penalized(prob, W, xi, zeta, lam, alpha)))
        val = float(np.sum(prob.delta * np.log1p(xi)))
        trace.append(val)
        if it > 1 and abs(val - trace[-2]) <= tol * max(abs(trace[-2]), 1e-12):
            converged = True
            break
        for _ in range(max_escalations):
            lam_used = lam.copy()
            sol = node.update_beams(prob, ones, xi, zeta, lam=lam_used, alpha=alpha)
            viol = capacity(prob, sol.W, alpha) > M * (1 + 1e-9)
            raisable = viol & (lam < LAMBDA_CAP)
            if not raisable.any():
                break
            lam[raisable] = np.minimum(np.maximum(lam[raisable], LAMBDA_FLOOR) * 2, LAMBDA_CAP)
        if sol.rescaled and "rescaled" not in flags:
            flags.append("rescaled")
        if log_steps:
            log.append((it, "W", penalized(prob, W, xi, zeta, lam_used, alpha),
                        penalized(prob, sol.W, xi, zeta, lam_used, alpha)))
        W, mu = sol.W, sol.mu
        alpha = update_alpha(prob.block_power(W), eps)
    if not converged:
        xi = node.slinr(prob, W, ones)
        zeta = node.zeta_update(prob, W, ones, xi)
        trace.append(float(np.sum(prob.delta * np.log1p(xi))))
        flags.append("max_iter")
        if warn:
            warnings.warn(f"CU with DUs {prob.dus.tolist()}: no convergence within {max_iter} iterations",
                          ConvergenceWarning, stacklevel=2)
    s, W_final = extract_schedule(prob, W)
    if (capacity(prob, W, alpha) > M * (1 + 1e-9)).any() and "capacity" not in flags:
        flags.append("capacity")
    return NodeResult(prob, W_final, s, xi, zeta, mu, trace, it, converged, log,
                      lam=lam, alpha=alpha, flags=flags)
