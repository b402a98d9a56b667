"""Benchmark schemes: round-robin scheduling with local ZF or conjugate beams."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class RoundRobin:
    """Per-DU circular pointer over the served users in ascending index order."""

    served: list
    M: int
    pointer: list = field(default_factory=list)

    def __post_init__(self):
        if not self.pointer:
            self.pointer = [0] * len(self.served)

    def next(self, r: int) -> np.ndarray:
        users = np.asarray(self.served[r], dtype=int)
        n = len(users)
        if n == 0:
            return users
        take = min(self.M, n)
        start = self.pointer[r]
        picked = users[(start + np.arange(take)) % n]
        self.pointer[r] = (start + take) % n
        return np.sort(picked)


def schedule_round_robin(state: RoundRobin, r: int) -> np.ndarray:
    return state.next(r)


def zf_local(h_hat: np.ndarray, p: float) -> tuple[np.ndarray, bool]:
    """Zero-forcing beams for the rows of ``h_hat`` (one estimate per user).

    Columns of H (H^H H)^-1 are normalized and given equal power summing to
    ``p``. Returns (beams with one row per user, ridge_used).
    """
    H = np.asarray(h_hat, dtype=complex).T  # M x K
    K = H.shape[1]
    if K == 0:
        return np.zeros((0, H.shape[0]), dtype=complex), False
    gram = H.conj().T @ H
    ridge = False
    if np.linalg.matrix_rank(gram) < K:
        gram = gram + 1e-10 * np.trace(gram).real * np.eye(K)
        ridge = True
    V = H @ np.linalg.inv(gram)
    norms = np.linalg.norm(V, axis=0)
    norms[norms == 0] = 1.0
    W = V / norms * np.sqrt(p / K)
    return W.T, ridge


def conjugate_bf(h_hat: np.ndarray, p: float) -> np.ndarray:
    """``sqrt(p / M_s) * h_hat / ||h_hat||`` per user; zero estimates get no power."""
    h_hat = np.atleast_2d(np.asarray(h_hat, dtype=complex))
    norms = np.linalg.norm(h_hat, axis=1)
    ok = norms > 0
    W = np.zeros_like(h_hat)
    if ok.any():
        W[ok] = h_hat[ok] / norms[ok, None] * np.sqrt(p / ok.sum())
    return W
