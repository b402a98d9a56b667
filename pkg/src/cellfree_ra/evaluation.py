"""Achieved rates, fairness weights, Monte Carlo orchestration and counters.

Random streams
--------------
Every random draw comes from a generator keyed by ``(seed, realization,
purpose[, slot])``. The realization index is folded into the seed as
``splitmix64(seed ^ realization)``, so realizations can run in any order or
in parallel, and different schemes see identical geometry, pilots and
channels for the same seed.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .baselines import RoundRobin, conjugate_bf, zf_local
from .channel import (LargeScaleFading, assign_pilots_hac, lmmse_estimate, noise_power)
from .cu_solver import build_cu_problem, run_algorithm2
from .du_solver import build_du_problem, run_algorithm1
from .geometry import (NetworkConfig, NetworkRealization, build_layout, form_clusters,
                       make_traffic, sample_users)
from .leakage import LeakageContext, LeakageMethod

SCHEMES = ("du", "cu", "zf", "conjugate")
STREAMS = {"geometry": 1, "pilots": 2, "slot": 3}
MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def stream(seed: int, realization: int, purpose: str, *extra: int) -> np.random.Generator:
    key = splitmix64((int(seed) & MASK64) ^ int(realization))
    return np.random.default_rng([key, STREAMS[purpose], *extra])


# ---------------------------------------------------------------------------
# rates


def achieved_sinr(h_true: np.ndarray, W: np.ndarray, noise: float = 1.0) -> np.ndarray:
    """SINR of every user from true channels and the network-wide beams.

    ``h_true`` and ``W`` have shape (n_du, n_users, M); ``W[r, u]`` is the
    beam DU ``r`` sends to user ``u`` (zero when unscheduled). Signals from
    all DUs add coherently.
    """
    T = np.einsum("rum,rvm->uv", h_true.conj(), W)
    P = np.abs(T) ** 2
    sig = np.diag(P).copy()
    return sig / (P.sum(axis=1) - sig + noise)


def spectral_efficiency(sinr, tau_p: int, tau_d: int):
    """Pre-log-scaled Shannon rate in bits/s/Hz."""
    return tau_d / (tau_p + tau_d) * np.log2(1.0 + np.asarray(sinr, dtype=float))


@dataclass
class FairnessState:
    """Exponentially averaged rates and the weights ``1 / max(R_bar, floor)``."""

    R_bar: np.ndarray
    eta: float = 0.1
    floor: float = 1e-3
    frozen: bool = False

    @classmethod
    def start(cls, n_users: int, eta: float = 0.1, floor: float = 1e-3, frozen: bool = False):
        return cls(np.ones(n_users), eta, floor, frozen)

    @property
    def delta(self) -> np.ndarray:
        if self.frozen:
            return np.ones_like(self.R_bar)
        return 1.0 / np.maximum(self.R_bar, self.floor)

    def update(self, rates) -> "FairnessState":
        self.R_bar = self.eta * np.asarray(rates, dtype=float) + (1 - self.eta) * self.R_bar
        return self


def jain_index(x) -> float:
    x = np.asarray(x, dtype=float)
    if len(x) == 0 or not np.any(x):
        return 0.0
    return float(x.sum() ** 2 / (len(x) * np.sum(x**2)))


# ---------------------------------------------------------------------------
# scenario


@dataclass
class Scenario:
    """One network drop: geometry, clusters, pilots and normalized gains."""

    index: int
    realization: NetworkRealization
    large_scale: LargeScaleFading
    pilots: object
    noise: float
    rho: float

    @property
    def D(self) -> np.ndarray:
        return self.large_scale.gain / self.noise


def draw_scenario(cfg: NetworkConfig, index: int) -> Scenario:
    rng = stream(cfg.seed, index, "geometry")
    layout, du_pos, du_cu = build_layout(cfg, rng)
    traffic = make_traffic(cfg, layout, rng)
    users = sample_users(cfg, traffic, layout, du_pos, rng)
    real = NetworkRealization(layout, du_pos, du_cu, users, traffic)
    lsf = LargeScaleFading.draw(real, cfg, rng)
    rho = cfg.connection_threshold
    form_clusters(real, lsf.gain, rho)
    plan = assign_pilots_hac(users, cfg.tau_p, stream(cfg.seed, index, "pilots"), layout.wrap)
    return Scenario(index, real, lsf, plan, noise_power(cfg), rho)


# ---------------------------------------------------------------------------
# counters


def count_complexity_fronthaul(cfg: NetworkConfig, scheme: str, leakage: str,
                               realization: NetworkRealization, outer_radius: float = 1000.0) -> dict:
    """Per-node fronthaul units and per-iteration complexity estimates.

    ``E_avg`` is the mean number of users per DU, ``U_q`` the mean CU user
    count and ``U_ng`` the mean number of users within ``outer_radius`` of a
    DU. Local schemes (DU-distributed and both baselines) exchange nothing.
    """
    N, M, Q = cfg.N, cfg.M, realization.Q
    E_avg = float(np.mean([len(e) for e in realization.served])) if realization.n_du else 0.0
    U_q = float(np.mean([len(u) for u in realization.cu_users]))
    U_ng = float(np.mean(np.sum(realization.distances() <= outer_radius, axis=1)))
    U = float(realization.n_users)
    out = {"E_avg": E_avg, "U_q": U_q, "U_ng": U_ng,
           "csi_vectors": 0.0, "scheduling_decisions": 0.0, "beamformers": 0.0}
    if scheme == "cu":
        out["csi_vectors"] = (U_ng + N * E_avg) if leakage == "standard" else N * E_avg
        out["scheduling_decisions"] = N * E_avg
        out["beamformers"] = float(N * M)
        out["complexity"] = N**2 * M**4 + N * E_avg + U_q
    elif scheme == "du":
        out["complexity"] = M**4 + E_avg**3
    else:
        out["complexity"] = 0.0
    out["complexity_centralized"] = Q**2 * N**2 * M**4 + Q * N * E_avg + U
    return out


# ---------------------------------------------------------------------------
# Monte Carlo


@dataclass
class RunSettings:
    slots: int = 30
    realizations: int = 10
    average_last: int = 20
    eta: float = 0.1
    rate_floor: float = 1e-3
    fairness: str = "evolving"
    estimation: str = "pilots"
    trace: bool = False
    max_iter: int = 100
    tol: float = 1e-4
    threads: int | None = None

    def __post_init__(self):
        if self.slots < 1 or self.realizations < 1 or self.average_last < 1:
            raise ValueError("slots, realizations and average_last must be >= 1")
        if not 0 < self.eta <= 1:
            raise ValueError("fairness eta must lie in (0, 1]")
        if self.fairness not in ("evolving", "frozen"):
            raise ValueError("fairness mode must be 'evolving' or 'frozen'")
        if self.estimation not in ("pilots", "statistics"):
            raise ValueError("estimation must be 'pilots' or 'statistics'")


@dataclass
class RunResult:
    """Outputs of one (scheme, leakage) Monte Carlo run.

    ``slot_se[i]`` is (slots, n_users_i) for realization ``i``.
    """

    scheme: str
    leakage: str
    slot_se: list = field(default_factory=list)
    traces: list = field(default_factory=list)
    counters: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    average_last: int = 20

    @property
    def slot_sum_se(self) -> np.ndarray:
        """(realizations, slots) network sum SE."""
        return np.array([se.sum(axis=1) for se in self.slot_se])

    @property
    def long_term_sum_se(self) -> np.ndarray:
        """Per-realization mean sum SE over the last ``average_last`` slots."""
        s = self.slot_sum_se
        k = min(self.average_last, s.shape[1])
        return s[:, -k:].mean(axis=1)

    @property
    def mean_sum_se(self) -> float:
        return float(self.long_term_sum_se.mean())

    def user_se(self, realization: int) -> np.ndarray:
        """Long-term SE of each user: mean over all slots, scheduled or not."""
        return self.slot_se[realization].mean(axis=0)


def _threads(settings: RunSettings) -> int:
    if settings.threads is not None:
        return max(1, int(settings.threads))
    return max(1, int(os.environ.get("CELLFREE_THREADS", "1")))


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


class SchemeRunner:
    """Runs one scheme over the slots of one scenario."""

    def __init__(self, cfg: NetworkConfig, scheme: str, leakage: LeakageMethod | None,
                 scen: Scenario, settings: RunSettings):
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
        self.cfg, self.scheme, self.scen, self.settings = cfg, scheme, scen, settings
        real = scen.realization
        self.leak = None
        if scheme in ("du", "cu"):
            if leakage is None:
                raise ValueError(f"scheme {scheme!r} needs a leakage method")
            self.leak = LeakageContext(real, leakage, noise=scen.noise, rho=scen.rho,
                                       user_density=cfg.user_density)
            self.needed = self.leak.estimates_needed(per_cu=(scheme == "cu"))
        else:
            self.needed = real.membership()
            self.rr = RoundRobin(real.served, cfg.M)
        self.fair = FairnessState.start(real.n_users, settings.eta, settings.rate_floor,
                                        frozen=settings.fairness == "frozen")

    def beams(self, est, slot: int, traces: list, flags: list) -> np.ndarray:
        cfg, real = self.cfg, self.scen.realization
        est = est.restrict(self.needed)
        W = np.zeros((real.n_du, real.n_users, cfg.M), dtype=complex)
        p = cfg.p_du
        delta = self.fair.delta
        threads = _threads(self.settings)
        kw = dict(max_iter=self.settings.max_iter, tol=self.settings.tol, warn=False)
        if self.scheme == "du":
            def solve(r):
                prob = build_du_problem(r, real, est.view([r]), self.leak, delta, p)
                return run_algorithm1(prob, **kw)
            results = _map(solve, range(real.n_du), threads)
            for r, res in enumerate(results):
                W[r, res.problem.users] = res.W * res.schedule
        elif self.scheme == "cu":
            def solve(q):
                prob = build_cu_problem(q, real, est.view(real.cu_dus(q)), self.leak, delta, p)
                return run_algorithm2(prob, **kw)
            results = _map(solve, range(real.Q), threads)
            M = cfg.M
            for res in results:
                prob = res.problem
                for k, r in enumerate(prob.dus):
                    W[r, prob.users] = res.W[:, k * M:(k + 1) * M]
        else:
            for r in range(real.n_du):
                users = self.rr.next(r)
                if len(users) == 0:
                    continue
                h = est.view([r]).h_hat(r, users)
                if self.scheme == "zf":
                    W[r, users], ridge = zf_local(h, p)
                    if ridge:
                        flags.append((self.scen.index, slot, f"zf_ridge_du{r}"))
                else:
                    W[r, users] = conjugate_bf(h, p)
            return W
        for node_id, res in enumerate(results):
            for f in res.flags:
                flags.append((self.scen.index, slot, f"{f}_node{node_id}"))
            if self.settings.trace:
                traces.extend((self.scen.index, slot, node_id, i + 1, v) for i, v in enumerate(res.trace))
        return W


def run_schemes(cfg: NetworkConfig, runs, settings: RunSettings) -> list:
    """Monte Carlo over realizations and slots for several (scheme, leakage) pairs.

    ``runs`` is a list of ``(scheme, LeakageMethod or None)``. All pairs see
    the same scenarios and channel draws.
    """
    results = [RunResult(s, m.kind if m is not None else "none", average_last=settings.average_last)
               for s, m in runs]
    for i in range(settings.realizations):
        scen = draw_scenario(cfg, i)
        real = scen.realization
        runners = [SchemeRunner(cfg, s, m, scen, settings) for s, m in runs]
        per_run = [np.zeros((settings.slots, real.n_users)) for _ in runs]
        for t in range(settings.slots):
            truth, est = lmmse_estimate(scen.D, scen.pilots, cfg.M, cfg.p_user,
                                        stream(cfg.seed, i, "slot", t), mode=settings.estimation)
            for k, runner in enumerate(runners):
                W = runner.beams(est, t, results[k].traces, results[k].flags)
                se = spectral_efficiency(achieved_sinr(truth.h, W), cfg.tau_p, cfg.tau_d)
                per_run[k][t] = se
                runner.fair.update(se)
        for k, (s, m) in enumerate(runs):
            results[k].slot_se.append(per_run[k])
            results[k].counters.append(count_complexity_fronthaul(
                cfg, s, m.kind if m is not None else "none", real,
                m.outer_radius if m is not None else 1000.0))
    return results


def run_montecarlo(cfg: NetworkConfig, scheme: str, leakage: LeakageMethod | None,
                   settings: RunSettings) -> RunResult:
    return run_schemes(cfg, [(scheme, leakage)], settings)[0]
