from itertools import permutations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cellfree_ra import node
from cellfree_ra.cu_solver import (ConcatIndex, build_cu_problem, capacity, extract_schedule,
                                   run_algorithm2, update_alpha)
from cellfree_ra.du_solver import (assign, build_du_problem, hungarian_utility, run_algorithm1,
                                   schedule_hungarian)
from cellfree_ra.leakage import LeakageContext, LeakageMethod
from cellfree_ra.node import NodeProblem

from conftest import orthogonal_estimates


def cgauss(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def random_problem(rng, K=4, n=1, M=2, p=None):
    nM = n * M
    h = cgauss(rng, (K, nM)) * np.sqrt(10 ** rng.uniform(0, 2, size=(K, 1)))
    theta = 10 ** rng.uniform(-1, 1, size=(K, n))
    X = cgauss(rng, (nM, nM))
    G = X @ X.conj().T * 10 ** rng.uniform(-1, 1) / nM
    mask = np.ones((K, n), dtype=bool)
    if n > 1:
        mask = rng.random((K, n)) < 0.6
        mask[np.arange(K), rng.integers(0, n, K)] = True
    delta = rng.uniform(0.5, 2.0, K)
    p = 10 ** rng.uniform(-1, 1) if p is None else p
    return NodeProblem(np.arange(n), np.arange(K), mask, h, theta, G, delta, p, M)


def random_beams(rng, prob):
    W = cgauss(rng, (prob.K, prob.n * prob.M))
    W *= np.repeat(prob.mask, prob.M, axis=1)
    scale = np.sqrt(prob.p / prob.du_power(W).max())
    return W * scale


# --- closed forms ----------------------------------------------------------


def grid_check(prob, W, s, xi, zeta, u, rng):
    base = node.f2(prob, W, s, xi, zeta)
    tol = 1e-9 * max(1.0, abs(base))
    span = lambda x: 0.5 * abs(x) + 1e-3
    z0, x0 = zeta[u], xi[u]
    grids = [
        ("zeta", np.linspace(z0.real - span(z0), z0.real + span(z0), 41),
         np.linspace(z0.imag - span(z0), z0.imag + span(z0), 41)),
        ("xi", np.linspace(max(x0 - span(x0), 0.0), x0 + span(x0), 41),
         np.linspace(z0.real - span(z0), z0.real + span(z0), 41)),
    ]
    for kind, ga, gb in grids:
        for a in ga:
            for b in gb:
                xi2, z2 = xi.copy(), zeta.copy()
                if kind == "zeta":
                    z2[u] = a + 1j * b
                else:
                    xi2[u] = a
                    z2[u] = b + 1j * z0.imag
                assert node.f2(prob, W, s, xi2, z2) <= base + tol


@pytest.mark.parametrize("n", [1, 3])
def test_closed_forms_beat_grid(n):
    rng = np.random.default_rng(100 + n)
    for _ in range(8):
        prob = random_problem(rng, K=3, n=n, M=2)
        W = random_beams(rng, prob)
        s = (rng.random(prob.K) < 0.7).astype(float) if n == 1 else np.ones(prob.K)
        xi = node.slinr(prob, W, s)
        zeta = node.zeta_update(prob, W, s, xi)
        grid_check(prob, W, s, xi, zeta, int(rng.integers(prob.K)), rng)


def test_f2_at_closed_forms_equals_pseudo_rate():
    rng = np.random.default_rng(0)
    for n in (1, 2):
        prob = random_problem(rng, K=5, n=n, M=3)
        W = random_beams(rng, prob)
        s = np.ones(prob.K)
        xi = node.slinr(prob, W, s)
        zeta = node.zeta_update(prob, W, s, xi)
        assert node.f2(prob, W, s, xi, zeta) == pytest.approx(node.weighted_pseudo_rate(prob, W, s),
                                                              rel=1e-12)


def test_scalar_closed_forms():
    # h = 1, w = 1, no leakage or error: SLINR = 1, zeta = sqrt(2)/2
    prob = NodeProblem(np.array([0]), np.array([0]), np.ones((1, 1), bool), np.ones((1, 1), complex),
                       np.zeros((1, 1)), np.zeros((1, 1)), np.ones(1), 1.0, 1)
    W = np.ones((1, 1), complex)
    xi = node.slinr(prob, W, np.ones(1))
    assert xi[0] == pytest.approx(1.0)
    zeta = node.zeta_update(prob, W, np.ones(1), xi)
    assert zeta[0] == pytest.approx(np.sqrt(2) / 2)
    # unscheduled users get zeta = 0
    assert node.zeta_update(prob, W, np.zeros(1), xi)[0] == 0


def test_slinr_brute_force():
    rng = np.random.default_rng(4)
    prob = random_problem(rng, K=4, n=2, M=2)
    W = random_beams(rng, prob)
    s = np.array([1.0, 0.0, 1.0, 1.0])
    got = node.slinr(prob, W, s)
    M = prob.M
    for u in range(prob.K):
        leak = np.real(W[u].conj() @ prob.G @ W[u])
        den = leak + 1.0
        for v in range(prob.K):
            err = sum(prob.theta[u, k] * np.linalg.norm(W[v, k * M:(k + 1) * M]) ** 2 for k in range(prob.n))
            if v == u:
                den += s[u] * err
            else:
                den += s[v] * (abs(prob.h[u].conj() @ W[v]) ** 2 + err)
        assert got[u] == pytest.approx(s[u] * abs(prob.h[u].conj() @ W[u]) ** 2 / den, rel=1e-12)


# --- beam update -------------------------------------------------------------


def real_grad(fn, W, support, step):
    g = np.zeros(W.shape, dtype=complex)
    for u, cols in support:
        for c in cols:
            for unit in (1.0, 1j):
                Wp, Wm = W.copy(), W.copy()
                Wp[u, c] += unit * step
                Wm[u, c] -= unit * step
                d = (fn(Wp) - fn(Wm)) / (2 * step)
                g[u, c] += d if unit == 1.0 else 1j * d
    return g


@pytest.mark.parametrize("n,cu", [(1, False), (2, True), (3, True)])
def test_beams_are_stationary_and_feasible(n, cu):
    rng = np.random.default_rng(7 * n)
    for _ in range(5):
        prob = random_problem(rng, K=4, n=n, M=2)
        W0 = random_beams(rng, prob)
        s = np.ones(prob.K)
        xi = node.slinr(prob, W0, s)
        zeta = node.zeta_update(prob, W0, s, xi)
        lam = alpha = None
        if cu:
            lam = rng.uniform(0, 0.5, n)
            alpha = 1.0 / (prob.block_power(W0) + 0.01)
        sol = node.update_beams(prob, s, xi, zeta, lam=lam, alpha=alpha)
        assert not sol.rescaled
        support = [(u, prob.support(u)) for u in range(prob.K)]
        step = 1e-6 * max(1.0, np.abs(sol.W).max())
        L = lambda W: node.lagrangian(prob, W, s, xi, zeta, sol.mu, lam, alpha)
        grad = real_grad(L, sol.W, support, step)
        scale = np.abs(real_grad(lambda W: node.f2(prob, W, s, xi, zeta), prob.zero_beams(), support,
                                 step)).max()
        assert np.abs(grad).max() <= 1e-4 * scale
        pw = prob.du_power(sol.W)
        assert (pw <= prob.p * (1 + 1e-6)).all()
        active = sol.mu > 0
        np.testing.assert_allclose(pw[active], prob.p, rtol=1e-6)
        off = ~np.repeat(prob.mask, prob.M, axis=1)
        assert (sol.W[off] == 0).all()


def test_power_decreases_in_mu():
    rng = np.random.default_rng(1)
    c = rng.uniform(0, 3, 20)
    z2 = rng.uniform(0, 2, 20)
    power = node._power_fn(c, z2)
    vals = [power(m) for m in np.linspace(0.01, 10, 200)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    mu = node._solve_mu(c, z2, 0.5)
    assert power(mu) <= 0.5
    assert power(mu * (1 - 1e-9)) > 0.5


def test_mu_zero_when_budget_slack():
    assert node._solve_mu(np.array([1.0, 2.0]), np.array([0.1, 0.1]), 10.0) == 0.0


# --- Hungarian -------------------------------------------------------------


def brute_force_value(U):
    K, B = U.shape
    if K >= B:
        return max(sum(U[perm[m], m] for m in range(B)) for perm in permutations(range(K), B))
    return max(sum(U[u, perm[u]] for u in range(K)) for perm in permutations(range(B), K))


def test_hungarian_small_example():
    rows, cols = assign(np.array([[1.0, 2.0], [4.0, 3.0]]))
    assert np.array([[1.0, 2.0], [4.0, 3.0]])[rows, cols].sum() == 6.0


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 6))
def test_hungarian_matches_brute_force(seed, K, B):
    U = np.random.default_rng(seed).exponential(1.0, size=(K, B))
    rows, cols = assign(U)
    assert len(set(rows.tolist())) == len(rows) and len(set(cols.tolist())) == len(cols)
    assert len(rows) == min(K, B)
    assert U[rows, cols].sum() == pytest.approx(brute_force_value(U), rel=1e-12)


def test_schedule_value_is_pseudo_rate():
    rng = np.random.default_rng(2)
    prob = random_problem(rng, K=5, n=1, M=3)
    W = prob.zero_beams()
    W[[0, 2, 4]] = random_beams(rng, prob)[[0, 2, 4]]
    W_new, s_new, value = schedule_hungarian(prob, W)
    assert s_new.sum() == 3
    assert node.weighted_pseudo_rate(prob, W_new, s_new) == pytest.approx(value, rel=1e-12)
    U = hungarian_utility(prob, W[[0, 2, 4]])
    assert value == pytest.approx(brute_force_value(U), rel=1e-12)


# --- Algorithm 1 -------------------------------------------------------------


def test_single_user_reaches_mrt_optimum():
    rng = np.random.default_rng(3)
    h = cgauss(rng, (1, 4))
    prob = NodeProblem(np.array([0]), np.array([0]), np.ones((1, 1), bool), h, np.array([[0.3]]),
                       np.zeros((4, 4)), np.ones(1), 2.0, 4)
    res = run_algorithm1(prob)
    assert res.converged and res.iterations <= 5
    best = 2.0 * np.linalg.norm(h) ** 2 / (0.3 * 2.0 + 1)
    assert res.xi[0] == pytest.approx(best, rel=1e-6)


def test_vanishing_power_gives_vanishing_rate():
    prob = random_problem(np.random.default_rng(5), K=3, n=1, M=2, p=1e-14)
    res = run_algorithm1(prob)
    assert res.value < 1e-10
    assert np.abs(res.W).max() < 1e-6


@pytest.mark.parametrize("seed", range(6))
def test_algorithm1_steps_monotone(seed):
    prob = random_problem(np.random.default_rng(seed), K=7, n=1, M=3)
    res = run_algorithm1(prob, log_steps=True, warn=False)
    for _, step, before, after in res.step_log:
        assert after >= before - 1e-8 * max(1.0, abs(before)), step
    tr = res.trace
    assert all(b >= a - 1e-8 * max(1.0, abs(a)) for a, b in zip(tr, tr[1:]))
    assert res.schedule.sum() <= prob.M
    assert (prob.du_power(res.W) <= prob.p * (1 + 1e-9)).all()


def test_empty_du():
    prob = NodeProblem(np.array([0]), np.zeros(0, int), np.zeros((0, 1), bool), np.zeros((0, 2), complex),
                       np.zeros((0, 1)), np.eye(2), np.zeros(0), 1.0, 2)
    res = run_algorithm1(prob)
    assert res.value == 0.0 and res.W.shape == (0, 2)


# --- Algorithm 2 -------------------------------------------------------------


def test_concat_index_roundtrip():
    idx = ConcatIndex.of([7, 2, 5], 3)
    assert idx.dus == (2, 5, 7)
    assert idx.offset(5) == 3
    blocks = {r: np.arange(3) + 10 * r for r in (2, 5, 7)}
    vec = idx.stack(blocks)
    np.testing.assert_array_equal(vec[3:6], blocks[5])
    back = idx.unstack(vec)
    for r in blocks:
        np.testing.assert_array_equal(back[r], blocks[r])
    np.testing.assert_array_equal(np.diag(idx.block_diag({2: 1.0, 5: 2.0, 7: 3.0})),
                                  np.repeat([1.0, 2.0, 3.0], 3))
    with pytest.raises(ValueError):
        ConcatIndex.of([], 2)


def test_update_alpha_values():
    np.testing.assert_allclose(update_alpha([[0.0, 1.0], [0.5, 0.0]], 0.5), [[2.0, 2 / 3], [1.0, 2.0]])


def test_extract_schedule_keeps_strongest_m():
    prob = random_problem(np.random.default_rng(0), K=4, n=1, M=2)
    W = np.zeros((4, 2), complex)
    W[:, 0] = np.sqrt([0.4, 1e-14, 0.3, 0.1])
    s, Wk = extract_schedule(prob, W)
    np.testing.assert_array_equal(s[:, 0], [1, 0, 1, 0])
    assert (Wk[[1, 3]] == 0).all()
    np.testing.assert_array_equal(Wk[0], W[0])


@pytest.mark.parametrize("seed", range(4))
def test_algorithm2_steps_monotone(seed):
    prob = random_problem(np.random.default_rng(50 + seed), K=8, n=3, M=2)
    res = run_algorithm2(prob, log_steps=True, warn=False)
    for _, step, before, after in res.step_log:
        assert after >= before - 1e-8 * max(1.0, abs(before)), step
    assert (res.schedule.sum(axis=0) <= prob.M).all()
    assert (res.schedule <= prob.mask).all()
    assert (prob.du_power(res.W) <= prob.p * (1 + 1e-9)).all()
    if "capacity" not in res.flags:
        assert (capacity(prob, res.W, res.alpha) <= prob.M * (1 + 1e-9)).all()


def scenario_problems(scen, kind):
    real = scen.realization
    est = orthogonal_estimates(scen.D, 2, seed=3)[1]
    lc = LeakageContext(real, LeakageMethod(kind), noise=scen.noise, rho=scen.rho, user_density=25.0)
    return real, est, lc


def test_problems_touch_only_local_csi(small_scenario):
    real, est, lc = scenario_problems(small_scenario, "standard")
    delta = np.ones(real.n_users)
    for r in range(real.n_du):
        view = est.view([r])
        build_du_problem(r, real, view, lc, delta, 1.0)
        assert view.touched <= {r}
    for q in range(real.Q):
        view = est.view(real.cu_dus(q))
        build_cu_problem(q, real, view, lc, delta, 1.0)
        assert view.touched <= set(real.cu_dus(q).tolist())
        with pytest.raises(PermissionError):
            other = est.view([int(real.cu_dus((q + 1) % real.Q)[0])])
            build_cu_problem(q, real, other, lc, delta, 1.0)


def test_cu_problem_with_one_du_matches_du_problem():
    from conftest import toy_network

    gain = np.array([[5.0, 3.0, 0.2]])
    real = toy_network([[0, 0]], [[100, 0], [150, 0], [0, 450]], gain, rho=0.1)
    est = orthogonal_estimates(gain, 2)[1]
    lc = LeakageContext(real, LeakageMethod("statistical"), noise=1.0, rho=0.1, user_density=25.0)
    delta = np.array([1.0, 2.0, 0.5])
    a = build_du_problem(0, real, est.view([0]), lc, delta, 1.0)
    b = build_cu_problem(0, real, est.view([0]), lc, delta, 1.0)
    for f in ("users", "mask", "h", "theta", "G", "delta"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))


def test_zero_price_single_du_cu_matches_du_update():
    rng = np.random.default_rng(9)
    prob = random_problem(rng, K=4, n=1, M=3)
    W = random_beams(rng, prob)
    s = np.ones(prob.K)
    xi = node.slinr(prob, W, s)
    zeta = node.zeta_update(prob, W, s, xi)
    a = node.update_beams(prob, s, xi, zeta)
    b = node.update_beams(prob, s, xi, zeta, lam=np.zeros(1), alpha=rng.uniform(1, 5, (prob.K, 1)))
    np.testing.assert_array_equal(a.W, b.W)


@pytest.mark.parametrize("seed", range(5))
def test_single_du_cu_reproduces_du_solver(seed):
    # with at most M users the capacity constraint never binds, so both algorithms
    # run the same closed-form updates from the same starting beams
    prob = random_problem(np.random.default_rng(200 + seed), K=3, n=1, M=4)
    a = run_algorithm1(prob, warn=False)
    b = run_algorithm2(prob, warn=False)
    assert (b.lam == 0).all()
    np.testing.assert_array_equal(a.schedule, b.schedule)
    assert b.value == pytest.approx(a.value, rel=1e-6)
