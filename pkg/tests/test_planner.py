"""Planner blocks: tangent bounds, scheduling, rounding, and the outer loop.

The tangent-bound suites are the load-bearing part: they verify by finite
differences and midpoint sampling that the expansion coefficients really do
produce global lower bounds on the rate, which is the property the whole
alternating scheme leans on.
"""

import math

import numpy as np
import pytest

from uavrice.channel import Scenario, rate_from_gain
from uavrice.fading import LogisticModel
from uavrice import planner
from uavrice.planner import (
    LOS_MODEL,
    Plan,
    initialize_plan,
    plan_eta,
    predicted_rates,
    round_schedule,
    run_bcd,
    solve_horizontal,
    solve_scheduling,
    solve_vertical,
    tangent_coefficients,
)

FIT = LogisticModel(b1=-4.3221, b2=6.0750, c1=0.0, c2=1.0)


def _scenario(sn, m_slots=8, duration_s=8.0, q0=(0.0, 0.0),
              qf=(300.0, 0.0), vxy=50.0, vz=20.0, z0=100.0, zf=100.0):
    return Scenario(
        sn_positions=np.atleast_2d(np.asarray(sn, dtype=float)),
        q0=np.asarray(q0, dtype=float), qf=np.asarray(qf, dtype=float),
        z0=z0, zf=zf, duration_s=duration_s, n_slots=m_slots,
        vxy=vxy, vz=vz, h_min=100.0, p_tx=0.1, beta0=1e-6, alpha=2.0,
        sigma2=1.2589254117941663e-14, snr_gap=6.606934480075964,
        k_min=1.0, k_max=1000.0, epsilon=0.01)


def _rate_uy(u, y, gamma, model, alpha):
    # rate as a function of the gain variable u = exp(-s) and the squared
    # 3D distance y; the tangent coefficients expand exactly this surface
    lin = model.c1 * (1.0 + u) + model.c2
    return np.log2(1.0 + gamma * lin / ((1.0 + u) * y ** (alpha / 2.0)))


def _assert_feasible(plan, scen):
    assert np.allclose(plan.q[0], scen.q0) and np.allclose(plan.q[-1], scen.qf)
    assert plan.z[0] == pytest.approx(scen.z0)
    assert plan.z[-1] == pytest.approx(scen.zf)
    seg = np.linalg.norm(np.diff(plan.q, axis=0), axis=1)
    assert seg.max() <= scen.sxy + 1e-6
    assert np.abs(np.diff(plan.z)).max() <= scen.sz + 1e-6
    assert plan.z.min() >= scen.h_min - 1e-6
    assert plan.a.min() >= -1e-9
    assert plan.a.sum(axis=0).max() <= 1.0 + 1e-9


class TestTangentCoefficients:
    def test_rate_value_matches_channel_formula(self):
        # r_hat must agree with the channel-module rate at the same point
        rng = np.random.default_rng(7)
        for _ in range(200):
            d2q = rng.uniform(1.0, 1e6)
            z = rng.uniform(100.0, 400.0)
            gamma = 10.0 ** rng.uniform(4.0, 7.0)
            coef = tangent_coefficients(d2q, z, gamma, FIT, 2.0)
            y = d2q + z * z
            f = FIT.predict(z / math.sqrt(y))
            want = rate_from_gain(f, gamma, y, 2.0)
            assert coef.r_hat == pytest.approx(want, rel=1e-12)

    def test_sensitivities_match_finite_differences(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            d2q = rng.uniform(10.0, 1e6)
            z = rng.uniform(100.0, 400.0)
            gamma = 10.0 ** rng.uniform(4.0, 7.0)
            alpha = rng.choice([2.0, 2.4, 3.0])
            c1 = rng.uniform(0.0, 1.0)
            model = LogisticModel(b1=-4.0, b2=5.0, c1=c1, c2=1.0 - c1)
            coef = tangent_coefficients(d2q, z, gamma, model, alpha)
            u0 = math.exp(-coef.s_hat)
            y0 = coef.y
            # complex-step derivatives: immune to subtractive cancellation,
            # which matters because phi spans ten orders of magnitude
            h = 1e-20
            dru = np.imag(_rate_uy(u0 + 1j * h, y0, gamma, model, alpha)) / h
            dry = np.imag(_rate_uy(u0, y0 + 1j * h, gamma, model, alpha)) / h
            assert -dru == pytest.approx(coef.phi, rel=1e-9, abs=1e-300)
            assert -dry == pytest.approx(coef.psi, rel=1e-9)
            # v tangent slope: derivative of z / sqrt(d2 + z^2) in d2
            dv = np.imag(z / np.sqrt(d2q + 1j * h + z * z)) / h
            assert -dv == pytest.approx(coef.lam, rel=1e-9)

    def test_rate_is_midpoint_convex_in_u_and_y(self):
        # convexity in (u, y) is what turns the tangent into a lower bound
        rng = np.random.default_rng(9)
        for _ in range(2000):
            gamma = 10.0 ** rng.uniform(4.0, 7.0)
            alpha = rng.choice([2.0, 2.4, 3.0])
            c1 = rng.uniform(0.0, 1.0)
            model = LogisticModel(b1=-4.0, b2=5.0, c1=c1, c2=1.0 - c1)
            u1, u2 = rng.uniform(0.0, 60.0, size=2)
            y1, y2 = 10.0 ** rng.uniform(2.0, 6.0, size=2)
            mid = _rate_uy(0.5 * (u1 + u2), 0.5 * (y1 + y2),
                           gamma, model, alpha)
            avg = 0.5 * (_rate_uy(u1, y1, gamma, model, alpha)
                         + _rate_uy(u2, y2, gamma, model, alpha))
            assert mid <= avg + 1e-12

    def test_tangent_is_global_lower_bound(self):
        rng = np.random.default_rng(10)
        for _ in range(2000):
            gamma = 10.0 ** rng.uniform(4.0, 7.0)
            alpha = rng.choice([2.0, 2.4, 3.0])
            c1 = rng.uniform(0.0, 1.0)
            model = LogisticModel(b1=-4.0, b2=5.0, c1=c1, c2=1.0 - c1)
            d2q = rng.uniform(10.0, 1e6)
            z = rng.uniform(100.0, 400.0)
            coef = tangent_coefficients(d2q, z, gamma, model, alpha)
            u0 = math.exp(-coef.s_hat)
            u = rng.uniform(0.0, 60.0)
            y = 10.0 ** rng.uniform(2.0, 6.0)
            bound = coef.r_hat - coef.phi * (u - u0) - coef.psi * (y - coef.y)
            true = _rate_uy(u, y, gamma, model, alpha)
            assert bound <= true + 1e-9
        # and equality at the expansion point itself
        coef = tangent_coefficients(4.0e4, 150.0, 1.2e6, FIT, 2.0)
        u0 = math.exp(-coef.s_hat)
        assert coef.r_hat == pytest.approx(
            _rate_uy(u0, coef.y, 1.2e6, FIT, 2.0), rel=1e-12)

    def test_full_horizontal_surrogate_under_true_rate(self):
        # chain the v tangent and the rate tangent the way the horizontal
        # block does: the composite must sit below the true rate everywhere
        rng = np.random.default_rng(11)
        z = 150.0
        gamma = 1.2e6
        for _ in range(2000):
            d2_hat = rng.uniform(100.0, 4e5)
            d2_new = rng.uniform(100.0, 4e5)
            coef = tangent_coefficients(d2_hat, z, gamma, FIT, 2.0)
            u0 = math.exp(-coef.s_hat)
            s_new = FIT.b1 + FIT.b2 * (
                coef.v_hat - coef.lam * (d2_new - d2_hat))
            u_new = math.exp(-s_new)
            y_new = d2_new + z * z
            bound = (coef.r_hat - coef.phi * (u_new - u0)
                     - coef.psi * (y_new - coef.y))
            v_true = z / math.sqrt(y_new)
            true = rate_from_gain(FIT.predict(v_true), gamma, y_new, 2.0)
            assert bound <= true + 1e-9

    def test_vertical_surrogate_under_true_rate(self):
        # vertical block keeps the exact concave cap s <= b1 + b2 * v(z),
        # so the composite bound at any altitude is the rate tangent
        # evaluated at the true v
        rng = np.random.default_rng(12)
        gamma = 1.2e6
        for _ in range(2000):
            d2 = rng.uniform(100.0, 4e5)
            z_hat = rng.uniform(100.0, 350.0)
            z_new = rng.uniform(100.0, 350.0)
            coef = tangent_coefficients(d2, z_hat, gamma, FIT, 2.0)
            u0 = math.exp(-coef.s_hat)
            y_new = d2 + z_new * z_new
            v_new = z_new / math.sqrt(y_new)
            u_new = math.exp(-(FIT.b1 + FIT.b2 * v_new))
            bound = (coef.r_hat - coef.phi * (u_new - u0)
                     - coef.psi * (y_new - coef.y))
            true = rate_from_gain(FIT.predict(v_new), gamma, y_new, 2.0)
            assert bound <= true + 1e-9


class TestScheduling:
    def test_hand_solved_two_nodes(self):
        # node 0 only earns in slot 1, node 1 only in slot 2; giving each
        # node its own slot yields averages (1.0, 0.5), so eta* = 0.5
        rates = np.array([[2.0, 0.0], [0.0, 1.0]])
        a, eta = solve_scheduling(rates)
        assert eta == pytest.approx(0.5, abs=1e-9)
        assert a[0, 0] == pytest.approx(1.0, abs=1e-8)
        assert a[1, 1] == pytest.approx(1.0, abs=1e-8)

    def test_saturates_every_slot(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            rates = rng.uniform(0.1, 5.0, size=(4, 12))
            a, eta = solve_scheduling(rates)
            assert np.allclose(a.sum(axis=0), 1.0, atol=1e-9)
            totals = np.einsum("nm,nm->n", a, rates)
            assert eta == pytest.approx(totals.min() / 12, abs=1e-12)

    def test_beats_uniform_split(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            rates = rng.uniform(0.0, 3.0, size=(3, 9))
            _, eta = solve_scheduling(rates)
            uniform = (rates.mean(axis=1) / 3).min()
            assert eta >= uniform - 1e-9


class TestRounding:
    def test_argmax_and_inactive_slots(self):
        a = np.array([[0.9, 0.0], [0.1, 0.0]])
        rates = np.ones((2, 2))
        sn = round_schedule(a, rates)
        assert sn[0] == 0
        # the zero column starts unassigned; repair may still claim it
        # because an empty slot donates for free
        assert sn[1] in (-1, 1)

    def test_tie_prefers_lowest_index_then_repairs(self):
        a = np.full((2, 2), 0.5)
        rates = np.ones((2, 2))
        sn = round_schedule(a, rates)
        # argmax ties both slots to node 0; repair hands one to node 1
        assert sorted(sn.tolist()) == [0, 1]

    def test_repair_never_hurts_the_min_average(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            rates = rng.uniform(0.0, 4.0, size=(3, 15))
            a, _ = solve_scheduling(rates)
            sn = round_schedule(a, rates)
            raw = np.argmax(a, axis=0)

            def min_avg(assign):
                return min(rates[n, assign == n].sum() / 15 for n in range(3))

            assert min_avg(sn) >= min_avg(raw) - 1e-12
            # and rounding can never beat the fractional relaxation
            _, eta_frac = solve_scheduling(rates)
            assert min_avg(sn) <= eta_frac + 1e-9


class TestTrajectoryBlocks:
    def test_horizontal_block_improves_single_node(self):
        scen = _scenario([[300.0, 200.0]])
        plan = initialize_plan(scen)
        plan.a, _ = solve_scheduling(
            predicted_rates(plan.q, plan.z, scen, FIT))
        before = plan_eta(plan, predicted_rates(plan.q, plan.z, scen, FIT))
        q_new = solve_horizontal(plan, scen, FIT)
        assert q_new is not None
        after_plan = Plan(q=q_new, z=plan.z, a=plan.a)
        after = plan_eta(after_plan,
                         predicted_rates(q_new, plan.z, scen, FIT))
        assert after > before
        # the path must bend toward the node (it starts on y = 0)
        assert q_new[:, 1].max() > plan.q[:, 1].max() + 1.0

    def test_taut_line_leaves_no_interior(self):
        # exactly enough speed to reach the end point: every speed row is
        # tight, so the subproblem has no strictly feasible start
        scen = _scenario([[500.0, 400.0]], m_slots=20, duration_s=20.0,
                         q0=(0.0, 0.0), qf=(1000.0, 0.0))
        plan = initialize_plan(scen)
        assert solve_horizontal(plan, scen, FIT) is None
        plan2, info = run_bcd(scen, FIT, freeze_vertical=True)
        assert np.allclose(plan2.q, plan.q)
        assert info["converged"]

    def test_vertical_skipped_when_no_climb_speed(self):
        scen = _scenario([[300.0, 200.0]], vz=0.0)
        plan = initialize_plan(scen)
        assert solve_vertical(plan, scen, FIT) is None
        plan2, _ = run_bcd(scen, FIT)
        assert np.allclose(plan2.z, 100.0)

    def test_no_angle_gain_keeps_floor_altitude(self):
        # with b2 = 0 the link gain is angle-independent, so climbing only
        # adds path loss and the optimizer hugs the altitude floor
        flat = LogisticModel(b1=0.0, b2=0.0, c1=0.0, c2=1.0)
        scen = _scenario([[300.0, 400.0]])
        plan, info = run_bcd(scen, flat)
        assert plan.z.max() <= 100.5
        _assert_feasible(plan, scen)

    def test_fitted_model_climbs_over_hovering_point(self):
        # hovering case: generous time, one node right of center; the
        # angle-dependent gain rewards altitude above the node
        scen = _scenario([[500.0, 500.0]], m_slots=16, duration_s=16.0,
                         q0=(200.0, 500.0), qf=(800.0, 500.0))
        plan, info = run_bcd(scen, FIT)
        # climbs right up to the two-slot speed ceiling on the approach leg
        # (and dips back to the floor overhead, where v = 1 at any altitude)
        assert plan.z.max() > 139.0
        mid = plan.n_slots // 2
        assert plan.z[mid] < 110.0
        _assert_feasible(plan, scen)


class TestOuterLoop:
    def test_trace_never_decreases_any_variant(self):
        scen = _scenario([[260.0, 310.0], [700.0, 620.0]], m_slots=10,
                         duration_s=10.0)
        for kw in ({}, {"freeze_vertical": True}, {"los_only": True},
                   {"vertical_linearized": True}):
            plan, info = run_bcd(scen, FIT, **kw)
            tr = np.asarray(info["trace"])
            assert np.all(np.diff(tr) >= -1e-9)
            assert info["eta_model"] == pytest.approx(tr[-1])
            _assert_feasible(plan, scen)

    def test_default_model_is_line_of_sight(self):
        scen = _scenario([[400.0, 300.0]])
        p1, i1 = run_bcd(scen)
        p2, i2 = run_bcd(scen, FIT, los_only=True)
        assert np.array_equal(p1.q, p2.q)
        assert np.array_equal(p1.z, p2.z)
        assert np.array_equal(p1.a, p2.a)
        assert i1["eta_model"] == i2["eta_model"]
        # the LOS gain is pinned at one everywhere
        assert LOS_MODEL.predict(np.linspace(0, 1, 5)) == pytest.approx(1.0)

    def test_matches_brute_force_grid_tiny_case(self):
        # two slots, one free waypoint, frozen altitude: sweep the free
        # waypoint over a fine grid of the reachable lens and compare
        scen = _scenario([[50.0, 80.0]], m_slots=2, duration_s=2.4,
                         q0=(0.0, 0.0), qf=(100.0, 0.0), vxy=50.0)
        gamma = float(scen.snr_gamma_per_sn[0])

        xs = np.linspace(20.0, 80.0, 241)
        ys = np.linspace(0.0, 45.0, 181)
        gx, gy = np.meshgrid(xs, ys)
        ok = ((gx ** 2 + gy ** 2 <= scen.sxy ** 2)
              & ((gx - 100.0) ** 2 + gy ** 2 <= scen.sxy ** 2))

        def true_rate(px, py):
            y3 = (px - 50.0) ** 2 + (py - 80.0) ** 2 + 100.0 ** 2
            v = 100.0 / np.sqrt(y3)
            return rate_from_gain(FIT.predict(v), gamma, y3, 2.0)

        r_end = true_rate(100.0, 0.0)
        eta_grid = 0.5 * (true_rate(gx, gy) + r_end)
        best = eta_grid[ok].max()

        plan, info = run_bcd(scen, FIT, freeze_vertical=True, tol=1e-9,
                             max_iters=100)
        # two-sided: must essentially reach the grid optimum, and must not
        # exceed it by more than the grid resolution allows
        assert info["eta_model"] >= 0.999 * best
        assert info["eta_model"] <= 1.001 * best
        _assert_feasible(plan, scen)

    def test_multi_node_run_uses_every_node(self):
        rng = np.random.default_rng(11)
        scen = _scenario(rng.uniform(0.0, 1000.0, size=(4, 2)), m_slots=12,
                         duration_s=12.0)
        plan, info = run_bcd(scen, FIT)
        owners = round_schedule(
            plan.a, predicted_rates(plan.q, plan.z, scen, FIT))
        assert set(owners[owners >= 0]) == {0, 1, 2, 3}
        assert info["eta_model"] > 0.0
        _assert_feasible(plan, scen)

    def test_plan_shapes_and_initialization(self):
        scen = _scenario([[100.0, 100.0], [600.0, 900.0]], m_slots=5,
                         duration_s=5.0, qf=(200.0, 0.0))
        plan = initialize_plan(scen)
        assert plan.q.shape == (6, 2)
        assert plan.z.shape == (6,)
        assert plan.a.shape == (2, 5)
        assert np.allclose(plan.a.sum(axis=0), 1.0)
        rates = predicted_rates(plan.q, plan.z, scen, FIT)
        assert rates.shape == (2, 5)
        # objective convention: worst node's activity-weighted slot average
        want = min((plan.a * rates).sum(axis=1) / 5)
        assert plan_eta(plan, rates) == pytest.approx(want, rel=1e-12)
        with pytest.raises(ValueError):
            Plan(q=plan.q, z=plan.z[:-1], a=plan.a)
