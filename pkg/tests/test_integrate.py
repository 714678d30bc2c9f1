import numpy as np
import pytest

from vcflock import (ConfigError, Identity, IntegratorConfig, Params, PowerLaw,
                     SaturatingTanh, State, StepFloorHit, integrate, max_speed,
                     min_gap_trace, momentum_sum, rational)

TWO_BODY = State(0.0, [[0.0], [1.0]], [[0.5], [-0.5]])
TWO_BODY_PARAMS = Params(2, 1, 10.0)


def endpoint(traj):
    s = traj.snapshots[-1]
    return np.concatenate([s.q.ravel(), s.p.ravel()])


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            IntegratorConfig(rel_tol=0.0)
        with pytest.raises(ValueError):
            IntegratorConfig(dt_min=1e-3, dt_init=1e-4)
        with pytest.raises(ValueError):
            IntegratorConfig(gap_safety=0.0)
        with pytest.raises(ValueError):
            IntegratorConfig(t_end=-1.0)


class TestBasics:
    def test_equal_momenta_rigid_translation(self):
        q0 = np.array([[0.0, 0.0], [1.0, 0.5], [0.3, 2.0]])
        p0 = np.tile([0.4, -0.2], (3, 1))
        traj = integrate(State(0.0, q0, p0), rational(2.0), Identity(),
                         Params(3, 2, 2.0), IntegratorConfig(t_end=3.0))
        for s in traj.snapshots:
            np.testing.assert_allclose(s.p, p0, atol=1e-12)
            np.testing.assert_allclose(s.q, q0 + s.t * p0, atol=1e-9)
        gaps = np.array([g for _, g in min_gap_trace(traj)])
        np.testing.assert_allclose(gaps, gaps[0], rtol=1e-9)

    def test_two_body_momentum_decay(self):
        cfg = IntegratorConfig(rel_tol=1e-10, abs_tol=1e-12, t_end=5.0, dt_max=0.5)
        traj = integrate(TWO_BODY, rational(2.0), Identity(), TWO_BODY_PARAMS, cfg)
        P = traj.p_array()
        d_p = np.abs(P[:, 0, 0] - P[:, 1, 0])
        assert d_p[-1] < np.exp(-1.0) * d_p[0]
        Q = traj.q_array()
        d_q = np.abs(Q[:, 0, 0] - Q[:, 1, 0])
        assert d_q.max() <= 1.0 + 1e-9  # approaching pair, spread stays bounded

    def test_final_time_exact(self):
        traj = integrate(TWO_BODY, rational(2.0), Identity(), TWO_BODY_PARAMS,
                         IntegratorConfig(t_end=2.5))
        assert traj.snapshots[-1].t == pytest.approx(2.5, abs=1e-12)


class TestConservation:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_momentum_and_max_speed(self, seed):
        rng = np.random.default_rng(seed)
        n, d = 5, 2
        st0 = State(0.0, rng.normal(size=(n, d)), rng.normal(size=(n, d)) * 0.5)
        tol = 1e-10
        cfg = IntegratorConfig(rel_tol=tol, abs_tol=tol * 1e-2, t_end=4.0, dt_max=0.2)
        traj = integrate(st0, rational(1.5), SaturatingTanh(1.0), Params(n, d, 2.0), cfg)
        m0 = momentum_sum(traj.snapshots[0])
        for s in traj.snapshots:
            drift = np.max(np.abs(momentum_sum(s) - m0))
            assert drift <= 100 * tol * (1.0 + s.t)
        speeds = np.array([max_speed(s) for s in traj.snapshots])
        times = traj.times()
        increases = np.diff(speeds) - 10 * tol * np.diff(times)
        assert np.all(increases <= 1e-14)


class TestConvergence:
    def test_error_scales_with_tolerance(self):
        # Error tracks the tolerance roughly linearly for an embedded pair
        # with local extrapolation; a 16x tolerance reduction must pay off
        # by at least 4x (scaling exponent >= 1/2).
        def err_at(rt):
            cfg = IntegratorConfig(rel_tol=rt, abs_tol=rt * 1e-2, t_end=3.0, dt_max=0.5)
            traj = integrate(TWO_BODY, rational(2.0), Identity(), TWO_BODY_PARAMS, cfg)
            return endpoint(traj)

        ref = err_at(1e-13 * 1e2)  # rel_tol 1e-11, 100x tighter than finest probe
        coarse = np.max(np.abs(err_at(1e-5) - ref))
        fine = np.max(np.abs(err_at(1e-5 / 16.0) - ref))
        assert fine <= coarse / 4.0


class TestDeterminism:
    def test_bit_identical(self):
        rng = np.random.default_rng(42)
        st0 = State(0.0, rng.normal(size=(4, 3)), rng.normal(size=(4, 3)) * 0.3)
        cfg = IntegratorConfig(t_end=2.0, dt_max=0.2)
        args = (st0, rational(2.0), SaturatingTanh(0.8), Params(4, 3, 3.0), cfg)
        t1, t2 = integrate(*args), integrate(*args)
        assert len(t1.snapshots) == len(t2.snapshots)
        for a, b in zip(t1.snapshots, t2.snapshots):
            assert a.t == b.t
            np.testing.assert_array_equal(a.q, b.q)
            np.testing.assert_array_equal(a.p, b.p)
        assert t1.events == t2.events


class TestEvents:
    def crossing_run(self, cfg=None):
        st0 = State(0.0, [[0.0, 0.0], [3.0, 0.3]], [[1.0, 0.0], [-1.0, 0.0]])
        cfg = cfg or IntegratorConfig(rel_tol=1e-9, abs_tol=1e-11, t_end=4.0, dt_max=0.2)
        return integrate(st0, rational(2.0), Identity(), Params(2, 2, 0.5), cfg)

    def test_gap_minimum_detected_and_refined(self):
        traj = self.crossing_run()
        evs = [e for e in traj.events if e.kind == "gap_minimum"]
        assert len(evs) == 1 and evs[0].pair == (0, 1)
        # the rate d/dt gap^2 changes sign inside the bracketing snapshots
        times = traj.times()
        k = np.searchsorted(times, evs[0].time)
        gaps = np.array([g for _, g in min_gap_trace(traj)])
        assert gaps.argmin() == np.searchsorted(times, evs[0].time, side="left")

    def test_event_snapshot_holds_extremum(self):
        traj = self.crossing_run()
        ev = [e for e in traj.events if e.kind == "gap_minimum"][0]
        trace = dict(min_gap_trace(traj))
        # two agents passing at perpendicular offset 0.3 under weak coupling
        assert trace[ev.time] == pytest.approx(min(trace.values()), rel=1e-12)
        assert trace[ev.time] < 0.35

    def test_event_sound_against_dense_scan(self):
        traj = self.crossing_run()
        ev = [e for e in traj.events if e.kind == "gap_minimum"][0]
        times = traj.times()
        gaps = np.array([g for _, g in min_gap_trace(traj)])
        interior = (times > times[0]) & (times < times[-1])
        sign_changes = np.where(np.diff(np.sign(np.diff(gaps))) > 0)[0]
        assert len(sign_changes) >= 1
        t_coarse = times[sign_changes[0] + 1]
        assert abs(ev.time - t_coarse) < 0.3

    def test_gap_below_threshold(self):
        cfg = IntegratorConfig(rel_tol=1e-9, abs_tol=1e-11, t_end=4.0, dt_max=0.2,
                               gap_threshold=0.8)
        traj = self.crossing_run(cfg)
        evs = [e for e in traj.events if e.kind == "gap_below_threshold"]
        assert len(evs) == 1
        trace = dict(min_gap_trace(traj))
        assert trace[evs[0].time] == pytest.approx(0.8, abs=1e-6)


class TestSingularRegimes:
    def test_type_iii_collision_avoidance(self):
        cfg = IntegratorConfig(rel_tol=1e-8, abs_tol=1e-10, t_end=50.0, dt_max=0.5)
        traj = integrate(TWO_BODY, PowerLaw(1.5), Identity(), TWO_BODY_PARAMS, cfg)
        gaps = np.array([g for _, g in min_gap_trace(traj)])
        assert gaps.min() > 0.0
        assert not any(e.kind == "step_floor_hit" for e in traj.events)

    def test_type_iii_guard_caps_steps(self):
        cfg = IntegratorConfig(rel_tol=1e-6, abs_tol=1e-8, t_end=5.0, dt_max=5.0,
                               gap_safety=0.5)
        traj = integrate(TWO_BODY, PowerLaw(1.5), Identity(), TWO_BODY_PARAMS, cfg)
        times = traj.times()
        gaps = np.array([g for _, g in min_gap_trace(traj)])
        # dt <= gap_safety * min_gap / (2 M P0): here M=1, P0=0.5 -> dt <= 0.5*gap
        assert np.all(np.diff(times) <= 0.5 * gaps[:-1] * (1 + 1e-9))

    def test_type_ii_rejected_in_higher_dimension(self):
        st0 = State(0.0, np.array([[0.0, 0.0], [1.0, 1.0]]), np.zeros((2, 2)))
        with pytest.raises(ConfigError, match="out of scope"):
            integrate(st0, PowerLaw(0.5), Identity(), Params(2, 2, 1.0),
                      IntegratorConfig(t_end=1.0))

    def test_type_ii_line_allowed(self):
        st0 = State(0.0, [[0.0], [1.0]], [[0.1], [-0.1]])
        traj = integrate(st0, PowerLaw(0.5), Identity(), Params(2, 1, 1.0),
                         IntegratorConfig(t_end=0.2))
        assert traj.snapshots[-1].t == pytest.approx(0.2)

    def test_coincident_positions_rejected(self):
        st0 = State(0.0, [[1.0], [1.0]], [[0.1], [-0.1]])
        with pytest.raises(ConfigError, match="distinct"):
            integrate(st0, PowerLaw(1.5), Identity(), Params(2, 1, 1.0),
                      IntegratorConfig(t_end=1.0))

    def test_step_floor_on_transversal_type_ii_collision(self):
        # untied conserved variables: genuine blow-up at contact
        st0 = State(0.0, [[0.0], [1.0]], [[2.0], [-1.0]])
        cfg = IntegratorConfig(rel_tol=1e-8, abs_tol=1e-10, t_end=5.0,
                               dt_max=0.5, dt_min=1e-10)
        with pytest.raises(StepFloorHit) as exc_info:
            integrate(st0, PowerLaw(0.5), Identity(), Params(2, 1, 1.0), cfg)
        exc = exc_info.value
        assert exc.pair == (0, 1)
        assert exc.trajectory is not None
        assert exc.trajectory.events[-1].kind == "step_floor_hit"
        assert 0.2 < exc.time < 1.0
