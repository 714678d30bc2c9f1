import math

import numpy as np
import pytest

from vcflock import (Identity, InsufficientData, IntegratorConfig, Params,
                     PowerLaw, SaturatingTanh, State, integrate, rational)
from vcflock.diagnostics import (Certificate, collision_certificate,
                                 detect_bicluster, detect_flocking,
                                 dispersions, flocking_certificate, lyapunov,
                                 lyapunov_series, regularity_certificate,
                                 verify_dissipation)

TWO_BODY = State(0.0, [[0.0], [1.0]], [[0.5], [-0.5]])


@pytest.fixture(scope="module")
def flocking_run():
    cfg = IntegratorConfig(rel_tol=1e-10, abs_tol=1e-12, t_end=6.0, dt_max=0.01)
    return integrate(TWO_BODY, rational(2.0), Identity(), Params(2, 1, 10.0), cfg)


@pytest.fixture(scope="module")
def bicluster_run():
    rng = np.random.default_rng(5)
    qA = rng.uniform(-0.2, 0.2, size=(4, 1)) - 2.0
    qB = rng.uniform(-0.2, 0.2, size=(4, 1)) + 2.0
    pA = -1.0 + rng.uniform(-0.01, 0.01, size=(4, 1))
    pB = 1.0 + rng.uniform(-0.01, 0.01, size=(4, 1))
    st = State(0.0, np.vstack([qA, qB]), np.vstack([pA, pB]))
    cfg = IntegratorConfig(rel_tol=1e-9, abs_tol=1e-11, t_end=20.0, dt_max=0.1)
    return integrate(st, rational(2.0), Identity(), Params(8, 1, 5.0), cfg)


class TestDispersions:
    def test_two_point(self):
        r = dispersions(State(0.0, [[0.0], [1.0]], [[0.0], [0.0]]))
        assert r.d_q == 1.0
        assert r.norm_q == pytest.approx(math.sqrt(2.0), rel=1e-15)

    def test_identical_agents(self):
        st = State(0.0, np.ones((4, 2)), np.ones((4, 2)) * 0.3)
        r = dispersions(st)
        assert (r.d_p, r.d_q, r.norm_p, r.norm_q) == (0.0, 0.0, 0.0, 0.0)

    def test_three_point_ordered_pairs(self):
        # ordered pairs double count: 2*(1+4+9) = 28
        r = dispersions(State(0.0, [[0.0], [1.0], [3.0]], np.zeros((3, 1))))
        assert r.d_q == 3.0
        assert r.norm_q ** 2 == pytest.approx(28.0, rel=1e-14)

    def test_subset(self):
        st = State(0.0, [[0.0], [1.0], [3.0]], [[1.0], [2.0], [9.0]])
        r = dispersions(st, subset=(0, 1))
        assert r.d_q == 1.0 and r.d_p == 1.0
        assert r.subset == (0, 1)
        np.testing.assert_allclose(r.mean_momentum, [1.5])

    def test_norm_dominates_max(self):
        rng = np.random.default_rng(0)
        st = State(0.0, rng.normal(size=(6, 3)), rng.normal(size=(6, 3)))
        r = dispersions(st)
        assert r.d_q <= r.norm_q and r.d_p <= r.norm_p

    def test_bad_subset(self):
        st = State(0.0, np.zeros((3, 1)), np.zeros((3, 1)))
        with pytest.raises(ValueError):
            dispersions(st, subset=())
        with pytest.raises(ValueError):
            dispersions(st, subset=(0, 3))


class TestLyapunov:
    def test_initial_value_is_momentum_norm(self):
        gb = Identity().bounds(1.0)
        r = dispersions(TWO_BODY)
        val = lyapunov(TWO_BODY, r.norm_q, rational(2.0), gb, 10.0)
        assert val == pytest.approx(r.norm_p, rel=1e-15)

    def test_monotone_along_run(self, flocking_run):
        gb = Identity().bounds(1.0)
        L = lyapunov_series(flocking_run, rational(2.0), gb, 10.0)
        assert L[0] == pytest.approx(math.sqrt(2.0), rel=1e-12)
        assert np.max(np.diff(L)) <= 1e-6

    def test_constant_for_aligned_state(self):
        st = State(0.0, [[0.0], [1.0]], [[0.3], [0.3]])
        gb = Identity().bounds(0.3)
        r = dispersions(st)
        assert lyapunov(st, r.norm_q, rational(2.0), gb, 1.0) == 0.0


class TestFlockingCertificate:
    def test_strong_coupling_holds(self):
        cert = flocking_certificate(TWO_BODY, rational(2.0), Identity(), 10.0)
        assert cert.holds
        # threshold = kappa / (1 + sqrt(2)) for this data
        assert cert.margin + cert.inputs["norm_p0"] == pytest.approx(
            10.0 / (1.0 + math.sqrt(2.0)), rel=1e-12)
        assert cert.inputs["M_script"] == 1.0

    def test_weak_coupling_inconclusive(self):
        cert = flocking_certificate(TWO_BODY, rational(2.0), Identity(), 1.0)
        assert not cert.holds
        assert cert.margin < 0

    def test_nonintegrable_tail_unconditional(self):
        for kern in (PowerLaw(0.5), PowerLaw(1.0), rational(1.0)):
            cert = flocking_certificate(TWO_BODY, kern, Identity(), 1e-6)
            assert cert.holds and cert.margin == math.inf

    def test_json_roundtrip(self):
        cert = flocking_certificate(TWO_BODY, PowerLaw(0.5), Identity(), 1.0)
        d = cert.to_dict()
        assert d["margin"] == "inf"
        assert d["kind"] == "flocking"
        assert isinstance(d["inputs"]["norm_p0"], float)

    def test_margin_sign_consistency(self):
        with pytest.raises(ValueError):
            Certificate(kind="flocking", holds=True, margin=-1.0)


class TestCollisionCertificate:
    def test_zero_momentum_spread(self):
        st = State(0.0, [[0.0], [1.0]], [[0.3], [0.3]])
        cert = collision_certificate(st, rational(2.0), Identity(), 1.0)
        assert cert.holds
        assert cert.inputs["bound"] == pytest.approx(1.0, rel=1e-9)

    def test_strong_coupling_bound(self):
        # max-min margin for this data crosses feasibility near kappa ~ 14.3
        cert = collision_certificate(TWO_BODY, rational(2.0), Identity(), 20.0)
        assert cert.holds
        assert 0.0 < cert.inputs["bound"] < 1.0

    def test_weak_coupling_infeasible(self):
        cert = collision_certificate(TWO_BODY, rational(2.0), Identity(), 5.0)
        assert not cert.holds
        assert cert.inputs["bound"] is None

    def test_feasibility_threshold_bracketed(self):
        # at the max-min radius, int = psi * min_gap: crossing solves
        # u^2 + u = 1/(1+norm_q0) with u = 1/(1+M); feasible iff
        # norm_p0/kappa < u^2, i.e. kappa > norm_p0 / u^2
        q0n = math.sqrt(2.0)
        u = (-1.0 + math.sqrt(1.0 + 4.0 / (1.0 + q0n))) / 2.0
        kappa_star = math.sqrt(2.0) / u**2
        assert not collision_certificate(TWO_BODY, rational(2.0), Identity(),
                                         kappa_star * 0.98).holds
        assert collision_certificate(TWO_BODY, rational(2.0), Identity(),
                                     kappa_star * 1.02).holds

    def test_type_iii_supported(self):
        cert = collision_certificate(TWO_BODY, PowerLaw(1.5), Identity(), 10.0)
        assert cert.holds
        assert cert.inputs["bound"] > 0.5

    def test_single_agent_vacuous(self):
        st = State(0.0, [[0.0]], [[1.0]])
        assert collision_certificate(st, rational(2.0), Identity(), 1.0).holds

    def test_coincident_positions_never_certified(self):
        st = State(0.0, [[0.0], [0.0]], [[0.1], [0.2]])
        assert not collision_certificate(st, rational(2.0), Identity(), 1.0).holds


class TestRegularityCertificate:
    def test_packaging(self):
        gb = Identity().bounds(1.0)
        cert = regularity_certificate(2, 0.5, gb)
        assert cert.inputs["K"] == pytest.approx(0.5)
        assert cert.inputs["gamma_sup"] == pytest.approx(2.0)


class TestDetectFlocking:
    def test_certified_run_detected(self, flocking_run):
        ok, rate = detect_flocking(flocking_run)
        assert ok
        sup_q = max(dispersions(s).norm_q for s in flocking_run.snapshots)
        bound = 10.0 * 1.0 * rational(2.0).psi(sup_q)
        assert rate >= 0.9 * bound

    def test_bicluster_run_not_detected(self, bicluster_run):
        ok, rate = detect_flocking(bicluster_run)
        assert not ok

    def test_single_agent_vacuous(self):
        traj = integrate(State(0.0, [[0.0]], [[1.0]]), rational(2.0), Identity(),
                         Params(1, 1, 1.0), IntegratorConfig(t_end=2.0, dt_max=0.05))
        ok, rate = detect_flocking(traj)
        assert ok and rate == math.inf

    def test_insufficient_samples(self):
        traj = integrate(TWO_BODY, rational(2.0), Identity(), Params(2, 1, 1.0),
                         IntegratorConfig(t_end=0.5, dt_max=0.5))
        with pytest.raises(InsufficientData):
            detect_flocking(traj)


class TestDetectBicluster:
    def test_planted_partition_recovered(self, bicluster_run):
        res = detect_bicluster(bicluster_run)
        assert res is not None
        group, rest = res
        assert sorted(group + rest) == list(range(8))
        assert set(group) in ({0, 1, 2, 3}, {4, 5, 6, 7})

    def test_mono_run_rejected(self, flocking_run):
        assert detect_bicluster(flocking_run) is None

    def test_comoving_pair_rejected(self):
        st = State(0.0, [[0.0], [1.0]], [[0.2], [0.2]])
        traj = integrate(st, rational(2.0), Identity(), Params(2, 1, 1.0),
                         IntegratorConfig(t_end=5.0, dt_max=0.1))
        assert detect_bicluster(traj) is None


class TestVerifyDissipation:
    def test_aligned_state_trivial(self):
        st = State(0.0, [[0.0], [1.0]], [[0.3], [0.3]])
        traj = integrate(st, rational(2.0), Identity(), Params(2, 1, 1.0),
                         IntegratorConfig(rel_tol=1e-10, abs_tol=1e-12,
                                          t_end=1.0, dt_max=0.005))
        v = verify_dissipation(traj, None, rational(2.0), Identity(),
                               Params(2, 1, 1.0))
        assert v <= 1e-8

    def test_full_system_two_body(self):
        # planar pair that never crosses: pair distance stays smooth, so
        # the differencing error stays second order
        st = State(0.0, [[0.0, 0.0], [1.0, 0.5]], [[0.1, -0.05], [-0.1, 0.05]])
        params = Params(2, 2, 1.2)
        cfg = IntegratorConfig(rel_tol=1e-10, abs_tol=1e-12, t_end=4.0, dt_max=0.005)
        traj = integrate(st, rational(2.0), Identity(), params, cfg)
        v = verify_dissipation(traj, None, rational(2.0), Identity(), params)
        assert v <= 1e-5

    def test_random_subset_five_agents(self):
        rng = np.random.default_rng(0)
        st = State(0.0, rng.normal(size=(5, 2)), rng.normal(size=(5, 2)) * 0.3)
        params = Params(5, 2, 1.5)
        cfg = IntegratorConfig(rel_tol=1e-10, abs_tol=1e-12, t_end=2.0, dt_max=0.005)
        traj = integrate(st, rational(2.0), SaturatingTanh(1.0), params, cfg)
        for sub in [None, (0, 2, 4), (1, 3)]:
            v = verify_dissipation(traj, sub, rational(2.0), SaturatingTanh(1.0),
                                   params)
            assert v <= 1e-4
