import math

import numpy as np
import pytest

from strictlyap import dynsys, verify
from strictlyap.dynsys import ControlSystem, Signal, close_loop, integrate, lyapunov_along
from strictlyap.fixtures import rigid_body


def _decay_system():
    return ControlSystem(1, 0, lambda t, x, u: -x, period=1.0, label="decay")


class TestIntegrate:
    def test_scalar_linear_closed_form(self):
        tr = integrate(_decay_system(), [1.0], 0.0, 1.0, Signal.zero(0), 1e-3)
        assert tr.states[-1, 0] == pytest.approx(math.exp(-1.0), abs=1e-9)
        assert tr.times[-1] == 1.0

    def test_harmonic_oscillator_period(self):
        sys = ControlSystem(2, 0, lambda t, x, u: np.array([x[1], -x[0]]))
        tr = integrate(sys, [1.0, 0.0], 0.0, 2 * math.pi, Signal.zero(0), 1e-3)
        assert np.linalg.norm(tr.states[-1] - np.array([1.0, 0.0])) < 1e-6

    def test_rigid_body_v_nonincreasing_without_disturbance(self):
        rb = rigid_body()
        tr = integrate(rb.system, [1.0, 1.0, 1.0], 0.0, 5.0, Signal.zero(2), 1e-3)
        v = np.asarray(rb.candidate.V(tr.times, tr.states))
        assert np.all(np.diff(v) <= 1e-9)

    def test_rk4_order(self):
        exact = math.exp(-1.0)
        errs = []
        for step in (0.02, 0.01):
            tr = integrate(_decay_system(), [1.0], 0.0, 1.0, Signal.zero(0), step)
            errs.append(abs(tr.states[-1, 0] - exact))
        ratio = errs[0] / errs[1]
        assert 14.0 <= ratio <= 18.0

    def test_last_step_shortened(self):
        tr = integrate(_decay_system(), [1.0], 0.0, 0.0105, Signal.zero(0), 1e-2)
        assert tr.times[-1] == pytest.approx(0.0105, abs=0)
        assert len(tr.times) == 3  # 0, 0.01, 0.0105

    def test_blow_up_detected(self):
        sys = ControlSystem(1, 0, lambda t, x, u: x ** 2, label="escape")
        with pytest.raises(dynsys.BlowUpError) as ei:
            integrate(sys, [1.0], 0.0, 2.0, Signal.zero(0), 1e-4)
        assert 0.9 < ei.value.time <= 1.1  # escape time of dx = x^2 from 1 is t = 1

    def test_time_shift_consistency_periodic(self):
        T = 2 * math.pi
        sys = ControlSystem(1, 1, lambda t, x, u: -x + np.sin(t) * u, period=T)
        u = Signal(lambda t: np.array([0.5]) if np.isscalar(t)
                   else np.full((len(t), 1), 0.5), 1, sup_bound=0.5)
        a = integrate(sys, [1.0], 0.0, 3.0, u, 1e-3)
        b = integrate(sys, [1.0], T, T + 3.0, u, 1e-3)
        assert np.allclose(a.states, b.states, atol=1e-9)

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            integrate(_decay_system(), [1.0], 1.0, 0.5, Signal.zero(0))
        with pytest.raises(ValueError):
            integrate(_decay_system(), [1.0, 2.0], 0.0, 1.0, Signal.zero(0))


class TestCloseLoop:
    def test_rigid_body_structure(self):
        rb = rigid_body()
        closed = close_loop(rb.open_system, rb.feedback)
        assert closed.n == 3 and closed.m == 2
        rng = np.random.default_rng(5)
        for _ in range(50):
            t = rng.uniform(0, 2 * math.pi)
            x = rng.normal(size=3)
            u = rng.normal(size=2)
            assert np.allclose(closed.f(t, x, u), rb.system.f(t, x, u), atol=1e-12)

    def test_zero_feedback_identity(self):
        sys = ControlSystem(1, 2, lambda t, x, u: np.atleast_1d(u[..., 0] + u[..., 1]))
        closed = close_loop(sys, lambda t, x: np.zeros(1))
        assert closed.m == 1
        assert closed.f(0.0, np.zeros(1), np.array([2.0]))[0] == 2.0

    def test_scalar_feedback(self):
        sys = ControlSystem(1, 2, lambda t, x, u: np.atleast_1d(u[..., 0] + u[..., 1]))
        closed = close_loop(sys, lambda t, x: -x)
        val = closed.f(0.0, np.array([3.0]), np.array([1.0]))
        assert val[0] == pytest.approx(-2.0)

    def test_dimension_mismatch(self):
        sys = ControlSystem(1, 1, lambda t, x, u: -x)
        with pytest.raises(ValueError):
            close_loop(sys, lambda t, x: np.zeros(2))


class TestLyapunovAlong:
    def test_constant_zero_trajectory(self):
        sys = ControlSystem(1, 0, lambda t, x, u: np.zeros(1))
        tr = integrate(sys, [0.0], 0.0, 1.0, Signal.zero(0), 1e-2)
        out = lyapunov_along(tr, lambda t, x: (np.asarray(x) ** 2).sum(axis=-1))
        assert np.all(out["V"] == 0.0)
        assert np.all(out["dV_fd"] == 0.0)

    def test_matches_chain_rule(self):
        tr = integrate(_decay_system(), [1.0], 0.0, 2.0, Signal.zero(0), 1e-3)
        out = lyapunov_along(tr, lambda t, x: 0.5 * (np.asarray(x) ** 2).sum(axis=-1))
        expected = -tr.states[:, 0] ** 2
        assert np.abs(out["dV_fd"][1:-1] - expected[1:-1]).max() < 1e-5

    def test_rigid_body_matches_analytic_derivative(self):
        rb = rigid_body()
        tr = integrate(rb.system, [1.0, -1.0, 2.0], 0.0, 3.0, Signal.zero(2), 1e-3)
        out = lyapunov_along(tr, rb.candidate.V)
        analytic = verify.vdot(rb.candidate, rb.system, tr.times, tr.states,
                               np.zeros((len(tr.times), 2)))
        sel = np.abs(analytic[1:-1]) > 1e-2
        rel = np.abs(out["dV_fd"][1:-1][sel] - analytic[1:-1][sel]) / np.abs(analytic[1:-1][sel])
        assert rel.max() < 1e-4


class TestSignals:
    def test_piecewise(self):
        seg = Signal.piecewise([(1.0, Signal.constant([2.0])),
                                (np.inf, Signal.constant([5.0]))], 1)
        assert seg(0.5)[0] == 2.0
        assert seg(1.5)[0] == 5.0
        assert seg.sup_bound == 5.0

    def test_vectorized_constant(self):
        c = Signal.constant([1.0, -2.0])
        out = c(np.linspace(0, 1, 4))
        assert out.shape == (4, 2)
        assert np.all(out[:, 1] == -2.0)

    def test_declared_sup_bound_holds(self):
        rb = rigid_body()
        sig = rb.sim.runs[1].signal
        ts = np.linspace(0, 60, 2001)
        norms = np.linalg.norm(sig(ts), axis=1)
        assert norms.max() <= sig.sup_bound + 1e-12


def test_trajectory_csv_schema(tmp_path):
    rb = rigid_body()
    tr = integrate(rb.system, [1.0, 0.0, 0.0], 0.0, 0.01, Signal.zero(2), 1e-3)
    path = tmp_path / "traj.csv"
    v = np.asarray(rb.candidate.V(tr.times, tr.states))
    dynsys.write_trajectory_csv(path, tr, {"V": v})
    lines = path.read_text().splitlines()
    assert lines[0] == "t,x1,x2,x3,u1,u2,V"
    assert len(lines) == len(tr.times) + 1
