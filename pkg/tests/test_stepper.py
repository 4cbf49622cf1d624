import numpy as np
import pytest

from porous.assembly import assemble_stiffness
from porous.constitutive import make_coefficient_set
from porous.errors import ConfigError, StepFailure
from porous.mesh import generate_rect_mesh
from porous.stepper import (
    Scenario,
    SolverOptions,
    State,
    advance,
    moisture_jacobian,
    run,
    theta_step,
    u_step,
    w_step,
    with_options,
)
from porous.verify import oracle_advance, oracle_u_step

from conftest import small_scenario


def logistic_cs(**over):
    sec = {"b": "logistic lo=0.05 hi=0.40 scale=3", "a": "vg ks=2 alpha=1 n=2 kr=0.1",
           "dw": "constant value=1", "lambda": "affine c0=1 c_theta=0.01 c_u=0.005", "rho": "0.5"}
    sec.update(over)
    return make_coefficient_set(sec)


class TestScenario:
    def test_tau_positive(self, linear_cs):
        with pytest.raises(ConfigError, match="tau must be positive"):
            small_scenario(linear_cs, tau=-0.1)

    def test_t_end_multiple_of_tau(self, linear_cs):
        with pytest.raises(ConfigError, match="integer multiple"):
            small_scenario(linear_cs, tau=0.3, t_end=1.0)

    def test_initial_state_imposes_dirichlet(self, linear_cs):
        sc = small_scenario(linear_cs, g_u=0.25)
        s0 = sc.initial_state()
        assert np.all(s0.U[sc.mesh.dirichlet_nodes] == 0.25)

    def test_bounds_include_boundary_level(self, linear_cs):
        sc = small_scenario(linear_cs, g_w=2.0)
        lo, hi = sc.bounds()["w"]
        assert hi == 2.0 and lo == pytest.approx(0.2)

    def test_unknown_source_field(self, linear_cs):
        with pytest.raises(ConfigError, match="unknown field"):
            small_scenario(linear_cs, sources={"v": lambda x, y, t: 0 * x})


class TestMoisture:
    def test_fixed_point(self, linear_cs):
        sc = small_scenario(linear_cs, u0=0.0, markers={"left": "D"})
        U, it, res, _ = u_step(sc.initial_state(), sc)
        assert np.all(U == 0.0) and it == 0

    def test_linear_b_is_backward_euler(self, linear_cs, two_triangle):
        sc = Scenario(two_triangle, linear_cs, 0.1, 0.1, u0=lambda x, y: x + 2 * y, w0=0.0, theta0=0.0)
        prev = sc.initial_state()
        U, it, _, _ = u_step(prev, sc)
        K = assemble_stiffness(two_triangle, np.ones(4)).toarray()
        M = two_triangle.node_areas
        A = np.diag(M / sc.tau) + K
        rhs = M * prev.U / sc.tau
        D, F = two_triangle.dirichlet_nodes, two_triangle.free_nodes
        ref = prev.U.copy()
        ref[D] = 0.0
        ref[F] = np.linalg.solve(A[np.ix_(F, F)], rhs[F] - A[np.ix_(F, D)] @ ref[D])
        np.testing.assert_allclose(U, ref, atol=1e-10)
        assert it == 1

    def test_logistic_matches_nodal_oracle(self):
        sc = small_scenario(logistic_cs(), n=4, tau=0.1, g_u=0.0)
        prev = sc.initial_state()
        U, it, res, _ = u_step(prev, sc)
        assert it <= 20
        np.testing.assert_allclose(U, oracle_u_step(prev, sc), atol=1e-8)

    def test_newton_residual_decreases(self, monkeypatch):
        import porous.stepper as stepper

        seen = []
        orig = stepper.cg_solve

        def spy(J, rhs, **kw):
            seen.append(np.linalg.norm(rhs))
            return orig(J, rhs, **kw)

        monkeypatch.setattr(stepper, "cg_solve", spy)
        sc = small_scenario(logistic_cs(), n=4, tau=0.5, u0=-12.0)
        u_step(sc.initial_state(), sc)
        assert len(seen) >= 2
        assert all(b < a for a, b in zip(seen, seen[1:]))

    def test_jacobian_spd_on_free_space(self, rng):
        sc = small_scenario(logistic_cs(), n=5, tau=0.2, t_end=0.2)
        mesh, cs = sc.mesh, sc.coeffs
        prev = sc.initial_state()
        K = assemble_stiffness(mesh, cs.a(prev.Th))
        for U in (prev.U, prev.U - 30.0, rng.uniform(-40, 5, mesh.n_nodes)):
            J = moisture_jacobian(mesh, K, cs, U, sc.tau).toarray()
            F = mesh.free_nodes
            X = rng.standard_normal((50, F.size))
            assert np.all(np.einsum("ki,ij,kj->k", X, J[np.ix_(F, F)], X) > 0)

    def test_newton_failure(self):
        # a sharp front into the dry tail needs 8 iterations; allow 2
        sc = small_scenario(logistic_cs(b="logistic lo=0.001 hi=0.40 scale=3"), n=8, tau=1e-4, t_end=1e-4,
                            u0=-45.0, solver=SolverOptions(newton_max_iter=2))
        with pytest.raises(StepFailure, match="step 1"):
            advance(sc.initial_state(), sc)


class TestTransport:
    def test_constant_preservation(self, linear_cs):
        sc = small_scenario(linear_cs, u0=0.0, w0=0.7, theta0=-0.3, g_u=0.0, g_w=0.7, g_theta=-0.3)
        prev = sc.initial_state()
        W, _ = w_step(prev, prev.U, sc)
        Th, _ = theta_step(prev, prev.U, sc)
        np.testing.assert_allclose(W, 0.7, atol=1e-13)
        np.testing.assert_allclose(Th, -0.3, atol=1e-13)

    def test_large_heat_capacity_freezes_theta(self):
        sc = small_scenario(logistic_cs(rho="1e8"), n=4, tau=0.1)
        prev = sc.initial_state()
        U, *_ = u_step(prev, sc)
        Th, _ = theta_step(prev, U, sc)
        F = sc.mesh.free_nodes
        assert np.abs(Th[F] - prev.Th[F]).max() <= 1e-6

    def test_w_step_affine_in_w_prev(self, rng):
        sc = small_scenario(logistic_cs(), n=5, tau=0.1, solver=SolverOptions(lin_rtol=1e-15))
        prev = sc.initial_state()
        U, *_ = u_step(prev, sc)

        def step(w):
            return w_step(State(prev.t, prev.U, w, prev.Th), U, sc)[0]

        w1, w2 = rng.standard_normal((2, sc.mesh.n_nodes))
        lhs = step(0.3 * w1 + 0.7 * w2)
        np.testing.assert_allclose(lhs, 0.3 * step(w1) + 0.7 * step(w2), atol=1e-12)

    def test_strip_diffusion_matches_1d_reference(self):
        # b constant, no convection: W_new solves (M/tau + K) W = M W_prev / tau
        cs = make_coefficient_set({"b": "linear slope=1e-9 offset=1", "a": "constant value=1",
                                   "dw": "constant value=10", "lambda": "constant value=1", "rho": "1", "b2": "2"})
        n = 20
        mesh = generate_rect_mesh(n, 1, 1.0, 0.05, {"left": "D", "right": "D"})
        sc = Scenario(mesh, cs, 0.01, 0.01, u0=0.0, w0=lambda x, y: np.sin(np.pi * x), theta0=0.0)
        prev = sc.initial_state()
        W, _ = w_step(prev, prev.U, sc)
        # 1D implicit step with lumped mass on the same grid
        h, tau, D = 1.0 / n, 0.01, 10.0 * float(cs.b(0.0))
        x = np.linspace(0, 1, n + 1)
        A = np.diag(np.full(n - 1, h / tau + 2 * D / h)) + np.diag(np.full(n - 2, -D / h), 1) \
            + np.diag(np.full(n - 2, -D / h), -1)
        w1 = np.linalg.solve(A, h / tau * np.sin(np.pi * x[1:-1]))
        np.testing.assert_allclose(W[: n + 1][1:-1], w1, atol=1e-9)
        np.testing.assert_allclose(W[n + 1:][1:-1], w1, atol=1e-9)


class TestAdvance:
    def test_matches_dense_oracle(self, two_triangle, rng):
        cs = logistic_cs()
        sc = Scenario(two_triangle, cs, 0.1, 0.1, u0=lambda x, y: -4 + x, w0=lambda x, y: 0.2 + 0.3 * y,
                      theta0=lambda x, y: -1 + x * y, g_w=1.0)
        prev = sc.initial_state()
        new, rep = advance(prev, sc)
        ref = oracle_advance(prev, sc)
        for a, b in ((new.U, ref.U), (new.W, ref.W), (new.Th, ref.Th)):
            np.testing.assert_allclose(a, b, atol=1e-10)
        assert new.t == pytest.approx(0.1) and rep.step == 1

    def test_time_bookkeeping(self, linear_cs):
        sc = small_scenario(linear_cs, tau=0.1, t_end=1.0)
        s = sc.initial_state()
        for n in range(1, 11):
            s, _ = advance(s, sc)
            assert s.t == n * 0.1
        assert s.t == 1.0

    def test_steady_state_is_preserved(self, linear_cs):
        sc = small_scenario(linear_cs, tau=0.01, t_end=1.0, u0=0.2, w0=0.4, theta0=0.6,
                            g_u=0.2, g_w=0.4, g_theta=0.6)
        s0 = sc.initial_state()
        s = s0
        for _ in range(100):
            s, _ = advance(s, sc)
        for a, b in ((s.U, s0.U), (s.W, s0.W), (s.Th, s0.Th)):
            assert np.abs(a - b).max() <= 1e-12

    def test_upwind_option_runs(self):
        sc = with_options(small_scenario(logistic_cs(), n=4), upwind=True)
        s, _ = advance(sc.initial_state(), sc)
        assert np.all(np.isfinite(s.W))


class _Recorder:
    def __init__(self):
        self.rows, self.closed = [], False

    def start(self, state, row):
        self.rows.append(row)

    def step(self, state, row):
        self.rows.append(row)

    def close(self):
        self.closed = True


class TestRun:
    def test_zero_end_time(self, linear_cs):
        rec = _Recorder()
        summary = run(small_scenario(linear_cs, t_end=0.0), sinks=[rec])
        assert summary.steps == 0 and len(rec.rows) == 1 and rec.closed

    def test_sinks_closed_on_failure(self):
        sc = small_scenario(logistic_cs(b="logistic lo=0.001 hi=0.40 scale=3"), n=8, tau=1e-4, t_end=2e-4,
                            u0=-45.0, solver=SolverOptions(newton_max_iter=2))
        rec = _Recorder()
        with pytest.raises(StepFailure):
            run(sc, sinks=[rec])
        assert rec.closed and len(rec.rows) == 1

    def test_deterministic(self):
        sc = small_scenario(logistic_cs(), n=4, tau=0.05, t_end=0.25)
        a = [r.csv_values() for r in run(sc).rows]
        b = [r.csv_values() for r in run(sc).rows]
        assert a == b

    def test_all_neumann_warns_outside_test_mode(self, linear_cs, caplog):
        sc = small_scenario(linear_cs, markers={}, t_end=0.05)
        run(sc)
        assert "all-Neumann" in caplog.text
