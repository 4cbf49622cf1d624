"""Semi-implicit Rothe stepper for the coupled moisture/solute/heat system.

One step from level n-1 to n:

1. moisture:  (1/tau) M_L (b(U^n) - b(U^{n-1})) + K(a(Th^{n-1})) U^n = F_u
   solved by damped Newton with Jacobian (1/tau) M_L diag(b'(U)) + K;
2. solute:    (1/tau) M_L (b(U^n) W^n - b(U^{n-1}) W^{n-1})
              + K(b(U^{n-1}) D_w(U^{n-1})) W^n + C(a(Th^{n-1}), U^n) W^n = F_w;
3. heat:      (1/tau) M_L ((b(U^n) + rho) Th^n - (b(U^{n-1}) + rho) Th^{n-1})
              + K(lambda(Th^{n-1}, U^{n-1})) Th^n + C(a(Th^{n-1}), U^n) Th^n = F_th.

Steps 2 and 3 are linear and independent of each other given U^n.
Coefficients are lagged, the convection uses the fresh U^n, and nothing is
floored: a singular system fails the step instead of being regularised.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np

from .assembly import apply_dirichlet, assemble_convection, assemble_stiffness, discrete_upwind
from .constitutive import CoefficientSet
from .errors import ConfigError, LinearSolverError, NewtonError, StepFailure
from .linalg import SolveStats, bicgstab_solve, cg_solve
from .mesh import Mesh

log = logging.getLogger(__name__)

__all__ = [
    "SolverOptions",
    "Scenario",
    "State",
    "StepReport",
    "RunSummary",
    "u_step",
    "w_step",
    "theta_step",
    "advance",
    "run",
    "moisture_jacobian",
]

FIELDS = ("u", "w", "theta")

# residual floor for warm-started linear solves, relative to the rhs norm
_ROUNDOFF = 1e3 * np.finfo(float).eps


@dataclass(frozen=True)
class SolverOptions:
    newton_rtol: float = 1e-9
    newton_max_iter: int = 50
    lin_rtol: float = 1e-10
    lin_max_iter: int | None = None
    upwind: bool = False


@dataclass(frozen=True)
class State:
    t: float
    U: np.ndarray
    W: np.ndarray
    Th: np.ndarray


def _nodal(spec, mesh, t=None):
    """Evaluate a scalar, a nodal array or a callable ``f(x, y[, t])`` at the nodes."""
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    if callable(spec):
        val = spec(x, y) if t is None else spec(x, y, t)
    else:
        val = spec
    out = np.array(np.broadcast_to(np.asarray(val, dtype=float), (mesh.n_nodes,)))
    if not np.all(np.isfinite(out)):
        raise ConfigError("nodal field contains non-finite values")
    return out


@dataclass(frozen=True)
class Scenario:
    """Everything needed to run the scheme on one mesh.

    ``u0``, ``w0``, ``theta0`` are scalars, nodal arrays or callables of
    ``(x, y)``.  ``sources`` optionally maps a field name to ``f(x, y, t)``;
    ``exact_boundary`` optionally maps a field name to ``g(x, y, t)`` and
    overrides the constant Dirichlet level (used for manufactured solutions).
    """

    mesh: Mesh
    coeffs: CoefficientSet
    tau: float
    t_end: float
    u0: object
    w0: object
    theta0: object
    g_u: float = 0.0
    g_w: float = 0.0
    g_theta: float = 0.0
    sources: Mapping[str, Callable] = field(default_factory=dict)
    exact_boundary: Mapping[str, Callable] = field(default_factory=dict)
    solver: SolverOptions = SolverOptions()
    test_mode: bool = False
    name: str = "scenario"

    def __post_init__(self):
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ConfigError("tau must be positive")
        if not (self.t_end >= 0 and math.isfinite(self.t_end)):
            raise ConfigError("t_end must be nonnegative")
        p = round(self.t_end / self.tau)
        if abs(p * self.tau - self.t_end) > 1e-9 * max(self.t_end, self.tau):
            raise ConfigError(f"t_end = {self.t_end} is not an integer multiple of tau = {self.tau}")
        for key in list(self.sources) + list(self.exact_boundary):
            if key not in FIELDS:
                raise ConfigError(f"unknown field {key!r}")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.tau))

    def time(self, n: int) -> float:
        return n * self.tau

    def dirichlet_level(self, name):
        return {"u": self.g_u, "w": self.g_w, "theta": self.g_theta}[name]

    def boundary_values(self, name, t):
        """Values on ``mesh.dirichlet_nodes`` at time ``t``."""
        D = self.mesh.dirichlet_nodes
        if name in self.exact_boundary:
            x, y = self.mesh.nodes[D, 0], self.mesh.nodes[D, 1]
            return np.broadcast_to(np.asarray(self.exact_boundary[name](x, y, t), dtype=float), D.shape).copy()
        return np.full(D.shape, float(self.dirichlet_level(name)))

    def source(self, name, t):
        """Lumped load vector ``M_L f(., t)`` or ``None`` without a source."""
        if name not in self.sources:
            return None
        return self.mesh.node_areas * _nodal(self.sources[name], self.mesh, t)

    def initial_state(self) -> State:
        m = self.mesh
        U, W, Th = _nodal(self.u0, m), _nodal(self.w0, m), _nodal(self.theta0, m)
        D = m.dirichlet_nodes
        U[D] = self.boundary_values("u", 0.0)
        W[D] = self.boundary_values("w", 0.0)
        Th[D] = self.boundary_values("theta", 0.0)
        return State(0.0, U, W, Th)

    def bounds(self):
        """Maximum-principle box ``(m, M)`` per field from initial and boundary data."""
        s0 = self.initial_state()
        out = {}
        for name, arr in zip(FIELDS, (s0.U, s0.W, s0.Th)):
            g = self.dirichlet_level(name)
            if self.mesh.dirichlet_nodes.size == 0:
                out[name] = (float(arr.min()), float(arr.max()))
            else:
                out[name] = (float(min(arr.min(), g)), float(max(arr.max(), g)))
        return out


@dataclass
class StepReport:
    step: int
    newton_iters: int
    newton_residual: float
    u_solve: SolveStats
    w_solve: SolveStats
    theta_solve: SolveStats
    diagnostics: object = None


# ---------------------------------------------------------------------------
# moisture
# ---------------------------------------------------------------------------


def _next_time(prev, sc):
    return sc.time(int(round(prev.t / sc.tau)) + 1)


def moisture_jacobian(mesh, K, cs, U, tau):
    """``(1/tau) M_L diag(b'(U)) + K`` on the stiffness pattern (no constraints)."""
    data = K.data.copy()
    data[mesh.pattern.diag] += mesh.node_areas * cs.b.deriv(U) / tau
    return mesh.pattern.from_data(data)


def u_step(prev: State, sc: Scenario):
    """Solve the moisture equation for U^n by damped Newton.

    Returns ``(U_new, newton_iters, newton_residual, SolveStats)`` where the
    stats aggregate the inner CG solves.
    """
    mesh, cs, tau, opts = sc.mesh, sc.coeffs, sc.tau, sc.solver
    t = _next_time(prev, sc)
    M = mesh.node_areas
    D = mesh.dirichlet_nodes
    K = assemble_stiffness(mesh, cs.a(prev.Th))
    f = sc.source("u", t)
    load = np.zeros(mesh.n_nodes) if f is None else f
    b_prev = cs.b(prev.U)

    def residual(U):
        r = M * (cs.b(U) - b_prev) / tau + K @ U - load
        r[D] = 0.0
        return r

    U = prev.U.copy()
    U[D] = sc.boundary_values("u", t)
    r = residual(U)
    rn = np.linalg.norm(r)
    scale = np.linalg.norm(load) + rn
    # roundoff floor: residuals below this are not reducible in double precision
    floor = 1e3 * np.finfo(float).eps * (np.linalg.norm(M * cs.b(U) / tau) + np.linalg.norm(K @ U) + scale)
    tol = max(opts.newton_rtol * scale, floor)
    it = lin_it = 0
    last = SolveStats(0, 0.0, True)
    while rn > tol:
        if it >= opts.newton_max_iter:
            raise NewtonError(f"no convergence in {opts.newton_max_iter} iterations "
                              f"(residual {rn:.3e}, tolerance {tol:.3e})")
        it += 1
        J = moisture_jacobian(mesh, K, cs, U, tau)
        J, rhs = apply_dirichlet(J, -r, D, 0.0)
        delta, last = cg_solve(J, rhs, rel_tol=opts.lin_rtol, max_iter=opts.lin_max_iter)
        lin_it += last.iterations
        step = 1.0
        while True:
            trial = U + step * delta
            rt = residual(trial)
            rtn = np.linalg.norm(rt)
            if rtn < rn:
                break
            step *= 0.5
            if step < 2.0 ** -20:
                raise NewtonError(f"line search floor reached (residual {rn:.3e}, tolerance {tol:.3e})")
        U, r, rn = trial, rt, rtn
    return U, it, float(rn), SolveStats(lin_it, last.final_residual, last.converged)


# ---------------------------------------------------------------------------
# solute and heat
# ---------------------------------------------------------------------------


def _linear_transport(sc, prev, prev_field, U_new, capacity_new, capacity_prev, diffusivity, name):
    mesh, cs, tau, opts = sc.mesh, sc.coeffs, sc.tau, sc.solver
    t = _next_time(prev, sc)
    M = mesh.node_areas
    D = mesh.dirichlet_nodes
    K = assemble_stiffness(mesh, diffusivity)
    C = assemble_convection(mesh, cs.a(prev.Th), U_new)
    data = K.data + C.data
    data[mesh.pattern.diag] += M * capacity_new / tau
    A = mesh.pattern.from_data(data)
    if opts.upwind:
        A = discrete_upwind(A, mesh.pattern)
    rhs = M * capacity_prev * prev_field / tau
    f = sc.source(name, t)
    if f is not None:
        rhs = rhs + f
    gD = sc.boundary_values(name, t)
    A, rhs = apply_dirichlet(A, rhs, D, gD)
    x0 = prev_field.copy()
    x0[D] = gD
    x, stats = bicgstab_solve(A, rhs, x0, rel_tol=opts.lin_rtol, max_iter=opts.lin_max_iter,
                              atol=_ROUNDOFF * np.linalg.norm(rhs))
    if not stats.converged:
        raise LinearSolverError(f"{name} solve did not converge: {stats}")
    x[D] = gD
    return x, stats


def w_step(prev: State, U_new, sc: Scenario):
    """Solute concentration at the new level; returns ``(W_new, SolveStats)``."""
    cs = sc.coeffs
    b_prev = cs.b(prev.U)
    return _linear_transport(sc, prev, prev.W, U_new, cs.b(U_new), b_prev, b_prev * cs.dw(prev.U), "w")


def theta_step(prev: State, U_new, sc: Scenario):
    """Temperature at the new level; returns ``(Th_new, SolveStats)``."""
    cs = sc.coeffs
    return _linear_transport(sc, prev, prev.Th, U_new, cs.b(U_new) + cs.rho, cs.b(prev.U) + cs.rho,
                             cs.lam(prev.Th, prev.U), "theta")


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------


def advance(prev: State, sc: Scenario, step: int | None = None, tracker=None):
    """One full step u -> (w, theta).  Returns ``(State, StepReport)``.

    Sub-step failures are re-raised as :class:`StepFailure` carrying the step
    index.  When a diagnostics ``tracker`` is passed, its row for the new
    level is attached to the report.
    """
    n = step if step is not None else int(round(prev.t / sc.tau)) + 1
    try:
        U, nit, nres, ustats = u_step(prev, sc)
        W, wstats = w_step(prev, U, sc)
        Th, tstats = theta_step(prev, U, sc)
    except (NewtonError, LinearSolverError, ArithmeticError, ValueError) as exc:
        raise StepFailure(n, str(exc)) from exc
    new = State(sc.time(n), U, W, Th)
    report = StepReport(n, nit, nres, ustats, wstats, tstats)
    if tracker is not None:
        report.diagnostics = tracker.record(n, prev, new, report)
    return new, report


@dataclass
class RunSummary:
    final_state: State
    rows: list
    trajectory: list | None
    steps: int
    wall_time: float
    max_overshoot: dict
    min_energy_slack: float
    energy_threshold: float


def run(sc: Scenario, sinks=(), keep_trajectory: bool = False) -> RunSummary:
    """Execute all ``T/tau`` steps, streaming diagnostics rows to ``sinks``.

    A sink is any object with ``start(state, row)``, ``step(state, row)`` and
    ``close()``.  Sinks are closed (flushed) even when a step fails.
    """
    from .diagnostics import Tracker

    if sc.mesh.dirichlet_nodes.size == 0 and not sc.test_mode:
        log.warning("no Dirichlet boundary: all-Neumann runs are meant for conservation tests only")
    t0 = time.perf_counter()
    state = sc.initial_state()
    tracker = Tracker(sc, state)
    rows = [tracker.rows[0]]
    traj = [state] if keep_trajectory else None
    try:
        for s in sinks:
            s.start(state, rows[0])
        for n in range(1, sc.n_steps + 1):
            state, rep = advance(state, sc, step=n, tracker=tracker)
            rows.append(rep.diagnostics)
            if traj is not None:
                traj.append(state)
            for s in sinks:
                s.step(state, rep.diagnostics)
            log.debug("step %d t=%.6g newton=%d", n, state.t, rep.newton_iters)
    finally:
        for s in sinks:
            s.close()
    return RunSummary(
        final_state=state,
        rows=rows,
        trajectory=traj,
        steps=sc.n_steps,
        wall_time=time.perf_counter() - t0,
        max_overshoot={k: max(getattr(r, f"overshoot_{k}") for r in rows) for k in ("u", "w", "th")},
        min_energy_slack=tracker.min_slack,
        energy_threshold=tracker.energy_threshold,
    )


def with_options(sc: Scenario, **kw) -> Scenario:
    """Copy of ``sc`` with solver options replaced."""
    return replace(sc, solver=replace(sc.solver, **kw))
