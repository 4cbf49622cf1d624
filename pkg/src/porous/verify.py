"""Verification machinery: manufactured solutions, brute-force oracles and
refinement studies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import dense_lu_solve
from .mesh import generate_rect_mesh
from .stepper import Scenario, SolverOptions, State, advance

__all__ = [
    "Profile",
    "ManufacturedCase",
    "CATALOG",
    "build_mms_case",
    "fd_residual",
    "mms_scenario",
    "mms_errors",
    "RateTable",
    "convergence_study",
    "fit_order",
    "oracle_u_step",
    "oracle_advance",
    "oracle_step_check",
    "prolong",
    "cauchy_study",
]


# ---------------------------------------------------------------------------
# manufactured fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Profile:
    """``base + lin.(x, y) + amp * T(t) * sin(kx pi x) sin(ky pi y)``.

    ``T(t)`` is ``exp(-rate t)`` (kind ``"exp"``) or ``1 + t`` combined with
    the bubble ``x(1-x)y(1-y)`` instead of the sines (kind ``"poly"``).
    """

    base: float = 0.0
    cx: float = 0.0
    cy: float = 0.0
    amp: float = 0.0
    kx: int = 1
    ky: int = 1
    rate: float = 1.0
    kind: str = "exp"

    def _time(self, t):
        if self.kind == "poly":
            return 1.0 + t, 1.0
        e = np.exp(-self.rate * t)
        return e, -self.rate * e

    def _shape(self, x, y):
        """Spatial mode S with (S, S_x, S_y, lap S)."""
        if self.kind == "poly":
            px, py = x * (1 - x), y * (1 - y)
            return px * py, (1 - 2 * x) * py, px * (1 - 2 * y), -2 * py - 2 * px
        ax, ay = self.kx * math.pi, self.ky * math.pi
        sx, sy = np.sin(ax * x), np.sin(ay * y)
        return (sx * sy, ax * np.cos(ax * x) * sy, ay * sx * np.cos(ay * y), -(ax * ax + ay * ay) * sx * sy)

    def value(self, x, y, t):
        T, _ = self._time(t)
        S = self._shape(x, y)[0]
        return self.base + self.cx * x + self.cy * y + self.amp * T * S

    def dt(self, x, y, t):
        _, Tt = self._time(t)
        return self.amp * Tt * self._shape(x, y)[0]

    def grad(self, x, y, t):
        T, _ = self._time(t)
        _, Sx, Sy, _ = self._shape(x, y)
        return self.cx + self.amp * T * Sx, self.cy + self.amp * T * Sy

    def lap(self, x, y, t):
        T, _ = self._time(t)
        return self.amp * T * self._shape(x, y)[3]


CATALOG = {
    "constant": (Profile(base=-1.0), Profile(base=0.5), Profile(base=0.2)),
    "linear": (Profile(cx=1.0), Profile(base=0.5, cy=0.25), Profile(base=0.1, cx=0.2, cy=0.3)),
    "sinexp": (
        Profile(base=-1.0, amp=0.5, kx=1, ky=1, rate=3.0),
        Profile(base=0.5, amp=0.3, kx=1, ky=2, rate=3.0),
        Profile(base=0.2, amp=0.4, kx=2, ky=1, rate=3.0),
    ),
    "poly": (
        Profile(base=-1.0, amp=4.0, kind="poly"),
        Profile(base=0.5, amp=2.0, kind="poly"),
        Profile(base=0.2, amp=3.0, kind="poly"),
    ),
}


@dataclass(frozen=True)
class ManufacturedCase:
    """Closed-form ``(u*, w*, theta*)`` with the sources that make them exact.

    Sources follow from the strong equations by the chain rule:

    * ``f_u = b'(u) u_t - a'(th) grad th . grad u - a(th) lap u``
    * ``f_w = (b w)_t - div(b D_w grad w) - div(w a grad u)``
    * ``f_th = ((b + rho) th)_t - div(lambda grad th) - div(th a grad u)``
    """

    name: str
    u: Profile
    w: Profile
    theta: Profile
    coeffs: object

    def _fields(self, x, y, t):
        u, w, th = self.u, self.w, self.theta
        return (u.value(x, y, t), u.dt(x, y, t), u.grad(x, y, t), u.lap(x, y, t),
                w.value(x, y, t), w.dt(x, y, t), w.grad(x, y, t), w.lap(x, y, t),
                th.value(x, y, t), th.dt(x, y, t), th.grad(x, y, t), th.lap(x, y, t))

    def source_u(self, x, y, t):
        cs = self.coeffs
        U, Ut, gU, lU, _, _, _, _, Th, _, gT, _ = self._fields(x, y, t)
        return cs.b.deriv(U) * Ut - cs.a.deriv(Th) * (gT[0] * gU[0] + gT[1] * gU[1]) - cs.a(Th) * lU

    def source_w(self, x, y, t):
        cs = self.coeffs
        U, Ut, gU, lU, W, Wt, gW, lW, Th, _, gT, _ = self._fields(x, y, t)
        b, db = cs.b(U), cs.b.deriv(U)
        d, dd = cs.dw(U), cs.dw.deriv(U)
        a, da = cs.a(Th), cs.a.deriv(Th)
        uw = gU[0] * gW[0] + gU[1] * gW[1]
        tu = gT[0] * gU[0] + gT[1] * gU[1]
        storage = db * Ut * W + b * Wt
        disp = (db * d + b * dd) * uw + b * d * lW
        conv = a * uw + W * da * tu + W * a * lU
        return storage - disp - conv

    def source_theta(self, x, y, t):
        cs = self.coeffs
        U, Ut, gU, lU, _, _, _, _, Th, Tt, gT, lT = self._fields(x, y, t)
        b, db = cs.b(U), cs.b.deriv(U)
        a, da = cs.a(Th), cs.a.deriv(Th)
        lam, lt, lu = cs.lam(Th, U), cs.lam.d_theta(Th, U), cs.lam.d_u(Th, U)
        tt = gT[0] * gT[0] + gT[1] * gT[1]
        ut = gU[0] * gT[0] + gU[1] * gT[1]
        storage = db * Ut * Th + (b + cs.rho) * Tt
        cond = lt * tt + lu * ut + lam * lT
        conv = a * ut + Th * da * ut + Th * a * lU
        return storage - cond - conv

    def sources(self):
        return {"u": self.source_u, "w": self.source_w, "theta": self.source_theta}

    def exact(self):
        return {"u": self.u.value, "w": self.w.value, "theta": self.theta.value}


def build_mms_case(case_id: str, cs) -> ManufacturedCase:
    if case_id not in CATALOG:
        raise KeyError(f"unknown manufactured case {case_id!r} (known: {sorted(CATALOG)})")
    u, w, th = CATALOG[case_id]
    return ManufacturedCase(case_id, u, w, th, cs)


def fd_residual(case: ManufacturedCase, x, y, t, h: float = 1e-4):
    """Strong-form residual by centred differences of the manufactured fields.

    Returns ``(r_u, r_w, r_th)``: finite-difference strong operator minus the
    analytic source.  Fluxes are differenced at half points, so only field
    values (never analytic derivatives) enter.
    """
    cs = case.coeffs
    u, w, th = case.u.value, case.w.value, case.theta.value
    x, y, t = (np.asarray(v, dtype=float) for v in (x, y, t))

    def stencil(c):
        # representable points c + k h/2, k = -2..2; differences use the true spacings
        return [c + k * (0.5 * h) for k in (-2, -1, 0, 1, 2)]

    sx, sy = stencil(x), stencil(y)

    def div_flux(coef, f):
        # d/dx (coef df/dx) + d/dy (coef df/dy) from half-point fluxes
        fx = [f(p, y) for p in sx]
        fy = [f(x, p) for p in sy]
        out = ((coef(sx[3], y) * (fx[4] - fx[2]) / (sx[4] - sx[2])
                - coef(sx[1], y) * (fx[2] - fx[0]) / (sx[2] - sx[0])) / (sx[3] - sx[1]))
        out = out + ((coef(x, sy[3]) * (fy[4] - fy[2]) / (sy[4] - sy[2])
                      - coef(x, sy[1]) * (fy[2] - fy[0]) / (sy[2] - sy[0])) / (sy[3] - sy[1]))
        return out

    def div_adv(scalar):
        # div(scalar * a(theta) grad u) with the product at half points
        def fx(i):
            gu = (u(sx[i + 1], y, t) - u(sx[i - 1], y, t)) / (sx[i + 1] - sx[i - 1])
            return scalar(sx[i], y) * cs.a(th(sx[i], y, t)) * gu

        def fy(i):
            gu = (u(x, sy[i + 1], t) - u(x, sy[i - 1], t)) / (sy[i + 1] - sy[i - 1])
            return scalar(x, sy[i]) * cs.a(th(x, sy[i], t)) * gu

        return (fx(3) - fx(1)) / (sx[3] - sx[1]) + (fy(3) - fy(1)) / (sy[3] - sy[1])

    tp, tm = t + h, t - h

    def ddt(f):
        return (f(tp) - f(tm)) / (tp - tm)

    a_of = lambda px, py: cs.a(th(px, py, t))
    r_u = ddt(lambda s: cs.b(u(x, y, s))) - div_flux(a_of, lambda px, py: u(px, py, t)) - case.source_u(x, y, t)

    bd = lambda px, py: cs.b(u(px, py, t)) * cs.dw(u(px, py, t))
    r_w = (ddt(lambda s: cs.b(u(x, y, s)) * w(x, y, s))
           - div_flux(bd, lambda px, py: w(px, py, t))
           - div_adv(lambda px, py: w(px, py, t))
           - case.source_w(x, y, t))

    lam = lambda px, py: cs.lam(th(px, py, t), u(px, py, t))
    r_th = (ddt(lambda s: (cs.b(u(x, y, s)) + cs.rho) * th(x, y, s))
            - div_flux(lam, lambda px, py: th(px, py, t))
            - div_adv(lambda px, py: th(px, py, t))
            - case.source_theta(x, y, t))
    return r_u, r_w, r_th


# ---------------------------------------------------------------------------
# convergence study
# ---------------------------------------------------------------------------

# Strang-Fix 6-point rule, degree 4 (barycentric coordinates, weights sum to 1)
_Q_BARY = np.array([
    [0.108103018168070, 0.445948490915965, 0.445948490915965],
    [0.445948490915965, 0.108103018168070, 0.445948490915965],
    [0.445948490915965, 0.445948490915965, 0.108103018168070],
    [0.816847572980459, 0.091576213509771, 0.091576213509771],
    [0.091576213509771, 0.816847572980459, 0.091576213509771],
    [0.091576213509771, 0.091576213509771, 0.816847572980459],
])
_Q_W = np.array([0.223381589678011] * 3 + [0.109951743655322] * 3)


def _l2_error_sq(mesh, nodal, exact, t):
    corners = mesh.nodes[mesh.triangles]  # (T, 3, 2)
    pts = np.einsum("qk,tkd->tqd", _Q_BARY, corners)
    uh = np.einsum("qk,tk->tq", _Q_BARY, nodal[mesh.triangles])
    ue = exact(pts[..., 0], pts[..., 1], t)
    return float(np.sum(mesh.areas[:, None] * _Q_W[None, :] * (uh - ue) ** 2))


def mms_scenario(case: ManufacturedCase, n: int, tau: float, t_end: float, solver=None) -> Scenario:
    """All-Dirichlet unit square with the case's boundary data and sources."""
    mesh = generate_rect_mesh(n, n, 1.0, 1.0, {s: "D" for s in ("left", "right", "bottom", "top")})
    ex = case.exact()
    return Scenario(
        mesh, case.coeffs, tau, t_end,
        u0=lambda x, y: ex["u"](x, y, 0.0), w0=lambda x, y: ex["w"](x, y, 0.0),
        theta0=lambda x, y: ex["theta"](x, y, 0.0),
        sources=case.sources(), exact_boundary=ex, solver=solver or SolverOptions(),
        test_mode=True, name=f"mms-{case.name}",
    )


def mms_errors(case: ManufacturedCase, n: int, tau: float, t_end: float, solver=None):
    """``L2(Q_T)`` errors of the piecewise constant interpolants for u, w, theta."""
    sc = mms_scenario(case, n, tau, t_end, solver)
    ex = case.exact()
    state = sc.initial_state()
    acc = np.zeros(3)
    for k in range(1, sc.n_steps + 1):
        state, _ = advance(state, sc, step=k)
        acc += tau * np.array([_l2_error_sq(sc.mesh, state.U, ex["u"], state.t),
                               _l2_error_sq(sc.mesh, state.W, ex["w"], state.t),
                               _l2_error_sq(sc.mesh, state.Th, ex["theta"], state.t)])
    return tuple(np.sqrt(acc))


def fit_order(x, err) -> float:
    """Least-squares slope of ``log err`` against ``log x``."""
    x, err = np.asarray(x, dtype=float), np.asarray(err, dtype=float)
    if np.any(err <= 0):
        return math.nan
    return float(np.polyfit(np.log(x), np.log(err), 1)[0])


@dataclass
class RateTable:
    rows: list  # (h, tau, err_u, err_w, err_th)
    orders: dict
    variable: str  # "h" or "tau"

    def to_csv(self) -> str:
        lines = ["h,tau,err_u,err_w,err_th"]
        lines += [",".join(format(v, ".17g") for v in row) for row in self.rows]
        o = self.orders
        lines.append(f"# observed order in {self.variable}: u={o['u']:.4f} w={o['w']:.4f} th={o['th']:.4f}")
        return "\n".join(lines) + "\n"


def convergence_study(case: ManufacturedCase, h_list, tau_list, t_end: float, variable: str = "h",
                      solver=None) -> RateTable:
    """Errors on each ``(h, tau)`` cell and least-squares orders in ``variable``.

    For a spatial study pass ``tau`` proportional to ``h**2``; for a temporal
    study pass a constant fine ``h``.  Any failing cell aborts the study with
    the cell identified.
    """
    if len(h_list) != len(tau_list) or len(h_list) < 3:
        raise ValueError("need at least three (h, tau) cells")
    if variable not in ("h", "tau"):
        raise ValueError("variable must be 'h' or 'tau'")
    rows = []
    for h, tau in zip(h_list, tau_list):
        n = int(round(1.0 / h))
        try:
            rows.append((h, tau) + mms_errors(case, n, tau, t_end, solver))
        except Exception as exc:
            raise RuntimeError(f"convergence cell h={h}, tau={tau} failed: {exc}") from exc
    arr = np.array(rows)
    x = arr[:, 0] if variable == "h" else arr[:, 1]
    orders = {k: fit_order(x, arr[:, 2 + i]) for i, k in enumerate(("u", "w", "th"))}
    return RateTable(rows, orders, variable)


# ---------------------------------------------------------------------------
# dense / bisection oracle for one step
# ---------------------------------------------------------------------------

_ROUNDOFF = 1e3 * np.finfo(float).eps

# edge-midpoint rule: exact for quadratics
_MID_BARY = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])


def _dense_operators(mesh):
    """Per-triangle area, basis gradients and int phi_j, by direct quadrature."""
    out = []
    for tri in mesh.triangles:
        P = mesh.nodes[tri]
        V = np.column_stack([np.ones(3), P])  # rows [1, x_k, y_k]
        # basis coefficients: V @ C = I
        C = np.column_stack([dense_lu_solve(V, e) for e in np.eye(3)])
        grads = C[1:, :].T  # (3, 2)
        area = 0.5 * abs((P[1, 0] - P[0, 0]) * (P[2, 1] - P[0, 1]) - (P[2, 0] - P[0, 0]) * (P[1, 1] - P[0, 1]))
        w = area / 3.0
        phi_q = _MID_BARY  # phi_k at the quadrature points equals barycentric coordinate
        mass = w * phi_q.T @ phi_q  # consistent mass (exact)
        out.append((tri, area, grads, phi_q, w, mass))
    return out


def _dense_system(mesh, ops, diff_coef, conv_a=None, conv_u=None):
    n = mesh.n_nodes
    K = np.zeros((n, n))
    Mc = np.zeros((n, n))
    for tri, area, grads, phi_q, w, mass in ops:
        cT = float(np.sum(w * (phi_q @ diff_coef[tri]))) / area  # mean of the P1 interpolant
        K[np.ix_(tri, tri)] += cT * area * grads @ grads.T
        Mc[np.ix_(tri, tri)] += mass
        if conv_a is not None:
            aT = float(np.sum(w * (phi_q @ conv_a[tri]))) / area
            gu = grads.T @ conv_u[tri]
            int_phi = w * phi_q.sum(axis=0)
            K[np.ix_(tri, tri)] += aT * np.outer(grads @ gu, int_phi)
    return K, Mc.sum(axis=1)


def _bisect(fun, x0, tol=0.0):
    lo, hi = x0 - 1.0, x0 + 1.0
    while fun(lo) > 0:
        lo -= 2 * (hi - lo)
    while fun(hi) < 0:
        hi += 2 * (hi - lo)
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if fun(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def oracle_u_step(prev: State, sc: Scenario, ops=None, sweeps: int = 100_000, tol: float = 1e-15):
    """Moisture step by nonlinear Gauss-Seidel with scalar bisection per node."""
    mesh, cs, tau = sc.mesh, sc.coeffs, sc.tau
    ops = ops or _dense_operators(mesh)
    K, M = _dense_system(mesh, ops, cs.a(prev.Th))
    t = prev.t + sc.tau
    f = sc.source("u", t)
    f = np.zeros(mesh.n_nodes) if f is None else f * (M / mesh.node_areas)
    U = prev.U.copy()
    D = mesh.dirichlet_nodes
    U[D] = sc.boundary_values("u", t)
    free = mesh.free_nodes
    b_prev = cs.b(prev.U)
    for _ in range(sweeps):
        change = 0.0
        for i in free:
            off = K[i] @ U - K[i, i] * U[i]
            g = lambda x: M[i] * (float(cs.b(x)) - b_prev[i]) / tau + K[i, i] * x + off - f[i]
            scale = abs(M[i] * float(cs.b(U[i])) / tau) + abs(K[i]) @ abs(U) + abs(f[i])
            if abs(g(U[i])) <= _ROUNDOFF * scale:
                continue
            new = _bisect(g, U[i])
            change = max(change, abs(new - U[i]))
            U[i] = new
        if change <= tol * (1.0 + np.abs(U).max()):
            break
    return U


def _dense_linear(mesh, ops, sc, name, prev_field, U_new, cap_new, cap_prev, diff_coef, a_lag):
    K, M = _dense_system(mesh, ops, diff_coef, a_lag, U_new)
    A = K + np.diag(M * cap_new / sc.tau)
    if sc.solver.upwind:
        off = A - np.diag(np.diag(A))
        d = np.maximum(np.maximum(off, off.T), 0.0)
        A = A - d + np.diag(d.sum(axis=1))
    rhs = M * cap_prev * prev_field / sc.tau
    return A, rhs


def oracle_advance(prev: State, sc: Scenario) -> State:
    """Reference step: dense quadrature assembly, bisection for u, dense LU for w and theta."""
    mesh, cs = sc.mesh, sc.coeffs
    ops = _dense_operators(mesh)
    U = oracle_u_step(prev, sc, ops)
    t = prev.t + sc.tau
    D, free = mesh.dirichlet_nodes, mesh.free_nodes
    b_prev, b_new = cs.b(prev.U), cs.b(U)
    specs = (
        ("w", prev.W, b_new, b_prev, b_prev * cs.dw(prev.U)),
        ("theta", prev.Th, b_new + cs.rho, b_prev + cs.rho, cs.lam(prev.Th, prev.U)),
    )
    out = {}
    for name, field, cap_new, cap_prev, diff in specs:
        A, rhs = _dense_linear(mesh, ops, sc, name, field, U, cap_new, cap_prev, diff, cs.a(prev.Th))
        f = sc.source(name, t)
        if f is not None:
            rhs = rhs + f
        x = field.copy()
        x[D] = sc.boundary_values(name, t)
        if free.size:
            # residual correction; an input that already solves the system is returned as is
            r = rhs[free] - A[free] @ x
            if np.abs(r).max() > _ROUNDOFF * np.abs(rhs[free]).max():
                x[free] += dense_lu_solve(A[np.ix_(free, free)], r)
        out[name] = x
    return State(sc.time(int(round(prev.t / sc.tau)) + 1), U, out["w"], out["theta"])


def oracle_step_check(sc: Scenario, prev: State | None = None) -> float:
    """Max nodal deviation between the production step and the oracle step (n <= 12 nodes)."""
    if sc.mesh.n_nodes > 12:
        raise ValueError(f"oracle check is limited to 12 nodes (mesh has {sc.mesh.n_nodes})")
    prev = prev or sc.initial_state()
    prod, _ = advance(prev, sc, step=int(round(prev.t / sc.tau)) + 1)
    ref = oracle_advance(prev, sc)
    return float(max(np.abs(prod.U - ref.U).max(), np.abs(prod.W - ref.W).max(), np.abs(prod.Th - ref.Th).max()))


# ---------------------------------------------------------------------------
# Cauchy refinement
# ---------------------------------------------------------------------------


def prolong(nx: int, ny: int, lx: float, ly: float, values, points):
    """Evaluate the P1 interpolant on ``generate_rect_mesh(nx, ny, lx, ly)`` at ``points``."""
    values = np.asarray(values, dtype=float).reshape(ny + 1, nx + 1)
    hx, hy = lx / nx, ly / ny
    sx = np.clip(points[:, 0] / hx, 0.0, nx)
    sy = np.clip(points[:, 1] / hy, 0.0, ny)
    i = np.minimum(np.floor(sx).astype(int), nx - 1)
    j = np.minimum(np.floor(sy).astype(int), ny - 1)
    fx, fy = sx - i, sy - j
    v00, v10 = values[j, i], values[j, i + 1]
    v01, v11 = values[j + 1, i], values[j + 1, i + 1]
    # lower triangle (sw, se, ne) when fx >= fy, else upper (sw, ne, nw)
    lower = v00 + fx * (v10 - v00) + fy * (v11 - v10)
    upper = v00 + fy * (v01 - v00) + fx * (v11 - v01)
    return np.where(fx >= fy, lower, upper)


def _p1_l2_sq(mesh, e):
    et = e[mesh.triangles]
    quad = (et ** 2).sum(axis=1) + et[:, 0] * et[:, 1] + et[:, 1] * et[:, 2] + et[:, 2] * et[:, 0]
    return float(np.sum(mesh.areas * quad / 6.0))


def cauchy_study(make_scenario, levels, refine_time: int = 4):
    """``||ubar_l - ubar_{l+1}||_{L2(Q_T)}`` for consecutive refinement levels.

    ``make_scenario(n, p)`` returns the scenario on an ``n x n`` structured
    mesh with ``p`` steps; ``levels`` is a list of ``(n, p)`` with each level
    halving ``h`` and dividing ``tau`` by ``refine_time``.  Returns a list of
    ``(diff_u, diff_w, diff_th)``.
    """
    from .stepper import run

    trajs = []
    for n, p in levels:
        sc = make_scenario(n, p)
        trajs.append((sc, run(sc, keep_trajectory=True).trajectory))
    diffs = []
    for (sc_c, tr_c), (sc_f, tr_f) in zip(trajs[:-1], trajs[1:]):
        mc, mf = sc_c.mesh, sc_f.mesh
        nx_c = int(round(np.sqrt(mc.n_nodes))) - 1
        lx, ly = mc.nodes[:, 0].max(), mc.nodes[:, 1].max()
        ratio = int(round(sc_c.tau / sc_f.tau))
        acc = np.zeros(3)
        for m in range(1, len(tr_f)):
            coarse = tr_c[(m + ratio - 1) // ratio]
            fine = tr_f[m]
            for k, (cv, fv) in enumerate(((coarse.U, fine.U), (coarse.W, fine.W), (coarse.Th, fine.Th))):
                acc[k] += sc_f.tau * _p1_l2_sq(mf, prolong(nx_c, nx_c, lx, ly, cv, mf.nodes) - fv)
        diffs.append(tuple(np.sqrt(acc)))
    return diffs
