"""Per-step a-priori estimate quantities and their audits.

All space integrals use the same lumped nodal quadrature as the scheme, so
the audits test the scheme's own algebra.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .assembly import element_average
from .constitutive import eval_B

__all__ = [
    "DiagnosticsRow",
    "CSV_FIELDS",
    "Tracker",
    "EnergyAudit",
    "linf_audit",
    "energy_audit",
    "translate_audit",
    "mass_audit",
    "dissipation",
    "grad_l2",
]

CSV_FIELDS = (
    "step", "t", "min_u", "max_u", "min_w", "max_w", "min_th", "max_th",
    "energy_B", "dissipation_cum", "mass_b", "mass_bw", "mass_bth",
    "overshoot_u", "overshoot_w", "overshoot_th",
    "newton_iters", "lin_iters_u", "lin_iters_w", "lin_iters_th",
)


@dataclass(frozen=True)
class DiagnosticsRow:
    step: int
    t: float
    min_u: float
    max_u: float
    min_w: float
    max_w: float
    min_th: float
    max_th: float
    energy_B: float
    dissipation_cum: float
    mass_b: float
    mass_bw: float
    mass_bth: float
    overshoot_u: float
    overshoot_w: float
    overshoot_th: float
    newton_iters: int = 0
    lin_iters_u: int = 0
    lin_iters_w: int = 0
    lin_iters_th: int = 0
    grad_u_l2: float = 0.0
    grad_w_l2: float = 0.0
    grad_th_l2: float = 0.0

    def csv_values(self):
        return [getattr(self, name) for name in CSV_FIELDS]


assert set(CSV_FIELDS) <= {f.name for f in fields(DiagnosticsRow)}


def _integrate(mesh, values):
    return float(mesh.node_areas @ values)


def grad_l2(mesh, field) -> float:
    g = np.einsum("tk,tkd->td", np.asarray(field)[mesh.triangles], mesh.gradients)
    return float(np.sqrt(np.sum(mesh.areas * np.sum(g * g, axis=1))))


def dissipation(mesh, cs, U, Th_lag) -> float:
    """``int a_T |grad u|^2`` with the scheme's element-averaged mobility ``a(theta^{n-1})``."""
    g = np.einsum("tk,tkd->td", np.asarray(U)[mesh.triangles], mesh.gradients)
    aT = element_average(mesh, cs.a(Th_lag))
    return float(np.sum(aT * mesh.areas * np.sum(g * g, axis=1)))


def linf_audit(state, bounds):
    """Overshoots ``max(0, m - min f, max f - M)`` for (u, w, theta)."""
    out = []
    for arr, name in ((state.U, "u"), (state.W, "w"), (state.Th, "theta")):
        lo, hi = bounds[name]
        out.append(float(max(0.0, lo - arr.min(), arr.max() - hi)))
    return tuple(out)


def mass_audit(state, cs, mesh):
    """Lumped integrals of ``b(u)``, ``b(u) w`` and ``(b(u) + rho) theta``."""
    bu = cs.b(state.U)
    return (_integrate(mesh, bu), _integrate(mesh, bu * state.W), _integrate(mesh, (bu + cs.rho) * state.Th))


def energy_value(sc, state) -> float:
    return _integrate(sc.mesh, eval_B(sc.coeffs, state.U, g=sc.g_u))


def energy_threshold(e0: float) -> float:
    return -1e-8 * (1.0 + e0)


@dataclass(frozen=True)
class EnergyAudit:
    slack: np.ndarray
    threshold: float

    @property
    def passed(self) -> bool:
        return bool(self.slack.min() >= self.threshold)


def energy_audit(trajectory, sc) -> EnergyAudit:
    """Slack of the discrete energy inequality along a stored trajectory.

    ``slack_n = int B_g(u^0) - int B_g(u^n) - sum_{m<=n} tau int a(theta^{m-1}) |grad u^m|^2``
    for ``n = 0..p`` (``slack_0 = 0``).  Meaningful for zero sources and
    constant Dirichlet data.
    """
    mesh, cs = sc.mesh, sc.coeffs
    e0 = energy_value(sc, trajectory[0])
    slack = [0.0]
    cum = 0.0
    for prev, cur in zip(trajectory[:-1], trajectory[1:]):
        cum += sc.tau * dissipation(mesh, cs, cur.U, prev.Th)
        slack.append(e0 - energy_value(sc, cur) - cum)
    return EnergyAudit(np.array(slack), energy_threshold(e0))


def translate_audit(trajectory, k: int, cs, mesh, tau: float):
    """Time-translate sums of the piecewise constant interpolants.

    ``trajectory`` holds the levels ``[s0, s1, ..., sp]``.  Returns
    ``(sum tau int (b(u^{n+k}) - b(u^n))(u^{n+k} - u^n), sum tau int (w^{n+k} - w^n)^2,
    sum tau int (theta^{n+k} - theta^n)^2)`` over ``n = 1..p-k``, i.e. over the
    window ``(0, T - k tau]``.
    """
    p = len(trajectory) - 1
    if not 1 <= k < p:
        raise ValueError(f"lag k = {k} out of range 1 <= k < p = {p}")
    tu = tw = tt = 0.0
    for n in range(1, p - k + 1):
        a, b = trajectory[n], trajectory[n + k]
        tu += _integrate(mesh, (cs.b(b.U) - cs.b(a.U)) * (b.U - a.U))
        tw += _integrate(mesh, (b.W - a.W) ** 2)
        tt += _integrate(mesh, (b.Th - a.Th) ** 2)
    return tau * tu, tau * tw, tau * tt


class Tracker:
    """Builds :class:`DiagnosticsRow` objects while a run progresses."""

    def __init__(self, sc, initial):
        self.sc = sc
        self.bounds = sc.bounds()
        self.cum = 0.0
        self.e0 = energy_value(sc, initial)
        self.energy_threshold = energy_threshold(self.e0)
        self.min_slack = 0.0
        self.rows = [self._row(0, initial, None)]

    def _row(self, n, s, report):
        sc, mesh, cs = self.sc, self.sc.mesh, self.sc.coeffs
        ou, ow, ot = linf_audit(s, self.bounds)
        mb, mbw, mbt = mass_audit(s, cs, mesh)
        extra = {}
        if report is not None:
            extra = dict(newton_iters=report.newton_iters, lin_iters_u=report.u_solve.iterations,
                         lin_iters_w=report.w_solve.iterations, lin_iters_th=report.theta_solve.iterations)
        return DiagnosticsRow(
            step=n, t=s.t,
            min_u=float(s.U.min()), max_u=float(s.U.max()),
            min_w=float(s.W.min()), max_w=float(s.W.max()),
            min_th=float(s.Th.min()), max_th=float(s.Th.max()),
            energy_B=energy_value(sc, s), dissipation_cum=self.cum,
            mass_b=mb, mass_bw=mbw, mass_bth=mbt,
            overshoot_u=ou, overshoot_w=ow, overshoot_th=ot,
            grad_u_l2=grad_l2(mesh, s.U), grad_w_l2=grad_l2(mesh, s.W), grad_th_l2=grad_l2(mesh, s.Th),
            **extra,
        )

    def record(self, n, prev, new, report) -> DiagnosticsRow:
        self.cum += self.sc.tau * dissipation(self.sc.mesh, self.sc.coeffs, new.U, prev.Th)
        row = self._row(n, new, report)
        self.min_slack = min(self.min_slack, self.e0 - row.energy_B - row.dissipation_cum)
        self.rows.append(row)
        return row
