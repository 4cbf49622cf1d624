"""Command line entry point: ``porous {run,mms,oracle,validate} <cfg>``.

Exit codes: 0 success, 1 solver failure, 2 invariant/audit failure,
64 usage or configuration error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import build_scenario, coefficient_set, parse_config
from .constitutive import validate_assumptions
from .errors import ConfigError, MeshError, StepFailure
from .mesh import write_mesh
from .output import CsvSink, VtkSink
from .stepper import run

log = logging.getLogger("porous")

EXIT_OK, EXIT_SOLVER, EXIT_AUDIT, EXIT_USAGE = 0, 1, 2, 64

__all__ = ["main", "cmd_run", "cmd_mms", "cmd_oracle", "cmd_validate", "audit_run"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _setup_logging():
    level = os.environ.get("POROUS_LOG", "error").lower()
    if level not in ("error", "info", "debug", "warning"):
        level = "error"
    logging.basicConfig(level=getattr(logging, level.upper()), format="%(levelname)s %(name)s: %(message)s")


def audit_run(summary, sc, overshoot_tol=1e-8, overshoot_tol_u=1e-10):
    """List of ``(name, passed, detail)`` for a completed run."""
    out = []
    mo = summary.max_overshoot
    out.append(("overshoot u", mo["u"] <= overshoot_tol_u, f"max {mo['u']:.3e} (tol {overshoot_tol_u:.1e})"))
    out.append(("overshoot w", mo["w"] <= overshoot_tol, f"max {mo['w']:.3e} (tol {overshoot_tol:.1e})"))
    out.append(("overshoot theta", mo["th"] <= overshoot_tol, f"max {mo['th']:.3e} (tol {overshoot_tol:.1e})"))
    out.append(("energy inequality", summary.min_energy_slack >= summary.energy_threshold,
                f"min slack {summary.min_energy_slack:.3e} (threshold {summary.energy_threshold:.3e})"))
    cum = [r.dissipation_cum for r in summary.rows]
    out.append(("dissipation nondecreasing", all(b >= a for a, b in zip(cum, cum[1:])), ""))
    if sc.mesh.dirichlet_nodes.size == 0:
        r0 = summary.rows[0]
        for key in ("mass_b", "mass_bw", "mass_bth"):
            ref = getattr(r0, key)
            drift = max(abs(getattr(r, key) - ref) for r in summary.rows) / max(abs(ref), 1e-300)
            out.append((f"conservation {key}", drift <= 1e-10, f"relative drift {drift:.3e}"))
    return out


def cmd_run(args) -> int:
    cfg = parse_config(args.config)
    sc = build_scenario(cfg)
    outdir = args.out or cfg.get("output", "dir") or "out"
    if not os.path.isabs(outdir) and args.out is None and cfg.get("output", "dir"):
        outdir = os.path.join(cfg.base_dir, outdir)
    os.makedirs(outdir, exist_ok=True)
    every = args.snapshot_every or cfg.get("output", "snapshot_every", 10)
    mode = args.check_invariants or cfg.get("output", "check_invariants", "strict")
    write_mesh(sc.mesh, os.path.join(outdir, "mesh.txt"))
    sinks = (CsvSink(os.path.join(outdir, "diagnostics.csv")), VtkSink(outdir, sc.mesh, every))
    try:
        summary = run(sc, sinks=sinks)
    except StepFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    print(f"{sc.name}: {summary.steps} steps in {summary.wall_time:.2f} s, output in {outdir}")
    if mode == "off":
        return EXIT_OK
    audits = audit_run(summary, sc, cfg.get("output", "overshoot_tol", 1e-8),
                       cfg.get("output", "overshoot_tol_u", 1e-10))
    for name, ok, detail in audits:
        print(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  {detail}" if detail else ""))
    failed = [a for a in audits if not a[1]]
    return EXIT_AUDIT if failed and mode == "strict" else EXIT_OK


def cmd_mms(args) -> int:
    from .verify import build_mms_case, convergence_study

    cfg = parse_config(args.config)
    cs = coefficient_set(cfg)
    m = cfg.sections.get("mms", {})
    case = build_mms_case(m.get("case", "sinexp"), cs)
    h_list = m.get("h_list", [1 / 8, 1 / 16, 1 / 32])
    tau0 = m.get("tau0", 1 / 40)
    taus = [tau0 * (h / h_list[0]) ** 2 for h in h_list]
    tau_list = m.get("tau_list", [0.1, 0.05, 0.025])
    h_fine = m.get("h_fine", 1 / 64)
    try:
        space = convergence_study(case, h_list, taus, m.get("t_end_space", 0.5), "h")
        timed = convergence_study(case, [h_fine] * len(tau_list), tau_list, m.get("t_end_time", 1.0), "tau")
    except RuntimeError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        for name, tab in (("mms_space.csv", space), ("mms_time.csv", timed)):
            with open(os.path.join(args.out, name), "w") as fh:
                fh.write(tab.to_csv())
    sys.stdout.write(space.to_csv())
    sys.stdout.write(timed.to_csv())
    need_h, need_t = m.get("min_order_space", 1.7), m.get("min_order_time", 0.8)
    ok = all(v >= need_h for v in space.orders.values()) and all(v >= need_t for v in timed.orders.values())
    print("PASS" if ok else "FAIL", f"spatial orders >= {need_h}, temporal orders >= {need_t}")
    return EXIT_OK if ok else EXIT_AUDIT


def cmd_oracle(args) -> int:
    from .verify import oracle_step_check

    cfg = parse_config(args.config)
    sc = build_scenario(cfg)
    try:
        dev = oracle_step_check(sc)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    except StepFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    ok = dev <= args.tol
    print(f"max deviation = {dev:.3e} ({'PASS' if ok else 'FAIL'}, tol {args.tol:.1e})")
    return EXIT_OK if ok else EXIT_AUDIT


def cmd_validate(args) -> int:
    cfg = parse_config(args.config)
    cs = coefficient_set(cfg)
    initial = None
    if cfg.has("initial") and (cfg.has("mesh", "nx") or cfg.has("mesh", "file")):
        sc = build_scenario(cfg)
        s0 = sc.initial_state()
        initial = (s0.U, s0.W, s0.Th)
    rep = validate_assumptions(cs, probe=tuple(args.probe), samples=args.samples, initial=initial)
    for line in rep.lines():
        print(line)
    return EXIT_OK if rep.passed else EXIT_AUDIT


def build_parser():
    p = _Parser(prog="porous", description="Coupled moisture/solute/heat transport simulator.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    r = sub.add_parser("run", help="run a scenario")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (default: [output] dir or ./out)")
    r.add_argument("--snapshot-every", type=int, help="VTK snapshot cadence in steps")
    r.add_argument("--check-invariants", choices=("off", "report", "strict"))
    r.set_defaults(func=cmd_run)
    m = sub.add_parser("mms", help="manufactured-solution convergence study")
    m.add_argument("config")
    m.add_argument("--out", help="directory for the rate tables")
    m.set_defaults(func=cmd_mms)
    o = sub.add_parser("oracle", help="compare one step against the dense oracle")
    o.add_argument("config")
    o.add_argument("--tol", type=float, default=1e-8)
    o.set_defaults(func=cmd_oracle)
    v = sub.add_parser("validate", help="check the constitutive assumptions")
    v.add_argument("config")
    v.add_argument("--probe", type=float, nargs=2, default=(-50.0, 50.0), metavar=("LO", "HI"))
    v.add_argument("--samples", type=int, default=10_000)
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    if getattr(args, "snapshot_every", None) is not None and args.snapshot_every < 1:
        print("porous: error: --snapshot-every must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (ConfigError, MeshError) as exc:
        print(f"porous: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"porous: error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
