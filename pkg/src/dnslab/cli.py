"""Command-line entry point: ``dnslab <subcommand> <config.toml>``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

from .admissibility import FINITE, check_admissible
from .config import RunConfig, build_initial_state, parse_config, radial_profile, write_resolved
from .diagnostics import boundary_flux, cauchy_schwarz_check, nondecay_bound, write_records_csv
from .errors import ConfigError, DnslabError
from .picard import CONVERGENCE_COLUMNS, continuation, solve_nonlinear
from .snapshot import save_snapshot
from .studies import TRANSPORT_CASES, scheme_convergence, transport_order_study

log = logging.getLogger("dnslab")

INVARIANTS = ("cauchy_schwarz", "nondecay", "energy", "conservation", "contraction")

EXIT_OK = 0
EXIT_VERDICT = 1
EXIT_ERROR = 2
EXIT_INVARIANT = 3


def _write_csv(path: Path, rows: list[dict], columns=None) -> None:
    columns = list(columns or (rows[0].keys() if rows else []))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else (repr(r[k]) if isinstance(r[k], float) else r[k])) for k in columns})


def output_directory(cfg: RunConfig, flag: str | None) -> Path:
    """--output-dir wins, then $DNSLAB_OUTPUT, then the config's output.directory."""
    chosen = flag or os.environ.get("DNSLAB_OUTPUT") or cfg.output.directory
    path = Path(chosen)
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------- subcommands


def cmd_check_init(cfg: RunConfig, out: Path, args) -> int:
    q = cfg.check.get("q")
    radii = cfg.check.get("radii")
    if cfg.init["family"] == "power_law":
        report = check_admissible(radial_profile(cfg), p=cfg.params, radii=radii, q=q)
    else:
        report = check_admissible(build_initial_state(cfg), p=cfg.params, radii=radii, q=q)
    (out / "admissibility.json").write_text(report.to_json())
    print(report.table())
    if report.overall != FINITE:
        failing = report.diverging or [n.name for n in report.norms if n.verdict != FINITE]
        print("not admissible; failing norms: " + ", ".join(failing))
        return EXIT_VERDICT
    return EXIT_OK


def _invariant_failures(cfg: RunConfig, res) -> dict[str, str]:
    p = cfg.params
    failures = {}
    record_states = [res.primitive(0)] + [res.primitive(i) for i in range(1, len(res.states)) if i % cfg.picard.diag_every == 0 or i == len(res.states) - 1]
    for s in record_states:
        c = cauchy_schwarz_check(s, p)
        if c < -1e-12:
            failures["cauchy_schwarz"] = f"margin {c:.3e} at t={s.t:g}"
            break
    nd = nondecay_bound(record_states, p)
    if not nd.vacuous and not nd.holds:
        first = nd.violations[0]
        failures["nondecay"] = f"sup|u|={first.sup_u:.6g} < Cu={nd.Cu:.6g} at t={first.t:g}"
    E0 = res.records[0].E
    worst = max(r.E - E0 for r in res.records)
    if worst > 1e-10 * max(1.0, abs(E0)):
        failures["energy"] = f"E rose above E(0) by {worst:.3e}"
    if cfg.grid.periodic:
        m0 = res.records[0].m
        drift = max(abs(r.m - m0) / m0 for r in res.records)
        if drift > 1e-6:
            failures["conservation"] = f"relative mass drift {drift:.3e}"
    if not all(res.converged):
        failures["contraction"] = f"{res.converged.count(False)} slab(s) stopped at k_max"
    return failures


def run_metadata(cfg: RunConfig, res) -> dict:
    """Boundary treatment and box size, plus far-field boundary fluxes at each record."""
    g = cfg.grid
    meta = {
        "boundary": g.boundary,
        "box_lengths": list(g.lengths),
        "box_origin": list(g.origin),
        "velocity_boundary": "periodic" if g.periodic else "Dirichlet u=0 on the outer node layer",
        "inflow_pinning": not g.periodic,
        "steps": len(res.states) - 1,
        "converged_slabs": sum(res.converged),
        "slabs": len(res.converged),
    }
    if not g.periodic:
        record_times = {r.t for r in res.records}
        meta["boundary_flux"] = [
            {"t": st.t, **boundary_flux(res.primitive(i), cfg.params)}
            for i, st in enumerate(res.states)
            if st.t in record_times
        ]
    return meta


def cmd_run(cfg: RunConfig, out: Path, args) -> int:
    state = build_initial_state(cfg)
    res = solve_nonlinear(state, cfg.params, cfg.T, cfg.picard)
    if "csv" in cfg.output.formats:
        write_records_csv(res.records, out / "diagnostics.csv")
        _write_csv(out / "convergence_log.csv", [r.row() for r in res.log], CONVERGENCE_COLUMNS)
    if "snapshot" in cfg.output.formats:
        every = cfg.picard.diag_every * cfg.output.snapshot_every
        last = len(res.states) - 1
        for i, r in enumerate(res.states):
            if i % every == 0 or i == last:
                save_snapshot(r, res.params, out / f"snapshot_{i:06d}.dnsnap")
    (out / "run_metadata.json").write_text(json.dumps(run_metadata(cfg, res), indent=2, sort_keys=True))
    failures = _invariant_failures(cfg, res)
    fatal = set(args.fatal_invariants or ())
    code = EXIT_OK
    for name, msg in failures.items():
        if name in fatal:
            log.error("invariant %s violated: %s", name, msg)
            code = EXIT_INVARIANT
        else:
            log.warning("invariant %s violated: %s", name, msg)
    print(f"run finished: {len(res.states) - 1} steps, {len(res.records)} records, t={res.states[-1].t:g}")
    return code


def cmd_oracle_transport(cfg: RunConfig, out: Path, args) -> int:
    oc = cfg.oracle
    rows, summary = [], []
    for method in oc["methods"]:
        for case in TRANSPORT_CASES:
            study = transport_order_study(method, case, tuple(oc["levels"]), float(oc["T"]), float(oc["courant"]))
            rows += study.rows()
            summary.append({"method": method, "case": case, "order": study.order})
    _write_csv(out / "transport_errors.csv", rows, ("method", "case", "n", "dx", "error"))
    _write_csv(out / "transport_orders.csv", summary, ("method", "case", "order"))
    for s in summary:
        print(f"{s['method']:15s} {s['case']:14s} order {s['order']:.3f}")
    return EXIT_OK


def cmd_continuation(cfg: RunConfig, out: Path, args) -> int:
    state = build_initial_state(cfg)
    rows = continuation(state, cfg.params, cfg.continuation, cfg.T, cfg.picard, jobs=args.jobs)
    table = [r.row() for r in rows]
    _write_csv(out / "continuation.csv", table)
    for r in rows:
        d = "" if r.distance_u is None else f"dist_u={r.distance_u:.3e} dist_rho={r.distance_rho:.3e}"
        print(f"{r.stage:4s} eps={r.eps:.1e} eta={r.eta:.1e} {r.status:6s} {d}")
    return EXIT_OK


def cmd_convergence(cfg: RunConfig, out: Path, args) -> int:
    cc = cfg.convergence
    base = cfg.grid

    def init_fn(n):
        from dataclasses import replace as dc_replace

        scaled = tuple(int(n * s / base.shape[0]) for s in base.shape)
        sub = dc_replace(cfg, grid=type(base)(base.lengths, scaled, base.boundary, base.origin))
        return build_initial_state(sub)

    study = scheme_convergence(init_fn, cfg.params, float(cc["T"]), cfg.picard, tuple(cc["levels"]))
    orders = study.orders
    rows = []
    for i, n in enumerate(study.n[:-1]):
        rows.append(
            {
                "n": n,
                "diff_rho": study.diffs_rho[i],
                "diff_u": study.diffs_u[i],
                "order_rho": orders["rho"][i - 1] if i > 0 else math.nan,
                "order_u": orders["u"][i - 1] if i > 0 else math.nan,
            }
        )
    _write_csv(out / "convergence_orders.csv", rows)
    print("observed orders rho:", ", ".join(f"{o:.3f}" for o in orders["rho"]))
    print("observed orders u:  ", ", ".join(f"{o:.3f}" for o in orders["u"]))
    return EXIT_OK


COMMANDS = {
    "check-init": cmd_check_init,
    "run": cmd_run,
    "oracle-transport": cmd_oracle_transport,
    "continuation": cmd_continuation,
    "convergence": cmd_convergence,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dnslab", description="Degenerate-viscosity Navier-Stokes solver laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("config_path", nargs="?", help="TOML run configuration")
        sp.add_argument("--config", dest="config_flag", help="TOML run configuration")
        sp.add_argument("--output-dir", help="output directory (overrides $DNSLAB_OUTPUT and the config)")
        sp.add_argument("--jobs", type=int, default=1, help="parallel runs for sweeps")
        sp.add_argument(
            "--fatal-invariants",
            type=lambda s: [x.strip() for x in s.split(",") if x.strip()],
            default=[],
            help=f"comma list from {','.join(INVARIANTS)}",
        )
        sp.add_argument("--log-level", default="WARNING")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    unknown = [x for x in args.fatal_invariants if x not in INVARIANTS]
    if unknown:
        print(f"unknown invariant(s): {', '.join(unknown)}", file=sys.stderr)
        return EXIT_ERROR
    path = args.config_flag or args.config_path
    if not path:
        print("a config file is required (positional or --config)", file=sys.stderr)
        return EXIT_ERROR
    try:
        cfg = parse_config(Path(path))
        out = output_directory(cfg, args.output_dir)
        write_resolved(cfg, out)
        return COMMANDS[args.command](cfg, out, args)
    except ConfigError as exc:
        print("configuration error:\n  " + "\n  ".join(exc.problems), file=sys.stderr)
        return EXIT_ERROR
    except DnslabError as exc:
        print(f"{args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
