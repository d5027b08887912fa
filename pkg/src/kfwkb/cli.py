"""
Command line: ``kfwkb forward|backward|verify|sweep-eps --scenario FILE --out DIR``.

All numbers are written with 17 significant digits and JSON keys are sorted,
so the same scenario always produces byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar

from . import backward as bw
from .acceptance import Run, _is_heat, _jsonable, _log_datum, _support, run_all
from .density import assemble_solution, regular_density, total_mass
from .hamilton import caustic_time_formula
from .hjb import value_function
from .manifold import snapshot
from .oracle import OracleSolution, StabilityError, direct_solve, heat_kernel_solve
from .scenario import Scenario, load_scenario
from .schemas import CSV_COLUMNS, validate_dir

VERSION = "0.1.0"
TRAJ_LABEL_STRIDE = 20
TRAJ_TIME_STRIDE = 20
SHOCK_HISTORY_STRIDE = 10
TERRA_STRIDE = 50


def _tag(v: float) -> str:
    return f"{v:g}"


def _cell(v) -> str:
    v = float(v)
    if np.isnan(v):
        return "nan"
    if np.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def write_csv(path: Path, kind: str, rows) -> str:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        cols = CSV_COLUMNS[kind]
        w.writerow(cols)
        ints = [c == "branch_id" for c in cols]
        for r in np.asarray(rows, dtype=float):
            w.writerow([str(int(v)) if i else _cell(v) for v, i in zip(r, ints)])
    return path.name


def write_json(path: Path, obj) -> str:
    path.write_text(json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n")
    return path.name


# -- forward ------------------------------------------------------------------------


def _value_at(run: Run, t: float, x):
    """Value field and regular density at the grid time nearest ``t``, shocks carrying their delta masses."""
    c = snapshot(run.bundle, t)
    vf = value_function(c, x, run.sym)
    if run.history is not None and vf.shocks:
        k = int(np.argmin(np.abs(run.history.times - c.t)))
        if abs(run.history.times[k] - c.t) < 1e-12:
            tracked = run.history.shocks[k]
            vf.shocks = [min(tracked, key=lambda q: abs(q.x - s.x)) if tracked else s for s in vf.shocks]
    dens = regular_density(c, vf)
    return c, vf, dens


def _oracle(run: Run, t: float, eps: float, x) -> OracleSolution | None:
    lu = _log_datum(run.init, eps)
    if t == 0:
        lx = lu(x)
        return OracleSolution(np.asarray(x), 0.0, eps, np.exp(lx), lx, "initial")
    if _is_heat(run.sym):
        a = float(run.sym.A[0][0].coeffs.ravel()[0])
        return heat_kernel_solve(lu, eps, t, x, _support(run.init), diffusion=a)
    if run.sym.dim != 1:
        return None
    # window: the grid plus everything the rays reach up to t, so the boundary sees no mass
    b = run.bundle
    xs = b.x[:, : b.time_index(t) + 1, 0]
    lo = min(float(np.min(x)), float(np.min(xs))) - 1.0
    hi = max(float(np.max(x)), float(np.max(xs))) + 1.0
    dx = 0.5 * float(np.min(np.diff(x)))
    nx = int(np.ceil((hi - lo) / dx)) + 1
    dt = 1e-3 if t >= 1e-3 else t
    for _ in range(2):
        try:
            sol = direct_solve(run.sym, lu, eps, t, (lo, hi), nx, dt, self_check=False)
            break
        except StabilityError as e:
            if e.suggested_dt is None:
                return None
            dt = t / int(np.ceil(t / e.suggested_dt))
    else:
        return None
    with np.errstate(invalid="ignore"):
        log_u = np.interp(x, sol.x, sol.log_u)
    return OracleSolution(np.asarray(x), sol.t, eps, np.exp(log_u), log_u, sol.method, sol.meta)


def caustic_section(run: Run) -> dict:
    try:
        formula = caustic_time_formula(run.sym, run.init)
    except ValueError:
        formula = None
    return {"detected": run.t_star, "formula": formula, "dt": run.sc.dt,
            "status": "no caustic" if run.t_star is None else "caustic"}


def shocks_section(run: Run) -> list:
    return [s.as_dict() for s in run.final_shocks]


def run_forward(sc: Scenario, out: Path, run: Run | None = None) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    run = Run(sc) if run is None else run
    b = run.bundle
    files = []
    li = np.arange(0, b.alpha.shape[0], TRAJ_LABEL_STRIDE)
    ti = np.arange(0, b.times.size, TRAJ_TIME_STRIDE)
    if ti[-1] != b.times.size - 1:
        ti = np.append(ti, b.times.size - 1)
    if b.dim == 1:
        A, Tm = np.meshgrid(li, ti, indexing="ij")
        rows = np.column_stack([b.alpha[A.ravel(), 0], b.times[Tm.ravel()], b.x[A.ravel(), Tm.ravel(), 0],
                                b.p[A.ravel(), Tm.ravel(), 0], b.det_Jx[A.ravel(), Tm.ravel()],
                                b.S[A.ravel(), Tm.ravel()], b.rho[A.ravel(), Tm.ravel()]])
        files.append(write_csv(out / "trajectories.csv", "trajectories", rows))
    snaps = []
    x = sc.x_grid if sc.x_grid is not None else np.linspace(*_support(run.init), 401)
    m0 = total_mass(snapshot(b, 0.0), []) if b.dim == 1 else None
    for t in sc.snapshot_times:
        if b.dim != 1:
            break
        c, vf, dens = _value_at(run, t, x)
        tg = _tag(t)
        files.append(write_csv(out / f"manifold_{tg}.csv", "manifold", c.to_rows()))
        files.append(write_csv(out / f"value_{tg}.csv", "value", vf.to_rows()))
        files.append(write_csv(out / f"density_{tg}.csv", "density", dens.to_rows()))
        for eps in sc.eps:
            sol = assemble_solution(vf, dens, eps, c)
            files.append(write_csv(out / f"solution_{tg}_{_tag(eps)}.csv", "solution", sol.to_rows()))
            orc = _oracle(run, c.t, eps, x)
            if orc is not None:
                with np.errstate(divide="ignore"):
                    rows = np.column_stack([orc.x, orc.u, -eps * orc.log_u])
                files.append(write_csv(out / f"oracle_{tg}_{_tag(eps)}.csv", "oracle", rows))
        snaps.append({"t": t, "grid_t": c.t, "shocks": [s.as_dict() for s in vf.shocks],
                      "folds": int(len(c.fold_alpha)),
                      "mass_deviation": total_mass(c, vf.shocks) / m0 - 1 if m0 else None})
    hist = []
    if run.history is not None:
        h = run.history
        for k in range(0, h.times.size, SHOCK_HISTORY_STRIDE):
            hist.append({"t": float(h.times[k]), "shocks": [s.as_dict() for s in h.shocks[k]]})
    files.append(write_json(out / "shocks.json", {"caustic_time": run.t_star, "final": shocks_section(run),
                                                  "history": hist}))
    summary = {"scenario": sc.name, "scenario_hash": sc.hash, "version": VERSION, "caustic": caustic_section(run),
               "shocks": shocks_section(run), "snapshots": snaps, "files": sorted(files + ["summary.json"])}
    write_json(out / "summary.json", summary)
    return summary


# -- backward -----------------------------------------------------------------------


def _minimum_of_S0(run: Run):
    init = run.init
    a = init.alpha[:, 0]
    v = init.S0.value(init.alpha)
    k = int(np.argmin(v))
    r = minimize_scalar(lambda s: float(init.S0.value(np.array([[s]]))[0]),
                        bounds=(a[max(k - 1, 0)], a[min(k + 1, a.size - 1)]), method="bounded",
                        options={"xatol": 1e-13})
    x0 = float(r.x)
    for _ in range(5):  # Newton polish on the gradient
        g = float(init.S0.grad(np.array([[x0]]))[0, 0])
        hss = float(init.S0.hess(np.array([[x0]]))[0, 0, 0])
        if hss <= 0:
            break
        x0 -= g / hss
    return np.array([x0]), init.S0.grad(np.array([[x0]]))[0], init.S0.hess(np.array([[x0]]))[0]


def lemma_section(run: Run) -> dict:
    if run.sym.dim != 1:
        return {"status": "not evaluated", "reason": "base point search implemented for n = 1"}
    try:
        x0, g, K = _minimum_of_S0(run)
        rep = bw.lemma_check(run.sym, x0, g, K, run.sc.T)
    except bw.LemmaHypothesisError as e:
        return {"status": "hypotheses not met", "reasons": e.reasons}
    except NotImplementedError as e:
        return {"status": "not evaluated", "reason": str(e)}
    d = rep.as_dict()
    d.update(status="nonsingular" if rep.nonsingular else "singular", base_point=x0.tolist())
    return d


def run_backward(sc: Scenario, out: Path, run: Run | None = None) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    run = Run(sc) if run is None else run
    if run.bundle.dim != 1:
        raise SystemExit("backward reconstruction is implemented for n = 1")
    terra = run.terra
    T = sc.T
    fills, recon, t3 = [], {}, {}
    grid = sc.x_grid if sc.x_grid is not None else np.linspace(*_support(run.init), 401)
    names = ["hermite", "tangent"] + (["fan"] if sc.symbol.x_independent else [])
    for name in names:
        try:
            rec = bw.reconstruct(run.sym, run.backward, T, name)
        except bw.FillRejectedError as e:
            fills.append({"strategy": name, "admitted": False, "reason": str(e)})
            continue
        fills.append({"strategy": name, "admitted": True, "intervals": rec.intervals,
                      "interior_minimum_margin": [f.interior_minimum() for f in rec.fills]})
        recon[name] = bw.recovery_error(rec, run.init, grid)
    if run.final_shocks and sc.eps:
        from .acceptance import theorem3_tables
        tabs = theorem3_tables(run, sorted(set(sc.eps) | {0.1, 0.0125}, reverse=True))
        t3 = {"tau": T, "mode_i": {k: v.as_dict() for k, v in tabs["mode_i"].items()},
              "mode_ii": {k: v.as_dict() for k, v in tabs["mode_ii"].items()}, "Psi": tabs["Psi"],
              "psi_support": list(tabs["psi_support"])}
    elif sc.eps and _is_heat(run.sym):
        t3 = {"note": "no shock at T: the reconstruction is the characteristic solution everywhere"}
    report = {"scenario_hash": sc.hash, "version": VERSION,
              "terra": terra.as_dict(every=TERRA_STRIDE), "fills": fills,
              "reconstruction": {"tau": T, "sup_error_outside_terra": recon},
              "theorem3": t3, "lemma": lemma_section(run)}
    write_json(out / "backward_report.json", report)
    return report


# -- verify / sweep -------------------------------------------------------------------


def run_verify(sc: Scenario, out: Path, echo=print) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    run = Run(sc)
    results = run_all(sc, run=run, echo=echo)
    byid = {r.id: r for r in results}
    report = {
        "scenario_hash": sc.hash, "version": VERSION, "caustic": caustic_section(run),
        "shocks": shocks_section(run),
        "terra": run.terra.as_dict(every=TERRA_STRIDE) if run.bundle.dim == 1 else {},
        "lemma": lemma_section(run),
        "theorem1": byid[2].as_dict() if 2 in byid else {},
        "theorem3": byid[10].as_dict() if 10 in byid else {},
        "criteria": [r.as_dict() for r in results],
    }
    report["passed"] = all(r.passed is not False for r in results)
    write_json(out / "report.json", report)
    validate_dir(out)
    return report


def run_sweep(sc: Scenario, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    run = Run(sc)
    x = sc.x_grid if sc.x_grid is not None else np.linspace(*_support(run.init), 401)
    rows = []
    for t in sc.snapshot_times:
        if t == 0:
            continue
        c, vf, dens = _value_at(run, t, x)
        for eps in sc.eps:
            sol = assemble_solution(vf, dens, eps, c)
            orc = _oracle(run, c.t, eps, x)
            row = {"t": t, "eps": eps}
            if orc is not None:
                ok = np.isfinite(vf.phi) & np.isfinite(orc.log_u) & (dens.rho_reg > 1e-2 * np.max(dens.rho_reg))
                w = np.sqrt(dens.rho_reg[ok])
                scaled = np.abs(w - np.exp(vf.phi[ok] / eps + orc.log_u[ok])) / np.max(w)
                # amplitudes agree only when the drift ordering is immaterial (H_xp = 0)
                row.update(sup_scaled_error=float(np.max(scaled)), oracle=orc.method,
                           amplitude_comparable=bool(run.sym.flags.x_independent_B),
                           sup_log_limit_error=float(np.max(np.abs(-eps * orc.log_u[ok] - vf.phi[ok]))))
            rows.append(row)
            write_csv(out / f"solution_{_tag(t)}_{_tag(eps)}.csv", "solution", sol.to_rows())
    rep = {"scenario_hash": sc.hash, "version": VERSION, "rows": rows}
    write_json(out / "sweep.json", rep)
    return rep


# -- entry point ------------------------------------------------------------------------


def _parser():
    p = argparse.ArgumentParser(prog="kfwkb", description="Asymptotic solutions by characteristics, with oracles.")
    sub = p.add_subparsers(dest="cmd", required=True)
    for name, hlp in [("forward", "characteristics, value function, densities, shocks"),
                      ("backward", "terra incognita, reconstruction, weak limits, nonsingularity check"),
                      ("verify", "run the acceptance suite and write report.json"),
                      ("sweep-eps", "asymptotic vs reference solution over an eps list")]:
        s = sub.add_parser(name, help=hlp)
        s.add_argument("--scenario", required=True, help="scenario JSON file or shipped scenario name")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--snapshot-times", type=float, nargs="*", default=None)
        s.add_argument("--eps", type=float, nargs="*", default=None)
    return p


def _scenario(args) -> Scenario:
    sc = load_scenario(args.scenario)
    if args.snapshot_times is not None or args.eps is not None:
        raw = dict(sc.raw)
        if args.snapshot_times is not None:
            raw["snapshot_times"] = args.snapshot_times
        if args.eps is not None:
            raw["eps"] = args.eps
        sc = Scenario.from_dict(raw)
    return sc


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        sc = _scenario(args)
    except Exception as e:  # invalid scenario
        print(f"error: {e}", file=sys.stderr)
        return 2
    out = Path(args.out)
    if args.cmd == "forward":
        s = run_forward(sc, out)
        validate_dir(out)
        print(f"caustic: {s['caustic']['status']} t*={s['caustic']['detected']}; shocks at T: {len(s['shocks'])}")
        return 0
    if args.cmd == "backward":
        r = run_backward(sc, out)
        validate_dir(out)
        print(f"terra intervals at t=0: {r['terra']['history'][-1]['intervals']}; lemma: {r['lemma']['status']}")
        return 0
    if args.cmd == "verify":
        rep = run_verify(sc, out)
        print("PASS" if rep["passed"] else "FAIL")
        return 0 if rep["passed"] else 1
    rep = run_sweep(sc, out)
    validate_dir(out)
    for row in rep["rows"]:
        print(json.dumps(row, sort_keys=True))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
