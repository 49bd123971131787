"""Command-line front end: ``run``, ``sweep``, ``rate``, ``certify``, ``gen``.

Exit codes: 0 success, 1 configuration error, 2 solver failure, 3 a
certificate (or a required convergence check) failed. Data goes to files in
the output directory; logs go to standard error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import core, diagnostics, io, oracle
from .errors import AdmmError, InvalidConfig, RateWindowError
from .instances import InstanceRecipe, rng
from .rates import fit_loglog, fit_rate

log = logging.getLogger("mbadmm")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CERT = 0, 1, 2, 3
OUTPUT_ENV = "MBADMM_OUTPUT_DIR"
BASE_COLUMNS = ("k", "f_val", "aug_lag", "primal_res", "max_image_diff", "xN_diff", "lambda_diff", "kkt_res")
MODES = ("plain", "perturbed", "scenario2")
QUANTITIES = ("ergodic_gap", "primal_res", "aug_lag_gap")


def fmt(v):
    return format(float(v), ".17g")


@dataclass
class RunConfig:
    instance: dict
    mode: str = "plain"
    gamma: object = "auto"
    epsilon: float | None = None
    max_iter: int = 1000
    inner_tol: float = 1e-10
    seed: int = 0
    output_dir: str = "out"
    certificates: list = field(default_factory=list)
    random_start: bool = False
    require_convergence: float | None = None
    eps_list: list = field(default_factory=lambda: [0.2, 0.1, 0.05])
    sweep_c: float = 100.0

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise InvalidConfig(f"unknown config fields: {sorted(extra)}")
        if "instance" not in d:
            raise InvalidConfig("config needs an 'instance'")
        cfg = cls(**d)
        cfg.check()
        return cfg

    def check(self):
        inst = self.instance
        if not isinstance(inst, dict) or not (("path" in inst) ^ ("recipe" in inst)):
            raise InvalidConfig("instance must be {'path': ...} or {'recipe': {...}}")
        if "recipe" in inst:
            try:
                io.recipe_from_dict(inst["recipe"])
            except (KeyError, TypeError, ValueError) as exc:
                raise InvalidConfig(f"bad recipe: {exc}")
        if self.mode not in MODES:
            raise InvalidConfig(f"mode must be one of {MODES}")
        if self.gamma != "auto":
            try:
                self.gamma = float(self.gamma)
            except (TypeError, ValueError):
                raise InvalidConfig("gamma must be a number or 'auto'")
            if not self.gamma > 0:
                raise InvalidConfig("gamma must be > 0")
        if self.mode == "perturbed":
            if self.epsilon is None or not float(self.epsilon) > 0:
                raise InvalidConfig("perturbed mode needs epsilon > 0")
            self.epsilon = float(self.epsilon)
        elif self.epsilon is not None:
            raise InvalidConfig("epsilon applies only to perturbed mode")
        if not isinstance(self.max_iter, int) or self.max_iter < 0:
            raise InvalidConfig("max_iter must be a nonnegative integer")
        if not float(self.inner_tol) > 0:
            raise InvalidConfig("inner_tol must be > 0")
        unknown = set(self.certificates) - set(diagnostics.STEP_CERTIFICATES)
        if unknown:
            raise InvalidConfig(f"unknown certificates: {sorted(unknown)}")
        if not self.eps_list or any(not float(e) > 0 for e in self.eps_list):
            raise InvalidConfig("eps_list must hold positive values")
        if not float(self.sweep_c) > 0:
            raise InvalidConfig("sweep_c must be > 0")

    def out_dir(self):
        return Path(os.environ.get(OUTPUT_ENV) or self.output_dir)


def load_instance(cfg: RunConfig):
    if "path" in cfg.instance:
        return io.load_problem(cfg.instance["path"])
    return io.recipe_from_dict(cfg.instance["recipe"]).build(), None


def make_mode(cfg: RunConfig):
    if cfg.mode == "perturbed":
        return core.Perturbed(cfg.epsilon)
    if cfg.mode == "scenario2":
        return core.Scenario2()
    return core.Plain()


def solver_config(cfg: RunConfig, prob, gamma=None, epsilon=None, max_iter=None):
    mode = make_mode(cfg) if epsilon is None else core.Perturbed(epsilon)
    if gamma is None:
        gamma = core.auto_gamma(prob, mode) if cfg.gamma == "auto" else cfg.gamma
    scfg = core.SolverConfig(gamma=gamma, mode=mode, max_iter=cfg.max_iter if max_iter is None else max_iter,
                             inner_tol=float(cfg.inner_tol))
    scfg.validate(prob)
    return scfg


def initial_point(cfg: RunConfig, prob):
    if not cfg.random_start:
        return None
    g = rng(cfg.seed)
    return [g.standard_normal(d) for d in prob.dims], None


def _oracle_for(prob, stored):
    return stored if stored is not None else oracle.solve(prob)


# --------------------------------------------------------------------------
# output files


def write_trace_csv(path, trace, cert_names, cert_records=None):
    """``cert_records`` maps name -> list aligned with ``trace.records``;
    by default the certificates stored in the records are used."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = list(BASE_COLUMNS)
        for name in cert_names:
            header += [f"{name}_pass", f"{name}_slack"]
        w.writerow(header)
        for idx, rec in enumerate(trace.records):
            row = [str(rec.k), fmt(rec.f_val), fmt(rec.aug_lag), fmt(rec.primal_res), fmt(rec.max_image_diff),
                   fmt(rec.xN_diff), fmt(rec.lambda_diff), fmt(rec.kkt_res)]
            for name in cert_names:
                c = cert_records[name][idx] if cert_records is not None else rec.certificates[name]
                row += ["1" if c.passed else "0", fmt(c.slack)]
            w.writerow(row)


def _floats(a):
    return [float(v) for v in np.asarray(a).ravel()]


def write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def save_run(out, prob, scfg, result, stored_oracle=None):
    out.mkdir(parents=True, exist_ok=True)
    tr = result.trace
    np.savez(out / "iterates.npz", u=np.asarray(tr.u_hist), lam=np.asarray(tr.lam_hist))
    io.save_problem(out / "instance.json", prob, stored_oracle)
    write_json(out / "run.json", {"mode": scfg.mode.name, "gamma": scfg.gamma,
                                  "epsilon": getattr(scfg.mode, "epsilon", None),
                                  "max_iter": scfg.max_iter, "inner_tol": scfg.inner_tol,
                                  "anchor": None if tr.anchor is None else [_floats(a) for a in tr.anchor]})
    if tr.iterations >= 1:
        rows = np.cumsum(np.asarray(tr.u_hist[1:]), axis=0) / np.arange(1, tr.iterations + 1)[:, None]
        with open(out / "ergodic.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"u{j}" for j in range(rows.shape[1])])
            for t, r in enumerate(rows):
                w.writerow([str(t)] + [fmt(v) for v in r])


def load_run(path):
    """Rebuild ``(problem, oracle_or_None, SolverConfig, Trace)`` from a run directory."""
    path = Path(path)
    prob, orc = io.load_problem(path / "instance.json")
    meta = json.loads((path / "run.json").read_text())
    if meta["mode"] == core.Perturbed.name:
        mode = core.Perturbed(meta["epsilon"])
    elif meta["mode"] == core.Scenario2.name:
        mode = core.Scenario2()
    else:
        mode = core.Plain()
    anchor = None if meta["anchor"] is None else tuple(np.array(a) for a in meta["anchor"])
    scfg = core.SolverConfig(gamma=meta["gamma"], mode=mode, max_iter=meta["max_iter"],
                             inner_tol=meta["inner_tol"], anchor=anchor)
    data = np.load(path / "iterates.npz")
    tr = core.Trace(meta["gamma"], mode, u_hist=list(data["u"]), lam_hist=list(data["lam"]), anchor=anchor)
    return prob, orc, scfg, tr


# --------------------------------------------------------------------------
# commands


def cmd_run(cfg: RunConfig) -> int:
    try:
        prob, stored = load_instance(cfg)
        scfg = solver_config(cfg, prob)
    except (AdmmError, OSError, ValueError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    out = cfg.out_dir()
    names = list(cfg.certificates)
    try:
        result = core.run(prob, scfg, initial=initial_point(cfg, prob), certificates=names)
    except AdmmError as exc:
        log.error("solver failure: %s", exc)
        return EXIT_SOLVER
    save_run(out, prob, scfg, result, stored)
    write_trace_csv(out / "trace.csv", result.trace, names)
    counts = {n: {"passed": sum(r.certificates[n].passed for r in result.trace.records),
                  "failed": sum(not r.certificates[n].passed for r in result.trace.records)} for n in names}
    st = result.state
    final_kkt = diagnostics.kkt_residual(prob, st.x, st.lam)
    summary = {"iterations": st.k, "gamma": scfg.gamma, "mode": scfg.mode.name,
               "final_x": [_floats(x) for x in st.x], "final_lambda": _floats(st.lam),
               "final_kkt_residual": final_kkt,
               "ergodic_x": None if result.ergodic is None else [_floats(x) for x in result.ergodic[0]],
               "certificates": counts}
    write_json(out / "summary.json", summary)
    if any(c["failed"] for c in counts.values()):
        log.error("certificate failures: %s", {n: c["failed"] for n, c in counts.items() if c["failed"]})
        return EXIT_CERT
    if cfg.require_convergence is not None and not final_kkt <= cfg.require_convergence:
        log.error("no convergence: final KKT residual %.3e > %.3e", final_kkt, cfg.require_convergence)
        return EXIT_CERT
    return EXIT_OK


def sweep_entry(prob, orc, cfg: RunConfig, eps):
    t = math.ceil(cfg.sweep_c / eps ** 2)
    scfg = solver_config(cfg, prob, gamma=eps, epsilon=eps, max_iter=t + 1)
    result = core.run(prob, scfg)
    u_bar, _ = result.trace.ergodic(t, prob)
    cert = diagnostics.scenario1_bound_certificate(prob, result.run_config, result.trace, orc, t)
    return {"eps": eps, "gamma": eps, "t": t,
            "err_obj": abs(prob.objective(u_bar) - orc.f_star),
            "err_res": float(np.linalg.norm(prob.constraint_map(u_bar))),
            "bound_lhs": cert.lhs, "bound_rhs": cert.rhs, "bound_pass": cert.passed}


def cmd_sweep_epsilon(cfg: RunConfig, eps_list=None, jobs=1) -> int:
    eps_list = [float(e) for e in (eps_list or cfg.eps_list)]
    try:
        if cfg.mode != "perturbed":
            raise InvalidConfig("sweep needs perturbed mode")
        prob, stored = load_instance(cfg)
        orc = _oracle_for(prob, stored)
        for e in eps_list:
            solver_config(cfg, prob, gamma=e, epsilon=e, max_iter=0)
    except (AdmmError, OSError, ValueError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    try:
        if jobs > 1:
            with ProcessPoolExecutor(jobs) as pool:
                rows = list(pool.map(sweep_entry, *zip(*[(prob, orc, cfg, e) for e in eps_list])))
        else:
            rows = [sweep_entry(prob, orc, cfg, e) for e in eps_list]
    except AdmmError as exc:
        log.error("solver failure: %s", exc)
        return EXIT_SOLVER
    out = cfg.out_dir()
    out.mkdir(parents=True, exist_ok=True)
    cols = ["eps", "gamma", "t", "err_obj", "err_res", "bound_lhs", "bound_rhs", "bound_pass"]
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([fmt(r["eps"]), fmt(r["gamma"]), str(r["t"]), fmt(r["err_obj"]), fmt(r["err_res"]),
                        fmt(r["bound_lhs"]), fmt(r["bound_rhs"]), "1" if r["bound_pass"] else "0"])
    slopes = {}
    if len(rows) >= 2:
        for key in ("err_obj", "err_res"):
            ys = [r[key] for r in rows]
            slopes[key] = fit_loglog(eps_list, ys)[0] if min(ys) > 0 else None
    write_json(out / "sweep_summary.json", {"eps": eps_list, "slopes": slopes,
                                            "all_bounds_pass": all(r["bound_pass"] for r in rows)})
    log.info("sweep slopes: %s", slopes)
    return EXIT_OK if all(r["bound_pass"] for r in rows) else EXIT_CERT


def rate_series(prob, orc, scfg, trace, quantity):
    """Values of ``quantity`` indexed by ``t = 0..K-1``."""
    K = trace.iterations
    if quantity == "ergodic_gap":
        return diagnostics.ergodic_gap_series(prob, trace, orc, range(K))
    if quantity == "primal_res":
        return np.array([np.linalg.norm(prob.constraint_map(trace.w(k + 1, prob).x)) for k in range(K)])
    if quantity == "aug_lag_gap":
        return np.array([diagnostics.augmented_lagrangian(prob, w.x, w.lam, scfg.gamma) - orc.f_star
                         for w in (trace.w(k + 1, prob) for k in range(K))])
    raise InvalidConfig(f"quantity must be one of {QUANTITIES}")


def cmd_rate(trace_path, quantity, window=None, out_path=None):
    """Fit the log-log slope of ``quantity`` over ``window`` of a stored run."""
    if quantity not in QUANTITIES:
        raise InvalidConfig(f"quantity must be one of {QUANTITIES}")
    prob, stored, scfg, trace = load_run(trace_path)
    orc = None if quantity == "primal_res" else _oracle_for(prob, stored)
    series = rate_series(prob, orc, scfg, trace, quantity)
    report = fit_rate(series, window)
    if out_path is not None:
        write_json(out_path, {"quantity": quantity, "window": list(report.window), "slope": report.slope,
                              "intercept": report.intercept, "r_squared": report.r_squared,
                              "points": report.points})
    return report


def bound_times(K):
    ts = []
    t = 10
    while t < K:
        ts.append(t)
        t *= 10
    if K >= 1 and (K - 1) not in ts:
        ts.append(K - 1)
    return ts


def certify_stored(prob, orc, scfg, trace, rel_tol=diagnostics.REL_TOL):
    """Full certificate suite over a stored trace; ``{name: [records]}``."""
    names = diagnostics.step_certificates_for(scfg.mode)
    report = diagnostics.certify_trace(prob, scfg, trace, names, rel_tol)
    if isinstance(scfg.mode, (core.Perturbed, core.Scenario2)) and trace.iterations >= 1:
        fn = (diagnostics.scenario1_bound_certificate if isinstance(scfg.mode, core.Perturbed)
              else diagnostics.scenario2_bound_certificate)
        report[fn.__name__.replace("_certificate", "")] = [fn(prob, scfg, trace, orc, t, rel_tol=rel_tol)
                                                          for t in bound_times(trace.iterations)]
    return report


def _write_cert_report(path, report):
    doc = {}
    for name, recs in report.items():
        failed = [r.iteration for r in recs if not r.passed]
        doc[name] = {"evaluated": len(recs), "failed": len(failed), "first_failures": failed[:10],
                     "worst_slack": min((r.slack for r in recs), default=None)}
    write_json(path, doc)
    return doc


def cmd_certify(cfg: RunConfig | None = None, trace_path=None) -> int:
    """Certify a fresh run from ``cfg`` or the stored run in ``trace_path``."""
    try:
        if trace_path is not None:
            prob, stored, scfg, trace = load_run(trace_path)
            out = Path(os.environ.get(OUTPUT_ENV) or trace_path)
        else:
            prob, stored = load_instance(cfg)
            scfg = solver_config(cfg, prob)
            out = cfg.out_dir()
        orc = _oracle_for(prob, stored)
    except (AdmmError, OSError, ValueError, KeyError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    if trace_path is None:
        try:
            result = core.run(prob, scfg, initial=initial_point(cfg, prob))
        except AdmmError as exc:
            log.error("solver failure: %s", exc)
            return EXIT_SOLVER
        trace = result.trace
        scfg = result.run_config
        save_run(out, prob, scfg, result, orc)
    try:
        report = certify_stored(prob, orc, scfg, trace)
    except AdmmError as exc:
        log.error("certificate evaluation failed: %s", exc)
        return EXIT_SOLVER
    out.mkdir(parents=True, exist_ok=True)
    doc = _write_cert_report(out / "certificates.json", report)
    for name, d in doc.items():
        log.info("%-22s evaluated=%d failed=%d worst_slack=%s", name, d["evaluated"], d["failed"], d["worst_slack"])
    return EXIT_CERT if any(d["failed"] for d in doc.values()) else EXIT_OK


def cmd_gen(recipe: InstanceRecipe, path, with_oracle=False) -> int:
    prob = recipe.build()
    orc = oracle.solve(prob) if with_oracle else None
    io.save_problem(path, prob, orc)
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def _add_run_flags(p):
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--instance", help="instance file, or a recipe name: sharing, qp, divergence")
    p.add_argument("--N", type=int, default=3)
    p.add_argument("--dims", help="comma-separated block sizes (one value repeats)")
    p.add_argument("--p", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--gamma")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--inner-tol", type=float)
    p.add_argument("--output-dir")
    p.add_argument("--certificates", help="comma-separated per-iteration certificate names")
    p.add_argument("--random-start", action="store_true")
    p.add_argument("--require-convergence", type=float, metavar="TOL")


def _recipe_from_flags(a):
    name = a.instance
    N = a.N if name != "divergence" else 3
    if name == "divergence":
        return InstanceRecipe("divergence", 3, (1, 1, 1), 3, 0)
    if a.dims is None or a.p is None:
        raise InvalidConfig("recipes need --dims and --p")
    dims = tuple(int(x) for x in a.dims.split(","))
    if len(dims) == 1:
        dims = dims * N if name == "qp" else dims * (N - 1) + (a.p,)
    return InstanceRecipe(name, N, dims, a.p, a.seed or 0)


def config_from_args(a) -> RunConfig:
    d = {}
    if a.config:
        with open(a.config) as fh:
            d = json.load(fh)
    if a.instance:
        if a.instance in ("sharing", "qp", "divergence"):
            d["instance"] = {"recipe": io.recipe_to_dict(_recipe_from_flags(a))}
        else:
            d["instance"] = {"path": a.instance}
    for key in ("mode", "gamma", "epsilon", "max_iter", "inner_tol", "seed", "output_dir", "require_convergence"):
        v = getattr(a, key)
        if v is not None:
            d[key] = v
    if a.gamma is not None and a.gamma != "auto":
        d["gamma"] = a.gamma
    if a.certificates:
        d["certificates"] = [c for c in a.certificates.split(",") if c]
    if a.random_start:
        d["random_start"] = True
    return RunConfig.from_dict(d)


def build_parser():
    ap = argparse.ArgumentParser(prog="mbadmm", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)
    _add_run_flags(sub.add_parser("run", help="run the solver and write a trace"))
    sp = sub.add_parser("sweep", help="epsilon sweep of the perturbed iteration")
    _add_run_flags(sp)
    sp.add_argument("--eps", help="comma-separated epsilon values")
    sp.add_argument("--c", type=float, help="t = ceil(c / eps^2)")
    sp.add_argument("--jobs", type=int, default=1)
    rp = sub.add_parser("rate", help="log-log rate fit on a stored run")
    rp.add_argument("trace", help="run directory")
    rp.add_argument("--quantity", choices=QUANTITIES, default="ergodic_gap")
    rp.add_argument("--window", help="t_lo,t_hi")
    cp = sub.add_parser("certify", help="run (or load) and evaluate every certificate")
    _add_run_flags(cp)
    cp.add_argument("--trace", help="certify a stored run directory instead of running")
    gp = sub.add_parser("gen", help="write an instance file from a recipe")
    gp.add_argument("recipe", choices=("sharing", "qp", "divergence"))
    gp.add_argument("--N", type=int, default=3)
    gp.add_argument("--dims")
    gp.add_argument("--p", type=int)
    gp.add_argument("--seed", type=int, default=0)
    gp.add_argument("--with-oracle", action="store_true")
    gp.add_argument("-o", "--output", required=True)
    return ap


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    try:
        if a.cmd == "gen":
            a.instance = a.recipe
            return cmd_gen(_recipe_from_flags(a), a.output, a.with_oracle)
        if a.cmd == "rate":
            window = None if a.window is None else tuple(int(x) for x in a.window.split(","))
            report = cmd_rate(a.trace, a.quantity, window, Path(a.trace) / f"rate_{a.quantity}.json")
            print(json.dumps({"window": list(report.window), "slope": report.slope,
                              "intercept": report.intercept, "r_squared": report.r_squared}))
            return EXIT_OK
        if a.cmd == "certify" and a.trace:
            return cmd_certify(trace_path=a.trace)
        cfg = config_from_args(a)
        if a.cmd == "run":
            return cmd_run(cfg)
        if a.cmd == "sweep":
            if a.c is not None:
                cfg.sweep_c = a.c
            eps = None if a.eps is None else [float(x) for x in a.eps.split(",")]
            return cmd_sweep_epsilon(cfg, eps, a.jobs)
        return cmd_certify(cfg)
    except (InvalidConfig, RateWindowError, OSError, ValueError, KeyError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except AdmmError as exc:
        log.error("failure: %s", exc)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
