"""Command-line pipeline: prep, fit, markov-test, predict, simulate.

Every command reads the YAML configuration and communicates with the
others through files in the output directory::

    <out>/simulate/   wide.csv, long.csv, generator.yaml
    <out>/prep/       records.csv, centering.json, screening.csv
    <out>/fit/<A>/    fit.json, coefficients.csv, forest.csv, selection.csv, log.txt
    <out>/markov/<A>/ report.txt, pvalues.csv
    <out>/predict/<A>/<profile>_cohort<g>_<method>.csv, points.csv
"""

from __future__ import annotations

import argparse
import logging
import sys
import zlib
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from . import io
from .cohort import fit_multistate, forest_table, select_interaction
from .cox import fit_cox
from .events import ENTRY_COLUMN, center_covariates, check_min_events, impute_recovery_sojourn, prepare_long
from .markov_test import LandmarkGrid, default_grid, global_markov_test
from .prediction import AJ, MC, SubjectProfile, aalen_johansen, dynamic_frame, dynamic_prediction, \
    evaluate_at, simulate_occupation
from .simulate import GeneratorSpec, div3w_generator, simulate_dataset

log = logging.getLogger("msmcohort")


def derive_seed(seed: int, *names) -> int:
    """Seed for a named component, stable across runs and platforms."""
    keys = [int(seed)] + [zlib.crc32(str(n).encode()) for n in names]
    return int(np.random.SeedSequence(keys).generate_state(1)[0])


class Run:
    def __init__(self, args):
        self.args = args
        self.cfg = io.load_config(args.config)
        self.seed = self.cfg.seed if args.seed is None else args.seed
        self.out = Path(args.out) if args.out else self.cfg.path(self.cfg.out)
        if args.approach:
            self.cfg.approach = args.approach
        self.failed = False

    def dir(self, *parts) -> Path:
        d = self.out.joinpath(*parts)
        d.mkdir(parents=True, exist_ok=True)
        return d

    def meta(self, command):
        return io.metadata(self.cfg, self.seed, command)

    def records(self):
        p = self.out / "prep" / "records.csv"
        if not p.exists():
            raise FileNotFoundError(f"{p} not found; run 'prep' first")
        rec = io.read_table(p)
        cen = io.read_json(self.out / "prep" / "centering.json")
        return rec, cen.get("constants", {})

    def fits(self, approach):
        p = self.out / "fit" / approach / "fit.json"
        if not p.exists():
            raise FileNotFoundError(f"{p} not found; run 'fit' first")
        return io.load_fit(p)


def cmd_simulate(run: Run) -> None:
    g = run.cfg.generator
    if g.get("replica", False) or "spec" not in g:
        spec = div3w_generator(float(g.get("scale", 1.0)), float(g.get("horizon", run.cfg.space.horizon)))
    else:
        spec = GeneratorSpec.from_dict(g["spec"])
    hist = simulate_dataset(spec, derive_seed(run.seed, "simulate"))
    d = run.dir("simulate")
    io.write_wide(hist, spec.space, d / "wide.csv")
    io.write_table(prepare_long(hist, spec.space), d / "long.csv")
    (d / "generator.yaml").write_text(yaml.safe_dump(
        {"metadata": run.meta("simulate"), "generator": spec.to_dict()}, sort_keys=False))
    sizes = [int(n) for n in spec.cohort_sizes]
    io.write_json({"metadata": run.meta("simulate"), "cohort_sizes": sizes, "n_subjects": len(hist)},
                  d / "metadata.json")
    print(f"simulated {len(hist)} subjects; cohort sizes {tuple(sizes)}; seed {run.seed}")


def cmd_prep(run: Run) -> None:
    cfg = run.cfg
    data = cfg.data
    if "input" not in data:
        raise ValueError("configuration needs data.input")
    src = cfg.path(data["input"])
    covs = data.get("covariates")
    if data.get("format", "wide") == "wide":
        hist = io.read_wide(src, cfg.space)
        if not hist:
            raise io.DataError("no subjects in input")
        rc = data.get("recovery")
        if rc:
            hist = impute_recovery_sojourn(hist, rc.get("state", "Recovery"), float(rc.get("sojourn", 2.0)),
                                           cfg.space)
        records = prepare_long(hist, cfg.space, covs)
    else:
        records = io.read_long(src, cfg.space)
    if records.empty:
        raise io.DataError("no subjects in input")
    names = list(data.get("center") or [])
    records, constants = center_covariates(records, names) if names else (records, {})
    preds = {s.transition: s.covariates for s in cfg.transition_specs(covs)}
    screen = check_min_events(records, preds, int(data.get("events_per_predictor", 5)))
    d = run.dir("prep")
    meta = run.meta("prep")
    io.write_table(records, d / "records.csv", meta)
    io.write_json({"metadata": meta, "constants": constants}, d / "centering.json")
    io.write_table(screen, d / "screening.csv", meta)
    notes = screen.attrs.get("notes", [])
    if notes or records.attrs.get("recovery_imputed"):
        (d / "screening_notes.txt").write_text("\n".join(notes) + "\n")
    print(f"prepared {len(records)} records for {records['id'].nunique()} subjects")


def _screened_specs(run: Run, records):
    """Apply the screening recommendation to the configured specs."""
    specs = run.cfg.transition_specs(run.cfg.data.get("covariates"))
    preds = {s.transition: s.covariates for s in specs}
    screen = check_min_events(records, preds).set_index("trans")
    out, notes = [], []
    for s in specs:
        rec = screen["recommendation"].get(s.transition, "skip")
        if rec == "skip":
            notes.append(f"{s.transition}: no events, not fitted")
            continue
        if rec == "baseline-only":
            notes.append(f"{s.transition}: too few events, pooled baseline hazard only")
            s = s.with_(covariates=(), entry_term=None, interaction=None)
        elif rec == "reduced":
            notes.append(f"{s.transition}: fewer than {len(s.covariates)} predictors supported "
                         f"({int(screen.loc[s.transition, 'admissible'])} admissible)")
        out.append(s)
    pooled = [t for t, r in screen["recommendation"].items() if r == "baseline-only"]
    return out, notes, pooled


def cmd_fit(run: Run) -> None:
    records, constants = run.records()
    specs, notes, pooled = _screened_specs(run, records)
    alpha = run.cfg.alpha
    select = run.cfg.models.get("select_interaction", True)
    for approach in run.cfg.approaches:
        chosen, sel_rows, log_lines = [], [], list(notes)
        for s in specs:
            cand = s.interaction
            if select and s.covariates and s.transition not in pooled and records["cohort"].nunique() > 1:
                try:
                    sel = select_interaction(records, s.with_(interaction=None), approach=approach, alpha=alpha)
                    t = sel.table()
                    t.insert(0, "transition", s.transition)
                    sel_rows.append(t)
                    cand = sel.chosen
                    log_lines.append(f"{s.transition}: interaction {cand or 'none'} selected")
                except Exception as exc:  # selection failure leaves the main-effects model
                    log_lines.append(f"{s.transition}: interaction selection failed ({exc})")
                    cand = None
            mode = "covariate" if cand and s.cohort_mode == "ignore" else s.cohort_mode
            chosen.append(s.with_(interaction=cand, cohort_mode=mode))
        mf = fit_multistate(records, chosen, approach, run.cfg.space, constants, n_jobs=run.args.threads,
                            pooled=pooled)
        for t, e in mf.failures.items():
            log_lines.append(f"{t}: FAILED {e}")
            run.failed = True
        d = run.dir("fit", approach)
        meta = run.meta("fit")
        io.save_fit(mf, d / "fit.json", meta)
        io.write_table(mf.coefficient_table(), d / "coefficients.csv", meta)
        io.write_table(forest_table(mf, {}), d / "forest.csv", meta)
        io.write_table(pd.concat(sel_rows, ignore_index=True) if sel_rows else pd.DataFrame(),
                       d / "selection.csv", meta)
        (d / "log.txt").write_text("\n".join(log_lines) + "\n")
        print(f"{approach}: fitted {len(mf.fits)} transitions, {len(mf.failures)} failed")


def cmd_markov_test(run: Run) -> None:
    records, _ = run.records()
    mt = run.cfg.markov_test
    B = run.args.bootstrap or int(mt.get("B", 1000))
    allow = run.args.allow_small_bootstrap or bool(mt.get("allow_small_bootstrap", False))
    law = mt.get("law", "mammen")
    for approach in run.cfg.approaches:
        mf = run.fits(approach)
        targets = mt.get("transitions") or list(mf.fits)
        blocks, rows = [], []
        for t in targets:
            if t not in mf.fits:
                blocks.append(f"transition {t}  status not computable: no fit")
                rows.append({"transition": t, "status": "not computable: no fit"})
                continue
            fit = mf.fits[t]
            if fit.spec.entry_term is not None:
                # the test targets the Markov model of the transition
                spec = fit.spec.with_(entry_term=None, interaction=None if fit.spec.interaction == ENTRY_COLUMN
                                      else fit.spec.interaction)
                fit = fit_cox(records, spec)
                blocks.append(f"# {t}: entry-time term dropped; testing the Markov model")
            grid = None
            if mt.get("landmarks"):
                grid = LandmarkGrid(tuple(mt["landmarks"]))
            else:
                grid = default_grid(records, t, int(mt.get("L", 10)), int(mt.get("min_arm", 10)))
            res = global_markov_test(records, fit, grid, None, B, derive_seed(run.seed, "markov", approach, t),
                                     run.cfg.space, law, allow_small=allow)
            blocks.append(res.report())
            if not res.computable:
                rows.append({"transition": t, "status": res.status})
                continue
            for summary, row in res.pvalues.iterrows():
                for col, p in row.items():
                    rows.append({"transition": t, "status": res.status, "summary": summary,
                                 "qualifying": col, "p": p, "B": B})
        d = run.dir("markov", approach)
        meta = run.meta("markov-test")
        header = "\n".join(f"# {k}: {v}" for k, v in meta.items())
        (d / "report.txt").write_text(header + "\n\n" + "\n\n".join(blocks) + "\n")
        io.write_table(pd.DataFrame(rows), d / "pvalues.csv", meta)
        print(f"{approach}: Markov test for {len(targets)} transitions (B={B})")


def cmd_predict(run: Run) -> None:
    pc = run.cfg.prediction
    profiles = pc.get("profiles") or []
    if not profiles:
        raise ValueError("configuration lists no prediction profiles")
    methods = pc.get("methods", [AJ, MC])
    M = int(pc.get("M", 10_000))
    times = [float(t) for t in pc.get("times", [10, 20])]
    for approach in run.cfg.approaches:
        mf = run.fits(approach)
        d = run.dir("predict", approach)
        meta = run.meta("predict")
        points = []
        for k, pr in enumerate(profiles):
            name = pr.get("name", f"profile{k + 1}")
            cohorts = pr.get("cohorts") or [pr.get("cohort", 1)]
            for g in cohorts:
                prof = SubjectProfile(dict(pr.get("covariates") or {}), int(g), pr["state"],
                                      float(pr.get("s", 0.0)), pr.get("t_entry"))
                for method in methods:
                    seed = derive_seed(run.seed, "predict", approach, name, g)
                    if method == AJ:
                        curve = aalen_johansen(mf, prof)
                    else:
                        curve = simulate_occupation(mf, prof, M=M, seed=seed, n_jobs=run.args.threads)
                    io.write_table(curve.frame(), d / f"{name}_cohort{g}_{method}.csv", meta)
                    for t in times:
                        if curve.s <= t <= curve.times[-1]:
                            row = evaluate_at(curve, t)
                            points.append({"profile": name, "cohort": g, "method": method, "time": t,
                                           **row.to_dict()})
                entry_times = pr.get("entry_times")
                if entry_times:
                    curves = dynamic_prediction(mf, prof, entry_times, M=M,
                                                seed=derive_seed(run.seed, "dynamic", approach, name, g),
                                                n_jobs=run.args.threads)
                    io.write_table(dynamic_frame(curves), d / f"{name}_cohort{g}_dynamic.csv", meta)
        io.write_table(pd.DataFrame(points), d / "points.csv", meta)
        print(f"{approach}: predictions for {len(profiles)} profiles")


COMMANDS = {"prep": cmd_prep, "fit": cmd_fit, "markov-test": cmd_markov_test,
            "predict": cmd_predict, "simulate": cmd_simulate}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="msmcohort", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=list(COMMANDS))
    p.add_argument("--config", required=True, help="YAML run configuration")
    p.add_argument("--seed", type=int, default=None, help="overrides the configured seed")
    p.add_argument("--approach", choices=["m1", "m2", "both"], type=str.lower, default=None)
    p.add_argument("--bootstrap", type=int, default=None, help="wild bootstrap replicates B")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--allow-small-bootstrap", action="store_true", help="permit B < 1000")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        run = Run(args)
        COMMANDS[args.command](run)
    except (io.DataError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 1 if run.failed else 0


if __name__ == "__main__":
    sys.exit(main())
