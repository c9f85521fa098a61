"""Command-line interface.

Commands: ``simulate`` runs a study grid and writes summary/sweep/
shrinkage/runs artifacts; ``estimate`` applies the estimators to a CSV
dataset; ``sweep`` is ``estimate`` restricted to the score-family sweep;
``verify`` runs the built-in exactness checks.

Exit codes: 0 success, 1 invalid input (config or data), 2 numerical
failure.  Tables go to stdout, diagnostics to stderr.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import simulation
from .estimators import (
    Dataset,
    InfiniteWeightError,
    aipw_att,
    bias_diagnostic,
    discrete_model_corpus,
    ipw_att,
    naive,
    regression_att,
    verify_bias_formula,
)
from .regmodels import FittedGLM, SeparationError, SingularSystemError, cv_path
from .scorefamily import (
    CollinearityError,
    build_family,
    gamma_of_w,
    reduced_propensity,
)

NUMERICAL_ERRORS = (SingularSystemError, SeparationError, InfiniteWeightError,
                    CollinearityError, np.linalg.LinAlgError,
                    FloatingPointError, ZeroDivisionError)

ESTIMATE_KEYS = {"penalty_family", "estimators", "w_grid", "folds", "seed",
                 "strata"}
ESTIMATE_NAMES = ("naive", "regression", "ipw", "aipw", "ipw_d", "aipw_d")

ESTIMATE_SCHEMA = """\
Estimate config (JSON object, all keys optional):
  penalty_family  str      ridge | lasso (default lasso)
  estimators      [str]    any of: %s
  w_grid          [float]  score-family values in [-1, 1]
                           (default [-1, -0.5, 0, 0.5, 1])
  folds           int      CV folds (default 10)
  seed            int      CV fold seed (default 0)
  strata          int      strata for the bias diagnostic (default 20)
Unknown keys are rejected.  The dataset CSV must have header y,t,x1..xp.
""" % ", ".join(ESTIMATE_NAMES)


# ---------------------------------------------------------------------------
# dataset ingestion


def read_dataset_csv(path) -> Dataset:
    """Parse a y,t,x1..xp CSV; errors name the offending row."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        p = len(header) - 2
        expected = ["y", "t"] + [f"x{j}" for j in range(1, p + 1)]
        if p < 1 or header != expected:
            raise ValueError(
                f"{path}: header must be y,t,x1..xp; got {','.join(header)}"
            )
        ys, ts, xs = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != p + 2:
                raise ValueError(
                    f"{path}: row {lineno} has {len(row)} fields, expected {p + 2}"
                )
            try:
                vals = [float(v) for v in row]
            except ValueError:
                raise ValueError(
                    f"{path}: row {lineno} contains a non-numeric field"
                ) from None
            if vals[1] not in (0.0, 1.0):
                raise ValueError(
                    f"{path}: row {lineno}: treatment value {row[1]!r} "
                    "is not 0 or 1"
                )
            ys.append(vals[0])
            ts.append(int(vals[1]))
            xs.append(vals[2:])
    if not ys:
        raise ValueError(f"{path}: no data rows")
    y = np.array(ys)
    t = np.array(ts)
    if t.min() == t.max():
        raise ValueError(f"{path}: treatment column contains a single class")
    if y.min() == y.max():
        raise ValueError(f"{path}: outcome column is constant")
    return Dataset.from_arrays(np.array(xs), t, y)


def write_dataset_csv(path, dataset: Dataset):
    """Full-precision dump in the layout read_dataset_csv expects."""
    X = dataset.design.values
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["y", "t"] + [f"x{j}" for j in
                                        range(1, X.shape[1] + 1)]) + "\n")
        for i in range(dataset.n):
            cells = [repr(float(dataset.outcome[i])), str(int(dataset.treatment[i]))]
            cells += [repr(float(v)) for v in X[i]]
            fh.write(",".join(cells) + "\n")


# ---------------------------------------------------------------------------
# estimate / sweep


def parse_estimate_config(obj: dict, sweep=False) -> dict:
    if not isinstance(obj, dict):
        raise ValueError("config must be a JSON object")
    unknown = sorted(set(obj) - ESTIMATE_KEYS)
    if unknown:
        raise ValueError(f"unknown key(s) in config: {', '.join(unknown)}")
    family = obj.get("penalty_family", "lasso")
    if family not in ("ridge", "lasso"):
        raise ValueError("penalty_family must be ridge or lasso")
    default_roster = ("ipw_d", "aipw_d") if sweep else ESTIMATE_NAMES
    roster = tuple(obj.get("estimators", default_roster))
    for name in roster:
        if name not in ESTIMATE_NAMES:
            raise ValueError(f"unknown estimator {name!r}; "
                             f"choose from {', '.join(ESTIMATE_NAMES)}")
    w_grid = tuple(float(w) for w in obj.get("w_grid",
                                             (-1.0, -0.5, 0.0, 0.5, 1.0)))
    for w in w_grid:
        if not -1.0 <= w <= 1.0:
            raise ValueError(f"w_grid value {w} outside [-1, 1]")
    return {
        "penalty_family": family,
        "estimators": roster,
        "w_grid": w_grid,
        "folds": int(obj.get("folds", 10)),
        "seed": int(obj.get("seed", 0)),
        "strata": int(obj.get("strata", 20)),
    }


def estimate_dataset(data: Dataset, config: dict) -> dict:
    """Shared estimation path for the estimate/sweep commands.

    Returns the serializable report: per-estimator point estimates and
    weight diagnostics, the fitted score family, and the per-w bias
    diagnostic from the fitted models.
    """
    rng = np.random.default_rng(
        np.random.SeedSequence([config["seed"], 0xE57]))
    fits = simulation.fit_replication_models(data, config["penalty_family"],
                                             config["folds"], rng)
    treated = data.treatment == 1
    m1_cv = cv_path(data.design.values[treated], data.outcome[treated],
                    config["penalty_family"], "identity",
                    folds=config["folds"], seed=int(rng.integers(2**63)))
    m1_pred = m1_cv.fit_at("one_se")
    X = data.design.values
    e_hat = fits.prop.predict(X)
    reports = []

    def add(name, w, report):
        row = {"estimator": name, "w": w,
               "estimate": report.point_estimate}
        row.update(report.diagnostics)
        reports.append(row)

    family = None
    family_error = None
    needs_family = any(n in ("ipw_d", "aipw_d") for n in config["estimators"])
    if needs_family:
        try:
            family = build_family(fits.m0_dir.coefficients,
                                  fits.prop.coefficients)
        except (CollinearityError, ValueError) as exc:
            family_error = exc
    for name in config["estimators"]:
        if name == "naive":
            add(name, None, naive(data))
        elif name == "regression":
            add(name, None, regression_att(data, fits.m0_pred))
        elif name == "ipw":
            add(name, None, ipw_att(data, e_hat))
        elif name == "aipw":
            add(name, None, aipw_att(data, e_hat, fits.m0_pred))
        else:
            if family is None:
                raise family_error
            for w in config["w_grid"]:
                score = gamma_of_w(family, w)
                ed = reduced_propensity(score, fits.prop).evaluate(
                    score.score(X))
                if name == "ipw_d":
                    add(name, w, ipw_att(data, ed))
                else:
                    add(name, w, aipw_att(data, ed, fits.m0_pred))
    diagnostics = {}
    if family is not None:
        for w in config["w_grid"]:
            score = gamma_of_w(family, w)
            att, ate = bias_diagnostic(data, score.score(X), fits.m0_pred,
                                       m1_pred, e_hat, config["strata"])
            diagnostics[repr(float(w))] = {"att": att, "ate": ate}
    return {
        "config": {k: list(v) if isinstance(v, tuple) else v
                   for k, v in config.items()},
        "n": data.n,
        "p": data.design.p,
        "family": family.to_json() if family is not None else None,
        "estimates": reports,
        "bias_diagnostic": diagnostics,
    }


ESTIMATE_COLUMNS = ("estimator", "w", "estimate", "weight_variance",
                    "max_weight", "effective_sample_size", "fraction_outside")


def _write_estimates(out_dir, result):
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "estimates.csv")
    simulation._write_csv(csv_path, ESTIMATE_COLUMNS, result["estimates"])
    json_path = os.path.join(out_dir, "estimates.json")
    with open(json_path, "w") as fh:
        json.dump(result, fh, indent=2)
        fh.write("\n")
    return csv_path, json_path


def _print_estimate_table(result):
    print(f"{'estimator':<12} {'w':>6} {'estimate':>14} {'ESS':>10}")
    for row in result["estimates"]:
        w = "" if row["w"] is None else f"{row['w']:g}"
        print(f"{row['estimator']:<12} {w:>6} {row['estimate']:>14.6f} "
              f"{row['effective_sample_size']:>10.1f}")
    if result["bias_diagnostic"]:
        print()
        print(f"{'w':>6} {'bias diag (ATT)':>16} {'bias diag (ATE)':>16}")
        for w, d in result["bias_diagnostic"].items():
            print(f"{float(w):>6g} {d['att']:>16.6f} {d['ate']:>16.6f}")


def cmd_estimate(args, sweep=False) -> int:
    obj = {}
    if args.config:
        with open(args.config) as fh:
            obj = json.load(fh)
    config = parse_estimate_config(obj, sweep=sweep)
    if args.seed is not None:
        config["seed"] = args.seed
    data = read_dataset_csv(args.dataset)
    result = estimate_dataset(data, config)
    csv_path, json_path = _write_estimates(args.out, result)
    _print_estimate_table(result)
    print(f"\nwrote {csv_path} and {json_path}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# simulate


def _print_summary_table(tables):
    print(f"{'cell':<28} {'estimator':<18} {'w':>6} "
          f"{'rmse':>10} {'bias':>10} {'sd':>10} {'fail':>5}")
    for row in tables["summary"]:
        w = "" if row["w"] is None else f"{row['w']:g}"
        rmse = "" if row["rmse"] is None else f"{row['rmse']:.4f}"
        bias = "" if row["bias"] is None else f"{row['bias']:.4f}"
        sd = "" if row["sd"] is None else f"{row['sd']:.4f}"
        print(f"{row['cell']:<28} {row['estimator']:<18} {w:>6} "
              f"{rmse:>10} {bias:>10} {sd:>10} {row['failures']:>5}")


def cmd_simulate(args) -> int:
    if not args.config:
        raise ValueError("simulate requires --config")
    grid = simulation.load_grid(args.config)
    if args.seed is not None:
        grid = simulation.ExperimentGrid(
            grid.cells, grid.estimators, grid.w_grid, grid.replications,
            args.seed, grid.folds)
        # reseed the per-cell coefficient draws off the new base seed
        with open(args.config) as fh:
            obj = json.load(fh)
        obj["base_seed"] = args.seed
        grid = simulation.parse_grid(obj)
    if args.replications is not None:
        if args.replications < 1:
            raise ValueError("--replications must be positive")
        grid = simulation.ExperimentGrid(
            grid.cells, grid.estimators, grid.w_grid, args.replications,
            grid.base_seed, grid.folds)
    if args.cells is not None:
        if args.cells < 1:
            raise ValueError("--cells must be positive")
        grid = simulation.ExperimentGrid(
            grid.cells[:args.cells], grid.estimators, grid.w_grid,
            grid.replications, grid.base_seed, grid.folds)
    results = simulation.run_grid(grid, threads=args.threads)
    paths = simulation.write_outputs(args.out, results)
    _print_summary_table(simulation.aggregate(results))
    print("\nwrote " + ", ".join(sorted(paths.values())), file=sys.stderr)
    total_failures = sum(len(msgs) for res in results
                         for msgs in res.failures.values())
    if total_failures:
        print(f"{total_failures} estimator failure(s) recorded in runs.jsonl",
              file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# verify


def _verify_checks():
    """Yield (name, passed, detail) for the built-in exactness checks."""
    corpus = discrete_model_corpus()
    worst_joint = max(abs(verify_bias_formula(m)[0] - verify_bias_formula(m)[1])
                      for m in corpus)
    yield ("bias identity, joint-law form, %d models" % len(corpus),
           worst_joint <= 1e-12, f"max |lhs-rhs| = {worst_joint:.2e}")
    worst_model = max(abs(m.tau_d() - m.tau() - m.bias_model_form())
                      for m in corpus)
    yield ("bias identity, model form", worst_model <= 1e-12,
           f"max |lhs-rhs| = {worst_model:.2e}")

    rng = np.random.default_rng(4242)
    worst_end = worst_res = 0.0
    min_violation = np.inf
    for _ in range(20):
        p = int(rng.integers(3, 25))
        a = rng.normal(size=p)
        a /= np.linalg.norm(a)
        perp = rng.normal(size=p)
        perp -= (perp @ a) * a
        perp /= np.linalg.norm(perp)
        rho = rng.uniform(0.05, 0.95)
        b = rho * a + np.sqrt(1 - rho * rho) * perp
        fam = build_family(a, b)
        worst_end = max(
            worst_end,
            float(np.max(np.abs(gamma_of_w(fam, -1.0).gamma - fam.alpha))),
            float(np.max(np.abs(gamma_of_w(fam, 1.0).gamma - fam.beta))))
        for w in np.linspace(-1, 1, 101):
            score = gamma_of_w(fam, w)
            g = score.gamma
            worst_res = max(worst_res, abs(float(fam.alpha @ g) *
                                           float(g @ fam.beta) - fam.rho))
            if abs(w) < 1:
                v = score.w1 * fam.u1 + score.w2 * fam.u2
                v /= np.linalg.norm(v)
                min_violation = min(min_violation,
                                    abs(float(fam.alpha @ v) *
                                        float(v @ fam.beta) - fam.rho))
    yield ("score family endpoints", worst_end <= 1e-10,
           f"max endpoint error = {worst_end:.2e}")
    yield ("score family constraint residual", worst_res <= 1e-10,
           f"max residual = {worst_res:.2e}")
    yield ("null component is load-bearing", min_violation > 1e-10,
           f"min truncated-direction residual = {min_violation:.2e}")

    worst_q = 0.0
    for _ in range(10):
        p = int(rng.integers(5, 20))
        direction = rng.normal(size=p)
        direction /= np.linalg.norm(direction)
        b = rng.uniform(0.5, 4.0) * direction
        g = rng.normal(size=p)
        g /= np.linalg.norm(g)
        fit = FittedGLM(float(rng.normal()), b, "logit", "ridge", 0.0)
        quad = reduced_propensity(g, fit)
        mc = reduced_propensity(g, fit, method="monte_carlo",
                                draws=1_000_000, rng=11)
        d = np.linspace(-3, 3, 7)
        worst_q = max(worst_q, float(np.max(np.abs(quad.evaluate(d) -
                                                   mc.evaluate(d)))))
    yield ("reduced propensity quadrature vs Monte Carlo", worst_q <= 1e-4,
           f"max |quad - mc| = {worst_q:.2e}")


def cmd_verify(args) -> int:
    failed = 0
    for name, passed, detail in _verify_checks():
        status = "PASS" if passed else "FAIL"
        print(f"{status}  {name}  ({detail})")
        if not passed:
            failed += 1
    if failed:
        print(f"{failed} check(s) failed", file=sys.stderr)
        return 2
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deconfound",
        description="Deconfounding-score estimation of treatment effects")
    parser.add_argument("--print-schema", action="store_true",
                        help="print the config file schemas and exit")
    sub = parser.add_subparsers(dest="command")

    sim = sub.add_parser("simulate", help="run a simulation study grid")
    sim.add_argument("--config", required=False, help="grid config JSON")
    sim.add_argument("--out", default="out", help="output directory")
    sim.add_argument("--seed", type=int, default=None,
                     help="override the config base seed")
    sim.add_argument("--threads", type=int, default=1,
                     help="worker threads for replications")
    sim.add_argument("--replications", type=int, default=None,
                     help="override replications per cell")
    sim.add_argument("--cells", type=int, default=None,
                     help="run only the first N cells")

    for name, help_text in (("estimate", "estimate effects on a CSV dataset"),
                            ("sweep", "score-family sweep on a CSV dataset")):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("dataset", help="CSV file with header y,t,x1..xp")
        cmd.add_argument("--config", required=False, help="estimate config JSON")
        cmd.add_argument("--out", default="out", help="output directory")
        cmd.add_argument("--seed", type=int, default=None,
                         help="override the config seed")

    sub.add_parser("verify", help="run the built-in exactness checks")
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_schema:
        print(simulation.CONFIG_SCHEMA)
        print(ESTIMATE_SCHEMA)
        return 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "estimate":
            return cmd_estimate(args)
        if args.command == "sweep":
            return cmd_estimate(args, sweep=True)
        if args.command == "verify":
            return cmd_verify(args)
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    raise AssertionError("unreachable")
