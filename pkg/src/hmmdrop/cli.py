"""Command-line interface: ``hmmdrop {fit,select,decode,impute,bootstrap,simulate}``.

Parameter artifacts are JSON, tabular artifacts CSV (or JSON with
``--format json``).  Floats are written with 17 significant digits so a
rerun with the same inputs and seed gives byte-identical files.

Exit codes: 0 success, 1 input error, 2 estimation failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import glm
from .errors import HmmDropError, InvalidInput
from .hmm import FitOptions, HmmParams, fit_hmm
from .inference import bootstrap_se, decode, impute_missing, info_matrix_se, select_k
from .panel import PanelDataset, parse_long_csv, to_long_csv
from .simulate import default_scenario, generate_panel, run_study

log = logging.getLogger("hmmdrop")

EXIT_OK, EXIT_INPUT, EXIT_ESTIMATION = 0, 1, 2


# ---------------------------------------------------------------------------
# serialization helpers


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "NA"
    return format(v, ".17g")


def dump_json(obj, indent: int = 0) -> str:
    """JSON text with floats at 17 significant digits."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{pad}"{k}": {dump_json(v, indent + 1)}' for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if all(not isinstance(v, (list, tuple, dict, np.ndarray)) for v in obj):
            return "[" + ", ".join(dump_json(v, indent + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dump_json(v, indent + 1) for v in obj) + "\n" + end + "]"
    if obj is None:
        return "null"
    if isinstance(obj, str):
        import json
        return json.dumps(obj)
    if isinstance(obj, (float, np.floating)) and not math.isfinite(float(obj)):
        return "null"
    return fmt(obj)


def params_to_dict(params: HmmParams, data: PanelDataset | None = None) -> dict:
    out = {"k": params.k, "r": params.r, "p": params.p}
    if data is not None:
        out["response_names"] = list(data.response_names)
        out["covariate_names"] = list(data.covariate_names)
    out["means"] = params.means
    out["cov"] = params.cov
    if params.has_covariates:
        out["B"] = params.B.B
        out["Gamma"] = params.Gamma.Gamma
    else:
        out["init"] = params.init
        out["trans"] = params.trans
    return out


def params_from_dict(d: dict) -> HmmParams:
    try:
        if "B" in d:
            return HmmParams(np.array(d["means"]), np.array(d["cov"]),
                             B=glm.InitialLogitParams(np.array(d["B"], dtype=float)),
                             Gamma=glm.TransitionLogitParams(np.array(d["Gamma"], dtype=float)))
        return HmmParams(np.array(d["means"]), np.array(d["cov"]), init=np.array(d["init"]),
                         trans=np.array(d["trans"]))
    except KeyError as exc:
        raise InvalidInput(f"parameter file lacks field {exc}") from None


def read_params(path) -> HmmParams:
    import json
    try:
        with open(path, encoding="utf-8") as fh:
            return params_from_dict(json.load(fh))
    except json.JSONDecodeError as exc:
        raise InvalidInput(f"{path}: not valid JSON ({exc})") from None


def write_table(path: Path, header, rows, form: str = "csv"):
    """Write rows as CSV, or as a JSON list of records when ``form == 'json'``."""
    rows = [list(r) for r in rows]
    if form == "json":
        recs = [dict(zip(header, r)) for r in rows]
        path.with_suffix(".json").write_text(dump_json(recs) + "\n", encoding="utf-8")
        return
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([v if isinstance(v, str) else fmt(v) for v in r])
    path.write_text(buf.getvalue(), encoding="utf-8")


# ---------------------------------------------------------------------------
# argument handling


def parse_schema(text: str | None) -> dict:
    """``id=..,time=..,drop=..,y=a|b,x=c`` (list items may also repeat the key)."""
    schema = {"id": "id", "time": "time", "drop": "drop", "y": [], "x": []}
    if not text:
        return schema
    key = None
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        if "=" in tok:
            key, val = (s.strip() for s in tok.split("=", 1))
        elif key in ("y", "x"):
            val = tok
        else:
            raise InvalidInput(f"schema item {tok!r} is not key=value")
        if key not in schema:
            raise InvalidInput(f"unknown schema key {key!r}")
        if key in ("y", "x"):
            schema[key] += [v for v in val.split("|") if v]
        else:
            schema[key] = val
    return schema


def parse_k_range(text: str) -> list:
    text = text.strip()
    for sep in ("..", ":", "-"):
        if sep in text:
            lo, hi = text.split(sep, 1)
            return list(range(int(lo), int(hi) + 1))
    return [int(v) for v in text.split(",") if v.strip()]


def fit_options(args) -> FitOptions:
    if args.tol <= 0:
        raise InvalidInput("--tol must be positive")
    if args.max_iter < 1:
        raise InvalidInput("--max-iter must be at least 1")
    return FitOptions(tol=args.tol, max_iter=args.max_iter, n_random_starts=args.starts,
                      h=args.h, seed=args.seed, workers=args.workers)


def load_panel(args) -> PanelDataset:
    if not args.input:
        raise InvalidInput("--input is required")
    schema = parse_schema(args.schema)
    if not schema["y"]:
        raise InvalidInput("--schema must name the response columns (y=...)")
    return parse_long_csv(args.input, schema)


def out_dir(args) -> Path:
    path = Path(args.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# commands


def cmd_fit(args) -> int:
    data = load_panel(args)
    if args.k is None or args.k < 1:
        raise InvalidInput("--k must be a positive integer")
    fit = fit_hmm(data, args.k, fit_options(args))
    out = out_dir(args)
    (out / "params.json").write_text(dump_json(params_to_dict(fit.params, data)) + "\n",
                                     encoding="utf-8")
    write_table(out / "loglik_trace.csv", ["iteration", "loglik"], enumerate(fit.trace),
                args.format)
    k = fit.k
    header = ["id", "t"] + [f"z{u + 1}" for u in range(k)] + ["z_drop"]
    rows = []
    for i, s in enumerate(data.subjects):
        g, _, _ = fit.posterior.subject(i)
        rows += [[s.id, t + 1, *g[t]] for t in range(s.T)]
    write_table(out / "posteriors.csv", header, rows, args.format)
    summary = {"k": k, "loglik": fit.loglik, "n_par": fit.n_par, "aic": fit.aic, "bic": fit.bic,
               "n": fit.n, "iterations": fit.n_iter, "converged": fit.converged,
               "best_start": fit.best_start, "start_logliks": fit.start_logliks,
               "failed_starts": {str(j): m for j, m in fit.start_errors.items()},
               "newton_failed": fit.newton_failed, "separation": fit.separation}
    (out / "fit_summary.json").write_text(dump_json(summary) + "\n", encoding="utf-8")
    if not fit.converged:
        print(f"hmmdrop: EM stopped at --max-iter={args.max_iter} without converging",
              file=sys.stderr)
        return EXIT_ESTIMATION
    return EXIT_OK


def cmd_select(args) -> int:
    data = load_panel(args)
    if not args.k_range:
        raise InvalidInput("--k-range is required")
    rep = select_k(data, parse_k_range(args.k_range), fit_options(args))
    diffs = [None] + rep.bic_diff
    rows = [[r["k"], r["loglik"], r["n_par"], r["bic"], r["aic"], d if d is not None else "",
             int(r["selected"])] for r, d in zip(rep.rows, diffs)]
    write_table(out_dir(args) / "selection.csv",
                ["k", "loglik", "n_par", "bic", "aic", "bic_diff", "selected"], rows, args.format)
    for k, msg in rep.failures.items():
        print(f"hmmdrop: k={k} failed: {msg}", file=sys.stderr)
    if not rep.monotone:
        print("hmmdrop: warning: maximized log-likelihood is not monotone in k", file=sys.stderr)
    return EXIT_OK if rep.rows else EXIT_ESTIMATION


def _need_params(args):
    if not args.params:
        raise InvalidInput("--params (a params.json from `fit`) is required")
    return read_params(args.params)


def cmd_decode(args) -> int:
    data = load_panel(args)
    params = _need_params(args)
    dec = decode(data, params)
    out = out_dir(args)
    for name, paths in (("states_local.csv", dec.local), ("states_global.csv", dec.global_)):
        rows = [[sid, t + 1, int(u) + 1] for sid, p in zip(dec.ids, paths)
                for t, u in enumerate(p)]
        write_table(out / name, ["id", "t", "state"], rows, args.format)
    freq = dec.state_frequencies(params.k)
    header = ["t"] + [f"state{u + 1}" for u in range(params.k)] + ["dropout", "censored"]
    write_table(out / "state_freq.csv", header,
                [[t + 1, *row] for t, row in enumerate(freq)], args.format)
    return EXIT_OK


def cmd_impute(args) -> int:
    data = load_panel(args)
    params = _need_params(args)
    filled = impute_missing(data, params, args.mode)
    schema = parse_schema(args.schema)
    to_long_csv(filled, out_dir(args) / "imputed.csv", schema)
    return EXIT_OK


def cmd_bootstrap(args) -> int:
    data = load_panel(args)
    if args.params:
        params = read_params(args.params)
    elif args.k:
        params = fit_hmm(data, args.k, fit_options(args)).params
    else:
        raise InvalidInput("give --params or --k")
    if args.se_method == "info":
        rep = info_matrix_se(data, params)
    else:
        rep = bootstrap_se(data, params, n_reps=args.reps, seed=args.seed, tol=args.tol,
                           max_iter=args.max_iter, workers=args.workers)
    write_table(out_dir(args) / "se.csv", ["parameter", "estimate", "se"], rep.rows(),
                args.format)
    if rep.method == "bootstrap":
        print(f"hmmdrop: {rep.n_used} of {rep.n_reps} replicates used", file=sys.stderr)
    if rep.non_pd:
        print("hmmdrop: warning: information matrix not positive definite (floored)",
              file=sys.stderr)
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.k not in (2, 3):
        raise InvalidInput("--k must be 2 or 3 for the simulation scenarios")
    spec = default_scenario(args.k, args.n, args.p, n_reps=args.reps, seed=args.seed, T=args.T)
    out = out_dir(args)
    if not args.no_panels:
        width = len(str(max(spec.n_reps - 1, 0)))
        for b in range(spec.n_reps):
            to_long_csv(generate_panel(spec, b), out / f"panel_{b:0{width}d}.csv")
    opts = FitOptions(tol=args.tol, max_iter=args.max_iter, n_random_starts=args.starts,
                      h=args.h)
    report = run_study(spec, opts)
    for name, text in report.to_csv().items():
        (out / f"{name}.csv").write_text(text, encoding="utf-8")
    summary = {"k": spec.k, "n": spec.n, "T": spec.T, "p_miss": spec.p_miss,
               "p_drop": spec.p_drop, "reps": spec.n_reps, "seed": spec.seed,
               "succeeded": report.n_success,
               "failures": {str(b): m for b, m in report.failures.items()}}
    (out / "study_summary.json").write_text(dump_json(summary) + "\n", encoding="utf-8")
    return EXIT_OK if report.n_success else EXIT_ESTIMATION


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hmmdrop", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        if data:
            p.add_argument("--input", help="long-format CSV panel")
            p.add_argument("--schema", help="id=..,time=..,drop=..,y=a|b|c,x=d|e")
        p.add_argument("--tol", type=float, default=1e-8)
        p.add_argument("--max-iter", type=int, default=5000)
        p.add_argument("--starts", type=int, default=None,
                       help="random starts in addition to the deterministic one (default 5k)")
        p.add_argument("--h", type=float, default=9.0, help="start persistence constant")
        p.add_argument("--seed", type=int, default=1)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--out", default=".")
        p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("fit", help="fit a k-state model")
    common(p)
    p.add_argument("--k", type=int)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="fit a range of k and tabulate AIC/BIC")
    common(p)
    p.add_argument("--k-range", help="e.g. 1..5 or 1,2,3")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("decode", help="local and global state decoding")
    common(p)
    p.add_argument("--params", help="params.json written by fit")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("impute", help="fill missing responses")
    common(p)
    p.add_argument("--params")
    p.add_argument("--mode", choices=("conditional", "unconditional"), default="unconditional")
    p.set_defaults(func=cmd_impute)

    p = sub.add_parser("bootstrap", help="standard errors")
    common(p)
    p.add_argument("--params")
    p.add_argument("--k", type=int)
    p.add_argument("--se-method", choices=("bootstrap", "info"), default="bootstrap")
    p.add_argument("--reps", type=int, default=300)
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("simulate", help="Monte Carlo study on a built-in scenario")
    common(p, data=False)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--p", type=float, default=0.10, help="p_miss = p_drop level")
    p.add_argument("--T", type=int, default=5)
    p.add_argument("--reps", type=int, default=250)
    p.add_argument("--no-panels", action="store_true", help="skip writing generated panels")
    p.set_defaults(func=cmd_simulate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (InvalidInput, OSError, ValueError) as exc:
        print(f"hmmdrop: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except HmmDropError as exc:
        print(f"hmmdrop: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
