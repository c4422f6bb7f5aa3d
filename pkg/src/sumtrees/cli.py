"""Batch command-line interface: ``sumtrees fit|predict|cv|simulate|diagnose``.

Settings come from built-in defaults, then an optional ``key=value`` config file
(``--config``), then command-line flags, later sources winning. A fit writes a
manifest in the same format, so ``sumtrees fit --config <out>/manifest.txt``
repeats the run.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import DataError, Schema, load_csv, simulate_friedman_like
from .estimator import BARTClassifier, BARTRegressor
from .genbart import load_adjacency, make_component
from .io import DrawFileError, read_draws, read_manifest, write_draws, write_manifest, write_trace
from .metrics import auc, rmse
from .priors import MOVES, CalibrationError

log = logging.getLogger("sumtrees")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

# config key -> (type, default); every fit setting lives here and in the manifest
SETTINGS = {
    "data": (str, None),
    "outcome": (str, "y"),
    "bart_cols": (str, ""),
    "h_cols": (str, ""),
    "group_col": (str, ""),
    "binary": (bool, False),
    "m": (int, 200),
    "iters": (int, 1500),
    "burn_in": (int, 100),
    "thin": (int, 1),
    "seed": (int, 0),
    "n_min": (int, 5),
    "h_component": (str, "none"),
    "rho": (float, 0.9),
    "delta2": (float, 1.0),
    "adjacency": (str, ""),
    "folds": (int, 10),
}


class UsageError(Exception):
    pass


def _parse_bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off", ""):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def _coerce(key: str, value):
    kind, _ = SETTINGS[key]
    try:
        if kind is bool:
            return value if isinstance(value, bool) else _parse_bool(value)
        return kind(value)
    except ValueError:
        raise UsageError(f"bad value for {key}: {value!r}") from None


def resolve_settings(args: argparse.Namespace) -> dict:
    """Merge defaults, the config file and explicit flags."""
    settings = {k: d for k, (_, d) in SETTINGS.items()}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        for key, value in read_manifest(path).items():
            if key.startswith("result."):
                continue
            if key not in SETTINGS:
                raise UsageError(f"{path}: unknown setting {key!r}")
            settings[key] = _coerce(key, value)
    for key in SETTINGS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = _coerce(key, value)
    if not settings["data"]:
        raise UsageError("no data file given (--data or data= in --config)")
    return settings


def _cols(text: str) -> list[str]:
    return [c.strip() for c in text.split(",") if c.strip()]


def _schema(settings: dict) -> Schema:
    bart = _cols(settings["bart_cols"])
    return Schema(
        outcome=settings["outcome"],
        bart_cols=bart or None,
        h_cols=_cols(settings["h_cols"]),
        group_col=settings["group_col"] or None,
        binary=settings["binary"],
    )


def _component(settings: dict, data):
    kind = settings["h_component"]
    if kind == "none":
        return None
    if kind in ("rand_intercept", "car") and data.group is None:
        raise UsageError(f"--h-component {kind} needs --group-col")
    if kind == "linear" and data.w is None:
        log.info("linear component without --h-cols fits an intercept only")
    adjacency = None
    if kind == "car":
        if not settings["adjacency"]:
            raise UsageError("--h-component car needs --adjacency")
        adjacency = load_adjacency(settings["adjacency"], data.group_labels)
    try:
        return make_component(kind, adjacency=adjacency, rho=settings["rho"], delta2=settings["delta2"])
    except ValueError as exc:
        if kind == "car" and "positive definite" in str(exc):
            raise CalibrationError(str(exc)) from None
        raise UsageError(str(exc)) from None


def _estimator(settings: dict, h):
    cls = BARTClassifier if settings["binary"] else BARTRegressor
    return cls(
        m=settings["m"],
        iters=settings["iters"],
        burn_in=settings["burn_in"],
        thin=settings["thin"],
        seed=settings["seed"],
        n_min=settings["n_min"],
        h_component=h,
    )


def _check_mcmc(settings: dict) -> None:
    if settings["iters"] <= settings["burn_in"]:
        raise UsageError("iters must exceed burn_in")
    if settings["burn_in"] < 0 or settings["thin"] < 1 or settings["n_min"] < 1 or settings["m"] < 1:
        raise UsageError("need burn_in >= 0, thin >= 1, n_min >= 1 and m >= 1")


def _fit(settings: dict, data):
    h = _component(settings, data)
    est = _estimator(settings, h)
    groups = None if data.group is None else np.asarray(data.group_labels)[data.group]
    return est.fit(data.x, data.y, data.w, groups)


def _manifest_entries(settings: dict, est) -> dict:
    entries = {k: (int(v) if isinstance(v, bool) else v) for k, v in settings.items() if k != "folds"}
    model = est.model_
    entries["result.version"] = __version__
    entries["result.n"] = model.n
    entries["result.p"] = model.p
    entries["result.draws"] = model.n_draws
    for key, value in model.hp.as_dict().items():
        if key == "move_probs":
            value = " ".join(f"{p:.17g}" for p in value)
        elif isinstance(value, float):
            value = f"{value:.17g}"
        entries[f"result.hp.{key}"] = value
    rates = model.acceptance_rates()
    for k in MOVES:
        entries[f"result.accept.{k}"] = f"{rates[k]:.6f}"
    sig = model.sigma2_original()
    entries["result.sigma2_mean"] = f"{float(np.mean(sig)):.17g}"
    return entries


def cmd_fit(args) -> int:
    settings = resolve_settings(args)
    _check_mcmc(settings)
    out = Path(args.out)
    data = load_csv(settings["data"], _schema(settings))
    start = time.perf_counter()
    est = _fit(settings, data)
    elapsed = time.perf_counter() - start
    est.model_.x_names = list(data.x_names)
    est.model_.w_names = list(data.w_names)
    out.mkdir(parents=True, exist_ok=True)
    write_draws(out / "draws.txt", est.model_)
    write_manifest(out / "manifest.txt", _manifest_entries(settings, est))
    trace = est.draws_.sigma2_trace
    if est.model_.scaling is not None:
        trace = est.model_.scaling.unscale_variance(trace)
    write_trace(out / "sigma2_trace.csv", trace, settings["burn_in"])
    # wall time varies run to run, so it stays out of the reproducible artifacts
    (out / "timing.txt").write_text(f"wall_time_s={elapsed:.3f}\n", encoding="utf-8")
    log.info("fit %d draws in %.1fs -> %s", est.model_.n_draws, elapsed, out)
    return EXIT_OK


def _model_path(path: str) -> Path:
    p = Path(path)
    return p / "draws.txt" if p.is_dir() else p


def cmd_predict(args) -> int:
    model_file = _model_path(args.model)
    try:
        model = read_draws(model_file)
    except FileNotFoundError as exc:
        raise DataError(str(exc)) from None
    manifest = model_file.parent / "manifest.txt"
    settings = read_manifest(manifest) if manifest.exists() else {}
    group_col = args.group_col if args.group_col is not None else settings.get("group_col", "")
    schema = Schema(
        outcome=None,
        bart_cols=model.x_names,
        h_cols=model.w_names,
        group_col=group_col or None,
    )
    data = load_csv(args.data, schema, group_labels=model.group_labels)
    n = data.x.shape[0]
    lines = []
    if model.binary:
        prob = model.predict(data.x, data.w, data.group)
        lines.append("prob")
        lines += [f"{v:.17g}" for v in prob]
    else:
        mean, lo, hi = model.interval(data.x, data.w, data.group, level=0.95, kind=args.interval)
        lines.append("mean,lower95,upper95")
        lines += [f"{mean[i]:.17g},{lo[i]:.17g},{hi[i]:.17g}" for i in range(n)]
    _write_lines(args.out, lines)
    return EXIT_OK


def _write_lines(out, lines: list[str]) -> None:
    text = "\n".join(lines) + "\n"
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")


def fold_assignment(n: int, folds: int, seed: int) -> np.ndarray:
    """Fold index of every row: a seeded permutation cut into near-equal blocks."""
    if folds < 2:
        raise UsageError("need at least 2 folds")
    if folds > n:
        raise UsageError(f"folds ({folds}) exceed the number of rows ({n})")
    perm = np.random.default_rng(seed).permutation(n)
    out = np.empty(n, dtype=np.int64)
    out[perm] = np.arange(n) % folds
    return out


def cross_validate(settings: dict, data) -> tuple[list[str], dict]:
    """Per-fold metric table rows plus a summary; fold ``k`` runs with seed ``seed + 1 + k``."""
    folds = settings["folds"]
    assign = fold_assignment(data.n, folds, settings["seed"])
    binary = settings["binary"]
    metric = "auc" if binary else "rmse"
    rows, scores = [], []
    oof = np.empty(data.n)
    for k in range(folds):
        test = np.flatnonzero(assign == k)
        train = np.flatnonzero(assign != k)
        fold_settings = dict(settings, seed=settings["seed"] + 1 + k)
        est = _fit(fold_settings, data.subset(train))
        x_te = data.x[test]
        w_te = None if data.w is None else data.w[test]
        g_te = None if data.group is None else np.asarray(data.group_labels)[data.group[test]]
        if binary:
            pred = est.predict_proba(x_te, w_te, g_te)[:, 1]
            ytest = data.y[test]
            score = auc(pred, ytest) if 0 < ytest.sum() < ytest.size else float("nan")
        else:
            pred = est.predict(x_te, w_te, g_te)
            score = rmse(pred, data.y[test])
        oof[test] = pred
        scores.append(score)
        rows.append(f"{k + 1},{test.size},{score:.17g}")
    scores = np.asarray(scores)
    finite = scores[np.isfinite(scores)]
    mean = float(finite.mean()) if finite.size else float("nan")
    se = float(finite.std(ddof=1) / np.sqrt(finite.size)) if finite.size > 1 else float("nan")
    pooled = auc(oof, data.y) if binary else rmse(oof, data.y)
    rows.append(f"mean,{data.n},{mean:.17g}")
    rows.append(f"pooled,{data.n},{pooled:.17g}")
    summary = {"metric": metric, "mean": mean, "se": se, "pooled": pooled, "scores": scores}
    return [f"fold,n_test,{metric}"] + rows, summary


def cmd_cv(args) -> int:
    settings = resolve_settings(args)
    _check_mcmc(settings)
    data = load_csv(settings["data"], _schema(settings))
    if settings["folds"] > data.n:
        raise UsageError(f"folds ({settings['folds']}) exceed the number of rows ({data.n})")
    lines, _ = cross_validate(settings, data)
    _write_lines(args.out, lines)
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    if args.n == 1:
        y, x = simulate_friedman_like(1, args.seed)
    else:
        data = simulate_friedman_like(args.n, args.seed)
        y, x = data.y, data.x
    lines = ["y,x1,x2,x3"]
    lines += [",".join(f"{v:.17g}" for v in (y[i], *x[i])) for i in range(y.size)]
    _write_lines(args.out, lines)
    return EXIT_OK


def _histogram(values: np.ndarray) -> list[str]:
    vals, counts = np.unique(values, return_counts=True)
    total = counts.sum()
    return [f"  {int(v):>3d}: {c:>8d}  ({c / total:.3f})" for v, c in zip(vals, counts)]


def diagnose_report(model) -> list[str]:
    sig = model.sigma2_original()
    q = np.percentile(sig, [2.5, 50, 97.5])
    leaves, depths = [], []
    for forest in model.forests:
        nl, dp = forest.tree_shapes()
        leaves.append(nl)
        depths.append(dp)
    leaves = np.concatenate(leaves)
    depths = np.concatenate(depths)
    lines = [
        f"draws: {model.n_draws}  trees per draw: {model.m}  n: {model.n}  p: {model.p}",
        f"outcome: {'binary' if model.binary else 'continuous'}  H component: {model.h_kind}",
        "",
        "sigma2 (outcome scale, kept draws)" if not model.binary else "sigma2 fixed at 1 (probit)",
        f"  mean {np.mean(sig):.6g}  sd {np.std(sig):.6g}",
        f"  2.5% {q[0]:.6g}  50% {q[1]:.6g}  97.5% {q[2]:.6g}",
        "",
        "acceptance (post burn-in)",
    ]
    rates = model.acceptance_rates()
    for k in MOVES:
        lines.append(f"  {k:<7s} {model.accepted[k]:>9d} / {model.proposed[k]:<9d} rate {rates[k]:.4f}")
    lines += ["", f"tree depth (mean {depths.mean():.3f})"] + _histogram(depths)
    lines += ["", f"leaves per tree (mean {leaves.mean():.3f})"] + _histogram(leaves)
    return lines


def cmd_diagnose(args) -> int:
    try:
        model = read_draws(_model_path(args.model))
    except FileNotFoundError as exc:
        raise DataError(str(exc)) from None
    _write_lines(args.out, diagnose_report(model))
    return EXIT_OK


def _add_fit_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value settings file (flags override it)")
    p.add_argument("--data", help="training CSV with a header row")
    p.add_argument("--outcome", help="outcome column (default y)")
    p.add_argument("--bart-cols", dest="bart_cols", help="comma-separated tree covariates (default: all others)")
    p.add_argument("--h-cols", dest="h_cols", help="comma-separated covariates of the H component")
    p.add_argument("--group-col", dest="group_col", help="group or area label column")
    p.add_argument("--binary", action="store_const", const=True, default=None, help="0/1 outcome, probit model")
    p.add_argument("--m", type=int, help="number of trees (default 200)")
    p.add_argument("--iters", type=int, help="total MCMC iterations (default 1500)")
    p.add_argument("--burn-in", dest="burn_in", type=int, help="discarded iterations (default 100)")
    p.add_argument("--thin", type=int, help="keep every k-th draw (default 1)")
    p.add_argument("--seed", type=int, help="generator seed (default 0)")
    p.add_argument("--n-min", dest="n_min", type=int, help="minimum observations per leaf (default 5)")
    p.add_argument("--h-component", dest="h_component",
                   choices=["none", "linear", "rand_intercept", "car", "dpm"])
    p.add_argument("--rho", type=float, help="CAR spatial dependence (default 0.9)")
    p.add_argument("--delta2", type=float, help="CAR variance scale (default 1)")
    p.add_argument("--adjacency", help="CAR edge-list CSV (two label columns, header row)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sumtrees", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="run the sampler and write draws, manifest and trace")
    _add_fit_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="posterior predictions for new rows")
    p.add_argument("--model", required=True, help="fit output directory or draw file")
    p.add_argument("--data", required=True, help="CSV with the training covariate columns")
    p.add_argument("--group-col", dest="group_col", help="group column (default: as in training)")
    p.add_argument("--interval", choices=["credible", "prediction"], default="credible",
                   help="interval for the regression function or for a new observation")
    p.add_argument("--out", help="output CSV (default stdout)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("cv", help="k-fold cross-validated RMSE or AUC")
    _add_fit_flags(p)
    p.add_argument("--folds", type=int, help="number of folds (default 10)")
    p.add_argument("--out", help="output CSV (default stdout)")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("simulate", help="write the synthetic benchmark data")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output CSV (default stdout)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("diagnose", help="summarize a draw file")
    p.add_argument("--model", required=True, help="fit output directory or draw file")
    p.add_argument("--out", help="report file (default stdout)")
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"sumtrees: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DrawFileError) as exc:
        print(f"sumtrees: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (CalibrationError, np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as exc:
        print(f"sumtrees: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
