"""Command-line entry point: ``ctxml <fit|predict|density|check-id|simulate|atoms>``.

Exit codes: 0 ok, 2 bad data or config, 3 training diverged, 4 unsupported
model file version, 5 density on a model without pseudo-sampling,
6 heuristic identifiability requested for a nonlinear encoder class.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import config as run_config
from . import modelfile
from .data import Dataset, load_csv, save_dataset, write_csv
from .datagen import GeneratorSpec, generate, save_truth
from .errors import ConfigError, CtxmlError, DataError, NumericError, VersionError
from .identifiability import ENCODER_CLASSES, full_report
from .nonparametric import cluster_atoms, fit_atoms, fit_pseudo, pseudo_density, stitch_transmission
from .training import BootstrapEnsemble, FittedModel, Prediction, bootstrap_fit, fit

EXIT_DATA, EXIT_DIVERGED, EXIT_VERSION, EXIT_NOT_PSEUDO, EXIT_NONLINEAR = 2, 3, 4, 5, 6


class CliExit(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _say(args, *msg) -> None:
    if not args.quiet:
        print(*msg)


def _out_dir(args, cfg=None) -> Path:
    if args.out:
        out = Path(args.out)
    elif cfg is not None and cfg.output_dir is not None:
        out = cfg.output_dir
    else:
        out = Path("ctxml_out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, allow_nan=False) + "\n")


def _floats(text: str, what: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise CliExit(EXIT_DATA, f"{what}: expected comma-separated numbers, got {text!r}") from None


def prediction_rows(ids, pred: Prediction, predictor_names, with_prediction: bool = True):
    """Header and rows shared by the fit-time parameters CSV and ``predict`` output."""
    coef_cols = [f"coef_{name}" for name in predictor_names]
    header = ["id"] + (["prediction"] if with_prediction else []) + coef_cols + ["offset"]
    if pred.intervals is not None:
        for key, names in (("prediction", ["prediction"]), ("coefficients", coef_cols), ("offsets", ["offset"])):
            if key == "prediction" and not with_prediction:
                continue
            header += [f"{n}_{side}" for n in names for side in ("lower", "upper")]
    rows = []
    for i in range(pred.offsets.size):
        row = [ids[i]]
        if with_prediction:
            row.append(float(pred.prediction[i]))
        row += [float(v) for v in pred.coefficients[i]] + [float(pred.offsets[i])]
        if pred.intervals is not None:
            lo, hi = pred.intervals["prediction"]
            if with_prediction:
                row += [float(lo[i]), float(hi[i])]
            lo, hi = pred.intervals["coefficients"]
            for j in range(lo.shape[1]):
                row += [float(lo[i, j]), float(hi[i, j])]
            lo, hi = pred.intervals["offsets"]
            row += [float(lo[i]), float(hi[i])]
        rows.append(row)
    return header, rows


# --- subcommands ---------------------------------------------------------------------


def _require_config(args):
    if not args.config:
        raise CliExit(EXIT_DATA, f"{args.command} needs --config")
    return run_config.load(args.config).with_seed(args.seed)


def cmd_fit(args) -> int:
    cfg = _require_config(args)
    data = cfg.load_data()
    encoder = cfg.encoder_spec(data)
    out = _out_dir(args, cfg)
    if cfg.pseudo_d_z:
        if cfg.training.n_bootstraps > 1:
            raise ConfigError("pseudo-sampling and bootstrapping cannot be combined")
        model = fit_pseudo(data, cfg.pseudo_d_z, cfg.training, encoder, cfg.regularization,
                           cfg.pseudo_coupling)
    elif cfg.training.n_bootstraps > 1:
        model = bootstrap_fit(data, encoder, cfg.likelihood, cfg.regularization, cfg.training)
    else:
        model = fit(data, encoder, cfg.likelihood, cfg.regularization, cfg.training)
    modelfile.save(out / "model.json", model)
    members = model.members if isinstance(model, BootstrapEnsemble) else (model,)
    metrics = {
        "n": data.n,
        "seed": cfg.training.seed,
        "members": [
            {**m.report.summary(include_time=True), "train_loss": m.report.train_loss,
             "val_loss": m.report.val_loss}
            for m in members
        ],
    }
    metrics.update({k: members[0].report.summary()[k] for k in ("initial_train_nll", "final_train_nll")})
    _write_json(out / "metrics.json", metrics)
    header, rows = prediction_rows(data.ids, model.predict(data.C, data.X), data.predictor_names,
                                   with_prediction=False)
    write_csv(out / "parameters.csv", header, rows)
    _say(args, f"fit {len(members)} model(s) on {data.n} rows; wrote {out / 'model.json'}")
    return 0


def _load_model(path) -> FittedModel | BootstrapEnsemble:
    if not path:
        raise CliExit(EXIT_DATA, "--model is required")
    return modelfile.load(path)


def cmd_predict(args) -> int:
    model = _load_model(args.model)
    if not args.data:
        raise CliExit(EXIT_DATA, "predict needs --data")
    first = model.members[0] if isinstance(model, BootstrapEnsemble) else model
    context = list(first.context_names[:len(first.context_names) - first.d_z])
    data = load_csv(args.data, context, list(first.predictor_names), None)
    pred = model.predict(data.C, data.X)
    out = _out_dir(args)
    header, rows = prediction_rows(data.ids, pred, first.predictor_names)
    write_csv(out / "predictions.csv", header, rows)
    _say(args, f"wrote {data.n} predictions to {out / 'predictions.csv'}")
    return 0


def cmd_density(args) -> int:
    model = _load_model(args.model)
    if isinstance(model, BootstrapEnsemble) or model.d_z == 0 or model.likelihood.family != "hetero_gaussian":
        raise CliExit(EXIT_NOT_PSEUDO, "density needs a model fit with pseudo-sampling (pseudo.d_z >= 1)")
    c = _floats(args.context, "--context")
    x = _floats(args.x, "--x")
    lo, hi, count = _floats(args.grid, "--grid")
    if not (hi > lo and count >= 2 and float(count).is_integer()):
        raise CliExit(EXIT_DATA, "--grid must be 'lo,hi,count' with hi > lo and integer count >= 2")
    try:
        res = pseudo_density(model, c, x, np.linspace(lo, hi, int(count)))
    except ValueError as exc:
        raise CliExit(EXIT_DATA, str(exc)) from exc
    out = _out_dir(args)
    path = out / "density.csv"
    write_csv(path, ["y", "density"], ([float(y), float(v)] for y, v in zip(res.y_grid, res.density)))
    with path.open("a") as fh:
        fh.write(f"# integral={res.integral:.17g} narrow_grid={str(res.narrow_grid).lower()}\n")
    _say(args, f"integral {res.integral:.6f}; wrote {path}")
    return 0


def cmd_check_id(args) -> int:
    if args.encoder_class not in ENCODER_CLASSES:
        raise CliExit(EXIT_NONLINEAR,
                      f"no redundancy degree d_g is defined for encoder class {args.encoder_class!r}; "
                      "the heuristic is only available for 'population' and 'linear_vc'")
    C = X = None
    m, p = args.m, args.p
    if args.data or args.config:
        if args.data:
            ctx = [c for c in (args.context_cols or "").split(",") if c]
            prd = [c for c in (args.predictor_cols or "").split(",") if c]
            if not ctx or not prd:
                raise CliExit(EXIT_DATA, "--data needs --context-cols and --predictor-cols")
            data = load_csv(args.data, ctx, prd, None)
        else:
            data = run_config.load(args.config).load_data()
        C, X = data.C, data.X
        m = m or data.m
        p = p or data.p
        if (m, p) != (data.m, data.p):
            raise CliExit(EXIT_DATA, f"--m/--p ({m}, {p}) disagree with data ({data.m}, {data.p})")
    if args.n is None and C is None:
        raise CliExit(EXIT_DATA, "check-id needs --n or data")
    if m is None or p is None:
        raise CliExit(EXIT_DATA, "check-id needs --m and --p (or data)")
    report = full_report(args.n, m, p, args.encoder_class, C, X).to_dict()
    text = json.dumps(report, indent=1)
    if args.out:
        _write_json(_out_dir(args) / "identifiability.json", report)
    _say(args, text)
    if report["empirical_identifiable"] is False:
        print("warning: design is rank deficient; linear VC coefficients are not identifiable",
              file=sys.stderr)
    return 0


def cmd_simulate(args) -> int:
    if not args.config:
        raise CliExit(EXIT_DATA, "simulate needs --config with a generator spec")
    try:
        raw = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliExit(EXIT_DATA, f"cannot read generator spec: {exc}") from exc
    if not isinstance(raw, dict):
        raise CliExit(EXIT_DATA, "generator spec must be a JSON object")
    if args.seed is not None:
        raw["seed"] = args.seed
    try:
        spec = GeneratorSpec.from_dict(raw)
    except TypeError as exc:
        raise CliExit(EXIT_DATA, f"invalid generator spec: {exc}") from exc
    out = _out_dir(args)
    result = generate(spec)
    if spec.kind == "holdout_interval":
        train, test, truth_train, truth_test = result
        save_dataset(out / "train.csv", train)
        save_dataset(out / "test.csv", test)
        save_truth(out / "truth_train.csv", train, truth_train)
        save_truth(out / "truth_test.csv", test, truth_test)
        rows = train.n + test.n
    else:
        data, truth = result
        save_dataset(out / "data.csv", data)
        save_truth(out / "truth.csv", data, truth)
        rows = data.n
    _say(args, f"rows={rows} seed={spec.seed}")
    return 0


def cmd_atoms(args) -> int:
    cfg = _require_config(args)
    data = cfg.load_data()
    if args.L is None or args.K is None:
        raise CliExit(EXIT_DATA, "atoms needs --L and --K")
    if not 1 <= args.K <= args.L:
        raise CliExit(EXIT_DATA, f"need 1 <= K <= L, got K={args.K}, L={args.L}")
    encoder = cfg.encoder_spec(data)
    atoms = fit_atoms(data, args.L, cfg.training, encoder)
    result = cluster_atoms(atoms, args.K, seed=cfg.training.seed, standardize=args.standardize)
    out = _out_dir(args, cfg)
    p_names = [f"coef_{n}" for n in data.predictor_names]
    write_csv(out / "atoms.csv", ["atom", "anchor_id", *p_names, "offset", "cluster"],
              ([i, data.ids[a], *map(float, atoms.coefficients[i]), float(atoms.offsets[i]),
                int(result.assignments[i])] for i, a in enumerate(atoms.anchors)))
    write_csv(out / "assignments.csv", ["atom", "cluster"],
              ([i, int(c)] for i, c in enumerate(result.assignments)))
    feature = args.feature
    xs = data.X[:, feature]
    grid = np.linspace(xs.min(), xs.max(), args.grid_points)
    curves = []
    for k in range(int(result.assignments.max()) + 1):
        comp = stitch_transmission(atoms, result.assignments, k, grid, feature=feature)
        rows = [[float(x), float(y), k] for x, y in zip(comp.x_grid, comp.yhat)]
        write_csv(out / f"component_{k}.csv", ["x", "yhat", "cluster"], rows)
        curves += rows
    write_csv(out / "components.csv", ["x", "yhat", "cluster"], curves)
    if result.degenerate:
        print("warning: all atoms identical; returned a single cluster", file=sys.stderr)
    _say(args, f"{args.L} atoms in {int(result.assignments.max()) + 1} cluster(s); inertia {result.inertia:.6g}")
    return 0


COMMANDS = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "density": cmd_density,
    "check-id": cmd_check_id,
    "simulate": cmd_simulate,
    "atoms": cmd_atoms,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config (generator spec for simulate)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")

    parser = argparse.ArgumentParser(prog="ctxml", description="Contextualized GLMs from the command line.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("fit", parents=[common], help="fit a model from a run config")
    pr = sub.add_parser("predict", parents=[common], help="predict from a saved model")
    pr.add_argument("--model")
    pr.add_argument("--data", help="CSV with the model's context and predictor columns")
    de = sub.add_parser("density", parents=[common], help="pseudo-sampled outcome density")
    de.add_argument("--model")
    de.add_argument("--context", required=True, help="comma-separated context values")
    de.add_argument("--x", required=True, help="comma-separated predictor values")
    de.add_argument("--grid", default="-10,10,2001", help="lo,hi,count")
    ci = sub.add_parser("check-id", parents=[common], help="identifiability heuristic and rank check")
    ci.add_argument("--n", type=int)
    ci.add_argument("--m", type=int)
    ci.add_argument("--p", type=int)
    ci.add_argument("--encoder-class", required=True)
    ci.add_argument("--data")
    ci.add_argument("--context-cols")
    ci.add_argument("--predictor-cols")
    sub.add_parser("simulate", parents=[common], help="write a synthetic dataset and its ground truth")
    at = sub.add_parser("atoms", parents=[common], help="atoms -> clusters -> stitched components")
    at.add_argument("--L", type=int)
    at.add_argument("--K", type=int)
    at.add_argument("--feature", type=int, default=0)
    at.add_argument("--grid-points", type=int, default=200)
    at.add_argument("--standardize", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except CliExit as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except VersionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERSION
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, ConfigError, CtxmlError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
