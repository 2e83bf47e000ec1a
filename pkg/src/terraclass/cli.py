"""Command-line interface.

    terraclass synth    --preset demo --out scene.ply
    terraclass split    scene.ply --out-pos train.ply --out-neg test.ply
    terraclass extract  scene.ply --out scene.tcfm [--features all]
    terraclass train    a.ply b.ply --model model.txt [--classifier gbt]
    terraclass predict  scene.ply --model model.txt --out labeled.ply
    terraclass evaluate scene.ply --model model.txt [--report report.txt]
    terraclass ablate   --train a.ply b.ply --test c.ply [--features g all]

Shared flags: --gsd, --k, --levels, --radii R,R,..., --features
{g,cp,cn:R,all and + unions}, --classifier {rf,gbt}, --trees, --per-class,
--seed, --threads (default: the TERRACLASS_THREADS environment variable,
else all cores), --batch-size.

Exit codes: 0 success, 1 usage error, 2 data or processing error.  The
first log line of every run states the full effective configuration.
Logs go to stderr; result tables go to stdout.
"""

from __future__ import annotations

import argparse
import difflib
import logging
import re
import sys

log = logging.getLogger("terraclass")

_COMMANDS = ("synth", "split", "extract", "train", "predict", "evaluate", "ablate")
_ALL_OPTIONS: set[str] = set()


class _UsageError(Exception):
    def __init__(self, parser: argparse.ArgumentParser, message: str):
        super().__init__(message)
        self.parser = parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route to exit code 1 with suggestions
        raise _UsageError(self, message)


def _track(parser: _Parser, *args, **kwargs):
    action = parser.add_argument(*args, **kwargs)
    _ALL_OPTIONS.update(action.option_strings)
    return action


def _add_pipeline_flags(p: _Parser, classifier: bool = True):
    _track(p, "--gsd", type=float, default=None, metavar="M",
           help="ground sampling distance in meters (default 0.051)")
    _track(p, "--k", type=int, default=None, metavar="K",
           help="neighbors per pyramid level (default 10)")
    _track(p, "--levels", type=int, default=None, metavar="N",
           help="pyramid levels (default 9)")
    _track(p, "--radii", type=str, default=None, metavar="R,R,...",
           help="neighborhood color radii in meters (default 0.4,0.6,0.9)")
    _track(p, "--features", type=str, default=None, metavar="SET",
           help="feature set: g, cp, cn:R, all, or + unions (default all)")
    if classifier:
        _track(p, "--classifier", choices=("rf", "gbt"), default=None,
               help="ensemble kind (default gbt)")
        _track(p, "--trees", type=int, default=None, metavar="N",
               help="trees / boosting iterations (default 100)")
        _track(p, "--per-class", type=int, default=None, dest="per_class", metavar="N",
               help="training points per class per cloud (default 10000)")
    _track(p, "--seed", type=int, default=None, metavar="S",
           help="seed for sampling and training (default 0)")
    _track(p, "--threads", type=int, default=None, metavar="T",
           help="worker threads (default: TERRACLASS_THREADS env or all cores)")
    _track(p, "--batch-size", type=int, default=None, dest="batch_size", metavar="B",
           help="points per feature batch (default 65536)")


def _build_parser() -> _Parser:
    parser = _Parser(
        prog="terraclass",
        description="Per-point semantic classification of colored 3D point clouds.",
    )
    _ALL_OPTIONS.update(("--help", "-h"))
    _track(parser, "--version", action="version", version=_version())
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic labeled scene",
                       description="Generate a labeled synthetic scene from a JSON recipe or a named preset.")
    _track(p, "--recipe", metavar="FILE", help="JSON scene recipe")
    _track(p, "--preset", choices=("demo", "alpha", "beta", "gamma", "big"), default=None,
           help="built-in scene (default: demo when --recipe is absent)")
    _track(p, "--density-scale", type=float, default=1.0, dest="density_scale", metavar="F",
           help="scale preset point densities (default 1.0)")
    _track(p, "--seed", type=int, default=0, metavar="S")
    _track(p, "--out", required=True, metavar="FILE", help="output cloud (.ply or .xyz)")

    p = sub.add_parser("split", help="split a labeled cloud by the best vertical plane",
                       description="Find the vertical plane that best halves every class and write both sides.")
    _track(p, "cloud", metavar="CLOUD")
    _track(p, "--angles", type=int, default=36, metavar="N", help="plane angles to scan (default 36)")
    _track(p, "--offsets", type=int, default=64, metavar="N", help="offsets per angle (default 64)")
    _track(p, "--out-pos", required=True, dest="out_pos", metavar="FILE")
    _track(p, "--out-neg", required=True, dest="out_neg", metavar="FILE")

    p = sub.add_parser("extract", help="write the feature matrix of a cloud",
                       description="Extract per-point features for every point into a binary feature matrix.")
    _track(p, "cloud", metavar="CLOUD")
    _track(p, "--out", required=True, metavar="FILE", help="output feature matrix (.tcfm)")
    _add_pipeline_flags(p, classifier=False)

    p = sub.add_parser("train", help="train a classifier on labeled clouds",
                       description="Balance-sample labeled clouds, extract features, train, and save the model.")
    _track(p, "clouds", nargs="+", metavar="CLOUD")
    _track(p, "--model", required=True, metavar="FILE", help="output model file")
    _add_pipeline_flags(p)

    p = sub.add_parser("predict", help="label every point of a cloud",
                       description="Extract features with the model's own parameters and write the labeled cloud.")
    _track(p, "cloud", metavar="CLOUD")
    _track(p, "--model", required=True, metavar="FILE")
    _track(p, "--out", required=True, metavar="FILE", help="output labeled cloud")
    _track(p, "--colorize", action="store_true",
           help="replace colors with the class palette in the output")
    _track(p, "--threads", type=int, default=None, metavar="T")
    _track(p, "--batch-size", type=int, default=None, dest="batch_size", metavar="B")

    p = sub.add_parser("evaluate", help="confusion matrix of a model on a labeled cloud",
                       description="Predict a labeled cloud and report the confusion matrix and error rates.")
    _track(p, "cloud", metavar="CLOUD")
    _track(p, "--model", required=True, metavar="FILE")
    _track(p, "--report", default=None, metavar="FILE", help="also write the table to a file")
    _track(p, "--threads", type=int, default=None, metavar="T")
    _track(p, "--batch-size", type=int, default=None, dest="batch_size", metavar="B")

    p = sub.add_parser("ablate", help="compare feature sets and classifiers on one split",
                       description="Train every (feature set, classifier) pair and tabulate test errors.")
    _track(p, "--train", nargs="+", required=True, metavar="CLOUD")
    _track(p, "--test", required=True, metavar="CLOUD")
    _track(p, "--feature-sets", nargs="+", default=["g", "g+cn:0.6", "all"],
           dest="feature_sets", metavar="SET")
    _track(p, "--classifiers", nargs="+", choices=("rf", "gbt"), default=["rf", "gbt"])
    _track(p, "--out", default=None, metavar="FILE", help="write the report here instead of stdout")
    _add_pipeline_flags(p, classifier=False)
    _track(p, "--trees", type=int, default=None, metavar="N")
    _track(p, "--per-class", type=int, default=None, dest="per_class", metavar="N")

    return parser


def _version() -> str:
    try:
        from importlib.metadata import version

        return f"terraclass {version('terraclass')}"
    except Exception:
        return "terraclass (unpackaged)"


def _suggest(message: str) -> str:
    """Close-match hints for unknown flags or subcommands."""
    hints = []
    for tok in re.findall(r"--[A-Za-z0-9][-A-Za-z0-9_]*", message):
        match = difflib.get_close_matches(tok, sorted(_ALL_OPTIONS), n=1)
        if match and match[0] != tok:
            hints.append(f"did you mean {match[0]}?")
    if "invalid choice" in message:
        quoted = re.findall(r"'([^']+)'", message)
        if quoted:
            match = difflib.get_close_matches(quoted[0], _COMMANDS, n=1)
            if match:
                hints.append(f"did you mean {match[0]}?")
    return " ".join(dict.fromkeys(hints))


def _build_config(ns):
    """PipelineConfig from flags; bad values are usage errors."""
    from .ensemble import TrainConfig
    from .pipeline import PipelineConfig

    kwargs = {}
    for attr, key in (
        ("gsd", "gsd"), ("k", "k"), ("levels", "n_levels"),
        ("features", "feature_set"), ("classifier", "classifier"),
        ("per_class", "per_class"), ("seed", "seed"), ("threads", "threads"),
        ("batch_size", "batch_size"),
    ):
        v = getattr(ns, attr, None)
        if v is not None:
            kwargs[key] = v
    radii = getattr(ns, "radii", None)
    if radii is not None:
        try:
            kwargs["radii"] = tuple(float(t) for t in radii.split(","))
        except ValueError:
            raise ValueError(f"--radii must be comma-separated numbers, got {radii!r}") from None
    trees = getattr(ns, "trees", None)
    train = TrainConfig() if trees is None else TrainConfig(n_trees=trees)
    return PipelineConfig(train=train, **kwargs)


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------


def _cmd_synth(ns) -> int:
    from .cloudio import write_cloud
    from .synth import big_recipe, demo_recipe, scene_suite, synth_scene

    if ns.recipe and ns.preset:
        raise ValueError("--recipe and --preset are mutually exclusive")
    log.info(
        "config: command=synth recipe=%s preset=%s density_scale=%g seed=%d out=%s",
        ns.recipe, ns.preset or ("demo" if not ns.recipe else None),
        ns.density_scale, ns.seed, ns.out,
    )
    if ns.recipe:
        cloud = synth_scene(ns.recipe, seed=ns.seed)
    else:
        preset = ns.preset or "demo"
        if preset == "demo":
            recipe = demo_recipe()
        elif preset == "big":
            recipe = big_recipe(ns.density_scale)
        else:
            recipe = scene_suite(ns.density_scale)[preset]
        cloud = synth_scene(recipe, seed=ns.seed)
    write_cloud(cloud, ns.out)
    log.info("wrote %d points to %s", cloud.n, ns.out)
    return 0


def _cmd_split(ns) -> int:
    import numpy as np

    from .cloudio import read_cloud, write_cloud
    from .evaluate import find_split_plane

    log.info(
        "config: command=split cloud=%s angles=%d offsets=%d out_pos=%s out_neg=%s",
        ns.cloud, ns.angles, ns.offsets, ns.out_pos, ns.out_neg,
    )
    cloud = read_cloud(ns.cloud)
    plane = find_split_plane(cloud, ns.angles, ns.offsets)
    side = plane.side(cloud.xyz)
    log.info(
        "split plane: theta=%.6f offset=%.6f objective=%.6f (%d / %d points)",
        plane.theta, plane.offset, plane.objective, int(side.sum()), int((~side).sum()),
    )
    if side.all() or not side.any():
        raise ValueError(
            "split plane leaves one side empty (no candidate plane crosses every "
            "class); try more --angles/--offsets or a scene with overlapping classes"
        )
    write_cloud(cloud.select(np.flatnonzero(side)), ns.out_pos)
    write_cloud(cloud.select(np.flatnonzero(~side)), ns.out_neg)
    return 0


def _cmd_extract(ns) -> int:
    from .cloudio import read_cloud
    from .featmat import write_features
    from .pipeline import extract_features

    config = _build_config(ns)
    log.info("config: command=extract cloud=%s out=%s %s", ns.cloud, ns.out, config.describe())
    cloud = read_cloud(ns.cloud)
    matrix = extract_features(cloud, config)
    write_features(matrix, ns.out)
    log.info("wrote %d rows x %d columns to %s", matrix.n, matrix.d, ns.out)
    return 0


def _cmd_train(ns) -> int:
    from .cloudio import read_cloud
    from .ensemble import save_model
    from .pipeline import run_train

    config = _build_config(ns)
    log.info("config: command=train clouds=%s model=%s %s",
             ",".join(ns.clouds), ns.model, config.describe())
    clouds = [read_cloud(p) for p in ns.clouds]
    model, timing = run_train(clouds, config)
    save_model(model, ns.model)
    if model.oob_error is not None:
        log.info("out-of-bag error: %.6f", model.oob_error)
    if model.loss_history is not None and len(model.loss_history):
        log.info("training log-loss: %.6f -> %.6f",
                 model.loss_history[0], model.loss_history[-1])
    log.info("saved model to %s (%.2fs features, %.2fs training)",
             ns.model, timing.features_s, timing.train_s)
    return 0


def _cmd_predict(ns) -> int:
    from .cloudio import read_cloud, write_cloud
    from .ensemble import load_model
    from .pipeline import PipelineConfig, run_predict

    base = PipelineConfig(threads=ns.threads,
                          **({"batch_size": ns.batch_size} if ns.batch_size else {}))
    model = load_model(ns.model)
    log.info("config: command=predict cloud=%s model=%s out=%s colorize=%s %s",
             ns.cloud, ns.model, ns.out, ns.colorize, base.describe())
    cloud = read_cloud(ns.cloud)
    labels, timing = run_predict(cloud, model, base)
    write_cloud(cloud.with_labels(labels), ns.out, colorize=ns.colorize)
    log.info("wrote %s (%.2fs features, %.2fs prediction, %d threads)",
             ns.out, timing.features_s, timing.predict_s, timing.threads)
    return 0


def _cmd_evaluate(ns) -> int:
    from .cloudio import UNLABELED, read_cloud
    from .ensemble import load_model
    from .evaluate import ConfusionMatrix, format_confusion
    from .pipeline import PipelineConfig, run_predict

    base = PipelineConfig(threads=ns.threads,
                          **({"batch_size": ns.batch_size} if ns.batch_size else {}))
    model = load_model(ns.model)
    log.info("config: command=evaluate cloud=%s model=%s report=%s %s",
             ns.cloud, ns.model, ns.report, base.describe())
    cloud = read_cloud(ns.cloud)
    if not cloud.has_labels:
        raise ValueError("evaluation needs a labeled cloud")
    pred, _ = run_predict(cloud, model, base)
    mask = cloud.labels != UNLABELED
    if not mask.any():
        raise ValueError("evaluation needs at least one labeled point")
    cm = ConfusionMatrix.from_labels(cloud.labels[mask], pred[mask])
    table = format_confusion(cm)
    print(table)
    if ns.report:
        with open(ns.report, "w", encoding="utf-8") as fh:
            fh.write(table + "\n")
        log.info("wrote report to %s", ns.report)
    return 0


def _cmd_ablate(ns) -> int:
    from .cloudio import read_cloud
    from .evaluate import ablation_run, format_ablation_report

    config = _build_config(ns)
    log.info("config: command=ablate train=%s test=%s feature_sets=%s classifiers=%s %s",
             ",".join(ns.train), ns.test, ",".join(ns.feature_sets),
             ",".join(ns.classifiers), config.describe())
    train_clouds = [read_cloud(p) for p in ns.train]
    test_cloud = read_cloud(ns.test)
    report = ablation_run(
        train_clouds, test_cloud, ns.feature_sets, ns.classifiers,
        config=config, train_names=ns.train, test_name=ns.test,
    )
    text = format_ablation_report(report)
    if ns.out:
        with open(ns.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        log.info("wrote ablation report to %s", ns.out)
    else:
        print(text, end="")
    return 0


_HANDLERS = {
    "synth": _cmd_synth,
    "split": _cmd_split,
    "extract": _cmd_extract,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "evaluate": _cmd_evaluate,
    "ablate": _cmd_ablate,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
    except _UsageError as exc:
        exc.parser.print_usage(sys.stderr)
        hint = _suggest(str(exc))
        print(f"terraclass: error: {exc}" + (f" ({hint})" if hint else ""), file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return 0 if exc.code in (0, None) else 1
    if ns.command is None:
        parser.print_usage(sys.stderr)
        print("terraclass: error: a command is required", file=sys.stderr)
        return 1

    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        return _HANDLERS[ns.command](ns)
    except (ValueError, OSError) as exc:
        log.error("error: %s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
