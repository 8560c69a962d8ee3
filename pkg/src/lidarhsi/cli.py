"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DataError, LidarHsiError, NumericError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=default(0), help="master seed (default 0)")
    parser.add_argument("--threads", type=int, default=default(1), help="worker threads (default 1)")
    parser.add_argument("--config", type=Path, default=default(None), help="key = value configuration file")


def _config(args):
    from .pipeline import ScenarioConfig, load_config

    cfg = load_config(args.config) if args.config else ScenarioConfig()
    return cfg.replace(seed=args.seed if args.seed_given else cfg.seed, threads=args.threads)


# -- subcommands ------------------------------------------------------------------


def cmd_ingest_lidar(args) -> int:
    from .lidar import derive_surfaces, load_points
    from .raster import read_raster, write_raster

    if args.like:
        ref = read_raster(args.like)
        rows, cols, ox, oy, size = ref.rows, ref.cols, ref.origin_x, ref.origin_y, ref.pixel_size
    elif None in (args.rows, args.cols):
        raise UsageError("ingest-lidar needs --like or --rows/--cols")
    else:
        rows, cols, ox, oy, size = args.rows, args.cols, args.origin_x, args.origin_y, args.pixel_size
    surfaces = derive_surfaces(load_points(args.points), rows, cols, (ox, oy), size)
    for name, grid in surfaces.items():
        write_raster(grid, f"{args.output}_{name}")
        print(f"wrote {args.output}_{name}.hdr")
    return EXIT_OK


def cmd_coregister(args) -> int:
    from .raster import GcpPair, fit_affine_gcps, read_raster, resample_nearest, write_raster

    pairs = []
    for lineno, line in enumerate(Path(args.gcps).read_text().splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#") or line.lstrip().startswith("src"):
            continue
        try:
            pairs.append(GcpPair(*(float(v) for v in line.split(","))))
        except (TypeError, ValueError):
            raise DataError(f"{args.gcps}:{lineno}: expected src_x,src_y,dst_x,dst_y") from None
    transform = fit_affine_gcps(pairs)
    moving = read_raster(args.input)
    if args.like:
        ref = read_raster(args.like)
        out = resample_nearest(moving, transform, ref.rows, ref.cols, origin_x=ref.origin_x,
                               origin_y=ref.origin_y, pixel_size=ref.pixel_size)
    else:
        out = resample_nearest(moving, transform, args.rows or moving.rows, args.cols or moving.cols)
    write_raster(out, args.output)
    t = transform
    print(f"affine a={t.a!r} b={t.b!r} c={t.c!r} d={t.d!r} e={t.e!r} f={t.f!r}")
    print(f"rmse = {t.rmse:.6g} pixels")
    return EXIT_OK


def cmd_kpca(args) -> int:
    from .kpca import kpca_features
    from .raster import read_raster, write_raster
    from .seeding import stage_seed

    cfg = _config(args)
    grid, model = kpca_features(read_raster(args.input), args.samples or cfg.kpca_samples,
                                args.variance or cfg.kpca_variance, seed=stage_seed("kpca", 0, cfg.seed),
                                solver=args.solver or cfg.kpca_solver)
    write_raster(grid, args.output)
    print(f"kept {model.kept} components ({100 * model.explained:.2f}% of the kernel variance), gamma = {model.gamma:.6g}")
    return EXIT_OK


def cmd_esdap(args) -> int:
    from .pipeline import profile_grid
    from .raster import read_raster, write_raster

    cfg = _config(args)
    cfg = cfg.replace(area_thresholds=args.area_thresholds or cfg.area_thresholds,
                      std_thresholds=args.std_thresholds or cfg.std_thresholds, levels=args.levels or cfg.levels)
    out = profile_grid(read_raster(args.input), cfg, args.prefix, cfg.threads)
    write_raster(out, args.output)
    print(f"wrote {out.bands} profile bands")
    return EXIT_OK


def cmd_stack(args) -> int:
    from .pipeline import RECIPE_ITEMS, stack_features
    from .raster import read_raster, write_raster

    recipe, inputs = [], {}
    for item in args.input:
        name, sep, path = item.partition("=")
        if not sep or name not in RECIPE_ITEMS:
            raise UsageError(f"--input expects name=path with name in {RECIPE_ITEMS}, got {item!r}")
        recipe.append(name)
        inputs[name] = read_raster(path)
    out = stack_features(recipe, inputs)
    write_raster(out, args.output)
    print(f"stacked {out.bands} bands")
    return EXIT_OK


def _training(args, cfg):
    from .classifiers import TrainingSet
    from .evaluation import split_reference
    from .raster import read_class_map, read_raster
    from .seeding import stage_seed

    features = read_raster(args.features)
    labels = read_class_map(args.labels).labels
    if labels.shape != features.shape:
        raise DataError("class map and features differ in size")
    labels = np.where(features.valid_mask(), labels, 0)
    flat = features.data.reshape(features.bands, -1).T.astype(np.float64)
    truth = labels.ravel()
    if args.all_labelled:
        idx = np.flatnonzero(truth > 0)
    else:
        idx = split_reference(labels, cfg.fraction, cfg.min_per_class, stage_seed("split", 0, cfg.seed)).train
    return TrainingSet(flat[idx], truth[idx])


def cmd_train(args) -> int:
    from .classifiers import save_model
    from .pipeline import _train
    from .seeding import stage_seed

    cfg = _config(args)
    train = _training(args, cfg)
    model = _train(args.classifier, train, cfg, stage_seed(f"train.{args.classifier}", 0, cfg.seed))
    save_model(model, args.output)
    print(f"trained {args.classifier} on {len(train.y)} samples, {train.X.shape[1]} features")
    return EXIT_OK


def cmd_predict(args) -> int:
    from .classifiers import load_model
    from .raster import ClassMap, read_raster, render_class_map, write_class_map

    features = read_raster(args.features)
    model = load_model(args.model)
    valid = features.valid_mask().ravel()
    flat = features.data.reshape(features.bands, -1).T.astype(np.float64)
    labels = np.zeros(flat.shape[0], dtype=np.int64)
    labels[valid] = model.predict(flat[valid])
    labels = ClassMap(labels.reshape(features.shape))
    write_class_map(labels, args.output, like=features)
    if args.render:
        render_class_map(labels, args.render)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .evaluation import format_table, format_tsv
    from .pipeline import Inputs, ScenarioConfig, run_scenario
    from .raster import read_class_map, read_raster

    cfg = _config(args)
    classifiers = tuple(args.classifier) if args.classifier else cfg.classifiers
    cfg = cfg.replace(classifiers=classifiers, runs=args.runs or cfg.runs, render_maps="none")
    features = read_raster(args.features)
    labels = read_class_map(args.labels)
    dummy = features.with_data(features.data[:1])
    result = run_scenario(cfg, Inputs(dummy, dummy, dummy, labels), features=features)
    reports = list(result.reports.values())
    print(format_table(reports), end="")
    if args.report:
        Path(args.report).write_text(format_tsv(reports), encoding="utf-8")
    return EXIT_OK


def cmd_scenario(args) -> int:
    from .pipeline import run_scenario, write_outputs

    cfg = _config(args)
    changes = {}
    if args.scenario:
        changes.update(scenario=args.scenario, recipe=())
    if args.recipe:
        changes["recipe"] = tuple(v.strip() for v in args.recipe.split(","))
    if args.runs:
        changes["runs"] = args.runs
    if args.classifiers:
        changes["classifiers"] = tuple(v.strip() for v in args.classifiers.split(","))
    cfg = cfg.replace(**changes)
    out_dir = args.output_dir or cfg.output_dir
    if not out_dir:
        raise UsageError("scenario needs --output-dir (or output_dir in the config)")
    result = run_scenario(cfg)
    write_outputs(result, out_dir)
    print(result.table(), end="")
    print(result.timing_table(), end="")
    if args.report:
        from .evaluation import format_tsv

        Path(args.report).write_text(format_tsv(list(result.reports.values())), encoding="utf-8")
    return EXIT_OK


def cmd_synth_scene(args) -> int:
    from .lidar import write_points
    from .raster import write_class_map, write_raster
    from .synthetic import SceneSpec, generate_synthetic_scene

    spec = SceneSpec(rows=args.rows, cols=args.cols, bands=args.bands, regions=args.regions)
    scene = generate_synthetic_scene(spec, seed=args.scene_seed)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_raster(scene.hyper, out / "hyper")
    write_raster(scene.ndsm, out / "ndsm")
    write_raster(scene.intensity, out / "intensity")
    write_raster(scene.hyper.with_data(scene.heights, metadata={"band_names": "true_height"}), out / "true_height")
    write_class_map(scene.class_map, out / "classes", like=scene.hyper)
    write_points(scene.points, out / "points.csv")
    (out / "scenario.cfg").write_text(
        "# scenario over this synthetic scene\n"
        "hyper = hyper\nndsm = ndsm\nintensity = intensity\nclass_map = classes\nscenario = 3\n",
        encoding="utf-8")
    print(f"wrote scene to {out}")
    return EXIT_OK


def cmd_render(args) -> int:
    from .raster import read_class_map, render_class_map

    render_class_map(read_class_map(args.labels), args.output)
    return EXIT_OK


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lidarhsi", description="Hyperspectral + LiDAR land-cover classification toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(parser, suppress=False)
    common = _Parser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text, parents=[common])
        p.set_defaults(func=fn)
        return p

    p = add("ingest-lidar", cmd_ingest_lidar, "rasterize DEM, DSM, nDSM and intensity from a point CSV")
    p.add_argument("--points", required=True)
    p.add_argument("--output", required=True, help="output prefix; writes <prefix>_{dem,dsm,ndsm,intensity}")
    p.add_argument("--like", help="copy the grid geometry from this raster")
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--origin-x", type=float, default=0.0)
    p.add_argument("--origin-y", type=float, default=0.0)
    p.add_argument("--pixel-size", type=float, default=1.0)

    p = add("coregister", cmd_coregister, "affine GCP fit and nearest-neighbour resampling")
    p.add_argument("--input", required=True)
    p.add_argument("--gcps", required=True, help="CSV of src_x,src_y,dst_x,dst_y in pixel coordinates")
    p.add_argument("--output", required=True)
    p.add_argument("--like", help="reference raster defining the output grid")
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)

    p = add("kpca", cmd_kpca, "kernel PCA features of a hyperspectral cube")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--samples", type=int)
    p.add_argument("--variance", type=float)
    p.add_argument("--solver", choices=("jacobi", "lapack"))

    p = add("esdap", cmd_esdap, "self-dual attribute profiles of every band")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--area-thresholds", help="auto:N or a comma list")
    p.add_argument("--std-thresholds", help="auto:N or a comma list")
    p.add_argument("--levels", type=int)
    p.add_argument("--prefix", default="esdap")

    p = add("stack", cmd_stack, "concatenate rasters band-wise")
    p.add_argument("--input", action="append", required=True, help="name=path, repeated in stacking order")
    p.add_argument("--output", required=True)

    for name, fn, text in (("train", cmd_train, "train a classifier on labelled pixels"),
                           ("evaluate", cmd_evaluate, "Monte-Carlo accuracy evaluation")):
        p = add(name, fn, text)
        p.add_argument("--features", required=True)
        p.add_argument("--labels", required=True)
        if name == "train":
            p.add_argument("--classifier", choices=("svm", "rf", "rbfnn"), required=True)
            p.add_argument("--output", required=True)
            p.add_argument("--all-labelled", action="store_true", help="train on every labelled pixel")
        else:
            p.add_argument("--classifier", choices=("svm", "rf", "rbfnn"), action="append")
            p.add_argument("--runs", type=int)
            p.add_argument("--report", help="write the machine-readable report here")

    p = add("predict", cmd_predict, "classify every pixel with a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--render", help="also write a PPM rendering")

    p = add("scenario", cmd_scenario, "run a full scenario from a config")
    p.add_argument("--output-dir")
    p.add_argument("--scenario", type=int, choices=(1, 2, 3))
    p.add_argument("--recipe")
    p.add_argument("--runs", type=int)
    p.add_argument("--classifiers")
    p.add_argument("--report")

    p = add("synth-scene", cmd_synth_scene, "write the synthetic test scene")
    p.add_argument("--output-dir", required=True)
    p.add_argument("--scene-seed", type=int, default=0)
    p.add_argument("--rows", type=int, default=128)
    p.add_argument("--cols", type=int, default=128)
    p.add_argument("--bands", type=int, default=32)
    p.add_argument("--regions", type=int, default=36, help="number of polygonal regions")

    p = add("render", cmd_render, "render a class map as PPM")
    p.add_argument("--labels", required=True)
    p.add_argument("--output", required=True)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError("a command is required (see --help)")
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        args.seed_given = any(a == "--seed" or a.startswith("--seed=") for a in argv)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, LidarHsiError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
