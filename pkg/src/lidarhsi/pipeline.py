"""Scenario orchestration: feature assembly, stacking, Monte-Carlo classification and reporting.

Configuration files are flat ``key = value`` text (``#`` comments, list
values comma separated).  The manifest written next to every report is
itself a valid configuration: it lists every resolved setting, followed by
``manifest.*`` provenance entries that are ignored when it is loaded again.
"""

from __future__ import annotations

import contextlib
import dataclasses
import hashlib
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .classifiers import TrainingSet, rbfnn_train, rf_train, svm_train
from .classifiers.svm import DEFAULT_C_GRID, DEFAULT_GAMMA_GRID
from .errors import DataError, LidarHsiError
from .evaluation import (EvalReport, format_runs_tsv, format_table, format_tsv, METRICS, monte_carlo,
                         split_reference, timed, TIMINGS)
from .kpca import kpca_features
from .morphology import esdap
from .raster import ClassMap, RasterGrid, read_class_map, read_raster, render_class_map
from .seeding import stage_seed

RECIPE_ITEMS = ("hyper", "kpca", "esdap_kpca", "ndsm", "intensity")
SCENARIO_RECIPES = {
    1: ("hyper",),
    2: ("hyper", "intensity", "ndsm"),
    3: ("esdap_kpca", "intensity", "ndsm"),
}
CLASSIFIER_NAMES = ("svm", "rf", "rbfnn")
MAP_MODES = ("first", "all", "none")


@contextlib.contextmanager
def stage(name: str):
    """Prefix library errors raised inside the block with the stage name."""
    try:
        yield
    except LidarHsiError as exc:
        if str(exc).startswith("["):
            raise
        raise type(exc)(f"[{name}] {exc}") from exc


def parse_thresholds(text: str):
    """``auto:N`` gives a count of automatic thresholds, otherwise a comma list of values."""
    text = str(text).strip()
    if text.startswith("auto:"):
        try:
            count = int(text[5:])
        except ValueError:
            raise DataError(f"bad threshold spec {text!r}") from None
        if count < 0:
            raise DataError("threshold count must be >= 0")
        return count
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise DataError(f"bad threshold spec {text!r}") from None


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: int = 1
    recipe: tuple[str, ...] = ()
    hyper: str = ""
    ndsm: str = ""
    intensity: str = ""
    class_map: str = ""
    scene_seed: int = 0
    classifiers: tuple[str, ...] = CLASSIFIER_NAMES
    runs: int = 10
    seed: int = 0
    threads: int = 1
    fraction: float = 0.01
    min_per_class: int = 20
    kpca_samples: int = 500
    kpca_variance: float = 0.95
    kpca_solver: str = "jacobi"
    area_thresholds: str = "auto:2"
    std_thresholds: str = "auto:2"
    levels: int = 256
    lidar_profiles: bool = False
    svm_c: tuple[float, ...] = DEFAULT_C_GRID
    svm_gamma: tuple[float, ...] = DEFAULT_GAMMA_GRID
    svm_folds: int = 5
    rf_trees: int = 200
    rbfnn_centers: int = 5
    render_maps: str = "first"
    output_dir: str = ""

    def __post_init__(self):
        if self.scenario not in SCENARIO_RECIPES:
            raise DataError(f"scenario must be one of {sorted(SCENARIO_RECIPES)}, got {self.scenario}")
        recipe = tuple(self.recipe) or SCENARIO_RECIPES[self.scenario]
        unknown = [r for r in recipe if r not in RECIPE_ITEMS]
        if unknown:
            raise DataError(f"unknown recipe items {unknown}; choose from {RECIPE_ITEMS}")
        object.__setattr__(self, "recipe", recipe)
        bad = [c for c in self.classifiers if c not in CLASSIFIER_NAMES]
        if bad or not self.classifiers:
            raise DataError(f"classifiers must be a non-empty subset of {CLASSIFIER_NAMES}")
        if self.runs < 1 or self.threads < 1:
            raise DataError("runs and threads must be >= 1")
        if self.render_maps not in MAP_MODES:
            raise DataError(f"render_maps must be one of {MAP_MODES}")
        paths = [self.hyper, self.ndsm, self.intensity, self.class_map]
        if any(paths) and not all(paths):
            raise DataError("hyper, ndsm, intensity and class_map must be given together (or none for a synthetic scene)")
        for p in paths:
            if p and not _raster_exists(p):
                raise DataError(f"input raster {p} does not exist")
        parse_thresholds(self.area_thresholds)
        parse_thresholds(self.std_thresholds)

    @property
    def synthetic(self) -> bool:
        return not self.hyper

    def replace(self, **changes) -> "ScenarioConfig":
        # a recipe that is just the old scenario's default follows the new scenario
        if "scenario" in changes and "recipe" not in changes and self.recipe == SCENARIO_RECIPES[self.scenario]:
            changes["recipe"] = ()
        return dataclasses.replace(self, **changes)

    def to_text(self, include_output: bool = True) -> str:
        lines = []
        for f in dataclasses.fields(self):
            if f.name == "output_dir" and not include_output:
                continue
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.to_text(include_output=False).encode()).hexdigest()

    @classmethod
    def from_mapping(cls, entries: Mapping[str, str], base_dir: Path | None = None) -> "ScenarioConfig":
        kinds = {f.name: f for f in dataclasses.fields(cls)}
        values = {}
        for key, raw in entries.items():
            if key.startswith("manifest."):
                continue
            if key not in kinds:
                raise DataError(f"unknown configuration key {key!r}")
            values[key] = _parse(kinds[key], raw)
            if key in ("hyper", "ndsm", "intensity", "class_map", "output_dir") and values[key] and base_dir:
                values[key] = str((base_dir / values[key]).resolve())
        try:
            return cls(**values)
        except TypeError as exc:
            raise DataError(str(exc)) from exc

    @classmethod
    def from_text(cls, text: str, base_dir: Path | None = None) -> "ScenarioConfig":
        return cls.from_mapping(parse_config_text(text), base_dir)


def _raster_exists(path: str) -> bool:
    p = Path(path)
    stem = p.with_suffix("") if p.suffix in (".hdr", ".bin") else p
    return Path(f"{stem}.hdr").exists()


def parse_config_text(text: str) -> dict[str, str]:
    entries = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        if not sep or not key.strip():
            raise DataError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key = key.strip()
        if key in entries:
            raise DataError(f"config line {lineno}: duplicate key {key!r}")
        entries[key] = value.strip()
    return entries


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    return ScenarioConfig.from_text(text, path.parent.resolve())


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    return str(value)


def _parse(f: dataclasses.Field, raw: str):
    kind = f.type if isinstance(f.type, str) else str(f.type)
    try:
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind.startswith("tuple[float"):
            return tuple(float(v) for v in raw.split(",") if v.strip())
        if kind.startswith("tuple[str"):
            return tuple(v.strip() for v in raw.split(",") if v.strip())
        return raw
    except ValueError:
        raise DataError(f"bad value for {f.name}: {raw!r}") from None


# -- inputs and features -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Inputs:
    hyper: RasterGrid
    ndsm: RasterGrid
    intensity: RasterGrid
    class_map: ClassMap


def load_inputs(cfg: ScenarioConfig) -> Inputs:
    if cfg.synthetic:
        from .synthetic import generate_synthetic_scene

        with stage("synth-scene"):
            scene = generate_synthetic_scene(seed=cfg.scene_seed)
        return Inputs(scene.hyper, scene.ndsm, scene.intensity, scene.class_map)
    with stage("load"):
        return Inputs(read_raster(cfg.hyper), read_raster(cfg.ndsm), read_raster(cfg.intensity),
                      read_class_map(cfg.class_map))


def profile_grid(grid: RasterGrid, cfg: ScenarioConfig, prefix: str, threads: int = 1) -> RasterGrid:
    """ESDAP of every band of ``grid``; profile values are reported on the normalised [0, 1] scale."""
    valid = grid.valid_mask()
    stack = esdap([grid.data[b] for b in range(grid.bands)], parse_thresholds(cfg.area_thresholds),
                  parse_thresholds(cfg.std_thresholds), cfg.levels, valid, threads)
    data = stack.to_array().astype(np.float64) / (cfg.levels - 1)
    data[:, ~valid] = grid.nodata
    meta = {"band_names": ",".join(f"{prefix}:{label}" for label in stack.labels())}
    if stack.degenerate:
        meta["degenerate_thresholds"] = ",".join(stack.degenerate)
    return grid.with_data(data, metadata=meta)


def feature_inputs(cfg: ScenarioConfig, inputs: Inputs) -> dict[str, RasterGrid]:
    """The rasters named by the recipe, computed once per scenario."""
    out: dict[str, RasterGrid] = {}
    need = set(cfg.recipe)
    if "hyper" in need:
        out["hyper"] = inputs.hyper
    if need & {"kpca", "esdap_kpca"}:
        with stage("kpca"):
            kgrid, _ = kpca_features(inputs.hyper, cfg.kpca_samples, cfg.kpca_variance,
                                     seed=stage_seed("kpca", 0, cfg.seed), solver=cfg.kpca_solver)
        out["kpca"] = kgrid
        if "esdap_kpca" in need:
            with stage("esdap"):
                out["esdap_kpca"] = profile_grid(kgrid, cfg, "esdap_kpca", cfg.threads)
    for name in ("ndsm", "intensity"):
        if name in need:
            grid = getattr(inputs, name)
            if cfg.lidar_profiles:
                with stage("esdap"):
                    grid = profile_grid(grid, cfg, name, cfg.threads)
            out[name] = grid
    return out


def stack_features(recipe: Sequence[str], inputs: Mapping[str, RasterGrid]) -> RasterGrid:
    """Concatenate the recipe's rasters band-wise, in recipe order, without any rescaling.

    The header records the recipe and one ``source:band`` name per band.
    Pixels that are nodata in any input become nodata in every output band.
    """
    if not recipe:
        raise DataError("recipe is empty")
    grids = []
    for name in recipe:
        if name not in inputs:
            raise DataError(f"recipe item {name!r} has no input raster")
        grids.append(inputs[name])
    shape = grids[0].shape
    for name, g in zip(recipe, grids):
        if g.shape != shape:
            raise DataError(f"{name} is {g.rows}x{g.cols}, expected {shape[0]}x{shape[1]}")
    valid = np.all([g.valid_mask() for g in grids], axis=0)
    names = []
    for name, g in zip(recipe, grids):
        own = [n for n in g.metadata.get("band_names", "").split(",") if n]
        if len(own) != g.bands:
            own = [f"{name}:{i + 1}" if g.bands > 1 else name for i in range(g.bands)]
        elif not all(n.startswith(f"{name}:") or n == name for n in own):
            own = [f"{name}:{n}" for n in own]
        names += own
    first = grids[0]
    nodata = first.nodata
    data = np.concatenate([g.data for g in grids]).astype(np.float32)
    data[:, ~valid] = nodata
    return first.with_data(data, metadata={"recipe": ",".join(recipe), "band_names": ",".join(names)})


# -- scenario --------------------------------------------------------------------


def _train(name: str, train: TrainingSet, cfg: ScenarioConfig, seed: int):
    if name == "svm":
        return svm_train(train, cfg.svm_c, cfg.svm_gamma, cfg.svm_folds, seed)
    if name == "rf":
        return rf_train(train, cfg.rf_trees, seed)
    return rbfnn_train(train, cfg.rbfnn_centers, seed)


@dataclass(frozen=True, eq=False)
class ScenarioResult:
    config: ScenarioConfig
    features: RasterGrid
    reports: dict[str, EvalReport]
    maps: dict[tuple[str, int], np.ndarray] = field(default_factory=dict)
    manifest: str = ""

    def table(self) -> str:
        return format_table(list(self.reports.values()), METRICS)

    def timing_table(self) -> str:
        return format_table(list(self.reports.values()), TIMINGS)


def run_scenario(cfg: ScenarioConfig, inputs: Inputs | None = None,
                 features: RasterGrid | None = None) -> ScenarioResult:
    """Assemble features once, then per run: split, train, predict and score every classifier.

    Seeds derive from the master seed per stage and run index, so results do
    not depend on ``cfg.threads``.
    """
    inputs = inputs or load_inputs(cfg)
    if features is None:
        features = stack_features(cfg.recipe, feature_inputs(cfg, inputs))
    labels = inputs.class_map.labels
    if labels.shape != features.shape:
        raise DataError(f"[stack] class map is {labels.shape}, features are {features.shape}")
    valid = features.valid_mask()
    usable = np.where(valid, labels, 0)
    dropped = int(np.count_nonzero(labels[~valid]))
    if dropped:
        warnings.warn(f"{dropped} labelled pixels have nodata features and are ignored", RuntimeWarning, stacklevel=2)
    flat = features.data.reshape(features.bands, -1).T.astype(np.float64)
    truth = usable.ravel()
    n_classes = int(truth.max())
    map_runs = {"first": {0}, "all": set(range(cfg.runs)), "none": set()}[cfg.render_maps]
    maps: dict[tuple[str, int], np.ndarray] = {}
    splits = {}

    def get_split(run):
        if run not in splits:
            with stage("split"):
                splits[run] = split_reference(usable, cfg.fraction, cfg.min_per_class, stage_seed("split", run, cfg.seed))
        return splits[run]

    for run in range(cfg.runs):
        get_split(run)

    reports = {}
    for name in cfg.classifiers:
        def run_once(run, name=name):
            sp = get_split(run)
            train = TrainingSet(flat[sp.train], truth[sp.train])
            with stage(f"train:{name}"), warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                model, t_train = timed(_train, name, train, cfg, stage_seed(f"train.{name}", run, cfg.seed))
            with stage(f"predict:{name}"):
                predicted, t_test = timed(model.predict, flat[sp.test])
            if run in map_runs:
                full = np.zeros(truth.size, dtype=np.int64)
                full[valid.ravel()] = model.predict(flat[valid.ravel()])
                maps[(name, run)] = full.reshape(labels.shape)
            return truth[sp.test], predicted, t_train, t_test

        reports[name] = monte_carlo(run_once, cfg.runs, name, n_classes, threads=cfg.threads)
    result = ScenarioResult(cfg, features, reports, dict(sorted(maps.items())))
    return dataclasses.replace(result, manifest=manifest_text(result))


def manifest_text(result: ScenarioResult) -> str:
    cfg = result.config
    import numba
    import scipy

    lines = [cfg.to_text(include_output=False).rstrip("\n"), "", "# provenance (ignored when loaded as a config)"]
    entries = [
        ("config_hash", cfg.hash()),
        ("version", __version__),
        ("numpy", np.__version__),
        ("scipy", scipy.__version__),
        ("numba", numba.__version__),
        ("features", str(result.features.bands)),
        ("band_names", result.features.metadata.get("band_names", "")),
    ]
    if {"kpca", "esdap_kpca"} & set(cfg.recipe):
        entries.append(("seed.kpca", str(stage_seed("kpca", 0, cfg.seed))))
    for run in range(cfg.runs):
        entries.append((f"seed.split.{run}", str(stage_seed("split", run, cfg.seed))))
    for name in cfg.classifiers:
        for run in range(cfg.runs):
            entries.append((f"seed.train.{name}.{run}", str(stage_seed(f"train.{name}", run, cfg.seed))))
    lines += [f"manifest.{k} = {v}" for k, v in entries]
    return "\n".join(lines) + "\n"


def write_outputs(result: ScenarioResult, out_dir) -> list[Path]:
    """Write reports, maps and the manifest.  Everything except ``timing.*`` is bit-reproducible."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports = list(result.reports.values())
    files = {
        "report.txt": format_table(reports, METRICS),
        "report.tsv": format_tsv(reports, METRICS),
        "runs.tsv": format_runs_tsv(reports, METRICS),
        "timing.txt": format_table(reports, TIMINGS),
        "timing.tsv": format_tsv(reports, TIMINGS),
        "manifest.txt": result.manifest,
    }
    written = []
    for name, text in files.items():
        (out / name).write_text(text, encoding="utf-8")
        written.append(out / name)
    for (clf, run), labels in result.maps.items():
        path = out / f"map_{clf}_run{run}.ppm"
        render_class_map(labels, path)
        written.append(path)
    return written
