import numpy as np
import pytest

from lidarhsi.errors import DataError
from lidarhsi.pipeline import (
    Inputs,
    ScenarioConfig,
    feature_inputs,
    load_config,
    load_inputs,
    parse_config_text,
    parse_thresholds,
    run_scenario,
    stack_features,
    stage,
    write_outputs,
)
from lidarhsi.raster import RasterGrid


def grid(bands, value=0.0, rows=4, cols=5, names=None):
    meta = {"band_names": names} if names else {}
    return RasterGrid(np.full((bands, rows, cols), value, dtype=np.float32), metadata=meta)


@pytest.fixture(scope="module")
def small_cfg(scene_dir):
    return load_config(scene_dir / "scenario.cfg")


@pytest.fixture(scope="module")
def small_inputs(small_cfg):
    return load_inputs(small_cfg)


class TestStack:
    def test_fusion_counts(self):
        inputs = {"esdap_kpca": grid(15), "intensity": grid(1), "ndsm": grid(1), "hyper": grid(215)}
        assert stack_features(["esdap_kpca", "intensity", "ndsm"], inputs).bands == 17
        assert stack_features(["hyper", "intensity", "ndsm"], inputs).bands == 217

    def test_single_ndsm(self):
        ndsm = RasterGrid(np.arange(20, dtype=np.float32).reshape(4, 5), metadata={"band_names": "ndsm"})
        out = stack_features(["ndsm"], {"ndsm": ndsm})
        assert out.bands == 1 and np.array_equal(out.data, ndsm.data)

    def test_order_and_provenance(self):
        inputs = {"hyper": grid(2, 1.0), "ndsm": grid(1, 7.0), "intensity": grid(1, 3.0)}
        out = stack_features(["ndsm", "hyper", "intensity"], inputs)
        assert out.data[:, 0, 0].tolist() == [7.0, 1.0, 1.0, 3.0]
        assert out.metadata["recipe"] == "ndsm,hyper,intensity"
        assert out.metadata["band_names"].split(",") == ["ndsm", "hyper:1", "hyper:2", "intensity"]

    def test_no_normalisation(self):
        big = grid(1, 1e4)
        out = stack_features(["ndsm", "intensity"], {"ndsm": big, "intensity": grid(1, 1e-3)})
        assert out.data[0, 0, 0] == 1e4 and out.data[1, 0, 0] == np.float32(1e-3)

    def test_nodata_propagates(self):
        data = np.ones((1, 4, 5), dtype=np.float32)
        data[0, 1, 1] = -9999.0
        out = stack_features(["ndsm", "hyper"], {"ndsm": RasterGrid(data), "hyper": grid(3, 2.0)})
        assert np.all(out.data[:, 1, 1] == -9999.0)

    def test_mismatch(self):
        with pytest.raises(DataError):
            stack_features(["ndsm", "hyper"], {"ndsm": grid(1), "hyper": grid(1, rows=5)})
        with pytest.raises(DataError):
            stack_features([], {})
        with pytest.raises(DataError):
            stack_features(["kpca"], {})


class TestConfig:
    def test_defaults(self):
        cfg = ScenarioConfig(scenario=3)
        assert cfg.recipe == ("esdap_kpca", "intensity", "ndsm")
        assert cfg.synthetic and cfg.runs == 10

    def test_text_roundtrip(self):
        cfg = ScenarioConfig(scenario=2, runs=3, svm_c=(1.0, 2.5), classifiers=("rf",), lidar_profiles=True)
        assert ScenarioConfig.from_text(cfg.to_text()) == cfg

    def test_hash_ignores_output(self):
        cfg = ScenarioConfig()
        assert cfg.hash() == cfg.replace(output_dir="/elsewhere").hash()
        assert cfg.hash() != cfg.replace(seed=1).hash()

    @pytest.mark.parametrize("text", [
        "scenario = 4", "recipe = hyper,lidar", "classifiers = knn", "runs = 0", "colour = red",
        "runs = many", "hyper = missing", "area_thresholds = auto:x", "lidar_profiles = maybe",
    ])
    def test_rejects(self, text):
        with pytest.raises(DataError):
            ScenarioConfig.from_text(text)

    def test_parse_errors(self):
        with pytest.raises(DataError, match="line 2"):
            parse_config_text("runs = 1\nnot a pair\n")
        with pytest.raises(DataError, match="duplicate"):
            parse_config_text("runs = 1\nruns = 2\n")

    def test_thresholds(self):
        assert parse_thresholds("auto:3") == 3
        assert parse_thresholds("1.5, 10") == [1.5, 10.0]

    def test_relative_paths(self, scene_dir, small_cfg):
        assert small_cfg.hyper == str((scene_dir / "hyper").resolve())

    def test_manifest_keys_ignored(self):
        cfg = ScenarioConfig.from_text("runs = 2\nmanifest.version = 9\n")
        assert cfg.runs == 2


def test_stage_prefix():
    with pytest.raises(DataError, match=r"^\[kpca\] bad"):
        with stage("kpca"):
            raise DataError("bad")


class TestScenario:
    def test_kpca_recipe_deterministic(self, small_cfg, small_inputs, tmp_path):
        cfg = small_cfg.replace(scenario=1, recipe=("kpca",), classifiers=("rbfnn",))
        a = run_scenario(cfg, small_inputs)
        b = run_scenario(cfg, small_inputs)
        report = a.reports["rbfnn"]
        assert 0.3 < report.mean("oa") <= 1 and not any(r.metrics.degenerate for r in report.runs)
        assert a.manifest == b.manifest
        write_outputs(a, tmp_path / "a")
        write_outputs(b, tmp_path / "b")
        for name in ("report.tsv", "runs.tsv", "manifest.txt", "map_rbfnn_run0.ppm"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_feature_counts(self, small_cfg, small_inputs):
        feats = feature_inputs(small_cfg, small_inputs)
        kept = feats["kpca"].bands
        assert feats["esdap_kpca"].bands == 5 * kept
        assert np.all(feats["esdap_kpca"].data >= 0) and np.all(feats["esdap_kpca"].data <= 1)
        lidar = feature_inputs(small_cfg.replace(lidar_profiles=True), small_inputs)
        assert lidar["ndsm"].bands == 5 and lidar["intensity"].bands == 5

    def test_manifest_replay(self, small_cfg, small_inputs, tmp_path):
        cfg = small_cfg.replace(classifiers=("rf",), seed=4)
        first = run_scenario(cfg, small_inputs)
        (tmp_path / "manifest.txt").write_text(first.manifest)
        replay_cfg = load_config(tmp_path / "manifest.txt")
        assert replay_cfg == cfg
        second = run_scenario(replay_cfg)
        assert second.reports["rf"].values("oa").tolist() == first.reports["rf"].values("oa").tolist()
        assert all(np.array_equal(first.maps[k], second.maps[k]) for k in first.maps)

    def test_threads_identical(self, small_cfg, small_inputs):
        cfg = small_cfg.replace(classifiers=("svm", "rf"), render_maps="all")
        one = run_scenario(cfg, small_inputs)
        two = run_scenario(cfg.replace(threads=2), small_inputs)
        for name in one.reports:
            assert one.reports[name].values("kappa").tolist() == two.reports[name].values("kappa").tolist()
        assert one.maps.keys() == two.maps.keys()
        assert all(np.array_equal(one.maps[k], two.maps[k]) for k in one.maps)

    def test_nodata_labels_dropped(self, small_cfg, small_inputs):
        data = small_inputs.ndsm.data.copy()
        data[0, :2, :] = small_inputs.ndsm.nodata
        holes = Inputs(small_inputs.hyper, small_inputs.ndsm.with_data(data), small_inputs.intensity,
                       small_inputs.class_map)
        cfg = small_cfg.replace(scenario=2, recipe=(), classifiers=("rbfnn",), runs=1)
        with pytest.warns(RuntimeWarning, match="nodata"):
            result = run_scenario(cfg, holes)
        assert np.all(result.maps[("rbfnn", 0)][:2] == 0)

    def test_size_mismatch(self, small_cfg, small_inputs):
        cfg = small_cfg.replace(scenario=1, recipe=(), classifiers=("rbfnn",), runs=1)
        other = small_inputs.hyper.with_data(small_inputs.hyper.data[:, :10, :10])
        with pytest.raises(DataError, match=r"\[stack\]"):
            run_scenario(cfg, Inputs(other, other, other, small_inputs.class_map))


def test_replace_scenario_follows_default_recipe():
    cfg = ScenarioConfig(scenario=1)
    assert cfg.replace(scenario=3).recipe == ("esdap_kpca", "intensity", "ndsm")
    custom = ScenarioConfig(scenario=1, recipe=("kpca",))
    assert custom.replace(scenario=3).recipe == ("kpca",)
