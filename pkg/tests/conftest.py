import numpy as np
import pytest

from lidarhsi.lidar import write_points
from lidarhsi.raster import write_class_map, write_raster
from lidarhsi.synthetic import SceneSpec, generate_synthetic_scene

SMALL_SPEC = SceneSpec(rows=48, cols=48, bands=12, regions=10)


@pytest.fixture(scope="session")
def small_scene():
    return generate_synthetic_scene(SMALL_SPEC, seed=0)


@pytest.fixture(scope="session")
def scene_dir(tmp_path_factory, small_scene):
    """The small scene written to disk with a scenario config next to it."""
    out = tmp_path_factory.mktemp("scene")
    write_raster(small_scene.hyper, out / "hyper")
    write_raster(small_scene.ndsm, out / "ndsm")
    write_raster(small_scene.intensity, out / "intensity")
    write_class_map(small_scene.class_map, out / "classes", like=small_scene.hyper)
    write_points(small_scene.points, out / "points.csv")
    (out / "scenario.cfg").write_text(
        "hyper = hyper\nndsm = ndsm\nintensity = intensity\nclass_map = classes\n"
        "scenario = 3\nruns = 2\nfraction = 0.02\nmin_per_class = 10\nrf_trees = 25\n"
        "svm_c = 1,16\nsvm_gamma = 0.0625,1\nkpca_samples = 200\n"
    )
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(0)


_criteria: dict[int, list] = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when == "teardown":
        return
    number, title = marker.args
    entry = _criteria.setdefault(number, [title, True])
    if call.excinfo is not None:
        entry[1] = False


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, ok = _criteria[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}")
