"""Synthetic hyperspectral + LiDAR scene with known ground truth.

The scene is a Voronoi tessellation of the image into convex polygons, each
assigned one of six land-cover classes.  Spectra are smooth class
signatures scaled by a per-pixel brightness factor, shifted along two smooth
spectral variation curves, plus a little white noise.  Grass
and trees share almost the same signature but differ by 8 m in height; roofs
and roads have similar signatures and differ by 6 m.  A LiDAR point cloud is
sampled from the same scene (sloping terrain plus object heights) so the
height and intensity rasters can be derived through the TIN path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DataError
from .lidar import PointCloud, derive_surfaces
from .raster import ClassMap, RasterGrid
from .seeding import rng as make_rng

CLASS_NAMES = ("road", "grass", "trees", "roof", "soil", "water")
ROAD, GRASS, TREES, ROOF, SOIL, WATER = range(1, 7)
CLASS_HEIGHTS = {ROAD: 0.0, GRASS: 0.0, TREES: 8.0, ROOF: 6.0, SOIL: 0.0, WATER: 0.0}
CLASS_INTENSITY = {ROAD: 0.14, GRASS: 0.42, TREES: 0.36, ROOF: 0.22, SOIL: 0.30, WATER: 0.03}
MIN_REGION_PIXELS = 64


def class_signatures(bands: int) -> np.ndarray:
    """``(6, bands)`` reflectance curves over 400-1000 nm, row ``i`` is class ``i + 1``."""
    wl = np.linspace(0.4, 1.0, bands)
    edge = 1.0 / (1.0 + np.exp(-(wl - 0.71) / 0.015))
    green = np.exp(-((wl - 0.55) / 0.03) ** 2)
    vegetation = 0.04 + 0.05 * green + 0.40 * edge
    road = 0.16 + 0.04 * (wl - 0.4)
    return np.stack([
        road,
        vegetation,
        vegetation * 0.99 + 0.002,
        road * 1.08 + 0.01 * np.sin(6.0 * wl),
        0.10 + 0.25 * (wl - 0.4),
        0.06 * np.exp(-(wl - 0.4) / 0.15) + 0.01,
    ])


def variation_basis(bands: int) -> np.ndarray:
    """Two smooth unit-RMS curves (a tilt and a broad bump) for within-class spectral variation."""
    wl = np.linspace(-1.0, 1.0, bands)
    basis = np.stack([wl, np.exp(-4.0 * wl * wl) - np.exp(-4.0 * wl * wl).mean()])
    return basis / np.sqrt(np.mean(basis * basis, axis=1, keepdims=True))


@dataclass(frozen=True)
class SceneSpec:
    rows: int = 128
    cols: int = 128
    bands: int = 32
    regions: int = 36
    noise: float = 0.005
    brightness: float = 0.10
    variation: float = 0.05
    pixel_size: float = 1.0
    pulse_density: float = 1.5
    ground_return_prob: float = 0.3
    height_noise: float = 0.05
    intensity_noise: float = 0.12

    def validate(self) -> None:
        if self.rows < 8 or self.cols < 8 or self.bands < 1:
            raise DataError("scene must be at least 8x8 pixels with one band")
        if self.regions < len(CLASS_NAMES):
            raise DataError(f"need at least {len(CLASS_NAMES)} regions, one per class")
        if self.rows * self.cols < self.regions * MIN_REGION_PIXELS:
            raise DataError(
                f"{self.rows}x{self.cols} pixels cannot hold {self.regions} regions of "
                f"{MIN_REGION_PIXELS} pixels"
            )
        if min(self.noise, self.brightness, self.variation, self.height_noise, self.intensity_noise) < 0:
            raise DataError("noise levels must be non-negative")
        if self.pixel_size <= 0 or self.pulse_density <= 0:
            raise DataError("pixel size and pulse density must be positive")


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    spec: SceneSpec
    hyper: RasterGrid
    ndsm: RasterGrid
    intensity: RasterGrid
    class_map: ClassMap
    points: PointCloud
    heights: np.ndarray  # true object height above ground per pixel
    terrain: np.ndarray
    signatures: np.ndarray


def terrain_height(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return 100.0 + 0.03 * x + 0.02 * y + 0.5 * np.sin(x / 20.0) * np.cos(y / 25.0)


def _layout(spec: SceneSpec, gen: np.random.Generator) -> np.ndarray:
    """Voronoi cells on pixel centres; classes are dealt so every class gets cells."""
    while True:
        sites = gen.uniform([0, 0], [spec.rows, spec.cols], size=(spec.regions, 2))
        rr, cc = np.mgrid[0:spec.rows, 0:spec.cols] + 0.5
        _, cell = cKDTree(sites).query(np.column_stack([rr.ravel(), cc.ravel()]))
        sizes = np.bincount(cell, minlength=spec.regions)
        if sizes.min() >= MIN_REGION_PIXELS // 2:
            break
    classes = np.resize(np.arange(1, len(CLASS_NAMES) + 1), spec.regions)
    gen.shuffle(classes)
    return classes[cell].reshape(spec.rows, spec.cols)


def _sample_points(spec: SceneSpec, labels: np.ndarray, gen: np.random.Generator) -> PointCloud:
    width = spec.cols * spec.pixel_size
    height = spec.rows * spec.pixel_size
    n = int(round(spec.pulse_density * width * height))
    x = gen.uniform(0, width, n)
    y = gen.uniform(0, height, n)
    # pulses along the frame so both TINs cover every pixel centre
    t = np.arange(0.0, 1.0, 1.0 / max(spec.rows, spec.cols))
    frame_x = np.concatenate([t * width, np.full_like(t, width), width - t * width, np.zeros_like(t)])
    frame_y = np.concatenate([np.zeros_like(t), t * height, np.full_like(t, height), height - t * height])
    x = np.concatenate([x, frame_x])
    y = np.concatenate([y, frame_y])
    on_frame = np.r_[np.zeros(n, bool), np.ones(frame_x.size, bool)]
    col = np.clip((x / spec.pixel_size).astype(int), 0, spec.cols - 1)
    row = np.clip(((height - y) / spec.pixel_size).astype(int), 0, spec.rows - 1)
    cls = labels[row, col]
    h = np.vectorize(CLASS_HEIGHTS.get)(cls).astype(np.float64)
    ground_z = terrain_height(x, y)
    surface_z = ground_z + h + gen.normal(0, spec.height_noise, x.size)
    # return intensities are non-negative, so the noise is clipped at zero
    inten = np.maximum(np.vectorize(CLASS_INTENSITY.get)(cls) + gen.normal(0, spec.intensity_noise, x.size), 0.0)
    on_ground = h == 0
    # extra ground return beneath canopy (and always on the frame)
    second = ~on_ground & ((cls == TREES) & (gen.random(x.size) < spec.ground_return_prob) | on_frame)
    return PointCloud(
        x=np.concatenate([x, x[second]]),
        y=np.concatenate([y, y[second]]),
        z=np.concatenate([surface_z, ground_z[second] + gen.normal(0, spec.height_noise, second.sum())]),
        intensity=np.concatenate([inten, 0.5 * inten[second]]),
        return_number=np.concatenate([np.ones(x.size, np.int64), np.full(second.sum(), 2, np.int64)]),
        is_ground=np.concatenate([on_ground, np.ones(second.sum(), bool)]),
    )


def generate_synthetic_scene(spec: SceneSpec | None = None, seed: int = 0, derive_lidar: bool = True) -> SyntheticScene:
    """Render the scene; with ``derive_lidar`` the nDSM and intensity come from the point cloud.

    Otherwise they are the noise-free true height and class intensity.
    """
    spec = spec or SceneSpec()
    spec.validate()
    gen = make_rng(seed)
    labels = _layout(spec, gen)
    signatures = class_signatures(spec.bands)
    scale = 1.0 + spec.brightness * gen.standard_normal(labels.shape)
    coef = spec.variation * gen.standard_normal((*labels.shape, 2))
    cube = (signatures[labels - 1] * scale[..., None] + coef @ variation_basis(spec.bands)
            + spec.noise * gen.standard_normal((*labels.shape, spec.bands)))
    ox, oy = 0.0, spec.rows * spec.pixel_size
    heights = np.vectorize(CLASS_HEIGHTS.get)(labels).astype(np.float64)
    xc = (np.arange(spec.cols) + 0.5) * spec.pixel_size
    yc = oy - (np.arange(spec.rows) + 0.5) * spec.pixel_size
    terrain = terrain_height(*np.meshgrid(xc, yc))
    points = _sample_points(spec, labels, gen)
    geo = dict(origin_x=ox, origin_y=oy, pixel_size=spec.pixel_size)
    hyper = RasterGrid(np.moveaxis(cube, -1, 0), metadata={"band_names": ",".join(f"b{i + 1}" for i in range(spec.bands))},
                       **geo)
    if derive_lidar:
        surfaces = derive_surfaces(points, spec.rows, spec.cols, (ox, oy), spec.pixel_size)
        ndsm, intensity = surfaces["ndsm"], surfaces["intensity"]
    else:
        truth_int = np.vectorize(CLASS_INTENSITY.get)(labels).astype(np.float64)
        ndsm = RasterGrid(heights, metadata={"band_names": "ndsm"}, **geo)
        intensity = RasterGrid(truth_int, metadata={"band_names": "intensity"}, **geo)
    return SyntheticScene(spec, hyper, ndsm, intensity, ClassMap(labels), points, heights, terrain, signatures)
