"""LiDAR point ingestion and TIN rasterization of DEM, DSM, nDSM and intensity.

Points are read from a text CSV with columns
``x,y,z,intensity,return_number,is_ground``.  A header line is optional and
``#`` lines are comments.  ``is_ground`` accepts ``0/1/true/false``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .delaunay import Tin, build_tin
from .errors import DataError
from .raster import DEFAULT_NODATA, RasterGrid

CSV_COLUMNS = ("x", "y", "z", "intensity", "return_number", "is_ground")

# Relative slack on barycentric coordinates so pixel centres lying on a shared
# edge are not lost to round-off; the lowest-index triangle claims them.
BARYCENTRIC_TOL = 1e-12


@dataclass(frozen=True)
class LidarPoint:
    x: float
    y: float
    z: float
    intensity: float = 0.0
    return_number: int = 1
    is_ground: bool = False

    def __post_init__(self):
        if not all(np.isfinite([self.x, self.y, self.z, self.intensity])):
            raise DataError("LiDAR point fields must be finite")
        if self.return_number < 1:
            raise DataError("return_number must be >= 1")
        if self.intensity < 0:
            raise DataError("intensity must be >= 0")


@dataclass(frozen=True, eq=False)
class PointCloud(Sequence):
    """Column-oriented LiDAR returns; indexing yields :class:`LidarPoint`."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    intensity: np.ndarray
    return_number: np.ndarray
    is_ground: np.ndarray

    def __post_init__(self):
        n = len(self.x)
        cols = {
            "x": np.asarray(self.x, dtype=np.float64),
            "y": np.asarray(self.y, dtype=np.float64),
            "z": np.asarray(self.z, dtype=np.float64),
            "intensity": np.asarray(self.intensity, dtype=np.float64),
            "return_number": np.asarray(self.return_number, dtype=np.int64),
            "is_ground": np.asarray(self.is_ground, dtype=bool),
        }
        for name, col in cols.items():
            if col.shape != (n,):
                raise DataError(f"point column {name} has shape {col.shape}, expected ({n},)")
            object.__setattr__(self, name, col)
        if not all(np.all(np.isfinite(cols[k])) for k in ("x", "y", "z", "intensity")):
            raise DataError("LiDAR point fields must be finite")
        if n and cols["return_number"].min() < 1:
            raise DataError("return_number must be >= 1")
        if n and cols["intensity"].min() < 0:
            raise DataError("intensity must be >= 0")

    @classmethod
    def from_points(cls, points: Sequence[LidarPoint]) -> "PointCloud":
        return cls(
            [p.x for p in points], [p.y for p in points], [p.z for p in points],
            [p.intensity for p in points], [p.return_number for p in points], [p.is_ground for p in points],
        )

    def __len__(self) -> int:
        return len(self.x)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return PointCloud(self.x[i], self.y[i], self.z[i], self.intensity[i], self.return_number[i], self.is_ground[i])
        return LidarPoint(float(self.x[i]), float(self.y[i]), float(self.z[i]), float(self.intensity[i]),
                          int(self.return_number[i]), bool(self.is_ground[i]))

    def __iter__(self) -> Iterator[LidarPoint]:
        for i in range(len(self)):
            yield self[i]

    def subset(self, mask: np.ndarray) -> "PointCloud":
        return PointCloud(self.x[mask], self.y[mask], self.z[mask], self.intensity[mask],
                          self.return_number[mask], self.is_ground[mask])


_TRUE = {"1", "true", "t", "yes"}
_FALSE = {"0", "false", "f", "no"}


def load_points(path: str | os.PathLike) -> PointCloud:
    """Parse a point CSV; malformed records raise :class:`DataError` naming the line."""
    rows = []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read point file {path}: {exc}") from exc
    header_allowed = True
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = [f.strip() for f in stripped.split(",")]
        if header_allowed and fields[0].lower() == "x":
            header_allowed = False
            continue
        header_allowed = False
        if len(fields) != 6:
            raise DataError(f"{path}:{lineno}: expected 6 fields, got {len(fields)}")
        try:
            x, y, z, intensity = (float(f) for f in fields[:4])
            ret = int(fields[4])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        flag = fields[5].lower()
        if flag not in _TRUE and flag not in _FALSE:
            raise DataError(f"{path}:{lineno}: is_ground must be 0/1/true/false, got {fields[5]!r}")
        if not np.all(np.isfinite([x, y, z, intensity])):
            raise DataError(f"{path}:{lineno}: non-finite field")
        if ret < 1 or intensity < 0:
            raise DataError(f"{path}:{lineno}: return_number must be >= 1 and intensity >= 0")
        rows.append((x, y, z, intensity, ret, flag in _TRUE))
    if not rows:
        return PointCloud(*(np.empty(0) for _ in range(6)))
    cols = list(zip(*rows))
    return PointCloud(*cols)


def write_points(cloud: PointCloud, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for i in range(len(cloud)):
            fh.write(
                f"{float(cloud.x[i])!r},{float(cloud.y[i])!r},{float(cloud.z[i])!r},{float(cloud.intensity[i])!r},"
                f"{cloud.return_number[i]},{int(cloud.is_ground[i])}\n"
            )


def locate_pixels(tin: Tin, rows: int, cols: int, origin: tuple[float, float], pixel_size: float):
    """Triangle index (-1 outside the hull) and barycentric weights for every pixel centre.

    Triangles are scanned in index order and a pixel keeps the first triangle
    that contains it, so centres on shared edges go to the lowest index.
    """
    ox, oy = origin
    owner = np.full((rows, cols), -1, dtype=np.int64)
    weights = np.zeros((rows, cols, 3), dtype=np.float64)
    xy = tin.xy
    for t, (ia, ib, ic) in enumerate(tin.triangles):
        (ax, ay), (bx, by), (cx, cy) = xy[ia], xy[ib], xy[ic]
        area2 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        c0 = max(int(np.ceil((min(ax, bx, cx) - ox) / pixel_size - 0.5)), 0)
        c1 = min(int(np.floor((max(ax, bx, cx) - ox) / pixel_size - 0.5)), cols - 1)
        r0 = max(int(np.ceil((oy - max(ay, by, cy)) / pixel_size - 0.5)), 0)
        r1 = min(int(np.floor((oy - min(ay, by, cy)) / pixel_size - 0.5)), rows - 1)
        if c0 > c1 or r0 > r1:
            continue
        px = ox + (np.arange(c0, c1 + 1) + 0.5) * pixel_size
        py = oy - (np.arange(r0, r1 + 1) + 0.5) * pixel_size
        px, py = np.meshgrid(px, py)
        wa = ((bx - px) * (cy - py) - (by - py) * (cx - px)) / area2
        wb = ((cx - px) * (ay - py) - (cy - py) * (ax - px)) / area2
        wc = ((ax - px) * (by - py) - (ay - py) * (bx - px)) / area2
        inside = (wa >= -BARYCENTRIC_TOL) & (wb >= -BARYCENTRIC_TOL) & (wc >= -BARYCENTRIC_TOL)
        window = owner[r0:r1 + 1, c0:c1 + 1]
        take = inside & (window < 0)
        if not take.any():
            continue
        window[take] = t
        wwin = weights[r0:r1 + 1, c0:c1 + 1]
        wwin[take] = np.stack([wa[take], wb[take], wc[take]], axis=1)
    return owner, weights


def _interpolate(tin: Tin, owner: np.ndarray, weights: np.ndarray, values: np.ndarray, nodata: float) -> np.ndarray:
    out = np.full(owner.shape, nodata, dtype=np.float64)
    inside = owner >= 0
    corners = tin.triangles[owner[inside]]
    out[inside] = np.sum(weights[inside] * values[corners], axis=1)
    return out


def rasterize_tin(
    tin: Tin,
    rows: int,
    cols: int,
    origin: tuple[float, float],
    pixel_size: float,
    nodata: float = DEFAULT_NODATA,
) -> RasterGrid:
    """Linear (barycentric) interpolation of TIN vertex values at pixel centres.

    Pixels whose centre falls outside the convex hull get ``nodata``.
    """
    owner, weights = locate_pixels(tin, rows, cols, origin, pixel_size)
    out = _interpolate(tin, owner, weights, tin.values, nodata)
    return RasterGrid(out, nodata=nodata, origin_x=origin[0], origin_y=origin[1], pixel_size=pixel_size)


def derive_surfaces(
    points: PointCloud | Sequence[LidarPoint],
    rows: int,
    cols: int,
    origin: tuple[float, float],
    pixel_size: float,
    nodata: float = DEFAULT_NODATA,
) -> dict[str, RasterGrid]:
    """DEM from ground points, DSM and intensity from first returns, nDSM = max(DSM - DEM, 0)."""
    cloud = points if isinstance(points, PointCloud) else PointCloud.from_points(points)
    ground = cloud.subset(cloud.is_ground)
    first = cloud.subset(cloud.return_number == 1)
    if len(ground) < 3:
        raise DataError(f"need at least 3 ground points for a DEM, got {len(ground)}")
    if len(first) < 3:
        raise DataError(f"need at least 3 first returns for a DSM, got {len(first)}")

    ground_tin = build_tin(zip(ground.x, ground.y, ground.z))
    owner, weights = locate_pixels(ground_tin, rows, cols, origin, pixel_size)
    dem = _interpolate(ground_tin, owner, weights, ground_tin.values, np.nan)

    # Duplicated planimetric positions keep the last record for both z and intensity.
    first_idx = np.arange(len(first), dtype=np.float64)
    first_tin = build_tin(zip(first.x, first.y, first_idx))
    order = first_tin.values.astype(np.int64)
    owner, weights = locate_pixels(first_tin, rows, cols, origin, pixel_size)
    dsm = _interpolate(first_tin, owner, weights, first.z[order], np.nan)
    intensity = _interpolate(first_tin, owner, weights, first.intensity[order], np.nan)

    both = ~np.isnan(dem) & ~np.isnan(dsm)
    ndsm = np.full((rows, cols), np.nan)
    ndsm[both] = np.maximum(dsm[both] - dem[both], 0.0)

    def grid(values, name):
        values = np.where(np.isnan(values), nodata, values)
        return RasterGrid(values, nodata=nodata, origin_x=origin[0], origin_y=origin[1],
                          pixel_size=pixel_size, metadata={"band_names": name})

    return {
        "dem": grid(dem, "dem"),
        "dsm": grid(dsm, "dsm"),
        "ndsm": grid(ndsm, "ndsm"),
        "intensity": grid(intensity, "intensity"),
    }
