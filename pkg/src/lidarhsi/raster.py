"""Raster data model, two-file raster I/O, quantization and co-registration.

Rasters are stored as a pair of files sharing a basename:

``<name>.hdr``
    UTF-8 text, one ``key = value`` per line.  Required keys are ``rows``,
    ``cols``, ``bands``, ``nodata``, ``origin_x``, ``origin_y``,
    ``pixel_size``, ``interleave`` (always ``bsq``) and ``dtype`` (always
    ``f32le``).  Any other key is kept verbatim in :attr:`RasterGrid.metadata`.
``<name>.bin``
    ``rows * cols * bands`` little-endian float32 values, band-sequential.

``origin_x``/``origin_y`` locate the upper-left corner of the upper-left pixel;
rows run southwards.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import ndimage

from .errors import DataError, NumericError

DEFAULT_NODATA = -9999.0

#: Default colours for the six thematic classes (bare ground, roof-top, grass,
#: roads, trees, water).
DEFAULT_PALETTE: dict[int, tuple[int, int, int]] = {
    1: (166, 118, 29),
    2: (228, 26, 28),
    3: (127, 201, 127),
    4: (153, 153, 153),
    5: (27, 120, 55),
    6: (55, 126, 184),
}

_REQUIRED_KEYS = ("rows", "cols", "bands", "nodata", "origin_x", "origin_y", "pixel_size")


@dataclass(frozen=True, eq=False)
class RasterGrid:
    """Multi-band float32 raster with a geo-anchor and a nodata sentinel.

    ``data`` has shape ``(bands, rows, cols)``; a 2-D array is promoted to a
    single band.  The stored array is a read-only copy.
    """

    data: np.ndarray
    nodata: float = DEFAULT_NODATA
    origin_x: float = 0.0
    origin_y: float = 0.0
    pixel_size: float = 1.0
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float32, copy=True)
        if data.ndim == 2:
            data = data[np.newaxis]
        if data.ndim != 3 or min(data.shape) < 1:
            raise DataError(f"raster data must be (bands, rows, cols) with every size >= 1, got {data.shape}")
        if not (self.pixel_size > 0 and np.isfinite(self.pixel_size)):
            raise DataError(f"pixel_size must be positive, got {self.pixel_size}")
        nodata = float(self.nodata)
        valid = _valid(data, nodata)
        if not np.all(np.isfinite(data[valid])):
            raise DataError("raster holds non-finite values that are not the nodata sentinel")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "nodata", nodata)
        object.__setattr__(self, "metadata", dict(self.metadata))

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def rows(self) -> int:
        return self.data.shape[1]

    @property
    def cols(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    def valid_mask(self, band: int | None = None) -> np.ndarray:
        """Boolean mask of pixels that are not nodata (in ``band``, or in every band)."""
        if band is not None:
            return _valid(self.data[band], self.nodata)
        return np.all(_valid(self.data, self.nodata), axis=0)

    def band(self, index: int) -> np.ndarray:
        return self.data[index]

    def with_data(self, data: np.ndarray, **changes) -> "RasterGrid":
        """New grid with the same geo-anchor/nodata and the given data."""
        kwargs = dict(
            nodata=self.nodata,
            origin_x=self.origin_x,
            origin_y=self.origin_y,
            pixel_size=self.pixel_size,
            metadata=self.metadata,
        )
        kwargs.update(changes)
        return RasterGrid(data, **kwargs)

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Map coordinates ``(x, y)`` of every pixel centre, each shaped (rows, cols)."""
        cols = self.origin_x + (np.arange(self.cols) + 0.5) * self.pixel_size
        rows = self.origin_y - (np.arange(self.rows) + 0.5) * self.pixel_size
        return np.meshgrid(cols, rows)

    def equals(self, other: "RasterGrid") -> bool:
        """Bit-exact comparison of payload and header fields."""
        return (
            isinstance(other, RasterGrid)
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
            and np.float64(self.nodata).tobytes() == np.float64(other.nodata).tobytes()
            and self.origin_x == other.origin_x
            and self.origin_y == other.origin_y
            and self.pixel_size == other.pixel_size
            and dict(self.metadata) == dict(other.metadata)
        )


def _valid(values: np.ndarray, nodata: float) -> np.ndarray:
    if np.isnan(nodata):
        return ~np.isnan(values)
    return values != np.float32(nodata)


@dataclass(frozen=True, eq=False)
class ClassMap:
    """Reference or predicted labels: 0 is unlabeled, 1..K are classes."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.array(self.labels, copy=True)
        if labels.ndim != 2 or min(labels.shape) < 1:
            raise DataError(f"class map must be a non-empty 2-D array, got shape {labels.shape}")
        if labels.dtype.kind == "f":
            if not np.all(np.isfinite(labels)) or np.any(labels != np.round(labels)):
                raise DataError("class labels must be integral")
        labels = labels.astype(np.int32)
        if labels.min() < 0:
            raise DataError("class labels must be >= 0")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def rows(self) -> int:
        return self.labels.shape[0]

    @property
    def cols(self) -> int:
        return self.labels.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max())


@dataclass(frozen=True)
class GcpPair:
    """A ground control point seen at ``(src_x, src_y)`` in the moving image and
    ``(dst_x, dst_y)`` in the reference image (pixel coordinates: x = column, y = row)."""

    src_x: float
    src_y: float
    dst_x: float
    dst_y: float

    def __post_init__(self):
        if not all(np.isfinite([self.src_x, self.src_y, self.dst_x, self.dst_y])):
            raise DataError("GCP coordinates must be finite")


@dataclass(frozen=True)
class AffineTransform:
    """``(x, y) -> (a x + b y + c, d x + e y + f)``."""

    a: float
    b: float
    c: float
    d: float
    e: float
    f: float
    rmse: float = 0.0

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(1.0, 0.0, 0.0, 0.0, 1.0, 0.0)

    @property
    def determinant(self) -> float:
        return self.a * self.e - self.b * self.d

    def apply(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        return self.a * x + self.b * y + self.c, self.d * x + self.e * y + self.f

    def inverse(self) -> "AffineTransform":
        det = self.determinant
        if det == 0 or not np.isfinite(det):
            raise NumericError("affine transform is not invertible")
        ia, ib = self.e / det, -self.b / det
        id_, ie = -self.d / det, self.a / det
        return AffineTransform(ia, ib, -(ia * self.c + ib * self.f), id_, ie, -(id_ * self.c + ie * self.f))


# -- file I/O -----------------------------------------------------------------


def raster_paths(path: str | os.PathLike) -> tuple[Path, Path]:
    """Header and payload paths for ``path`` (with or without a suffix)."""
    path = Path(path)
    if path.suffix in (".hdr", ".bin"):
        path = path.with_suffix("")
    return Path(f"{path}.hdr"), Path(f"{path}.bin")


def write_raster(grid: RasterGrid, path: str | os.PathLike) -> None:
    header_path, payload_path = raster_paths(path)
    lines = [
        f"rows = {grid.rows}",
        f"cols = {grid.cols}",
        f"bands = {grid.bands}",
        f"nodata = {grid.nodata!r}",
        f"origin_x = {float(grid.origin_x)!r}",
        f"origin_y = {float(grid.origin_y)!r}",
        f"pixel_size = {float(grid.pixel_size)!r}",
        "interleave = bsq",
        "dtype = f32le",
    ]
    for key, value in grid.metadata.items():
        value = str(value)
        if "\n" in value or "=" in key or key in _REQUIRED_KEYS or key in ("interleave", "dtype"):
            raise DataError(f"metadata entry {key!r} cannot be stored in a raster header")
        lines.append(f"{key} = {value}")
    header_path.parent.mkdir(parents=True, exist_ok=True)
    header_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    payload_path.write_bytes(grid.data.astype("<f4").tobytes(order="C"))


def parse_header(text: str) -> dict[str, str]:
    entries: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise DataError(f"malformed header line {lineno}: {line!r}")
        entries[key.strip()] = value.strip()
    return entries


def read_raster(path: str | os.PathLike) -> RasterGrid:
    header_path, payload_path = raster_paths(path)
    try:
        header = parse_header(header_path.read_text(encoding="utf-8"))
        payload = payload_path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read raster {path}: {exc}") from exc
    missing = [key for key in _REQUIRED_KEYS if key not in header]
    if missing:
        raise DataError(f"raster header {header_path} lacks {', '.join(missing)}")
    if header.get("interleave", "bsq") != "bsq" or header.get("dtype", "f32le") != "f32le":
        raise DataError("only interleave = bsq and dtype = f32le are supported")
    try:
        rows, cols, bands = (int(header[k]) for k in ("rows", "cols", "bands"))
        nodata = float(header["nodata"])
        origin_x, origin_y, pixel_size = (float(header[k]) for k in ("origin_x", "origin_y", "pixel_size"))
    except ValueError as exc:
        raise DataError(f"malformed raster header {header_path}: {exc}") from exc
    if min(rows, cols, bands) < 1:
        raise DataError("raster dimensions must be >= 1")
    expected = rows * cols * bands * 4
    if len(payload) != expected:
        raise DataError(
            f"size mismatch: header declares {rows}x{cols}x{bands} ({expected} bytes) "
            f"but {payload_path} holds {len(payload)} bytes"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(bands, rows, cols)
    extra = {k: v for k, v in header.items() if k not in _REQUIRED_KEYS and k not in ("interleave", "dtype")}
    return RasterGrid(data, nodata=nodata, origin_x=origin_x, origin_y=origin_y, pixel_size=pixel_size, metadata=extra)


def write_class_map(labels: ClassMap, path, *, like: RasterGrid | None = None) -> None:
    grid = RasterGrid(labels.labels.astype(np.float32), nodata=-1.0)
    if like is not None:
        grid = grid.with_data(grid.data, nodata=-1.0, origin_x=like.origin_x, origin_y=like.origin_y,
                              pixel_size=like.pixel_size, metadata={})
    write_raster(grid, path)


def read_class_map(path) -> ClassMap:
    grid = read_raster(path)
    if grid.bands != 1:
        raise DataError(f"class map {path} must have exactly one band")
    return ClassMap(grid.data[0])


# -- quantization ---------------------------------------------------------------


def quantize_values(values: np.ndarray, levels: int = 256, valid: np.ndarray | None = None) -> np.ndarray:
    """Min-max scale ``values`` onto ``{0, ..., levels - 1}`` (int64).

    Invalid entries are returned as -1.
    """
    if not 2 <= levels <= 65536:
        raise DataError(f"levels must lie in [2, 65536], got {levels}")
    values = np.asarray(values, dtype=np.float64)
    if valid is None:
        valid = np.isfinite(values)
    out = np.full(values.shape, -1, dtype=np.int64)
    if not valid.any():
        raise DataError("cannot quantize a band without valid pixels")
    v = values[valid]
    lo, hi = v.min(), v.max()
    if hi == lo:
        out[valid] = 0
        return out
    scaled = np.floor((v - lo) / (hi - lo) * (levels - 1) + 0.5)
    out[valid] = np.clip(scaled, 0, levels - 1).astype(np.int64)
    return out


def quantize_band(grid: RasterGrid, band: int = 0, levels: int = 256) -> RasterGrid:
    """Single-band raster of integer levels; nodata pixels stay nodata."""
    if not 0 <= band < grid.bands:
        raise DataError(f"band {band} out of range for a {grid.bands}-band raster")
    valid = grid.valid_mask(band)
    q = quantize_values(grid.data[band], levels, valid)
    out = np.where(valid, q, 0).astype(np.float32)
    out[~valid] = grid.nodata
    return grid.with_data(out, metadata={"levels": str(levels)})


def fill_nodata_nearest(values: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Replace invalid pixels by the value of the nearest valid pixel (Euclidean)."""
    if valid.all():
        return values.copy()
    if not valid.any():
        raise DataError("no valid pixel to fill from")
    _, (ri, ci) = ndimage.distance_transform_edt(~valid, return_indices=True)
    return values[ri, ci]


# -- co-registration ------------------------------------------------------------


def fit_affine_gcps(pairs: Sequence[GcpPair]) -> AffineTransform:
    """Least-squares first-order polynomial (affine) fit from src to dst coordinates."""
    if len(pairs) < 3:
        raise DataError(f"need at least 3 GCP pairs, got {len(pairs)}")
    src = np.array([(p.src_x, p.src_y) for p in pairs], dtype=np.float64)
    dst = np.array([(p.dst_x, p.dst_y) for p in pairs], dtype=np.float64)
    design = np.column_stack([src, np.ones(len(pairs))])
    if np.linalg.matrix_rank(design) < 3:
        raise NumericError("GCP source points are collinear; affine fit is rank-deficient")
    coef, *_ = np.linalg.lstsq(design, dst, rcond=None)
    residual = design @ coef - dst
    rmse = float(np.sqrt(np.mean(np.sum(residual**2, axis=1))))
    (a, d), (b, e), (c, f) = coef
    return AffineTransform(float(a), float(b), float(c), float(d), float(e), float(f), rmse)


def resample_nearest(
    grid: RasterGrid,
    transform: AffineTransform,
    out_rows: int,
    out_cols: int,
    *,
    origin_x: float | None = None,
    origin_y: float | None = None,
    pixel_size: float | None = None,
) -> RasterGrid:
    """Warp ``grid`` onto an ``out_rows x out_cols`` lattice.

    ``transform`` maps source pixel coordinates to output pixel coordinates; each
    output pixel takes the nearest source pixel under the inverse map.  Pixels
    that fall outside the source become nodata.  The output geo-anchor defaults
    to the source's.
    """
    inverse = transform.inverse()
    rr, cc = np.mgrid[0:out_rows, 0:out_cols]
    sx, sy = inverse.apply(cc, rr)
    scol = np.floor(sx + 0.5).astype(np.int64)
    srow = np.floor(sy + 0.5).astype(np.int64)
    inside = (scol >= 0) & (scol < grid.cols) & (srow >= 0) & (srow < grid.rows)
    out = np.full((grid.bands, out_rows, out_cols), grid.nodata, dtype=np.float32)
    out[:, inside] = grid.data[:, srow[inside], scol[inside]]
    return RasterGrid(
        out,
        nodata=grid.nodata,
        origin_x=grid.origin_x if origin_x is None else origin_x,
        origin_y=grid.origin_y if origin_y is None else origin_y,
        pixel_size=grid.pixel_size if pixel_size is None else pixel_size,
        metadata=grid.metadata,
    )


# -- rendering ------------------------------------------------------------------


def class_map_rgb(labels: ClassMap | np.ndarray, palette: Mapping[int, Iterable[int]] | None = None) -> np.ndarray:
    labels = labels.labels if isinstance(labels, ClassMap) else np.asarray(labels)
    palette = DEFAULT_PALETTE if palette is None else palette
    lut_size = max([int(labels.max()), *palette.keys(), 0]) + 1
    lut = np.zeros((lut_size, 3), dtype=np.uint8)
    known = np.zeros(lut_size, dtype=bool)
    known[0] = True
    for label, rgb in palette.items():
        lut[int(label)] = np.asarray(tuple(rgb), dtype=np.uint8)
        known[int(label)] = True
    missing = np.unique(labels[~known[labels]])
    if missing.size:
        raise DataError(f"labels without palette entry: {missing.tolist()}")
    return lut[labels]


def render_class_map(labels: ClassMap | np.ndarray, path, palette: Mapping[int, Iterable[int]] | None = None) -> None:
    """Write a binary PPM (P6); label 0 is black."""
    rgb = class_map_rgb(labels, palette)
    rows, cols = rgb.shape[:2]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM written by :func:`render_class_map`; returns (rows, cols, 3) uint8."""
    raw = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos].decode("ascii"))
    if fields[0] != "P6" or fields[3] != "255":
        raise DataError(f"{path} is not an 8-bit binary PPM")
    cols, rows = int(fields[1]), int(fields[2])
    pixels = np.frombuffer(raw[pos + 1:], dtype=np.uint8)
    if pixels.size != rows * cols * 3:
        raise DataError(f"{path}: pixel payload does not match {cols}x{rows}")
    return pixels.reshape(rows, cols, 3)
