"""Perspective crops from equirectangular panoramas, and camera sampling.

Equirectangular mapping (world frame as in :mod:`camfit.camgeom`, up = -y)::

    longitude  lam = atan2(x, z)          u = (lam / 2pi + 0.5) * W
    latitude   phi = asin(-y / |d|)       v = (0.5 - phi / pi) * H

Pixel (i, j) has its centre at (j + 0.5, i + 0.5) in continuous image
coordinates, both for crops and for the panorama itself.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Union

import numpy as np

from .camgeom import CameraAngles, ImageFrame, Intrinsics, angles_to_rotation, vfov_to_focal
from .errors import DomainError, ShapeMismatchError
from .fileio import atomic_write_bytes
from .losses import PITCH_RANGE, ROLL_RANGE, VFOV_RANGE

MANIFEST_NAME = "manifest.jsonl"


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; the algorithm is fixed so streams are portable."""
    return np.random.Generator(np.random.PCG64(int(seed)))


@dataclass(frozen=True)
class PanoImage:
    """Full-sphere equirectangular image; ``rgb`` is (height, width, 3) uint8."""

    width: int
    height: int
    rgb: np.ndarray

    def __post_init__(self):
        w, h = int(self.width), int(self.height)
        if w < 2 or h < 1 or w != 2 * h:
            raise DomainError(f"equirectangular panoramas need width == 2*height, got {w}x{h}")
        buf = self.rgb
        if isinstance(buf, (bytes, bytearray, memoryview)):
            buf = np.frombuffer(bytes(buf), dtype=np.uint8)
        buf = np.asarray(buf)
        if buf.size != 3 * w * h:
            raise ShapeMismatchError(f"pixel buffer has {buf.size} bytes, expected {3 * w * h}")
        if buf.dtype != np.uint8:
            raise DomainError("panorama pixels must be uint8")
        buf = buf.reshape(h, w, 3).copy()
        buf.setflags(write=False)
        object.__setattr__(self, "width", w)
        object.__setattr__(self, "height", h)
        object.__setattr__(self, "rgb", buf)

    @classmethod
    def from_array(cls, rgb) -> "PanoImage":
        a = np.asarray(rgb, dtype=np.uint8)
        if a.ndim != 3 or a.shape[2] != 3:
            raise ShapeMismatchError(f"expected (H, W, 3) pixels, got {a.shape}")
        return cls(a.shape[1], a.shape[0], a)

    def to_bytes(self) -> bytes:
        return self.rgb.tobytes()


@dataclass(frozen=True)
class CropSpec:
    angles: CameraAngles
    out: ImageFrame

    def __post_init__(self):
        if self.angles.vfov is None:
            raise DomainError("a crop needs a vertical field of view")

    @property
    def intrinsics(self) -> Intrinsics:
        return Intrinsics.from_vfov(self.angles.vfov, self.out)


@dataclass(frozen=True)
class SampleRecord:
    file: str
    pitch_deg: float
    roll_deg: float
    yaw_deg: float
    vfov_deg: float
    focal_px: float
    seed: int

    @classmethod
    def from_spec(cls, file: str, spec: CropSpec, seed: int) -> "SampleRecord":
        d = spec.angles.degrees()
        return cls(
            file=file,
            pitch_deg=d["pitch_deg"],
            roll_deg=d["roll_deg"],
            yaw_deg=d["yaw_deg"],
            vfov_deg=d["vfov_deg"],
            focal_px=vfov_to_focal(spec.angles.vfov, spec.out.height),
            seed=int(seed),
        )

    def to_json(self) -> dict:
        return {
            "file": self.file,
            "pitch_deg": self.pitch_deg,
            "roll_deg": self.roll_deg,
            "yaw_deg": self.yaw_deg,
            "vfov_deg": self.vfov_deg,
            "focal_px": self.focal_px,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "SampleRecord":
        return cls(
            str(obj["file"]),
            float(obj["pitch_deg"]),
            float(obj["roll_deg"]),
            float(obj["yaw_deg"]),
            float(obj["vfov_deg"]),
            float(obj["focal_px"]),
            int(obj["seed"]),
        )


# --------------------------------------------------------------------------
# cropping


def crop_rays(spec: CropSpec) -> np.ndarray:
    """World-frame viewing directions (H, W, 3) for every crop pixel centre."""
    K = spec.intrinsics
    h, w = spec.out.height, spec.out.width
    u = np.arange(w) + 0.5
    v = np.arange(h) + 0.5
    x = np.broadcast_to((u - K.ox) / K.fx, (h, w))
    y = np.broadcast_to(((v - K.oy) / K.fy)[:, None], (h, w))
    rays = np.stack([x, y, np.ones((h, w))], axis=-1)
    # camera-to-world is Rc^T; for row vectors that is right-multiplication by Rc
    return rays @ angles_to_rotation(spec.angles)


def directions_to_pano_uv(d: np.ndarray, pano_w: int, pano_h: int) -> tuple[np.ndarray, np.ndarray]:
    lon = np.arctan2(d[..., 0], d[..., 2])
    lat = np.arcsin(np.clip(-d[..., 1] / np.linalg.norm(d, axis=-1), -1.0, 1.0))
    return (lon / (2.0 * math.pi) + 0.5) * pano_w, (0.5 - lat / math.pi) * pano_h


def sample_bilinear(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bilinear lookup at continuous coords; wraps horizontally, clamps vertically.

    Returns float values in the image's units.
    """
    H, W = img.shape[:2]
    x = u - 0.5
    y = np.clip(v - 0.5, 0.0, H - 1.0)
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    xa, xb = np.mod(x0, W), np.mod(x0 + 1, W)
    ya, yb = y0, np.minimum(y0 + 1, H - 1)
    f = img.astype(float)
    top = f[ya, xa] * (1.0 - fx) + f[ya, xb] * fx
    bot = f[yb, xa] * (1.0 - fx) + f[yb, xb] * fx
    return top * (1.0 - fy) + bot * fy


def crop_from_pano(pano: PanoImage, spec: CropSpec) -> np.ndarray:
    """Perspective view of the panorama; returns (out.height, out.width, 3) uint8."""
    u, v = directions_to_pano_uv(crop_rays(spec), pano.width, pano.height)
    vals = sample_bilinear(pano.rgb, u, v)
    # np.rint rounds half to even
    return np.rint(np.clip(vals, 0.0, 255.0)).astype(np.uint8)


# --------------------------------------------------------------------------
# camera sampling


DEFAULT_OUT = ImageFrame(256, 192)
SPECSYN_PITCH_DEG = (-30.0, 15.0)
SPECSYN_ROLL_STD_DEG = 2.8
SPECSYN_VFOV_DEG = (70.0, 130.0)


def _uniform_yaw(rng: np.random.Generator) -> float:
    # negating a draw from [-pi, pi) gives (-pi, pi]
    return -rng.uniform(-math.pi, math.pi)


def _check_range(name, lo, hi):
    if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
        raise DomainError(f"invalid {name} range [{lo}, {hi}]")


def sample_pano360_camera(
    rng: np.random.Generator,
    ranges: Optional[Mapping[str, tuple]] = None,
    out: ImageFrame = DEFAULT_OUT,
) -> CropSpec:
    """Uniform pitch/roll/vfov over ``ranges`` (radians) and uniform yaw.

    Missing range keys default to the bin ranges of the calibration heads.
    """
    r = {"pitch": PITCH_RANGE, "roll": ROLL_RANGE, "vfov": VFOV_RANGE}
    if ranges:
        unknown = set(ranges) - set(r)
        if unknown:
            raise DomainError(f"unknown range keys {sorted(unknown)}")
        r.update(ranges)
    for name, (lo, hi) in r.items():
        _check_range(name, lo, hi)
    if not (0.0 < r["vfov"][0] and r["vfov"][1] < math.pi):
        raise DomainError("vfov range must lie inside (0, pi)")
    pitch = rng.uniform(*r["pitch"])
    roll = rng.uniform(*r["roll"])
    vfov = rng.uniform(*r["vfov"])
    yaw = _uniform_yaw(rng)
    return CropSpec(CameraAngles(pitch, roll, yaw, vfov), out)


def sample_specsyn_camera(rng: np.random.Generator) -> CameraAngles:
    """pitch ~ U(-30, 15) deg, roll ~ N(0, 2.8) deg, vfov ~ U(70, 130) deg, yaw uniform."""
    pitch = rng.uniform(*SPECSYN_PITCH_DEG)
    roll = rng.normal(0.0, SPECSYN_ROLL_STD_DEG)
    vfov = rng.uniform(*SPECSYN_VFOV_DEG)
    yaw = _uniform_yaw(rng)
    return CameraAngles(math.radians(pitch), math.radians(roll), yaw, math.radians(vfov))


# --------------------------------------------------------------------------
# procedural panoramas


def _lonlat_grid(height: int):
    w = 2 * height
    lon = ((np.arange(w) + 0.5) / w - 0.5) * 2.0 * math.pi
    lat = (0.5 - (np.arange(height) + 0.5) / height) * math.pi
    return np.meshgrid(lon, lat)


def checker_pano(height: int = 256, squares: int = 16) -> PanoImage:
    lon, lat = _lonlat_grid(height)
    a = np.floor((lon + math.pi) / (2.0 * math.pi) * squares).astype(int)
    b = np.floor((lat + math.pi / 2) / math.pi * squares / 2).astype(int)
    on = (a + b) % 2 == 0
    rgb = np.where(on[..., None], np.array([230, 230, 230]), np.array([25, 25, 25]))
    return PanoImage.from_array(rgb.astype(np.uint8))


def hemisphere_pano(height: int = 256) -> PanoImage:
    """White above the equator, black below it."""
    rgb = np.zeros((height, 2 * height, 3), dtype=np.uint8)
    rgb[: height // 2] = 255
    return PanoImage.from_array(rgb)


def gradient_pano(height: int = 256) -> PanoImage:
    """Red ramps with longitude, green with latitude, blue constant."""
    lon, lat = _lonlat_grid(height)
    r = (lon + math.pi) / (2.0 * math.pi) * 255.0
    g = (lat + math.pi / 2) / math.pi * 255.0
    b = np.full_like(r, 128.0)
    return PanoImage.from_array(np.rint(np.stack([r, g, b], -1)).astype(np.uint8))


PROCEDURAL = {"checker": checker_pano, "hemisphere": hemisphere_pano, "gradient": gradient_pano}


def load_pano(source: str) -> PanoImage:
    """``procedural:<name>`` or a path to a binary PPM."""
    if source.startswith("procedural:"):
        name = source.split(":", 1)[1]
        if name not in PROCEDURAL:
            raise DomainError(f"unknown procedural panorama {name!r}; choose from {sorted(PROCEDURAL)}")
        return PROCEDURAL[name]()
    return PanoImage.from_array(read_ppm(source))


# --------------------------------------------------------------------------
# I/O


def ppm_bytes(raster: np.ndarray) -> bytes:
    a = np.asarray(raster)
    if a.ndim != 3 or a.shape[2] != 3 or a.dtype != np.uint8:
        raise ShapeMismatchError(f"expected (H, W, 3) uint8 raster, got {a.shape} {a.dtype}")
    h, w = a.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + a.tobytes()


def write_ppm(path, raster: np.ndarray):
    atomic_write_bytes(path, ppm_bytes(raster))


def _ppm_tokens(data: bytes, count: int) -> tuple[list, int]:
    tokens, i = [], 0
    while len(tokens) < count:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(data) and not data[j : j + 1].isspace():
            j += 1
        if j == i:
            raise DomainError("truncated PPM header")
        tokens.append(data[i:j])
        i = j
    return tokens, i + 1  # one whitespace byte ends the header


def read_ppm(path) -> np.ndarray:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    tokens, start = _ppm_tokens(data, 4)
    if tokens[0] != b"P6":
        raise DomainError(f"{path}: not a binary PPM (P6)")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise DomainError(f"{path}: only maxval 255 is supported")
    body = data[start : start + 3 * w * h]
    if len(body) != 3 * w * h:
        raise DomainError(f"{path}: pixel data truncated")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).copy()


def write_sample_record(record: SampleRecord, raster: np.ndarray, directory, manifest: Optional[str] = None) -> dict:
    """Write the crop as PPM and append its manifest line; returns the entry.

    ``manifest`` names the manifest file inside ``directory`` (default
    ``manifest.jsonl``).
    """
    d = Path(directory)
    write_ppm(d / record.file, raster)
    entry = record.to_json()
    mpath = d / (manifest or MANIFEST_NAME)
    try:
        with open(mpath, "a", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot append to {mpath}: {exc.strerror or exc}") from exc
    return entry


def read_manifest(path: Union[str, Path]) -> list:
    """Records from a manifest file, or from ``manifest.jsonl`` in a directory."""
    p = Path(path)
    if p.is_dir():
        p = p / MANIFEST_NAME
    with open(p, encoding="utf-8") as fh:
        return [SampleRecord.from_json(json.loads(line)) for line in fh if line.strip()]
