"""
Hyperspectral cubes, pose files, background masks and datasets on disk.

HSC1 cube layout, all little-endian::

    b"HSC1" | u32 H | u32 W | u32 N | N x f32 wavelengths (nm)
            | H*W*N x f32 intensities, row-major (row, column, channel)

A dataset directory holds a ``transforms.json`` pose file whose frames point
at HSC1 cubes (and optionally at single-channel PNG background masks).
"""

from __future__ import annotations


__all__ = [
    "HyperCube",
    "Dataset",
    "POSE_FILE",
    "read_cube",
    "write_cube",
    "fill_background",
    "select_grayscale_channel",
    "threshold_mask",
    "read_mask",
    "write_mask",
    "read_poses",
    "write_poses",
    "load_dataset",
    "write_dataset",
]

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt
from PIL import Image

from hsnerf.errors import CubeFormatError, DataError, PoseFormatError
from hsnerf.numbers import Array, BoolArray, IntArray
from hsnerf.sampling import CameraFrame


logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

HSC1_MAGIC = b"HSC1"
POSE_FILE = "transforms.json"

_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class HyperCube:
    """H x W x N intensities in [0, 1] over ascending wavelengths (nm).

    Intensities are stored as float32, the precision of the HSC1 format.
    """

    wavelengths: Array
    data: Array

    def __post_init__(self) -> None:
        lam = np.asarray(self.wavelengths, dtype=np.float32).reshape(-1)
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise CubeFormatError(
                f"cube data must be H x W x N, got {data.shape}"
            )
        if data.shape[2] != lam.size:
            raise CubeFormatError(
                f"{lam.size} wavelengths for {data.shape[2]} channels"
            )
        if lam.size == 0 or np.any(np.diff(lam) <= 0):
            raise CubeFormatError("wavelengths must be strictly ascending")
        if not np.all(np.isfinite(data)):
            raise CubeFormatError("cube intensities must be finite")
        object.__setattr__(self, "wavelengths", lam)
        object.__setattr__(self, "data", np.clip(data, 0.0, 1.0))

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def n_channels(self) -> int:
        return int(self.data.shape[2])

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.height, self.width, self.n_channels

    def nearest_channel(self, wavelength_nm: float) -> int:
        """Channel whose wavelength is closest; ties go to the lower index."""
        return int(np.argmin(np.abs(self.wavelengths - wavelength_nm)))

    def channel_indices(
        self, wavelengths: npt.ArrayLike, tol: float = 1e-3
    ) -> IntArray:
        """Exact channel indices of `wavelengths`; DataError if one is
        absent."""
        lam = np.asarray(wavelengths, dtype=np.float64).reshape(-1)
        idx = np.abs(lam[:, None] - self.wavelengths[None, :]).argmin(axis=1)
        missing = np.abs(self.wavelengths[idx] - lam) > tol
        if np.any(missing):
            raise DataError(f"no cube channel at {lam[missing].tolist()} nm")
        return idx

    def select(self, channels: npt.ArrayLike) -> HyperCube:
        idx = np.asarray(channels, dtype=np.intp).reshape(-1)
        return HyperCube(self.wavelengths[idx], self.data[..., idx])


def write_cube(cube: HyperCube, path: PathLike) -> None:
    h, w, n = cube.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(HSC1_MAGIC, h, w, n))
        f.write(cube.wavelengths.astype("<f4").tobytes())
        f.write(np.ascontiguousarray(cube.data, dtype="<f4").tobytes())


def read_cube(path: PathLike) -> HyperCube:
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read cube {path}: {e}") from e
    if len(raw) < _HEADER.size:
        raise CubeFormatError(f"{path}: truncated HSC1 header")
    magic, h, w, n = _HEADER.unpack_from(raw)
    if magic != HSC1_MAGIC:
        raise CubeFormatError(f"{path}: bad magic {magic!r}, expected HSC1")
    expected = _HEADER.size + 4 * n + 4 * h * w * n
    if len(raw) < expected:
        raise CubeFormatError(
            f"{path}: truncated payload ({len(raw)} of {expected} bytes)"
        )
    if len(raw) > expected:
        raise CubeFormatError(f"{path}: {len(raw) - expected} trailing bytes")
    lam = np.frombuffer(raw, dtype="<f4", count=n, offset=_HEADER.size)
    data = np.frombuffer(
        raw, dtype="<f4", count=h * w * n, offset=_HEADER.size + 4 * n
    )
    return HyperCube(lam.astype(np.float32), data.reshape(h, w, n))


def fill_background(
    cube: HyperCube, mask: npt.ArrayLike, fill_value: float = 1.0
) -> HyperCube:
    """Set every channel of the background pixels (``mask`` true) to
    `fill_value`."""
    m = np.asarray(mask, dtype=bool)
    if m.shape != (cube.height, cube.width):
        raise DataError(
            f"mask of shape {m.shape} for a {cube.height}x{cube.width} cube"
        )
    data = cube.data.copy()
    data[m] = fill_value
    return HyperCube(cube.wavelengths, data)


def select_grayscale_channel(cube: HyperCube, foreground: npt.ArrayLike) -> int:
    """The channel with the greatest foreground intensity variance.

    This is the single plane handed to pose estimation.
    """
    m = np.asarray(foreground, dtype=bool)
    if m.shape != (cube.height, cube.width):
        raise DataError(
            f"mask of shape {m.shape} for a {cube.height}x{cube.width} cube"
        )
    if m.sum() < 2:
        raise DataError("at least two foreground pixels are needed")
    values = cube.data[m].astype(np.float64)
    # argmax returns the first maximum
    return int(np.argmax(values.var(axis=0)))


def threshold_mask(
    cube: HyperCube,
    wavelength_nm: float,
    threshold: float,
    above: bool = True,
) -> BoolArray:
    """Background mask from a single channel, e.g. a near-infrared band in
    which the backdrop reflects much more than the object."""
    plane = cube.data[..., cube.nearest_channel(wavelength_nm)]
    return plane > threshold if above else plane < threshold


def write_mask(mask: npt.ArrayLike, path: PathLike) -> None:
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 2:
        raise DataError(f"masks are 2D, got shape {m.shape}")
    Image.fromarray(np.where(m, 255, 0).astype(np.uint8), mode="L").save(path)


def read_mask(path: PathLike) -> BoolArray:
    """8-bit single-channel raster; values above 127 are background."""
    try:
        with Image.open(path) as image:
            raster = np.asarray(image.convert("L"))
    except OSError as e:
        raise DataError(f"cannot read mask {path}: {e}") from e
    return raster > 127


# poses


def _require(mapping: Mapping[str, Any], key: str, where: str) -> Any:
    try:
        return mapping[key]
    except KeyError:
        raise PoseFormatError(f"{where}: missing key {key!r}") from None


def read_poses(path: PathLike) -> Tuple[List[CameraFrame], Dict[str, Any]]:
    """Cameras and the remaining top-level entries of a pose file."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as e:
        raise DataError(f"cannot read pose file {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise PoseFormatError(f"{path}: invalid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise PoseFormatError(f"{path}: top level must be an object")

    where = str(path)
    intrinsics = {
        key: _require(doc, key, where)
        for key in ("fl_x", "fl_y", "cx", "cy", "w", "h")
    }
    frames = _require(doc, "frames", where)
    cameras = []
    for i, frame in enumerate(frames):
        matrix = np.asarray(
            _require(frame, "transform_matrix", f"{where} frame {i}"),
            dtype=np.float64,
        )
        try:
            camera = CameraFrame(
                fx=float(frame.get("fl_x", intrinsics["fl_x"])),
                fy=float(frame.get("fl_y", intrinsics["fl_y"])),
                cx=float(frame.get("cx", intrinsics["cx"])),
                cy=float(frame.get("cy", intrinsics["cy"])),
                width=int(frame.get("w", intrinsics["w"])),
                height=int(frame.get("h", intrinsics["h"])),
                camera_to_world=matrix,
                image_path=_require(frame, "file_path", f"{where} frame {i}"),
            )
        except DataError as e:
            raise PoseFormatError(f"{where} frame {i}: {e}") from e
        cameras.append(camera)
    if not cameras:
        raise PoseFormatError(f"{where}: no frames")

    extra = {
        k: v
        for k, v in doc.items()
        if k not in intrinsics and k != "frames"
    }
    return cameras, extra


def write_poses(
    path: PathLike,
    cameras: Sequence[CameraFrame],
    extra: Optional[Mapping[str, Any]] = None,
    frame_extra: Optional[Sequence[Mapping[str, Any]]] = None,
) -> None:
    """Shared intrinsics come from the first camera; differing ones are
    written per frame."""
    if not cameras:
        raise DataError("cannot write a pose file without cameras")
    ref = cameras[0]
    shared = {
        "fl_x": ref.fx,
        "fl_y": ref.fy,
        "cx": ref.cx,
        "cy": ref.cy,
        "w": ref.width,
        "h": ref.height,
    }
    frames = []
    for i, camera in enumerate(cameras):
        frame: Dict[str, Any] = {
            "file_path": camera.image_path,
            "transform_matrix": camera.camera_to_world.tolist(),
        }
        own = {
            "fl_x": camera.fx,
            "fl_y": camera.fy,
            "cx": camera.cx,
            "cy": camera.cy,
            "w": camera.width,
            "h": camera.height,
        }
        frame.update({k: v for k, v in own.items() if v != shared[k]})
        if frame_extra is not None:
            frame.update(frame_extra[i])
        frames.append(frame)
    doc = {**shared, **dict(extra or {}), "frames": frames}
    Path(path).write_text(json.dumps(doc, indent=2))


# datasets


@dataclass
class Dataset:
    """Posed hyperspectral images sharing one wavelength grid."""

    cameras: List[CameraFrame]
    cubes: List[HyperCube]
    background: float = 0.0
    root: Optional[Path] = None
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.cameras) != len(self.cubes):
            raise DataError(
                f"{len(self.cameras)} cameras for {len(self.cubes)} images"
            )
        if not self.cubes:
            raise DataError("empty dataset")
        ref = self.cubes[0].wavelengths
        for camera, cube in zip(self.cameras, self.cubes):
            if not np.array_equal(cube.wavelengths, ref):
                raise DataError(
                    f"{camera.image_path}: wavelength grid differs from the "
                    "first image"
                )
            if (cube.height, cube.width) != (camera.height, camera.width):
                raise DataError(
                    f"{camera.image_path}: image is "
                    f"{cube.width}x{cube.height}, "
                    f"camera is {camera.width}x{camera.height}"
                )

    def __len__(self) -> int:
        return len(self.cubes)

    @property
    def wavelengths(self) -> Array:
        return self.cubes[0].wavelengths.astype(np.float64)

    @property
    def n_channels(self) -> int:
        return self.cubes[0].n_channels

    def spectra(
        self, image: int, pixels: npt.ArrayLike, channels: npt.ArrayLike
    ) -> Array:
        """Target spectra (P, L) of (u, v) pixels of one image."""
        pix = np.asarray(pixels, dtype=np.intp).reshape(-1, 2)
        idx = np.asarray(channels, dtype=np.intp).reshape(-1)
        plane = self.cubes[image].data
        return plane[pix[:, 1], pix[:, 0]][:, idx].astype(np.float64)

    def subset(self, indices: Sequence[int]) -> Dataset:
        return Dataset(
            cameras=[self.cameras[i] for i in indices],
            cubes=[self.cubes[i] for i in indices],
            background=self.background,
            root=self.root,
            meta=dict(self.meta),
        )


def load_dataset(directory: PathLike) -> Dataset:
    """Load ``transforms.json`` and every cube it references.

    Frames may name a ``mask_path``; masked pixels are filled with the
    dataset's ``background`` value (default 0.0) in every channel.
    """
    root = Path(directory)
    pose_path = root / POSE_FILE
    if not pose_path.is_file():
        raise DataError(f"{root}: no {POSE_FILE}")
    cameras, extra = read_poses(pose_path)
    background = float(extra.pop("background", 0.0))
    frames = json.loads(pose_path.read_text())["frames"]

    cubes = []
    for camera, frame in zip(cameras, frames):
        cube = read_cube(root / str(camera.image_path))
        mask_path = frame.get("mask_path")
        if mask_path is not None:
            mask = read_mask(root / mask_path)
            cube = fill_background(cube, mask, background)
        cubes.append(cube)
    logger.info(
        "loaded %d images of %d channels from %s",
        len(cubes),
        cubes[0].n_channels if cubes else 0,
        root,
    )
    return Dataset(cameras, cubes, background, root, extra)


def write_dataset(
    directory: PathLike,
    cameras: Sequence[CameraFrame],
    cubes: Sequence[HyperCube],
    background: float = 0.0,
    extra: Optional[Mapping[str, Any]] = None,
) -> Path:
    """Write cubes as ``images/frame_XXXX.hsc`` plus the pose file."""
    root = Path(directory)
    (root / "images").mkdir(parents=True, exist_ok=True)
    named = []
    for i, (camera, cube) in enumerate(zip(cameras, cubes)):
        rel = f"images/frame_{i:04d}.hsc"
        write_cube(cube, root / rel)
        named.append(
            CameraFrame(
                camera.fx,
                camera.fy,
                camera.cx,
                camera.cy,
                camera.width,
                camera.height,
                camera.camera_to_world,
                rel,
            )
        )
    write_poses(
        root / POSE_FILE, named, {"background": background, **dict(extra or {})}
    )
    return root
