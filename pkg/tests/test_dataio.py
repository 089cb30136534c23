import json
import struct

import numpy as np
import pytest
from pytest import approx

from hsnerf.dataio import (
    POSE_FILE,
    Dataset,
    HyperCube,
    fill_background,
    load_dataset,
    read_cube,
    read_mask,
    read_poses,
    select_grayscale_channel,
    threshold_mask,
    write_cube,
    write_dataset,
    write_mask,
    write_poses,
)
from hsnerf.errors import CubeFormatError, DataError, PoseFormatError
from hsnerf.sampling import CameraFrame
from hsnerf.synthetic import look_at


def cube(h=3, w=4, n=5, seed=0):
    rng = np.random.default_rng(seed)
    return HyperCube(np.linspace(400, 800, n), rng.uniform(size=(h, w, n)))


def camera(path="images/a.hsc", pose=None, width=4, height=3):
    return CameraFrame(
        fx=5.0,
        fy=5.0,
        cx=2.0,
        cy=1.5,
        width=width,
        height=height,
        camera_to_world=look_at((3.0, 0.0, 1.0)) if pose is None else pose,
        image_path=path,
    )


def test_cube_file_is_bitwise(tmp_path):
    c = cube()
    write_cube(c, tmp_path / "a.hsc")
    back = read_cube(tmp_path / "a.hsc")
    assert back.wavelengths.tobytes() == c.wavelengths.tobytes()
    assert back.data.tobytes() == c.data.tobytes()


def test_cube_header_layout(tmp_path):
    write_cube(cube(2, 3, 4), tmp_path / "a.hsc")
    raw = (tmp_path / "a.hsc").read_bytes()
    assert raw[:4] == b"HSC1"
    assert struct.unpack("<III", raw[4:16]) == (2, 3, 4)
    assert len(raw) == 16 + 4 * 4 + 4 * 2 * 3 * 4


@pytest.mark.parametrize("keep", [3, 15, -1, -20])
def test_truncated_cube(tmp_path, keep):
    write_cube(cube(), tmp_path / "a.hsc")
    raw = (tmp_path / "a.hsc").read_bytes()
    (tmp_path / "b.hsc").write_bytes(raw[:keep])
    with pytest.raises(CubeFormatError, match="truncated"):
        read_cube(tmp_path / "b.hsc")


def test_cube_format_errors(tmp_path):
    write_cube(cube(), tmp_path / "a.hsc")
    raw = (tmp_path / "a.hsc").read_bytes()
    (tmp_path / "magic.hsc").write_bytes(b"HSC2" + raw[4:])
    (tmp_path / "long.hsc").write_bytes(raw + b"\0\0\0\0")
    with pytest.raises(CubeFormatError, match="magic"):
        read_cube(tmp_path / "magic.hsc")
    with pytest.raises(CubeFormatError, match="trailing"):
        read_cube(tmp_path / "long.hsc")
    with pytest.raises(DataError):
        read_cube(tmp_path / "missing.hsc")


def test_cube_validation():
    with pytest.raises(CubeFormatError):
        HyperCube([500.0, 400.0], np.zeros((1, 1, 2)))
    with pytest.raises(CubeFormatError):
        HyperCube([500.0], np.zeros((1, 1, 2)))
    with pytest.raises(CubeFormatError):
        HyperCube([500.0], np.full((1, 1, 1), np.nan))
    clamped = HyperCube([500.0], np.array([[[1.5], [-0.5]]]))
    assert clamped.data.ravel().tolist() == [1.0, 0.0]


def test_cube_channels():
    c = cube(n=4)
    assert c.wavelengths.tolist() == approx(
        [400, 533.3333, 666.6667, 800], abs=1e-3
    )
    assert c.nearest_channel(610.0) == 2
    assert c.channel_indices([400.0, 800.0]).tolist() == [0, 3]
    with pytest.raises(DataError, match="450"):
        c.channel_indices([450.0])
    sub = c.select([3, 0])
    assert sub.data[..., 0] == approx(c.data[..., 3])


def test_fill_background():
    c = cube(2, 2, 3)
    mask = np.array([[True, False], [False, False]])
    filled = fill_background(c, mask, 0.25)
    assert filled.data[0, 0].tolist() == [0.25] * 3
    assert np.array_equal(filled.data[1], c.data[1])
    with pytest.raises(DataError):
        fill_background(c, np.zeros((3, 3), bool))


def test_grayscale_channel_has_most_variance():
    data = np.zeros((2, 2, 3))
    data[..., 0] = [[0.5, 0.5], [0.5, 0.5]]
    data[..., 1] = [[0.1, 0.9], [0.2, 0.0]]
    data[..., 2] = [[0.3, 0.4], [0.3, 0.4]]
    c = HyperCube([400.0, 500.0, 600.0], data)
    assert select_grayscale_channel(c, np.ones((2, 2), bool)) == 1
    fg = np.array([[False, False], [True, True]])
    assert select_grayscale_channel(c, fg) == 1
    with pytest.raises(DataError):
        select_grayscale_channel(c, np.eye(2, dtype=bool) & False)


def test_threshold_mask():
    data = np.zeros((1, 3, 2))
    data[0, :, 1] = [0.1, 0.8, 0.5]
    c = HyperCube([500.0, 900.0], data)
    assert threshold_mask(c, 880.0, 0.4).tolist() == [[False, True, True]]
    below = threshold_mask(c, 880.0, 0.4, above=False)
    assert below.tolist() == [[True, False, False]]


def test_mask_png(tmp_path):
    mask = np.array([[True, False, True], [False, False, True]])
    write_mask(mask, tmp_path / "m.png")
    assert np.array_equal(read_mask(tmp_path / "m.png"), mask)
    with pytest.raises(DataError):
        write_mask(np.zeros(3, bool), tmp_path / "bad.png")
    with pytest.raises(DataError):
        read_mask(tmp_path / "missing.png")


def test_pose_file_round_trip(tmp_path):
    cams = [camera("a.hsc"), camera("b.hsc", look_at((0.0, 3.0, 1.0)))]
    write_poses(tmp_path / POSE_FILE, cams, {"depth_range": [1.0, 5.0]})
    back, extra = read_poses(tmp_path / POSE_FILE)
    assert extra == {"depth_range": [1.0, 5.0]}
    assert [c.image_path for c in back] == ["a.hsc", "b.hsc"]
    for a, b in zip(cams, back):
        assert b.camera_to_world == approx(a.camera_to_world)
        assert (b.fx, b.cx, b.width, b.height) == (5.0, 2.0, 4, 3)


def test_per_frame_intrinsics_override(tmp_path):
    cams = [camera("a.hsc"), camera("b.hsc", width=6)]
    write_poses(tmp_path / POSE_FILE, cams)
    doc = json.loads((tmp_path / POSE_FILE).read_text())
    assert doc["w"] == 4
    assert doc["frames"][1]["w"] == 6
    assert "w" not in doc["frames"][0]
    back, _ = read_poses(tmp_path / POSE_FILE)
    assert [c.width for c in back] == [4, 6]


@pytest.mark.parametrize(
    "doc, match",
    [
        ("[1, 2]", "object"),
        ("{not json", "JSON"),
        ('{"fl_x": 1}', "fl_y"),
    ],
)
def test_pose_format_errors(tmp_path, doc, match):
    (tmp_path / POSE_FILE).write_text(doc)
    with pytest.raises(PoseFormatError, match=match):
        read_poses(tmp_path / POSE_FILE)


def test_pose_frame_errors(tmp_path):
    shared = {"fl_x": 5, "fl_y": 5, "cx": 2, "cy": 1.5, "w": 4, "h": 3}
    bad_pose = {"file_path": "a.hsc", "transform_matrix": np.eye(3).tolist()}
    (tmp_path / "p1.json").write_text(json.dumps({**shared, "frames": []}))
    (tmp_path / "p2.json").write_text(
        json.dumps({**shared, "frames": [bad_pose]})
    )
    with pytest.raises(PoseFormatError, match="no frames"):
        read_poses(tmp_path / "p1.json")
    with pytest.raises(PoseFormatError, match="frame 0"):
        read_poses(tmp_path / "p2.json")


def test_dataset_directory(tmp_path):
    cams = [camera(), camera(pose=look_at((0.0, 3.0, 1.0)))]
    cubes = [cube(seed=1), cube(seed=2)]
    root = write_dataset(tmp_path / "ds", cams, cubes, 0.5, {"note": "x"})
    assert (root / "images" / "frame_0001.hsc").is_file()
    ds = load_dataset(root)
    assert len(ds) == 2
    assert ds.background == 0.5
    assert ds.meta == {"note": "x"}
    assert ds.n_channels == 5
    assert np.array_equal(ds.cubes[1].data, cubes[1].data)
    assert ds.cameras[0].image_path == "images/frame_0000.hsc"


def test_dataset_masks_fill_background(tmp_path):
    root = write_dataset(tmp_path, [camera()], [cube()], 0.75)
    mask = np.zeros((3, 4), bool)
    mask[0, 1] = True
    write_mask(mask, root / "m.png")
    doc = json.loads((root / POSE_FILE).read_text())
    doc["frames"][0]["mask_path"] = "m.png"
    (root / POSE_FILE).write_text(json.dumps(doc))
    ds = load_dataset(root)
    assert ds.cubes[0].data[0, 1].tolist() == [0.75] * 5
    assert ds.cubes[0].data[1, 1] == approx(cube().data[1, 1])


def test_dataset_spectra_and_subset():
    cams = [camera(), camera(pose=look_at((0.0, 3.0, 1.0)))]
    ds = Dataset(cams, [cube(seed=1), cube(seed=2)])
    # pixels are (u, v) = (column, row)
    out = ds.spectra(1, [[3, 0], [0, 2]], [0, 4])
    assert out[0] == approx(ds.cubes[1].data[0, 3, [0, 4]])
    assert out[1] == approx(ds.cubes[1].data[2, 0, [0, 4]])
    assert len(ds.subset([1])) == 1


def test_dataset_validation(tmp_path):
    with pytest.raises(DataError):
        Dataset([camera()], [])
    with pytest.raises(DataError, match="wavelength grid"):
        Dataset([camera(), camera()], [cube(n=5), cube(n=4)])
    with pytest.raises(DataError, match="4x3"):
        Dataset([camera(width=6)], [cube()])
    with pytest.raises(DataError, match=POSE_FILE):
        load_dataset(tmp_path)
