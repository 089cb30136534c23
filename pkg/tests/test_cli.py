import csv
import json

import numpy as np
import pytest

from hsnerf.checkpoint import load_checkpoint, save_checkpoint
from hsnerf.cli import main
from hsnerf.config import Experiment, dump_experiment
from hsnerf.dataio import HyperCube, load_dataset, read_cube, write_cube
from hsnerf.spectools import (
    SpectralResponse,
    read_response_csv,
    write_response_csv,
    write_rgb,
)
from hsnerf.trainer import (
    CHECKPOINT_FILE,
    LOSS_LOG_FILE,
    SplitSpec,
    TrainConfig,
)

from .tiny import TINY_SAMPLER, tiny_field_config


SYNTH = [
    "-q",
    "synth",
    "--cameras",
    "6",
    "--size",
    "12",
    "--wavelengths",
    "4",
    "--march-steps",
    "32",
]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(SYNTH[:2] + [str(root / "data")] + SYNTH[2:]) == 0
    exp = Experiment(
        field=tiny_field_config(),
        train=TrainConfig(total_steps=2, rays_per_step=16, log_every=1),
        split=SplitSpec(n_eval=1, keep_wavelengths=2),
        sampler=TINY_SAMPLER,
    )
    dump_experiment(exp, root / "exp.json")
    code = main(
        [
            "-q",
            "train",
            str(root / "data"),
            str(root / "run"),
            "--config",
            str(root / "exp.json"),
            "--set",
            "train.seed=3",
        ]
    )
    assert code == 0
    return root


def test_synth_writes_dataset(workspace):
    ds = load_dataset(workspace / "data")
    assert len(ds) == 6
    assert ds.n_channels == 4
    assert ds.cubes[0].shape == (12, 12, 4)
    assert "scene_box" in ds.meta


def test_train_outputs(workspace):
    run = workspace / "run"
    assert (run / CHECKPOINT_FILE).is_file()
    config = json.loads((run / "config.json").read_text())
    assert config["train"]["seed"] == 3
    with open(run / LOSS_LOG_FILE, newline="") as f:
        rows = list(csv.reader(f))
    assert len(rows) == 3
    with open(run / "metrics.csv", newline="") as f:
        metrics = list(csv.reader(f))
    # two trained wavelengths and the mean row
    assert len(metrics) == 4


def test_resume_of_finished_run(workspace):
    run = workspace / "run"
    code = main(["-q", "train", str(workspace / "data"), str(run), "--resume"])
    assert code == 0
    with open(run / LOSS_LOG_FILE, newline="") as f:
        assert len(list(csv.reader(f))) == 3


def test_eval_writes_quadrants(workspace):
    out = workspace / "eval"
    code = main(
        [
            "-q",
            "eval",
            str(workspace / "run" / CHECKPOINT_FILE),
            str(workspace / "data"),
            str(out),
        ]
    )
    assert code == 0
    assert (out / "metrics.csv").is_file()
    quadrants = json.loads((out / "quadrants.json").read_text())
    assert quadrants["wavelengths"] == "2"
    assert quadrants["both_unseen_psnr"] != "N/A"


def test_render(workspace):
    out = workspace / "view.hsc"
    code = main(
        [
            "-q",
            "render",
            str(workspace / "run" / CHECKPOINT_FILE),
            str(workspace / "data" / "transforms.json"),
            str(out),
            "--frame",
            "2",
            "--wavelengths",
            "450,500,550,600,650",
            "--rgb",
            str(workspace / "view.png"),
        ]
    )
    assert code == 0
    cube = read_cube(out)
    assert cube.shape == (12, 12, 5)
    assert (workspace / "view.png").is_file()


def test_render_rejects_unsorted_wavelengths(workspace, capsys):
    out = workspace / "unsorted.hsc"
    code = main(
        [
            "-q",
            "render",
            str(workspace / "run" / CHECKPOINT_FILE),
            str(workspace / "data" / "transforms.json"),
            str(out),
            "--wavelengths",
            "600,450",
        ]
    )
    assert code == 2
    assert "--wavelengths" in capsys.readouterr().err
    assert not out.exists()


def test_sensor_fit_and_simulate(tmp_path):
    rng = np.random.default_rng(0)
    lam = np.linspace(450.0, 650.0, 5)
    cube = HyperCube(lam, rng.uniform(size=(8, 8, 5)))
    write_cube(cube, tmp_path / "c.hsc")
    truth = SpectralResponse(lam, rng.uniform(0.0, 0.2, size=(3, 5)))
    write_response_csv(truth, tmp_path / "truth.csv")

    code = main(
        [
            "-q",
            "sensor",
            "simulate",
            str(tmp_path / "c.hsc"),
            str(tmp_path / "rgb.png"),
            "--response",
            str(tmp_path / "truth.csv"),
        ]
    )
    assert code == 0
    code = main(
        [
            "-q",
            "sensor",
            "fit",
            str(tmp_path / "c.hsc"),
            str(tmp_path / "fit.csv"),
            "--rgb",
            str(tmp_path / "rgb.png"),
        ]
    )
    assert code == 0
    fit = read_response_csv(tmp_path / "fit.csv")
    assert fit.wavelengths.tolist() == lam.tolist()
    # 8-bit quantization limits the recovery
    assert np.max(np.abs(fit.matrix - truth.matrix)) < 0.05


def test_exit_codes(tmp_path, workspace):
    assert main(["-q", "train", str(tmp_path / "nope"), str(tmp_path)]) == 3
    bad_set = [
        "-q",
        "train",
        str(workspace / "data"),
        str(tmp_path / "r"),
        "--set",
        "train.total_steps=0",
    ]
    assert main(bad_set) == 2
    cube = str(workspace / "data" / "images" / "frame_0000.hsc")
    assert main(["-q", "sensor", "fit", cube, str(tmp_path / "x.csv")]) == 2
    ablate = ["-q", "ablate", str(workspace / "data"), str(tmp_path / "a")]
    assert main(ablate + ["--rows", "7"]) == 2
    assert main(["-q", "synth", str(tmp_path / "s"), "--cameras", "0"]) == 2
    write_rgb(np.zeros((3, 3, 3)), tmp_path / "small.png")
    mismatch = ["-q", "sensor", "fit", cube, "x.csv", "--rgb"]
    assert main(mismatch + [str(tmp_path / "small.png")]) == 3


def test_missing_split_metadata(tmp_path, workspace):
    ckpt = load_checkpoint(workspace / "run" / CHECKPOINT_FILE)
    save_checkpoint(tmp_path / "bare.hfck", ckpt.field, ckpt.adam, 0)
    args = ["-q", "eval", str(tmp_path / "bare.hfck")]
    assert main(args + [str(workspace / "data"), str(tmp_path / "e")]) == 3


def test_parser_requires_command():
    with pytest.raises(SystemExit):
        main([])
