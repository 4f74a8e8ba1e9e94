"""CLI behavior: exit codes, file outputs, helper parsing."""

import json

import numpy as np
import pytest

from promptsplat import cli
from promptsplat.cli import UsageError, _parse_resolution, _parse_vec3


def test_parse_resolution():
    assert _parse_resolution("128") == (128, 128)
    assert _parse_resolution("64x96") == (64, 96)
    assert _parse_resolution("64X96") == (64, 96)
    with pytest.raises(UsageError):
        _parse_resolution("tiny")
    with pytest.raises(UsageError):
        _parse_resolution("64x")


def test_parse_vec3():
    assert np.array_equal(_parse_vec3("1,2,-3.5", "--eye"), [1.0, 2.0, -3.5])
    with pytest.raises(UsageError, match="--eye"):
        _parse_vec3("1,2", "--eye")
    with pytest.raises(UsageError):
        _parse_vec3("a,b,c", "--eye")


def test_no_command_is_usage_error(capsys):
    assert cli.main([]) == 1
    assert cli.main(["not-a-command"]) == 1
    err = capsys.readouterr().err
    assert "error" in err or "usage" in err


def test_missing_required_flag_is_usage_error():
    assert cli.main(["train"]) == 1
    assert cli.main(["render"]) == 1
    assert cli.main(["gen-synthetic"]) == 1


def test_runtime_failure_is_exit_2(tmp_path, capsys):
    rc = cli.main(["train", "--manifest", str(tmp_path / "nope.json"), "--out", str(tmp_path)])
    assert rc == 2
    assert "error" in capsys.readouterr().err


def test_gen_synthetic_bad_resolution_is_usage_error(tmp_path):
    rc = cli.main(["gen-synthetic", "--out", str(tmp_path / "x"), "--resolution", "banana"])
    assert rc == 1


def test_render_writes_image(tiny_run, tmp_path, capsys):
    out = tmp_path / "frame.png"
    rc = cli.main(
        ["render", "--checkpoint", str(tiny_run["checkpoint"]), "--time", "0.5",
         "--out", str(out)]
    )
    assert rc == 0
    assert out.exists()
    from PIL import Image

    img = np.asarray(Image.open(out))
    assert img.shape == (40, 40, 3)
    assert "wrote" in capsys.readouterr().out


@pytest.mark.parametrize("mode", ["depth", "accum"])
def test_render_modes(tiny_run, tmp_path, mode):
    out = tmp_path / f"{mode}.png"
    rc = cli.main(
        ["render", "--checkpoint", str(tiny_run["checkpoint"]), "--time", "0.0",
         "--out", str(out), "--mode", mode]
    )
    assert rc == 0 and out.exists()


def test_render_camera_override_changes_pixels(tiny_run, tmp_path):
    a = tmp_path / "a.png"
    b = tmp_path / "b.png"
    base = ["render", "--checkpoint", str(tiny_run["checkpoint"]), "--time", "0.0"]
    assert cli.main(base + ["--out", str(a)]) == 0
    assert cli.main(base + ["--out", str(b), "--eye", "0.8,0.4,-2.5", "--target", "0,0,3"]) == 0
    assert a.read_bytes() != b.read_bytes()


def test_render_eye_without_target_is_usage_error(tiny_run, tmp_path):
    rc = cli.main(
        ["render", "--checkpoint", str(tiny_run["checkpoint"]), "--out",
         str(tmp_path / "x.png"), "--eye", "0,0,-2"]
    )
    assert rc == 1


def test_query_writes_mask_and_heatmap(tiny_run, tmp_path, capsys):
    out = tmp_path / "mask.png"
    rc = cli.main(
        ["query", "--checkpoint", str(tiny_run["checkpoint"]),
         "--manifest", str(tiny_run["manifest"]),
         "--prompt", tiny_run["prompts"][0], "--time", "0.5", "--out", str(out)]
    )
    assert rc == 0
    assert out.exists()
    assert (tmp_path / "mask-heatmap.png").exists()
    from PIL import Image

    mask = np.asarray(Image.open(out))
    assert set(np.unique(mask)).issubset({0, 255})
    text = capsys.readouterr().out
    assert "scores" in text and "threshold" in text


def test_query_unknown_prompt_is_exit_2_with_suggestions(tiny_run, tmp_path, capsys):
    want = tiny_run["prompts"][0]
    rc = cli.main(
        ["query", "--checkpoint", str(tiny_run["checkpoint"]),
         "--manifest", str(tiny_run["manifest"]),
         "--prompt", want[:-1], "--time", "0.5", "--out", str(tmp_path / "m.png")]
    )
    assert rc == 2
    assert want in capsys.readouterr().err


def test_query_flag_validation(tiny_run, tmp_path):
    base = ["query", "--checkpoint", str(tiny_run["checkpoint"]),
            "--manifest", str(tiny_run["manifest"]), "--time", "0.5",
            "--out", str(tmp_path / "m.png")]
    # neither prompt nor embedding
    assert cli.main(base) == 1
    # both
    assert cli.main(base + ["--prompt", "x", "--embedding", "1,0"]) == 1
    # threshold out of range
    assert cli.main(base + ["--prompt", tiny_run["prompts"][0], "--threshold", "1.5"]) == 1
    # malformed embedding
    assert cli.main(base + ["--embedding", "1,two,3"]) == 1


def test_query_requires_codec_source(tiny_run, tmp_path):
    rc = cli.main(
        ["query", "--checkpoint", str(tiny_run["checkpoint"]),
         "--prompt", "x", "--time", "0.5", "--out", str(tmp_path / "m.png")]
    )
    assert rc == 1


def test_eval_writes_report(tiny_run, tmp_path, capsys):
    out = tmp_path / "report.json"
    rc = cli.main(
        ["eval", "--checkpoint", str(tiny_run["checkpoint"]),
         "--manifest", str(tiny_run["manifest"]), "--out", str(out),
         "--split", "test", "--bench", "2"]
    )
    assert rc == 0
    report = json.loads(out.read_text())
    assert report["split"] == "test"
    assert report["n_frames"] == 2
    assert len(report["psnr_per_frame"]) == 2
    assert set(report["iou_per_class"]) | set(report["iou_skipped"]) == set(tiny_run["prompts"])
    assert report["bench"]["n"] == 2
    assert report["psnr_mean"] > 10.0
    text = capsys.readouterr().out
    assert "psnr" in text


def test_grad_check_subset(capsys):
    rc = cli.main(["grad-check", "--suites", "fdm,losses", "--configs", "3", "--seed", "1"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "fdm" in out and "losses" in out


def test_grad_check_unknown_suite(capsys):
    assert cli.main(["grad-check", "--suites", "nonsense"]) == 1
    assert "available" in capsys.readouterr().err
