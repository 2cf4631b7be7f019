"""Command-line tests: every subcommand, exit codes and the error line."""

import json

import pytest

from deobstruct.app import default_checkpoint, main, trace_path
from deobstruct.core.storage import load_dataset, load_image, save_image

TINY = [
    "--total-steps", "3",
    "--detector-warmup-steps", "1",
    "--patch-schedule", "[[0, 16]]",
    "--embed-dim", "32",
    "--net-widths", "[8, 16]",
    "--net-blocks", "1",
    "--detector-depth", "1",
    "--detector-channels", "4",
    "--adapter-blocks", "1",
    "--checkpoint-every", "0",
]


def _json_out(capsys):
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


def _error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


@pytest.fixture
def trained(tmp_path, capsys):
    data = tmp_path / "data"
    assert main(["synth", "--kind", "fence", "--count", "2", "--size", "32", "--out", str(data), "--seed", "1"]) == 0
    out = tmp_path / "run"
    assert main(["train", "--data", str(data), "--out", str(out), *TINY]) == 0
    capsys.readouterr()
    return data, out / "last.pt"


def test_selftest(capsys):
    assert main(["selftest"]) == 0
    report = _json_out(capsys)
    assert report["corpus_sizes"]["opaque"] > 0
    assert report["default_checkpoint"] == str(default_checkpoint())
    assert report["rss_mb"] > 0


def test_synth_is_seed_deterministic(tmp_path, capsys):
    args = ["synth", "--kind", "raindrop", "--count", "2", "--size", "32", "--seed", "5"]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert len(files) == 10
    for rel in files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
    assert all(text for _, text in load_dataset(tmp_path / "a"))


def test_ingest_builds_pairs(tmp_path, capsys):
    data = tmp_path / "data"
    main(["synth", "--kind", "stroke", "--count", "1", "--size", "32", "--out", str(data)])
    comp, bg = tmp_path / "comp", tmp_path / "bg"
    save_image(load_image(data / "pair_0000" / "composite.png"), comp / "x.png")
    save_image(load_image(data / "pair_0000" / "background.png"), bg / "x.png")
    capsys.readouterr()
    assert main(["ingest", "--composite-dir", str(comp), "--background-dir", str(bg),
                 "--out", str(tmp_path / "ingested")]) == 0
    [(pair, _)] = load_dataset(tmp_path / "ingested")
    assert pair.obstruction_kind == "custom"


def test_train_remove_detect_and_eval(tmp_path, capsys, trained):
    data, ckpt = trained
    image = data / "pair_0000" / "composite.png"
    out = tmp_path / "clean.png"
    assert main(["remove", "--image", str(image), "--instruction", "remove the fence",
                 "--ckpt", str(ckpt), "--out", str(out)]) == 0
    assert load_image(out).size == (32, 32)
    trace = json.loads(trace_path(out).read_text())
    assert trace["instruction"] == "remove the fence"
    assert "timings_ms" not in trace

    assert main(["detect-mask", "--image", str(image), "--ckpt", str(ckpt), "--out", str(tmp_path / "m.png")]) == 0
    assert (tmp_path / "m.png").is_file()

    capsys.readouterr()
    report = tmp_path / "report.json"
    assert main(["eval", "--ckpt", str(ckpt), "--data", str(data), "--report-path", str(report), "--workers", "2"]) == 0
    assert "mean[fence]" in capsys.readouterr().out
    assert json.loads(report.read_text())["count"] == 2


def test_remove_output_is_reproducible(tmp_path, capsys, trained):
    data, ckpt = trained
    image = data / "pair_0001" / "composite.png"
    for name in ("a.png", "b.png"):
        main(["remove", "--image", str(image), "--instruction", "clear the raindrops",
              "--ckpt", str(ckpt), "--out", str(tmp_path / name)])
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
    assert trace_path(tmp_path / "a.png").read_text() == trace_path(tmp_path / "b.png").read_text()


def test_finetune_text(tmp_path, capsys):
    out = tmp_path / "text.pt"
    assert main(["finetune-text", "--out", str(out), "--steps", "5", "--dim", "32"]) == 0
    summary = _json_out(capsys)
    assert out.is_file()
    assert summary["steps"] == 5


def test_missing_image_is_a_one_line_error(tmp_path, capsys):
    code = main(["remove", "--image", str(tmp_path / "nope.png"), "--instruction", "remove the fence",
                 "--out", str(tmp_path / "o.png")])
    assert code == 2
    err = _error(capsys)
    assert err["error"] == "LoadError"
    assert err["path"].endswith("nope.png")


def test_missing_default_checkpoint_names_it(tmp_path, capsys):
    image = tmp_path / "i.png"
    main(["synth", "--kind", "fence", "--count", "1", "--size", "16", "--out", str(tmp_path / "d")])
    save_image(load_image(tmp_path / "d" / "pair_0000" / "composite.png"), image)
    capsys.readouterr()
    assert main(["detect-mask", "--image", str(image), "--out", str(tmp_path / "m.png")]) == 2
    assert _error(capsys)["path"] == str(default_checkpoint())


def test_bad_config_override_exits_2(tmp_path, capsys):
    data = tmp_path / "d"
    main(["synth", "--kind", "fence", "--count", "1", "--size", "32", "--out", str(data)])
    capsys.readouterr()
    assert main(["train", "--data", str(data), "--theta", "2"]) == 2
    assert _error(capsys)["error"] == "ParameterError"


@pytest.mark.parametrize("argv", [
    ["remove", "--image", "x.png"],
    ["remove", "--image", "x.png", "--instruction", "remove the fence", "--out", "o.png", "--bogus"],
    ["synth", "--kind", "teapot", "--count", "1", "--out", "d"],
    [],
])
def test_usage_errors_are_one_json_line(argv, capsys):
    assert main(argv) == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    assert json.loads(err[0])["error"] == "ParameterError"
