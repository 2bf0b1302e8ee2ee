import json

import numpy as np
import pytest

from tricover import read_report, save_idx, save_model
from tricover.cli import build_parser, main

from naive import synthetic_bars, train_tiny_net


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    model_paths = []
    for i in range(2):
        model = train_tiny_net(np.random.default_rng(40 + i), name=f"tiny{i}")
        path = root / f"tiny{i}.json"
        save_model(model, path)
        model_paths.append(str(path))
    images, labels = synthetic_bars(np.random.default_rng(99), 60)
    save_idx(root / "images.idx", images)
    save_idx(root / "labels.idx", labels)
    return {
        "root": root,
        "models": model_paths,
        "images": str(root / "images.idx"),
        "labels": str(root / "labels.idx"),
    }


def coverage_args(workspace, *extra):
    return ["coverage", "--models", *workspace["models"],
            "--images", workspace["images"],
            "--labels", workspace["labels"], *extra]


def test_coverage_command_prints_summary(workspace, capsys):
    code = main(coverage_args(workspace, "--seeds", "5"))
    out = capsys.readouterr().out
    assert code == 0
    assert "inputs tested: 5" in out
    assert "triplet coverage:" in out
    assert "neuron coverage:" in out
    assert "adversarial ratio:" in out


def test_out_flag_writes_report(workspace, tmp_path, capsys):
    out_path = tmp_path / "report.json"
    code = main(coverage_args(workspace, "--seeds", "4", "--out", str(out_path)))
    assert code == 0
    assert "report written to" in capsys.readouterr().out
    report = read_report(out_path)
    assert report.inputs_tested == 4
    assert report.mode == "random-eval"


def test_generate_command_runs(workspace, capsys):
    code = main(["generate", "--models", *workspace["models"],
                 "--images", workspace["images"],
                 "--labels", workspace["labels"],
                 "--seeds", "3", "--max-iters", "20"])
    assert code == 0
    assert "mode: guided-generate" in capsys.readouterr().out


def test_baseline_command_writes_curve(workspace, tmp_path):
    out_path = tmp_path / "baseline.json"
    code = main(["baseline", "--models", workspace["models"][0],
                 "--images", workspace["images"],
                 "--seeds", "6", "--out", str(out_path)])
    assert code == 0
    report = read_report(out_path)
    assert report.mode == "neuron-coverage-baseline"
    assert len(report.curve) == 6


def test_report_command_renders_table(workspace, tmp_path, capsys):
    out_path = tmp_path / "r.json"
    main(coverage_args(workspace, "--seeds", "5", "--out", str(out_path)))
    capsys.readouterr()
    code = main(["report", str(out_path)])
    out = capsys.readouterr().out
    assert code == 0
    assert "corner cases found" in out
    assert "adversarial ratio" in out
    assert "coverage (random inputs)" in out
    assert "coverage (guided inputs)" in out


def test_flags_override_config_file(workspace, tmp_path, capsys):
    config = {
        "models": workspace["models"],
        "images": workspace["images"],
        "labels": workspace["labels"],
        "seeds": 3,
        "rng_seed": 7,
    }
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(config))

    code = main(["coverage", "--config", str(config_path)])
    assert code == 0
    assert "inputs tested: 3" in capsys.readouterr().out

    code = main(["coverage", "--config", str(config_path), "--seeds", "9"])
    assert code == 0
    assert "inputs tested: 9" in capsys.readouterr().out


def test_unknown_config_key_is_rejected(workspace, tmp_path, capsys):
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps({"models": workspace["models"],
                                       "images": workspace["images"],
                                       "speling": 1}))
    code = main(["coverage", "--config", str(config_path)])
    assert code == 2
    assert "unknown config keys" in capsys.readouterr().err


def test_missing_models_is_an_error(workspace, capsys):
    code = main(["coverage", "--images", workspace["images"]])
    assert code == 2
    assert "no models given" in capsys.readouterr().err


def test_missing_image_file_is_reported(workspace, tmp_path, capsys):
    code = main(["coverage", "--models", *workspace["models"],
                 "--images", str(tmp_path / "absent.idx")])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_unreadable_report_path_fails_cleanly(workspace, tmp_path, capsys):
    code = main(coverage_args(workspace, "--seeds", "2", "--out",
                              str(tmp_path / "missing" / "dir" / "r.json")))
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_report_command_rejects_bad_file(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    code = main(["report", str(bad)])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_generate_with_single_model_fails(workspace, capsys):
    code = main(["generate", "--models", workspace["models"][0],
                 "--images", workspace["images"], "--seeds", "2"])
    assert code == 2
    assert "two models" in capsys.readouterr().err


def test_parser_knows_all_campaign_flags():
    parser = build_parser()
    args = parser.parse_args([
        "generate", "--models", "a.json", "b.json", "--images", "im.idx",
        "--labels", "lb.idx", "--seeds", "12", "--rng-seed", "5",
        "--threshold", "0.25", "--lambda1", "2", "--lambda2", "0.05",
        "--step-size", "0.02", "--max-iters", "40", "--out", "r.json",
    ])
    assert args.command == "generate"
    assert args.models == ["a.json", "b.json"]
    assert args.seeds == 12
    assert args.rng_seed == 5
    assert args.threshold == 0.25
    assert args.lambda1 == 2.0
    assert args.lambda2 == 0.05
    assert args.step_size == 0.02
    assert args.max_iters == 40


def test_rng_seed_flag_controls_sampling(workspace, tmp_path):
    out_a = tmp_path / "a.json"
    out_b = tmp_path / "b.json"
    main(coverage_args(workspace, "--seeds", "8", "--rng-seed", "1",
                       "--out", str(out_a)))
    main(coverage_args(workspace, "--seeds", "8", "--rng-seed", "1",
                       "--out", str(out_b)))
    a = read_report(out_a)
    b = read_report(out_b)
    # identical up to where each run was told to write its own report
    for report in (a, b):
        report.config["report_path"] = None
    assert a == b
