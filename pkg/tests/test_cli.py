"""CLI subcommands driven in-process through main(); exit-code contract."""

import json

import pytest

from hypergrid.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, build_parser, main

TINY = {
    "model": {"vocab_size": 24, "d_m": 16, "d_f": 32, "heads": 2,
              "layers_enc": 1, "layers_dec": 1, "max_len": 12},
    "tasks": {"sizes": [8, 4, 4, 4, 4], "dev_size": 2},
    "train": {"steps": 2, "batch_size": 2, "eval_every": 1},
    "gradcheck": {"budget": 2, "jitter": 0.05, "seed": 0},
    "sweep": {"variants": ["LG"], "d_r": [2], "d_c": [4], "steps": 2,
              "eval_every": 1, "batch_size": 2, "seeds": 1,
              "task_sizes": [8, 4, 4, 4, 4], "dev_size": 2},
}


@pytest.fixture
def tiny_cfg(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(TINY))
    return str(p)


def test_help_lists_config_keys(capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args(["train", "--help"])
    out = capsys.readouterr().out
    for key in ("model.d_m", "gate.kind", "optimizer.lr", "train.steps",
                "sweep.d_c", "gradcheck.budget"):
        assert key in out


def test_train_runs_and_writes_artifacts(tiny_cfg, tmp_path, capsys):
    out = tmp_path / "run"
    rc = main(["train", "--config", tiny_cfg, "--out", str(out),
               "--override", "gate.kind=hypergrid"])
    assert rc == EXIT_OK
    assert (out / "metrics.jsonl").exists()
    assert (out / "best.ckpt").exists()
    assert (out / "summary.json").exists()
    assert (out / "config.json").exists()
    assert "macro-average" in capsys.readouterr().out


def test_eval_roundtrips_checkpoint(tiny_cfg, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", tiny_cfg, "--out", str(out),
                 "--quiet"]) == EXIT_OK
    rc = main(["eval", "--config", tiny_cfg,
               "--checkpoint", str(out / "best.ckpt")])
    assert rc == EXIT_OK
    txt = capsys.readouterr().out
    assert "macro_avg" in txt and "copy" in txt


def test_eval_bad_checkpoint_is_runtime_error(tiny_cfg, tmp_path, capsys):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage")
    rc = main(["eval", "--config", tiny_cfg, "--checkpoint", str(bad)])
    assert rc == EXIT_RUNTIME
    assert "error" in capsys.readouterr().err


def test_missing_config_file_names_path(capsys):
    rc = main(["train", "--config", "does/not/exist.json"])
    assert rc == EXIT_CONFIG
    assert "does/not/exist.json" in capsys.readouterr().err


def test_unknown_override_key_is_config_error(tiny_cfg, capsys):
    rc = main(["train", "--config", tiny_cfg, "--override", "gate.nope=1"])
    assert rc == EXIT_CONFIG
    assert "gate.nope" in capsys.readouterr().err


def test_invalid_geometry_fails_before_training(tiny_cfg, tmp_path, capsys):
    # d_r=3 does not divide d_f=32: must fail fast with no artifacts
    out = tmp_path / "never"
    rc = main(["train", "--config", tiny_cfg, "--out", str(out),
               "--override", "gate.kind=hypergrid",
               "--override", "gate.d_r=3"])
    assert rc == EXIT_CONFIG
    assert not (out / "metrics.jsonl").exists()


def test_gradcheck_passes_on_tiny_model(tiny_cfg, tmp_path, capsys):
    rc = main(["gradcheck", "--config", tiny_cfg, "--out", str(tmp_path / "gc"),
               "--override", "gate.kind=hypergrid",
               "--override", "gate.variant=GL"])
    assert rc == EXIT_OK
    out = capsys.readouterr().out
    assert "all blocks pass" in out
    report = (tmp_path / "gc" / "gradcheck.txt").read_text()
    assert "PASS" in report and "hypergrid" in report


def test_gradcheck_failure_is_exit_2(tiny_cfg, monkeypatch, capsys):
    from hypergrid.gradcheck import CheckReport

    def always_fail(model, batch, coordinate_budget, seed):
        return [CheckReport("stub", 1.0, 1.0, False)]

    monkeypatch.setattr("hypergrid.cli.gradcheck.check_model", always_fail)
    rc = main(["gradcheck", "--config", tiny_cfg])
    assert rc == EXIT_RUNTIME
    assert "FAILED" in capsys.readouterr().err


def test_sweep_emits_plotdata(tiny_cfg, tmp_path, capsys):
    out = tmp_path / "sw"
    rc = main(["sweep", "--config", tiny_cfg, "--out", str(out)])
    assert rc == EXIT_OK
    assert (out / "plotdata" / "LG_fan_in.tsv").exists()
    assert (out / "plotdata" / "LG_fan_out.tsv").exists()
    assert "sweep complete" in capsys.readouterr().out


def test_sweep_thread_env_respected(tiny_cfg, tmp_path, monkeypatch):
    monkeypatch.setenv("HYPERGRID_THREADS", "2")
    out = tmp_path / "sw2"
    assert main(["sweep", "--config", tiny_cfg, "--out", str(out),
                 "--quiet"]) == EXIT_OK


def test_param_audit_prints_table(tiny_cfg, capsys):
    rc = main(["param-audit", "--config", tiny_cfg,
               "--override", "gate.kind=hypergrid"])
    assert rc == EXIT_OK
    out = capsys.readouterr().out
    for variant in ("L2", "LG", "GL"):
        assert variant in out
    assert "added/base" in out


def test_seed_flag_overrides_config(tiny_cfg, tmp_path):
    out = tmp_path / "seeded"
    assert main(["train", "--config", tiny_cfg, "--out", str(out),
                 "--seed", "42", "--quiet"]) == EXIT_OK
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["seed"] == 42
