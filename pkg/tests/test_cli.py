import json

import pytest

from _profiles import TINY, synth_inputs, write_config
from sensetraits.cli import main
from sensetraits.pipeline import LOCK_NAME, MODELS, SCHEMES
from sensetraits.targets import TRAITS


@pytest.fixture(scope="module")
def inputs(tmp_path_factory):
    root = tmp_path_factory.mktemp("cohort")
    return synth_inputs(root / "data", 3, n_users=30, n_days=14, noise="low")


@pytest.fixture(scope="module")
def full_run(tmp_path_factory, inputs):
    root = tmp_path_factory.mktemp("run")
    cfg = write_config(root / "tiny.yaml", 7, inputs, root / "out", TINY)
    assert main(["run", "-c", str(cfg)]) == 0
    return cfg, root / "out"


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_run_writes_all_cells(full_run):
    _, out = full_run
    reports = sorted(p.name for p in (out / "evaluate").glob("*.json"))
    assert len(reports) == 20
    assert reports == sorted(f"{t}_{s}_{m}.json" for t in TRAITS for s in SCHEMES for m in MODELS)
    listed = {a["path"] for a in manifest(out)["artifacts"]}
    for name in reports:
        assert f"evaluate/{name}" in listed
    for path in ["features/features.csv", "targets/labels_binary.csv", "report/table1.md",
                 "report/importance.csv", "report/comparison.json", "report/kde.csv"]:
        assert path in listed
    assert not (out / LOCK_NAME).exists()
    rep = json.loads((out / "evaluate" / "EXT_binary_rf.json").read_text())
    assert len(rep["fold_f1"]) == 5 and rep["selected_features"]


def test_rerun_reproduces_hashes(full_run, tmp_path):
    cfg, out = full_run
    assert main(["run", "-c", str(cfg), "--output-dir", str(tmp_path / "again")]) == 0
    a, b = manifest(out), manifest(tmp_path / "again")
    assert a["artifacts"] == b["artifacts"]
    assert a["config_hash"] == b["config_hash"]


def test_missing_bfi(tmp_path, inputs, capsys):
    bad = dict(inputs, bfi=str(tmp_path / "nope.csv"))
    cfg = write_config(tmp_path / "c.yaml", 1, bad, tmp_path / "out", TINY)
    assert main(["run", "-c", str(cfg)]) == 1
    assert "stage ingest: file not found" in capsys.readouterr().err
    assert not (tmp_path / "out" / "manifest.json").exists()


def test_failed_stage_removes_partial_artifacts(tmp_path, inputs, capsys):
    cfg = write_config(tmp_path / "c.yaml", 1, inputs, tmp_path / "out", TINY)
    assert main(["run", "-c", str(cfg), "--key", str(tmp_path / "missing_key.csv")]) == 1
    assert "stage targets:" in capsys.readouterr().err
    left = [p for p in (tmp_path / "out").rglob("*") if p.is_file()]
    assert left == []


def test_stages_use_cached_artifacts(tmp_path, inputs, capsys):
    cfg = str(write_config(tmp_path / "c.yaml", 2, inputs, tmp_path / "out", TINY))
    for stage in ("ingest", "featurize", "targets"):
        assert main([stage, "-c", cfg]) == 0
    before = {p: p.stat().st_mtime_ns for p in (tmp_path / "out").rglob("*") if p.is_file()}
    capsys.readouterr()
    assert main(["evaluate", "-c", cfg, "--trait", "CON", "--model", "rf", "--scheme", "binary"]) == 0
    captured = capsys.readouterr()
    assert captured.out.split() == [str(tmp_path / "out" / "evaluate" / "CON_binary_rf.json"),
                                    str(tmp_path / "out" / "evaluate" / "models" / "CON_binary_rf.json")]
    # earlier stages were not re-run, and the log lines carry the stage prefix
    assert all(p.stat().st_mtime_ns == t for p, t in before.items())
    assert "[evaluate] INFO starting" in captured.err
    assert "[ingest]" not in captured.err


def test_tune_single_cell(tmp_path, inputs, capsys):
    cfg = str(write_config(tmp_path / "c.yaml", 2, inputs, tmp_path / "out", TINY))
    for stage in ("ingest", "featurize", "targets"):
        assert main([stage, "-c", cfg]) == 0
    capsys.readouterr()
    assert main(["tune", "-c", cfg, "--model", "gbt", "--trait", "EXT", "--scheme", "binary"]) == 0
    tuned = list((tmp_path / "out" / "tune").glob("*.json"))
    assert [p.name for p in tuned] == ["EXT_binary_gbt.json"]
    best = json.loads(tuned[0].read_text())
    assert set(TINY["spaces"]["gbt"]) <= set(best["best_config"])


def test_unknown_subcommand():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code != 0


def test_lock_blocks_second_run(tmp_path, inputs, capsys):
    cfg = write_config(tmp_path / "c.yaml", 1, inputs, tmp_path / "out", TINY)
    (tmp_path / "out").mkdir()
    (tmp_path / "out" / LOCK_NAME).write_text("12345\n")
    assert main(["run", "-c", str(cfg)]) == 1
    assert "lock" in capsys.readouterr().err.lower()
    assert (tmp_path / "out" / LOCK_NAME).exists()


def test_config_errors(tmp_path, inputs, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("inputs: {events: a, metrics: b, bfi: c}\n")
    assert main(["ingest", "-c", str(cfg)]) == 1
    assert "seed" in capsys.readouterr().err
    cfg.write_text("seed: 1\nbogus: 2\ninputs: {events: a, metrics: b, bfi: c}\n")
    assert main(["ingest", "-c", str(cfg)]) == 1
    assert "bogus" in capsys.readouterr().err
    assert main(["ingest", "-c", str(tmp_path / "absent.yaml")]) == 1


def test_flags_override_config(tmp_path, inputs):
    from sensetraits.cli import build_parser, load_config

    cfg = write_config(tmp_path / "c.yaml", 1, inputs, tmp_path / "out", TINY)
    args = build_parser().parse_args(["select", "-c", str(cfg), "--seed", "9", "--folds", "3",
                                      "--paper-mode", "--scheme", "ternary", "--bo-budget", "5",
                                      "--f1", "weighted", "--tz", "UTC"])
    pc = load_config(args)
    assert (pc.seed, pc.folds, pc.rfe.mode, pc.schemes, pc.bo.budget, pc.f1, pc.tz) == \
        (9, 3, "paper", ["ternary"], 5, "weighted", "UTC")


def test_synth_subcommand_deterministic(tmp_path):
    a = synth_inputs(tmp_path / "a", 4, n_users=10, n_days=14)
    b = synth_inputs(tmp_path / "b", 4, n_users=10, n_days=14)
    for k in a:
        with open(a[k], "rb") as fa, open(b[k], "rb") as fb:
            assert fa.read() == fb.read()
