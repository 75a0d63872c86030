import json
from pathlib import Path

import pytest

from reldistill.cli import main
from reldistill.schemas import ALIEXPRESS6, load_dataset
from reldistill.tiering import load_calibration


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A tiny end-to-end pipeline driven through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data.jsonl"
    gens = root / "gens.jsonl"
    assert run("gen-synth", "--n", 120, "--schema", "aliexpress6", "--seed", 3,
               "--out", data) == 0
    assert run("teach-generate", "--data", data, "--schema", "aliexpress6",
               "--seed", 3, "--attempts", 5, "--out", gens) == 0
    return root


def _train_args(root, out, extra=()):
    return ("train-student", "--data", root / "data.jsonl", "--gens", root / "gens.jsonl",
            "--schema", "aliexpress6", "--seed", 3, "--epochs", 1, "--out", out, *extra)


def test_gen_synth_and_teach_generate(workdir):
    pairs = load_dataset(workdir / "data.jsonl", ALIEXPRESS6)
    assert len(pairs) == 120
    lines = (workdir / "gens.jsonl").read_text().splitlines()
    assert len(lines) == 120 * 3 * 5


def test_build_sft_and_conflicts_and_dpo(workdir):
    sft = workdir / "sft.jsonl"
    conflicts = workdir / "conflicts.jsonl"
    prefs = workdir / "prefs.jsonl"
    report = workdir / "skips.json"
    assert run("build-sft", "--data", workdir / "data.jsonl", "--gens",
               workdir / "gens.jsonl", "--schema", "aliexpress6", "--out", sft) == 0
    assert sft.stat().st_size > 0
    assert run("mine-conflicts", "--data", workdir / "data.jsonl", "--gens",
               workdir / "gens.jsonl", "--schema", "aliexpress6", "--out", conflicts) == 0
    assert run("build-dpo", "--conflicts", conflicts, "--gens", workdir / "gens.jsonl",
               "--schema", "aliexpress6", "--out", prefs, "--report", report) == 0
    skips = json.loads(report.read_text())
    assert set(skips) >= {"emitted", "skipped_no_correct_rationale"}
    assert skips["emitted"] == len(prefs.read_text().splitlines())


def test_train_eval_probe_bench_calibrate_score(workdir):
    ckpt = workdir / "ckpt"
    assert run(*_train_args(workdir, ckpt)) == 0
    assert (ckpt / "manifest.json").exists()
    assert (ckpt / "tensors.bin").exists()
    assert (ckpt / "history.jsonl").exists()

    report = workdir / "eval.json"
    assert run("eval", "--ckpt", ckpt, "--data", workdir / "data.jsonl",
               "--out", report) == 0
    payload = json.loads(report.read_text())
    assert 0.0 <= payload["accuracy"] <= 1.0
    assert len(payload["per_class"]) == 6

    oracle = workdir / "oracle.json"
    assert run("oracle-report", "--data", workdir / "data.jsonl", "--gens",
               workdir / "gens.jsonl", "--schema", "aliexpress6", "--k", 3,
               "--out", oracle) == 0
    assert json.loads(oracle.read_text())["k"] == 3

    heat_csv = workdir / "heatmap.csv"
    assert run("heatmap", "--data", workdir / "data.jsonl", "--gens",
               workdir / "gens.jsonl", "--schema", "aliexpress6",
               "--out-csv", heat_csv) == 0
    assert heat_csv.read_text().startswith("perspective,")

    probe = workdir / "probe.json"
    assert run("probe", "--ckpt", ckpt, "--data", workdir / "data.jsonl",
               "--gens", workdir / "gens.jsonl", "--top-n", 5, "--runs", 2,
               "--out", probe) == 0
    assert len(json.loads(probe.read_text())["results"]) == 5

    bench = workdir / "bench.json"
    assert run("bench", "--ckpt", ckpt, "--data", workdir / "data.jsonl",
               "--batch", 50, "--audit-extractors", "--width", 768,
               "--out", bench) == 0
    audit = json.loads(bench.read_text())
    assert audit["extractor_deltas"]["poly"]["closed_form"] == 24_576
    assert audit["checkpoint"]["mean_latency_ms"] > 0

    calib = workdir / "calib.json"
    assert run("calibrate", "--ckpt", ckpt, "--data", workdir / "data.jsonl",
               "--target-precision", 0.3, "--out", calib) == 0
    calibration = load_calibration(calib)
    assert len(calibration.thresholds) == 4

    scored = workdir / "scored.jsonl"
    kept = workdir / "kept.jsonl"
    assert run("score", "--ckpt", ckpt, "--data", workdir / "data.jsonl",
               "--calibration", calib, "--out", scored, "--kept-out", kept) == 0
    rows = [json.loads(line) for line in scored.read_text().splitlines()]
    assert len(rows) == 120
    kept_pairs = load_dataset(kept, ALIEXPRESS6)
    assert len(kept_pairs) == sum(r["kept"] for r in rows)


def test_cli_determinism(tmp_path, workdir):
    # rerunning every stage with the same seed produces byte-identical files
    def stage_files(base: Path):
        base.mkdir()
        data = base / "data.jsonl"
        gens = base / "gens.jsonl"
        sft = base / "sft.jsonl"
        conflicts = base / "conflicts.jsonl"
        prefs = base / "prefs.jsonl"
        ckpt = base / "ckpt"
        run("gen-synth", "--n", 60, "--schema", "aliexpress6", "--seed", 9, "--out", data)
        run("teach-generate", "--data", data, "--schema", "aliexpress6", "--seed", 9,
            "--attempts", 3, "--out", gens)
        run("build-sft", "--data", data, "--gens", gens, "--schema", "aliexpress6",
            "--out", sft)
        run("mine-conflicts", "--data", data, "--gens", gens, "--schema", "aliexpress6",
            "--out", conflicts)
        run("build-dpo", "--conflicts", conflicts, "--gens", gens, "--schema",
            "aliexpress6", "--out", prefs, "--report", base / "skips.json")
        run("train-student", "--data", data, "--gens", gens, "--schema", "aliexpress6",
            "--seed", 9, "--epochs", 1, "--out", ckpt)
        return [data, gens, sft, conflicts, prefs, base / "skips.json",
                ckpt / "manifest.json", ckpt / "tensors.bin", ckpt / "history.jsonl"]

    first = stage_files(tmp_path / "a")
    second = stage_files(tmp_path / "b")
    for fa, fb in zip(first, second):
        assert fa.read_bytes() == fb.read_bytes(), fa.name


def test_cli_exit_codes(tmp_path, capsys):
    # validation failure: unknown schema
    code = run("gen-synth", "--n", 5, "--schema", "missing-schema", "--seed", 0,
               "--out", tmp_path / "x.jsonl")
    assert code == 2
    assert "error" in capsys.readouterr().err
    # validation failure: bad dataset file
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{broken\n")
    code = run("build-sft", "--data", bad, "--gens", bad, "--schema", "aliexpress6",
               "--out", tmp_path / "out.jsonl")
    assert code == 2


def test_cli_external_error_exit_code(tmp_path, monkeypatch):
    data = tmp_path / "data.jsonl"
    run("gen-synth", "--n", 2, "--schema", "esci4", "--seed", 0, "--out", data)
    # endpoint that cannot resolve -> transport failure -> exit 3
    monkeypatch.setenv("RELDISTILL_GEN_ENDPOINT", "http://127.0.0.1:1/generate")
    import reldistill.teacher as teacher_mod

    def no_sleep_transport(endpoint, timeout=30.0):
        def call(request):
            raise teacher_mod.RetryableTransportError("unreachable")

        return call

    monkeypatch.setattr(teacher_mod, "http_transport", no_sleep_transport)
    code = run("teach-generate", "--data", data, "--schema", "esci4", "--seed", 0,
               "--attempts", 1, "--backend", "external", "--out", tmp_path / "g.jsonl")
    assert code == 3


def test_cli_external_embedder_needs_endpoint(workdir, monkeypatch):
    monkeypatch.delenv("RELDISTILL_EMBED_ENDPOINT", raising=False)
    code = run(*_train_args(workdir, workdir / "ckpt2", extra=("--embedder", "external")))
    assert code == 2  # configuration error: no endpoint anywhere


def test_cli_config_file_roundtrip(tmp_path):
    from reldistill.config import RunConfig, load_run_config, save_run_config

    config = RunConfig(seed=5)
    config.optimizer.epochs = 2
    yaml_path = tmp_path / "run.yaml"
    json_path = tmp_path / "run.json"
    save_run_config(yaml_path, config)
    save_run_config(json_path, config)
    assert load_run_config(yaml_path) == config
    assert load_run_config(json_path) == config
