import json
import shutil
import subprocess
import sys

import pytest

from xmltk import cli, corpus, metrics, pipeline
from xmltk.config import load_config

FAST = ["decoder.epochs=2", "decoder.embedding_dim=16", "decoder.hidden_dim=16", "split.holdout_fraction=0.1"]


@pytest.fixture(scope="session")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert cli.main(["synth", "--out", str(d), "--n-articles", "600", "--n-labels", "30", "--n-dev", "80",
                     "--seed", "3"]) == 0
    return d


def _args(d, *extra, model_dir="models"):
    out = ["-c", str(d / "config.toml"), "--model-dir", str(d / model_dir)]
    for s in FAST:
        out += ["--set", s]
    return out + list(extra)


@pytest.fixture(scope="session")
def trained(workdir):
    for m in ("svm", "knn", "decoder"):
        assert cli.main(["train", m, *_args(workdir)]) == 0
    assert cli.main(["ensemble", *_args(workdir)]) == 0
    return workdir


def _cfg(d, model_dir="models"):
    cfg = load_config(d / "config.toml", FAST)
    cfg.paths.model_dir = str(d / model_dir)
    return cfg


def test_synth_writes_inputs(workdir):
    for name in ("train.jsonl", "dev.jsonl", "vocab.tsv", "config.toml"):
        assert (workdir / name).exists()
    assert len(corpus.load_articles(workdir / "train.jsonl")) == 600


def test_ingest_check(workdir, capsys):
    assert cli.main(["ingest-check", *_args(workdir)]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["labels"] == 30
    assert info["split"] == {"train": 540, "holdout": 60}
    assert info["dev"]["unknown_labels"] == []


def test_artifacts_and_manifest(trained):
    man = json.loads((trained / "models" / "manifest.json").read_text())["commands"]
    for m in ("svm", "knn", "decoder"):
        entry = man[f"train:{m}"]
        assert entry["gold_read"] == ["train[split=train]"]
        assert entry["seed"] == 3 and len(entry["config_sha256"]) == 64
        assert "train" in entry["durations_s"]
    ens = man["ensemble"]
    assert set(ens["calibrated_thresholds"]) == {"svm", "knn", "decoder"}
    assert ens["gold_read"] == ["train[split=holdout]", "dev"]
    assert (trained / "models" / "ensemble_threshold.png").exists()


def test_retrain_is_byte_identical(trained):
    before = (trained / "models" / "svm.bin").read_bytes()
    assert cli.main(["train", "svm", *_args(trained, model_dir="models_again")]) == 0
    assert (trained / "models_again" / "svm.bin").read_bytes() == before


def test_missing_vocab_fails_before_training(workdir, tmp_path, capsys):
    code = cli.main(["train", "svm", *_args(workdir, model_dir=str(tmp_path / "m")), "--set", "paths.vocab=nope.tsv"])
    assert code != 0
    assert "paths.vocab" in capsys.readouterr().err
    assert not (tmp_path / "m").exists()


def test_ensemble_lists_missing_artifacts(workdir, tmp_path, capsys):
    d = tmp_path / "partial"
    d.mkdir()
    assert cli.main(["ensemble", *_args(workdir, model_dir=str(d))]) != 0
    err = capsys.readouterr().err
    assert "svm.bin" in err and "knn.idx" in err and "decoder.ckpt" in err


def test_ensemble_rejects_empty_holdout(trained, tmp_path, capsys):
    d = tmp_path / "copy"
    shutil.copytree(trained / "models", d)
    assert cli.main(["ensemble", *_args(trained, model_dir=str(d)), "--set", "split.holdout_fraction=0.0"]) != 0
    assert "holdout" in capsys.readouterr().err


@pytest.mark.parametrize("model", ["svm", "knn", "decoder", "ensemble"])
def test_predict_then_evaluate(trained, tmp_path, model):
    out = tmp_path / f"{model}.jsonl"
    assert cli.main(["predict", model, str(trained / "dev.jsonl"), str(out), *_args(trained)]) == 0
    recs = [json.loads(line) for line in out.read_text().splitlines()]
    for r in recs:
        assert set(r) == {"id", "labels", "scores"}
        assert set(r["labels"]) == set(r["scores"])
    via_file = pipeline.cmd_evaluate(out, trained / "dev.jsonl", tmp_path / "m.json")
    dev = corpus.load_articles(trained / "dev.jsonl")
    outputs = pipeline.predict_all(_cfg(trained), dev, (model,) if model != "ensemble" else pipeline.ALL_MODELS)
    in_process = metrics.evaluate([(o[0], a.gold_labels) for o, a in zip(outputs[model], dev)])
    assert via_file == in_process


def test_predict_empty_input(trained, tmp_path):
    (tmp_path / "empty.jsonl").write_text("")
    for model in ("svm", "ensemble"):
        out = tmp_path / f"out_{model}.jsonl"
        assert cli.main(["predict", model, str(tmp_path / "empty.jsonl"), str(out), *_args(trained)]) == 0
        assert out.read_text() == ""


def test_predict_unknown_model(trained, tmp_path, capsys):
    assert cli.main(["predict", "bert", str(trained / "dev.jsonl"), str(tmp_path / "x"), *_args(trained)]) != 0
    assert "unknown model" in capsys.readouterr().err


def test_evaluate_perfect_and_mismatch(trained, tmp_path, capsys):
    dev = corpus.load_articles(trained / "dev.jsonl")
    perfect = tmp_path / "perfect.jsonl"
    perfect.write_text("".join(json.dumps({"id": a.id, "labels": sorted(a.gold_labels), "scores": {}}) + "\n"
                               for a in dev))
    assert cli.main(["evaluate", str(perfect), str(trained / "dev.jsonl"), "--json", str(tmp_path / "m.json")]) == 0
    out = capsys.readouterr().out
    assert out.count("1.0000") == 9
    res = json.loads((tmp_path / "m.json").read_text())["results"]["predictions"]
    assert all(v == 1.0 for v in res.values())
    short = tmp_path / "short.jsonl"
    short.write_text("".join(perfect.read_text().splitlines(keepends=True)[:-1]))
    assert cli.main(["evaluate", str(short), str(trained / "dev.jsonl")]) != 0
    assert dev[-1].id in capsys.readouterr().err


def test_tune_threshold(trained, tmp_path):
    d = tmp_path / "tune"
    shutil.copytree(trained / "models", d)
    for model in ("ensemble", "svm", "knn"):
        assert cli.main(["tune-threshold", "--model", model, "--steps", "21", *_args(trained, model_dir=str(d))]) == 0
    man = json.loads((d / "manifest.json").read_text())["commands"]
    assert man["tune-threshold:svm"]["gold_read"] == ["dev"]


def test_report_outputs(trained, tmp_path, capsys):
    out = tmp_path / "rep"
    assert cli.main(["report", "--out", str(out), *_args(trained)]) == 0
    printed = capsys.readouterr().out
    assert "SVM-rank ensemble" in printed
    rows = (out / "micro.tsv").read_text().splitlines()
    assert rows[0] == "model\tmuP\tmuR\tmuF1" and len(rows) == 5
    for name in ("metrics.tsv", "metrics.json", "report.txt", "micro.png", "metrics.png", "decoder_loss.png"):
        assert (out / name).stat().st_size > 0


def test_module_entry_point_exit_code(tmp_path):
    r = subprocess.run([sys.executable, "-m", "xmltk", "train", "svm", "-c", str(tmp_path / "missing.toml")],
                       capture_output=True, text=True)
    assert r.returncode != 0
    assert "does not exist" in r.stderr
