import pytest

from xmltk.config import ConfigError, PipelineConfig, apply_overrides, dump_toml, from_dict, load_config, with_seed


def test_overrides_and_types(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('seed = 5\n[svm]\nC = 2.0\n[paths]\ntrain = "t.jsonl"\n')
    cfg = load_config(p, ["svm.plane_shift=-0.5", "knn.k=7", "ensemble.tune=false", "paths.vocab=v.tsv"])
    assert cfg.seed == 5 and cfg.svm.C == 2.0 and cfg.svm.plane_shift == -0.5
    assert cfg.knn.k == 7 and cfg.ensemble.tune is False
    assert cfg.path("train") == tmp_path / "t.jsonl"
    assert cfg.path("vocab") == tmp_path / "v.tsv"


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown keys"):
        from_dict({"svm": {"gamma": 1}})
    with pytest.raises(ConfigError, match="unknown configuration key"):
        from_dict({"mystery": {}})
    with pytest.raises(ConfigError):
        apply_overrides({}, ["novalue"])
    with pytest.raises(ConfigError):
        from_dict({"svm": {"C": -1.0}})


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        load_config(tmp_path / "none.toml")


def test_dump_round_trip(tmp_path):
    cfg = load_config(None, ["seed=21", "decoder.epochs=2", "knn.field_weights={abstract = 1.0, title = 2.0}"])
    (tmp_path / "c.toml").write_text(dump_toml(cfg))
    back = load_config(tmp_path / "c.toml")
    assert back.to_dict() == cfg.to_dict()
    assert back.digest() == cfg.digest()


def test_seed_propagates():
    cfg = with_seed(PipelineConfig(seed=99))
    assert cfg.svm.seed == 99 and cfg.decoder.seed == 99


def test_unset_path():
    with pytest.raises(ConfigError, match="paths.test"):
        PipelineConfig().path("test")
