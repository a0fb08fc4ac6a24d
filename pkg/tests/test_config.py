import pytest

from conceptsr.config import MUTATION_CATEGORIES, MutationWeights, RunConfig, set_dotted
from conceptsr.errors import ConfigError


def test_defaults_validate():
    cfg = RunConfig().validate()
    assert cfg.iterations == 40 and cfg.p == 0.01
    assert cfg.concepts.recency_window == 20
    assert cfg.early_stop_mse == 1e-11


def test_json_roundtrip(tmp_path):
    cfg = RunConfig(seed=7, hints=["the law is an inverse square"])
    cfg.mutation_weights.simplify = 0.25
    cfg.llm.model = "local-model"
    path = tmp_path / "c.json"
    path.write_text(cfg.to_json())
    back = RunConfig.load(path)
    assert back == cfg


def test_dotted_overrides_coerce_types():
    cfg = RunConfig()
    set_dotted(cfg, "iterations", "12")
    set_dotted(cfg, "llm.temperature", "0.2")
    set_dotted(cfg, "mutation_weights.do_nothing", "0")
    set_dotted(cfg, "unary_ops", "sin,cos")
    set_dotted(cfg, "llm.include_data", "true")
    assert cfg.iterations == 12 and cfg.llm.temperature == 0.2
    assert cfg.mutation_weights.do_nothing == 0.0
    assert cfg.unary_ops == ["sin", "cos"]
    assert cfg.llm.include_data is True


@pytest.mark.parametrize("key,value", [("nope", "1"), ("llm.nope", "1"), ("llm", "1"), ("iterations", "abc"),
                                       ("iterations", "1.5"), ("llm.include_data", "1")])
def test_bad_overrides(key, value):
    with pytest.raises(ConfigError):
        set_dotted(RunConfig(), key, value)


@pytest.mark.parametrize("field,value", [("p", 1.5), ("iterations", 0), ("selection", "best"), ("init_depth", 99)])
def test_validation(field, value):
    cfg = RunConfig()
    setattr(cfg, field, value)
    with pytest.raises(ConfigError):
        cfg.validate()


def test_mutation_weights():
    w = MutationWeights.only("simplify")
    assert sum(w.as_list()) == 1.0
    assert w.as_list()[MUTATION_CATEGORIES.index("simplify")] == 1.0
    with pytest.raises(ConfigError):
        MutationWeights(**{c: 0.0 for c in MUTATION_CATEGORIES}).validate()
    with pytest.raises(ConfigError):
        MutationWeights.only("teleport")
