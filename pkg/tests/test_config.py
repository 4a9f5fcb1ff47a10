import pytest

from pointda.config import Config, load_config, write_resolved
from pointda.errors import ConfigError


def test_defaults_round_trip(tmp_path):
    cfg = Config()
    path = write_resolved(cfg, tmp_path / "c.toml")
    again = load_config(path, env={})
    assert again == cfg and again.hash() == cfg.hash()


def test_defaults_keep_the_domain_shift():
    cfg = load_config(env={})
    assert cfg.data.source.background == "flat"
    assert cfg.data.target.background == "noise-texture"
    assert cfg.data.target.dot_radius_range == [4.0, 6.0]
    cfg.data.pair_spec().validate()


def test_partial_section_keeps_its_defaults():
    cfg = load_config(overrides=["data.target.image_size=64"], env={})
    assert cfg.data.target.image_size == 64
    assert cfg.data.target.background == "noise-texture"
    assert cfg.data.source.image_size == 128


def test_overrides_parse_toml_values(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("seed = 3\n[train]\nsteps = 10\n")
    cfg = load_config(path, ["train.steps=20", "train.enabled_losses=['adv']", "loss.lambda_ent=1"], env={})
    assert cfg.seed == 3 and cfg.train.steps == 20
    assert cfg.train.enabled_losses == ["adv"]
    assert cfg.loss.lambda_ent == 1.0 and isinstance(cfg.loss.lambda_ent, float)


def test_base_dict_is_layered_under_overrides():
    base = Config(seed=5).to_dict()
    base["train"]["steps"] = 7
    cfg = load_config(overrides=["eval.threshold=0.3"], env={}, base=base)
    assert (cfg.seed, cfg.train.steps, cfg.eval.threshold) == (5, 7, 0.3)


def test_seed_env_override():
    assert load_config(env={"POINTDA_SEED": "11"}).seed == 11
    with pytest.raises(ConfigError, match="POINTDA_SEED"):
        load_config(env={"POINTDA_SEED": "x"})


def test_every_problem_reported_at_once():
    with pytest.raises(ConfigError) as info:
        load_config(
            overrides=["train.bogus=1", "model.nope=2", "train.steps=0", "train.lr_main=-1", "eval.threshold=1.5"],
            env={},
        )
    msg = str(info.value)
    for key in ("train.bogus", "model.nope", "train.steps", "train.lr_main", "eval.threshold"):
        assert key in msg
    assert info.value.exit_code == 2


@pytest.mark.parametrize(
    "override, key",
    [
        ("train.steps='many'", "train.steps"),
        ("train.enabled_losses=['ent_src', 'dropout']", "enabled_losses"),
        ("loss.lambda_adv=-0.5", "loss"),
        ("model.stride=6", "model"),
        ("data.target.count_range=[9, 2]", "data.target"),
        ("train.steps", "expected key=value"),
    ],
)
def test_invalid_values(override, key):
    with pytest.raises(ConfigError, match=key):
        load_config(overrides=[override], env={})


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.toml", env={})
    bad = tmp_path / "bad.toml"
    bad.write_text("[train\nsteps = 1")
    with pytest.raises(ConfigError):
        load_config(bad, env={})


def test_hash_tracks_content():
    a = Config()
    b = a.replace(seed=1)
    assert a.hash() != b.hash() and a.hash() == Config().hash()
