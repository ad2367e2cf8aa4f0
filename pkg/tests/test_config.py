import pytest

from xrsim.config import Experiment, dump, layout_bands, parse_override, resolve
from xrsim.errors import ConfigError


def test_desk_defaults():
    exp = Experiment.load(None, env={})
    assert exp.env_sim.j_xr == 6 and exp.env_sim.horizon == 200
    assert exp.env_sim.domain.exec_freq == 120.0 and exp.env_real.domain.exec_freq == 30.0
    assert exp.env_real.domain.sensor_noise_sigma == 0.05 and exp.env_real.domain.actuation_lag_slots == 1
    t = exp.trainer
    assert (t.K0, t.K1, t.K2, t.K3) == (200, 5, 10, 5)
    assert (exp.ppo.gamma, exp.ppo.clip_eps, exp.ppo.lambda_gae) == (0.99, 0.2, 0.95)


def test_full_preset(tmp_path):
    p = tmp_path / "full.toml"
    p.write_text('preset = "full"\n')
    exp = Experiment.load(p, env={})
    assert exp.env_sim.j_xr == 55 and exp.env_sim.j_rb == 43 and exp.env_sim.horizon == 2000
    t = exp.trainer
    assert (t.K0, t.K1, t.K2, t.K3) == (500, 25, 40, 10)
    assert exp.link.zeta == 3e4
    assert len(layout_bands(55)) == 55


def test_unknown_key_has_line(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("[trainer]\nK1 = 2\nK9 = 3\n")
    with pytest.raises(ConfigError) as ei:
        resolve(p, env={})
    assert ei.value.line == 3 and "K9" in str(ei.value)


def test_type_errors(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text('[trainer]\nK1 = "two"\n')
    with pytest.raises(ConfigError) as ei:
        resolve(p, env={})
    assert ei.value.line == 2
    with pytest.raises(ConfigError):
        resolve(tmp_path / "missing.toml", env={})
    q = tmp_path / "v.toml"
    q.write_text("schema_version = 9\n")
    with pytest.raises(ConfigError):
        resolve(q, env={})


def test_overrides_and_env_seed():
    cfg = resolve(None, ["trainer.K1=1", "--link.zeta=2e5", 'ratio.method="kliep"'], env={"XRSIM_SEED": "7"})
    assert cfg["trainer"]["K1"] == 1 and cfg["link"]["zeta"] == 2e5
    assert cfg["ratio"]["method"] == "kliep" and cfg["trainer"]["seed"] == 7
    assert parse_override("a.b=[1, 2]") == (["a", "b"], [1, 2])
    with pytest.raises(ConfigError):
        resolve(None, ["trainer.nope=1"], env={})
    with pytest.raises(ConfigError):
        resolve(None, [], env={"XRSIM_SEED": "x"})


def test_semantic_validation():
    with pytest.raises(ConfigError):
        Experiment.default(trainer={"method": "sac"})
    with pytest.raises(ConfigError):
        Experiment.default(trainer={"warm_fraction": 1.0})
    with pytest.raises(ConfigError):
        Experiment.default(ppo={"gamma": 0.0})


def test_snapshot_round_trip(tmp_path):
    exp = Experiment.default(trainer={"K1": 3}, link={"zeta": 12345.0})
    dump(exp.data, tmp_path / "snap.toml")
    back = Experiment.load(tmp_path / "snap.toml", env={})
    assert back.data == exp.data
