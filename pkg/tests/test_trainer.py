import math

import numpy as np
import pytest

from conftest import tiny_experiment
from xrsim import align, trainer as T
from xrsim.env import ObservationScaler, TeleopEnv
from xrsim.errors import CheckpointError, InvalidArgument
from xrsim.link import slot_payload
from xrsim.numcore import KernelSpec


def ident(x):
    return np.atleast_2d(x)


def test_pac_oracles():
    d = T.pac_diagnostics(np.ones(100), 0.0, 1.0)
    assert d["n_eff"] == pytest.approx(100) and d["deviation_term"] == 0.0
    w = np.r_[np.ones(50), np.zeros(50)]
    d = T.pac_diagnostics(w, 2.0, 0.05)
    assert d["n_eff"] == 50.0
    assert d["deviation_term"] == pytest.approx(math.sqrt((2 + math.log(20)) / 100), rel=1e-14)
    devs = [T.pac_diagnostics(np.r_[np.ones(k), np.zeros(100 - k)], 1.0, 0.05)["deviation_term"]
            for k in range(1, 101)]
    assert all(b <= a for a, b in zip(devs, devs[1:]))
    for bad in (0.0, 1.5):
        with pytest.raises(InvalidArgument):
            T.pac_diagnostics(np.ones(3), 0.0, bad)


def test_kl_proxy():
    assert T.kl_proxy(np.ones(4), np.zeros(4), s=0.5) == pytest.approx(4 / (2 * 0.25))


def test_split_disjoint_cover():
    X = np.arange(40.0)[:, None]
    a, b = T.split_sim(X, 0.5, 3)
    assert set(a[:, 0]) & set(b[:, 0]) == set()
    assert set(a[:, 0]) | set(b[:, 0]) == set(X[:, 0])


def test_warmup_k0_zero_is_identity():
    exp = tiny_experiment(trainer={"K0": 0})
    st = T.init_state(exp, "dr_ppo")
    X = np.random.default_rng(0).standard_normal((50, 19))
    enc, _ = T.warmup_phase(exp, st.encoder, X, X + 1.0, ident)
    assert np.array_equal(enc.flat(), st.encoder.flat())


def test_warmup_identical_distributions_stable():
    exp = tiny_experiment(trainer={"K0": 100})
    st = T.init_state(exp, "dr_ppo")
    rng = np.random.default_rng(1)
    Xs, Xr = rng.standard_normal((400, 19)), rng.standard_normal((400, 19))
    enc, k = T.warmup_phase(exp, st.encoder, Xs, Xr, ident)
    before = align.mmd_unweighted(st.encoder(Xs), st.encoder(Xr), k)
    after = align.mmd_unweighted(enc(Xs), enc(Xr), k)
    assert after <= max(2 * before, 1e-12) and after <= 0.05


def test_warmup_reduces_shift():
    exp = tiny_experiment(trainer={"K0": 150})
    st = T.init_state(exp, "dr_ppo")
    rng = np.random.default_rng(2)
    Xs, Xr = rng.standard_normal((600, 19)), rng.standard_normal((600, 19)) + 0.7
    enc, k = T.warmup_phase(exp, st.encoder, Xs[:300], Xr[:300], ident)
    hs, hr = Xs[300:], Xr[300:]
    assert align.mmd_unweighted(enc(hs), enc(hr), k) <= align.mmd_unweighted(st.encoder(hs), st.encoder(hr), k)


@pytest.fixture(scope="module")
def stage_setup():
    exp = tiny_experiment()
    env = TeleopEnv(exp.env_sim)
    sc = ObservationScaler.for_env(exp.env_sim)
    real = T.RealDataSource(exp).states()
    st = T.init_state(exp, "dr_ppo")
    st.kernel = KernelSpec.ladder(1.0)
    return exp, env, sc, real, st


def test_stage1_rows_and_encoder_frozen(stage_setup):
    exp, env, sc, real, st = stage_setup
    exp2 = exp.with_overrides("trainer.K2=3")
    st = T.init_state(exp2, "dr_ppo")
    h = T.param_hash(st.anchor, st.encoder)
    rows = T.stage1(exp2, st, env, sc, None, float("nan"), use_weights=False)
    assert len(rows) == 3 and T.param_hash(st.anchor, st.encoder) == h
    assert set(rows[0]) == set(T.METRIC_COLUMNS)


def test_stage2_trust_region_and_freeze(stage_setup):
    exp, env, sc, real, st = stage_setup
    h = T.param_hash(st.policy, st.value)
    st.beta = 1e6
    new = T.stage2(exp, st, env, sc, real, None)
    assert np.linalg.norm(new.flat() - st.anchor.flat()) <= 1e-3
    assert T.param_hash(st.policy, st.value) == h
    st.beta = 1.0
    ex0 = exp.with_overrides("align.lambda_mmd=0.0")
    new = T.stage2(ex0, st, env, sc, real, None)
    assert np.max(np.abs(new.flat() - st.anchor.flat())) <= 1e-12
    moved = T.stage2(exp, st, env, sc, real, None)
    assert np.linalg.norm(moved.flat() - st.anchor.flat()) > 0


def test_ulsif_and_kliep_share_ppo_path(stage_setup):
    exp, env, sc, real, _ = stage_setup
    sim = T.random_states(env, 150, 5)
    for method in ("ulsif", "kliep"):
        ex = exp.with_overrides(f'ratio.method="{method}"')
        st = T.init_state(ex, "dr_ppo")
        ratio, dev = T.fit_latent_ratio(ex, st.anchor, sim, real, sc)
        assert ratio.method == method
        rows = T.stage1(ex, st, env, sc, ratio, dev)
        assert len(rows) == ex.trainer.K2 and np.isfinite(rows[0]["n_eff"])


def test_smoke_train_columns(tmp_path):
    exp = tiny_experiment(trainer={"K1": 1})
    r = T.train(exp, tmp_path / "run")
    head = (tmp_path / "run" / "metrics.csv").read_text().splitlines()[0].split(",")
    assert head == T.METRIC_COLUMNS
    assert (tmp_path / "run" / "outer.csv").read_text().splitlines()[0].split(",") == T.OUTER_COLUMNS
    for f in ("params.npz", "ratio.json", "meta.json"):
        assert (tmp_path / "run" / "iter_1" / f).exists()
    assert r.state.outer == 1


def test_beta_decay():
    exp = tiny_experiment(trainer={"K1": 3, "mu": 0.9, "beta0": 2.0})
    r = T.train(exp)
    assert [row["beta"] for row in r.state.outer_rows] == pytest.approx([2 * 0.9, 2 * 0.81, 2 * 0.729], rel=1e-15)


def test_resume_matches_uninterrupted(tmp_path):
    exp = tiny_experiment(trainer={"K1": 3})
    T.train(exp, tmp_path / "full")
    T.train(exp, tmp_path / "part", stop_after=1)
    T.train(exp, tmp_path / "part", resume=True)
    for f in ("metrics.csv", "outer.csv"):
        assert (tmp_path / "full" / f).read_bytes() == (tmp_path / "part" / f).read_bytes()


def test_checkpoint_errors(tmp_path):
    exp = tiny_experiment(trainer={"K1": 1})
    T.train(exp, tmp_path / "run")
    wider = tiny_experiment(motion={"j_xr": 3, "band_profile": [[0.1, 0.5]] * 3})
    with pytest.raises(CheckpointError):
        T.load_checkpoint(tmp_path / "run" / "iter_1", wider)
    (tmp_path / "run" / "iter_1" / "meta.json").write_text("{")
    with pytest.raises(CheckpointError):
        T.load_checkpoint(tmp_path / "run" / "iter_1")
    two = tiny_experiment(trainer={"K1": 2})
    T.train(two, tmp_path / "other", method="ppo_mmd", stop_after=1)
    with pytest.raises(CheckpointError):
        T.train(two, tmp_path / "other", method="dr_ppo", resume=True)


def test_baselines_contract():
    exp = tiny_experiment(trainer={"K1": 1})
    fr = T.run_baseline("full_rate", exp)
    top = exp.env_real.max_rates
    assert fr.eval["energy"][0] > 0 and fr.state is None
    assert slot_payload(exp.link, top) == 0.2 * 64 * 120 * 6
    src = T.RealDataSource(exp)
    r = T.run_baseline("unweighted_ppo", exp, real_source=src)
    assert src.reads == 0 and r.real_reads == 0
    a = T.train(exp, method="ppo_mmd")
    b = T.train(exp, method="dr_ppo")
    assert np.array_equal(a.state.prior, b.state.prior)
    # PPO-MMD freezes the encoder after warm-up
    assert np.array_equal(a.state.encoder.flat(), a.state.prior[: a.state.encoder.n_params])
    with pytest.raises(InvalidArgument):
        T.run_baseline("oracle", exp)


def test_full_rate_lowest_recon():
    exp = tiny_experiment()
    cfg = exp.env_real
    fr = T.evaluate(T.full_rate_policy(cfg), cfg, 2, 0)
    rng = np.random.default_rng(0)
    rnd = T.evaluate(lambda x: rng.integers(0, 4, 6), cfg, 2, 0)
    assert np.mean(fr["recon"]) < np.mean(rnd["recon"])
