"""Training orchestration: encoder warm-up, Stage 1 (ratio fit + weighted
PPO under a frozen anchor encoder), Stage 2 (trust-region encoder
fine-tuning), anchor update and beta decay; baselines, evaluation and the
PAC-Bayes style diagnostics.

All randomness comes from generators seeded by (master seed, stage tag,
indices), so a run can be resumed from any outer-iteration checkpoint and
reproduce the remaining metrics exactly.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import align, dratio, rl
from .env import Action, ObservationScaler, TeleopEnv, flatten_state
from .errors import CheckpointError, DegenerateError, InvalidArgument
from .numcore import AdamState, KernelSpec, MLP, adam_step, median_bandwidth

log = logging.getLogger(__name__)

METRICS_VERSION = 1
METRIC_COLUMNS = [
    "schema_version", "method", "outer", "inner", "iteration", "beta",
    "mean_reward", "mean_recon", "mean_energy", "L_pol", "L_val", "entropy",
    "clip_fraction", "approx_kl", "n_eff", "n_eff_frac", "ratio_dev",
]
OUTER_COLUMNS = [
    "schema_version", "method", "outer", "beta", "ratio_converged", "mmd_before", "mmd_after",
    "theta_shift", "latent_drift", "kl_proxy", "n_eff", "deviation",
]
METHODS = ("dr_ppo", "ppo_mmd", "unweighted_ppo")

# stage tags for derived seeds
_T_INIT, _T_SIM, _T_REAL, _T_WARM, _T_S1, _T_S2, _T_EVAL = 1, 10, 20, 30, 40, 50, 90


def derive_seed(*parts):
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


# -- offline data ----------------------------------------------------------

def random_states(env, n, seed):
    """States visited by a uniform-random rate policy, n decisions in total."""
    rng = np.random.default_rng([int(seed), 0xDA7A])
    seeds = rl.episode_seed_stream(seed)
    L = env.cfg.n_levels
    out = np.empty((n, env.cfg.state_dim))
    state = env.reset(next(seeds))
    for i in range(n):
        out[i] = flatten_state(state)
        res = env.step(Action(rng.integers(0, L, size=env.cfg.j_xr)))
        state = env.reset(next(seeds)) if res.done else res.next_state
    return out


class RealDataSource:
    """Offline real-domain states, generated lazily on first access.

    ``reads`` counts accesses so that baselines trained without real data
    can show they never touched it.
    """

    def __init__(self, exp):
        self.exp = exp
        self.reads = 0
        self._cache = None

    def states(self):
        self.reads += 1
        if self._cache is None:
            t = self.exp.trainer
            env = TeleopEnv(self.exp.env_real)
            self._cache = random_states(env, t.n_real, derive_seed(t.seed, _T_REAL))
        return self._cache


def split_sim(states, warm_fraction, seed):
    """Disjoint warm-up / ratio-estimation split of the simulator states."""
    n = states.shape[0]
    perm = np.random.default_rng(seed).permutation(n)
    cut = int(round(warm_fraction * n))
    cut = min(max(cut, 1), n - 1)
    return states[np.sort(perm[:cut])], states[np.sort(perm[cut:])]


# -- state container -------------------------------------------------------

@dataclass
class TrainState:
    method: str
    anchor: MLP                 # theta_0
    encoder: MLP                # theta
    policy: MLP
    value: MLP
    opt_pol: AdamState
    opt_val: AdamState
    prior: np.ndarray           # warm-up parameters (theta, psi, omega) for the KL proxy
    kernel: KernelSpec | None
    beta: float
    outer: int = 0              # completed outer iterations
    ratio: dratio.RatioModel | None = None
    rows: list = field(default_factory=list)
    outer_rows: list = field(default_factory=list)
    last_weights: np.ndarray | None = None

    def agent(self, scaler, n_dims, encoder=None):
        return rl.Agent(encoder or self.anchor, self.policy, self.value, scaler, n_dims)

    def posterior(self):
        return np.concatenate([self.encoder.flat(), self.policy.flat(), self.value.flat()])


def param_hash(*nets):
    h = hashlib.sha256()
    for n in nets:
        h.update(np.ascontiguousarray(n.flat()).tobytes())
    return h.hexdigest()


def init_state(exp, method):
    t = exp.trainer
    env_cfg = exp.env_sim
    dz, H = t.latent_dim, t.hidden
    enc = MLP.init([env_cfg.state_dim, t.enc_hidden, dz], derive_seed(t.seed, _T_INIT, 0))
    pol = MLP.init([dz, H, env_cfg.j_xr * env_cfg.n_levels], derive_seed(t.seed, _T_INIT, 1))
    val = MLP.init([dz, H, 1], derive_seed(t.seed, _T_INIT, 2))
    # near-uniform initial policy
    pol.weights[-1] *= 0.01
    pol.biases[-1][:] = 0.0
    op, ov = rl.make_optimizers(rl.Agent(enc, pol, val, None, env_cfg.j_xr), exp.ppo.lr)
    prior = np.concatenate([enc.flat(), pol.flat(), val.flat()])
    return TrainState(method, enc.copy(), enc.copy(), pol, val, op, ov, prior, None, float(t.beta0))


# -- phases ----------------------------------------------------------------

def warmup_phase(exp, encoder, sim_warm, real_states, scaler):
    """K0 Adam steps on the warm-up objective; returns (theta_0, kernel)."""
    t = exp.trainer
    if sim_warm.shape[0] == 0 or real_states.shape[0] == 0:
        raise InvalidArgument("warm-up needs non-empty simulator and real sets")
    Xs, Xr = scaler(sim_warm), scaler(real_states)
    enc = encoder.copy()
    rng = np.random.default_rng(derive_seed(t.seed, _T_WARM))
    # bandwidth from the merged latents at warm-up start, then frozen
    ns = min(t.warm_batch, Xs.shape[0])
    nr = min(t.warm_batch, Xr.shape[0])
    probe = np.vstack([enc(Xs[rng.choice(Xs.shape[0], ns, replace=False)]),
                       enc(Xr[rng.choice(Xr.shape[0], nr, replace=False)])])
    kernel = KernelSpec.ladder(median_bandwidth(probe))
    opt = AdamState.for_params(enc.n_params, lr=t.enc_lr)
    for _ in range(t.K0):
        bs = Xs[rng.choice(Xs.shape[0], ns, replace=False)]
        br = Xr[rng.choice(Xr.shape[0], nr, replace=False)]
        _, g = align.warmup_loss(enc, bs, br, exp.align, kernel)
        enc.set_flat(adam_step(opt, enc.flat(), g))
    return enc, kernel


def _latent_mmd(encoder, Xs, Xr, kernel, n=256, seed=0):
    rng = np.random.default_rng(seed)
    a = Xs[rng.choice(Xs.shape[0], min(n, Xs.shape[0]), replace=False)]
    b = Xr[rng.choice(Xr.shape[0], min(n, Xr.shape[0]), replace=False)]
    return align.mmd_unweighted(encoder(a), encoder(b), kernel)


def fit_latent_ratio(exp, anchor, sim_ratio_set, real_states, scaler):
    Zs = anchor(scaler(sim_ratio_set))
    Zr = anchor(scaler(real_states))
    cfg = exp.ratio
    if cfg.n_centers > Zr.shape[0]:
        cfg = dratio.RatioFitConfig(**{**cfg.__dict__, "n_centers": Zr.shape[0]})
    model = dratio.fit_ratio(Zs, Zr, cfg)
    dev = float(np.mean(np.abs(model(Zs) - 1.0)))
    return model, dev


def stage1(exp, st, env, scaler, ratio, ratio_dev, use_weights=True):
    """K2 rounds of rollout -> GAE -> weights -> PPO under the frozen anchor."""
    t, ppo = exp.trainer, exp.ppo
    agent = st.agent(scaler, env.cfg.j_xr)
    enc_hash = param_hash(st.anchor, st.encoder)
    rows = []
    for i in range(t.K2):
        seed = derive_seed(t.seed, _T_S1, st.outer, i)
        batch = rl.collect_rollout(env, agent, ppo.rollout_steps, seed)
        if use_weights and ratio is not None:
            w = rl.importance_weights(batch, ratio)
        else:
            w = np.ones(len(batch))
        n_eff = dratio.effective_sample_size(w)
        m = rl.ppo_update(batch, agent, ppo, st.opt_pol, st.opt_val, w=w, seed=seed)
        rows.append({
            "schema_version": METRICS_VERSION, "method": st.method,
            "outer": st.outer + 1, "inner": i + 1, "iteration": st.outer * t.K2 + i + 1,
            "beta": st.beta, "mean_reward": float(batch.rewards.mean()),
            "mean_recon": float(batch.recon.mean()), "mean_energy": float(batch.energy.mean()),
            "L_pol": m["L_pol"], "L_val": m["L_val"], "entropy": m["L_ent"],
            "clip_fraction": m["clip_fraction"], "approx_kl": m["approx_kl"],
            "n_eff": n_eff, "n_eff_frac": n_eff / len(batch), "ratio_dev": ratio_dev,
        })
        st.last_weights = w
    if param_hash(st.anchor, st.encoder) != enc_hash:
        raise AssertionError("stage 1 modified the encoder")
    return rows


def stage2(exp, st, env, scaler, real_states, ratio):
    """K3 proximal-gradient steps on the trust-region encoder objective.

    The quadratic beta |theta - theta_0|^2 is handled in closed form, so the
    step is stable for any beta and theta stays at theta_0 when the MMD
    coefficient is zero.
    """
    t, cfg = exp.trainer, exp.align
    pol_hash = param_hash(st.policy, st.value)
    agent = st.agent(scaler, env.cfg.j_xr)
    theta0 = st.anchor.flat()
    enc = st.encoder.copy()
    Xr_all = scaler(real_states)
    eta = t.stage2_lr
    for j in range(t.K3):
        seed = derive_seed(t.seed, _T_S2, st.outer, j)
        batch = rl.collect_rollout(env, agent, t.stage2_batch, seed)
        Xs = scaler(batch.states)
        rng = np.random.default_rng(seed)
        Xr = Xr_all[rng.choice(Xr_all.shape[0], min(t.stage2_batch, Xr_all.shape[0]), replace=False)]
        if ratio is not None:
            wbar = align.stabilized_weights(Xs, st.anchor, ratio, cfg.eps_w)
        else:
            wbar = np.full(Xs.shape[0], 1.0 / Xs.shape[0])
        _, g_mmd = align._encoder_mmd(enc, Xs, Xr, wbar, st.kernel)
        v = enc.flat()
        enc.set_flat((v / eta + 2.0 * st.beta * theta0 - cfg.lambda_mmd * g_mmd) / (1.0 / eta + 2.0 * st.beta))
    if param_hash(st.policy, st.value) != pol_hash:
        raise AssertionError("stage 2 modified the policy or value network")
    return enc


def pac_diagnostics(weights, kl_estimate, delta, C=1.0):
    """n_eff and sqrt((KL + ln(C/delta)) / (2 n_eff)); delta = 1 is allowed
    as the limiting case."""
    if not 0 < delta <= 1:
        raise InvalidArgument("delta must lie in (0, 1]")
    if not C > 0:
        raise InvalidArgument("C must be positive")
    if kl_estimate < 0:
        raise InvalidArgument("KL estimate must be nonnegative")
    n_eff = dratio.effective_sample_size(weights)
    num = kl_estimate + math.log(C / delta)
    return {"n_eff": n_eff, "deviation_term": math.sqrt(max(num, 0.0) / (2.0 * n_eff))}


def kl_proxy(posterior, prior, s=0.1):
    """KL between isotropic Gaussians N(posterior, s^2 I) and N(prior, s^2 I)."""
    d = np.asarray(posterior) - np.asarray(prior)
    return float(d @ d) / (2.0 * s * s)


# -- checkpoints -------------------------------------------------------------

def _rows_to_csv(rows, columns):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in columns])
    return buf.getvalue()


def _read_csv_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def save_checkpoint(run_dir, st):
    run_dir = Path(run_dir)
    final = run_dir / f"iter_{st.outer}"
    tmp = run_dir / f".iter_{st.outer}.tmp"
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    arrays = {
        "anchor": st.anchor.flat(), "encoder": st.encoder.flat(),
        "policy": st.policy.flat(), "value": st.value.flat(), "prior": st.prior,
    }
    for name, opt in (("opt_pol", st.opt_pol), ("opt_val", st.opt_val)):
        arrays[f"{name}_m"] = opt.m
        arrays[f"{name}_v"] = opt.v
    np.savez(tmp / "params.npz", **arrays)
    (tmp / "ratio.json").write_text(json.dumps(st.ratio.to_dict() if st.ratio else None))
    meta = {
        "method": st.method, "outer": st.outer, "beta": st.beta,
        "layers": {k: list(getattr(st, k).layer_sizes) for k in ("anchor", "policy", "value")},
        "kernel": st.kernel.to_dict() if st.kernel else None,
        "opt": {k: {kk: vv for kk, vv in getattr(st, k).to_dict().items() if kk not in ("m", "v")}
                for k in ("opt_pol", "opt_val")},
        "n_rows": len(st.rows), "n_outer_rows": len(st.outer_rows),
    }
    (tmp / "meta.json").write_text(json.dumps(meta, indent=1))
    if final.exists():
        shutil.rmtree(final)
    os.replace(tmp, final)
    return final


def latest_checkpoint(run_dir):
    run_dir = Path(run_dir)
    its = sorted(int(p.name.split("_")[1]) for p in run_dir.glob("iter_*")
                 if p.is_dir() and (p / "meta.json").exists())
    return run_dir / f"iter_{its[-1]}" if its else None


def load_checkpoint(path, exp=None):
    path = Path(path)
    try:
        meta = json.loads((path / "meta.json").read_text())
        arr = np.load(path / "params.npz")
        ratio_d = json.loads((path / "ratio.json").read_text())
    except (OSError, ValueError, KeyError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    try:
        nets = {}
        for k, key in (("anchor", "anchor"), ("encoder", "anchor"), ("policy", "policy"), ("value", "value")):
            net = MLP.zeros(meta["layers"][key])
            net.set_flat(arr[k])
            nets[k] = net
        opts = {}
        for k in ("opt_pol", "opt_val"):
            d = dict(meta["opt"][k])
            d["m"] = arr[f"{k}_m"].tolist()
            d["v"] = arr[f"{k}_v"].tolist()
            opts[k] = AdamState.from_dict(d)
    except (KeyError, ValueError, InvalidArgument) as exc:
        raise CheckpointError(f"checkpoint {path} is inconsistent: {exc}") from None
    if exp is not None:
        env_cfg = exp.env_sim
        if nets["anchor"].in_dim != env_cfg.state_dim or nets["policy"].out_dim != env_cfg.j_xr * env_cfg.n_levels:
            raise CheckpointError(
                f"checkpoint networks do not match the configured dimensions "
                f"(state {env_cfg.state_dim}, J_xr {env_cfg.j_xr})"
            )
    st = TrainState(
        meta["method"], nets["anchor"], nets["encoder"], nets["policy"], nets["value"],
        opts["opt_pol"], opts["opt_val"], arr["prior"],
        KernelSpec.from_dict(meta["kernel"]) if meta["kernel"] else None,
        float(meta["beta"]), int(meta["outer"]),
        dratio.RatioModel.from_dict(ratio_d) if ratio_d else None,
    )
    run_dir = path.parent
    if (run_dir / "metrics.csv").exists():
        st.rows = _typed_rows(_read_csv_rows(run_dir / "metrics.csv")[: meta["n_rows"]])
    if (run_dir / "outer.csv").exists():
        st.outer_rows = _typed_rows(_read_csv_rows(run_dir / "outer.csv")[: meta["n_outer_rows"]])
    return st


def _typed_rows(rows):
    out = []
    for r in rows:
        d = {}
        for k, v in r.items():
            try:
                d[k] = int(v)
            except ValueError:
                try:
                    d[k] = float(v)
                except ValueError:
                    d[k] = {"True": True, "False": False}.get(v, v)
        out.append(d)
    return out


def write_metrics(run_dir, st):
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    for name, rows, cols in (("metrics.csv", st.rows, METRIC_COLUMNS), ("outer.csv", st.outer_rows, OUTER_COLUMNS)):
        tmp = run_dir / f".{name}.tmp"
        tmp.write_text(_rows_to_csv(rows, cols))
        os.replace(tmp, run_dir / name)


# -- main loop ---------------------------------------------------------------

@dataclass
class RunResult:
    state: TrainState
    run_dir: Path | None
    real_reads: int
    eval: dict | None = None


def train(exp, run_dir=None, method=None, resume=False, stop_after=None, real_source=None):
    """Algorithm driver.  ``method`` selects DR-PPO or one of the learned
    baselines (same code path with switches):

    dr_ppo          warm-up, weighted PPO, trust-region encoder fine-tuning
    ppo_mmd         warm-up, unweighted PPO, encoder frozen after warm-up
    unweighted_ppo  no warm-up and no real data, unweighted PPO

    ``method`` defaults to ``trainer.method`` from the config.
    """
    method = method or exp.trainer.method
    if method not in METHODS:
        raise InvalidArgument(f"unknown method {method!r}")
    t = exp.trainer
    env = TeleopEnv(exp.env_sim)
    scaler = ObservationScaler.for_env(exp.env_sim)
    real = real_source or RealDataSource(exp)
    uses_real = method != "unweighted_ppo"

    st = None
    if resume and run_dir is not None:
        ck = latest_checkpoint(run_dir)
        if ck is not None:
            st = load_checkpoint(ck, exp)
            if st.method != method:
                raise CheckpointError(f"checkpoint method {st.method!r} != requested {method!r}")
    sim_all = random_states(env, t.n_sim, derive_seed(t.seed, _T_SIM))
    S_h, S_iota = split_sim(sim_all, t.warm_fraction, derive_seed(t.seed, _T_SIM, 1))

    if st is None:
        st = init_state(exp, method)
        if uses_real:
            enc, kernel = warmup_phase(exp, st.encoder, S_h, real.states(), scaler)
            st.anchor, st.encoder, st.kernel = enc.copy(), enc.copy(), kernel
            st.prior = st.posterior()

    Xs_iota = scaler(S_iota)
    while st.outer < t.K1:
        ratio, dev, conv = None, float("nan"), True
        if method == "dr_ppo":
            ratio, dev = fit_latent_ratio(exp, st.anchor, S_iota, real.states(), scaler)
            conv = ratio.converged
        st.ratio = ratio
        st.last_weights = None
        st.rows.extend(stage1(exp, st, env, scaler, ratio, dev, use_weights=method == "dr_ppo"))

        mmd_before = mmd_after = shift = drift = float("nan")
        if method == "dr_ppo":
            Xr = scaler(real.states())
            mmd_before = _latent_mmd(st.anchor, Xs_iota, Xr, st.kernel, seed=derive_seed(t.seed, 77, st.outer))
            new = stage2(exp, st, env, scaler, real.states(), ratio)
            mmd_after = _latent_mmd(new, Xs_iota, Xr, st.kernel, seed=derive_seed(t.seed, 77, st.outer))
            shift = float(np.linalg.norm(new.flat() - st.anchor.flat()))
            drift = align.encoder_drift(new, st.anchor, Xr)
            st.encoder = new
            st.anchor = new.copy()
            st.beta *= t.mu
        kl = kl_proxy(st.posterior(), st.prior, t.kl_s)
        pac = pac_diagnostics(st.last_weights, kl, t.pac_delta, t.pac_C)
        st.outer += 1
        st.outer_rows.append({
            "schema_version": METRICS_VERSION, "method": method, "outer": st.outer, "beta": st.beta,
            "ratio_converged": conv, "mmd_before": mmd_before, "mmd_after": mmd_after,
            "theta_shift": shift, "latent_drift": drift, "kl_proxy": kl,
            "n_eff": pac["n_eff"], "deviation": pac["deviation_term"],
        })
        if run_dir is not None:
            write_metrics(run_dir, st)
            save_checkpoint(run_dir, st)
        if stop_after is not None and st.outer >= stop_after:
            break
    return RunResult(st, Path(run_dir) if run_dir else None, real.reads)


# -- evaluation ----------------------------------------------------------------

def greedy_policy(st, exp):
    scaler = ObservationScaler.for_env(exp.env_sim)
    agent = st.agent(scaler, exp.env_sim.j_xr, encoder=st.encoder)
    rng = np.random.default_rng(0)

    def act(x):
        return agent.act(x, rng, greedy=True)[0]
    return act


def full_rate_policy(env_cfg):
    top = np.full(env_cfg.j_xr, env_cfg.n_levels - 1)
    return lambda x: top


def evaluate(policy, env_cfg, episodes, seed, record=False):
    """Per-episode totals over the horizon: recon error, energy (J) and the
    per-slot objective mean recon + lambda_e * energy."""
    env = TeleopEnv(env_cfg)
    env.record = record
    seeds = rl.episode_seed_stream(seed)
    out = {"recon": [], "energy": [], "objective": [], "traces": []}
    for _ in range(episodes):
        state = env.reset(next(seeds))
        R = E = 0.0
        done = False
        while not done:
            res = env.step(Action(policy(flatten_state(state))))
            R += res.recon_cost
            E += res.energy_cost
            state, done = res.next_state, res.done
        T = env_cfg.horizon
        out["recon"].append(R)
        out["energy"].append(E)
        out["objective"].append((R + env_cfg.lambda_e * E) / T)
        if record:
            out["traces"].append(list(env.trace))
    return out


def eval_seed(exp):
    return derive_seed(exp.trainer.seed, _T_EVAL)


def run_baseline(kind, exp, run_dir=None, real_source=None):
    """Train (if needed) and evaluate one baseline on the real domain."""
    t = exp.trainer
    if kind == "full_rate":
        res = evaluate(full_rate_policy(exp.env_real), exp.env_real, t.eval_episodes, eval_seed(exp))
        return RunResult(None, None, 0, res)
    if kind not in ("unweighted_ppo", "ppo_mmd", "dr_ppo"):
        raise InvalidArgument(f"unknown baseline {kind!r}")
    r = train(exp, run_dir, method=kind, real_source=real_source)
    r.eval = evaluate(greedy_policy(r.state, exp), exp.env_real, t.eval_episodes, eval_seed(exp))
    return r
