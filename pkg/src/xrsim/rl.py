"""Latent-space PPO: rollouts through a frozen encoder, GAE, ratio-based
importance weights and the weighted clipped objective with exact gradients.

The policy is factorised: one categorical head over the rate levels per
sampling dimension, so the joint log-probability is the sum of the heads.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dratio import normalize_weights
from .env import Action, ObservationScaler, flatten_state
from .errors import DegenerateError, InvalidArgument, NumericalError
from .numcore import AdamState, adam_step

log = logging.getLogger(__name__)


@dataclass
class PPOConfig:
    gamma: float = 0.99
    lambda_gae: float = 0.95
    clip_eps: float = 0.2
    mu_ent: float = 0.01
    mu_val: float = 0.5
    epochs: int = 4
    minibatch: int = 256
    lr: float = 3e-4
    rollout_steps: int = 1000
    normalize_adv: bool = True
    max_grad_norm: float = 0.5

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise InvalidArgument("gamma must lie in (0, 1]")
        if not 0 <= self.lambda_gae <= 1:
            raise InvalidArgument("lambda_gae must lie in [0, 1]")
        if not self.clip_eps > 0:
            raise InvalidArgument("clip_eps must be positive")
        if self.epochs < 1 or self.minibatch < 1 or self.rollout_steps < 1:
            raise InvalidArgument("epochs, minibatch and rollout_steps must be >= 1")


@dataclass
class RolloutBatch:
    states: np.ndarray          # raw flat states (N, S)
    latents: np.ndarray         # Omega_0(scaled state) (N, Z)
    actions: np.ndarray         # level indices (N, J)
    logp: np.ndarray            # joint log-prob under the behaviour policy
    rewards: np.ndarray
    values: np.ndarray          # V_old(z_t)
    dones: np.ndarray           # True where the episode ended at this step
    ends: np.ndarray            # last index of each contiguous segment
    boot_latents: dict = field(default_factory=dict)  # truncated end -> z_{t+1}
    recon: np.ndarray | None = None
    energy: np.ndarray | None = None
    gains_db: np.ndarray | None = None

    def __post_init__(self):
        n = self.states.shape[0]
        if not (self.latents.shape[0] == self.actions.shape[0] == self.logp.size
                == self.rewards.size == self.values.size == self.dones.size == n):
            raise InvalidArgument("rollout arrays have inconsistent lengths")
        if not np.all(np.isfinite(self.logp)):
            raise InvalidArgument("log-probabilities must be finite")
        if n and (self.ends.size == 0 or self.ends[-1] != n - 1 or np.any(np.diff(self.ends) <= 0)):
            raise InvalidArgument("segment ends must partition the batch")

    def __len__(self):
        return self.states.shape[0]


# -- policy heads -------------------------------------------------------

def head_logits(policy, Z, n_dims):
    out = policy(np.atleast_2d(Z))
    return out.reshape(out.shape[0], n_dims, -1)


def log_softmax(logits):
    m = logits.max(axis=-1, keepdims=True)
    s = logits - m
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def joint_logprob(logp_heads, actions):
    """Sum over heads of log pi_j(a_j) for (N, J, L) head log-probs."""
    picked = np.take_along_axis(logp_heads, actions[..., None], axis=-1)[..., 0]
    return picked.sum(axis=1)


def sample_actions(logits, rng, greedy=False):
    if greedy:
        return logits.argmax(axis=-1)
    lp = log_softmax(logits)
    g = rng.gumbel(size=lp.shape)
    return (lp + g).argmax(axis=-1)


class Agent:
    """Frozen anchor encoder + policy and value networks over its latent space."""

    def __init__(self, encoder, policy, value, scaler, n_dims):
        self.encoder = encoder
        self.policy = policy
        self.value = value
        self.scaler = scaler
        self.n_dims = n_dims

    def encode(self, states):
        return self.encoder(self.scaler(states))

    def act(self, state_vec, rng, greedy=False):
        z = self.encode(state_vec)
        logits = head_logits(self.policy, z, self.n_dims)
        a = sample_actions(logits, rng, greedy)
        lp = joint_logprob(log_softmax(logits), a)
        return a[0], float(lp[0]), z[0]


def episode_seed_stream(seed):
    rng = np.random.default_rng([int(seed), 0xE915])
    while True:
        yield int(rng.integers(0, 2**31 - 1))


def collect_rollout(env, agent, steps, seed, greedy=False, episodes=None):
    """Roll the environment for ``steps`` decisions (or whole ``episodes``),
    resetting with seeded episodes; a rollout cut mid-episode keeps the
    next latent for bootstrapping."""
    if episodes is not None:
        steps = episodes * env.cfg.horizon
    act_rng = np.random.default_rng([int(seed), 0xAC7])
    seeds = episode_seed_stream(seed)
    S, Zs, A, LP, R, D = [], [], [], [], [], []
    rec, en, gdb = [], [], []
    ends, boot = [], {}
    state = env.reset(next(seeds))
    for n in range(steps):
        x = flatten_state(state)
        a, lp, z = agent.act(x, act_rng, greedy)
        out = env.step(Action(a))
        S.append(x); Zs.append(z); A.append(a); LP.append(lp)
        R.append(out.reward); D.append(out.done)
        rec.append(out.recon_cost); en.append(out.energy_cost)
        gdb.append(10.0 * np.log10(out.info["gain"]))
        if out.done:
            ends.append(n)
            if n + 1 < steps:
                state = env.reset(next(seeds))
        else:
            state = out.next_state
    if not D[-1]:
        ends.append(steps - 1)
        boot[steps - 1] = agent.encode(flatten_state(state))[0]
    Z = np.array(Zs)
    return RolloutBatch(
        states=np.array(S), latents=Z, actions=np.array(A, dtype=np.int64),
        logp=np.array(LP), rewards=np.array(R), values=agent.value(Z)[:, 0],
        dones=np.array(D, dtype=bool), ends=np.array(ends, dtype=np.int64),
        boot_latents=boot, recon=np.array(rec), energy=np.array(en), gains_db=np.array(gdb),
    )


# -- advantages ----------------------------------------------------------

def gae_arrays(rewards, values, dones, ends, boot_values, gamma, lam):
    """Backward recursion A_t = delta_t + gamma*lam*A_{t+1} within segments.

    ``boot_values`` maps a truncated segment end to V(z_{t+1}); ended
    episodes bootstrap with 0.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    adv = np.zeros_like(r)
    is_end = np.zeros(r.size, dtype=bool)
    is_end[np.asarray(ends, dtype=np.int64)] = True
    nxt = 0.0
    for t in range(r.size - 1, -1, -1):
        if is_end[t]:
            v_next = 0.0 if dones[t] else float(boot_values.get(t, 0.0))
            nxt = 0.0
        else:
            v_next = v[t + 1]
        delta = r[t] + gamma * v_next - v[t]
        nxt = delta + gamma * lam * nxt
        adv[t] = nxt
    return adv


def gae(batch, value_net, cfg):
    """Advantages and value targets G = A + V under ``value_net``."""
    v = value_net(batch.latents)[:, 0] if len(batch) else np.zeros(0)
    boot = {t: float(value_net(z[None, :])[0, 0]) for t, z in batch.boot_latents.items()}
    adv = gae_arrays(batch.rewards, v, batch.dones, batch.ends, boot, cfg.gamma, cfg.lambda_gae)
    return adv, adv + v


def importance_weights(batch, ratio):
    """w_t = iota(z_t) / mean(iota); uniform with a warning when all vanish."""
    raw = np.atleast_1d(ratio(batch.latents))
    try:
        return normalize_weights(raw)
    except DegenerateError:
        log.warning("all ratio values vanished on the batch; using uniform weights")
        return np.ones(len(batch))


# -- losses --------------------------------------------------------------

def ppo_losses(batch, adv, returns, w, policy, value, cfg, idx=None, n_dims=None):
    """Weighted clipped PPO losses and their flat gradients.

    Returns (terms, grad_policy, grad_value) with terms = dict of L_pol,
    L_ent, L_val, total, clip_fraction.
    """
    if idx is None:
        idx = np.arange(len(batch))
    n_dims = n_dims or batch.actions.shape[1]
    Z = batch.latents[idx]
    A = np.asarray(adv, dtype=np.float64)[idx]
    G = np.asarray(returns, dtype=np.float64)[idx]
    W = np.asarray(w, dtype=np.float64)[idx]
    acts = batch.actions[idx]
    N = len(idx)

    out, p_acts = policy.forward(Z, keep=True)
    if not np.all(np.isfinite(out)):
        raise NumericalError("non-finite policy logits")
    logits = out.reshape(N, n_dims, -1)
    lp = log_softmax(logits)
    p = np.exp(lp)
    onehot = np.zeros_like(lp)
    np.put_along_axis(onehot, acts[..., None], 1.0, axis=-1)
    logp_new = (lp * onehot).sum(axis=(1, 2))
    rho = np.exp(logp_new - batch.logp[idx])

    eps = cfg.clip_eps
    unclipped = rho * A
    clipped = np.clip(rho, 1.0 - eps, 1.0 + eps) * A
    L_pol = -float(np.mean(W * np.minimum(unclipped, clipped)))
    # gradient flows through rho only where the unclipped term is the minimum
    active = unclipped <= clipped
    d_rho = np.where(active, -W * A / N, 0.0)
    d_logits = (d_rho * rho)[:, None, None] * (onehot - p)

    H_heads = -(p * lp).sum(axis=-1)                 # (N, J)
    L_ent = float(H_heads.sum(axis=1).mean())
    d_logits -= cfg.mu_ent * (-p * (lp + H_heads[..., None])) / N

    v_out, v_acts = value.forward(Z, keep=True)
    V = v_out[:, 0]
    L_val = float(np.mean(W * (V - G) ** 2))
    d_v = (cfg.mu_val * 2.0 * W * (V - G) / N)[:, None]

    g_pol = policy.backward(p_acts, d_logits.reshape(N, -1))
    g_val = value.backward(v_acts, d_v)
    total = L_pol - cfg.mu_ent * L_ent + cfg.mu_val * L_val
    terms = {
        "L_pol": L_pol, "L_ent": L_ent, "L_val": L_val, "total": total,
        "clip_fraction": float(np.mean(np.abs(rho - 1.0) > eps)),
        "approx_kl": float(np.mean(batch.logp[idx] - logp_new)),
    }
    return terms, g_pol, g_val


def _clip_norm(g, max_norm):
    if max_norm is None or max_norm <= 0:
        return g
    n = float(np.linalg.norm(g))
    return g * (max_norm / n) if n > max_norm else g


def ppo_update(batch, agent, cfg, opt_pol, opt_val, w=None, seed=0):
    """Run ``cfg.epochs`` passes of seeded minibatch Adam steps on (psi, omega).

    Log-probabilities stored in the batch are the psi_old snapshot.  Returns
    the mean of the per-minibatch loss terms.
    """
    n = len(batch)
    adv, ret = gae(batch, agent.value, cfg)
    if w is None:
        w = np.ones(n)
    adv_used = adv
    if cfg.normalize_adv and n > 1:
        adv_used = (adv - adv.mean()) / (adv.std() + 1e-8)
    rng = np.random.default_rng([int(seed), 0x99])
    acc = {}
    count = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for s in range(0, n, cfg.minibatch):
            idx = perm[s : s + cfg.minibatch]
            terms, gp, gv = ppo_losses(batch, adv_used, ret, w, agent.policy, agent.value, cfg,
                                       idx, agent.n_dims)
            agent.policy.set_flat(adam_step(opt_pol, agent.policy.flat(), _clip_norm(gp, cfg.max_grad_norm)))
            agent.value.set_flat(adam_step(opt_val, agent.value.flat(), _clip_norm(gv, cfg.max_grad_norm)))
            for k, v in terms.items():
                acc[k] = acc.get(k, 0.0) + v
            count += 1
    metrics = {k: v / count for k, v in acc.items()}
    metrics["adv_normalized"] = bool(cfg.normalize_adv)
    return metrics


def make_optimizers(agent, lr):
    return (AdamState.for_params(agent.policy.n_params, lr=lr),
            AdamState.for_params(agent.value.n_params, lr=lr))


def default_scaler(env_cfg):
    return ObservationScaler.for_env(env_cfg)
