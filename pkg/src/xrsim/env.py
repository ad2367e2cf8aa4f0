"""Slot-level MDP for dimension-wise rate control on a sim or real platform.

Each step applies one rate vector for a decision slot: samples are captured
on the per-dimension clocks, delivered (optionally noisy and late), causally
reconstructed on the platform's execution grid, retargeted and scored
against the ideal full-rate reference.  The reward is the negative of the
slot reconstruction cost plus lambda_E times the minimum transmit energy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import link as linkmod
from .errors import ConfigError, InvalidArgument, StateError
from .kernels import TIME_TOL
from .link import ChannelProcess, LinkConfig
from .motion import (
    InterpKind,
    JointWeights,
    RetargetMap,
    gen_synthetic_trajectory,
    load_trajectory_dataset,
    reference_trajectory,
    retarget,
)
from .recon import ReceivedStore, build_schedule, slot_exec_indices, weighted_rms


@dataclass(frozen=True)
class DomainConfig:
    platform: str = "sim"
    exec_freq: float = 120.0
    sensor_noise_sigma: float = 0.0
    actuation_lag_slots: int = 0
    time_warp: float = 1.0
    trajectory_source: str = "synthetic"

    def __post_init__(self):
        if self.platform not in ("sim", "real"):
            raise InvalidArgument(f"platform must be 'sim' or 'real', got {self.platform!r}")
        if self.trajectory_source not in ("synthetic", "dataset"):
            raise InvalidArgument("trajectory_source must be 'synthetic' or 'dataset'")
        if not self.exec_freq > 0:
            raise InvalidArgument("exec_freq must be positive")
        if np.any(np.asarray(self.sensor_noise_sigma) < 0):
            raise InvalidArgument("sensor noise must be nonnegative")
        if self.actuation_lag_slots < 0 or int(self.actuation_lag_slots) != self.actuation_lag_slots:
            raise InvalidArgument("lag must be a nonnegative whole number of slots")
        if not self.time_warp > 0:
            raise InvalidArgument("time_warp must be positive")
        if self.platform == "sim" and (
            np.any(np.asarray(self.sensor_noise_sigma) != 0)
            or self.actuation_lag_slots != 0
            or self.time_warp != 1.0
        ):
            raise InvalidArgument("the sim platform carries no shift knobs")

    @property
    def exec_period(self):
        return 1.0 / self.exec_freq


@dataclass(frozen=True)
class EnvConfig:
    j_xr: int = 6
    j_rb: int = 4
    horizon: int = 200
    rate_levels: tuple = (0.0, 30.0, 60.0, 120.0)
    link: LinkConfig = field(default_factory=LinkConfig)
    channel: dict = field(default_factory=dict)
    lambda_e: float = 5.0
    ref_interp: InterpKind = InterpKind.LINEAR
    run_interp: InterpKind = InterpKind.LINEAR
    retarget_seed: int = 0
    joint_weights: tuple | None = None
    band_profile: tuple = ((0.2, 0.8),)
    motion_seed: int = 0
    dataset_path: str | None = None
    dataset_schema: dict | None = None
    domain: DomainConfig = field(default_factory=DomainConfig)

    def __post_init__(self):
        if self.j_xr < 1 or self.j_rb < 1 or self.horizon < 1:
            raise InvalidArgument("dimensions and horizon must be >= 1")
        levels = self.levels_matrix()
        if np.any(levels[:, 0] != 0) or np.any(np.diff(levels, axis=1) <= 0):
            raise InvalidArgument("each rate set must start at 0 and increase strictly")
        if not self.lambda_e >= 0:
            raise InvalidArgument("lambda_e must be nonnegative")
        object.__setattr__(self, "ref_interp", InterpKind(self.ref_interp))
        object.__setattr__(self, "run_interp", InterpKind(self.run_interp))

    def levels_matrix(self):
        lv = np.asarray(self.rate_levels, dtype=np.float64)
        if lv.ndim == 1:
            lv = np.broadcast_to(lv, (self.j_xr, lv.size))
        if lv.shape[0] != self.j_xr:
            raise InvalidArgument("per-dimension rate sets must match j_xr")
        return np.array(lv)

    @property
    def n_levels(self):
        return self.levels_matrix().shape[1]

    @property
    def max_rates(self):
        return self.levels_matrix()[:, -1]

    @property
    def state_dim(self):
        return 1 + 3 * self.j_rb + self.j_xr

    def bands(self):
        b = np.asarray(self.band_profile, dtype=np.float64)
        if b.ndim == 1:
            b = b[None, :]
        if b.shape[0] == 1:
            b = np.repeat(b, self.j_xr, axis=0)
        if b.shape != (self.j_xr, 2):
            raise InvalidArgument("band_profile needs one (lo, hi) band or one per dimension")
        return b

    def with_domain(self, **kw):
        return replace(self, domain=replace(self.domain, **kw))

    def with_fixed_channel(self, db):
        """Same environment with the channel held at ``db`` every slot."""
        ch = dict(self.channel, kind="fixed_db", fixed_db=float(db))
        ChannelProcess(**ch)  # validates db against the configured range
        return replace(self, channel=ch)


@dataclass(frozen=True)
class EnvState:
    gain: float
    q_hat: np.ndarray
    v_hat: np.ndarray
    a_hat: np.ndarray
    kappa_prev: np.ndarray


@dataclass(frozen=True)
class Action:
    level_index: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "level_index", np.asarray(self.level_index, dtype=np.int64))


@dataclass(frozen=True)
class StepOutcome:
    next_state: EnvState
    reward: float
    recon_cost: float
    energy_cost: float
    payload_bits: float
    done: bool = False
    info: dict = field(default_factory=dict)


def flatten_state(s):
    """[g, q_hat, v_hat, a_hat, kappa] as one vector."""
    return np.concatenate([[s.gain], s.q_hat, s.v_hat, s.a_hat, s.kappa_prev])


def unflatten_state(vec, j_rb, j_xr):
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (1 + 3 * j_rb + j_xr,):
        raise InvalidArgument(f"state vector of length {vec.size} does not fit j_rb={j_rb}, j_xr={j_xr}")
    r = j_rb
    return EnvState(
        float(vec[0]), vec[1 : 1 + r].copy(), vec[1 + r : 1 + 2 * r].copy(),
        vec[1 + 2 * r : 1 + 3 * r].copy(), vec[1 + 3 * r :].copy(),
    )


@dataclass(frozen=True)
class ObservationScaler:
    """Fixed, data-independent squashing of raw states before the encoder.

    The raw state mixes a channel gain near 1e-10, joint positions of order
    one, finite-difference accelerations of order 1e3 and loads in bits; the
    encoder sees gain in normalised dB, log-compressed velocity and
    acceleration, and loads divided by their full-rate value.
    """

    j_rb: int
    j_xr: int
    kappa_max: np.ndarray
    db_mid: float = -80.0
    db_half: float = 25.0
    v_scale: float = 1.0
    a_scale: float = 10.0

    @classmethod
    def for_env(cls, cfg):
        kmax = linkmod.dimension_loads(cfg.link, cfg.max_rates)
        return cls(cfg.j_rb, cfg.j_xr, kmax)

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        r = self.j_rb
        g_db = 10.0 * np.log10(np.maximum(x[:, :1], 1e-300))
        out = np.empty_like(x)
        out[:, :1] = (g_db - self.db_mid) / self.db_half
        out[:, 1 : 1 + r] = x[:, 1 : 1 + r]
        v = x[:, 1 + r : 1 + 2 * r] / self.v_scale
        a = x[:, 1 + 2 * r : 1 + 3 * r] / self.a_scale
        out[:, 1 + r : 1 + 2 * r] = np.sign(v) * np.log1p(np.abs(v))
        out[:, 1 + 2 * r : 1 + 3 * r] = np.sign(a) * np.log1p(np.abs(a))
        out[:, 1 + 3 * r :] = x[:, 1 + 3 * r :] / self.kappa_max
        return out


class TeleopEnv:
    """One environment instance per rollout worker; not thread-safe."""

    def __init__(self, cfg, dataset=None):
        self.cfg = cfg
        self.levels = cfg.levels_matrix()
        self.rmap = RetargetMap.random(cfg.j_rb, cfg.j_xr, cfg.retarget_seed)
        w = cfg.joint_weights
        self.weights = JointWeights.preset(cfg.j_rb) if w is None else JointWeights(np.asarray(w))
        if self.weights.w.size != cfg.j_rb:
            raise ConfigError("joint_weights length must equal j_rb")
        self.bits = cfg.link.bits_for(cfg.j_xr)
        self._dataset = dataset
        self.t = None
        self.record = False
        self.trace = []

    @property
    def exec_period(self):
        return self.cfg.domain.exec_period

    # -- episode setup -------------------------------------------------
    def _trajectory(self, episode_seed):
        cfg = self.cfg
        dom = cfg.domain
        need = cfg.horizon * cfg.link.tau_s
        if dom.trajectory_source == "dataset":
            if self._dataset is None:
                if cfg.dataset_path is None:
                    raise ConfigError("dataset trajectory source needs dataset_path")
                self._dataset = load_trajectory_dataset(cfg.dataset_path, cfg.dataset_schema)
            traj = self._dataset
            if traj.dims != cfg.j_xr:
                raise ConfigError(f"dataset has {traj.dims} dimensions, config expects {cfg.j_xr}")
        else:
            # margin of one full-rate period so the last capture instant is a knot
            duration = need * max(1.0, dom.time_warp) + 1.0
            traj = gen_synthetic_trajectory(
                cfg.j_xr, duration, cfg.max_rates, [cfg.motion_seed, int(episode_seed)], cfg.bands()
            )
        traj = traj.time_warped(dom.time_warp)
        last = need - self.exec_period
        if traj.end_time() + TIME_TOL < last:
            raise ConfigError(
                f"trajectory covers {traj.end_time():.3f}s, horizon needs {last:.3f}s"
            )
        return traj

    def _clock_rates(self, nominal):
        rm = self.traj.metadata.get("rate_map")
        if not rm:
            return nominal
        inv = {float(v): float(k) for k, v in rm.items()}
        try:
            return np.array([inv[float(f)] for f in nominal])
        except KeyError as exc:
            raise ConfigError(f"rate {exc} has no emulated sampling clock") from None

    def reset(self, episode_seed=0):
        cfg = self.cfg
        self.traj = self._trajectory(episode_seed)
        ch = dict(cfg.channel)
        base = ch.pop("seed", 0)
        self.channel = ChannelProcess(seed=[int(base), int(episode_seed)], **ch)
        self._noise_rng = np.random.default_rng([int(episode_seed), 0x5E45])
        self.ref_xr = reference_trajectory(
            self.traj, self.exec_period, cfg.horizon, cfg.link.tau_s, cfg.ref_interp
        )
        self.ideal_rb = retarget(self.rmap, self.ref_xr)
        init = self.ref_xr[0].copy()
        self.store = ReceivedStore(init, capacity=int(cfg.max_rates.max() * cfg.link.tau_s * 8) + 8)
        self.init_rb = retarget(self.rmap, init)
        self.q_hist = np.empty((self.ref_xr.shape[0], cfg.j_rb))
        self.n_done = 0
        self._pending = []
        self.t = 1
        self.trace = []
        self.state = self._observe(np.zeros(cfg.j_xr))
        return self.state

    # -- dynamics ------------------------------------------------------
    def _q_at(self, i):
        return self.init_rb if i < 0 else self.q_hist[i]

    def _observe(self, kappa):
        tau = self.exec_period
        # latest index already executed when slot t starts (slots are half-open)
        tbar = slot_exec_indices(self.t, tau, self.cfg.link.tau_s).start - 1
        q0, q1, q2 = self._q_at(tbar), self._q_at(tbar - 1), self._q_at(tbar - 2)
        return EnvState(
            gain=linkmod.sample_gain(self.channel, self.t),
            q_hat=q0.copy(),
            v_hat=(q0 - q1) / tau,
            a_hat=(q0 - 2.0 * q1 + q2) / tau**2,
            kappa_prev=np.asarray(kappa, dtype=np.float64).copy(),
        )

    def rates_for(self, action):
        idx = action.level_index if isinstance(action, Action) else np.asarray(action, dtype=np.int64)
        if idx.shape != (self.cfg.j_xr,):
            raise InvalidArgument(f"action needs {self.cfg.j_xr} level indices")
        if np.any(idx < 0) or np.any(idx >= self.levels.shape[1]):
            raise InvalidArgument("rate level index out of range")
        return self.levels[np.arange(self.cfg.j_xr), idx]

    def step(self, action):
        cfg = self.cfg
        if self.t is None or self.t > cfg.horizon:
            raise StateError("episode is not active; call reset()")
        t = self.t
        rates = self.rates_for(action)
        sched = build_schedule(self._clock_rates(rates), t, cfg.link.tau_s)
        sigma = np.broadcast_to(np.asarray(cfg.domain.sensor_noise_sigma, dtype=np.float64), (cfg.j_xr,))
        captured = []
        for j, ts in enumerate(sched.times):
            vals = self.traj.evaluate(j, ts)
            if sigma[j] > 0 and ts.size:
                vals = vals + sigma[j] * self._noise_rng.standard_normal(ts.size)
            captured.append((ts, vals))
        self._pending.append((t + cfg.domain.actuation_lag_slots, captured))
        still = []
        for due, batch in self._pending:
            if due <= t:
                for j, (ts, vals) in enumerate(batch):
                    self.store.add(j, ts, vals)
            else:
                still.append((due, batch))
        self._pending = still

        idx = slot_exec_indices(t, self.exec_period, cfg.link.tau_s)
        inst = np.arange(idx.start, idx.stop) * self.exec_period
        q_xr = self.store.interpolate(inst, cfg.run_interp)
        q_rb = retarget(self.rmap, q_xr)
        self.q_hist[idx.start : idx.stop] = q_rb
        self.n_done = idx.stop
        errs = weighted_rms(q_rb - self.ideal_rb[idx.start : idx.stop], self.weights.w)
        recon_cost = float(errs.mean())

        payload = linkmod.slot_payload(cfg.link, rates)
        g = self.state.gain
        _, energy = linkmod.required_power_energy(cfg.link, payload, g)
        reward = -(recon_cost + cfg.lambda_e * energy)
        kappa = linkmod.dimension_loads(cfg.link, rates)

        if self.record:
            self.trace.append({
                "t": t,
                "time_s": (t - 1) * cfg.link.tau_s,
                "q_xr": [float(v) for v in self.ref_xr[idx.start]],
                "g_db": float(linkmod.linear_to_db(g)),
                "action": [int(a) for a in np.asarray(getattr(action, "level_index", action))],
                "rates_hz": [float(r) for r in rates],
                "D_bits": payload,
                "E_req_J": energy,
                "recon_cost": recon_cost,
                "reward": reward,
            })

        self.t = t + 1
        done = self.t > cfg.horizon
        self.state = self._observe(kappa)
        return StepOutcome(
            next_state=self.state,
            reward=reward,
            recon_cost=recon_cost,
            energy_cost=energy,
            payload_bits=payload,
            done=done,
            info={"rates": rates, "gain": g, "exec_errors": errs},
        )


def write_trace(records, path):
    """Episode trace as JSON lines, one object per slot."""
    path = Path(path)
    with path.open("w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return path

