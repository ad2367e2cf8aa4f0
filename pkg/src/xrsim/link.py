"""Equivalent-link model: slot-wise channel gain, Shannon rate, slot payload
and the minimum power/energy that carries a payload within one slot."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, LoadOverflowError

LN2 = math.log(2.0)
# 2^60 is still far inside double range; bigger exponents mean the slot load
# is physically infeasible for the configured bandwidth.
MAX_EXPONENT = 60.0


def dbm_per_hz_to_w(dbm):
    """-174 dBm/Hz -> 10^(-17.4) / 1000 W/Hz."""
    return 10.0 ** (dbm / 10.0) / 1000.0


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=np.float64) / 10.0)


def linear_to_db(g):
    return 10.0 * np.log10(g)


@dataclass(frozen=True)
class LinkConfig:
    bandwidth_hz: float = 100e6
    noise_density: float = dbm_per_hz_to_w(-174.0)
    zeta: float = 3e4
    tau_s: float = 0.2
    payload_bits: np.ndarray = field(default_factory=lambda: np.array([64]))

    def __post_init__(self):
        d = np.atleast_1d(np.asarray(self.payload_bits))
        if not (self.bandwidth_hz > 0 and self.noise_density > 0 and self.tau_s > 0):
            raise InvalidArgument("bandwidth, noise density and slot length must be positive")
        if not self.zeta >= 1:
            raise InvalidArgument("energy coefficient zeta must be >= 1")
        if np.any(d <= 0) or np.any(d != np.round(d)):
            raise InvalidArgument("payload bits must be positive integers")
        d = d.astype(np.float64)
        d.setflags(write=False)
        object.__setattr__(self, "payload_bits", d)

    @classmethod
    def from_db(cls, bandwidth_hz, noise_dbm_per_hz, zeta, tau_s, payload_bits):
        return cls(bandwidth_hz, dbm_per_hz_to_w(noise_dbm_per_hz), zeta, tau_s, np.atleast_1d(payload_bits))

    def bits_for(self, n_dims):
        d = self.payload_bits
        if d.size == 1:
            return np.full(n_dims, d[0])
        if d.size != n_dims:
            raise InvalidArgument(f"payload_bits has {d.size} entries for {n_dims} dimensions")
        return d


class ChannelProcess:
    """Slot-wise channel gain in dB: fixed, or a bounded Gaussian random walk
    reflected at the range edges.  g(t) depends only on (config, seed, t)."""

    KINDS = ("fixed_db", "bounded_random_walk")

    def __init__(self, kind="bounded_random_walk", db_lo=-105.0, db_hi=-55.0,
                 step_sigma_db=2.0, seed=0, fixed_db=None, start_db=None):
        if kind not in self.KINDS:
            raise InvalidArgument(f"unknown channel kind {kind!r}")
        if db_lo > db_hi:
            raise InvalidArgument("db_lo must not exceed db_hi")
        if step_sigma_db < 0:
            raise InvalidArgument("step_sigma_db must be nonnegative")
        if kind == "fixed_db":
            if fixed_db is None:
                raise InvalidArgument("fixed_db channel needs a value")
            if not db_lo <= fixed_db <= db_hi:
                raise InvalidArgument(f"fixed_db {fixed_db} outside [{db_lo}, {db_hi}]")
        if start_db is not None and not db_lo <= start_db <= db_hi:
            raise InvalidArgument("start_db outside the configured range")
        self.kind = kind
        self.db_lo = float(db_lo)
        self.db_hi = float(db_hi)
        self.step_sigma_db = float(step_sigma_db)
        self.seed = seed
        self.fixed_db = None if fixed_db is None else float(fixed_db)
        self.start_db = start_db
        self._rng = np.random.default_rng(seed)
        self._series = []

    @classmethod
    def fixed(cls, db, db_lo=-105.0, db_hi=-55.0):
        return cls("fixed_db", db_lo, db_hi, 0.0, 0, fixed_db=db)

    def clone(self):
        return ChannelProcess(self.kind, self.db_lo, self.db_hi, self.step_sigma_db,
                              self.seed, self.fixed_db, self.start_db)

    def _reflect(self, x):
        lo, hi = self.db_lo, self.db_hi
        w = hi - lo
        if w == 0.0:
            return lo
        y = (x - lo) % (2.0 * w)
        if y > w:
            y = 2.0 * w - y
        return min(max(lo + y, lo), hi)

    def _extend(self, t):
        while len(self._series) < t:
            if not self._series:
                if self.start_db is not None:
                    x = float(self.start_db)
                else:
                    x = float(self._rng.uniform(self.db_lo, self.db_hi))
            else:
                x = self._series[-1] + self.step_sigma_db * float(self._rng.standard_normal())
            self._series.append(self._reflect(x))

    def gain_db(self, t):
        if t < 1:
            raise InvalidArgument("slot index starts at 1")
        if self.kind == "fixed_db":
            return self.fixed_db
        self._extend(t)
        return self._series[t - 1]

    def to_dict(self):
        return {
            "kind": self.kind, "db_lo": self.db_lo, "db_hi": self.db_hi,
            "step_sigma_db": self.step_sigma_db, "seed": self.seed,
            "fixed_db": self.fixed_db, "start_db": self.start_db,
        }


def sample_gain(chan, t):
    """Linear channel gain g(t) for slot t >= 1."""
    return float(10.0 ** (chan.gain_db(t) / 10.0))


def slot_payload(cfg, rates):
    """D(t) = tau_s * sum_j d_j f_j in bits."""
    f = np.asarray(rates, dtype=np.float64)
    if np.any(f < 0):
        raise InvalidArgument("sampling rates must be nonnegative")
    d = cfg.bits_for(f.size)
    return float(cfg.tau_s * np.dot(d, f))


def dimension_loads(cfg, rates):
    """Per-dimension slot load tau_s * d (.) f."""
    f = np.asarray(rates, dtype=np.float64)
    return cfg.tau_s * cfg.bits_for(f.size) * f


def shannon_rate(cfg, power, gain):
    """C = B log2(1 + P g / (N0 B)) in bit/s."""
    if power < 0 or gain <= 0:
        raise InvalidArgument("power must be >= 0 and gain > 0")
    snr = power * gain / (cfg.noise_density * cfg.bandwidth_hz)
    return cfg.bandwidth_hz * math.log1p(snr) / LN2


def required_power_energy(cfg, payload_bits, gain):
    """Minimum (power W, energy J) that carries ``payload_bits`` in one slot."""
    if payload_bits < 0 or gain <= 0:
        raise InvalidArgument("payload must be >= 0 and gain > 0")
    x = payload_bits / (cfg.bandwidth_hz * cfg.tau_s)
    if x > MAX_EXPONENT:
        raise LoadOverflowError(
            f"slot load {payload_bits:.3g} bits needs 2^{x:.1f}: infeasible for B={cfg.bandwidth_hz:g} Hz"
        )
    p_req = cfg.noise_density * cfg.bandwidth_hz / gain * math.expm1(x * LN2)
    return p_req, cfg.zeta * cfg.tau_s * p_req
