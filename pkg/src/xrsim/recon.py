"""Per-slot sampling schedules, causal reconstruction on the execution grid,
and the weighted joint error / slot reconstruction cost."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InvalidArgument
from .kernels import TIME_TOL
from .motion import InterpKind


@dataclass(frozen=True)
class SampleSchedule:
    """Capture timestamps per dimension inside slot t."""

    slot: int
    times: tuple

    def count(self, j):
        return self.times[j].size


def build_schedule(rates, t, tau_s):
    """Timestamps (t-1) tau_s + k / f_j, k = 0 .. floor(f_j tau_s) - 1."""
    f = np.asarray(rates, dtype=np.float64)
    if np.any(f < 0):
        raise InvalidArgument("sampling rates must be nonnegative")
    start = (t - 1) * tau_s
    out = []
    for fj in f:
        if fj == 0:
            out.append(np.empty(0))
            continue
        n = int(math.floor(fj * tau_s + TIME_TOL))
        out.append(start + np.arange(n) / fj)
    return SampleSchedule(t, tuple(out))


class ReceivedStore:
    """Samples delivered to the execution module, per dimension, in time order.

    Single-owner and mutable during an episode; ``snapshot`` returns an
    independent copy.
    """

    def __init__(self, initial_pose, capacity=256):
        init = np.asarray(initial_pose, dtype=np.float64).copy()
        if init.ndim != 1 or not np.all(np.isfinite(init)):
            raise InvalidArgument("initial pose must be a finite vector")
        self.initial_pose = init
        J = init.size
        self._times = np.zeros((J, capacity))
        self._values = np.zeros((J, capacity))
        self._counts = np.zeros(J, dtype=np.int64)

    @property
    def dims(self):
        return self.initial_pose.size

    def count(self, j):
        return int(self._counts[j])

    def samples(self, j):
        c = self._counts[j]
        return self._times[j, :c].copy(), self._values[j, :c].copy()

    def _grow(self, need):
        cap = self._times.shape[1]
        if need <= cap:
            return
        new = max(need, 2 * cap)
        for name in ("_times", "_values"):
            old = getattr(self, name)
            buf = np.zeros((old.shape[0], new))
            buf[:, :cap] = old
            setattr(self, name, buf)

    def add(self, j, times, values):
        times = np.asarray(times, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        if times.shape != values.shape or times.ndim != 1:
            raise InvalidArgument("times and values must be equal-length vectors")
        if times.size == 0:
            return
        if not np.all(np.isfinite(values)):
            raise InvalidArgument("received values must be finite")
        c = int(self._counts[j])
        if np.any(np.diff(times) <= 0) or (c > 0 and times[0] <= self._times[j, c - 1]):
            raise InvalidArgument("received timestamps must be strictly increasing")
        self._grow(c + times.size)
        self._times[j, c : c + times.size] = times
        self._values[j, c : c + times.size] = values
        self._counts[j] = c + times.size

    def snapshot(self):
        s = ReceivedStore(self.initial_pose, capacity=max(1, int(self._counts.max(initial=0))))
        for j in range(self.dims):
            s.add(j, *self.samples(j))
        return s

    def interpolate(self, instants, kind=InterpKind.LINEAR):
        inst = np.atleast_1d(np.asarray(instants, dtype=np.float64))
        return kernels.causal_interp(
            self._times, self._values, self._counts, self.initial_pose, inst, InterpKind(kind).code
        )


def causal_interpolate(store, exec_instant, kind=InterpKind.LINEAR):
    """Reconstructed XR vector at one execution instant from samples captured
    no later than it; dimensions without any sample fall back to the initial pose.

    LINEAR extrapolates from the last two samples for at most two of their
    periods, then holds.
    """
    if exec_instant < 0:
        raise InvalidArgument("execution instant must be nonnegative")
    return store.interpolate([exec_instant], kind)[0]


def weighted_rms(diff, w):
    """Row-wise sqrt(sum_j w_j d_j^2 / sum_j w_j)."""
    return np.sqrt(np.sum(w * diff * diff, axis=-1) / w.sum())


def joint_error(recon, ideal, weights):
    r = np.asarray(recon, dtype=np.float64)
    i = np.asarray(ideal, dtype=np.float64)
    w = weights.w if hasattr(weights, "w") else np.asarray(weights, dtype=np.float64)
    if r.shape != i.shape or r.shape[-1] != w.size:
        raise InvalidArgument("recon, ideal and weights must have equal length")
    if not w.sum() > 0:
        raise InvalidArgument("joint weights sum to zero")
    return float(weighted_rms(r - i, w))


def slot_exec_indices(t, exec_period, tau_s):
    """Execution indices i >= 0 with i * exec_period in [(t-1) tau_s, t tau_s)."""
    lo = max(0, int(math.ceil((t - 1) * tau_s / exec_period - TIME_TOL)))
    hi = int(math.ceil(t * tau_s / exec_period - TIME_TOL))
    return range(lo, hi)


def slot_cost(errors_by_exec_index, t, exec_period, tau_s):
    """Mean joint error over the execution indices falling inside slot t."""
    idx = slot_exec_indices(t, exec_period, tau_s)
    if len(idx) == 0:
        raise InvalidArgument(f"slot {t} contains no execution index")
    e = np.asarray(errors_by_exec_index, dtype=np.float64)
    if idx.stop > e.size:
        raise InvalidArgument("error trace does not cover the slot")
    return float(e[idx.start : idx.stop].mean())
