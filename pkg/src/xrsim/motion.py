"""XR motion trajectories, the ideal reference on an execution grid, and the
linear retargeting map to robot joint space."""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, InvalidArgument, RangeError
from .kernels import TIME_TOL

# Emulated XR rate levels for 30 Hz recordings: raw downsampled clock -> nominal
# transmitted rate.  The nominal rate drives payload and energy, the raw rate
# drives the sampling clock.
DATASET_RATE_MAP = {0.0: 0.0, 10.0: 30.0, 20.0: 60.0, 30.0: 120.0}


class InterpKind(str, enum.Enum):
    ZOH = "zoh"
    LINEAR = "linear"

    @property
    def code(self):
        return 0 if self is InterpKind.ZOH else 1


@dataclass(frozen=True)
class MotionTrajectory:
    """Per-dimension samples on uniform grids k / max_rates[j], k = 0..n_j-1."""

    values: tuple
    max_rates: np.ndarray
    duration: float
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        rates = np.asarray(self.max_rates, dtype=np.float64)
        vals = tuple(np.asarray(v, dtype=np.float64) for v in self.values)
        if len(vals) < 1:
            raise InvalidArgument("a trajectory needs at least one dimension")
        if rates.shape != (len(vals),) or np.any(rates <= 0):
            raise InvalidArgument("max_rates must be positive, one per dimension")
        if not self.duration > 0:
            raise InvalidArgument("duration must be positive")
        for j, v in enumerate(vals):
            if v.ndim != 1 or v.size < 1:
                raise InvalidArgument(f"dimension {j} has no samples")
            if not np.all(np.isfinite(v)):
                raise DataError(f"dimension {j} has non-finite samples")
            v.setflags(write=False)
        rates.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "max_rates", rates)

    @property
    def dims(self):
        return len(self.values)

    def times(self, j):
        return np.arange(self.values[j].size) / self.max_rates[j]

    def end_time(self):
        """Latest instant every dimension can be interpolated at."""
        return min((v.size - 1) / f for v, f in zip(self.values, self.max_rates))

    def evaluate(self, j, instants, interp=InterpKind.LINEAR):
        """Reference interpolation of dimension j (non-causal, knot-exact)."""
        v = self.values[j]
        f = self.max_rates[j]
        pos = np.asarray(instants, dtype=np.float64) * f
        if np.any(pos < -TIME_TOL * f) or np.any(pos > (v.size - 1) + TIME_TOL * f):
            raise RangeError(f"instant outside the sampled span of dimension {j}")
        k = np.rint(pos)
        on_knot = np.abs(pos - k) <= TIME_TOL * f
        lo = np.clip(np.floor(pos), 0, v.size - 1).astype(np.int64)
        out = np.empty(pos.shape)
        ki = np.clip(k, 0, v.size - 1).astype(np.int64)
        out[on_knot] = v[ki[on_knot]]
        off = ~on_knot
        if np.any(off):
            if InterpKind(interp) is InterpKind.ZOH:
                out[off] = v[lo[off]]
            else:
                hi = np.minimum(lo[off] + 1, v.size - 1)
                frac = pos[off] - lo[off]
                out[off] = v[lo[off]] + (v[hi] - v[lo[off]]) * frac
        return out

    def time_warped(self, factor):
        """Trajectory q(factor * nu) resampled on the same grids."""
        if not factor > 0:
            raise InvalidArgument("time-warp factor must be positive")
        if factor == 1.0:
            return self
        new_duration = self.duration / factor
        vals = []
        for j in range(self.dims):
            n = max(1, int(math.floor(new_duration * self.max_rates[j] + TIME_TOL)))
            t = np.arange(n) / self.max_rates[j] * factor
            t = np.minimum(t, (self.values[j].size - 1) / self.max_rates[j])
            vals.append(self.evaluate(j, t))
        meta = dict(self.metadata, time_warp=factor)
        return MotionTrajectory(tuple(vals), self.max_rates.copy(), new_duration, meta)


@dataclass(frozen=True)
class RetargetMap:
    matrix: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        M = np.array(self.matrix, dtype=np.float64)
        if M.ndim != 2 or not np.all(np.isfinite(M)):
            raise InvalidArgument("retarget matrix must be a finite 2-D array")
        if not np.allclose(np.abs(M).sum(axis=1), 1.0, rtol=0, atol=1e-12):
            raise InvalidArgument("each retarget row must have unit L1 norm")
        M.setflags(write=False)
        object.__setattr__(self, "matrix", M)

    @classmethod
    def random(cls, j_rb, j_xr, seed):
        rng = np.random.default_rng(seed)
        M = rng.uniform(-1.0, 1.0, size=(j_rb, j_xr))
        M /= np.abs(M).sum(axis=1, keepdims=True)
        return cls(M, seed)

    @property
    def shape(self):
        return self.matrix.shape


@dataclass(frozen=True)
class JointWeights:
    w: np.ndarray

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64)
        if w.ndim != 1 or np.any(w < 0) or not w.sum() > 0:
            raise InvalidArgument("joint weights must be nonnegative with positive sum")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @classmethod
    def uniform(cls, n):
        return cls(np.ones(n))

    @classmethod
    def g1_dex3(cls):
        """43-joint G1 + Dex3 preset: arms 1.0, hands 1.5, legs 0.5, waist 0.75."""
        return cls(np.array([1.0] * 14 + [1.5] * 14 + [0.5] * 12 + [0.75] * 3))

    @classmethod
    def preset(cls, n):
        return cls.g1_dex3() if n == 43 else cls.uniform(n)


def gen_synthetic_trajectory(dims, duration, max_rates, seed, band_profile):
    """Seeded sum of three sinusoids per dimension sampled at its max rate.

    ``band_profile`` is one (lo, hi) Hz band per dimension or a single band
    shared by all.  Amplitudes are uniform in [0.2, 1.0], phases uniform.
    """
    if dims < 1:
        raise InvalidArgument("dims must be >= 1")
    if not duration > 0:
        raise InvalidArgument("duration must be positive")
    rates = np.broadcast_to(np.asarray(max_rates, dtype=np.float64), (dims,)).copy()
    if np.any(rates <= 0):
        raise InvalidArgument("sampling rates must be positive")
    bands = np.asarray(band_profile, dtype=np.float64)
    if bands.ndim == 1:
        bands = np.broadcast_to(bands, (dims, 2))
    if bands.shape != (dims, 2) or np.any(bands[:, 0] > bands[:, 1]) or np.any(bands < 0):
        raise InvalidArgument("band_profile must be (lo, hi) pairs with lo <= hi")
    rng = np.random.default_rng(seed)
    vals, comps = [], []
    for j in range(dims):
        freqs = rng.uniform(bands[j, 0], bands[j, 1], size=3)
        amps = rng.uniform(0.2, 1.0, size=3)
        phases = rng.uniform(0.0, 2.0 * np.pi, size=3)
        n = int(math.floor(duration * rates[j] + TIME_TOL))
        t = np.arange(n) / rates[j]
        q = np.sum(amps[:, None] * np.sin(2.0 * np.pi * freqs[:, None] * t[None, :] + phases[:, None]), axis=0)
        vals.append(q)
        comps.append({"freqs": freqs.tolist(), "amps": amps.tolist(), "phases": phases.tolist()})
    meta = {"source": "synthetic", "seed": seed, "components": comps, "bands": bands.tolist()}
    return MotionTrajectory(tuple(vals), rates, float(duration), meta)


def _default_schema(path):
    return {"format": "jsonl" if path.suffix in (".jsonl", ".ndjson") else "csv", "time": "t", "values": "v"}


def load_trajectory_dataset(path, schema=None):
    """Load a uniformly sampled recording from CSV (t,v1..vJ) or JSON lines.

    The sampling rate is inferred from the timestamps; more than 1% jitter
    in the spacing is rejected.  Timestamps are re-based to start at 0.
    """
    path = Path(path)
    sch = _default_schema(path)
    if schema:
        sch.update(schema)
    if not path.exists():
        raise FileNotFoundError(path)
    if sch["format"] == "jsonl":
        ts, rows = [], []
        with path.open() as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    ts.append(float(rec[sch["time"]]))
                    rows.append([float(x) for x in rec[sch["values"]]])
                except (ValueError, KeyError, TypeError) as exc:
                    raise FormatError(f"{path}:{lineno}: {exc}") from exc
    else:
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise FormatError(f"{path}: empty file") from None
            if not header or header[0].strip() != sch["time"]:
                raise FormatError(f"{path}: first column must be '{sch['time']}'")
            ts, rows = [], []
            for lineno, rec in enumerate(reader, 2):
                if not rec:
                    continue
                if len(rec) != len(header):
                    raise FormatError(f"{path}:{lineno}: expected {len(header)} columns")
                try:
                    ts.append(float(rec[0]))
                    rows.append([float(x) for x in rec[1:]])
                except ValueError as exc:
                    raise FormatError(f"{path}:{lineno}: {exc}") from exc
    if len(ts) < 2:
        raise FormatError(f"{path}: need at least two rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1 or 0 in widths:
        raise FormatError(f"{path}: rows have inconsistent widths")
    t = np.asarray(ts)
    V = np.asarray(rows)
    dt = np.diff(t)
    if np.any(dt <= 0):
        bad = int(np.argmax(dt <= 0)) + 1
        raise FormatError(f"{path}: timestamps not increasing at row {bad + 1}")
    period = float(dt.mean())
    if np.max(np.abs(dt - period)) > 0.01 * period:
        raise FormatError(f"{path}: irregular sample spacing (>1% jitter)")
    if not np.all(np.isfinite(V)):
        raise DataError(f"{path}: non-finite sample values")
    rate = 1.0 / period
    # 30.000000000004 Hz from float spacing is 30 Hz
    if abs(rate - round(rate)) < 1e-6 * rate:
        rate = float(round(rate))
    n = t.size
    meta = {
        "source": str(path),
        "t0": float(t[0]),
        "rate_map": {str(k): v for k, v in DATASET_RATE_MAP.items()},
    }
    return MotionTrajectory(
        tuple(V[:, j].copy() for j in range(V.shape[1])),
        np.full(V.shape[1], rate),
        n / rate,
        meta,
    )


def save_trajectory(traj, path):
    """Write a single-rate trajectory as CSV with repr-exact floats."""
    if len(set(traj.max_rates.tolist())) != 1 or len({v.size for v in traj.values}) != 1:
        raise InvalidArgument("only single-rate trajectories can be written to one table")
    path = Path(path)
    t0 = float(traj.metadata.get("t0", 0.0))
    t = t0 + traj.times(0)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"v{j + 1}" for j in range(traj.dims)])
        for i in range(t.size):
            w.writerow([repr(float(t[i]))] + [repr(float(v[i])) for v in traj.values])
    return path


def exec_instants(exec_period, horizon_slots, slot_len):
    """Execution instants i * exec_period inside [0, horizon_slots * slot_len)."""
    if not exec_period > 0:
        raise InvalidArgument("execution period must be positive")
    n = int(math.ceil(horizon_slots * slot_len / exec_period - TIME_TOL))
    return np.arange(n) * exec_period


def reference_trajectory(traj, exec_period, horizon_slots, slot_len, interp=InterpKind.LINEAR):
    """Ideal XR trajectory evaluated on the execution grid; shape (n_exec, J_xr)."""
    inst = exec_instants(exec_period, horizon_slots, slot_len)
    if inst.size and inst[-1] > traj.end_time() + TIME_TOL:
        raise RangeError(
            f"execution instant {inst[-1]:.6f}s is beyond the trajectory end {traj.end_time():.6f}s"
        )
    return np.stack([traj.evaluate(j, inst, interp) for j in range(traj.dims)], axis=1)


def retarget(rmap, xr_vec):
    """Map XR vectors (..., J_xr) to robot joints (..., J_rb)."""
    x = np.asarray(xr_vec, dtype=np.float64)
    if x.shape[-1] != rmap.matrix.shape[1]:
        raise InvalidArgument(f"expected {rmap.matrix.shape[1]} XR values, got {x.shape[-1]}")
    return x @ rmap.matrix.T
