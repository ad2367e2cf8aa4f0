"""Experiment configuration: TOML documents layered over a named preset.

Every key must exist in the desk preset (which doubles as the schema), so
typos fail loudly with the offending line number.  ``resolve`` returns the
merged plain dict; ``Experiment`` turns it into typed component configs.
"""

from __future__ import annotations

import copy
import os
import re
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from .align import AlignConfig
from .dratio import RatioFitConfig
from .env import DomainConfig, EnvConfig
from .errors import ConfigError
from .link import LinkConfig
from .rl import PPOConfig

SCHEMA_VERSION = 1
SECTIONS = ("motion", "link", "env_sim", "env_real", "ratio", "align", "ppo", "trainer", "output")
PRESETS = ("desk", "full")
TRAIN_METHODS = ("dr_ppo", "ppo_mmd", "unweighted_ppo")


def _read_preset(name):
    text = (resources.files("xrsim") / "presets" / f"{name}.toml").read_text()
    return tomllib.loads(text)


def _line_of(text, section, key=None):
    """1-based line of ``key`` inside ``[section]`` (or of the header)."""
    if text is None:
        return None
    cur = None
    parts = section.split(".") if section else []
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"^\[([^\]]+)\]", line)
        if m:
            cur = m.group(1).strip()
            if key is None and cur == section:
                return n
            continue
        if key is not None and re.match(rf"^{re.escape(key)}\s*=", line):
            if cur == section or (cur is None and not parts):
                return n
    return None


def _merge(base, over, schema, text, path=""):
    for k, v in over.items():
        where = f"{path}.{k}" if path else k
        if k not in schema:
            raise ConfigError(f"unknown key '{where}'", line=_line_of(text, path, k))
        if isinstance(schema[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"'{where}' must be a table", line=_line_of(text, path, k))
            _merge(base[k], v, schema[k], text, where)
            continue
        base[k] = _coerce(v, schema[k], where, _line_of(text, path, k))


def _coerce(v, default, where, line):
    if isinstance(default, bool):
        if not isinstance(v, bool):
            raise ConfigError(f"'{where}' expects true/false, got {v!r}", line=line)
        return v
    if isinstance(default, float):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"'{where}' expects a number, got {v!r}", line=line)
        return float(v)
    if isinstance(default, int):
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"'{where}' expects an integer, got {v!r}", line=line)
        return v
    if isinstance(default, str):
        if not isinstance(v, str):
            raise ConfigError(f"'{where}' expects a string, got {v!r}", line=line)
        return v
    if isinstance(default, list):
        if not isinstance(v, list):
            raise ConfigError(f"'{where}' expects a list, got {v!r}", line=line)
        return v
    return v


def parse_override(item):
    """'section.key=value' -> (['section', 'key'], parsed value)."""
    item = item.lstrip("-")
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form section.key=value")
    dotted, raw = item.split("=", 1)
    path = dotted.strip().split(".")
    if len(path) < 2:
        raise ConfigError(f"override {item!r} needs a section prefix")
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return path, value


def _nest(path, value):
    out = value
    for p in reversed(path):
        out = {p: out}
    return out


def resolve(path=None, overrides=(), env=None):
    """Merged config dict from preset + file + overrides (+ XRSIM_SEED)."""
    env = os.environ if env is None else env
    text, doc = None, {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} not found")
        text = p.read_text()
        try:
            doc = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            m = re.search(r"line (\d+)", str(exc))
            raise ConfigError(f"malformed TOML: {exc}", line=int(m.group(1)) if m else None) from None
    version = doc.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version {version} is not supported (expected {SCHEMA_VERSION})",
                          line=_line_of(text, "", "schema_version"))
    preset = doc.pop("preset", "desk")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}", line=_line_of(text, "", "preset"))

    schema = _read_preset("desk")
    schema.pop("schema_version")
    cfg = copy.deepcopy(schema)
    if preset != "desk":
        full = _read_preset(preset)
        full.pop("schema_version", None)
        full.pop("preset", None)
        _merge(cfg, full, schema, None)
    _merge(cfg, doc, schema, text)
    for item in overrides:
        keys, value = parse_override(item)
        try:
            _merge(cfg, _nest(keys, value), schema, None)
        except ConfigError as exc:
            raise ConfigError(f"override {item!r}: {exc.args[0]}") from None
    if "XRSIM_SEED" in env and env["XRSIM_SEED"] != "":
        try:
            cfg["trainer"]["seed"] = int(env["XRSIM_SEED"])
        except ValueError:
            raise ConfigError(f"XRSIM_SEED={env['XRSIM_SEED']!r} is not an integer") from None
    cfg["schema_version"] = SCHEMA_VERSION
    cfg["preset"] = preset
    return cfg


def dump(cfg, path):
    Path(path).write_text(tomli_w.dumps(cfg))


def layout_bands(j_xr):
    """Head / wrist / hand band layout; 9/16/30 at the full 55 dimensions."""
    if j_xr == 55:
        n = (9, 16, 30)
    else:
        a = j_xr // 3
        n = (a, a, j_xr - 2 * a)
    bands = [(0.01, 0.05)] * n[0] + [(0.05, 0.25)] * n[1] + [(0.1, 0.5)] * n[2]
    return tuple(bands)


@dataclass
class TrainerConfig:
    method: str = "dr_ppo"
    seed: int = 0
    horizon: int = 200
    K0: int = 200
    K1: int = 5
    K2: int = 10
    K3: int = 5
    beta0: float = 1.0
    mu: float = 0.95
    n_sim: int = 4000
    n_real: int = 2000
    warm_fraction: float = 0.5
    pac_delta: float = 0.05
    pac_C: float = 1.0
    kl_s: float = 0.1
    eval_episodes: int = 5
    latent_dim: int = 8
    enc_hidden: int = 32
    enc_lr: float = 1e-3
    stage2_lr: float = 0.05
    warm_batch: int = 128
    stage2_batch: int = 128
    hidden: int = 64

    def __post_init__(self):
        if self.method not in TRAIN_METHODS:
            raise ConfigError(f"trainer.method must be one of {', '.join(TRAIN_METHODS)}")
        if min(self.K1, self.K2, self.K3) < 1 or self.K0 < 0:
            raise ConfigError("K1, K2, K3 must be >= 1 and K0 >= 0")
        if not 0 < self.mu <= 1:
            raise ConfigError("mu must lie in (0, 1]")
        if not 0 < self.warm_fraction < 1:
            raise ConfigError("warm_fraction must lie in (0, 1) so S_h and S_iota are both non-empty")
        if self.n_sim < 2 or self.n_real < 1:
            raise ConfigError("n_sim >= 2 and n_real >= 1 are required")


class Experiment:
    """Typed view of a resolved config dict."""

    def __init__(self, data):
        self.data = data
        try:
            self._build()
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path=None, overrides=(), env=None):
        return cls(resolve(path, overrides, env))

    @classmethod
    def default(cls, **section_overrides):
        items = [f"{s}.{k}={_toml_value(v)}" for s, kv in section_overrides.items() for k, v in kv.items()]
        return cls.load(None, items, env={})

    def _build(self):
        d = self.data
        m, lk, tr, pp, al = d["motion"], d["link"], d["trainer"], d["ppo"], d["align"]
        self.link = LinkConfig.from_db(lk["bandwidth_hz"], lk["noise_dbm_per_hz"], lk["zeta"],
                                       lk["tau_s"], lk["payload_bits"])
        bands = tuple(tuple(b) for b in m["band_profile"]) or layout_bands(m["j_xr"])
        common = dict(
            j_xr=m["j_xr"], j_rb=m["j_rb"], horizon=tr["horizon"],
            rate_levels=tuple(m["rate_levels"]), link=self.link,
            channel=dict(lk["channel"]), lambda_e=lk["lambda_e"],
            ref_interp=m["ref_interp"], run_interp=m["run_interp"],
            retarget_seed=m["retarget_seed"],
            joint_weights=tuple(m["joint_weights"]) or None,
            band_profile=bands, motion_seed=m["motion_seed"],
            dataset_path=m["dataset_path"] or None,
        )
        src = "dataset" if m["dataset_path"] else "synthetic"
        self.env_sim = EnvConfig(**common, domain=DomainConfig("sim", trajectory_source=src, **d["env_sim"]))
        self.env_real = EnvConfig(**common, domain=DomainConfig("real", trajectory_source=src, **d["env_real"]))
        self.ratio = RatioFitConfig(**d["ratio"], seed=tr["seed"])
        self.align = AlignConfig(al["lambda_mmd0"], al["lambda_reg"], al["lambda_mmd"], tr["beta0"], al["eps_w"])
        ppo = dict(pp)
        hidden = ppo.pop("hidden")
        self.ppo = PPOConfig(**ppo)
        self.trainer = TrainerConfig(
            **tr, latent_dim=al["latent_dim"], enc_hidden=al["enc_hidden"], enc_lr=al["enc_lr"], stage2_lr=al["stage2_lr"],
            warm_batch=al["warm_batch"], stage2_batch=al["stage2_batch"], hidden=hidden,
        )
        self.env_sim.bands()
        self.output = dict(d["output"])

    def with_overrides(self, *items):
        data = copy.deepcopy(self.data)
        schema = _read_preset("desk")
        for item in items:
            keys, value = parse_override(item)
            _merge(data, _nest(keys, value), schema, None)
        return Experiment(data)


def _toml_value(v):
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return tomli_w.dumps({"v": list(v)})[4:].strip()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)
