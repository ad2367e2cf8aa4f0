"""Command-line front end.

    xrsim train [CONFIG] [--method M] [--run-dir DIR] [--resume] [--section.key=value ...]
    xrsim eval RUN [--fixed-db DB | --sweep-db DB,DB,...] [--compare RUN ...]
    xrsim export-traces RUN --dims 0,1 --window 0,10000
    xrsim baseline KIND [CONFIG] [--section.key=value ...]
    xrsim pac-report RUN

Exit codes: 0 success, 2 config error, 3 checkpoint error, 4 query error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import trainer
from .config import Experiment
from .errors import CheckpointError, ConfigError, InvalidArgument, QueryError

log = logging.getLogger("xrsim")

EXIT_OK, EXIT_CONFIG, EXIT_CHECKPOINT, EXIT_QUERY = 0, 2, 3, 4
SNAPSHOT = "config.toml"
SWEEP_DEFAULT = (-105.0, -95.0, -85.0, -75.0, -65.0, -55.0)
EVAL_COLUMNS = ["policy", "method", "domain", "channel_db", "episodes",
                "recon_total", "energy_total_J", "objective"]
TRACE_COLUMNS = ["policy", "channel_db", "episode", "t", "time_ms", "dim", "value", "rate_hz", "level"]
BASELINE_COLUMNS = ["kind", "seed", "episodes", "recon_total", "energy_total_J", "objective", "real_reads", "run_dir"]


# -- helpers -------------------------------------------------------------------

def _split_overrides(extra):
    """Turn leftover ``--section.key=value`` / ``--section.key value`` args
    into override strings."""
    out, i = [], 0
    while i < len(extra):
        item = extra[i]
        if not item.startswith("--") or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"unrecognised argument {item!r}")
        if "=" in item:
            out.append(item[2:])
            i += 1
        elif i + 1 < len(extra) and not extra[i + 1].startswith("--"):
            out.append(f"{item[2:]}={extra[i + 1]}")
            i += 2
        else:
            raise ConfigError(f"override {item!r} has no value")
    return out


def _load_exp(path, overrides, method=None):
    items = list(overrides)
    if method is not None:
        items.append(f'trainer.method="{method}"')
    return Experiment.load(path, items)


def _run_dir(exp, explicit=None, suffix=""):
    if explicit:
        return Path(explicit)
    out = exp.output
    rid = out["run_id"] or f"{exp.trainer.method}_seed{exp.trainer.seed}"
    return Path(out["root"]) / f"run_{rid}{suffix}"


def _snapshot(exp, run_dir):
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    config_mod.dump(exp.data, run_dir / SNAPSHOT)


def _exp_from_run(run_dir):
    snap = Path(run_dir) / SNAPSHOT
    if not snap.is_file():
        raise CheckpointError(f"{run_dir} has no {SNAPSHOT} snapshot")
    return Experiment.load(snap, env={})


def _checkpoint_for(path):
    """A run directory (latest checkpoint) or an ``iter_k`` directory."""
    path = Path(path)
    if (path / "meta.json").is_file():
        return path.parent, path
    if not path.is_dir():
        raise CheckpointError(f"{path} is not a run or checkpoint directory")
    ck = trainer.latest_checkpoint(path)
    if ck is None:
        raise CheckpointError(f"{path} holds no checkpoint")
    return path, ck


def _parse_floats(text, what):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{what} must be a comma-separated list of numbers") from None


def _parse_ints(text, what):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{what} must be a comma-separated list of integers") from None


def _write_csv(path, columns, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in columns])
    tmp.replace(path)


def _emit(columns, rows):
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([f"{r[c]:.6g}" if isinstance(r[c], float) else r[c] for c in columns])


# -- commands --------------------------------------------------------------------

def cmd_train(args, overrides):
    exp = _load_exp(args.config, overrides, args.method)
    run_dir = _run_dir(exp, args.run_dir)
    _snapshot(exp, run_dir)
    res = trainer.train(exp, run_dir, resume=args.resume, stop_after=args.stop_after)
    st = res.state
    log.info("trained %s for %d outer iterations, beta=%.6g", st.method, st.outer, st.beta)
    print(run_dir)
    return EXIT_OK


def _policy_rows(label, method, policy, exp, env_cfg, dbs, episodes, domain, traces):
    rows = []
    for db in dbs:
        try:
            cfg = env_cfg.with_fixed_channel(db)
        except InvalidArgument as exc:
            raise ConfigError(str(exc)) from None
        res = trainer.evaluate(policy, cfg, episodes, trainer.eval_seed(exp), record=traces is not None)
        rows.append({
            "policy": label, "method": method, "domain": domain, "channel_db": float(db),
            "episodes": episodes, "recon_total": float(np.mean(res["recon"])),
            "energy_total_J": float(np.mean(res["energy"])),
            "objective": float(np.mean(res["objective"])),
        })
        if traces is not None:
            traces.extend(_trace_rows(label, db, res["traces"], cfg))
    return rows


def _trace_rows(label, db, episodes, cfg):
    out = []
    for e, trace in enumerate(episodes):
        for rec in trace:
            for j, (rate, lvl) in enumerate(zip(rec["rates_hz"], rec["action"])):
                out.append({
                    "policy": label, "channel_db": float(db), "episode": e, "t": rec["t"],
                    "time_ms": round(rec["time_s"] * 1000.0, 6), "dim": j,
                    "value": rec["q_xr"][j], "rate_hz": float(rate), "level": lvl,
                })
    return out


def cmd_eval(args, overrides):
    if overrides:
        raise ConfigError("eval takes no config overrides; it uses the run snapshot")
    run_dir, ck = _checkpoint_for(args.run)
    exp = _exp_from_run(run_dir)
    st = trainer.load_checkpoint(ck, exp)
    if args.sweep_db is not None:
        dbs = _parse_floats(args.sweep_db, "--sweep-db") or list(SWEEP_DEFAULT)
    elif args.fixed_db is not None:
        dbs = [args.fixed_db]
    else:
        dbs = list(SWEEP_DEFAULT)
    env_cfg = exp.env_real if args.domain == "real" else exp.env_sim
    episodes = args.episodes or exp.trainer.eval_episodes
    traces = []
    rows = _policy_rows("trained", st.method, trainer.greedy_policy(st, exp), exp, env_cfg,
                        dbs, episodes, args.domain, traces)
    rows += _policy_rows("full_rate", "full_rate", trainer.full_rate_policy(env_cfg), exp, env_cfg,
                         dbs, episodes, args.domain, None)
    for other in args.compare or []:
        o_dir, o_ck = _checkpoint_for(other)
        o_exp = _exp_from_run(o_dir)
        o_st = trainer.load_checkpoint(o_ck, o_exp)
        if o_exp.env_sim.state_dim != exp.env_sim.state_dim or o_exp.env_sim.j_xr != exp.env_sim.j_xr:
            raise CheckpointError(f"{other} was trained for different dimensions")
        rows += _policy_rows(Path(o_dir).name, o_st.method, trainer.greedy_policy(o_st, o_exp), exp,
                             env_cfg, dbs, episodes, args.domain, None)
    out = Path(args.out) if args.out else Path(run_dir) / "eval"
    _write_csv(out / "eval.csv", EVAL_COLUMNS, rows)
    _write_csv(out / "traces.csv", TRACE_COLUMNS, traces)
    _emit(EVAL_COLUMNS, rows)
    return EXIT_OK


def cmd_export_traces(args, overrides):
    if overrides:
        raise ConfigError("export-traces takes no config overrides")
    run_dir = Path(args.run)
    exp = _exp_from_run(run_dir)
    src = run_dir / "eval" / "traces.csv"
    if not src.is_file():
        raise QueryError(f"no recorded traces under {run_dir}; run `xrsim eval` first")
    dims = _parse_ints(args.dims, "--dims")
    bad = [d for d in dims if not 0 <= d < exp.env_sim.j_xr]
    if bad or not dims:
        raise QueryError(f"dimensions {bad or dims} outside 0..{exp.env_sim.j_xr - 1}")
    win = _parse_floats(args.window, "--window")
    if len(win) != 2 or win[1] <= win[0]:
        raise QueryError("--window needs t0,t1 in ms with t1 > t0")
    with open(src, newline="") as fh:
        rows = list(csv.DictReader(fh))
    dbs = sorted({float(r["channel_db"]) for r in rows})
    db = args.db if args.db is not None else (dbs[0] if dbs else None)
    keep = [
        r for r in rows
        if r["policy"] == args.policy and float(r["channel_db"]) == db and int(r["episode"]) == args.episode
        and int(r["dim"]) in dims and win[0] <= float(r["time_ms"]) < win[1]
    ]
    if not keep:
        raise QueryError(f"no trace rows for policy {args.policy!r} at {db} dB in the requested window")
    cols = ["dim", "time_ms", "value", "rate_hz"]
    keep.sort(key=lambda r: (int(r["dim"]), float(r["time_ms"])))
    out_rows = [{c: r[c] for c in cols} for r in keep]
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, cols, lineterminator="\n")
            w.writeheader()
            w.writerows(out_rows)
    else:
        w = csv.DictWriter(sys.stdout, cols, lineterminator="\n")
        w.writeheader()
        w.writerows(out_rows)
    return EXIT_OK


def cmd_baseline(args, overrides):
    kinds = ("full_rate",) + trainer.METHODS if args.kind == "all" else (args.kind,)
    base = _load_exp(args.config, overrides)
    out_dir = Path(args.out_dir) if args.out_dir else Path(base.output["root"]) / f"baselines_seed{base.trainer.seed}"
    _snapshot(base, out_dir)
    rows = []
    for kind in kinds:
        run_dir = None
        exp = base
        if kind != "full_rate":
            exp = _load_exp(args.config, overrides, kind)
            run_dir = out_dir / f"run_{kind}"
            _snapshot(exp, run_dir)
        res = trainer.run_baseline(kind, exp, run_dir)
        ev = res.eval
        rows.append({
            "kind": kind, "seed": exp.trainer.seed, "episodes": len(ev["objective"]),
            "recon_total": float(np.mean(ev["recon"])), "energy_total_J": float(np.mean(ev["energy"])),
            "objective": float(np.mean(ev["objective"])), "real_reads": res.real_reads,
            "run_dir": str(run_dir) if run_dir else "",
        })
    _write_csv(out_dir / "baselines.csv", BASELINE_COLUMNS, rows)
    _emit(BASELINE_COLUMNS, rows)
    return EXIT_OK


def cmd_pac_report(args, overrides):
    if overrides:
        raise ConfigError("pac-report takes no config overrides")
    run_dir = Path(args.run)
    exp = _exp_from_run(run_dir)
    src = run_dir / "outer.csv"
    if not src.is_file():
        raise CheckpointError(f"{run_dir} has no outer.csv")
    t = exp.trainer
    with open(src, newline="") as fh:
        outer = list(csv.DictReader(fh))
    cols = ["outer", "beta", "n_eff", "kl_proxy", "delta", "C", "deviation", "note"]
    rows = []
    for r in outer:
        rows.append({
            "outer": int(r["outer"]), "beta": float(r["beta"]), "n_eff": float(r["n_eff"]),
            "kl_proxy": float(r["kl_proxy"]), "delta": t.pac_delta, "C": t.pac_C,
            "deviation": float(r["deviation"]),
            "note": f"C is a declared constant; KL is an isotropic-Gaussian proxy (s={t.kl_s})",
        })
    _write_csv(run_dir / "pac_report.csv", cols, rows)
    _emit(cols, rows)
    return EXIT_OK


# -- entry point -------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="xrsim", description="Sim-to-real sampling-rate control experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run the training loop and write a run directory")
    t.add_argument("config", nargs="?")
    t.add_argument("--method", choices=trainer.METHODS)
    t.add_argument("--run-dir")
    t.add_argument("--resume", action="store_true")
    t.add_argument("--stop-after", type=int, help="stop after this many outer iterations")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint under fixed channel conditions")
    e.add_argument("run", help="run directory or iter_k checkpoint")
    g = e.add_mutually_exclusive_group()
    g.add_argument("--fixed-db", type=float)
    g.add_argument("--sweep-db", help="comma-separated dB list (default -105..-55 step 10)")
    e.add_argument("--domain", choices=("real", "sim"), default="real")
    e.add_argument("--episodes", type=int)
    e.add_argument("--compare", nargs="*", help="other run directories to evaluate alongside")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export-traces", help="per-dimension rate decisions from recorded eval traces")
    x.add_argument("run")
    x.add_argument("--dims", required=True)
    x.add_argument("--window", default="0,10000", help="t0,t1 in ms (half-open)")
    x.add_argument("--policy", default="trained")
    x.add_argument("--db", type=float)
    x.add_argument("--episode", type=int, default=0)
    x.add_argument("--out")
    x.set_defaults(func=cmd_export_traces)

    b = sub.add_parser("baseline", help="train and evaluate baselines on the real domain")
    b.add_argument("kind", choices=("full_rate",) + trainer.METHODS + ("all",))
    b.add_argument("config", nargs="?")
    b.add_argument("--out-dir")
    b.set_defaults(func=cmd_baseline)

    r = sub.add_parser("pac-report", help="PAC-Bayes diagnostics per outer iteration")
    r.add_argument("run")
    r.set_defaults(func=cmd_pac_report)
    return p


def main(argv=None):
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, _split_overrides(extra))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except QueryError as exc:
        print(f"query error: {exc}", file=sys.stderr)
        return EXIT_QUERY


if __name__ == "__main__":
    sys.exit(main())
