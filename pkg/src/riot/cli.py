"""Command-line surface: simulate, ingest, train, infer, eval, export-attention.

Every command takes ``--config <yaml>`` plus targeted overrides and
writes all artifacts under the configured output directory, together
with a manifest echoing the configuration verbatim so any run can be
reproduced exactly.  Commands emit plot-ready CSV/matrix files; no
plotting happens here.

Exit codes: 0 success, 2 configuration error, 3 data error,
4 training divergence, 1 anything else.
"""

from __future__ import annotations

import argparse
import csv
import glob
import json
import os
import sys

import numpy as np
import yaml

from . import __version__
from . import data as data_mod
from . import metrics as metrics_mod
from .errors import ConfigError, DataError, DivergedError, RiotError
from .geometry import Pose, Quaternion, WorldConstants
from .inference import (
    OracleModel,
    classical_baseline,
    recursive_infer,
    write_trajectory_csv,
)
from .nets import AttentionRecord, build_model, model_from_description
from .sensors import NoiseSpec, TRAJECTORY_KINDS, gen_trajectory, simulate_imu
from .training import (
    Checkpoint,
    TrainConfig,
    train_attitude,
    train_cycle1,
    train_cycle2,
)

_NOISE_KEYS = {"gyro_sigma", "accel_sigma", "mag_sigma",
               "gyro_bias_walk_sigma", "accel_bias_walk_sigma",
               "gyro_bias0", "accel_bias0"}
_WORLD_KEYS = {"gravity", "mag_direction", "dt"}
_COLUMN_KEYS = {"time", "gyro", "accel", "mag", "position", "quaternion"}

_SCHEMA = {
    "seed": None,
    "out": None,
    "simulate": {
        "n_sequences": None, "duration_s": None, "rate_hz": None,
        "kinds": None, "noise": {k: None for k in _NOISE_KEYS},
        "world": {k: None for k in _WORLD_KEYS},
    },
    "dataset": {
        "dir": None, "files": None, "column_map": {k: None for k in _COLUMN_KEYS},
        "rate_hz": None, "window": None, "stride": None,
        "split": {"train": None, "val": None, "test": None, "holdout_ids": None},
        "normalize": None,
    },
    "model": {"name": None, "overrides": None},
    "train": {
        "lr": None, "dropout": None, "batch_size": None,
        "epochs_attitude": None, "epochs_cycle1": None, "epochs_cycle2": None,
        "patience": None, "grad_clip": None, "resume": None,
    },
    "infer": {"checkpoint": None, "sequence": None, "initial_pos": None,
              "oracle": None},
    "eval": {"checkpoint": None, "sequences": None, "dims": None,
             "rte_delta_s": None, "baseline": None, "oracle": None},
    "export_attention": {"checkpoint": None, "sequence": None,
                         "window_start": None, "stages": None},
}

_DEFAULTS = {
    "seed": 0,
    "out": "runs/out",
    "simulate": {
        "n_sequences": 4, "duration_s": 60.0, "rate_hz": 100.0,
        "kinds": list(TRAJECTORY_KINDS), "noise": {}, "world": {},
    },
    "dataset": {
        "dir": None, "files": [], "column_map": {},
        "rate_hz": None, "window": 100, "stride": 50,
        "split": {"train": 0.7, "val": 0.2, "test": 0.1, "holdout_ids": []},
        "normalize": True,
    },
    "model": {"name": "riot", "overrides": {}},
    "train": {
        "lr": 0.001, "dropout": 0.2, "batch_size": 64,
        "epochs_attitude": 300, "epochs_cycle1": 120, "epochs_cycle2": 30,
        "patience": None, "grad_clip": None, "resume": None,
    },
    "infer": {"checkpoint": None, "sequence": None, "initial_pos": "truth",
              "oracle": False},
    "eval": {"checkpoint": None, "sequences": [], "dims": "2d",
             "rte_delta_s": 1.0, "baseline": True, "oracle": False},
    "export_attention": {"checkpoint": None, "sequence": None,
                         "window_start": 0, "stages": ["encoder"]},
}


# ----------------------------------------------------------------------
# config plumbing
# ----------------------------------------------------------------------

def _check_keys(user, schema, path=""):
    if not isinstance(user, dict):
        raise ConfigError(f"config section '{path or '<root>'}' must be a mapping")
    for key, value in user.items():
        if key not in schema:
            raise ConfigError(f"unknown config key '{path}{key}'")
        sub = schema[key]
        if isinstance(sub, dict) and isinstance(value, dict):
            _check_keys(value, sub, f"{path}{key}.")


def _merge(defaults, user):
    out = {}
    for key, dv in defaults.items():
        uv = user.get(key, None) if isinstance(user, dict) else None
        if isinstance(dv, dict) and isinstance(uv, dict):
            out[key] = _merge(dv, uv)
        elif key in (user or {}):
            out[key] = uv
        else:
            out[key] = dv
    return out


def load_config(path=None, overrides=None):
    """Parse the YAML config, reject unknown keys, merge defaults/overrides.

    Returns ``(effective, raw)``; the raw document is echoed verbatim
    into manifests.
    """
    raw = {}
    if path:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
    _check_keys(raw, _SCHEMA)
    cfg = _merge(_DEFAULTS, raw)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "model":
            cfg["model"]["name"] = value
        else:
            cfg[key] = value
    return cfg, raw


def _write_manifest(cfg, raw, command, extra=None):
    os.makedirs(cfg["out"], exist_ok=True)
    manifest = {
        "command": command,
        "package_version": __version__,
        "seed": cfg["seed"],
        "config_file": raw,
        "effective_config": cfg,
    }
    manifest.update(extra or {})
    path = os.path.join(cfg["out"], f"{command}_manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)
    return path


def _column_map(section):
    kwargs = {}
    for key, value in (section or {}).items():
        kwargs[key] = tuple(value) if isinstance(value, (list, tuple)) else value
    return data_mod.ColumnMap(**kwargs)


def _sequence_files(cfg):
    ds = cfg["dataset"]
    files = list(ds["files"] or [])
    if ds["dir"]:
        files.extend(sorted(glob.glob(os.path.join(ds["dir"], "*.csv"))))
    if not files:
        raise DataError("no dataset files: set dataset.dir or dataset.files")
    return files


def _load_sequences(cfg):
    mapping = _column_map(cfg["dataset"]["column_map"])
    out = []
    for path in _sequence_files(cfg):
        seq_id = os.path.splitext(os.path.basename(path))[0]
        out.append(data_mod.load_sequence(
            path, mapping=mapping, rate_hz=cfg["dataset"]["rate_hz"],
            seq_id=seq_id,
        ))
    return out


def _build_dataset(cfg, sequences):
    ds = cfg["dataset"]
    spec = data_mod.SplitSpec(
        train=ds["split"]["train"], val=ds["split"]["val"],
        test=ds["split"]["test"], holdout_ids=tuple(ds["split"]["holdout_ids"]),
    )
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg["seed"]), 90]))
    return data_mod.build_dataset(
        sequences, spec, rng, T=int(ds["window"]), stride=int(ds["stride"]),
        normalize=bool(ds["normalize"]),
    )


def _world(cfg):
    kwargs = {}
    section = cfg["simulate"]["world"] or {}
    if "gravity" in section:
        kwargs["gravity"] = np.asarray(section["gravity"], dtype=np.float64)
    if "mag_direction" in section:
        kwargs["mag_direction"] = np.asarray(section["mag_direction"], dtype=np.float64)
    if "dt" in section:
        kwargs["dt"] = float(section["dt"])
    return WorldConstants(**kwargs)


def _load_model(checkpoint_path, cfg):
    if not checkpoint_path:
        fallback = os.path.join(cfg["out"], "checkpoint.npz")
        if not os.path.exists(fallback):
            raise ConfigError("no checkpoint path configured")
        checkpoint_path = fallback
    ckpt = Checkpoint.load(checkpoint_path)
    model = model_from_description(
        ckpt.description, np.random.default_rng(np.random.SeedSequence([0]))
    )
    ckpt.apply_to(model)
    window = ckpt.description["config"]["window"]
    if int(cfg["dataset"]["window"]) != int(window):
        raise ConfigError(
            f"checkpoint was trained with window {window} but the config "
            f"asks for {cfg['dataset']['window']}"
        )
    return model, ckpt


# ----------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------

def cmd_simulate(cfg, raw):
    sim = cfg["simulate"]
    noise = NoiseSpec(**{k: (np.asarray(v) if isinstance(v, list) else v)
                         for k, v in (sim["noise"] or {}).items()})
    wc = _world(cfg)
    data_dir = os.path.join(cfg["out"], "data")
    os.makedirs(data_dir, exist_ok=True)
    kinds = sim["kinds"]
    written = []
    for i in range(int(sim["n_sequences"])):
        rng = np.random.default_rng(np.random.SeedSequence([int(cfg["seed"]), 17, i]))
        kind = kinds[i % len(kinds)]
        # a "duration_s at rate_hz" file holds exactly duration*rate rows,
        # so the generated span is one sample interval short of duration
        rate = float(sim["rate_hz"])
        n_rows = int(round(float(sim["duration_s"]) * rate))
        poses = gen_trajectory(kind, (n_rows - 1) / rate, rate, rng)
        seq = simulate_imu(poses, noise, wc, rng,
                           meta={"seq_id": f"seq_{i:03d}", "kind": kind})
        path = os.path.join(data_dir, f"seq_{i:03d}.csv")
        data_mod.write_sequence_csv(seq, path)
        written.append(path)
    _write_manifest(cfg, raw, "simulate", {"files": written})
    print(f"wrote {len(written)} sequences to {data_dir}")
    return 0


def cmd_ingest(cfg, raw):
    sequences = _load_sequences(cfg)
    dataset = _build_dataset(cfg, sequences)
    report = {
        "sequences": len(sequences),
        "total_samples": int(sum(len(s) for s in sequences)),
        "window": dataset.T,
        "stride": dataset.stride,
        "train_windows": len(dataset.train),
        "val_windows": len(dataset.val),
        "test_windows": len(dataset.test),
        "holdout_sequences": [s.seq_id for s in dataset.holdout],
        "dropped_rows": {s.seq_id: s.meta.get("dropped_rows", 0) for s in sequences},
    }
    os.makedirs(cfg["out"], exist_ok=True)
    path = os.path.join(cfg["out"], "dataset_report.json")
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2)
    _write_manifest(cfg, raw, "ingest", {"report": report})
    print(json.dumps(report, indent=2))
    return 0


def _write_losses_csv(path, stage, ckpt, epoch_offset=0):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "stage", "train_loss", "val_loss"])
        for i, (tr, va) in enumerate(zip(ckpt.train_history, ckpt.val_history)):
            writer.writerow([epoch_offset + i + 1, stage, repr(tr), repr(va)])


def cmd_train(cfg, raw):
    sequences = _load_sequences(cfg)
    dataset = _build_dataset(cfg, sequences)
    tr = cfg["train"]
    tcfg = TrainConfig(
        lr=float(tr["lr"]), dropout=float(tr["dropout"]),
        batch_size=int(tr["batch_size"]),
        epochs_attitude=int(tr["epochs_attitude"]),
        epochs_cycle1=int(tr["epochs_cycle1"]),
        epochs_cycle2=int(tr["epochs_cycle2"]),
        seed=int(cfg["seed"]), model=cfg["model"]["name"],
        patience=tr["patience"],
        grad_clip=tr["grad_clip"],
    )
    os.makedirs(cfg["out"], exist_ok=True)

    resume = tr.get("resume")
    if resume:
        prev = Checkpoint.load(resume)
        model = model_from_description(
            prev.description, np.random.default_rng(np.random.SeedSequence([0]))
        )
        prev.apply_to(model)
        done_stage = prev.stage
        prior_epochs = len(prev.train_history)
    else:
        model_rng = np.random.default_rng(
            np.random.SeedSequence([tcfg.seed, 11])
        )
        model = build_model(
            tcfg.model, model_rng, window=dataset.T, dropout=tcfg.dropout,
            overrides=cfg["model"]["overrides"],
        )
        model.set_normalization(dataset.imu_mean, dataset.imu_std)
        done_stage = None
        prior_epochs = 0

    stage_order = (["attitude"] if tcfg.model == "ariot" else []) + ["cycle1", "cycle2"]
    if done_stage in stage_order:
        stage_order = stage_order[stage_order.index(done_stage) + 1:]

    checkpoints = {}
    last = None
    try:
        for stage in stage_order:
            if stage == "attitude":
                last = train_attitude(model, dataset, tcfg)
            elif stage == "cycle1":
                last = train_cycle1(model, dataset, tcfg)
            else:
                base = checkpoints.get("cycle1")
                if base is None:
                    base = _snapshot_for_resume(model, resume)
                last = train_cycle2(model, dataset, tcfg, base)
            checkpoints[stage] = last
            ck_path = os.path.join(cfg["out"], f"checkpoint_{stage}.npz")
            last.save(ck_path)
            _write_losses_csv(
                os.path.join(cfg["out"], f"losses_{stage}.csv"),
                stage, last,
                epoch_offset=prior_epochs if stage == stage_order[0] and resume else 0,
            )
    except DivergedError as err:
        if err.last_checkpoint is not None:
            err.last_checkpoint.save(os.path.join(cfg["out"], "checkpoint_last_good.npz"))
        raise

    final = os.path.join(cfg["out"], "checkpoint.npz")
    last.save(final)
    _write_manifest(cfg, raw, "train", {
        "stages": {s: {"epochs_run": len(c.train_history),
                       "best_epoch": c.epoch,
                       "best_val": min(c.val_history) if c.val_history else None}
                   for s, c in checkpoints.items()},
        "checkpoint": final,
        "parameters": int(model.count_params()),
    })
    print(f"training complete; checkpoint at {final}")
    return 0


def _snapshot_for_resume(model, resume_path):
    prev = Checkpoint.load(resume_path)
    return prev


def _initial_pose(seq, initial_pos):
    if initial_pos == "truth" or initial_pos is None:
        return seq.truth_pos[0]
    return np.asarray(initial_pos, dtype=np.float64)


def cmd_infer(cfg, raw):
    mapping = _column_map(cfg["dataset"]["column_map"])
    inf = cfg["infer"]
    if not inf["sequence"]:
        raise ConfigError("infer.sequence is required")
    seq_id = os.path.splitext(os.path.basename(inf["sequence"]))[0]
    seq = data_mod.load_sequence(inf["sequence"], mapping=mapping,
                                 rate_hz=cfg["dataset"]["rate_hz"], seq_id=seq_id)
    T = int(cfg["dataset"]["window"])
    stride = int(cfg["dataset"]["stride"])
    if inf["oracle"]:
        model = OracleModel(seq)
    else:
        model, _ = _load_model(inf["checkpoint"], cfg)
    result = recursive_infer(model, seq, _initial_pose(seq, inf["initial_pos"]),
                             T=T, stride=stride)
    os.makedirs(cfg["out"], exist_ok=True)
    out_path = os.path.join(cfg["out"], f"trajectory_{seq_id}.csv")
    write_trajectory_csv(result.trajectory, out_path)
    _write_manifest(cfg, raw, "infer", {
        "trajectory": out_path, "windows": result.invocations,
    })
    print(f"wrote {out_path}")
    return 0


def cmd_eval(cfg, raw):
    ev = cfg["eval"]
    mapping = _column_map(cfg["dataset"]["column_map"])
    files = ev["sequences"] or _sequence_files(cfg)
    T = int(cfg["dataset"]["window"])
    stride = int(cfg["dataset"]["stride"])
    dims = ev["dims"]
    delta = float(ev["rte_delta_s"])

    model = None
    if not ev["oracle"]:
        model, _ = _load_model(ev["checkpoint"], cfg)

    rows = []
    trajs = []
    for path in files:
        seq_id = os.path.splitext(os.path.basename(path))[0]
        seq = data_mod.load_sequence(path, mapping=mapping,
                                     rate_hz=cfg["dataset"]["rate_hz"],
                                     seq_id=seq_id)
        active = OracleModel(seq) if ev["oracle"] else model
        result = recursive_infer(active, seq, seq.truth_pos[0], T=T, stride=stride)
        traj = result.trajectory
        trajs.append(traj)
        row = {
            "seq_id": seq_id,
            "length": len(traj),
            "ate": metrics_mod.ate(traj, dims),
            "rte": metrics_mod.rte(traj, delta, dims),
        }
        if ev["baseline"]:
            initial = Pose(p=seq.truth_pos[0], v=seq.truth_vel[0],
                           q=Quaternion.from_array(seq.truth_quat[0]),
                           t=float(seq.t[0]))
            base_traj = classical_baseline(seq, initial)
            row["baseline_ate"] = metrics_mod.ate(base_traj, dims)
            row["baseline_rte"] = metrics_mod.rte(base_traj, delta, dims)
        rows.append(row)

    _, summary = metrics_mod.weighted_mean_metrics(trajs, delta, dims)
    os.makedirs(cfg["out"], exist_ok=True)

    csv_path = os.path.join(cfg["out"], "metrics.csv")
    fields = list(rows[0].keys())
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
        writer.writerow({"seq_id": "weighted_mean",
                         "length": summary["total_length"],
                         "ate": summary["weighted_mean_ate"],
                         "rte": summary["weighted_mean_rte"]})

    curve = metrics_mod.cdf(trajs, dims)
    cdf_path = os.path.join(cfg["out"], "cdf.csv")
    with open(cdf_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["error_m", "fraction"])
        for thr, frac in zip(curve.thresholds, curve.fractions):
            writer.writerow([repr(float(thr)), repr(float(frac))])

    table_path = os.path.join(cfg["out"], "metrics.txt")
    with open(table_path, "w") as fh:
        fh.write(_format_table(rows, summary))
    _write_manifest(cfg, raw, "eval", {
        "metrics_csv": csv_path, "cdf_csv": cdf_path, "summary": summary,
    })
    print(_format_table(rows, summary))
    return 0


def _format_table(rows, summary):
    lines = [f"{'sequence':<20}{'length':>8}{'ATE (m)':>12}{'RTE (m)':>12}"]
    for r in rows:
        lines.append(f"{r['seq_id']:<20}{r['length']:>8}"
                     f"{r['ate']:>12.4f}{r['rte']:>12.4f}")
    lines.append(f"{'weighted mean':<20}{summary['total_length']:>8}"
                 f"{summary['weighted_mean_ate']:>12.4f}"
                 f"{summary['weighted_mean_rte']:>12.4f}")
    return "\n".join(lines) + "\n"


def cmd_export_attention(cfg, raw):
    ex = cfg["export_attention"]
    mapping = _column_map(cfg["dataset"]["column_map"])
    if not ex["sequence"]:
        raise ConfigError("export_attention.sequence is required")
    seq_id = os.path.splitext(os.path.basename(ex["sequence"]))[0]
    seq = data_mod.load_sequence(ex["sequence"], mapping=mapping,
                                 rate_hz=cfg["dataset"]["rate_hz"], seq_id=seq_id)
    model, _ = _load_model(ex["checkpoint"], cfg)
    T = int(cfg["dataset"]["window"])
    windows = data_mod.make_windows(seq, T, int(cfg["dataset"]["stride"]))
    start = int(ex["window_start"])
    match = [w for w in windows if w.start_index == start]
    if not match:
        raise DataError(f"no window starting at index {start}")
    w = match[0]

    record = AttentionRecord()
    model.window_forward(w.imu, w.prior_pos, record=record)

    out_dir = os.path.join(cfg["out"], "attention")
    os.makedirs(out_dir, exist_ok=True)
    stages = set(ex["stages"] or ["encoder"])
    written = []
    for entry in record.entries:
        if entry["stage"] not in stages:
            continue
        name = f"{entry['stage']}_layer{entry['layer']}_head{entry['head']}.csv"
        path = os.path.join(out_dir, name)
        with open(path, "w", newline="") as fh:
            fh.write(f"# stage={entry['stage']} layer={entry['layer']} "
                     f"head={entry['head']} T={len(entry['matrix'])} "
                     f"seq_id={seq_id} window_start={start}\n")
            writer = csv.writer(fh)
            for row in entry["matrix"]:
                writer.writerow([repr(float(v)) for v in row])
        written.append(path)
    _write_manifest(cfg, raw, "export_attention", {"files": written})
    print(f"wrote {len(written)} attention matrices to {out_dir}")
    return 0


# ----------------------------------------------------------------------
# entry point
# ----------------------------------------------------------------------

_COMMANDS = {
    "simulate": cmd_simulate,
    "ingest": cmd_ingest,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "export-attention": cmd_export_attention,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="riot",
        description="Recursive deep inertial odometry pipeline",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", help="YAML configuration file")
    parser.add_argument("--seed", type=int, help="override the configured seed")
    parser.add_argument("--model", help="override model.name (riot|ariot|gru)")
    parser.add_argument("--out", help="override the output directory")
    args = parser.parse_args(argv)

    try:
        cfg, raw = load_config(args.config, {
            "seed": args.seed, "model": args.model, "out": args.out,
        })
        return _COMMANDS[args.command](cfg, raw)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return 3
    except DivergedError as err:
        print(f"training diverged: {err}", file=sys.stderr)
        return 4
    except RiotError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
