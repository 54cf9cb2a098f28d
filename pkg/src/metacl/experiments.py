"""Experiment runner: build streams, execute runs, emit records and tables.

Output layout: one directory per run-set, ``<out>/<method>-<ablation>-<hash8>/``,
holding ``config.txt``, one ``seed-N/record.json`` per seed (byte-stable), a
``seed-N/timing.json`` side file (wall-clock lives here so records stay
byte-identical across reruns), and ``summary.csv``.
"""

import csv
import io
import json
import os
import tempfile
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .config import config_hash, serialize_config
from .datasets import (
    SyntheticSpec,
    load_idx_dataset,
    make_permuted_stream,
    make_split_stream,
    make_synthetic,
    subsample,
)
from .errors import ConfigurationError, NoDataError
from .losses import AdversarialConfig, LossWeights
from .memory import EpisodicMemory
from .metrics import acc, fm
from .trainer import (
    ReplayTrainer,
    Trainer,
    TrainerConfig,
    build_model,
    run_stream,
)

MEMORY_SWEEP_VALUES = (50, 100, 150, 200)
LAMBDA3_SWEEP_VALUES = (0.03, 0.09, 0.3, 0.9)
GRID_SPACE = {
    "inner_lr": (0.001, 0.01, 0.1),
    "outer_lr": (0.001, 0.01, 0.1),
    "lambda1": (1.0, 3.0),
    "lambda2": (1.0, 3.0),
    "lambda3": (0.03, 0.09, 0.3, 0.9),
}
SUMMARY_COLUMNS = ("method", "ablation", "seed", "task_index", "acc_row",
                   "final_acc", "final_fm", "wall_s")

IDX_NAMES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
             "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


def _resolve_idx(path):
    # downloads usually keep the .gz suffix; prefer the plain file if both exist
    return path if os.path.exists(path) or not os.path.exists(path + ".gz") \
        else path + ".gz"


def atomic_write_text(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


# -- streams -----------------------------------------------------------------------


def build_stream(config):
    """TaskStream per the config's dataset block."""
    if config.dataset == "synthetic":
        return make_synthetic(SyntheticSpec(
            n_tasks=config.n_tasks,
            classes_per_task=config.classes_per_task,
            train_per_class=config.train_per_class,
            test_per_class=config.test_per_class,
            input_dim=config.input_dim,
            center_scale=config.center_scale,
            noise_scale=config.noise_scale,
            protocol=config.protocol,
            seed=config.data_seed,
        ))
    paths = [_resolve_idx(os.path.join(config.idx_dir, name))
             for name in IDX_NAMES]
    base = load_idx_dataset(*paths)
    base = subsample(base,
                     config.train_per_task or None,
                     config.test_per_task or None,
                     seed=config.data_seed)
    if config.protocol == "permuted":
        return make_permuted_stream(base, config.n_tasks, seed=config.data_seed)
    return make_split_stream(base, config.classes_per_task, seed=config.data_seed)


# -- single runs -------------------------------------------------------------------


@dataclass
class ResultRecord:
    """One completed run: everything needed to rebuild the metrics."""

    config_hash: str
    method: str
    ablation: str
    seed: int
    acc_matrix: list
    final_acc: float
    final_fm: float
    samples_seen: dict
    counters: dict
    wall_s: float = 0.0
    task_wall_s: list = field(default_factory=list)

    def stable_dict(self):
        """The byte-stable part (no timing)."""
        return {
            "record_version": 1,
            "config_hash": self.config_hash,
            "method": self.method,
            "ablation": self.ablation,
            "seed": self.seed,
            "acc_matrix": self.acc_matrix,
            "final_acc": self.final_acc,
            "final_fm": self.final_fm,
            "samples_seen": {str(k): v for k, v in self.samples_seen.items()},
            "counters": self.counters,
        }

    def record_bytes(self):
        return (json.dumps(self.stable_dict(), sort_keys=True, indent=2)
                + "\n").encode("utf-8")


def trainer_config(config, seed):
    return TrainerConfig(
        inner_lr=config.inner_lr,
        outer_lr=config.outer_lr,
        adversarial_lr=config.adversarial_lr,
        n_in=config.n_in,
        n_out=config.n_out,
        n_ad=config.n_ad,
        batch_size=config.batch_size,
        replay_batch_size=config.replay_batch_size,
        weights=LossWeights(config.lambda1, config.lambda2, config.lambda3),
        adversarial=AdversarialConfig(
            noise_mean=config.noise_mean,
            noise_std=config.noise_std,
            generator_mode=config.generator_mode,
            fake_fraction=config.fake_fraction,
        ),
        seed=seed,
    )


def model_kwargs(config):
    kwargs = dict(
        feature_width=config.feature_width,
        depth=config.depth,
        embed_dim=config.embed_dim,
        disc_hidden=config.disc_hidden,
        transform_mode=config.transform_mode,
        share_embedding=config.share_embedding,
    )
    if config.k_max:
        kwargs["k_max"] = config.k_max
    return kwargs


def run_single(config, seed, stream=None):
    """Train one method for one seed; returns a ResultRecord."""
    stream = stream if stream is not None else build_stream(config)
    tc = trainer_config(config, seed)
    kwargs = model_kwargs(config)
    started = time.perf_counter()
    if config.method == "scale":
        if config.ablation == "C":
            kwargs["transform_mode"] = "off"
        model = build_model(stream, seed, **kwargs)
        memory = EpisodicMemory(config.memory_budget,
                                rng=np.random.default_rng([seed, 20]))
        trainer = Trainer(model, memory, tc, ablation=config.ablation)
    else:
        # replay baselines run the plain trunk; finetune keeps no memory
        kwargs["transform_mode"] = "off"
        budget = config.memory_budget if config.method == "er" else 0
        model = build_model(stream, seed, **kwargs)
        memory = EpisodicMemory(budget, rng=np.random.default_rng([seed, 20]))
        trainer = ReplayTrainer(model, memory, tc)
    records = run_stream(trainer, stream)
    wall = time.perf_counter() - started

    state = trainer.state
    k = state.matrix.n_rows
    return ResultRecord(
        config_hash=config_hash(config),
        method=config.method,
        ablation=config.ablation if config.method == "scale" else "full",
        seed=seed,
        acc_matrix=state.matrix.to_rows(),
        final_acc=acc(state.matrix, k),
        final_fm=fm(state.matrix, k) if k >= 2 else 0.0,
        samples_seen=dict(state.samples_seen),
        counters={
            "inner_updates": state.inner_updates,
            "outer_updates": state.outer_updates,
            "adversarial_updates": state.adversarial_updates,
        },
        wall_s=wall,
        task_wall_s=[r["wall_s"] for r in records],
    )


# -- run sets and emission ------------------------------------------------------------


def run_dir_name(config):
    return f"{config.method}-{config.ablation}-{config_hash(config)[:8]}"


def write_record(seed_dir, record):
    atomic_write_text(os.path.join(seed_dir, "record.json"),
                      record.record_bytes().decode("utf-8"))
    timing = {"wall_s": record.wall_s, "task_wall_s": record.task_wall_s}
    atomic_write_text(os.path.join(seed_dir, "timing.json"),
                      json.dumps(timing, sort_keys=True, indent=2) + "\n")


def load_record(seed_dir):
    """Rebuild a ResultRecord from record.json (+ timing.json if present)."""
    with open(os.path.join(seed_dir, "record.json"), encoding="utf-8") as f:
        raw = json.load(f)
    wall, per_task = 0.0, []
    timing_path = os.path.join(seed_dir, "timing.json")
    if os.path.exists(timing_path):
        with open(timing_path, encoding="utf-8") as f:
            timing = json.load(f)
        wall = timing.get("wall_s", 0.0)
        per_task = timing.get("task_wall_s", [])
    return ResultRecord(
        config_hash=raw["config_hash"],
        method=raw["method"],
        ablation=raw["ablation"],
        seed=raw["seed"],
        acc_matrix=raw["acc_matrix"],
        final_acc=raw["final_acc"],
        final_fm=raw["final_fm"],
        samples_seen={int(k): v for k, v in raw["samples_seen"].items()},
        counters=raw["counters"],
        wall_s=wall,
        task_wall_s=per_task,
    )


def summary_rows(records):
    rows = []
    for r in records:
        for task_index, acc_row in enumerate(r.acc_matrix, start=1):
            rows.append({
                "method": r.method,
                "ablation": r.ablation,
                "seed": r.seed,
                "task_index": task_index,
                "acc_row": ";".join(str(a) for a in acc_row),
                "final_acc": r.final_acc,
                "final_fm": r.final_fm,
                "wall_s": r.wall_s,
            })
    return rows


def write_csv(path, columns, rows):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns))
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    atomic_write_text(path, buf.getvalue())


def execute_run(config, out_dir=None, stream=None):
    """Run every seed; write per-seed records plus summary.csv; return records."""
    out_dir = out_dir if out_dir is not None else config.out_dir
    stream = stream if stream is not None else build_stream(config)
    run_dir = os.path.join(out_dir, run_dir_name(config))
    atomic_write_text(os.path.join(run_dir, "config.txt"),
                      serialize_config(config))
    records = []
    for seed in config.seeds:
        record = run_single(config, seed, stream=stream)
        write_record(os.path.join(run_dir, f"seed-{seed}"), record)
        records.append(record)
    write_csv(os.path.join(run_dir, "summary.csv"), SUMMARY_COLUMNS,
              summary_rows(records))
    return records


def er_baseline(config, out_dir=None):
    """Plain experience replay under the same budget and one-epoch contract."""
    return execute_run(replace(config, method="er", ablation="full"), out_dir)


def mean_std(values):
    a = np.asarray(list(values), dtype=np.float64)
    return float(a.mean()), float(a.std())


# -- sweeps, grid, ablations ------------------------------------------------------------


SWEEP_AXES = {
    "memory": ("memory_budget", MEMORY_SWEEP_VALUES),
    "lambda": ("lambda3", LAMBDA3_SWEEP_VALUES),
}


def sweep(config, axis, values=None, out_dir=None):
    """One run-set per axis value; returns {value: records} and writes sweep.csv."""
    if axis not in SWEEP_AXES:
        raise ConfigurationError(
            f"sweep axis must be one of {sorted(SWEEP_AXES)}, got {axis!r}")
    field_name, canonical = SWEEP_AXES[axis]
    values = list(canonical) if values is None else list(values)
    if not values:
        raise ConfigurationError("sweep needs at least one value")
    for v in values:
        if v not in canonical:
            raise ConfigurationError(
                f"{axis} sweep accepts values from {canonical}, got {v}")
    out_dir = out_dir if out_dir is not None else config.out_dir
    table = {}
    rows = []
    for v in values:
        cfg = replace(config, **{field_name: v})
        records = execute_run(cfg, out_dir)
        table[v] = records
        acc_m, acc_s = mean_std(r.final_acc for r in records)
        fm_m, fm_s = mean_std(r.final_fm for r in records)
        rows.append({"axis": axis, "value": v, "n_seeds": len(records),
                     "mean_acc": acc_m, "std_acc": acc_s,
                     "mean_fm": fm_m, "std_fm": fm_s})
    write_csv(os.path.join(out_dir, f"sweep-{axis}.csv"),
              ("axis", "value", "n_seeds", "mean_acc", "std_acc",
               "mean_fm", "std_fm"), rows)
    return table


def grid(config, space=None, out_dir=None, n_tasks=3):
    """Grid search on the first ``n_tasks`` tasks, restricted to known values.

    Returns (best_combo, rows) where best maximizes mean final accuracy.
    """
    space = {k: list(v) for k, v in (space or GRID_SPACE).items()}
    for key, values in space.items():
        if key not in GRID_SPACE:
            raise ConfigurationError(f"unknown grid axis {key!r}")
        if not values:
            raise ConfigurationError(f"grid axis {key} has no values")
        for v in values:
            if v not in GRID_SPACE[key]:
                raise ConfigurationError(
                    f"grid axis {key} accepts {GRID_SPACE[key]}, got {v}")
    out_dir = out_dir if out_dir is not None else config.out_dir
    base = replace(config, n_tasks=min(n_tasks, config.n_tasks))
    stream = build_stream(base)

    keys = sorted(space)
    combos = [{}]
    for key in keys:
        combos = [dict(c, **{key: v}) for c in combos for v in space[key]]

    rows = []
    best = None
    for combo in combos:
        cfg = replace(base, **combo)
        records = [run_single(cfg, seed, stream=stream) for seed in cfg.seeds]
        acc_m, acc_s = mean_std(r.final_acc for r in records)
        fm_m, fm_s = mean_std(r.final_fm for r in records)
        row = dict(combo)
        row.update({"n_seeds": len(records), "mean_acc": acc_m,
                    "std_acc": acc_s, "mean_fm": fm_m, "std_fm": fm_s})
        rows.append(row)
        if best is None or acc_m > best[1]:
            best = (combo, acc_m)
    write_csv(os.path.join(out_dir, "grid.csv"),
              keys + ["n_seeds", "mean_acc", "std_acc", "mean_fm", "std_fm"],
              rows)
    return best[0], rows


def ablate(config, modes=("full", "A", "B", "C"), out_dir=None):
    """Run every ablation of the full method; returns {mode: records}."""
    out_dir = out_dir if out_dir is not None else config.out_dir
    table = {}
    rows = []
    for mode in modes:
        cfg = replace(config, method="scale", ablation=mode)
        records = execute_run(cfg, out_dir)
        table[mode] = records
        acc_m, acc_s = mean_std(r.final_acc for r in records)
        fm_m, fm_s = mean_std(r.final_fm for r in records)
        rows.append({"ablation": mode, "n_seeds": len(records),
                     "mean_acc": acc_m, "std_acc": acc_s,
                     "mean_fm": fm_m, "std_fm": fm_s})
    write_csv(os.path.join(out_dir, "ablations.csv"),
              ("ablation", "n_seeds", "mean_acc", "std_acc",
               "mean_fm", "std_fm"), rows)
    return table


# -- reporting ----------------------------------------------------------------------------


def find_records(result_dir):
    records = []
    for root, _dirs, files in os.walk(result_dir):
        if "record.json" in files:
            records.append(load_record(root))
    records.sort(key=lambda r: (r.method, r.ablation, r.config_hash, r.seed))
    return records


def report(result_dir):
    """Aggregate every record under ``result_dir`` into mean±std lines.

    Returns (text, rows); also writes report.csv next to the records.
    """
    records = find_records(result_dir)
    if not records:
        raise NoDataError(f"no record.json files under {result_dir}")
    groups = {}
    for r in records:
        groups.setdefault((r.method, r.ablation), []).append(r)
    rows = []
    for (method, ablation), group in sorted(groups.items()):
        acc_m, acc_s = mean_std(r.final_acc for r in group)
        fm_m, fm_s = mean_std(r.final_fm for r in group)
        rows.append({"method": method, "ablation": ablation,
                     "n_seeds": len(group),
                     "mean_acc": acc_m, "std_acc": acc_s,
                     "mean_fm": fm_m, "std_fm": fm_s})
    write_csv(os.path.join(result_dir, "report.csv"),
              ("method", "ablation", "n_seeds", "mean_acc", "std_acc",
               "mean_fm", "std_fm"), rows)
    header = f"{'method':<10} {'ablation':<8} {'n':>3} {'ACC':>15} {'FM':>15}"
    lines = [header, "-" * len(header)]
    for row in rows:
        acc_txt = f"{row['mean_acc']:.4f}±{row['std_acc']:.4f}"
        fm_txt = f"{row['mean_fm']:.4f}±{row['std_fm']:.4f}"
        lines.append(f"{row['method']:<10} {row['ablation']:<8} "
                     f"{row['n_seeds']:>3} {acc_txt:>15} {fm_txt:>15}")
    return "\n".join(lines), rows
