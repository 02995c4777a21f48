"""Leave-one-domain-out training runs, benchmark grids and checkpoints."""

import hashlib
import json
import os
import struct
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .config import KEYED, TrainConfig, ablation_configs, config_diff
from .data import DOMAIN_NAMES, generate_benchmark, lodo_split, read_dataset, records_by_domain, stack_records
from .estimator import FFTrustClassifier
from .exceptions import ConfigError, IntegrityError, ParseError, VersionError
from .metrics import accuracy, confusion_matrix, export_hypnogram, macro_f1
from .model import PARAM_ORDER
from .noise import build_matrix, inject

OUTPUT_ENV = "FFTRUST_OUTPUT_DIR"
_NOISE, _HOLDOUT = 0x4E4F4953, 0x484F4C44


def output_dir(path=None):
    path = path or os.environ.get(OUTPUT_ENV) or "fftrust_out"
    os.makedirs(path, exist_ok=True)
    return path


# -- data --------------------------------------------------------------------

_DATA_CACHE = {}


def load_domains(cfg):
    """Records grouped by domain: read from ``cfg.dataset`` or synthesized."""
    if cfg.dataset is not None:
        key = ("file", os.path.abspath(cfg.dataset), os.path.getmtime(cfg.dataset))
    else:
        key = ("gen", cfg.channels, cfg.epoch_len, cfg.T, cfg.n_classes, cfg.n_seq, cfg.data_seed, cfg.phase_spread)
    if key not in _DATA_CACHE:
        if cfg.dataset is not None:
            _DATA_CACHE[key] = records_by_domain(read_dataset(cfg.dataset))
        else:
            _DATA_CACHE[key] = generate_benchmark(cfg.dims, cfg.n_seq, cfg.data_seed, phase_spread=cfg.phase_spread)
    return _DATA_CACHE[key]


@dataclass
class Split:
    X: np.ndarray
    y: np.ndarray
    y_clean: np.ndarray
    ids: np.ndarray
    domains: np.ndarray
    val: tuple
    test: tuple
    noise_report: dict


def prepare_split(cfg, seed, domains=None):
    """Source training arrays with per-seed noisy labels, holdout and target test set."""
    domains = domains if domains is not None else load_domains(cfg)
    train, test = lodo_split(domains, cfg.target_domain)
    X, labels, y_clean, ids, doms = stack_records(train)
    if cfg.noise.type != "none":
        matrix = build_matrix(cfg.noise.type, cfg.n_classes, cfg.noise.rate, cfg.noise.adjacency)
        labels, report = inject(y_clean, matrix, np.random.SeedSequence([seed, _NOISE]))
        noise_report = report.to_dict()
    else:
        noise_report = None
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, _HOLDOUT])))
    val_mask = np.zeros(len(ids), dtype=bool)
    for d in sorted(set(doms.tolist())):
        idx = np.flatnonzero(doms == d)
        n_val = int(round(cfg.val_fraction * idx.size))
        val_mask[rng.choice(idx, size=n_val, replace=False)] = True
    keep = ~val_mask
    Xt, _, yt, tid, _ = stack_records(test, cfg.dims)
    return Split(X[keep], labels[keep], y_clean[keep], ids[keep], doms[keep],
                 (X[val_mask], labels[val_mask], y_clean[val_mask]), (Xt, yt, tid), noise_report)


# -- checkpoints ---------------------------------------------------------------

CKPT_MAGIC = b"FFCK"
CKPT_VERSION = 1
_CKPT_HEAD = struct.Struct("<4sHI")


def save_checkpoint(path, clf, cfg, seed):
    """Write the full training state of ``clf`` to one file.

    Layout: magic, u16 version, u32 header length, JSON header (config,
    hashes, array manifest, buffer keys, history), then the little-endian
    f64 payload whose sha256 is stored in the header.
    """
    arrays = [(f"param/{n}", clf.params_[n].data) for n in PARAM_ORDER]
    opt = clf.optimizer_.state()
    arrays += [(f"adam_m/{n}", a) for n, a in zip(PARAM_ORDER, opt["m"])]
    arrays += [(f"adam_v/{n}", a) for n, a in zip(PARAM_ORDER, opt["v"])]
    elr, four = clf.buffers_.elr.state(), clf.buffers_.fourier.state()
    arrays += [("elr/values", elr["values"]), ("fourier/values", four["values"])]
    manifest, chunks, offset = [], [], 0
    for name, arr in arrays:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.size
    payload = b"".join(chunks)
    header = {
        "config": cfg.to_dict(),
        "run_hash": cfg.run_hash(seed),
        "seed": int(seed),
        "epoch": int(clf.epoch_),
        "adam_step": int(opt["step_count"]),
        "elr_keys": elr["keys"],
        "fourier_keys": four["keys"],
        "fourier_width": four["width"],
        "history": clf.history_,
        "loss_curve": clf.loss_curve_,
        "arrays": manifest,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    head = json.dumps(header).encode()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(_CKPT_HEAD.pack(CKPT_MAGIC, CKPT_VERSION, len(head)))
        fh.write(head)
        fh.write(payload)
    os.replace(tmp, path)


def read_checkpoint(path):
    """Return ``(header, arrays)``; raises before returning if anything is damaged."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < _CKPT_HEAD.size:
        raise ParseError("file shorter than checkpoint header", 0)
    magic, version, n = _CKPT_HEAD.unpack_from(buf)
    if magic != CKPT_MAGIC:
        raise ParseError(f"bad magic {magic!r}", 0)
    if version != CKPT_VERSION:
        raise VersionError(f"unsupported checkpoint version {version}")
    start = _CKPT_HEAD.size
    try:
        header = json.loads(buf[start:start + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"unreadable checkpoint header: {exc}", start) from exc
    payload = buf[start + n:]
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise IntegrityError(f"{path}: payload checksum mismatch")
    values = np.frombuffer(payload, dtype="<f8")
    arrays = {}
    for e in header["arrays"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        arrays[e["name"]] = values[e["offset"]:e["offset"] + count].reshape(e["shape"]).copy()
    return header, arrays


def restore_estimator(clf, header, arrays):
    for n in PARAM_ORDER:
        clf.params_[n].data[...] = arrays[f"param/{n}"]
    clf.optimizer_.load_state({
        "step_count": header["adam_step"],
        "m": [arrays[f"adam_m/{n}"] for n in PARAM_ORDER],
        "v": [arrays[f"adam_v/{n}"] for n in PARAM_ORDER],
    })
    clf.buffers_.elr.load_state({"keys": header["elr_keys"], "values": arrays["elr/values"]})
    clf.buffers_.fourier.load_state({"keys": header["fourier_keys"], "values": arrays["fourier/values"],
                                     "width": header["fourier_width"]})
    clf.epoch_ = int(header["epoch"])
    clf.history_ = list(header["history"])
    clf.loss_curve_ = list(header["loss_curve"])
    return clf


# -- single runs ---------------------------------------------------------------

@dataclass
class SeedResult:
    seed: int
    target: str
    acc: float
    mf1: float
    val_acc_noisy: float
    val_acc_clean: float
    confusion: list
    history: list
    noise: dict = None

    def to_dict(self):
        return asdict(self)


class _StepLog:
    def __init__(self, path, seed):
        self.path, self.seed = path, seed

    def __call__(self, epoch, step, bd):
        if self.path is None:
            return
        row = {"seed": self.seed, "epoch": epoch, "step": step}
        row.update(bd.to_dict())
        with open(self.path, "a") as fh:
            fh.write(json.dumps(row) + "\n")


def _finish(clf, split, cfg, seed, out_dir):
    Xt, yt, _ = split.test
    pred = clf.predict(Xt)
    cm = confusion_matrix(yt, pred, cfg.n_classes)
    Xv, yv_noisy, yv_clean = split.val
    val_noisy = val_clean = float("nan")
    if len(Xv):
        pv = clf.predict(Xv)
        val_noisy, val_clean = float((pv == yv_noisy).mean()), float((pv == yv_clean).mean())
    if out_dir is not None:
        export_hypnogram(yt[0], pred[0], os.path.join(out_dir, f"hypnogram_{cfg.target_domain}_seed{seed}.csv"))
    return SeedResult(int(seed), cfg.target_domain, accuracy(cm), macro_f1(cm), val_noisy, val_clean,
                      cm.counts.tolist(), clf.history_, split.noise_report)


def train_seed(cfg, seed, out_dir=None, step_log=None, stop_at=None, checkpoint=None, checkpoint_every=None):
    """Train one seed.

    With ``stop_at`` the run halts after that many epochs, writes
    ``checkpoint`` and returns ``None`` (an interrupted run).  With
    ``checkpoint_every`` a checkpoint is rewritten every that many epochs.
    """
    split = prepare_split(cfg, seed)
    clf = FFTrustClassifier(**cfg.estimator_params(seed))
    clf.initialize(split.X, split.y, split.domains, split.ids)

    def on_epoch(est, record):
        if checkpoint and checkpoint_every and est.epoch_ % checkpoint_every == 0:
            save_checkpoint(checkpoint, est, cfg, seed)

    clf.continue_fit(until=stop_at, epoch_callback=on_epoch, step_callback=_StepLog(step_log, seed))
    if stop_at is not None and clf.epoch_ < cfg.epochs:
        if checkpoint:
            save_checkpoint(checkpoint, clf, cfg, seed)
        return None
    return _finish(clf, split, cfg, seed, out_dir)


def resume(checkpoint, cfg, out_dir=None, step_log=None):
    """Continue an interrupted run; refuses when the config does not match."""
    header, arrays = read_checkpoint(checkpoint)
    seed = header["seed"]
    if header["run_hash"] != cfg.run_hash(seed):
        stored = dict(header["config"], seeds=[seed])
        diff = config_diff(stored, dict(cfg.to_dict(), seeds=[seed]))
        lines = "; ".join(f"{k}: checkpoint={a!r} now={b!r}" for k, a, b in diff) or "unknown field"
        raise ConfigError(f"checkpoint was written under a different config ({lines})")
    split = prepare_split(cfg, seed)
    clf = FFTrustClassifier(**cfg.estimator_params(seed))
    clf.initialize(split.X, split.y, split.domains, split.ids)
    restore_estimator(clf, header, arrays)
    clf.continue_fit(step_callback=_StepLog(step_log, seed))
    return _finish(clf, split, cfg, seed, out_dir)


@dataclass
class RunReport:
    target: str
    config: dict
    per_seed: list
    acc_mean: float
    acc_std: float
    mf1_mean: float
    mf1_std: float
    wall_time: float = 0.0

    def to_dict(self):
        return asdict(self)

    def deterministic_dict(self):
        d = self.to_dict()
        d.pop("wall_time")
        return d


def _mean_std(values):
    values = np.asarray(values, dtype=float)
    std = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return float(values.mean()), std


def summarize(cfg, results, wall_time=0.0):
    acc = _mean_std([r.acc for r in results])
    mf1 = _mean_std([r.mf1 for r in results])
    return RunReport(cfg.target_domain, cfg.to_dict(), [r.to_dict() for r in results],
                     acc[0], acc[1], mf1[0], mf1[1], wall_time)


def train(cfg, out_dir=None, log_steps=True):
    """All seeds of ``cfg`` on its target domain; writes logs and the report when ``out_dir`` is set."""
    t0 = time.perf_counter()
    step_log = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        if log_steps:
            step_log = os.path.join(out_dir, f"steps_{cfg.target_domain}.jsonl")
            open(step_log, "w").close()
    results = [train_seed(cfg, s, out_dir, step_log) for s in cfg.seeds]
    report = summarize(cfg, results, time.perf_counter() - t0)
    if out_dir is not None:
        with open(os.path.join(out_dir, f"run_{cfg.target_domain}.json"), "w") as fh:
            json.dump(report.to_dict(), fh, indent=2)
    return report


# -- grids ---------------------------------------------------------------------

def cell_config(base, noise_type, rate, target, **flags):
    """Config of one grid cell; the keyed loss weights follow the cell's noise rate."""
    d = base.to_dict()
    for name in KEYED:
        d[name] = None
    d["noise"] = dict(d["noise"], type=noise_type, rate=rate)
    d.update(target_domain=target, **flags)
    return TrainConfig(**d)


def _cell_key(cfg, seed):
    return cfg.run_hash(seed)


class ResultCache:
    """Seed results keyed by config hash, optionally mirrored to a directory."""

    def __init__(self, directory=None):
        self.directory = directory
        self.memory = {}
        if directory:
            os.makedirs(directory, exist_ok=True)

    def _path(self, key):
        return os.path.join(self.directory, f"{key}.json") if self.directory else None

    def get(self, key):
        if key in self.memory:
            return self.memory[key]
        path = self._path(key)
        if path and os.path.exists(path):
            with open(path) as fh:
                self.memory[key] = SeedResult(**json.load(fh))
            return self.memory[key]
        return None

    def put(self, key, result):
        self.memory[key] = result
        path = self._path(key)
        if path:
            tmp = path + ".tmp"
            with open(tmp, "w") as fh:
                json.dump(result.to_dict(), fh)
            os.replace(tmp, path)


def _run_cell(args):
    cfg_dict, seed = args
    return train_seed(TrainConfig(**cfg_dict), seed)


def run_cells(cells, cache=None, workers=1):
    """``cells`` is a list of ``(cfg, seed)``; returns seed results in the same order."""
    cache = cache or ResultCache()
    todo = [(i, c, s) for i, (c, s) in enumerate(cells) if cache.get(_cell_key(c, s)) is None]
    if todo:
        jobs = [(c.to_dict(), s) for _, c, s in todo]
        if workers > 1:
            with ProcessPoolExecutor(workers) as pool:
                results = pool.map(_run_cell, jobs)
                for (_, c, s), r in zip(todo, results):
                    cache.put(_cell_key(c, s), r)
        else:
            for (_, c, s), job in zip(todo, jobs):
                cache.put(_cell_key(c, s), _run_cell(job))
    return [cache.get(_cell_key(c, s)) for c, s in cells]


def run_benchmark(base, noise_types=("sym", "asym"), rates=(0.2, 0.4, 0.6), targets=DOMAIN_NAMES,
                  seeds=None, cache=None, workers=1, **flags):
    """Every (noise type, rate, target, seed) cell; returns a list of cell dicts."""
    seeds = list(base.seeds if seeds is None else seeds)
    cells, meta = [], []
    for nt in noise_types:
        for rate in rates:
            for target in targets:
                cfg = cell_config(base, nt, rate, target, **flags)
                for s in seeds:
                    cells.append((cfg, s))
                    meta.append({"noise_type": nt, "rate": rate, "target": target, "seed": s})
    results = run_cells(cells, cache, workers)
    return [dict(m, acc=r.acc, mf1=r.mf1) for m, r in zip(meta, results)]


def ablation_grid(base, targets=DOMAIN_NAMES, seeds=None, cache=None, workers=1, noise_type="sym", rate=0.6):
    """The eight regularizer on/off rows at one noise setting."""
    seeds = list(base.seeds if seeds is None else seeds)
    rows = []
    proto = cell_config(base, noise_type, rate, targets[0])
    for flags, _ in ablation_configs(proto):
        cells = run_benchmark(base, (noise_type,), (rate,), targets, seeds, cache, workers, **flags)
        rows.append({"flags": flags, "cells": cells})
    return rows


def ablation_summary(rows):
    """Mean ACC/MF1 per row plus rows that beat the all-on configuration."""
    out = []
    for row in rows:
        acc = float(np.mean([c["acc"] for c in row["cells"]]))
        mf1 = float(np.mean([c["mf1"] for c in row["cells"]]))
        out.append({**row["flags"], "acc": acc, "mf1": mf1, "n_cells": len(row["cells"])})
    full = next(r for r in out if r["time_elr"] and r["fourier_elr"] and r["ff_cdr"])
    singles = [r for r in out if r["time_elr"] + r["fourier_elr"] + r["ff_cdr"] == 1]
    exceptions = [r for r in singles if r["acc"] > full["acc"]]
    return {"rows": out, "exceptions": exceptions}


def table(cells):
    """Aggregate grid cells into rows of per-target mean ACC/MF1 plus the average."""
    groups = {}
    for c in cells:
        groups.setdefault((c["noise_type"], c["rate"]), {}).setdefault(c["target"], []).append(c)
    rows = []
    for (nt, rate), by_target in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        targets = {}
        for t in sorted(by_target, key=lambda t: DOMAIN_NAMES.index(t) if t in DOMAIN_NAMES else t):
            acc = _mean_std([c["acc"] for c in by_target[t]])
            mf1 = _mean_std([c["mf1"] for c in by_target[t]])
            targets[t] = {"acc": acc[0], "acc_std": acc[1], "mf1": mf1[0], "mf1_std": mf1[1],
                          "n_seeds": len(by_target[t])}
        rows.append({
            "noise_type": nt, "rate": rate, "targets": targets,
            "average": {"acc": float(np.mean([v["acc"] for v in targets.values()])),
                        "mf1": float(np.mean([v["mf1"] for v in targets.values()]))},
        })
    return {"rows": rows}


def write_table(tab, json_path=None, csv_path=None):
    if json_path:
        with open(json_path, "w") as fh:
            json.dump(tab, fh, indent=2)
    if csv_path:
        targets = []
        for row in tab["rows"]:
            targets += [t for t in row["targets"] if t not in targets]
        with open(csv_path, "w") as fh:
            head = ["noise_type", "rate"] + [f"{t}_{m}" for t in targets for m in ("acc", "mf1")]
            fh.write(",".join(head + ["avg_acc", "avg_mf1"]) + "\n")
            for row in tab["rows"]:
                vals = [row["noise_type"], f"{row['rate']:g}"]
                for t in targets:
                    cell = row["targets"].get(t)
                    vals += [f"{cell['acc']:.6f}", f"{cell['mf1']:.6f}"] if cell else ["", ""]
                vals += [f"{row['average']['acc']:.6f}", f"{row['average']['mf1']:.6f}"]
                fh.write(",".join(vals) + "\n")
