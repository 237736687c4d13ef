"""Leave-one-subject-out harness, metrics, and analysis reports.

Each fold holds out one user cluster as the unseen target, trains a freshly
seeded model on the remaining clusters, and records per-epoch losses plus the
held-out accuracy trajectory. The per-epoch target accuracy is analysis-only:
nothing in training (no early stopping, no model selection) may read it.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adversary import Phase, PhaseSchedule, discriminator_step, phase_of
from .config import RunConfig
from .data import ChannelStats, SensorDataset, WindowSet
from .edge_features import report_attention
from .errors import ConfigError, ProtocolError
from .graph import SensorGraph, build_graph, default_rules, load_rules_file
from .heads import LossWeights, total_loss
from .model import AnatGraphModel
from .optim import make_optimizer
from .stats import ConstantSeriesError, pearson_r_p
from . import tensor as T

METRICS_FORMAT_VERSION = 1
LOSS_SERIES = ("har", "recon", "kl", "edge_class", "disc")


@dataclass(frozen=True)
class FoldSpec:
    """One LOSO fold: the held-out cluster and the source clusters."""

    held_out: str
    source: tuple[str, ...]


@dataclass
class EpochRow:
    epoch: int
    phase: str
    har: float
    recon: float
    kl: float
    edge_class: float
    disc: float
    target_accuracy: float


@dataclass
class ExperimentRecord:
    """Everything one fold produces."""

    fold: str
    epochs: list[EpochRow]
    final_accuracy: float
    confusion: np.ndarray
    attention: list[dict]
    n_train: int
    n_target: int
    window_overlap: int

    def loss_series(self, name: str) -> np.ndarray:
        return np.array([getattr(row, name) for row in self.epochs])


def make_folds(clusters: dict[str, list[str]]) -> list[FoldSpec]:
    if len(clusters) < 2:
        raise ProtocolError(f"leave-one-subject-out needs at least 2 clusters, got {len(clusters)}")
    names = sorted(clusters)
    return [FoldSpec(held_out=name, source=tuple(n for n in names if n != name)) for name in names]


def resolve_graph(dataset: SensorDataset, cfg: RunConfig) -> SensorGraph:
    if cfg.graph.rules_path:
        layout, rules = load_rules_file(cfg.graph.rules_path)
        if layout.positions != dataset.layout.positions:
            raise ConfigError("rules file layout does not match the dataset layout")
        return build_graph(layout, rules)
    return build_graph(dataset.layout, default_rules(dataset.layout, cfg.graph.cross_lateral))


def _window_hashes(windows: WindowSet) -> set[bytes]:
    return {hashlib.sha256(windows.x[i].tobytes()).digest() for i in range(len(windows))}


def confusion_matrix(preds: np.ndarray, truths: np.ndarray, n_classes: int) -> np.ndarray:
    """Counts[i, j] = windows of true class i predicted as class j."""
    preds = np.asarray(preds, dtype=np.intp)
    truths = np.asarray(truths, dtype=np.intp)
    if preds.shape != truths.shape:
        raise ValueError(f"prediction and truth lengths differ: {preds.shape} vs {truths.shape}")
    for name, arr in (("prediction", preds), ("truth", truths)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ValueError(f"{name} label outside [0, {n_classes})")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (truths, preds), 1)
    return counts


def run_fold(dataset: SensorDataset, spec: FoldSpec, cfg: RunConfig, fold_index: int) -> ExperimentRecord:
    """Train one fold from scratch and evaluate on its held-out cluster."""
    target_users = set(dataset.clusters[spec.held_out])
    source_users = sorted(u for name in spec.source for u in dataset.clusters[name])
    target_mask = np.isin(dataset.windows.user, sorted(target_users))
    train_raw = dataset.windows.subset(~target_mask)
    target_raw = dataset.windows.subset(target_mask)
    if len(train_raw) == 0 or len(target_raw) == 0:
        raise ProtocolError(f"fold {spec.held_out!r} has an empty train or target split")

    overlap = len(_window_hashes(train_raw) & _window_hashes(target_raw))

    stats = ChannelStats.fit(train_raw)
    train = stats.apply(train_raw)
    target = stats.apply(target_raw)

    user_index = {u: i for i, u in enumerate(source_users)}
    train_user_idx = np.array([user_index[u] for u in train.user], dtype=np.intp)

    graph = resolve_graph(dataset, cfg)
    model = AnatGraphModel(
        graph, dataset.n_activities, len(source_users),
        channels=train.x.shape[3], t_len=train.x.shape[2],
        cfg=cfg.model, seed=[cfg.seed, fold_index, 0],
        attention_mode=cfg.train.attention,
    )
    optimizer = make_optimizer(cfg.train.optimizer, model.parameters(), cfg.train.lr)
    weights = LossWeights(lambda_edge=cfg.loss.lambda_edge, kl_weight=cfg.loss.kl_weight,
                          zeta=cfg.loss.zeta)
    sched = PhaseSchedule(m_epochs=cfg.train.m_epochs, zeta=cfg.loss.zeta)
    rng = np.random.default_rng([cfg.seed, fold_index, 1])

    n_train = len(train)
    rows: list[EpochRow] = []
    for epoch in range(1, cfg.train.epochs + 1):
        model.set_training(True)
        phase = phase_of(epoch, sched)
        warmup = epoch <= cfg.train.cvae_warmup_epochs
        order = rng.permutation(n_train)
        sums = dict.fromkeys(LOSS_SERIES, 0.0)
        n_batches = 0
        for start in range(0, n_train, cfg.train.batch_size):
            idx = order[start:start + cfg.train.batch_size]
            if idx.size < 2:
                continue  # batch norm needs at least two rows
            noise = rng.standard_normal((graph.n_edges, model.latent_dim))
            out = model.forward(train.x[idx], noise)
            har = T.cross_entropy(out.activity_probs, T.one_hot(train.activity[idx], dataset.n_activities))
            _, recon, kl, edge_class = model.edge_extractor.cvae_loss(
                out.edge, weights.lambda_edge, weights.kl_weight)
            disc, _ = discriminator_step(model.discriminator, out.g, train_user_idx[idx],
                                         phase, weights.zeta)
            if warmup:
                loss = model.edge_extractor.cvae_loss(out.edge, weights.lambda_edge, weights.kl_weight)[0]
                breakdown_raw = {"har": har.item(), "recon": recon.item(), "kl": kl.item(),
                                 "edge_class": edge_class.item(), "disc": disc.item()}
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
            else:
                breakdown = total_loss(har, recon, kl, edge_class, disc, weights)
                breakdown_raw = breakdown.raw
                optimizer.zero_grad()
                breakdown.total.backward()
                optimizer.step()
            for name in LOSS_SERIES:
                sums[name] += breakdown_raw[name]
            n_batches += 1
        if n_batches == 0:
            raise ProtocolError("training split too small for the configured batch size")
        preds = model.predict(target.x)
        acc = float((preds == target.activity).mean())
        rows.append(EpochRow(
            epoch=epoch, phase=phase.value,
            **{name: sums[name] / n_batches for name in LOSS_SERIES},
            target_accuracy=acc,
        ))

    preds = model.predict(target.x)
    final_acc = float((preds == target.activity).mean())
    alpha = model.attention_weights()
    return ExperimentRecord(
        fold=spec.held_out,
        epochs=rows,
        final_accuracy=final_acc,
        confusion=confusion_matrix(preds, target.activity, dataset.n_activities),
        attention=report_attention(alpha, graph),
        n_train=len(train),
        n_target=len(target),
        window_overlap=overlap,
    )


def _fold_task(args):
    dataset, spec, cfg, fold_index = args
    return run_fold(dataset, spec, cfg, fold_index)


def run_loso(dataset: SensorDataset, cfg: RunConfig, parallel_folds: int = 1) -> list[ExperimentRecord]:
    """Run every fold of the leave-one-subject-out protocol."""
    folds = make_folds(dataset.clusters)
    if parallel_folds > 1:
        with ProcessPoolExecutor(max_workers=parallel_folds) as pool:
            records = list(pool.map(_fold_task, [(dataset, spec, cfg, i) for i, spec in enumerate(folds)]))
    else:
        records = [run_fold(dataset, spec, cfg, i) for i, spec in enumerate(folds)]
    return records


def summarize(records: list[ExperimentRecord]) -> dict:
    """Mean and population standard deviation of fold accuracies."""
    if not records:
        raise ProtocolError("no fold records to summarize")
    accs = np.array([r.final_accuracy for r in records])
    return {"mean_accuracy": float(accs.mean()), "std_accuracy": float(accs.std())}


# -- correlation analysis --------------------------------------------------------


def pearson_analysis(record: ExperimentRecord, prefix_step: int = 10) -> list[dict]:
    """Correlate each loss series with target accuracy over epoch prefixes.

    Prefix ends run at ``prefix_step`` increments (the final epoch is added
    when it is not itself a multiple). Constant series yield an "undefined"
    entry instead of a correlation.
    """
    if prefix_step < 1:
        raise ValueError(f"prefix_step must be >= 1, got {prefix_step}")
    n_epochs = len(record.epochs)
    ends = [e for e in range(prefix_step, n_epochs + 1, prefix_step)]
    if n_epochs >= 3 and (not ends or ends[-1] != n_epochs):
        ends.append(n_epochs)
    accuracy = np.array([row.target_accuracy for row in record.epochs])
    out = []
    for name in LOSS_SERIES:
        series = record.loss_series(name)
        for end in ends:
            if end < 3:
                continue
            entry = {"loss": name, "prefix_end": end}
            try:
                r, p = pearson_r_p(series[:end], accuracy[:end])
                entry.update(r=r, p=p, defined=True)
            except ConstantSeriesError:
                entry.update(r=None, p=None, defined=False)
            out.append(entry)
    return out


# -- report rendering -------------------------------------------------------------


def _csv_line(values) -> str:
    return ",".join(str(v) for v in values) + "\n"


def report(records: list[ExperimentRecord], out_dir: str | Path, class_names: list[str],
           prefix_step: int = 10) -> dict[str, Path]:
    """Write metrics.json and the CSV artifacts for a completed run."""
    if not records:
        raise ProtocolError("cannot report an empty record list")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}

    metrics = {
        "format_version": METRICS_FORMAT_VERSION,
        "class_names": class_names,
        "folds": [
            {
                "fold": r.fold,
                "accuracy": r.final_accuracy,
                "n_train": r.n_train,
                "n_target": r.n_target,
                "window_overlap": r.window_overlap,
                "per_class_target_counts": [int(c) for c in r.confusion.sum(axis=1)],
            }
            for r in records
        ],
        "summary": summarize(records),
    }
    metrics_path = out / "metrics.json"
    metrics_path.write_text(json.dumps(metrics, indent=2, sort_keys=True))
    written["metrics"] = metrics_path

    log_path = out / "training_log.csv"
    with open(log_path, "w") as fh:
        fh.write(_csv_line(["fold", "epoch", "phase", "loss_har", "loss_recon", "loss_kl",
                            "loss_edge_class", "loss_disc", "target_accuracy"]))
        for r in records:
            for row in r.epochs:
                fh.write(_csv_line([r.fold, row.epoch, row.phase, repr(row.har), repr(row.recon),
                                    repr(row.kl), repr(row.edge_class), repr(row.disc),
                                    repr(row.target_accuracy)]))
    written["training_log"] = log_path

    for r in records:
        conf_path = out / f"confusion_{r.fold}.csv"
        with open(conf_path, "w") as fh:
            fh.write(_csv_line(["true\\pred"] + list(class_names)))
            for i, name in enumerate(class_names):
                fh.write(_csv_line([name] + [int(c) for c in r.confusion[i]]))
        written[f"confusion_{r.fold}"] = conf_path

        attn_path = out / f"attention_{r.fold}.csv"
        with open(attn_path, "w") as fh:
            fh.write(_csv_line(["edge_src", "edge_dst", "relation_type", "weight_pct", "rank"]))
            for row in r.attention:
                fh.write(_csv_line([row["edge_src"], row["edge_dst"], row["relation_type"],
                                    repr(row["weight_pct"]), row["rank"]]))
        written[f"attention_{r.fold}"] = attn_path

    pearson_path = out / "pearson.csv"
    with open(pearson_path, "w") as fh:
        fh.write(_csv_line(["scope", "loss", "prefix_end", "r", "p"]))
        for r in records:
            for entry in pearson_analysis(r, prefix_step):
                r_str = repr(entry["r"]) if entry["defined"] else "undefined"
                p_str = repr(entry["p"]) if entry["defined"] else "undefined"
                fh.write(_csv_line([r.fold, entry["loss"], entry["prefix_end"], r_str, p_str]))
        for entry in pooled_pearson(records, prefix_step):
            r_str = repr(entry["r"]) if entry["defined"] else "undefined"
            p_str = repr(entry["p"]) if entry["defined"] else "undefined"
            fh.write(_csv_line(["pooled", entry["loss"], entry["prefix_end"], r_str, p_str]))
    written["pearson"] = pearson_path
    return written


def pooled_pearson(records: list[ExperimentRecord], prefix_step: int = 10) -> list[dict]:
    """Correlations over fold-concatenated series, labeled separately from per-fold ones."""
    if not records:
        return []
    n_epochs = min(len(r.epochs) for r in records)
    ends = [e for e in range(prefix_step, n_epochs + 1, prefix_step)]
    if n_epochs >= 3 and (not ends or ends[-1] != n_epochs):
        ends.append(n_epochs)
    out = []
    accuracy = {r.fold: np.array([row.target_accuracy for row in r.epochs]) for r in records}
    for name in LOSS_SERIES:
        for end in ends:
            if end < 3:
                continue
            xs = np.concatenate([r.loss_series(name)[:end] for r in records])
            ys = np.concatenate([accuracy[r.fold][:end] for r in records])
            entry = {"loss": name, "prefix_end": end}
            try:
                r_val, p_val = pearson_r_p(xs, ys)
                entry.update(r=r_val, p=p_val, defined=True)
            except ConstantSeriesError:
                entry.update(r=None, p=None, defined=False)
            out.append(entry)
    return out


# -- record serialization (for `report` re-rendering) ------------------------------


def records_to_json(records: list[ExperimentRecord], class_names: list[str]) -> dict:
    return {
        "format_version": METRICS_FORMAT_VERSION,
        "class_names": class_names,
        "records": [
            {
                "fold": r.fold,
                "epochs": [vars(row) for row in r.epochs],
                "final_accuracy": r.final_accuracy,
                "confusion": r.confusion.tolist(),
                "attention": r.attention,
                "n_train": r.n_train,
                "n_target": r.n_target,
                "window_overlap": r.window_overlap,
            }
            for r in records
        ],
    }


def records_from_json(doc: dict) -> tuple[list[ExperimentRecord], list[str]]:
    records = [
        ExperimentRecord(
            fold=entry["fold"],
            epochs=[EpochRow(**row) for row in entry["epochs"]],
            final_accuracy=entry["final_accuracy"],
            confusion=np.array(entry["confusion"], dtype=np.int64),
            attention=entry["attention"],
            n_train=entry["n_train"],
            n_target=entry["n_target"],
            window_overlap=entry["window_overlap"],
        )
        for entry in doc["records"]
    ]
    return records, list(doc["class_names"])


def save_records(records: list[ExperimentRecord], class_names: list[str], out_dir: str | Path) -> Path:
    path = Path(out_dir) / "records.json"
    path.write_text(json.dumps(records_to_json(records, class_names), sort_keys=True))
    return path


def load_records(path: str | Path) -> tuple[list[ExperimentRecord], list[str]]:
    return records_from_json(json.loads(Path(path).read_text()))
