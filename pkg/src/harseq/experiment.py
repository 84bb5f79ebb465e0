"""Training loops, evaluation metrics, and the few-shot/imbalance protocols.

Training runs a fixed epoch budget with a stratified train/validation
split; the parameters from the epoch with the best validation macro-F1 are
restored at the end. Token-level augmentation happens only inside the
training batches; validation and test always score the original label
sequences via constrained decoding (sequence model) or argmax (baseline).
All randomness is drawn from one generator seeded by the config.
"""

import json
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .data import (
    Dataset,
    compute_normalization_stats,
    downsample,
    normalize,
    stratified_split,
    subsample_train,
)
from .errors import ValidationError
from .labelspace import LabelSpace, augment_label, load_embeddings
from .model import (
    EncoderConfig,
    ShareModel,
    VanillaModel,
    constrained_decode,
    count_parameters,
    encode,
    restore_parameters,
    snapshot_parameters,
    teacher_forced_loss,
    vanilla_forward,
    vanilla_logits,
)
from .numkernel import Adam

EVAL_CHUNK = 256


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 1e-4
    p_aug: float = 0.5
    val_fraction: float = 0.2
    seed: int = 0
    embedding_path: str | None = None
    label_map_path: str | None = None
    stop_tokens_path: str | None = None
    conv_channels: tuple = (64, 128)
    hidden_dim: int = 128
    embed_dim: int = 64
    retrain_full: bool = False

    def __post_init__(self):
        if self.epochs < 0:
            raise ValidationError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValidationError("batch size must be at least 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValidationError("val fraction must lie in (0, 1)")
        if not 0.0 <= self.p_aug <= 1.0:
            raise ValidationError("p_aug must lie in [0, 1]")
        if self.learning_rate <= 0:
            raise ValidationError("learning rate must be positive")

    def as_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "p_aug": self.p_aug,
            "val_fraction": self.val_fraction,
            "seed": self.seed,
            "embedding_path": self.embedding_path,
            "label_map_path": self.label_map_path,
            "stop_tokens_path": self.stop_tokens_path,
            "conv_channels": list(self.conv_channels),
            "hidden_dim": self.hidden_dim,
            "embed_dim": self.embed_dim,
            "retrain_full": self.retrain_full,
        }


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: tuple
    recall: tuple
    f1: tuple
    macro_f1: float
    confusion: tuple  # rows = truth, cols = prediction

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": list(self.precision),
            "recall": list(self.recall),
            "f1": list(self.f1),
            "macro_f1": self.macro_f1,
            "confusion": [list(row) for row in self.confusion],
        }

    @staticmethod
    def from_dict(d: dict) -> "Metrics":
        return Metrics(
            accuracy=d["accuracy"],
            precision=tuple(d["precision"]),
            recall=tuple(d["recall"]),
            f1=tuple(d["f1"]),
            macro_f1=d["macro_f1"],
            confusion=tuple(tuple(row) for row in d["confusion"]),
        )


def compute_metrics(y_true, y_pred, num_classes: int) -> Metrics:
    """Accuracy, per-class precision/recall/F1, macro-F1, confusion matrix.

    Per-class F1 is 0 whenever precision + recall is 0, so classes absent
    from both truth and predictions still count in the macro mean.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValidationError("prediction and truth vectors differ in length")
    if y_true.size == 0:
        raise ValidationError("cannot compute metrics of an empty set")
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(conf, (y_true, y_pred), 1)
    precision, recall, f1 = [], [], []
    for c in range(num_classes):
        tp = int(conf[c, c])
        pred_c = int(conf[:, c].sum())
        true_c = int(conf[c, :].sum())
        p = tp / pred_c if pred_c > 0 else 0.0
        r = tp / true_c if true_c > 0 else 0.0
        precision.append(p)
        recall.append(r)
        f1.append(2.0 * p * r / (p + r) if (p + r) > 0 else 0.0)
    accuracy = int(np.trace(conf)) / int(conf.sum())
    macro_f1 = sum(f1) / num_classes
    return Metrics(accuracy=accuracy, precision=tuple(precision), recall=tuple(recall),
                   f1=tuple(f1), macro_f1=macro_f1,
                   confusion=tuple(tuple(int(v) for v in row) for row in conf))


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_macro_f1: float

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "train_loss": self.train_loss,
                "val_loss": self.val_loss, "val_macro_f1": self.val_macro_f1}


@dataclass
class RunRecord:
    model_kind: str
    config: dict
    seed: int
    parameter_count: int
    epochs: list = field(default_factory=list)
    final_test: Metrics | None = None
    wall_clock_seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "model_kind": self.model_kind,
            "config": self.config,
            "seed": self.seed,
            "parameter_count": self.parameter_count,
            "epochs": [e.to_dict() for e in self.epochs],
            "final_test": self.final_test.to_dict() if self.final_test else None,
            "wall_clock_seconds": self.wall_clock_seconds,
        }

    @staticmethod
    def from_dict(d: dict) -> "RunRecord":
        return RunRecord(
            model_kind=d["model_kind"],
            config=d["config"],
            seed=d["seed"],
            parameter_count=d["parameter_count"],
            epochs=[EpochRecord(**e) for e in d["epochs"]],
            final_test=Metrics.from_dict(d["final_test"]) if d["final_test"] else None,
            wall_clock_seconds=d["wall_clock_seconds"],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @staticmethod
    def from_json(text: str) -> "RunRecord":
        return RunRecord.from_dict(json.loads(text))


def _split_for_training(dataset: Dataset, config: TrainConfig):
    train_ds, val_ds = stratified_split(dataset, config.val_fraction, seed=config.seed)
    counts = {c: len(idx) for c, idx in train_ds.class_indices().items()}
    empty = sorted(c for c, n in counts.items() if n == 0)
    if empty:
        names = [dataset.label_names[c] for c in empty]
        raise ValidationError(f"classes with no training samples: {names!r}")
    if config.epochs > 0 and len(val_ds) == 0:
        raise ValidationError("validation split is empty; dataset too small for val_fraction")
    return train_ds, val_ds


def _share_val_metrics(model, x_val, y_val, space, num_classes):
    bodies = [list(space.sequences[int(y)].tokens) for y in y_val]
    val_loss = 0.0
    preds = np.empty(len(y_val), dtype=np.int64)
    for lo in range(0, len(y_val), EVAL_CHUNK):
        hi = min(lo + EVAL_CHUNK, len(y_val))
        chunk_loss = teacher_forced_loss(model, x_val[lo:hi], bodies[lo:hi], space, mode="eval")
        val_loss += chunk_loss * (hi - lo)
        for i, result in enumerate(constrained_decode(model, x_val[lo:hi], space)):
            preds[lo + i] = result.class_id
    return val_loss / len(y_val), compute_metrics(y_val, preds, num_classes)


def _vanilla_val_metrics(model, x_val, y_val, num_classes):
    val_loss = 0.0
    preds = np.empty(len(y_val), dtype=np.int64)
    for lo in range(0, len(y_val), EVAL_CHUNK):
        hi = min(lo + EVAL_CHUNK, len(y_val))
        loss, logits = vanilla_forward(model, x_val[lo:hi], y_val[lo:hi], mode="eval")
        val_loss += loss * (hi - lo)
        preds[lo:hi] = logits.argmax(axis=1)
    return val_loss / len(y_val), compute_metrics(y_val, preds, num_classes)


def train_share(dataset: Dataset, space: LabelSpace, config: TrainConfig):
    """Train the sequence model; returns (model, RunRecord).

    Expects an already windowed and normalized dataset. Each batch draws an
    augmented target per sample, takes one Adam step on the teacher-forced
    loss, and every epoch scores the validation split with constrained
    decoding; the best-validation parameters are restored at the end.
    """
    if space.num_classes != dataset.num_classes:
        raise ValidationError(
            f"label space has {space.num_classes} classes, dataset has {dataset.num_classes}")
    started = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    train_ds, val_ds = _split_for_training(dataset, config)
    enc = EncoderConfig(in_channels=dataset.channels, conv_channels=tuple(config.conv_channels))
    table = None
    if config.embedding_path:
        table = load_embeddings(config.embedding_path, space, config.embed_dim, rng)
    model = ShareModel(space, enc, hidden_dim=config.hidden_dim,
                       embed_dim=config.embed_dim, embedding_table=table, rng=rng)
    record = RunRecord(model_kind=model.kind, config=config.as_dict(), seed=config.seed,
                       parameter_count=count_parameters(model))

    def fit(target_model, fit_ds, epochs, track_validation):
        opt = Adam(target_model.parameters(), lr=config.learning_rate)
        x_tr, y_tr = fit_ds.stacked()
        x_val, y_val = val_ds.stacked()
        best = (-1.0, None)
        for epoch in range(1, epochs + 1):
            order = rng.permutation(len(y_tr))
            total = 0.0
            for lo in range(0, len(order), config.batch_size):
                idx = order[lo:lo + config.batch_size]
                bodies = [augment_label(space.sequences[int(y_tr[i])], config.p_aug, rng)
                          for i in idx]
                opt.zero_grad()
                loss = teacher_forced_loss(target_model, x_tr[idx], bodies, space,
                                           mode="train", backward=True)
                opt.step()
                total += loss * len(idx)
            if not track_validation:
                continue
            val_loss, val_metrics = _share_val_metrics(
                target_model, x_val, y_val, space, dataset.num_classes)
            record.epochs.append(EpochRecord(epoch=epoch, train_loss=total / len(y_tr),
                                             val_loss=val_loss,
                                             val_macro_f1=val_metrics.macro_f1))
            if val_metrics.macro_f1 > best[0]:
                best = (val_metrics.macro_f1, snapshot_parameters(target_model))
        if track_validation and best[1] is not None:
            restore_parameters(target_model, best[1])

    fit(model, train_ds, config.epochs, track_validation=True)
    if config.retrain_full and record.epochs:
        best_epoch = 1 + int(np.argmax([e.val_macro_f1 for e in record.epochs]))
        rng = np.random.default_rng(config.seed)
        model = ShareModel(space, enc, hidden_dim=config.hidden_dim,
                           embed_dim=config.embed_dim, embedding_table=table, rng=rng)
        fit(model, dataset, best_epoch, track_validation=False)
    record.wall_clock_seconds = time.perf_counter() - started
    return model, record


def train_vanilla(dataset: Dataset, config: TrainConfig):
    """Train the linear-head baseline with the same loop, minus augmentation."""
    started = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    train_ds, val_ds = _split_for_training(dataset, config)
    enc = EncoderConfig(in_channels=dataset.channels, conv_channels=tuple(config.conv_channels))
    model = VanillaModel(dataset.num_classes, enc, rng=rng)
    record = RunRecord(model_kind=model.kind, config=config.as_dict(), seed=config.seed,
                       parameter_count=count_parameters(model))

    def fit(target_model, fit_ds, epochs, track_validation):
        opt = Adam(target_model.parameters(), lr=config.learning_rate)
        x_tr, y_tr = fit_ds.stacked()
        x_val, y_val = val_ds.stacked()
        best = (-1.0, None)
        for epoch in range(1, epochs + 1):
            order = rng.permutation(len(y_tr))
            total = 0.0
            for lo in range(0, len(order), config.batch_size):
                idx = order[lo:lo + config.batch_size]
                opt.zero_grad()
                loss, _ = vanilla_forward(target_model, x_tr[idx], y_tr[idx],
                                          mode="train", backward=True)
                opt.step()
                total += loss * len(idx)
            if not track_validation:
                continue
            val_loss, val_metrics = _vanilla_val_metrics(
                target_model, x_val, y_val, dataset.num_classes)
            record.epochs.append(EpochRecord(epoch=epoch, train_loss=total / len(y_tr),
                                             val_loss=val_loss,
                                             val_macro_f1=val_metrics.macro_f1))
            if val_metrics.macro_f1 > best[0]:
                best = (val_metrics.macro_f1, snapshot_parameters(target_model))
        if track_validation and best[1] is not None:
            restore_parameters(target_model, best[1])

    fit(model, train_ds, config.epochs, track_validation=True)
    if config.retrain_full and record.epochs:
        best_epoch = 1 + int(np.argmax([e.val_macro_f1 for e in record.epochs]))
        rng = np.random.default_rng(config.seed)
        model = VanillaModel(dataset.num_classes, enc, rng=rng)
        fit(model, dataset, best_epoch, track_validation=False)
    record.wall_clock_seconds = time.perf_counter() - started
    return model, record


def predict_classes(model, x: np.ndarray, space: LabelSpace | None = None) -> np.ndarray:
    """Class predictions for a stacked batch, dispatching on model kind."""
    preds = np.empty(x.shape[0], dtype=np.int64)
    for lo in range(0, x.shape[0], EVAL_CHUNK):
        hi = min(lo + EVAL_CHUNK, x.shape[0])
        if isinstance(model, ShareModel):
            target_space = space if space is not None else model.space
            for i, result in enumerate(constrained_decode(model, x[lo:hi], target_space)):
                preds[lo + i] = result.class_id
        else:
            preds[lo:hi] = vanilla_logits(model, x[lo:hi]).argmax(axis=1)
    return preds


def evaluate(model, dataset: Dataset, space: LabelSpace | None = None) -> Metrics:
    """Score a dataset with constrained decoding (sequence model) or argmax."""
    x, y = dataset.stacked()
    preds = predict_classes(model, x, space)
    return compute_metrics(y, preds, dataset.num_classes)


def run_fewshot_suite(train_dataset: Dataset, test_dataset: Dataset, space: LabelSpace,
                      fractions, seeds, config: TrainConfig):
    """Reduced-training-sample protocol over fractions x seeds x both models.

    Each cell subsamples the training set, normalizes with that cell's
    training statistics, trains both models, and evaluates on the untouched
    test split. Returns one RunRecord per (fraction, seed, model).
    """
    records = []
    for fraction in fractions:
        for seed in seeds:
            sub = subsample_train(train_dataset, fraction, seed)
            stats = compute_normalization_stats(sub)
            tr = normalize(sub, stats)
            te = normalize(test_dataset, stats)
            cfg = replace(config, seed=seed)
            for trainer in (lambda d, c: train_share(d, space, c), train_vanilla):
                model, record = trainer(tr, cfg)
                record.final_test = evaluate(model, te, space)
                record.config["train_fraction"] = fraction
                records.append(record)
    return records


def run_downsample_suite(train_dataset: Dataset, test_dataset: Dataset, space: LabelSpace,
                         factors, seeds, config: TrainConfig):
    """Reduced-sampling-frequency protocol; factors leaving too few timesteps
    are skipped with a warning."""
    records = []
    for factor in factors:
        try:
            tr_ds = downsample(train_dataset, factor)
            te_ds = downsample(test_dataset, factor)
        except ValidationError as exc:
            warnings.warn(f"skipping downsample factor {factor}: {exc}")
            continue
        for seed in seeds:
            stats = compute_normalization_stats(tr_ds)
            tr = normalize(tr_ds, stats)
            te = normalize(te_ds, stats)
            cfg = replace(config, seed=seed)
            for trainer in (lambda d, c: train_share(d, space, c), train_vanilla):
                model, record = trainer(tr, cfg)
                record.final_test = evaluate(model, te, space)
                record.config["downsample_factor"] = factor
                records.append(record)
    return records


def export_features(model, dataset: Dataset, path) -> None:
    """Write eval-mode encoder features plus class ids as CSV (d + 1 columns)."""
    x, y = dataset.stacked()
    dim = model.encoder_config.feature_dim
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(f"f{i}" for i in range(dim)) + ",class_id\n")
        for lo in range(0, x.shape[0], EVAL_CHUNK):
            hi = min(lo + EVAL_CHUNK, x.shape[0])
            z = encode(model, x[lo:hi], mode="eval")
            for row, cid in zip(z, y[lo:hi]):
                f.write(",".join(repr(float(v)) for v in row) + f",{int(cid)}\n")


def write_records_json(records, path) -> None:
    payload = {"records": [r.to_dict() for r in records]}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")


def load_records_json(path):
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    return [RunRecord.from_dict(d) for d in payload["records"]]


def summarize_records(records) -> list:
    """Mean +/- std of test accuracy and macro-F1 per (cell, model) group."""
    groups: dict = {}
    for r in records:
        cell = r.config.get("train_fraction", r.config.get("downsample_factor", "full"))
        groups.setdefault((cell, r.model_kind), []).append(r)
    rows = []
    for (cell, kind) in sorted(groups, key=lambda k: (str(k[0]), k[1])):
        runs = groups[(cell, kind)]
        accs = np.array([r.final_test.accuracy for r in runs if r.final_test])
        f1s = np.array([r.final_test.macro_f1 for r in runs if r.final_test])
        rows.append({
            "cell": cell,
            "model": kind,
            "runs": len(runs),
            "accuracy_mean": float(accs.mean()),
            "accuracy_std": float(accs.std()),
            "macro_f1_mean": float(f1s.mean()),
            "macro_f1_std": float(f1s.std()),
        })
    return rows


def write_summary_csv(records, path) -> None:
    rows = summarize_records(records)
    cols = ["cell", "model", "runs", "accuracy_mean", "accuracy_std",
            "macro_f1_mean", "macro_f1_std"]
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(cols) + "\n")
        for row in rows:
            f.write(",".join(str(row[c]) for c in cols) + "\n")


def write_confusion_csv(metrics: Metrics, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for row in metrics.confusion:
            f.write(",".join(str(v) for v in row) + "\n")
