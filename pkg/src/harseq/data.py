"""Dataset ingestion, windowing, and the synthetic generator.

The one canonical on-disk format is a CSV with header
``subject,timestamp,label,ch0,...,ch{v-1}``. Contiguous rows sharing a
subject and label form a run; runs are cut into fixed-length windows with
a configurable stride, and windows never span a label change. Windowed
datasets can be cached to the binary tensor container for fast reload.

The synthetic generator produces classes defined by (action, object)
pattern pairs: classes sharing an action id share a waveform on the
action-driven channels, mirroring shared tokens in their generated label
names ("action{a} object{o}").
"""

import csv
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import FormatError, ValidationError
from .numkernel import load_container, save_container


@dataclass(frozen=True)
class TimeSeriesSample:
    values: np.ndarray  # [channels, time]
    class_id: int


@dataclass(frozen=True)
class Dataset:
    samples: tuple
    label_names: tuple
    channels: int
    window: int

    def __post_init__(self):
        for s in self.samples:
            if s.values.shape != (self.channels, self.window):
                raise ValidationError(
                    f"sample shape {s.values.shape} differs from "
                    f"({self.channels}, {self.window})")
            if not 0 <= s.class_id < len(self.label_names):
                raise ValidationError(f"class id {s.class_id} outside label set")

    def __len__(self):
        return len(self.samples)

    @property
    def num_classes(self) -> int:
        return len(self.label_names)

    def stacked(self):
        """(values [n, channels, window], class_ids [n])."""
        x = np.stack([s.values for s in self.samples]) if self.samples else \
            np.zeros((0, self.channels, self.window))
        y = np.array([s.class_id for s in self.samples], dtype=np.int64)
        return x, y

    def class_indices(self) -> dict:
        out: dict[int, list] = {c: [] for c in range(self.num_classes)}
        for i, s in enumerate(self.samples):
            out[s.class_id].append(i)
        return out


@dataclass(frozen=True)
class NormalizationStats:
    mean: np.ndarray  # [channels]
    std: np.ndarray  # [channels], floored at 1e-8


def load_dataset(data_path, labels_path, window: int, stride: int) -> Dataset:
    """Window a CSV recording into fixed-length samples.

    Runs shorter than the window are skipped with a warning; unknown label
    strings and ragged rows are errors that name the offending row.
    """
    from .labelspace import load_class_names

    if window < 3:
        raise ValidationError(f"window must be at least 3, got {window}")
    if stride < 1:
        raise ValidationError(f"stride must be positive, got {stride}")
    label_names = load_class_names(labels_path)
    name_to_id = {n: i for i, n in enumerate(label_names)}

    with open(data_path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{data_path}: empty file") from None
        if len(header) < 4 or [h.strip() for h in header[:3]] != ["subject", "timestamp", "label"]:
            raise FormatError(
                f"{data_path}: header must be subject,timestamp,label,ch0,... got {header}")
        v = len(header) - 3

        samples = []
        run_rows: list = []
        run_key = None

        def flush_run():
            if not run_rows:
                return
            if len(run_rows) < window:
                warnings.warn(
                    f"{data_path}: run of {len(run_rows)} rows (label "
                    f"{label_names[run_key[1]]!r}) shorter than window {window}, skipped")
                return
            arr = np.array(run_rows, dtype=np.float64).T  # [v, run_len]
            for start in range(0, arr.shape[1] - window + 1, stride):
                samples.append(TimeSeriesSample(values=arr[:, start:start + window].copy(),
                                                class_id=run_key[1]))

        for rownum, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3 + v:
                raise FormatError(
                    f"{data_path}: row {rownum} has {len(row)} fields, expected {3 + v}")
            subject, label = row[0], row[2].strip()
            if label not in name_to_id:
                raise ValidationError(
                    f"{data_path}: unknown label {label!r} at row {rownum}")
            try:
                values = [float(cell) for cell in row[3:]]
            except ValueError:
                raise FormatError(
                    f"{data_path}: non-numeric channel value at row {rownum}") from None
            key = (subject, name_to_id[label])
            if key != run_key:
                flush_run()
                run_rows = []
                run_key = key
            run_rows.append(values)
        flush_run()

    return Dataset(samples=tuple(samples), label_names=tuple(label_names),
                   channels=v, window=window)


def compute_normalization_stats(dataset: Dataset) -> NormalizationStats:
    """Per-channel mean/std over every timestep of the given (training) split."""
    if not dataset.samples:
        raise ValidationError("cannot compute statistics of an empty dataset")
    x, _ = dataset.stacked()  # [n, v, t]
    mean = x.mean(axis=(0, 2))
    std = np.maximum(x.std(axis=(0, 2)), 1e-8)
    return NormalizationStats(mean=mean, std=std)


def normalize(dataset: Dataset, stats: NormalizationStats) -> Dataset:
    """Z-score every channel with the supplied (training split) statistics."""
    samples = tuple(
        TimeSeriesSample(values=(s.values - stats.mean[:, None]) / stats.std[:, None],
                         class_id=s.class_id)
        for s in dataset.samples)
    return replace(dataset, samples=samples)


def downsample(dataset: Dataset, factor: int) -> Dataset:
    """Keep every factor-th timestep on every sample."""
    if factor < 1:
        raise ValidationError(f"downsample factor must be positive, got {factor}")
    if factor == 1:
        return dataset
    new_window = len(range(0, dataset.window, factor))
    if new_window < 3:
        raise ValidationError(
            f"downsampling by {factor} leaves {new_window} timesteps (< 3)")
    samples = tuple(
        TimeSeriesSample(values=s.values[:, ::factor].copy(), class_id=s.class_id)
        for s in dataset.samples)
    return replace(dataset, samples=samples, window=new_window)


def subsample_train(dataset: Dataset, fraction: float, seed: int) -> Dataset:
    """Uniform subset without replacement, keeping class coverage when possible."""
    if not 0.0 < fraction <= 1.0:
        raise ValidationError(f"fraction must lie in (0, 1], got {fraction}")
    n_total = len(dataset)
    if fraction == 1.0:
        return dataset
    target = max(1, int(round(fraction * n_total)))
    rng = np.random.default_rng(seed)
    by_class = {c: idx for c, idx in dataset.class_indices().items() if idx}
    chosen: list = []
    if target >= len(by_class):
        for c in sorted(by_class):
            chosen.append(int(rng.choice(by_class[c])))
        rest = np.array(sorted(set(range(n_total)) - set(chosen)))
        extra = target - len(chosen)
        if extra > 0:
            chosen.extend(int(i) for i in rng.choice(rest, size=extra, replace=False))
    else:
        classes = rng.choice(sorted(by_class), size=target, replace=False)
        for c in classes:
            chosen.append(int(rng.choice(by_class[int(c)])))
    chosen.sort()
    samples = tuple(dataset.samples[i] for i in chosen)
    return replace(dataset, samples=samples)


def stratified_split(dataset: Dataset, holdout_fraction: float, seed: int):
    """Per-class random split into (main, holdout), preserving sample order."""
    if not 0.0 < holdout_fraction < 1.0:
        raise ValidationError(
            f"holdout fraction must lie in (0, 1), got {holdout_fraction}")
    rng = np.random.default_rng(seed)
    holdout_idx: set = set()
    by_class = dataset.class_indices()
    for c in sorted(by_class):
        idx = by_class[c]
        if not idx:
            continue
        n_hold = min(len(idx) - 1, int(round(holdout_fraction * len(idx))))
        if n_hold > 0:
            picked = rng.choice(idx, size=n_hold, replace=False)
            holdout_idx.update(int(i) for i in picked)
    main = tuple(s for i, s in enumerate(dataset.samples) if i not in holdout_idx)
    hold = tuple(s for i, s in enumerate(dataset.samples) if i in holdout_idx)
    return replace(dataset, samples=main), replace(dataset, samples=hold)


@dataclass(frozen=True)
class SyntheticSpec:
    """Desk-scale synthetic recipe: classes as (action, object) pattern pairs."""

    class_defs: tuple  # ((action_id, object_id), ...)
    samples_per_class: tuple
    noise_std: float = 0.0
    timesteps: int = 64
    channels: int = 4
    seed: int = 0

    def __post_init__(self):
        if len(set(self.class_defs)) != len(self.class_defs):
            raise ValidationError("synthetic class definitions must be distinct pairs")
        if len(self.samples_per_class) != len(self.class_defs):
            raise ValidationError("samples_per_class must match class_defs in length")
        if self.timesteps < 3 or self.channels < 2:
            raise ValidationError("need timesteps >= 3 and channels >= 2")
        if self.noise_std < 0:
            raise ValidationError("noise_std must be non-negative")


def synthetic_label_names(spec: SyntheticSpec) -> list[str]:
    return [f"action{a} object{o}" for a, o in spec.class_defs]


def _class_signal(spec: SyntheticSpec, action: int, obj: int) -> np.ndarray:
    v, t = spec.channels, spec.timesteps
    n_action = (v + 1) // 2
    ts = np.arange(t)
    signal = np.zeros((v, t))
    for ch in range(n_action):
        phase = 2.0 * np.pi * ch / v
        signal[ch] = 2.0 * np.sin(2.0 * np.pi * (action + 1) * ts / t + phase)
    for j, ch in enumerate(range(n_action, v)):
        level = 0.5 * (obj + 1) * (1.0 if j % 2 == 0 else -1.0)
        signal[ch] = level
    return signal


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Deterministic synthetic dataset; identical specs give identical bits."""
    rng = np.random.default_rng(spec.seed)
    samples = []
    for class_id, ((a, o), count) in enumerate(zip(spec.class_defs, spec.samples_per_class)):
        base = _class_signal(spec, a, o)
        for _ in range(count):
            values = base.copy()
            if spec.noise_std > 0:
                values += rng.normal(0.0, spec.noise_std, size=values.shape)
            samples.append(TimeSeriesSample(values=values, class_id=class_id))
    return Dataset(samples=tuple(samples), label_names=tuple(synthetic_label_names(spec)),
                   channels=spec.channels, window=spec.timesteps)


def save_dataset_cache(dataset: Dataset, path) -> None:
    x, y = dataset.stacked()
    save_container(path, {"values": x, "class_ids": y.astype(np.float64)},
                   metadata={"kind": "dataset",
                             "label_names": list(dataset.label_names),
                             "channels": dataset.channels,
                             "window": dataset.window})


def load_dataset_cache(path) -> Dataset:
    arrays, meta = load_container(path)
    if meta.get("kind") != "dataset":
        raise FormatError(f"{path}: container does not hold a dataset")
    x = arrays["values"]
    y = arrays["class_ids"].astype(np.int64)
    samples = tuple(TimeSeriesSample(values=x[i], class_id=int(y[i]))
                    for i in range(x.shape[0]))
    return Dataset(samples=samples, label_names=tuple(meta["label_names"]),
                   channels=int(meta["channels"]), window=int(meta["window"]))
