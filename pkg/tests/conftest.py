"""Shared test helpers: independent oracles and small synthetic setups."""

import numpy as np

from harseq.data import SyntheticSpec, generate_synthetic
from harseq.experiment import TrainConfig
from harseq.labelspace import END_ID, START_ID
from harseq.numkernel import log_softmax


def per_class_oracle_scores(model, space, x):
    """Independent decode scorer: teacher-force each class alone, no trie sharing."""
    z = model.encoder.forward(x, "eval", cache=False)
    h0 = model.init_h.forward(z, "eval", cache=False)
    c0 = model.init_c.forward(z, "eval", cache=False)
    batch = x.shape[0]
    scores = np.zeros((batch, space.num_classes))
    for seq in space.sequences:
        h, c = h0, c0
        total = np.zeros(batch)
        inputs = (START_ID,) + seq.tokens
        targets = seq.tokens + (END_ID,)
        for tok_in, tok_tgt in zip(inputs, targets):
            logits, h, c = model.decode_step(np.full(batch, tok_in, dtype=np.int64), h, c)
            total += log_softmax(logits)[:, tok_tgt]
        scores[:, seq.class_id] = total
    return scores


def naive_metrics(y_true, y_pred, num_classes):
    """O(N*C) reference implementation, independent of the vectorized one.

    Returns (accuracy, precision list, recall list, f1 list, macro_f1,
    confusion list-of-lists). Summation orders match the contract: per-class
    loops in class-id order, sequential sums.
    """
    n = len(y_true)
    confusion = [[0 for _ in range(num_classes)] for _ in range(num_classes)]
    for t, p in zip(y_true, y_pred):
        confusion[t][p] += 1
    correct = 0
    for t, p in zip(y_true, y_pred):
        if t == p:
            correct += 1
    accuracy = correct / n
    precision, recall, f1 = [], [], []
    for c in range(num_classes):
        tp = fp = fn = 0
        for t, p in zip(y_true, y_pred):
            if p == c and t == c:
                tp += 1
            elif p == c and t != c:
                fp += 1
            elif p != c and t == c:
                fn += 1
        prec = tp / (tp + fp) if (tp + fp) > 0 else 0.0
        rec = tp / (tp + fn) if (tp + fn) > 0 else 0.0
        precision.append(prec)
        recall.append(rec)
        f1.append(2.0 * prec * rec / (prec + rec) if (prec + rec) > 0 else 0.0)
    total = 0.0
    for v in f1:
        total += v
    return accuracy, precision, recall, f1, total / num_classes, confusion


def small_synthetic(noise=0.0, per_class=40, timesteps=32, channels=4,
                    class_defs=((0, 0), (0, 1), (1, 2), (1, 3)), seed=0):
    counts = per_class if isinstance(per_class, tuple) else (per_class,) * len(class_defs)
    spec = SyntheticSpec(class_defs=class_defs, samples_per_class=counts,
                         noise_std=noise, timesteps=timesteps, channels=channels, seed=seed)
    return generate_synthetic(spec)


def small_config(**overrides):
    base = dict(epochs=5, batch_size=16, learning_rate=3e-3, p_aug=0.5,
                val_fraction=0.2, seed=0, conv_channels=(8, 12),
                hidden_dim=12, embed_dim=6)
    base.update(overrides)
    return TrainConfig(**base)
