"""Independent brute-force reference implementations used by the tests.

Everything here is written with explicit Python loops over float64 numpy
scalars, deliberately avoiding the vectorized code paths under test.
"""

from __future__ import annotations

import math

import numpy as np


def linear_ref(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None) -> np.ndarray:
    """y = W x + b with explicit loops; weight is (out, in)."""
    out_dim, in_dim = weight.shape
    y = np.zeros(out_dim)
    for o in range(out_dim):
        acc = 0.0
        for i in range(in_dim):
            acc += weight[o, i] * x[i]
        y[o] = acc + (bias[o] if bias is not None else 0.0)
    return y


def softmax_ref(scores: list[float]) -> list[float]:
    m = max(scores)
    exps = [math.exp(s - m) for s in scores]
    total = sum(exps)
    return [e / total for e in exps]


def mlp_extract_ref(H, mask, layer_weights, layer_biases, proj_w=None, proj_b=None):
    """Per-token MLP (ReLU between layers), masked mean, optional projection."""
    L, _ = H.shape
    transformed = []
    for i in range(L):
        h = H[i].copy()
        for li, (w, b) in enumerate(zip(layer_weights, layer_biases)):
            h = linear_ref(h, w, b)
            if li < len(layer_weights) - 1:
                h = np.maximum(h, 0.0)
        transformed.append(h)
    total = np.zeros(transformed[0].shape[0])
    count = 0.0
    for i in range(L):
        if mask[i]:
            total += transformed[i]
            count += 1.0
    pooled = total / count
    if proj_w is not None:
        pooled = linear_ref(pooled, proj_w, proj_b)
    return pooled


def poly_extract_ref(H, mask, codes, proj_w=None, proj_b=None):
    """Per-code softmax over valid tokens, aggregate, average, project."""
    L, d = H.shape
    K = codes.shape[0]
    aggregated = np.zeros((K, d))
    for k in range(K):
        scores = []
        valid_idx = []
        for i in range(L):
            if mask[i]:
                dot = 0.0
                for j in range(d):
                    dot += H[i, j] * codes[k, j]
                scores.append(dot / math.sqrt(d))
                valid_idx.append(i)
        weights = softmax_ref(scores)
        for w, i in zip(weights, valid_idx):
            aggregated[k] += w * H[i]
    pooled = aggregated.mean(axis=0)
    if proj_w is not None:
        pooled = linear_ref(pooled, proj_w, proj_b)
    return pooled


def gat_extract_ref(H, mask, weight, attn, slope, proj_w=None, proj_b=None):
    """One graph-attention layer over valid tokens with self-loops, then mean."""
    L, _ = H.shape
    h_out = weight.shape[0]
    valid = [i for i in range(L) if mask[i]]
    projected = {i: linear_ref(H[i], weight, None) for i in valid}
    a_src, a_dst = attn[:h_out], attn[h_out:]
    node_out = {}
    for i in valid:
        scores = []
        for j in valid:
            raw = float(a_src @ projected[i] + a_dst @ projected[j])
            scores.append(raw if raw > 0 else slope * raw)
        weights = softmax_ref(scores)
        acc = np.zeros(h_out)
        for w, j in zip(weights, valid):
            acc += w * projected[j]
        node_out[i] = acc
    pooled = np.zeros(h_out)
    for i in valid:
        pooled += node_out[i]
    pooled /= len(valid)
    if proj_w is not None:
        pooled = linear_ref(pooled, proj_w, proj_b)
    return pooled


def cross_entropy_ref(logits: np.ndarray, labels: list[int]) -> float:
    """Mean -log softmax[label], computed row by row."""
    total = 0.0
    for row, label in zip(logits, labels):
        probs = softmax_ref(list(row))
        total += -math.log(probs[label])
    return total / len(labels)


def mse_sum_ref(a: np.ndarray, b: np.ndarray) -> float:
    """Per-row sum of squared differences, averaged over rows."""
    total = 0.0
    for ra, rb in zip(a, b):
        row = 0.0
        for x, y in zip(ra, rb):
            row += (x - y) ** 2
        total += row
    return total / len(a)


def confusion_metrics_ref(preds, labels, num_classes):
    """Accuracy and macro-F1 from an explicit confusion matrix."""
    cm = np.zeros((num_classes, num_classes), dtype=int)
    for p, y in zip(preds, labels):
        cm[y, p] += 1
    f1s = []
    for c in range(num_classes):
        tp = cm[c, c]
        fp = cm[:, c].sum() - tp
        fn = cm[c, :].sum() - tp
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * precision * recall / (precision + recall) if precision + recall else 0.0)
    accuracy = np.trace(cm) / cm.sum() if cm.sum() else 0.0
    return float(accuracy), float(np.mean(f1s))


def finite_difference_grads(loss_fn, params, eps_scale: float = 1e-5):
    """Central finite differences of a scalar loss for a list of torch tensors.

    Returns one numpy array of the same shape per parameter. ``loss_fn`` must
    re-evaluate the loss from the (mutated) parameters each call.
    """
    import torch

    grads = []
    for param in params:
        grad = np.zeros(param.shape)
        flat = param.data.view(-1)
        for idx in range(flat.numel()):
            original = flat[idx].item()
            eps = eps_scale * max(1.0, abs(original))
            flat[idx] = original + eps
            with torch.no_grad():
                up = float(loss_fn())
            flat[idx] = original - eps
            with torch.no_grad():
                down = float(loss_fn())
            flat[idx] = original
            grad.reshape(-1)[idx] = (up - down) / (2 * eps)
        grads.append(grad)
    return grads


def max_relative_error(analytic, numeric, floor: float = 1e-3) -> float:
    """Worst |a - n| / max(|a|, |n|, floor) over matched parameter tables."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a = np.asarray(a, dtype=np.float64)
        n = np.asarray(n, dtype=np.float64)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst
