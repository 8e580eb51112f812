"""Distances between model weight snapshots.

A :class:`WeightSnapshot` is the ordered list of a model's flattened
trainable tensors at one training step.  The distance between two
snapshots of the same model can be measured per tensor with one of three
metrics and averaged over either every tensor or only the final one:

* ``symmetric-kl`` — each tensor is softmax-normalized into a probability
  distribution and the bidirectional KL divergence is summed; the snapshot
  value is the tensor sum divided by ``2 * n_tensors``.
* ``l2`` — mean euclidean distance per tensor.
* ``inverse-cosine`` — mean of ``1 - cosine_similarity`` per tensor.

All computation is float64 internally; inputs may be float32 or float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, InvalidInputError

METRIC_KINDS = ("symmetric-kl", "l2", "inverse-cosine")
METRIC_SCOPES = ("all-layers", "last-layer")


@dataclass(frozen=True)
class WeightSnapshot:
    """Ordered, named, flattened copies of a model's trainable tensors."""

    layers: tuple[tuple[str, np.ndarray], ...]
    step: int

    def __post_init__(self):
        if not self.layers:
            raise InvalidInputError("snapshot must contain at least one layer")
        if self.step < 0:
            raise InvalidInputError("snapshot step must be non-negative")
        for name, values in self.layers:
            if values.ndim != 1 or values.size == 0:
                raise InvalidInputError(f"layer {name!r} must be a non-empty vector")
            if not np.all(np.isfinite(values)):
                raise InvalidInputError(f"layer {name!r} contains non-finite values")

    @classmethod
    def from_arrays(cls, named_arrays, step: int) -> "WeightSnapshot":
        """Build a snapshot from ``(name, array)`` pairs, flattening and
        copying each array so later in-place updates cannot mutate it."""
        layers = tuple(
            (name, np.asarray(a, dtype=np.float64).reshape(-1).copy())
            for name, a in named_arrays
        )
        return cls(layers=layers, step=step)

    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.layers)


@dataclass(frozen=True)
class MetricKind:
    """A metric selection: which distance, over which tensors."""

    kind: str = "symmetric-kl"
    scope: str = "all-layers"

    def __post_init__(self):
        if self.kind not in METRIC_KINDS:
            raise InvalidInputError(f"unknown metric kind {self.kind!r}")
        if self.scope not in METRIC_SCOPES:
            raise InvalidInputError(f"unknown metric scope {self.scope!r}")


def softmax_normalize(v) -> np.ndarray:
    """Softmax a real vector into a probability vector.

    Uses max-subtraction so large entries cannot overflow ``exp``.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise InvalidInputError("softmax_normalize expects a non-empty vector")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("softmax_normalize input must be finite")
    z = v - v.max()
    e = np.exp(z)
    return e / e.sum()


def _log_softmax(v: np.ndarray) -> np.ndarray:
    z = v - v.max()
    return z - np.log(np.exp(z).sum())


def symmetric_kl(a, b) -> float:
    """Bidirectional KL divergence between softmax(a) and softmax(b).

    Returns ``KL(P||Q) + KL(Q||P)`` with ``P = softmax(a)``,
    ``Q = softmax(b)``.  Both distributions are handled in log space, so
    the result stays finite even when entries differ by hundreds: a
    probability that underflows to exact zero contributes zero (its
    log stays finite and ``0 * finite == 0``).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(
            f"symmetric_kl length mismatch: {a.shape} vs {b.shape}"
        )
    if a.ndim != 1 or a.size == 0:
        raise InvalidInputError("symmetric_kl expects non-empty vectors")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InvalidInputError("symmetric_kl inputs must be finite")
    log_p = _log_softmax(a)
    log_q = _log_softmax(b)
    diff = log_p - log_q
    # KL(P||Q) + KL(Q||P) = sum((P - Q) * (logP - logQ))
    total = float(np.sum((np.exp(log_p) - np.exp(log_q)) * diff))
    return max(total, 0.0)


def _l2(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(b - a))


def _inverse_cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("inverse-cosine is undefined for a zero vector")
    if np.array_equal(a, b):
        return 0.0
    # rounding can push the cosine past 1; the metric stays non-negative
    return max(1.0 - float(np.dot(a, b)) / (na * nb), 0.0)


def weight_variation(prev: WeightSnapshot, curr: WeightSnapshot, metric: MetricKind) -> float:
    """Average distance between two snapshots of the same model.

    For ``symmetric-kl`` the in-scope bidirectional KL values are summed
    and divided by ``2 * n_tensors``; ``l2`` and ``inverse-cosine`` are
    plain per-tensor means.
    """
    if prev.names() != curr.names():
        raise InvalidInputError("snapshots have different layer names or order")
    for (name, va), (_, vb) in zip(prev.layers, curr.layers):
        if va.shape != vb.shape:
            raise InvalidInputError(f"layer {name!r} changed size between snapshots")

    if metric.scope == "last-layer":
        pairs = [(prev.layers[-1][1], curr.layers[-1][1])]
    else:
        pairs = [(va, vb) for (_, va), (_, vb) in zip(prev.layers, curr.layers)]

    n = len(pairs)
    if metric.kind == "symmetric-kl":
        return sum(symmetric_kl(va, vb) for va, vb in pairs) / (2.0 * n)
    if metric.kind == "l2":
        return sum(_l2(va, vb) for va, vb in pairs) / n
    return sum(_inverse_cosine(va, vb) for va, vb in pairs) / n


def rolling_average(series, window: int) -> list[float]:
    """Trailing mean: element ``j`` averages the last ``min(j+1, window)``
    entries ending at ``j``.  Output length equals input length."""
    if window < 1:
        raise InvalidInputError("rolling window must be >= 1")
    values = np.asarray(list(series), dtype=np.float64)
    if values.size == 0:
        return []
    csum = np.cumsum(values)
    out = np.empty_like(values)
    n = values.size
    for j in range(n):
        lo = max(0, j + 1 - window)
        total = csum[j] - (csum[lo - 1] if lo > 0 else 0.0)
        out[j] = total / (j + 1 - lo)
    return out.tolist()
