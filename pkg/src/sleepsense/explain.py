"""SmoothGrad saliency, penultimate features and a t-SNE embedding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .checkpoint import Checkpoint
from .numcore.tensor import Tensor, no_grad
from .sleepnet import SleepNet
from .synthgen import derive_seed

SMOOTHGRAD_SAMPLES = 50
SMOOTHGRAD_SIGMA = 0.15
ENTROPY_TOL = 1e-5


def _model(m: SleepNet | Checkpoint) -> SleepNet:
    if isinstance(m, Checkpoint):
        return m.build()
    m.eval()
    return m


@dataclass
class SaliencyTrace:
    values: np.ndarray  # (L,) non-negative
    target_class: int
    n_samples: int
    sigma: float


def input_gradient(model: SleepNet | Checkpoint, inputs: np.ndarray, target_class: int) -> np.ndarray:
    """|d logit_target / d input| for each row of a (B, L) batch, in eval mode."""
    model = _model(model)
    x = Tensor(np.atleast_2d(np.asarray(inputs, dtype=model.head.weight.dtype)), requires_grad=True)
    logits = model(x)
    logits[:, target_class].sum().backward()
    return np.abs(x.grad)


def smoothgrad(
    model: SleepNet | Checkpoint,
    x: np.ndarray,
    target_class: int,
    n: int = SMOOTHGRAD_SAMPLES,
    sigma: float = SMOOTHGRAD_SIGMA,
    seed: int = 0,
    batch_size: int = 25,
) -> SaliencyTrace:
    """Mean absolute input gradient over ``n`` noisy copies of ``x``.

    The noise standard deviation is ``sigma * (max(x) - min(x))``. With
    ``sigma == 0`` every copy is the same, so the plain gradient is returned
    whatever ``n`` is.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    model = _model(model)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if sigma == 0:
        values = input_gradient(model, x[None, :], target_class)[0].astype(np.float64)
        return SaliencyTrace(values, int(target_class), n, 0.0)
    rng = np.random.default_rng(derive_seed(seed, 21))
    scale = sigma * (x.max() - x.min())
    total = np.zeros_like(x)
    done = 0
    while done < n:
        b = min(batch_size, n - done)
        noisy = x[None, :] + scale * rng.standard_normal((b, x.size))
        total += input_gradient(model, noisy, target_class).astype(np.float64).sum(axis=0)
        done += b
    return SaliencyTrace(total / n, int(target_class), n, float(sigma))


def extract_features(model: SleepNet | Checkpoint, inputs: np.ndarray, batch_size: int = 128) -> np.ndarray:
    """Pooled ResNet output, (N, final channel count), float64."""
    model = _model(model)
    inputs = np.atleast_2d(np.asarray(inputs))
    out = []
    with no_grad():
        for i in range(0, len(inputs), batch_size):
            out.append(model.features(inputs[i : i + batch_size]).data.astype(np.float64))
    return np.concatenate(out) if out else np.zeros((0, model.config.feature_dim))


# -- t-SNE --------------------------------------------------------------------------------

@dataclass
class Embedding2D:
    points: np.ndarray  # (N, 2)
    source: str  # "raw" or "features"
    kl_divergence: float = float("nan")


def squared_distances(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    sq = np.sum(x * x, axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * x @ x.T
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def _row_entropy(d: np.ndarray, beta: float) -> tuple[float, np.ndarray]:
    # shifting by the minimum distance keeps exp() in range; p is unchanged
    e = np.exp(-(d - d.min()) * beta)
    s = e.sum()
    p = e / s
    h = float(beta * np.dot(d - d.min(), p) + np.log(s))
    return h, p


def conditional_affinities(x: np.ndarray, perplexity: float = 30.0, tol: float = ENTROPY_TOL,
                           max_iter: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """Rows p_{j|i} with per-point precision found by bisection on the entropy.

    Returns ``(P_conditional, beta)``; each row's Shannon entropy (nats)
    equals ``ln(perplexity)`` within ``tol``.
    """
    d = squared_distances(x)
    n = len(d)
    target = np.log(perplexity)
    P = np.zeros((n, n))
    betas = np.ones(n)
    for i in range(n):
        di = np.delete(d[i], i)
        lo, hi, beta = 0.0, np.inf, 1.0
        h, p = _row_entropy(di, beta)
        for _ in range(max_iter):
            if abs(h - target) < tol:
                break
            if h > target:
                lo = beta
                beta = beta * 2 if hi == np.inf else (beta + hi) / 2
            else:
                hi = beta
                beta = beta / 2 if lo == 0.0 else (beta + lo) / 2
            h, p = _row_entropy(di, beta)
        else:
            raise RuntimeError(f"perplexity bisection did not converge for point {i}")
        P[i, np.arange(n) != i] = p
        betas[i] = beta
    return P, betas


def joint_affinities(x: np.ndarray, perplexity: float = 30.0) -> np.ndarray:
    P, _ = conditional_affinities(x, perplexity)
    return (P + P.T) / (2.0 * len(P))


def tsne(
    points: np.ndarray,
    perplexity: float = 30.0,
    iterations: int = 1000,
    seed: int = 0,
    learning_rate: float = 200.0,
    exaggeration: float = 12.0,
    exaggeration_iters: int = 250,
    source: str = "features",
) -> Embedding2D:
    """Exact t-SNE with momentum 0.5 then 0.8, gains, and early exaggeration."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if n <= 3 * perplexity:
        raise ValueError(f"t-SNE needs more than 3 * perplexity = {3 * perplexity:g} points, got {n}")
    P = joint_affinities(points, perplexity)
    rng = np.random.default_rng(derive_seed(seed, 22))
    Y = 1e-4 * rng.standard_normal((n, 2))
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    for it in range(iterations):
        early = it < exaggeration_iters
        Pe = P * exaggeration if early else P
        num = 1.0 / (1.0 + squared_distances(Y))
        np.fill_diagonal(num, 0.0)
        Q = np.maximum(num / num.sum(), 1e-12)
        W = (Pe - Q) * num
        grad = 4.0 * (np.diag(W.sum(axis=1)) - W) @ Y
        momentum = 0.5 if early else 0.8
        same = np.sign(grad) == np.sign(update)
        gains = np.where(same, gains * 0.8, gains + 0.2).clip(0.01)
        update = momentum * update - learning_rate * gains * grad
        Y = Y + update
        Y -= Y.mean(axis=0)
    num = 1.0 / (1.0 + squared_distances(Y))
    np.fill_diagonal(num, 0.0)
    Q = np.maximum(num / num.sum(), 1e-12)
    mask = P > 0
    kl = float(np.sum(P[mask] * np.log(P[mask] / Q[mask])))
    if not np.all(np.isfinite(Y)):
        raise FloatingPointError("t-SNE produced non-finite coordinates")
    return Embedding2D(Y, source, kl)


def separability(embedding: Embedding2D | np.ndarray, labels) -> float:
    """Mean Euclidean silhouette of the labelled points."""
    from sklearn.metrics import silhouette_score

    pts = embedding.points if isinstance(embedding, Embedding2D) else np.asarray(embedding, dtype=np.float64)
    labels = np.asarray(labels)
    k = len(np.unique(labels))
    if k < 2:
        raise ValueError("separability needs at least two distinct labels")
    if k >= len(labels):
        raise ValueError(f"separability needs more points than labels, got {len(labels)} points and {k} labels")
    return float(silhouette_score(pts, labels, metric="euclidean"))


def saliency_window_contrast(values: np.ndarray, window: tuple[int, int]) -> tuple[float, float]:
    """Mean saliency inside and outside a [start, stop) window."""
    values = np.asarray(values, dtype=np.float64)
    inside = np.zeros(len(values), dtype=bool)
    inside[window[0] : window[1]] = True
    return float(values[inside].mean()), float(values[~inside].mean())
