import numpy as np


def softmax(logits: np.ndarray, axis: int = 0) -> np.ndarray:
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=axis, keepdims=True)


def log_softmax(logits: np.ndarray, axis: int = 0) -> np.ndarray:
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def softmax_backward(probs: np.ndarray, grad_probs: np.ndarray, axis: int = 0) -> np.ndarray:
    """Vector-Jacobian product of softmax: dL/dz from dL/dp."""
    inner = np.sum(probs * grad_probs, axis=axis, keepdims=True)
    return probs * (grad_probs - inner)


def cosine_similarity(vectors: np.ndarray, reference: np.ndarray, axis: int = -1) -> np.ndarray:
    """Cosine between each vector along `axis` and `reference`; NaN where a norm is zero."""
    dots = np.sum(vectors * reference, axis=axis)
    norms = np.linalg.norm(vectors, axis=axis) * np.linalg.norm(reference, axis=axis)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(norms > 0, dots / np.where(norms > 0, norms, 1.0), np.nan)
