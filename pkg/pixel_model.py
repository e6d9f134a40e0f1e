"""Per-pixel segmentation model: a frozen random featurizer and a linear classifier."""

import copy
import hashlib
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
from scipy import ndimage

from errors import ShapeError
from pas import FeatureMap, PrototypeBank
from seeding import named_stream

logger = logging.getLogger(__name__)

DEFAULT_FILTERS = 28
# raw intensity, 3x3 mean, 3x3 variance, 7x7 mean
FIXED_CHANNELS = 4
# Gaussian bumps over the 3x3 mean intensity
BIN_CENTERS = np.linspace(0.05, 0.95, 10)
BIN_WIDTH = 0.06


class RandomFilterFeaturizer:
    """Fixed bank of seeded 3x3 filters with bias and ReLU, plus local statistics and intensity bands."""

    def __init__(self, seed: int, num_filters: int = DEFAULT_FILTERS):
        rng = named_stream(seed, "model/featurizer")
        filters = rng.standard_normal((num_filters, 3, 3))
        filters /= np.linalg.norm(filters.reshape(num_filters, -1), axis=1)[:, None, None]
        self.filters = filters
        self.biases = rng.uniform(-0.3, 0.3, size=num_filters)
        self.filters.setflags(write=False)
        self.biases.setflags(write=False)

    @property
    def dimension(self) -> int:
        return FIXED_CHANNELS + len(BIN_CENTERS) + self.filters.shape[0]

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(self.filters.tobytes())
        digest.update(self.biases.tobytes())
        return digest.hexdigest()

    def __call__(self, image: np.ndarray) -> np.ndarray:
        """D x H x W features for one uint8 or [0, 1] float image."""
        image = np.asarray(image)
        if image.ndim != 2:
            raise ShapeError(f"featurizer expects a single-channel H x W image, got {image.shape}")
        x = image.astype(np.float64) / 255.0 if image.dtype == np.uint8 else image.astype(np.float64)
        mean3 = ndimage.uniform_filter(x, size=3, mode="reflect")
        var3 = np.maximum(ndimage.uniform_filter(x * x, size=3, mode="reflect") - mean3 ** 2, 0.0)
        mean7 = ndimage.uniform_filter(x, size=7, mode="reflect")
        channels = [x, mean3, 4.0 * np.sqrt(var3), mean7]
        channels.extend(np.exp(-0.5 * ((mean3 - center) / BIN_WIDTH) ** 2) for center in BIN_CENTERS)
        for kernel, bias in zip(self.filters, self.biases):
            channels.append(np.maximum(ndimage.correlate(x, kernel, mode="reflect") + bias, 0.0))
        return np.stack(channels)

    def feature_map(self, image: np.ndarray) -> FeatureMap:
        return FeatureMap(self(image))

    def batch(self, images: np.ndarray) -> np.ndarray:
        """N x D x H x W."""
        return np.stack([self(image) for image in images]) if len(images) else np.zeros(
            (0, self.dimension) + tuple(images.shape[1:]))


@dataclass(eq=False)
class PixelClassifierModel:
    featurizer: RandomFilterFeaturizer
    weights: np.ndarray
    bias: np.ndarray
    prototype_bank: PrototypeBank = field(default_factory=PrototypeBank)
    frozen: Dict[str, bool] = field(default_factory=lambda: {"featurizer": True, "classifier": False})

    @classmethod
    def initialize(cls, seed: int, num_classes: int, num_filters: int = DEFAULT_FILTERS,
                   init_scale: float = 0.01) -> "PixelClassifierModel":
        featurizer = RandomFilterFeaturizer(seed, num_filters)
        rng = named_stream(seed, "model/classifier")
        weights = init_scale * rng.standard_normal((num_classes, featurizer.dimension))
        return cls(featurizer=featurizer, weights=weights, bias=np.zeros(num_classes))

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "PixelClassifierModel":
        return PixelClassifierModel(
            featurizer=self.featurizer,
            weights=self.weights.copy(),
            bias=self.bias.copy(),
            prototype_bank=copy.deepcopy(self.prototype_bank),
            frozen=dict(self.frozen),
        )

    def logits(self, features: np.ndarray, weights: Optional[np.ndarray] = None) -> np.ndarray:
        """C x ... logits for D x ... features, optionally with substitute classifier weights."""
        w = self.weights if weights is None else weights
        if features.shape[0] != w.shape[1]:
            raise ShapeError(f"feature dimension {features.shape[0]} does not match classifier {w.shape}")
        flat = features.reshape(features.shape[0], -1)
        out = w @ flat + self.bias[:, None]
        return out.reshape((w.shape[0],) + features.shape[1:])

    def predict(self, images: np.ndarray) -> np.ndarray:
        """N x H x W class grids from the unperturbed classifier."""
        return np.stack([np.argmax(self.logits(self.featurizer(image)), axis=0) for image in images]).astype(np.uint8)
