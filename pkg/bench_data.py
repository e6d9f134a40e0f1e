"""Synthetic continual segmentation protocols.

Sessions draw grayscale images containing 1-3 shapes from the session's
class set on background class 0. A session's domain rotates the intensity
palette, changes the intensity gamma and the additive noise level. Images
and label grids are uint8 so that PNG persistence is lossless.
"""

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from PIL import Image, ImageDraw

from errors import DomainError, ProtocolValidationError
from seeding import named_stream

logger = logging.getLogger(__name__)

FORMAT_VERSION = "jascl-bench/1"
BACKGROUND = 0
SHAPES = {1: "disk", 2: "rectangle", 3: "ring", 4: "cross", 5: "stripe"}
NUM_CLASSES = len(SHAPES) + 1
MIN_IMAGE_SIDE = 16
MAX_SHAPES_PER_IMAGE = 3
SPLITS = ("labeled", "unlabeled", "test")


class CaseLabel(Enum):
    DOMAIN_SHIFT = "domain-shift"
    CLASS_EVOLUTION = "class-evolution"
    JOINT_SHIFT = "joint-shift"


@dataclass(frozen=True)
class DomainTransform:
    palette_angle: float = 0.0
    noise_sigma: float = 0.03
    gamma: float = 1.0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise DomainError(f"noise_sigma must be nonnegative, got {self.noise_sigma}")
        if not self.gamma > 0:
            raise DomainError(f"gamma must be positive, got {self.gamma}")

    def intensity(self, class_id: int) -> float:
        """Cyclic ramp: classes sit 0.8 / NUM_CLASSES apart, rotated by the palette angle."""
        phase = (class_id / NUM_CLASSES + self.palette_angle / (2.0 * math.pi)) % 1.0
        return 0.1 + 0.8 * phase

    def to_dict(self) -> Dict[str, float]:
        return {"palette_angle": self.palette_angle, "noise_sigma": self.noise_sigma, "gamma": self.gamma}


@dataclass(frozen=True)
class SessionSpec:
    index: int
    class_ids: Tuple[int, ...]
    domain: DomainTransform
    labeled_count: int
    unlabeled_count: int = 0
    shots: int = 1
    test_count: int = 20

    def __post_init__(self):
        object.__setattr__(self, "class_ids", tuple(sorted(set(self.class_ids))))
        if not self.class_ids:
            raise ProtocolValidationError(f"session {self.index} has no classes")
        unknown = [c for c in self.class_ids if c not in SHAPES]
        if unknown:
            raise ProtocolValidationError(f"session {self.index}: unknown class ids {unknown}")
        if self.labeled_count < 1 or self.shots < 1 or self.test_count < 1:
            raise ProtocolValidationError(f"session {self.index}: counts must be positive")
        if self.unlabeled_count < 0:
            raise ProtocolValidationError(f"session {self.index}: unlabeled_count must be nonnegative")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "index": self.index,
            "class_ids": list(self.class_ids),
            "domain": self.domain.to_dict(),
            "labeled_count": self.labeled_count,
            "unlabeled_count": self.unlabeled_count,
            "shots": self.shots,
            "test_count": self.test_count,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SessionSpec":
        return cls(
            index=data["index"],
            class_ids=tuple(data["class_ids"]),
            domain=DomainTransform(**data["domain"]),
            labeled_count=data["labeled_count"],
            unlabeled_count=data.get("unlabeled_count", 0),
            shots=data.get("shots", 1),
            test_count=data.get("test_count", 20),
        )


def classify_transition(previous: SessionSpec, current: SessionSpec) -> Optional[CaseLabel]:
    same_classes = previous.class_ids == current.class_ids
    same_domain = previous.domain == current.domain
    if same_classes and not same_domain:
        return CaseLabel.DOMAIN_SHIFT
    if not same_classes and same_domain:
        return CaseLabel.CLASS_EVOLUTION
    if not same_classes and not same_domain:
        return CaseLabel.JOINT_SHIFT
    return None


@dataclass
class ContinualProtocol:
    name: str
    sessions: List[SessionSpec]
    case_labels: List[CaseLabel] = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.sessions:
            raise ProtocolValidationError(f"protocol {self.name} has no sessions")
        if len(self.case_labels) != len(self.sessions) - 1:
            raise ProtocolValidationError(
                f"protocol {self.name}: {len(self.sessions) - 1} transitions but {len(self.case_labels)} case labels")

        base = self.sessions[0]
        seen_pairs = {(c, base.domain) for c in base.class_ids}
        for position, session in enumerate(self.sessions[1:], start=1):
            if session.index != position:
                raise ProtocolValidationError(f"session at position {position} has index {session.index}")
            if session.labeled_count != session.shots * len(session.class_ids):
                raise ProtocolValidationError(
                    f"session {position}: labeled_count {session.labeled_count} != "
                    f"shots {session.shots} x {len(session.class_ids)} classes")
            if base.labeled_count < 10 * session.labeled_count:
                raise ProtocolValidationError(
                    f"base session needs at least 10x the labels of session {position} "
                    f"({base.labeled_count} < {10 * session.labeled_count})")
            declared = self.case_labels[position - 1]
            actual = classify_transition(self.sessions[position - 1], session)
            if actual is not declared:
                raise ProtocolValidationError(
                    f"transition {position - 1}->{position} labeled {declared.value} but is "
                    f"{actual.value if actual else 'unchanged'}")
            for class_id in session.class_ids:
                pair = (class_id, session.domain)
                if pair in seen_pairs:
                    raise ProtocolValidationError(
                        f"session {position}: class {class_id} revisits an earlier domain")
                seen_pairs.add(pair)

    def classes_up_to(self, session_index: int) -> List[int]:
        return sorted({c for s in self.sessions[:session_index + 1] for c in s.class_ids})

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "sessions": [s.to_dict() for s in self.sessions],
            "case_labels": [c.value for c in self.case_labels],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ContinualProtocol":
        return cls(
            name=data["name"],
            sessions=[SessionSpec.from_dict(s) for s in data["sessions"]],
            case_labels=[CaseLabel(c) for c in data["case_labels"]],
        )


@dataclass(eq=False)
class Split:
    images: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return int(self.images.shape[0])


@dataclass(eq=False)
class SessionData:
    spec: SessionSpec
    labeled: Split
    unlabeled: Split
    test: Split

    def split(self, name: str) -> Split:
        return getattr(self, name)


def _draw_shape(draw: ImageDraw.ImageDraw, class_id: int, center: Tuple[float, float], radius: float, angle: float):
    cx, cy = center
    r = radius
    if class_id == 1:
        draw.ellipse([cx - r, cy - r, cx + r, cy + r], fill=class_id)
    elif class_id == 2:
        half_w, half_h = r, 0.6 * r
        if math.cos(angle) < 0:
            half_w, half_h = half_h, half_w
        draw.rectangle([cx - half_w, cy - half_h, cx + half_w, cy + half_h], fill=class_id)
    elif class_id == 3:
        draw.ellipse([cx - r, cy - r, cx + r, cy + r], outline=class_id, width=max(2, int(round(0.4 * r))))
    elif class_id == 4:
        arm = max(1.0, 0.3 * r)
        draw.rectangle([cx - r, cy - arm, cx + r, cy + arm], fill=class_id)
        draw.rectangle([cx - arm, cy - r, cx + arm, cy + r], fill=class_id)
    elif class_id == 5:
        dx, dy = math.cos(angle), math.sin(angle)
        length, half = 1.4 * r, max(1.0, 0.25 * r)
        corners = [
            (cx + sx * length * dx - sy * half * dy, cy + sx * length * dy + sy * half * dx)
            for sx, sy in ((-1, -1), (1, -1), (1, 1), (-1, 1))
        ]
        draw.polygon(corners, fill=class_id)
    else:
        raise DomainError(f"no shape registered for class {class_id}")


def render_label_grid(rng: np.random.Generator, class_ids: List[int], image_size: Tuple[int, int]) -> np.ndarray:
    """Place shapes of `class_ids` in order; later shapes occlude earlier ones."""
    height, width = image_size
    canvas = Image.new("L", (width, height), color=BACKGROUND)
    draw = ImageDraw.Draw(canvas)
    side = min(height, width)
    for class_id in class_ids:
        radius = rng.uniform(side / 8.0, side / 4.5)
        center = (rng.uniform(radius, width - radius), rng.uniform(radius, height - radius))
        _draw_shape(draw, class_id, center, radius, rng.uniform(0.0, math.pi))
    return np.asarray(canvas, dtype=np.uint8)


def render_image(rng: np.random.Generator, labels: np.ndarray, domain: DomainTransform) -> np.ndarray:
    height, width = labels.shape
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    values = np.zeros(labels.shape, dtype=np.float64)
    for class_id in np.unique(labels):
        class_id = int(class_id)
        where = labels == class_id
        # faint per-class stripe texture
        frequency = 2.0 * math.pi * (class_id + 1) / max(height, width)
        texture = 0.02 * np.sin(frequency * (xx + (class_id % 3) * yy))
        values[where] = domain.intensity(class_id) + texture[where]
    values = np.clip(values, 0.0, 1.0) ** domain.gamma
    values = values + domain.noise_sigma * rng.standard_normal(values.shape)
    return np.round(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)


def _image_classes(rng: np.random.Generator, session: SessionSpec, primary: Optional[int]) -> List[int]:
    classes = list(session.class_ids)
    count = int(rng.integers(1, min(MAX_SHAPES_PER_IMAGE, len(classes)) + 1))
    if primary is None:
        return [int(c) for c in rng.choice(classes, size=count, replace=False)]
    others = [c for c in classes if c != primary]
    extra = [int(c) for c in rng.choice(others, size=min(count - 1, len(others)), replace=False)] if others else []
    # primary drawn last so it is never fully occluded
    return extra + [primary]


def _generate_split(rng: np.random.Generator, session: SessionSpec, count: int, image_size: Tuple[int, int],
                    shots: Optional[int] = None) -> Split:
    height, width = image_size
    images = np.zeros((count, height, width), dtype=np.uint8)
    labels = np.zeros((count, height, width), dtype=np.uint8)
    for i in range(count):
        primary = session.class_ids[(i // shots) % len(session.class_ids)] if shots else None
        labels[i] = render_label_grid(rng, _image_classes(rng, session, primary), image_size)
        images[i] = render_image(rng, labels[i], session.domain)
    return Split(images=images, labels=labels)


def generate_protocol_data(protocol: ContinualProtocol, image_size: Tuple[int, int], seed: int) -> List[SessionData]:
    """Labeled, unlabeled and test splits for every session, deterministic in `seed`.

    Each split uses its own named stream so split sizes never shift other splits' draws.
    """
    height, width = image_size
    if height < MIN_IMAGE_SIDE or width < MIN_IMAGE_SIDE:
        raise DomainError(f"image side must be >= {MIN_IMAGE_SIDE}, got {image_size}")
    protocol.validate()
    datasets = []
    for session in protocol.sessions:
        prefix = f"bench/{protocol.name}/session{session.index}"
        labeled_shots = session.shots if session.index > 0 else max(1, session.labeled_count // len(session.class_ids))
        datasets.append(SessionData(
            spec=session,
            labeled=_generate_split(named_stream(seed, f"{prefix}/labeled"), session, session.labeled_count,
                                    image_size, shots=labeled_shots),
            unlabeled=_generate_split(named_stream(seed, f"{prefix}/unlabeled"), session, session.unlabeled_count,
                                      image_size),
            test=_generate_split(named_stream(seed, f"{prefix}/test"), session, session.test_count, image_size),
        ))
        logger.debug(f"generated session {session.index} of {protocol.name}: classes {session.class_ids}")
    return datasets


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def save_protocol_data(datasets: List[SessionData], directory: Path, protocol: ContinualProtocol,
                       seed: int) -> Path:
    """Write PNG rasters plus a manifest with per-file SHA-256 hashes; returns the manifest path."""
    directory = Path(directory)
    files: Dict[str, str] = {}
    for data in datasets:
        for split_name in SPLITS:
            split = data.split(split_name)
            split_dir = directory / f"session{data.spec.index}" / split_name
            split_dir.mkdir(parents=True, exist_ok=True)
            for i in range(len(split)):
                for kind, array in (("image", split.images[i]), ("label", split.labels[i])):
                    path = split_dir / f"{i:04d}_{kind}.png"
                    Image.fromarray(np.ascontiguousarray(array)).save(path, format="PNG")
                    files[path.relative_to(directory).as_posix()] = _sha256(path)
    manifest = {
        "format": FORMAT_VERSION,
        "protocol": protocol.to_dict(),
        "seed": seed,
        "image_size": list(datasets[0].test.images.shape[1:]) if datasets else [],
        "files": files,
    }
    manifest_path = directory / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    logger.info(f"saved {len(files)} rasters for protocol {protocol.name} to {directory}")
    return manifest_path


def _load_split(directory: Path, count: int, image_size: Tuple[int, int]) -> Split:
    height, width = image_size
    images = np.zeros((count, height, width), dtype=np.uint8)
    labels = np.zeros((count, height, width), dtype=np.uint8)
    for i in range(count):
        images[i] = np.asarray(Image.open(directory / f"{i:04d}_image.png"), dtype=np.uint8)
        labels[i] = np.asarray(Image.open(directory / f"{i:04d}_label.png"), dtype=np.uint8)
    return Split(images=images, labels=labels)


def load_protocol_data(directory: Path) -> Tuple[ContinualProtocol, List[SessionData], Dict[str, Any]]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("format") != FORMAT_VERSION:
        raise ProtocolValidationError(f"unsupported dataset format {manifest.get('format')!r}")
    for relative, expected in manifest["files"].items():
        if _sha256(directory / relative) != expected:
            raise ProtocolValidationError(f"hash mismatch for {relative}")
    protocol = ContinualProtocol.from_dict(manifest["protocol"])
    image_size = tuple(manifest["image_size"])
    datasets = []
    for session in protocol.sessions:
        base = directory / f"session{session.index}"
        datasets.append(SessionData(
            spec=session,
            labeled=_load_split(base / "labeled", session.labeled_count, image_size),
            unlabeled=_load_split(base / "unlabeled", session.unlabeled_count, image_size),
            test=_load_split(base / "test", session.test_count, image_size),
        ))
    return protocol, datasets, manifest
