"""Synthetic multi-task scenes and a bit-exact on-disk container.

A scene is a height field built from random Gaussian bumps.  The three
modalities are analytically correlated: surface normals are derived from the
depth gradient, the segmentation map bins depth into per-image quantile
classes, and the input image is a Lambertian shading of the normals plus
noise.  Correlation is the whole point: predicting one modality from another
is possible, which is what the distillation stage and partial-label
acquisition exploit.

Datasets persist as a ``<name>.manifest`` JSON file plus a ``<name>.blob``
of raw little-endian float64, so a save/load round trip is bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import SeededRng, assert_finite

FORMAT_VERSION = 1
LIGHT_DIRECTION = np.array([1.0, 1.0, 2.0]) / np.sqrt(6.0)

CATEGORICAL = "categorical"
CONTINUOUS = "continuous"

METRIC_MIOU = "miou"
METRIC_RMSE = "rmse"
METRIC_MEAN_ANGLE_ERROR = "mean_angle_error"


class DatasetError(ValueError):
    """Base class for dataset file problems."""


class DatasetVersionError(DatasetError):
    """Manifest written by an incompatible format version."""


class DatasetTruncatedError(DatasetError):
    """Blob shorter (or longer) than the manifest promises."""


class DatasetInvariantError(DatasetError):
    """Loaded values violate a dataset invariant."""


@dataclass(frozen=True)
class ModalitySpec:
    """One output target of the multi-task model."""

    name: str
    kind: str  # CATEGORICAL or CONTINUOUS
    loss_weight: float
    metric: str
    higher_is_better: bool
    num_classes: int | None = None
    dim: int | None = None

    def __post_init__(self):
        if self.kind not in (CATEGORICAL, CONTINUOUS):
            raise ValueError(f"unknown modality kind {self.kind!r}")
        if self.loss_weight <= 0:
            raise ValueError("loss_weight must be positive")
        if self.kind == CATEGORICAL:
            if self.num_classes is None or self.num_classes < 2:
                raise ValueError("categorical modality needs num_classes >= 2")
            if self.metric != METRIC_MIOU:
                raise ValueError("categorical modalities use the miou metric")
        else:
            if self.dim is None or self.dim < 1:
                raise ValueError("continuous modality needs dim >= 1")
            if self.metric == METRIC_MIOU:
                raise ValueError("miou is only valid for categorical modalities")
            if self.metric == METRIC_MEAN_ANGLE_ERROR and self.dim != 3:
                raise ValueError("mean_angle_error needs dim=3 unit vectors")

    @property
    def channels(self) -> int:
        """Per-pixel output channels the model must produce."""
        return self.num_classes if self.kind == CATEGORICAL else self.dim

    @property
    def target_channels(self) -> int:
        """Per-pixel channels of the stored ground truth (class map is 1)."""
        return 1 if self.kind == CATEGORICAL else self.dim

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "loss_weight": self.loss_weight,
            "metric": self.metric,
            "higher_is_better": self.higher_is_better,
            "num_classes": self.num_classes,
            "dim": self.dim,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ModalitySpec":
        return cls(**d)


@dataclass
class SampleRecord:
    """Input image plus the full ground truth for every modality."""

    sample_id: int
    input: np.ndarray  # [C_in, H, W] float64
    targets: dict[str, np.ndarray]  # categorical: [H, W] int64; continuous: [dim, H, W]


@dataclass
class DatasetBundle:
    """Train and test splits sharing geometry and modality specs."""

    H: int
    W: int
    C_in: int
    modalities: list[ModalitySpec]
    train: list[SampleRecord]
    test: list[SampleRecord]
    generator_seed: int

    @property
    def num_modalities(self) -> int:
        return len(self.modalities)

    def modality_index(self, name: str) -> int:
        for i, m in enumerate(self.modalities):
            if m.name == name:
                return i
        raise KeyError(f"unknown modality {name!r}")


@dataclass(frozen=True)
class GeneratorConfig:
    H: int = 16
    W: int = 16
    num_bumps: int = 3
    noise_std: float = 0.05
    num_classes: int = 4
    n_train: int = 600
    n_test: int = 200

    def validate(self) -> None:
        if self.H < 4 or self.W < 4:
            raise ValueError("H and W must be at least 4")
        if self.num_bumps < 1:
            raise ValueError("num_bumps must be at least 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if self.n_train < 1 or self.n_test < 1:
            raise ValueError("n_train and n_test must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")


def default_modalities(num_classes: int = 4) -> list[ModalitySpec]:
    """Depth, normals, segmentation with the usual loss weights (1, 10, 1)."""
    return [
        ModalitySpec("depth", CONTINUOUS, 1.0, METRIC_RMSE, False, dim=1),
        ModalitySpec("normals", CONTINUOUS, 10.0, METRIC_MEAN_ANGLE_ERROR, False, dim=3),
        ModalitySpec("segmentation", CATEGORICAL, 1.0, METRIC_MIOU, True, num_classes=num_classes),
    ]


def normals_from_depth(depth: np.ndarray, spacing: float = 1.0) -> np.ndarray:
    """Unit surface normals of a height field, shape [3, H, W].

    Gradients use central differences in the interior and one-sided
    differences at the borders; the normal is normalize((-dz/dx, -dz/dy, 1)),
    which is always finite because the z component never vanishes.
    """
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2 or depth.shape[0] < 2 or depth.shape[1] < 2:
        raise ValueError("depth must be at least 2x2")
    dz_dy, dz_dx = np.gradient(depth, spacing)
    n = np.stack([-dz_dx, -dz_dy, np.ones_like(depth)])
    return n / np.linalg.norm(n, axis=0, keepdims=True)


def quantile_classes(depth: np.ndarray, num_classes: int) -> np.ndarray:
    """Per-image equal-mass depth bins: class = floor(rank * C / P).

    Rank-based binning keeps classes balanced to within ties and makes the
    class boundaries coincide with depth quantile level sets.
    """
    flat = depth.reshape(-1)
    order = np.argsort(flat, kind="stable")
    ranks = np.empty_like(order)
    ranks[order] = np.arange(flat.size)
    classes = (ranks * num_classes) // flat.size
    return classes.reshape(depth.shape).astype(np.int64)


def _generate_scene(cfg: GeneratorConfig, rng: SeededRng) -> tuple[np.ndarray, ...]:
    gen = rng.generator()
    ys, xs = np.meshgrid(np.arange(cfg.H, dtype=np.float64),
                         np.arange(cfg.W, dtype=np.float64), indexing="ij")
    depth = np.zeros((cfg.H, cfg.W))
    min_side = min(cfg.H, cfg.W)
    for _ in range(cfg.num_bumps):
        cy = gen.uniform(0, cfg.H)
        cx = gen.uniform(0, cfg.W)
        amp = gen.uniform(0.5, 2.0)
        width = gen.uniform(0.15, 0.4) * min_side
        depth += amp * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * width**2))
    normals = normals_from_depth(depth)
    seg = quantile_classes(depth, cfg.num_classes)
    shading = np.maximum(0.0, np.einsum("c,chw->hw", LIGHT_DIRECTION, normals))
    image = shading + cfg.noise_std * gen.standard_normal((cfg.H, cfg.W))
    return image[None, :, :], depth[None, :, :], normals, seg


def generate_dataset(cfg: GeneratorConfig, seed: int) -> DatasetBundle:
    """Generate train and test splits from a single seed.

    Every scene draws from its own split RNG stream, so the records are
    independent of generation order.
    """
    cfg.validate()
    root = SeededRng(seed)
    modalities = default_modalities(cfg.num_classes)

    def make(split_tag: int, count: int, id_base: int) -> list[SampleRecord]:
        records = []
        for i in range(count):
            image, depth, normals, seg = _generate_scene(cfg, root.split(split_tag, i))
            records.append(SampleRecord(
                sample_id=id_base + i,
                input=image,
                targets={"depth": depth, "normals": normals, "segmentation": seg},
            ))
        return records

    train = make(0, cfg.n_train, 0)
    test = make(1, cfg.n_test, cfg.n_train)
    return DatasetBundle(cfg.H, cfg.W, 1, modalities, train, test, seed)


def _record_arrays(record: SampleRecord, modalities: list[ModalitySpec]) -> list[np.ndarray]:
    arrays = [record.input]
    for spec in modalities:
        t = record.targets[spec.name]
        arrays.append(t[None, :, :] if t.ndim == 2 else t)
    return arrays


def _record_float_count(bundle: DatasetBundle) -> int:
    per_pixel = bundle.C_in + sum(m.target_channels for m in bundle.modalities)
    return per_pixel * bundle.H * bundle.W


def save_dataset(bundle: DatasetBundle, path_prefix: str | Path) -> tuple[Path, Path]:
    """Write ``<prefix>.manifest`` and ``<prefix>.blob``; returns both paths."""
    prefix = Path(path_prefix)
    manifest_path = prefix.with_suffix(".manifest")
    blob_path = prefix.with_suffix(".blob")

    offsets = []
    offset = 0
    chunks = []
    for record in bundle.train + bundle.test:
        offsets.append(offset)
        for arr in _record_arrays(record, bundle.modalities):
            raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            chunks.append(raw)
            offset += len(raw)

    manifest = {
        "version": FORMAT_VERSION,
        "H": bundle.H,
        "W": bundle.W,
        "C_in": bundle.C_in,
        "generator_seed": bundle.generator_seed,
        "num_train": len(bundle.train),
        "num_test": len(bundle.test),
        "modalities": [m.to_json() for m in bundle.modalities],
        "blob_offsets": offsets,
    }
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    blob_path.write_bytes(b"".join(chunks))
    return manifest_path, blob_path


def load_dataset(path_prefix: str | Path) -> DatasetBundle:
    """Load a dataset pair, validating every invariant the format promises."""
    prefix = Path(path_prefix)
    manifest_path = prefix.with_suffix(".manifest")
    blob_path = prefix.with_suffix(".blob")
    manifest = json.loads(manifest_path.read_text())

    version = manifest.get("version")
    if version != FORMAT_VERSION:
        raise DatasetVersionError(f"manifest version {version}, expected {FORMAT_VERSION}")

    modalities = [ModalitySpec.from_json(d) for d in manifest["modalities"]]
    H, W, C_in = manifest["H"], manifest["W"], manifest["C_in"]
    bundle = DatasetBundle(H, W, C_in, modalities, [], [], manifest["generator_seed"])

    offsets = manifest["blob_offsets"]
    n_total = manifest["num_train"] + manifest["num_test"]
    if len(offsets) != n_total:
        raise DatasetInvariantError("offset count does not match record count")
    if any(b <= a for a, b in zip(offsets, offsets[1:])):
        raise DatasetInvariantError("blob offsets are not strictly increasing")

    record_bytes = _record_float_count(bundle) * 8
    blob = blob_path.read_bytes()
    if len(blob) != record_bytes * n_total:
        raise DatasetTruncatedError(
            f"blob is {len(blob)} bytes, expected {record_bytes * n_total}")

    records = []
    for i, offset in enumerate(offsets):
        if offset != i * record_bytes:
            raise DatasetInvariantError(f"offset of record {i} inconsistent with shapes")
        pos = offset
        def take(channels: int) -> np.ndarray:
            nonlocal pos
            count = channels * H * W
            arr = np.frombuffer(blob, dtype="<f8", count=count, offset=pos)
            pos += count * 8
            return arr.reshape(channels, H, W).astype(np.float64)

        image = take(C_in)
        targets = {}
        for spec in modalities:
            raw = take(spec.target_channels)
            if spec.kind == CATEGORICAL:
                flat = raw[0]
                if not np.all(flat == np.round(flat)):
                    raise DatasetInvariantError(
                        f"categorical {spec.name} holds non-integral values")
                classes = flat.astype(np.int64)
                if classes.min() < 0 or classes.max() >= spec.num_classes:
                    raise DatasetInvariantError(
                        f"categorical {spec.name} outside [0, {spec.num_classes})")
                targets[spec.name] = classes
            else:
                assert_finite(raw, f"continuous target {spec.name}")
                if spec.metric == METRIC_MEAN_ANGLE_ERROR:
                    norms = np.linalg.norm(raw, axis=0)
                    if np.max(np.abs(norms - 1.0)) > 1e-6:
                        raise DatasetInvariantError(
                            f"{spec.name} vectors are not unit length")
                targets[spec.name] = raw
        records.append(SampleRecord(sample_id=i, input=image, targets=targets))

    bundle.train = records[: manifest["num_train"]]
    bundle.test = records[manifest["num_train"]:]
    return bundle
