"""Datasets, evaluation, sweeps, and deterministic CSV reporting.

Success-rate semantics: an attack on an image counts only if the model
classified the clean image correctly in the first place. The success rate
is n_success / n_eligible over that clean-correct subset; a run with no
eligible images reports 0.0 and carries a warning instead of dividing by
zero.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .attacks import AttackConfig, attack_batch
from .frequency import DctMode
from .model import Classifier, LabeledImage

__all__ = [
    "IDX_IMAGE_MAGIC",
    "IDX_LABEL_MAGIC",
    "IdxFormatError",
    "Dataset",
    "EvalReport",
    "CSV_COLUMNS",
    "load_idx",
    "save_idx_images",
    "save_idx_labels",
    "evaluate",
    "sweep",
    "compare_fsa",
    "write_csv",
    "reports_to_csv",
    "comparison_markdown",
    "save_png",
]

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Raised for malformed or mutually inconsistent IDX files."""


@dataclass
class Dataset:
    """A stack of grayscale images in [0, 1] with integer labels."""

    name: str
    pixels: np.ndarray  # [N, C, H, W] float64
    labels: np.ndarray  # [N] int64
    class_count: int = 10

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.pixels.ndim != 4:
            raise ValueError(f"pixels must be [N, C, H, W], got shape {self.pixels.shape}")
        if self.labels.shape != (self.pixels.shape[0],):
            raise IdxFormatError(
                f"dataset {self.name!r}: {self.pixels.shape[0]} images but {self.labels.shape[0]} labels"
            )
        if self.pixels.size and (self.pixels.min() < 0.0 or self.pixels.max() > 1.0):
            raise ValueError("pixel values must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError(f"labels must lie in [0, {self.class_count})")

    def __len__(self) -> int:
        return self.pixels.shape[0]

    def __getitem__(self, i: int) -> LabeledImage:
        return LabeledImage(self.pixels[i], int(self.labels[i]))

    @property
    def images(self) -> list:
        return [self[i] for i in range(len(self))]

    def subset(self, count: int) -> "Dataset":
        """The first `count` images, keeping original image indexing from 0."""
        if not 0 < count <= len(self):
            raise ValueError(f"subset size {count} out of range for {len(self)} images")
        return Dataset(f"{self.name}[:{count}]", self.pixels[:count], self.labels[:count], self.class_count)


def _read_idx(path, expected_magic: int, what: str) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4:
        raise IdxFormatError(f"{what} file {path}: too short for a magic number")
    (magic,) = struct.unpack(">i", blob[:4])
    if magic != expected_magic:
        raise IdxFormatError(f"{what} file {path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(blob) < header:
        raise IdxFormatError(f"{what} file {path}: truncated dimension header")
    dims = struct.unpack(f">{ndim}i", blob[4:header])
    expected = int(np.prod(dims))
    data = np.frombuffer(blob, dtype=np.uint8, offset=header)
    if data.size != expected:
        raise IdxFormatError(f"{what} file {path}: expected {expected} data bytes, found {data.size}")
    return data.reshape(dims)


def load_idx(images_path, labels_path, name: str | None = None, class_count: int = 10) -> Dataset:
    """Load an IDX image/label file pair into a Dataset.

    Pixels are stored as bytes and divided by 255 on load, so 0 maps to 0.0
    and 255 maps to 1.0 exactly. Images become single-channel [N, 1, H, W].
    """
    raw = _read_idx(images_path, IDX_IMAGE_MAGIC, "image")
    labels = _read_idx(labels_path, IDX_LABEL_MAGIC, "label").astype(np.int64)
    if raw.shape[0] != labels.shape[0]:
        raise IdxFormatError(f"{raw.shape[0]} images in {images_path} but {labels.shape[0]} labels in {labels_path}")
    pixels = raw.astype(np.float64)[:, None, :, :] / 255.0
    return Dataset(name or str(images_path), pixels, labels, class_count)


def save_idx_images(path, images: np.ndarray) -> None:
    """Write uint8 images [N, H, W] in IDX format."""
    images = np.asarray(images)
    if images.ndim != 3 or images.dtype != np.uint8:
        raise ValueError(f"expected uint8 images [N, H, W], got {images.dtype} {images.shape}")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">iiii", IDX_IMAGE_MAGIC, *images.shape))
        fh.write(images.tobytes())


def save_idx_labels(path, labels: np.ndarray) -> None:
    """Write integer labels [N] in IDX format."""
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.min() < 0 or labels.max() > 255:
        raise ValueError("labels must be a 1-D array of bytes")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">ii", IDX_LABEL_MAGIC, labels.shape[0]))
        fh.write(labels.astype(np.uint8).tobytes())


CSV_COLUMNS = (
    "model_id",
    "method",
    "fsa",
    "eps",
    "steps",
    "n_total",
    "n_eligible",
    "n_success",
    "success_rate",
    "mean_mask_ones_fraction",
    "wall_time_s",
)


@dataclass
class EvalReport:
    """Aggregate outcome of one (model, dataset, attack config) evaluation."""

    model_id: str
    method: str
    fsa: bool
    eps: float
    steps: int
    n_total: int
    n_eligible: int
    n_success: int
    success_rate: float
    mean_mask_ones_fraction: float
    wall_time_s: float
    warning: str = ""
    per_image_success: np.ndarray | None = field(default=None, repr=False)
    adversarial: np.ndarray | None = field(default=None, repr=False)

    def csv_row(self, timing: bool = False) -> str:
        """One deterministic CSV line; wall time is zeroed unless timing=True."""
        values = [
            self.model_id,
            self.method,
            "true" if self.fsa else "false",
            repr(float(self.eps)),
            str(self.steps),
            str(self.n_total),
            str(self.n_eligible),
            str(self.n_success),
            repr(float(self.success_rate)),
            repr(float(self.mean_mask_ones_fraction)),
            repr(float(self.wall_time_s)) if timing else "0.0",
        ]
        return ",".join(values)


def evaluate(
    model: Classifier,
    data: Dataset,
    cfg: AttackConfig,
    *,
    model_id: str = "model",
    chunk_size: int = 500,
    keep_adversarial: bool = False,
) -> EvalReport:
    """Attack every image in the dataset and aggregate success statistics.

    Images are processed in fixed-size chunks purely for memory; chunking
    does not affect which RNG streams an image sees (streams are keyed by
    the image's dataset index).
    """
    if chunk_size < 1:
        raise ValueError(f"chunk_size must be >= 1, got {chunk_size}")
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    t0 = time.perf_counter()
    n = len(data)
    eligible = np.zeros(n, dtype=bool)
    success = np.zeros(n, dtype=bool)
    masks = []
    adv_chunks = [] if keep_adversarial else None
    for start in range(0, n, chunk_size):
        stop = min(start + chunk_size, n)
        out = attack_batch(
            model,
            data.pixels[start:stop],
            data.labels[start:stop],
            cfg,
            image_indices=np.arange(start, stop),
        )
        eligible[start:stop] = out.clean_pred == data.labels[start:stop]
        success[start:stop] = out.success
        if out.mask_fractions is not None:
            masks.append(out.mask_fractions)
        if keep_adversarial:
            adv_chunks.append(out.adversarial)
    n_eligible = int(eligible.sum())
    n_success = int(np.count_nonzero(success & eligible))
    warning = ""
    if n_eligible == 0:
        success_rate = 0.0
        warning = "no clean-correct images; success rate reported as 0.0"
    else:
        success_rate = n_success / n_eligible
    mean_mask = float(np.concatenate(masks, axis=1).mean()) if masks else 0.0
    return EvalReport(
        model_id=model_id,
        method=cfg.method,
        fsa=cfg.fsa,
        eps=cfg.eps,
        steps=cfg.steps,
        n_total=n,
        n_eligible=n_eligible,
        n_success=n_success,
        success_rate=success_rate,
        mean_mask_ones_fraction=mean_mask,
        wall_time_s=time.perf_counter() - t0,
        warning=warning,
        per_image_success=success & eligible,
        adversarial=np.concatenate(adv_chunks) if keep_adversarial and adv_chunks else None,
    )


def sweep(
    model: Classifier,
    data: Dataset,
    methods,
    eps_values,
    steps_values,
    *,
    dct_mode: DctMode = DctMode.SCALED,
    seed: int = 0,
    model_id: str = "model",
    chunk_size: int = 500,
) -> list[EvalReport]:
    """Full factorial grid over (method, fsa in {false, true}, eps, steps).

    Row order is deterministic: methods outermost, then fsa, eps, steps.
    """
    methods = list(methods)
    eps_values = list(eps_values)
    steps_values = list(steps_values)
    if not methods or not eps_values or not steps_values:
        raise ValueError("sweep requires at least one method, one eps, and one steps value")
    reports = []
    for method in methods:
        for fsa in (False, True):
            for eps in eps_values:
                for steps in steps_values:
                    cfg = AttackConfig(
                        method=method, eps=eps, steps=steps, fsa=fsa, dct_mode=dct_mode, seed=seed
                    )
                    reports.append(evaluate(model, data, cfg, model_id=model_id, chunk_size=chunk_size))
    return reports


def compare_fsa(model: Classifier, data: Dataset, base_cfgs, *, model_id: str = "model", chunk_size: int = 500):
    """Paired (base, wrapped) evaluations and their success-rate deltas.

    Returns a list of dicts with keys method, eps, steps, base_rate,
    fsa_rate, delta, one per supplied base configuration (fsa flags on the
    inputs are ignored; each config is run both ways).
    """
    rows = []
    for cfg in base_cfgs:
        base = evaluate(model, data, replace(cfg, fsa=False), model_id=model_id, chunk_size=chunk_size)
        wrapped = evaluate(model, data, replace(cfg, fsa=True), model_id=model_id, chunk_size=chunk_size)
        rows.append(
            {
                "method": cfg.method,
                "eps": cfg.eps,
                "steps": cfg.steps,
                "base_rate": base.success_rate,
                "fsa_rate": wrapped.success_rate,
                "delta": wrapped.success_rate - base.success_rate,
            }
        )
    return rows


def comparison_markdown(rows) -> str:
    """Render compare_fsa output as a small markdown table."""
    lines = [
        "| method | eps | steps | base | +consistency | delta |",
        "| --- | --- | --- | --- | --- | --- |",
    ]
    for r in rows:
        lines.append(
            f"| {r['method']} | {r['eps']:.6g} | {r['steps']} "
            f"| {100 * r['base_rate']:.2f}% | {100 * r['fsa_rate']:.2f}% | {100 * r['delta']:+.2f} |"
        )
    return "\n".join(lines)


def reports_to_csv(reports, timing: bool = False) -> str:
    """Serialize reports with the frozen column schema; byte-deterministic."""
    lines = [",".join(CSV_COLUMNS)]
    lines.extend(report.csv_row(timing=timing) for report in reports)
    return "\n".join(lines) + "\n"


def write_csv(reports, path, timing: bool = False) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(reports_to_csv(reports, timing=timing))


def save_png(pixels: np.ndarray, path) -> None:
    """Quantize one [C, H, W] image in [0, 1] to 8-bit grayscale/RGB PNG."""
    from PIL import Image

    arr = np.round(np.asarray(pixels, dtype=np.float64) * 255.0).astype(np.uint8)
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise ValueError(f"expected [1|3, H, W] pixels, got shape {arr.shape}")
    if arr.shape[0] == 1:
        Image.fromarray(arr[0], mode="L").save(path)
    else:
        Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path)
