"""Traversal loading from image folders and a seeded synthetic dataset generator."""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import FormatError, InvalidInputError
from .evaluation import GroundTruth

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}

# frame tolerances of the public benchmark protocols
BENCHMARK_TOLERANCES = {
    "nordland": 1,
    "gardens_point": 2,
    "st_lucia": 2,
    "berlin": 1,
    "corvin": 20,
}


@dataclass
class Traversal:
    images: list[np.ndarray]
    names: list[str]

    def __len__(self) -> int:
        return len(self.images)


@dataclass(frozen=True)
class DatasetSpec:
    reference_dir: Path
    query_dir: Path
    tolerance: int = 0
    gt_file: Optional[Path] = None

    def __post_init__(self):
        if self.tolerance < 0:
            raise InvalidInputError(f"tolerance must be >= 0, got {self.tolerance}")


@dataclass(frozen=True)
class Perturbation:
    brightness_delta: float = 0.0
    shift: int = 0
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.brightness_delta < 0 or self.shift < 0 or self.noise_sigma < 0:
            raise InvalidInputError("perturbation magnitudes must be >= 0")


@dataclass(frozen=True)
class SynthSpec:
    n_places: int = 100
    width: int = 128
    height: int = 64
    seed: int = 0
    perturbation: Perturbation = field(default_factory=Perturbation)

    def __post_init__(self):
        if self.n_places < 2:
            raise InvalidInputError(f"n_places must be >= 2, got {self.n_places}")
        if self.width < 4 or self.height < 4:
            raise InvalidInputError(f"synthetic frames must be at least 4x4, got {self.width}x{self.height}")


def _frame_number(path: Path) -> int:
    digits = re.findall(r"\d+", path.stem)
    if not digits:
        raise InvalidInputError(f"{path.name}: no frame number in filename")
    return int(digits[-1])


def _decode(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            im = im.convert("L" if im.mode in ("1", "L", "LA") else "RGB")
            return np.asarray(im, dtype=np.uint8).copy()
    except (UnidentifiedImageError, OSError) as exc:
        raise FormatError(f"{path}: cannot decode image ({exc})") from exc


def load_traversal(directory: str | Path) -> Traversal:
    """Decode every PNG/JPEG in a folder, ordered by the frame number in the filename."""
    directory = Path(directory)
    if not directory.is_dir():
        raise InvalidInputError(f"{directory}: not a directory")
    files = [p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file()]
    if not files:
        raise InvalidInputError(f"{directory}: no PNG or JPEG frames found")
    files.sort(key=lambda p: (_frame_number(p), p.name))
    return Traversal([_decode(p) for p in files], [p.name for p in files])


def load_ground_truth(spec: DatasetSpec, n_query: int, n_ref: int) -> GroundTruth:
    """Identity mapping by default; otherwise "query_idx,ref_idx" rows (a header row is allowed)."""
    if spec.gt_file is None:
        if n_query > n_ref:
            raise InvalidInputError(f"{n_query} queries but only {n_ref} references and no ground-truth file")
        return GroundTruth.identity(n_query, spec.tolerance)
    mapping = {}
    with open(spec.gt_file, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip():
                continue
            try:
                q, r = (int(v) for v in row)
            except ValueError:
                if lineno == 1:
                    continue
                raise FormatError(f"{spec.gt_file}:{lineno}: expected 'query_idx,ref_idx', got {row!r}") from None
            if not 0 <= q < n_query or not 0 <= r < n_ref:
                raise InvalidInputError(f"{spec.gt_file}:{lineno}: index out of range ({q}, {r})")
            mapping[q] = r
    missing = [q for q in range(n_query) if q not in mapping]
    if missing:
        raise InvalidInputError(f"{spec.gt_file}: no ground truth for queries {missing[:5]}")
    return GroundTruth(mapping, spec.tolerance)


def _scene(rng: np.random.Generator, width: int, height: int) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    angle = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(angle) * xx / width + np.sin(angle) * yy / height
    img = rng.uniform(60, 180) + rng.uniform(-40, 40) * ramp
    for _ in range(rng.integers(8, 16)):
        w = rng.integers(max(2, width // 16), max(3, width // 3))
        h = rng.integers(max(2, height // 16), max(3, height // 2))
        x0 = rng.integers(0, width - w + 1)
        y0 = rng.integers(0, height - h + 1)
        img[y0:y0 + h, x0:x0 + w] = rng.uniform(20, 220)
    for _ in range(rng.integers(2, 5)):
        cx, cy = rng.uniform(0, width), rng.uniform(0, height)
        rx, ry = rng.uniform(2, width / 6), rng.uniform(2, height / 4)
        inside = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
        img[inside] = rng.uniform(20, 220)
    for _ in range(rng.integers(1, 4)):
        w = rng.integers(max(2, width // 10), max(3, width // 4))
        h = rng.integers(max(2, height // 10), max(3, height // 3))
        x0 = rng.integers(0, width - w + 1)
        y0 = rng.integers(0, height - h + 1)
        stripes = rng.uniform(2, 8)
        phase = rng.uniform(0, 2 * np.pi)
        patch = 120 + 80 * np.sign(np.sin(2 * np.pi * xx[y0:y0 + h, x0:x0 + w] / stripes + phase))
        img[y0:y0 + h, x0:x0 + w] = patch + rng.normal(0, 10, (h, w))
    return np.clip(np.floor(img + 0.5), 20, 220)


def _perturb(ref: np.ndarray, noise: np.ndarray, pert: Perturbation) -> np.ndarray:
    out = ref
    if pert.shift:
        s = min(pert.shift, ref.shape[1] - 1)
        out = np.concatenate([np.repeat(ref[:, :1], s, axis=1), ref[:, :-s]], axis=1)
    out = out + pert.brightness_delta + pert.noise_sigma * noise
    return np.clip(np.floor(out + 0.5), 0, 255)


def generate_synthetic(spec: SynthSpec) -> tuple[Traversal, Traversal, GroundTruth]:
    """Procedural reference scenes and perturbed queries (lateral shift, brightness, noise).

    Each place draws from its own child stream of ``spec.seed``, so a place's
    images do not depend on how many places are generated. The noise field is
    drawn independently of its amplitude, so raising ``noise_sigma`` only
    scales it.
    """
    refs, queries, names = [], [], []
    root = np.random.SeedSequence(spec.seed)
    for n, child in enumerate(root.spawn(spec.n_places)):
        scene_rng, noise_rng = (np.random.default_rng(s) for s in child.spawn(2))
        ref = _scene(scene_rng, spec.width, spec.height)
        noise = noise_rng.standard_normal(ref.shape)
        refs.append(ref.astype(np.uint8))
        queries.append(_perturb(ref, noise, spec.perturbation).astype(np.uint8))
        names.append(f"{n:05d}.png")
    return (Traversal(refs, list(names)), Traversal(queries, list(names)),
            GroundTruth.identity(spec.n_places, 0))


def write_dataset(reference: Traversal, query: Traversal, gt: GroundTruth, out_dir: str | Path) -> None:
    """Write reference/ and query/ PNG folders plus gt.csv."""
    out_dir = Path(out_dir)
    for sub, trav in (("reference", reference), ("query", query)):
        folder = out_dir / sub
        folder.mkdir(parents=True, exist_ok=True)
        for img, name in zip(trav.images, trav.names):
            Image.fromarray(img).save(folder / name)
    with open(out_dir / "gt.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["query_idx", "ref_idx"])
        for q in sorted(gt.mapping):
            w.writerow([q, gt.mapping[q]])
