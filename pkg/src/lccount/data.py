"""Dataset plumbing: manifests, image I/O, synthetic data, overlays.

Manifest format (UTF-8, one record per line, ``#`` comments allowed)::

    classes=background,dot
    image=images/train_0000.png; split=train; points=12,40,1;50,22,1
    image=images/val_0000.png; split=val; boxes=10,10,20,20,1

* the optional ``classes=`` header names the class table (index 0 is
  background);
* fields are separated by "; "; ``points`` holds ``row,col,class``
  triples joined by ";", ``boxes`` holds ``r0,c0,r1,c1,class`` corner
  boxes that are converted to their center points on load;
* image paths are relative to the manifest's directory; every image
  must exist and decode, and every point must be in bounds — violations
  are reported with their line number.

The synthetic generator draws bright anti-aliased dots on textured noise
with a controllable probability that a new dot is placed touching an
existing one, which is what exercises the blob-splitting losses.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .blobs import BlobLabeling
from .grid import PointAnnotations

SPLITS = ("train", "val", "test")


class ManifestError(ValueError):
    """Malformed or inconsistent dataset manifest."""


def worker_count(num_items: int) -> int:
    """Bounded pool size for per-image work; LCCOUNT_THREADS caps it."""
    env = os.environ.get("LCCOUNT_THREADS", "").strip()
    if env:
        try:
            limit = int(env)
        except ValueError:
            raise ValueError(
                f"LCCOUNT_THREADS must be an integer, got {env!r}") from None
        if limit < 1:
            raise ValueError("LCCOUNT_THREADS must be >= 1")
    else:
        limit = min(4, os.cpu_count() or 1)
    return max(1, min(limit, num_items))


def map_across_images(fn, items) -> list:
    """Ordered map over per-image work with a bounded thread pool."""
    items = list(items)
    workers = worker_count(len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class ManifestEntry:
    image: str  # path relative to the manifest directory
    split: str
    annotations: PointAnnotations


@dataclass(frozen=True)
class DatasetManifest:
    root: str
    entries: tuple
    class_names: tuple | None = None

    @property
    def num_classes(self) -> int:
        if self.class_names is not None:
            return len(self.class_names)
        top = 1
        for e in self.entries:
            if len(e.annotations):
                top = max(top, int(e.annotations.classes.max()))
        return top + 1

    def for_split(self, split: str) -> tuple:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}, expected one of {SPLITS}")
        return tuple(e for e in self.entries if e.split == split)

    def load_samples(self, split: str) -> list:
        """(image, annotations) pairs for one split, in manifest order."""
        root = Path(self.root)
        return map_across_images(
            lambda e: (load_image(root / e.image), e.annotations),
            self.for_split(split))


# ---------------------------------------------------------------------------
# image I/O
# ---------------------------------------------------------------------------


def load_image(path) -> np.ndarray:
    """8-bit raster -> float64 (H, W) grayscale in [0, 1]."""
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError) as exc:
        raise ManifestError(f"cannot decode image {path}: {exc}") from exc


def save_grayscale(image, path) -> None:
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8), mode="L").save(path)


def save_rgb(image, path) -> None:
    arr = np.asarray(image, dtype=np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


# ---------------------------------------------------------------------------
# manifest parsing
# ---------------------------------------------------------------------------


def _parse_points(text: str, height: int, width: int, lineno: int) -> PointAnnotations:
    triples = []
    if text:
        for chunk in text.split(";"):
            parts = chunk.split(",")
            if len(parts) != 3:
                raise ManifestError(
                    f"line {lineno}: point {chunk!r} is not row,col,class")
            try:
                triples.append(tuple(int(p) for p in parts))
            except ValueError:
                raise ManifestError(
                    f"line {lineno}: point {chunk!r} has non-integer fields") from None
    try:
        return PointAnnotations.from_list(triples, height, width)
    except ValueError as exc:
        raise ManifestError(f"line {lineno}: {exc}") from exc


def _parse_boxes(text: str, height: int, width: int, lineno: int) -> PointAnnotations:
    triples = []
    if text:
        for chunk in text.split(";"):
            parts = chunk.split(",")
            if len(parts) != 5:
                raise ManifestError(
                    f"line {lineno}: box {chunk!r} is not r0,c0,r1,c1,class")
            try:
                r0, c0, r1, c1, cls = (int(p) for p in parts)
            except ValueError:
                raise ManifestError(
                    f"line {lineno}: box {chunk!r} has non-integer fields") from None
            if not (0 <= r0 <= r1 < height and 0 <= c0 <= c1 < width):
                raise ManifestError(f"line {lineno}: box {chunk!r} out of bounds")
            triples.append(((r0 + r1) // 2, (c0 + c1) // 2, cls))
    try:
        return PointAnnotations.from_list(triples, height, width)
    except ValueError as exc:
        raise ManifestError(f"line {lineno}: {exc}") from exc


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    root = path.parent
    class_names = None
    entries = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("classes="):
            if entries or class_names is not None:
                raise ManifestError(
                    f"line {lineno}: classes= must appear once, before any record")
            class_names = tuple(n.strip() for n in line[len("classes="):].split(","))
            if len(class_names) < 2 or any(not n for n in class_names):
                raise ManifestError(
                    f"line {lineno}: class table needs >= 2 non-empty names")
            continue
        fields = {}
        for token in line.split("; "):
            key, eq, value = token.partition("=")
            if not eq:
                raise ManifestError(f"line {lineno}: field {token!r} is not key=value")
            if key in fields:
                raise ManifestError(f"line {lineno}: duplicate field {key!r}")
            fields[key] = value
        unknown = set(fields) - {"image", "split", "points", "boxes"}
        if unknown:
            raise ManifestError(f"line {lineno}: unknown fields {sorted(unknown)}")
        if "image" not in fields or "split" not in fields:
            raise ManifestError(f"line {lineno}: record needs image= and split=")
        if ("points" in fields) == ("boxes" in fields):
            raise ManifestError(
                f"line {lineno}: record needs exactly one of points= or boxes=")
        split = fields["split"]
        if split not in SPLITS:
            raise ManifestError(
                f"line {lineno}: split {split!r} not one of {SPLITS}")
        rel = fields["image"]
        img_path = root / rel
        if not img_path.is_file():
            raise ManifestError(f"line {lineno}: image not found: {rel}")
        try:
            with Image.open(img_path) as im:
                width, height = im.size
                im.verify()
        except (UnidentifiedImageError, OSError, SyntaxError) as exc:
            raise ManifestError(
                f"line {lineno}: image {rel} does not decode: {exc}") from exc
        if "points" in fields:
            ann = _parse_points(fields["points"], height, width, lineno)
        else:
            ann = _parse_boxes(fields["boxes"], height, width, lineno)
        entries.append(ManifestEntry(rel, split, ann))
    manifest = DatasetManifest(str(root), tuple(entries), class_names)
    if class_names is not None:
        for e in entries:
            if len(e.annotations) and int(e.annotations.classes.max()) >= len(class_names):
                raise ManifestError(
                    f"{e.image}: point class exceeds the declared class table")
    return manifest


def save_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    lines = []
    if manifest.class_names is not None:
        lines.append("classes=" + ",".join(manifest.class_names))
    for e in manifest.entries:
        pts = ";".join(f"{r},{c},{k}" for r, c, k in e.annotations.points)
        lines.append(f"image={e.image}; split={e.split}; points={pts}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# horizontal flip
# ---------------------------------------------------------------------------


def flip_horizontal(image, annotations: PointAnnotations):
    """Mirror an image and its annotations left-right."""
    arr = np.asarray(image)
    if arr.ndim not in (2, 3):
        raise ValueError(f"image must be 2-d or 3-d, got shape {arr.shape}")
    if arr.shape[1] != annotations.width or arr.shape[0] != annotations.height:
        raise ValueError("image and annotation dimensions disagree")
    flipped = np.ascontiguousarray(np.flip(arr, axis=1))
    pts = annotations.points.copy()
    if len(pts):
        pts[:, 1] = annotations.width - 1 - pts[:, 1]
    return flipped, PointAnnotations(pts, annotations.height, annotations.width)


# ---------------------------------------------------------------------------
# synthetic dot-scatter dataset
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    size: int = 64
    count_range: tuple = (1, 8)
    radius_range: tuple = (2.0, 4.0)
    noise_level: float = 0.5
    overlap_fraction: float = 0.5
    seed: int = 0
    num_object_classes: int = 1

    def __post_init__(self):
        object.__setattr__(self, "count_range", tuple(int(v) for v in self.count_range))
        object.__setattr__(self, "radius_range", tuple(float(v) for v in self.radius_range))
        if self.size < 8:
            raise ValueError("size must be >= 8")
        lo, hi = self.count_range
        if not 0 <= lo <= hi:
            raise ValueError("count_range must satisfy 0 <= lo <= hi")
        rlo, rhi = self.radius_range
        if not 1.0 <= rlo <= rhi:
            raise ValueError("radius_range must satisfy 1 <= lo <= hi")
        if not 0.0 <= self.overlap_fraction <= 1.0:
            raise ValueError("overlap_fraction must lie in [0, 1]")
        if self.noise_level < 0.0:
            raise ValueError("noise_level must be >= 0")
        if self.num_object_classes < 1:
            raise ValueError("num_object_classes must be >= 1")


def _box_blur(arr: np.ndarray, radius: int) -> np.ndarray:
    for axis in (0, 1):
        pad = [(0, 0), (0, 0)]
        pad[axis] = (radius, radius)
        padded = np.pad(arr, pad, mode="edge")
        csum = np.cumsum(padded, axis=axis)
        lead = np.take(csum, range(2 * radius, padded.shape[axis]), axis=axis)
        lag = np.take(csum, range(0, padded.shape[axis] - 2 * radius), axis=axis)
        arr = (lead - lag) / (2 * radius)
    return arr


def _render_image(spec: SyntheticSpec, rng: np.random.Generator):
    """One synthetic sample: (image, points, any_touching_pair)."""
    s = spec.size
    smooth = _box_blur(rng.standard_normal((s, s)), 3)
    grain = rng.standard_normal((s, s))
    img = 0.12 + spec.noise_level * (0.10 * smooth + 0.03 * grain)
    img = np.clip(img, 0.0, 0.45)

    lo, hi = spec.count_range
    n = int(rng.integers(lo, hi + 1))
    rlo, rhi = spec.radius_range
    margin = int(math.ceil(rhi)) + 1
    centers: list = []
    radii: list = []
    classes: list = []

    def far_enough(cy, cx):
        return all((cy - y) ** 2 + (cx - x) ** 2 >= 4.0 for y, x in centers)

    for _ in range(n):
        radius = float(rng.uniform(rlo, rhi))
        cls = 1 + int(rng.integers(0, spec.num_object_classes))
        placed = None
        if centers and rng.random() < spec.overlap_fraction:
            for _attempt in range(60):
                j = int(rng.integers(0, len(centers)))
                ang = rng.uniform(0.0, 2.0 * math.pi)
                dist = (radii[j] + radius) * rng.uniform(0.7, 1.05)
                cy = int(round(centers[j][0] + dist * math.sin(ang)))
                cx = int(round(centers[j][1] + dist * math.cos(ang)))
                if margin <= cy < s - margin and margin <= cx < s - margin \
                        and far_enough(cy, cx):
                    placed = (cy, cx)
                    break
        if placed is None:
            for _attempt in range(200):
                cy = int(rng.integers(margin, s - margin))
                cx = int(rng.integers(margin, s - margin))
                if far_enough(cy, cx):
                    placed = (cy, cx)
                    break
        if placed is None:
            continue  # canvas too crowded; ground truth stays consistent
        centers.append(placed)
        radii.append(radius)
        classes.append(cls)

    yy, xx = np.mgrid[0:s, 0:s]
    touching = False
    for (cy, cx), radius, cls in zip(centers, radii, classes):
        dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        base = 0.60 + 0.35 * cls / spec.num_object_classes
        img = np.maximum(img, base * np.clip(radius + 0.5 - dist, 0.0, 1.0))
    for i in range(len(centers)):
        for j in range(i + 1, len(centers)):
            d = math.dist(centers[i], centers[j])
            if d < radii[i] + radii[j]:
                touching = True
    points = [(cy, cx, cls) for (cy, cx), cls in zip(centers, classes)]
    return img, PointAnnotations.from_list(points, s, s), touching


def generate_synthetic(spec: SyntheticSpec, out_dir, *, train: int, val: int,
                       test: int):
    """Write a synthetic dataset tree and return (manifest, stats).

    Layout: ``<out_dir>/images/<split>_<idx>.png`` plus
    ``<out_dir>/manifest.txt``.  Deterministic per spec.seed (same seed,
    same bytes).  Stats report the touching-pair audit used to verify
    the overlap control.
    """
    if min(train, val, test) < 0:
        raise ValueError("split sizes must be >= 0")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    jobs = [(split, idx)
            for split, count in (("train", train), ("val", val), ("test", test))
            for idx in range(count)]
    # One spawned seed per image keeps rendering order-independent, so the
    # parallel map below still yields byte-identical trees per spec.seed.
    children = np.random.SeedSequence(spec.seed).spawn(len(jobs))
    rendered = map_across_images(
        lambda i: _render_image(spec, np.random.default_rng(children[i])),
        range(len(jobs)))
    entries = []
    multi = 0
    multi_touching = 0
    for (split, idx), (img, ann, touching) in zip(jobs, rendered):
        rel = f"images/{split}_{idx:04d}.png"
        save_grayscale(img, out / rel)
        entries.append(ManifestEntry(rel, split, ann))
        if len(ann) >= 2:
            multi += 1
            multi_touching += int(touching)
    names = ("background",) + tuple(
        f"dot{k}" for k in range(1, spec.num_object_classes + 1))
    manifest = DatasetManifest(str(out), tuple(entries), names)
    save_manifest(manifest, out / "manifest.txt")
    stats = {
        "images": len(entries),
        "multi_dot_images": multi,
        "touching_multi_fraction": (multi_touching / multi) if multi else 0.0,
    }
    return manifest, stats


# ---------------------------------------------------------------------------
# overlay rendering
# ---------------------------------------------------------------------------

_TALLY_COLORS = {
    "matched": np.array([0.1, 0.85, 0.1]),
    "multi": np.array([0.95, 0.85, 0.05]),
    "unmatched": np.array([0.9, 0.1, 0.1]),
}
_ID_PALETTE = np.array([
    [0.90, 0.10, 0.10], [0.10, 0.75, 0.10], [0.15, 0.35, 0.95],
    [0.90, 0.75, 0.10], [0.80, 0.10, 0.80], [0.10, 0.80, 0.80],
    [0.95, 0.55, 0.10], [0.55, 0.25, 0.90], [0.60, 0.80, 0.20],
    [0.90, 0.40, 0.60], [0.30, 0.60, 0.45], [0.70, 0.50, 0.30],
])


def render_overlay(image, labeling: BlobLabeling, annotations=None,
                   boundary=None) -> np.ndarray:
    """Color-coded (H, W, 3) uint8 overlay.

    With assigned points: green = one-point blob, yellow = multi-point
    blob, red = pointless blob.  Without: each blob id cycles a fixed
    palette.  Split-boundary pixels draw as solid yellow lines and
    annotation points as small blue squares.
    """
    base = np.asarray(image, dtype=np.float64)
    if base.ndim == 3:
        base = base.mean(axis=2)
    if base.max() > 1.0:
        base = base / 255.0
    h, w = base.shape
    if (labeling.height, labeling.width) != (h, w):
        raise ValueError("labeling does not match the image")
    rgb = np.repeat(base[:, :, None], 3, axis=2)
    for b in range(1, labeling.num_blobs + 1):
        mask = labeling.labels == b
        if labeling.tallies is not None:
            tally = labeling.tallies[b - 1]
            key = "unmatched" if tally == 0 else ("matched" if tally == 1 else "multi")
            color = _TALLY_COLORS[key]
        else:
            color = _ID_PALETTE[(b - 1) % len(_ID_PALETTE)]
        rgb[mask] = 0.45 * rgb[mask] + 0.55 * color
    if boundary is not None and len(boundary):
        rgb[boundary.pixels[:, 0], boundary.pixels[:, 1]] = (1.0, 1.0, 0.0)
    if annotations is not None and len(annotations):
        for r, c, _ in annotations.points:
            r0, r1 = max(0, r - 1), min(h, r + 2)
            c0, c1 = max(0, c - 1), min(w, c + 2)
            rgb[r0:r1, c0:c1] = (0.15, 0.3, 1.0)
    return (np.clip(rgb, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
