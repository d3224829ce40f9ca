"""COCO ingest, cropping, stratified split, balancing, and augmentation.

Crops are materialized as binary PPM (P6) files in per-class directories;
PNG input is supported behind the same decode interface when Pillow is
available. The manifest is a line-oriented TSV, one sample per line.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError
from .models import CLASS_NAMES

_CLASS_BY_LOWER = {name.lower(): name for name in CLASS_NAMES}

SPLITS = ("train", "val", "test")
CROP_SIZE = 99


def class_slug(name: str) -> str:
    return name.lower().replace(" ", "_")


@dataclass(frozen=True)
class AnnotationRecord:
    ann_id: int
    image_id: int
    file_name: str
    bbox: tuple[float, float, float, float]  # x, y, width, height
    class_name: str


@dataclass(frozen=True)
class SampleRecord:
    path: str
    class_name: str
    split: str
    origin: str        # "original" | "augmented"
    source_id: int     # annotation id of the underlying crop


@dataclass
class DatasetManifest:
    samples: list[SampleRecord] = field(default_factory=list)

    def split_samples(self, split: str) -> list[SampleRecord]:
        return [s for s in self.samples if s.split == split]

    def per_class_counts(self, split: str) -> dict[str, int]:
        counts = {name: 0 for name in CLASS_NAMES}
        for s in self.samples:
            if s.split == split:
                counts[s.class_name] += 1
        return counts

    def sorted(self) -> "DatasetManifest":
        key = lambda s: (s.class_name, SPLITS.index(s.split), s.origin,
                         s.source_id, s.path)
        return DatasetManifest(sorted(self.samples, key=key))


# -- image decode/encode --------------------------------------------------

def write_ppm(path, image: np.ndarray):
    """Write an (H,W,3) array of values in [0,255] as binary P6."""
    arr = np.clip(np.rint(np.asarray(image, dtype=np.float64)), 0, 255)
    arr = arr.astype(np.uint8)
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(arr.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    if not buf.startswith(b"P6"):
        raise DataError(f"{path}: not a binary P6 PPM")
    # header = magic, width, height, maxval, separated by whitespace/comments
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        fields.append(buf[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        w, h, maxval = (int(x) for x in fields)
    except ValueError as e:
        raise DataError(f"{path}: malformed PPM header") from e
    if maxval != 255:
        raise DataError(f"{path}: only maxval 255 supported")
    raw = buf[pos:pos + w * h * 3]
    if len(raw) != w * h * 3:
        raise DataError(f"{path}: truncated pixel data")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3).astype(np.float32)


def load_image(path) -> np.ndarray:
    """Decode to a float32 (H,W,3) array with values in [0,255]."""
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".ppm":
        return read_ppm(path)
    try:
        from PIL import Image
    except ImportError as e:
        raise DataError(f"{path}: non-PPM decode requires Pillow") from e
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float32)
    except OSError as e:
        raise DataError(f"{path}: cannot decode image: {e}") from e


# -- COCO parsing ---------------------------------------------------------

def parse_coco(document) -> tuple[list[AnnotationRecord], int]:
    """Parse a COCO-format document (text or dict).

    Returns records sorted by annotation id plus the count of annotations
    skipped for a missing bbox.
    """
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as e:
            raise DataError(f"invalid COCO JSON: {e}") from e
    for key in ("images", "annotations", "categories"):
        if key not in document:
            raise DataError(f"COCO document missing {key!r} array")
    cat_map = {}
    for cat in document["categories"]:
        name = str(cat.get("name", ""))
        mapped = _CLASS_BY_LOWER.get(name.lower())
        if mapped is None:
            raise DataError(f"unknown category name {name!r}")
        cat_map[cat["id"]] = mapped
    images = {img["id"]: img["file_name"] for img in document["images"]}
    records = []
    skipped = 0
    for ann in document["annotations"]:
        bbox = ann.get("bbox")
        if not bbox or len(bbox) != 4:
            skipped += 1
            continue
        if ann["category_id"] not in cat_map:
            raise DataError(f"annotation {ann.get('id')} references "
                            f"unknown category id {ann['category_id']}")
        if ann["image_id"] not in images:
            raise DataError(f"annotation {ann.get('id')} references "
                            f"unknown image id {ann['image_id']}")
        records.append(AnnotationRecord(
            ann_id=int(ann["id"]),
            image_id=int(ann["image_id"]),
            file_name=images[ann["image_id"]],
            bbox=tuple(float(v) for v in bbox),
            class_name=cat_map[ann["category_id"]],
        ))
    records.sort(key=lambda r: r.ann_id)
    return records, skipped


# -- crop and resize ------------------------------------------------------

def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resample; identity sizes return a copy."""
    h, w = image.shape[:2]
    if (h, w) == (out_h, out_w):
        return image.copy()
    src = image.astype(np.float64)
    ys = (np.linspace(0.0, h - 1, out_h) if out_h > 1
          else np.zeros(1))
    xs = (np.linspace(0.0, w - 1, out_w) if out_w > 1
          else np.zeros(1))
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    top = src[y0][:, x0] * (1 - wx) + src[y0][:, x1] * wx
    bot = src[y1][:, x0] * (1 - wx) + src[y1][:, x1] * wx
    return (top * (1 - wy) + bot * wy).astype(image.dtype)


def crop_and_resize(frame: np.ndarray, record: AnnotationRecord) -> np.ndarray:
    """Clamped axis-aligned crop of the bbox, resized to 99x99."""
    h, w = frame.shape[:2]
    x, y, bw, bh = record.bbox
    if bw <= 0 or bh <= 0 or x >= w or y >= h or x + bw <= 0 or y + bh <= 0:
        raise DataError(f"annotation {record.ann_id}: degenerate box after clamping")
    x0 = min(max(int(math.floor(x)), 0), w - 1)
    y0 = min(max(int(math.floor(y)), 0), h - 1)
    x1 = min(max(int(math.ceil(x + bw)), x0 + 1), w)
    y1 = min(max(int(math.ceil(y + bh)), y0 + 1), h)
    if x1 - x0 < 1 or y1 - y0 < 1:
        raise DataError(f"annotation {record.ann_id}: degenerate box after clamping")
    return bilinear_resize(frame[y0:y1, x0:x1], CROP_SIZE, CROP_SIZE)


# -- augmentation ---------------------------------------------------------

@dataclass(frozen=True)
class AugmentParams:
    horizontal_flip: bool
    rotation_deg: float
    shift_x: float        # fraction of width
    shift_y: float        # fraction of height
    shear_deg: float
    zoom: float


@dataclass(frozen=True)
class AugmentRanges:
    rotation_deg: float = 15.0
    shift_frac: float = 0.10
    shear_deg: float = 10.0
    zoom_frac: float = 0.10
    flip_prob: float = 0.5


IDENTITY_PARAMS = AugmentParams(False, 0.0, 0.0, 0.0, 0.0, 1.0)


def draw_augment_params(rng: np.random.Generator,
                        ranges: AugmentRanges = AugmentRanges()) -> AugmentParams:
    return AugmentParams(
        horizontal_flip=bool(rng.random() < ranges.flip_prob),
        rotation_deg=float(rng.uniform(-ranges.rotation_deg, ranges.rotation_deg)),
        shift_x=float(rng.uniform(-ranges.shift_frac, ranges.shift_frac)),
        shift_y=float(rng.uniform(-ranges.shift_frac, ranges.shift_frac)),
        shear_deg=float(rng.uniform(-ranges.shear_deg, ranges.shear_deg)),
        zoom=float(rng.uniform(1.0 - ranges.zoom_frac, 1.0 + ranges.zoom_frac)),
    )


def _affine_matrix(params: AugmentParams, h: int, w: int) -> np.ndarray:
    """Forward (input -> output) pixel-coordinate transform about the center."""
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    def mat(a, b, c, d, tx=0.0, ty=0.0):
        return np.array([[a, b, tx], [c, d, ty], [0, 0, 1.0]])
    m = mat(-1.0 if params.horizontal_flip else 1.0, 0, 0, 1)
    th = math.radians(params.rotation_deg)
    m = mat(math.cos(th), -math.sin(th), math.sin(th), math.cos(th)) @ m
    m = mat(1.0, math.tan(math.radians(params.shear_deg)), 0.0, 1.0) @ m
    m = mat(params.zoom, 0, 0, params.zoom) @ m
    m = mat(1, 0, 0, 1, params.shift_x * w, params.shift_y * h) @ m
    center = mat(1, 0, 0, 1, cx, cy)
    uncenter = mat(1, 0, 0, 1, -cx, -cy)
    return center @ m @ uncenter


def augment(image: np.ndarray, params: AugmentParams) -> np.ndarray:
    """Single composed affine warp, bilinear sampling, nearest-edge fill."""
    h, w = image.shape[:2]
    if params == IDENTITY_PARAMS:
        return image.copy()
    inv = np.linalg.inv(_affine_matrix(params, h, w))
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    sx = inv[0, 0] * xx + inv[0, 1] * yy + inv[0, 2]
    sy = inv[1, 0] * xx + inv[1, 1] * yy + inv[1, 2]
    sx = np.clip(sx, 0, w - 1)  # nearest-edge fill
    sy = np.clip(sy, 0, h - 1)
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = (sx - x0)[..., None]
    wy = (sy - y0)[..., None]
    src = image.astype(np.float64)
    top = src[y0, x0] * (1 - wx) + src[y0, x1] * wx
    bot = src[y1, x0] * (1 - wx) + src[y1, x1] * wx
    return (top * (1 - wy) + bot * wy).astype(image.dtype)


# -- split and balance ----------------------------------------------------

def _ratio_counts(n: int, ratios) -> tuple[int, int, int]:
    n_train = int(math.floor(n * ratios[0] + 1e-9))
    n_val = int(math.floor(n * ratios[1] + 1e-9))
    return n_train, n_val, n - n_train - n_val


def stratified_split(records: list[SampleRecord],
                     ratios=(0.7, 0.2, 0.1), seed: int = 0) -> DatasetManifest:
    """Class-wise seeded shuffle then floor/floor/remainder assignment."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must sum to 1, got {ratios}")
    by_class: dict[str, list[SampleRecord]] = {n: [] for n in CLASS_NAMES}
    for rec in records:
        if rec.class_name not in by_class:
            raise DataError(f"unknown class {rec.class_name!r}")
        by_class[rec.class_name].append(rec)
    out = []
    for ci, name in enumerate(CLASS_NAMES):
        recs = sorted(by_class[name], key=lambda r: r.source_id)
        if not recs:
            continue
        if len(recs) < 3:
            raise DataError(f"class {name!r} has {len(recs)} samples; "
                            "need at least 3 to populate all splits")
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence([seed, 10, ci])))
        order = rng.permutation(len(recs))
        n_train, n_val, _ = _ratio_counts(len(recs), ratios)
        for pos, idx in enumerate(order):
            split = ("train" if pos < n_train
                     else "val" if pos < n_train + n_val else "test")
            out.append(replace(recs[idx], split=split))
    return DatasetManifest(out).sorted()


def balance_train(manifest: DatasetManifest, target: int, seed: int,
                  aug_dir, ranges: AugmentRanges = AugmentRanges()
                  ) -> DatasetManifest:
    """Downsample majority classes to `target` train originals; augment
    minority classes round-robin until each reaches `target`. Augmented
    crops are materialized under aug_dir/<class-slug>/."""
    keep = [s for s in manifest.samples if s.split != "train"]
    for ci, name in enumerate(CLASS_NAMES):
        originals = sorted(
            (s for s in manifest.samples
             if s.split == "train" and s.class_name == name),
            key=lambda s: s.source_id)
        if not originals:
            raise DataError(f"class {name!r} has no train originals to balance")
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence([seed, 20, ci])))
        if len(originals) >= target:
            chosen = rng.permutation(len(originals))[:target]
            keep.extend(originals[i] for i in sorted(chosen))
            continue
        keep.extend(originals)
        out_dir = os.path.join(aug_dir, class_slug(name))
        os.makedirs(out_dir, exist_ok=True)
        need = target - len(originals)
        for k in range(need):
            src = originals[k % len(originals)]
            params = draw_augment_params(rng, ranges)
            image = augment(load_image(src.path), params)
            path = os.path.join(out_dir, f"aug_{src.source_id}_{k:05d}.ppm")
            write_ppm(path, image)
            keep.append(SampleRecord(path, name, "train", "augmented",
                                     src.source_id))
    return DatasetManifest(keep).sorted()


# -- manifest file --------------------------------------------------------

_MANIFEST_HEADER = "path\tclass\tsplit\torigin\tsource_id"


def write_manifest(manifest: DatasetManifest, path):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(_MANIFEST_HEADER + "\n")
        for s in manifest.sorted().samples:
            f.write(f"{s.path}\t{s.class_name}\t{s.split}\t{s.origin}"
                    f"\t{s.source_id}\n")


def read_manifest(path) -> DatasetManifest:
    samples = []
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().rstrip("\n")
        if header != _MANIFEST_HEADER:
            raise DataError(f"{path}: unexpected manifest header")
        for lineno, line in enumerate(f, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise DataError(f"{path}:{lineno}: malformed manifest line")
            p, cls, split, origin, source_id = parts
            if cls not in CLASS_NAMES or split not in SPLITS \
                    or origin not in ("original", "augmented"):
                raise DataError(f"{path}:{lineno}: invalid field value")
            try:
                samples.append(SampleRecord(p, cls, split, origin,
                                            int(source_id)))
            except ValueError as e:
                raise DataError(f"{path}:{lineno}: bad source id") from e
    return DatasetManifest(samples)


# -- end-to-end preparation ----------------------------------------------

def prepare_dataset(annotation_path, frames_dir, workdir,
                    ratios=(0.7, 0.2, 0.1), target: int = 5000,
                    seed: int = 0, ranges: AugmentRanges = AugmentRanges()
                    ) -> DatasetManifest:
    """parse -> crop -> split -> balance -> manifest, all under workdir."""
    with open(annotation_path, "r", encoding="utf-8") as f:
        records, _ = parse_coco(f.read())
    crop_dir = os.path.join(workdir, "crops")
    frames: dict[str, np.ndarray] = {}
    samples = []
    for rec in records:
        if rec.file_name not in frames:
            frames[rec.file_name] = load_image(
                os.path.join(frames_dir, rec.file_name))
        crop = crop_and_resize(frames[rec.file_name], rec)
        out_dir = os.path.join(crop_dir, class_slug(rec.class_name))
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, f"crop_{rec.ann_id:08d}.ppm")
        write_ppm(path, crop)
        samples.append(SampleRecord(path, rec.class_name, "train",
                                    "original", rec.ann_id))
    manifest = stratified_split(samples, ratios, seed)
    manifest = balance_train(manifest, target, seed,
                             os.path.join(workdir, "augmented"), ranges)
    write_manifest(manifest, os.path.join(workdir, "manifest.tsv"))
    return manifest


def load_split_arrays(manifest: DatasetManifest, split: str,
                      dtype=np.float32):
    """(images scaled to [0,1], one-hot labels) for one split."""
    from .train import one_hot

    samples = manifest.split_samples(split)
    if not samples:
        raise DataError(f"split {split!r} is empty")
    x = np.stack([load_image(s.path) for s in samples]).astype(dtype) / 255.0
    y = one_hot([CLASS_NAMES.index(s.class_name) for s in samples],
                dtype=dtype)
    return x, y
