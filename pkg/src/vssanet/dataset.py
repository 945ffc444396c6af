"""Synthetic sign scenes, PPM image I/O and the annotation text format.

A scene holds signs (labelled) and distractors (unlabelled) drawn by the same
glyph renderer.  True signs stand on a pole with probability ``pole_rate``;
distractors never do, so the pole is the only cue separating them.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np

from .detection import Box

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# archetype per class id, cycled when there are more classes than shapes
SHAPES = ("circle", "triangle", "rectangle")
SIGN_COLORS = (
    (220, 30, 30),
    (240, 200, 20),
    (30, 80, 220),
    (30, 170, 60),
    (230, 120, 20),
    (150, 40, 180),
)
POLE_COLOR = (110, 110, 115)


class PPMFormatError(ValueError):
    pass


class AnnotationError(ValueError):
    pass


@dataclass
class SceneSpec:
    image_size: int = 300
    sign_count: tuple = (1, 3)
    num_classes: int = 3
    pole_rate: float = 1.0
    distractor_count: tuple = (0, 2)
    clutter: int = 12
    size_range: tuple = (0.06, 0.20)
    noise: float = 6.0
    seed: int = 0
    max_retries: int = 200


@dataclass
class Sample:
    image: np.ndarray                       # [H, W, 3] uint8
    objects: list                           # [(class_id, Box)]
    distractors: list = field(default_factory=list)  # [(class_id, Box)], unlabelled
    poles: list = field(default_factory=list)        # [(object index, (x0, y0, x1, y1))]


def glyph_mask(shape: str, w: int, h: int) -> np.ndarray:
    """Boolean [h, w] mask whose bounding box is exactly the full w x h frame."""
    yy, xx = np.mgrid[0:h, 0:w]
    cx, cy = (xx + 0.5) / w, (yy + 0.5) / h
    if shape == "circle":
        m = (cx - 0.5) ** 2 + (cy - 0.5) ** 2 <= 0.25
    elif shape == "triangle":
        # apex at top centre, flat base on the bottom row
        m = np.abs(cx - 0.5) <= 0.5 * cy + 0.5 / w
    else:
        m = np.ones((h, w), dtype=bool)
    # guarantee full-frame extent so the label box is tight
    m[0, w // 2] = m[h - 1, w // 2] = m[h // 2, 0] = m[h // 2, w - 1] = True
    if shape == "triangle":
        m[h - 1, :] = True
    return m


def render_glyph(image: np.ndarray, class_id: int, x0: int, y0: int, w: int, h: int) -> np.ndarray:
    """Paint a sign glyph with its top-left corner at (x0, y0); returns the full-image mask."""
    shape = SHAPES[(class_id - 1) % len(SHAPES)]
    color = SIGN_COLORS[(class_id - 1) % len(SIGN_COLORS)]
    m = glyph_mask(shape, w, h)
    inner = np.zeros_like(m)
    iy0, iy1 = int(h * 0.4), max(int(h * 0.6), int(h * 0.4) + 1)
    ix0, ix1 = int(w * 0.3), max(int(w * 0.7), int(w * 0.3) + 1)
    inner[iy0:iy1, ix0:ix1] = True
    inner &= m
    region = image[y0:y0 + h, x0:x0 + w]
    region[m] = color
    region[inner] = (245, 245, 245)
    full = np.zeros(image.shape[:2], dtype=bool)
    full[y0:y0 + h, x0:x0 + w] = m
    return full


def _background(rng: np.random.Generator, size: int, clutter: int, noise: float) -> np.ndarray:
    base = rng.integers(60, 190, size=3)
    img = np.empty((size, size, 3), dtype=np.float64)
    img[:] = base
    for _ in range(clutter):
        w, h = rng.integers(size // 12, size // 3, size=2)
        x, y = rng.integers(0, size - w), rng.integers(0, size - h)
        # muted colours keep clutter distinguishable from saturated sign paint
        grey = rng.integers(50, 200)
        tint = rng.integers(-25, 26, size=3)
        img[y:y + h, x:x + w] = np.clip(grey + tint, 0, 255)
    if noise > 0:
        img += rng.normal(0.0, noise, size=img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def _overlaps(rect, taken, margin: int) -> bool:
    x0, y0, x1, y1 = rect
    for a0, b0, a1, b1 in taken:
        if x0 < a1 + margin and a0 < x1 + margin and y0 < b1 + margin and b0 < y1 + margin:
            return True
    return False


def generate_scene(spec: SceneSpec, seed: Optional[int] = None) -> Sample:
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    S = spec.image_size
    image = _background(rng, S, spec.clutter, spec.noise)
    n_signs = int(rng.integers(spec.sign_count[0], spec.sign_count[1] + 1))
    n_distract = int(rng.integers(spec.distractor_count[0], spec.distractor_count[1] + 1))
    kinds = ["sign"] * n_signs + ["distractor"] * n_distract
    rng.shuffle(kinds)

    taken, objects, distractors, poles = [], [], [], []
    lo, hi = spec.size_range
    for kind in kinds:
        class_id = int(rng.integers(1, spec.num_classes + 1))
        with_pole = kind == "sign" and rng.random() < spec.pole_rate
        placed = None
        for _ in range(spec.max_retries):
            w = int(round(rng.uniform(lo, hi) * S))
            h = w if SHAPES[(class_id - 1) % len(SHAPES)] != "rectangle" else max(3, int(round(w * 0.7)))
            w, h = max(w, 3), max(h, 3)
            pole_len = int(round(rng.uniform(1.0, 2.5) * h)) if with_pole else 0
            if w >= S or h + (1 if with_pole else 0) >= S:
                continue
            x0 = int(rng.integers(0, S - w + 1))
            y0 = int(rng.integers(0, S - h - (1 if with_pole else 0) + 1))
            bottom = min(S, y0 + h + pole_len)
            rect = (x0, y0, x0 + w, bottom)
            if not _overlaps(rect, taken, margin=2):
                placed = (x0, y0, w, h, bottom)
                taken.append(rect)
                break
        if placed is None:
            logger.warning("could not place a %s after %d tries; scene has fewer objects", kind, spec.max_retries)
            continue
        x0, y0, w, h, bottom = placed
        mask = render_glyph(image, class_id, x0, y0, w, h)
        ys, xs = np.nonzero(mask)
        box = Box(float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1))
        if kind == "sign":
            objects.append((class_id, box))
            if with_pole and bottom > y0 + h:
                pw = max(2, w // 8)
                px0 = x0 + (w - pw) // 2
                image[y0 + h:bottom, px0:px0 + pw] = POLE_COLOR
                poles.append((len(objects) - 1, (px0, y0 + h, px0 + pw, bottom)))
        else:
            distractors.append((class_id, box))
    return Sample(image, objects, distractors, poles)


def derive_seeds(master_seed: int, n: int) -> list[int]:
    """Independent per-sample seeds from one master seed."""
    children = np.random.SeedSequence(master_seed).spawn(n)
    return [int(c.generate_state(1)[0]) for c in children]


# ---------------------------------------------------------------------------
# PPM (binary P6, maxval 255)
# ---------------------------------------------------------------------------

def write_ppm(path: PathLike, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError(f"write_ppm expects an [H, W, 3] uint8 array, got {image.shape} {image.dtype}")
    h, w = image.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(image).tobytes())


def _header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise PPMFormatError("truncated PPM header")
        if data[pos:pos + 1] == b"#":
            end = data.find(b"\n", pos)
            if end < 0:
                raise PPMFormatError("truncated PPM header comment")
            pos = end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_ppm(path: PathLike) -> np.ndarray:
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic == b"P3":
        raise PPMFormatError(f"{path}: ASCII PPM (P3) is not supported; only binary P6 is read")
    if magic != b"P6":
        raise PPMFormatError(f"{path}: not a binary PPM (magic {magic!r}, expected b'P6')")
    tokens, offset = _header_tokens(data[2:], 3)
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError:
        raise PPMFormatError(f"{path}: malformed PPM header {tokens!r}") from None
    if w <= 0 or h <= 0:
        raise PPMFormatError(f"{path}: invalid image size {w}x{h}")
    if maxval != 255:
        raise PPMFormatError(f"{path}: maxval {maxval} unsupported (only 255)")
    body = data[2 + offset:]
    need = w * h * 3
    if len(body) < need:
        raise PPMFormatError(f"{path}: raster truncated, {len(body)} of {need} bytes")
    return np.frombuffer(body[:need], dtype=np.uint8).reshape(h, w, 3).copy()


# ---------------------------------------------------------------------------
# annotations: "<image_path> <class_id> <xmin> <ymin> <xmax> <ymax>" per line
# ---------------------------------------------------------------------------

def read_annotations(path: PathLike) -> dict[str, list]:
    """Map image path -> [(class_id, Box)], in file order.

    A line holding only an image path lists that image with no objects.
    """
    result: dict[str, list] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) == 1:
            result.setdefault(parts[0], [])
            continue
        if len(parts) != 6:
            raise AnnotationError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
        try:
            cls = int(parts[1])
            xmin, ymin, xmax, ymax = (float(p) for p in parts[2:])
        except ValueError:
            raise AnnotationError(f"{path}:{lineno}: non-numeric field in {line!r}") from None
        if not all(math.isfinite(v) for v in (xmin, ymin, xmax, ymax)):
            raise AnnotationError(f"{path}:{lineno}: non-finite coordinate")
        if xmax <= xmin or ymax <= ymin:
            raise AnnotationError(f"{path}:{lineno}: empty box (xmax <= xmin or ymax <= ymin)")
        if cls < 1:
            raise AnnotationError(f"{path}:{lineno}: class id must be >= 1, got {cls}")
        result.setdefault(parts[0], []).append((cls, Box(xmin, ymin, xmax, ymax)))
    return result


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() and abs(v) < 2 ** 53 else repr(float(v))


def write_annotations(path: PathLike, annotations: dict[str, list]) -> None:
    lines = []
    for image_path, objects in annotations.items():
        if re.search(r"\s", image_path):
            raise AnnotationError(f"image path {image_path!r} contains whitespace")
        if not objects:
            lines.append(image_path)
        for cls, box in objects:
            lines.append(" ".join([image_path, str(int(cls))] + [_fmt(v) for v in box.as_tuple()]))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


# ---------------------------------------------------------------------------
# dataset directories: images/*.ppm, train.txt, test.txt
# ---------------------------------------------------------------------------

def generate_dataset(out_dir: PathLike, n_train: int, n_test: int, spec: SceneSpec) -> dict:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    seeds = derive_seeds(spec.seed, n_train + n_test)
    splits = {"train": {}, "test": {}}
    for i, s in enumerate(seeds):
        split = "train" if i < n_train else "test"
        sample = generate_scene(spec, seed=s)
        rel = f"images/{split}_{i:05d}.ppm"
        write_ppm(out / rel, sample.image)
        splits[split][rel] = sample.objects
    write_annotations(out / "train.txt", splits["train"])
    write_annotations(out / "test.txt", splits["test"])
    manifest = {"train": n_train, "test": n_test, **asdict(spec)}
    (out / "manifest.txt").write_text("".join(f"{k} = {v}\n" for k, v in manifest.items()))
    return manifest


@dataclass
class LabeledImage:
    path: str
    image: np.ndarray
    objects: list


def load_split(data_dir: PathLike, split: str) -> list[LabeledImage]:
    root = Path(data_dir)
    ann = root / f"{split}.txt"
    if not ann.exists():
        raise FileNotFoundError(f"no annotation file {ann}")
    return [LabeledImage(p, read_ppm(root / p), objs) for p, objs in read_annotations(ann).items()]


def boxes_and_labels(objects: Iterable) -> tuple[np.ndarray, np.ndarray]:
    objects = list(objects)
    if not objects:
        return np.zeros((0, 4)), np.zeros(0, dtype=np.int64)
    return (np.array([b.as_tuple() for _, b in objects], dtype=np.float64),
            np.array([c for c, _ in objects], dtype=np.int64))
