"""SGD with momentum, the multi-scale training loop and binary checkpoints."""

from __future__ import annotations

import logging
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .autodiff import NonFiniteError, Tensor, new_tape
from .config import TrainConfig, dump_config, parse_config_text
from .detection import match, multitask_loss
from .model import Detector, cached_anchors, image_to_tensor, resize_nearest

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MAGIC = b"VSSA"
FORMAT_VERSION = 1
ITERATION_KEY = "meta/iteration"
MOMENTUM_PREFIX = "momentum/"
MAX_RANK = 32
NO_DECAY_SUFFIXES = ("bias", "shift", "scale", "norm_scale")


class CheckpointFormatError(ValueError):
    """The file is not a readable checkpoint."""


class CheckpointShapeError(ValueError):
    """A stored tensor does not fit the model it is loaded into."""


def decays(name: str) -> bool:
    return not name.split(".")[-1].endswith(NO_DECAY_SUFFIXES)


class SGD:
    """v <- m*v + g + wd*p ; p <- p - lr*v  (weight decay on weights only)."""

    def __init__(self, named_params: Sequence[tuple[str, Tensor]], lr: float, momentum: float = 0.9,
                 weight_decay: float = 0.0):
        self.params = list(named_params)
        self.lr, self.momentum, self.weight_decay = lr, momentum, weight_decay
        self.velocity = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self) -> None:
        # audit everything first so a bad gradient leaves parameters untouched
        for name, p in self.params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NonFiniteError(f"non-finite gradient for parameter {name}")
        for name, p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            v = self.velocity[name]
            v *= self.momentum
            v += g
            if self.weight_decay and decays(name):
                v += self.weight_decay * p.data
            p.data -= (self.lr * v).astype(p.data.dtype, copy=False)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: dict[str, np.ndarray],
             lr: float, momentum: float, weight_decay: float) -> tuple[dict, dict]:
    """Functional form of one update over plain arrays."""
    new_p, new_s = {}, {}
    for name, p in params.items():
        g = np.asarray(grads[name])
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name}")
        v = momentum * state.get(name, np.zeros_like(p)) + g
        if weight_decay and decays(name):
            v = v + weight_decay * p
        new_s[name] = v
        new_p[name] = p - lr * v
    return new_p, new_s


# ---------------------------------------------------------------------------
# batches
# ---------------------------------------------------------------------------

@dataclass
class TrainItem:
    image: np.ndarray        # [H, W, 3] uint8
    boxes: np.ndarray        # [K, 4] corners in image pixels
    labels: np.ndarray       # [K]


def scale_boxes(boxes: np.ndarray, src_hw: tuple[int, int], size: int) -> np.ndarray:
    h, w = src_hw
    return boxes * np.array([size / w, size / h, size / w, size / h])


def prepare_item(item: TrainItem, size: int, min_side: float = 1.0):
    """Resize one sample to size x size; drop boxes that collapse below min_side."""
    img = resize_nearest(item.image, size)
    boxes = scale_boxes(item.boxes, item.image.shape[:2], size) if len(item.boxes) else item.boxes
    if len(boxes):
        ok = ((boxes[:, 2] - boxes[:, 0]) >= min_side) & ((boxes[:, 3] - boxes[:, 1]) >= min_side)
        if not ok.all():
            return img, None, None
    return img, boxes, item.labels


@dataclass
class TrainResult:
    model: Detector
    optimizer: SGD
    losses: list[float] = field(default_factory=list)
    cls_losses: list[float] = field(default_factory=list)
    reg_losses: list[float] = field(default_factory=list)
    sizes: list[int] = field(default_factory=list)
    skipped: int = 0
    iteration: int = 0
    seconds: float = 0.0


def train(model: Detector, dataset: Sequence[TrainItem], cfg: TrainConfig,
          callback: Optional[Callable[[int, float], None]] = None,
          optimizer: Optional[SGD] = None, start_iteration: int = 0) -> TrainResult:
    """Run cfg.iterations SGD steps over shuffled mini-batches.

    Every batch picks one scale factor from cfg.scales and resizes all its
    images (and boxes) to round(scale * base_size).
    """
    if not dataset:
        raise ValueError("training set is empty")
    cfg.validate()
    rng = np.random.default_rng(cfg.seed + 1)
    dtype = model.features.backbone.conv1.weight.dtype.type
    named = list(model.named_parameters())
    opt = optimizer or SGD(named, cfg.learning_rate, cfg.momentum, cfg.weight_decay)
    result = TrainResult(model, opt, iteration=start_iteration)
    order = rng.permutation(len(dataset))
    cursor = 0
    t0 = time.perf_counter()
    for it in range(cfg.iterations):
        size = int(round(cfg.scales[int(rng.integers(len(cfg.scales)))] * cfg.base_size))
        images, matches = [], []
        attempts = 0
        while len(images) < min(cfg.batch_size, len(dataset)) and attempts < 4 * len(dataset):
            if cursor >= len(order):
                order, cursor = rng.permutation(len(dataset)), 0
            item = dataset[order[cursor]]
            cursor += 1
            attempts += 1
            img, boxes, labels = prepare_item(item, size)
            if boxes is None:
                result.skipped += 1
                logger.warning("skipping a sample: a box degenerates at input size %d", size)
                continue
            images.append(img)
            matches.append((boxes, labels))
        if not images:
            raise ValueError(f"no usable samples at input size {size}")

        model.zero_grad()
        with new_tape():
            out = model(image_to_tensor(np.stack(images), dtype=dtype))
            anchors = cached_anchors(model, out.sizes, size)
            mres = [match(anchors, b, l, image_hw=(size, size)) for b, l in matches]
            loss = multitask_loss(out.logits, out.deltas, mres, alpha=cfg.alpha, neg_ratio=cfg.neg_ratio)
            if not np.isfinite(loss.total.item()):
                raise NonFiniteError(f"non-finite loss at iteration {start_iteration + it}")
            loss.total.backward()
        opt.step()

        value = float(loss.total.item())
        result.losses.append(value)
        result.cls_losses.append(loss.classification)
        result.reg_losses.append(loss.regression)
        result.sizes.append(size)
        result.iteration = start_iteration + it + 1
        if cfg.log_every and (it + 1) % cfg.log_every == 0:
            logger.info("iter %d size %d loss %.4f (cls %.4f reg %.4f)", result.iteration, size, value,
                        loss.classification, loss.regression)
        if callback is not None:
            callback(result.iteration, value)
    result.seconds = time.perf_counter() - t0
    return result


def moving_average(values: Sequence[float], window: int = 20) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if len(v) < window:
        return v.copy() if len(v) == 0 else np.array([v.mean()])
    c = np.cumsum(np.concatenate([[0.0], v]))
    return (c[window:] - c[:-window]) / window


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    iteration: int
    tensors: dict[str, np.ndarray]                    # model parameters
    momentum: dict[str, np.ndarray] = field(default_factory=dict)
    config: Optional[TrainConfig] = None
    extra: dict = field(default_factory=dict)


def checkpoint_from(model: Detector, iteration: int, cfg: Optional[TrainConfig] = None,
                    optimizer: Optional[SGD] = None) -> Checkpoint:
    mom = dict(optimizer.velocity) if optimizer is not None else {}
    return Checkpoint(iteration, model.state_dict(), mom, cfg)


def _config_path(path: Path) -> Path:
    return path.with_name(path.name + ".cfg")


def save_checkpoint(ckpt: Checkpoint, path: PathLike) -> None:
    path = Path(path)
    entries = [(name, np.asarray(a)) for name, a in ckpt.tensors.items()]
    entries += [(MOMENTUM_PREFIX + name, np.asarray(a)) for name, a in ckpt.momentum.items()]
    entries.append((ITERATION_KEY, np.array([ckpt.iteration], dtype=np.float32)))
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(entries))]
    for name, arr in entries:
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF or arr.ndim > MAX_RANK:
            raise ValueError(f"tensor {name!r} cannot be stored (name or rank too large)")
        chunks.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    path.write_bytes(b"".join(chunks))
    if ckpt.config is not None:
        _config_path(path).write_text(dump_config(ckpt.config, ckpt.extra))


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data, self.pos, self.source = data, 0, source

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointFormatError(f"{self.source}: truncated while reading {what} at byte {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def read_tensors(path: PathLike) -> dict[str, np.ndarray]:
    path = Path(path)
    r = _Reader(path.read_bytes(), str(path))
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    version, count = r.unpack("<II", "header")
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported format version {version} (expected {FORMAT_VERSION})")
    tensors = {}
    for i in range(count):
        (nlen,) = r.unpack("<H", f"name length of tensor {i}")
        try:
            name = r.take(nlen, f"name of tensor {i}").decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointFormatError(f"{path}: tensor {i} has a non-UTF-8 name") from None
        (rank,) = r.unpack("<B", f"rank of {name}")
        if rank > MAX_RANK:
            raise CheckpointFormatError(f"{path}: tensor {name} declares rank {rank} (at most {MAX_RANK})")
        dims = r.unpack(f"<{rank}I", f"dims of {name}")
        n = int(np.prod(dims, dtype=np.int64))
        if n * 4 > len(r.data) - r.pos:
            raise CheckpointFormatError(f"{path}: truncated data for tensor {name} ({n} values declared)")
        if name in tensors:
            raise CheckpointFormatError(f"{path}: duplicate tensor {name}")
        tensors[name] = np.frombuffer(r.take(4 * n, f"data of {name}"), dtype="<f4").reshape(dims).copy()
    if r.pos != len(r.data):
        raise CheckpointFormatError(f"{path}: {len(r.data) - r.pos} trailing bytes after {count} tensors")
    return tensors


def load_checkpoint(path: PathLike) -> Checkpoint:
    path = Path(path)
    tensors = read_tensors(path)
    it = tensors.pop(ITERATION_KEY, np.zeros(1, dtype=np.float32))
    momentum = {k[len(MOMENTUM_PREFIX):]: tensors.pop(k) for k in list(tensors) if k.startswith(MOMENTUM_PREFIX)}
    cfg, extra = None, {}
    cfg_path = _config_path(path)
    if cfg_path.exists():
        train_fields, extra = _parse_sidecar(cfg_path)
        cfg = TrainConfig(**train_fields).validate()
    return Checkpoint(int(it.reshape(-1)[0]), tensors, momentum, cfg, extra)


def _parse_sidecar(path: Path) -> tuple[dict, dict]:
    """Config sidecar: TrainConfig keys plus free-form extras kept as strings."""
    train_lines, extra = [], {}
    known = TrainConfig.__dataclass_fields__
    for line in path.read_text().splitlines():
        body = line.split("#", 1)[0].strip()
        if "=" in body and body.split("=", 1)[0].strip() not in known:
            key, value = (p.strip() for p in body.split("=", 1))
            extra[key] = value
        else:
            train_lines.append(line)
    train_fields, _ = parse_config_text("\n".join(train_lines), source=str(path))
    return train_fields, extra


def load_into(model: Detector, ckpt: Checkpoint) -> None:
    """Copy checkpoint tensors into the model; mismatches name the tensor."""
    own = dict(model.named_parameters())
    missing = [n for n in own if n not in ckpt.tensors]
    unexpected = [n for n in ckpt.tensors if n not in own]
    if missing or unexpected:
        raise CheckpointShapeError(f"checkpoint does not fit the model: missing {missing[:5]}, "
                                   f"unexpected {unexpected[:5]}")
    for name, p in own.items():
        arr = ckpt.tensors[name]
        if arr.shape != p.data.shape:
            raise CheckpointShapeError(f"tensor {name}: checkpoint shape {arr.shape} vs model shape {p.data.shape}")
    for name, p in own.items():
        p.data = ckpt.tensors[name].astype(p.data.dtype, copy=True)
