"""Procedural unpaired two-domain dataset and binary PPM (P6) I/O.

Domain A: yellow-tinted background, ellipse filled with vertical 2-px stripes.
Domain B: green-tinted background, solid mid-gray ellipse.

The two gaps are deliberately different in difficulty: background colour is a
cheap global remap, stripe removal needs spatial structure.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import SplitMix64, derive_seed
from .tensor import Tensor

SIZE = 32
DOMAINS = ("A", "B")
SPLITS = ("train", "test")

BACKGROUND = {"A": (200.0, 170.0, 60.0), "B": (70.0, 190.0, 70.0)}
BACKGROUND_JITTER = 20.0
STRIPE_DARK = 40
STRIPE_LIGHT = 215
SOLID_GRAY = 128


class PPMError(ValueError):
    pass


class UnsupportedFormatError(PPMError):
    pass


class MalformedHeaderError(PPMError):
    pass


class MaxvalError(PPMError):
    pass


class TruncatedPayloadError(PPMError):
    pass


def _check_domain(domain: str) -> None:
    if domain not in DOMAINS:
        raise ValueError(f"domain must be 'A' or 'B', got {domain!r}")


def render_sample(domain: str, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(image uint8 [32,32,3], ellipse mask bool [32,32])``."""
    _check_domain(domain)
    rng = SplitMix64(derive_seed(seed, DOMAINS.index(domain)))
    base = np.array(BACKGROUND[domain])
    bg = base + np.array([rng.uniform_range(-BACKGROUND_JITTER, BACKGROUND_JITTER) for _ in range(3)])
    cx = rng.uniform_range(11.0, 21.0)
    cy = rng.uniform_range(11.0, 21.0)
    ax = rng.uniform_range(6.0, 10.0)
    ay = rng.uniform_range(6.0, 10.0)

    rows, cols = np.mgrid[0:SIZE, 0:SIZE]
    mask = ((cols + 0.5 - cx) / ax) ** 2 + ((rows + 0.5 - cy) / ay) ** 2 <= 1.0

    img = np.empty((SIZE, SIZE, 3))
    img[...] = np.clip(np.rint(bg), 0, 255)
    if domain == "A":
        dark = (cols // 2) % 2 == 0
        fill = np.where(dark, STRIPE_DARK, STRIPE_LIGHT)
        img[mask] = fill[mask][:, None]
    else:
        img[mask] = SOLID_GRAY
    return img.astype(np.uint8), mask


def synth_sample(domain: str, seed: int) -> np.ndarray:
    return render_sample(domain, seed)[0]


def sample_seed(dataset_seed: int, split: str, domain: str, index: int) -> int:
    return derive_seed(dataset_seed, SPLITS.index(split), DOMAINS.index(domain), index)


def domain_pool(domain: str, split: str, count: int, dataset_seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``count`` images of one domain/split: (uint8 [N,32,32,3], masks [N,32,32], seeds)."""
    seeds = np.array([sample_seed(dataset_seed, split, domain, i) for i in range(count)], dtype=np.uint64)
    imgs = np.empty((count, SIZE, SIZE, 3), dtype=np.uint8)
    masks = np.empty((count, SIZE, SIZE), dtype=bool)
    for i, s in enumerate(seeds):
        imgs[i], masks[i] = render_sample(domain, int(s))
    return imgs, masks, seeds


# ------------------------------------------------------------------------ PPM


def encode_ppm(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected H x W x 3 image, got shape {img.shape}")
    if img.dtype != np.uint8:
        raise ValueError(f"expected uint8 image, got {img.dtype}")
    h, w, _ = img.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + img.tobytes()


def write_ppm(img: np.ndarray, path) -> None:
    Path(path).write_bytes(encode_ppm(img))


def _tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments."""
    toks: list[bytes] = []
    i, n = 0, len(buf)
    while len(toks) < count:
        while i < n and buf[i:i + 1].isspace():
            i += 1
        if i < n and buf[i:i + 1] == b"#":
            while i < n and buf[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        if i >= n:
            raise MalformedHeaderError("header ended early")
        j = i
        while j < n and not buf[j:j + 1].isspace() and buf[j:j + 1] != b"#":
            j += 1
        toks.append(buf[i:j])
        i = j
    return toks, i


def decode_ppm(buf: bytes) -> np.ndarray:
    if len(buf) < 2:
        raise MalformedHeaderError("file too short for a PPM header")
    magic = buf[:2]
    if magic != b"P6":
        if magic[:1] == b"P" and magic[1:2].isdigit():
            raise UnsupportedFormatError(f"unsupported netpbm format {magic.decode('ascii', 'replace')}; only P6")
        raise MalformedHeaderError("missing P6 magic number")
    toks, i = _tokens(buf[2:], 3)
    try:
        w, h, maxval = (int(t) for t in toks)
    except ValueError:
        raise MalformedHeaderError(f"non-integer header fields {toks!r}") from None
    if w <= 0 or h <= 0:
        raise MalformedHeaderError(f"bad dimensions {w}x{h}")
    if maxval != 255:
        raise MaxvalError(f"maxval must be 255, got {maxval}")
    i += 2
    if i >= len(buf) or not buf[i:i + 1].isspace():
        raise MalformedHeaderError("expected a single whitespace byte after maxval")
    payload = buf[i + 1:]
    need = w * h * 3
    if len(payload) < need:
        raise TruncatedPayloadError(f"payload has {len(payload)} bytes, need {need}")
    return np.frombuffer(payload[:need], dtype=np.uint8).reshape(h, w, 3).copy()


def read_ppm(path) -> np.ndarray:
    return decode_ppm(Path(path).read_bytes())


# ---------------------------------------------------------------- conversions


def to_model_range(imgs: np.ndarray) -> np.ndarray:
    """uint8 [..., H, W, 3] -> float64 [..., 3, H, W] in [-1, 1]."""
    a = np.asarray(imgs, dtype=np.float64) / 127.5 - 1.0
    return np.moveaxis(a, -1, -3).copy()


def from_model_range(values) -> np.ndarray:
    """float [..., 3, H, W] in [-1, 1] -> uint8 [..., H, W, 3], rounded and clamped."""
    if isinstance(values, Tensor):
        values = values.data
    b = np.clip(np.rint((np.asarray(values, dtype=np.float64) + 1.0) * 127.5), 0, 255)
    return np.moveaxis(b, -3, -1).astype(np.uint8)


# -------------------------------------------------------------------- batches


@dataclass
class ImageBatch:
    images: Tensor  # [B, 3, 32, 32] in [-1, 1]
    sources: np.ndarray  # sample seeds (or pool indices) of each row


def epoch_permutation(count: int, epoch_seed: int, epoch: int, domain: str) -> np.ndarray:
    _check_domain(domain)
    return SplitMix64(derive_seed(epoch_seed, epoch, 0xD0 + DOMAINS.index(domain))).permutation(count)


def make_epoch_batches(pool: np.ndarray, batch_size: int, epoch_seed: int, epoch: int, domain: str,
                       sources: np.ndarray | None = None) -> list[ImageBatch]:
    """Shuffle a model-range pool [N,3,H,W] for this epoch and cut it into batches."""
    count = len(pool)
    if batch_size < 1 or count % batch_size:
        raise ValueError(f"batch_size {batch_size} must divide count {count}")
    if sources is None:
        sources = np.arange(count)
    perm = epoch_permutation(count, epoch_seed, epoch, domain)
    return [ImageBatch(Tensor(pool[perm[i:i + batch_size]]), np.asarray(sources)[perm[i:i + batch_size]])
            for i in range(0, count, batch_size)]


# ---------------------------------------------------------------- directories


def generate_dataset(root, count: int, seed: int) -> dict[str, int]:
    """Write ``count`` PPMs into each of trainA, trainB, testA, testB."""
    if count < 1:
        raise ValueError("count must be >= 1")
    root = Path(root)
    written = {}
    for split in SPLITS:
        for domain in DOMAINS:
            d = root / f"{split}{domain}"
            d.mkdir(parents=True, exist_ok=True)
            imgs, _, _ = domain_pool(domain, split, count, seed)
            for i, img in enumerate(imgs):
                write_ppm(img, d / f"{i:05d}.ppm")
            written[f"{split}{domain}"] = count
    return written


def load_domain_dir(path, count: int | None = None) -> np.ndarray:
    """Read the first ``count`` PPMs (sorted by name) of a directory."""
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {path}")
    names = sorted(n for n in os.listdir(path) if n.endswith(".ppm"))
    if count is not None:
        if len(names) < count:
            raise ValueError(f"{path} has {len(names)} images, need {count}")
        names = names[:count]
    return np.stack([read_ppm(path / n) for n in names]) if names else np.empty((0, SIZE, SIZE, 3), np.uint8)
