"""Synthetic dataset generation, boundary ground truth, and file formats.

Images and probability maps travel as stacks of binary PGM (P5) blocks
concatenated in one file, one block per channel, bytes = round(255 * p).
Label masks are single P5 blocks holding raw class IDs (255 = ignore).
Boundary label stacks hold one block per class with bytes in {0, 255}.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError, PgmParseError, ValidationError

IGNORE_LABEL = 255


@dataclass
class SampleRecord:
    """One dataset entry: image in [0,1], class mask, per-class boundary bits."""

    id: str
    image: np.ndarray       # (3, H, W) float64
    mask: np.ndarray        # (H, W) int64
    boundaries: np.ndarray  # (K, H, W) uint8

    def __post_init__(self):
        if self.image.shape[1:] != self.mask.shape or (
            self.boundaries.shape[1:] != self.mask.shape
        ):
            raise ValidationError(
                f"sample {self.id}: inconsistent field shapes "
                f"{self.image.shape} / {self.mask.shape} / {self.boundaries.shape}"
            )


# ---------------------------------------------------------------------------
# boundary ground truth


def _dilate_chebyshev(bits, radius):
    h, w = bits.shape
    padded = np.zeros((h + 2 * radius, w + 2 * radius), dtype=bool)
    padded[radius : radius + h, radius : radius + w] = bits
    out = np.zeros((h, w), dtype=bool)
    for dy in range(2 * radius + 1):
        for dx in range(2 * radius + 1):
            out |= padded[dy : dy + h, dx : dx + w]
    return out


def gt_boundary_from_labels(mask, classes, radius=1):
    """Multi-label boundary bits from a class mask.

    A pixel is a boundary pixel for class k when its Chebyshev
    neighbourhood of the given radius contains both a class-k pixel and
    a pixel of some other non-ignore class. Ignore pixels never carry
    boundary bits.
    """
    if radius < 1:
        raise InvalidArgumentError(f"radius must be >= 1, got {radius}")
    mask = np.asarray(mask)
    valid = mask != IGNORE_LABEL
    out = np.zeros((classes,) + mask.shape, dtype=np.uint8)
    near_class = [
        _dilate_chebyshev((mask == k) & valid, radius) for k in range(classes)
    ]
    for k in range(classes):
        near_other = _dilate_chebyshev(valid & (mask != k), radius)
        out[k] = (near_class[k] & near_other & valid).astype(np.uint8)
    return out


# ---------------------------------------------------------------------------
# synthetic samples


def _palette(classes):
    colors = np.empty((classes, 3))
    colors[0] = 0.08
    for c in range(1, classes):
        theta = 2.0 * np.pi * (c - 1) / max(1, classes - 1)
        colors[c] = 0.5 + 0.46 * np.array(
            [np.cos(theta), np.cos(theta - 2.0 * np.pi / 3.0),
             np.cos(theta + 2.0 * np.pi / 3.0)]
        )
    return colors


def _paint_shape(mask, rng, label, center, extent):
    size = mask.shape[0]
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy, cx = center
    kind = int(rng.integers(3))
    if kind == 0:  # rectangle
        hy = extent * rng.uniform(0.7, 1.0)
        hx = extent * rng.uniform(0.7, 1.0)
        inside = (np.abs(yy - cy) <= hy) & (np.abs(xx - cx) <= hx)
    elif kind == 1:  # circle
        inside = (yy - cy) ** 2 + (xx - cx) ** 2 <= extent**2
    else:  # triangle via three half-plane tests
        angles = rng.uniform(0, 2 * np.pi) + np.array([0.0, 2.0, 4.2])
        pts = np.stack(
            [cy + 1.25 * extent * np.sin(angles), cx + 1.25 * extent * np.cos(angles)],
            axis=1,
        )
        inside = np.ones_like(yy, dtype=bool)
        for a in range(3):
            p, q = pts[a], pts[(a + 1) % 3]
            r = pts[(a + 2) % 3]
            cross = (q[0] - p[0]) * (xx - p[1]) - (q[1] - p[1]) * (yy - p[0])
            ref = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
            inside &= cross * ref >= 0
    mask[inside] = label


def _shape_slots(rng, size, count):
    # jittered cells keep the randomly placed shapes from occluding
    # each other into slivers
    per_side = int(np.ceil(np.sqrt(count)))
    cell = size / per_side
    order = rng.permutation(per_side * per_side)[:count]
    slots = []
    for slot in order:
        gy, gx = divmod(int(slot), per_side)
        jitter = rng.uniform(-0.12 * cell, 0.12 * cell, size=2)
        center = ((gy + 0.5) * cell + jitter[0], (gx + 0.5) * cell + jitter[1])
        extent = rng.uniform(0.30, 0.38) * cell
        slots.append((center, extent))
    return slots


def generate_synthetic(seed, count, size, classes, boundary_radius=1):
    """Deterministic toy scenes: colored shapes on a dark background.

    Class c in 1..K-1 is one randomly placed filled shape, painted
    back-to-front; the image is the per-class base color plus clipped
    Gaussian noise.
    """
    if classes < 2:
        raise InvalidArgumentError(f"need at least 2 classes, got {classes}")
    if size % 16 != 0:
        raise InvalidArgumentError(f"size must be divisible by 16, got {size}")
    colors = _palette(classes)
    samples = []
    for idx in range(count):
        rng = np.random.default_rng(np.random.SeedSequence([seed, idx]))
        mask = np.zeros((size, size), dtype=np.int64)
        slots = _shape_slots(rng, size, classes - 1)
        for label in range(1, classes):
            center, extent = slots[label - 1]
            _paint_shape(mask, rng, label, center, extent)
        image = colors[mask].transpose(2, 0, 1).copy()
        image += rng.normal(0.0, 0.05, size=image.shape)
        np.clip(image, 0.0, 1.0, out=image)
        boundaries = gt_boundary_from_labels(mask, classes, radius=boundary_radius)
        samples.append(
            SampleRecord(id=f"sample_{idx:04d}", image=image, mask=mask,
                         boundaries=boundaries)
        )
    return samples


# ---------------------------------------------------------------------------
# PGM stacks


def _encode_pgm(channel):
    h, w = channel.shape
    return b"P5\n%d %d\n255\n" % (w, h) + channel.astype(np.uint8).tobytes()


def write_pgm_stack(path, stack):
    """Write a (C, H, W) uint8 array as C concatenated P5 blocks."""
    stack = np.asarray(stack)
    if stack.ndim == 2:
        stack = stack[None]
    with open(path, "wb") as fh:
        for channel in stack:
            fh.write(_encode_pgm(channel))


def _read_token(blob, off):
    while off < len(blob) and blob[off : off + 1].isspace():
        off += 1
    if off < len(blob) and blob[off : off + 1] == b"#":
        end = blob.find(b"\n", off)
        if end < 0:
            raise PgmParseError("unterminated comment", off)
        return _read_token(blob, end + 1)
    start = off
    while off < len(blob) and not blob[off : off + 1].isspace():
        off += 1
    if start == off:
        raise PgmParseError("expected header token", start)
    return blob[start:off], off


def read_pgm_stack(path):
    """Read one or more concatenated P5 blocks into a (C, H, W) uint8 array."""
    blob = Path(path).read_bytes()
    channels, off = [], 0
    while off < len(blob):
        magic, off = _read_token(blob, off)
        if magic != b"P5":
            raise PgmParseError(f"bad PGM magic {magic!r}", off - len(magic))
        fields = []
        for _ in range(3):
            token, off = _read_token(blob, off)
            if not token.isdigit():
                raise PgmParseError(f"bad header field {token!r}", off - len(token))
            fields.append(int(token))
        w, h, maxval = fields
        if maxval != 255 or w < 1 or h < 1:
            raise PgmParseError(f"unsupported PGM header {w}x{h} maxval {maxval}", off)
        off += 1  # single whitespace byte after maxval
        if off + h * w > len(blob):
            raise PgmParseError("truncated pixel data", len(blob))
        channels.append(
            np.frombuffer(blob, dtype=np.uint8, count=h * w, offset=off).reshape(h, w)
        )
        off += h * w
        # skip stray trailing whitespace between blocks
        while off < len(blob) and blob[off : off + 1] in b"\r\n \t":
            nxt = blob[off : off + 2]
            if nxt[:1] == b"P":
                break
            off += 1
    if not channels:
        raise PgmParseError("empty PGM file", 0)
    shapes = {c.shape for c in channels}
    if len(shapes) != 1:
        raise PgmParseError(f"inconsistent block shapes {sorted(shapes)}", 0)
    return np.stack(channels)


def probabilities_to_bytes(probs):
    return np.rint(np.clip(probs, 0.0, 1.0) * 255.0).astype(np.uint8)


def bytes_to_probabilities(raw):
    return raw.astype(np.float64) / 255.0


def save_image(path, image):
    write_pgm_stack(path, probabilities_to_bytes(image))


def load_image(path):
    return bytes_to_probabilities(read_pgm_stack(path))


def save_mask(path, mask):
    write_pgm_stack(path, np.asarray(mask, dtype=np.uint8)[None])


def load_mask(path, classes):
    raw = read_pgm_stack(path)
    if raw.shape[0] != 1:
        raise ValidationError(f"label mask {path} has {raw.shape[0]} channels")
    mask = raw[0].astype(np.int64)
    bad = (mask >= classes) & (mask != IGNORE_LABEL)
    if bad.any():
        value = int(mask[bad][0])
        raise ValidationError(
            f"label mask {path} holds value {value} >= {classes} classes"
        )
    return mask


def save_boundaries(path, bits):
    write_pgm_stack(path, np.asarray(bits, dtype=np.uint8) * 255)


def load_boundaries(path):
    return (read_pgm_stack(path) >= 128).astype(np.uint8)


# ---------------------------------------------------------------------------
# dataset directories


def save_dataset(directory, samples, classes):
    """Write samples plus a manifest (JSON list of per-sample file entries)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for sample in samples:
        names = {
            "image": f"{sample.id}_image.pgm",
            "mask": f"{sample.id}_mask.pgm",
            "boundaries": f"{sample.id}_boundaries.pgm",
        }
        save_image(directory / names["image"], sample.image)
        save_mask(directory / names["mask"], sample.mask)
        save_boundaries(directory / names["boundaries"], sample.boundaries)
        entries.append({"id": sample.id, "classes": classes, **names})
    entries.sort(key=lambda e: e["id"])
    with open(directory / "manifest.json", "w") as fh:
        json.dump(entries, fh, indent=1)
        fh.write("\n")


def load_manifest(directory):
    """Manifest entries in deterministic (lexicographic by id) order."""
    directory = Path(directory)
    path = directory / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no manifest.json under {directory}")
    with open(path) as fh:
        entries = json.load(fh)
    if not isinstance(entries, list):
        raise ValidationError(f"manifest {path} is not a JSON list")
    return sorted(entries, key=lambda e: e["id"])


def load_dataset(directory):
    """Load every sample referenced by the manifest, sorted by id."""
    directory = Path(directory)
    samples = []
    for entry in load_manifest(directory):
        classes = int(entry["classes"])
        samples.append(
            SampleRecord(
                id=entry["id"],
                image=load_image(directory / entry["image"]),
                mask=load_mask(directory / entry["mask"], classes),
                boundaries=load_boundaries(directory / entry["boundaries"]),
            )
        )
    return samples
