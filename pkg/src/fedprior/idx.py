"""Reader for the IDX binary image/label format (big-endian headers,
magic 0x00000803 for image tensors and 0x00000801 for label vectors)."""

import struct

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Malformed IDX payload; the message names the failing byte offset."""


def _read_exact(f, count, offset, what):
    data = f.read(count)
    if len(data) != count:
        raise IdxFormatError(f"truncated {what}: wanted {count} bytes at byte "
                             f"offset {offset}, got {len(data)}")
    return data


def _read_header(f, magic, dims, what):
    head = _read_exact(f, 4 * (1 + dims), 0, f"{what} header")
    fields = struct.unpack(f">{1 + dims}I", head)
    if fields[0] != magic:
        raise IdxFormatError(f"bad {what} magic 0x{fields[0]:08x} at byte offset 0 "
                             f"(expected 0x{magic:08x})")
    return fields[1:], 4 * (1 + dims)


def read_idx_images(path):
    """(count, rows*cols) float64 array scaled into [0, 1]."""
    with open(path, "rb") as f:
        (count, rows, cols), offset = _read_header(f, IMAGE_MAGIC, 3, "image")
        payload = _read_exact(f, count * rows * cols, offset, "image payload")
    pixels = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    return pixels.reshape(count, rows * cols)


def read_idx_labels(path):
    with open(path, "rb") as f:
        (count,), offset = _read_header(f, LABEL_MAGIC, 1, "label")
        payload = _read_exact(f, count, offset, "label payload")
    return np.frombuffer(payload, dtype=np.uint8).astype(np.int64)


def load_idx_dataset(images_path, labels_path, num_classes=None):
    """Per-class example pools from a matched image/label file pair.

    Returns a list of (n_k, d) arrays indexed by class. When ``num_classes``
    is given, any label at or above it is a range error; otherwise the class
    count is inferred as max label + 1.
    """
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(f"count mismatch: {images.shape[0]} images vs "
                             f"{labels.shape[0]} labels")
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 0
    bad = np.flatnonzero(labels >= num_classes)
    if bad.size:
        raise IdxFormatError(f"label {labels[bad[0]]} at index {bad[0]} out of "
                             f"range for {num_classes} classes")
    pools = [images[labels == k] for k in range(num_classes)]
    empty = [k for k, p in enumerate(pools) if p.shape[0] == 0]
    if empty:
        raise IdxFormatError(f"no examples for classes {empty}")
    return pools
