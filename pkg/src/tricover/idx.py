"""Reading and writing IDX files (the MNIST container format).

Only the unsigned-byte element type is supported: image files carry a
(count, rows, cols) u8 tensor under magic 0x00000803, label files a
(count,) u8 vector under magic 0x00000801. All integers are big-endian.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DatasetError

_DTYPE_U8 = 0x08


def load_idx(path) -> np.ndarray:
    """Read an IDX file into a uint8 array of the declared shape."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise DatasetError(f"{path}: too short to be an IDX file")
    zero0, zero1, dtype_code, ndim = struct.unpack_from(">BBBB", raw, 0)
    if zero0 != 0 or zero1 != 0:
        raise DatasetError(f"{path}: bad IDX magic {raw[:4].hex()}")
    if dtype_code != _DTYPE_U8:
        raise DatasetError(f"{path}: unsupported IDX element type 0x{dtype_code:02x} "
                           "(only unsigned byte, 0x08, is supported)")
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise DatasetError(f"{path}: truncated IDX header")
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    count = int(np.prod(dims)) if dims else 0
    if len(raw) - header_len != count:
        raise DatasetError(f"{path}: expected {count} data bytes for shape {dims}, "
                           f"found {len(raw) - header_len}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header_len).reshape(dims).copy()


def save_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as an IDX file."""
    arr = np.ascontiguousarray(array, dtype=np.uint8)
    if arr.ndim < 1 or arr.ndim > 255:
        raise DatasetError(f"cannot encode a {arr.ndim}-D array as IDX")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">BBBB", 0, 0, _DTYPE_U8, arr.ndim))
        for d in arr.shape:
            fh.write(struct.pack(">I", d))
        fh.write(arr.tobytes())


@dataclass
class Dataset:
    """A labelled (or unlabelled) image set loaded from IDX files.

    ``images`` is (count, rows, cols) uint8; ``labels``, when present,
    is (count,) uint8 aligned with the images.
    """

    images: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.images.ndim != 3:
            raise DatasetError(f"images must be (count, rows, cols), got shape "
                               f"{self.images.shape}")
        if self.labels is not None:
            if self.labels.ndim != 1:
                raise DatasetError(f"labels must be 1-D, got shape {self.labels.shape}")
            if len(self.labels) != len(self.images):
                raise DatasetError(f"{len(self.images)} images but "
                                   f"{len(self.labels)} labels")

    @classmethod
    def load(cls, images_path, labels_path=None) -> "Dataset":
        images = load_idx(images_path)
        if images.ndim != 3:
            raise DatasetError(f"{images_path}: expected a 3-D image tensor, "
                               f"got shape {images.shape}")
        labels = None
        if labels_path is not None:
            labels = load_idx(labels_path)
            if labels.ndim != 1:
                raise DatasetError(f"{labels_path}: expected a 1-D label vector, "
                                   f"got shape {labels.shape}")
        return cls(images=images, labels=labels)

    def __len__(self) -> int:
        return len(self.images)

    def label_for(self, index: int) -> Optional[int]:
        return int(self.labels[index]) if self.labels is not None else None

    def input_for(self, index: int, input_shape: tuple[int, ...]) -> np.ndarray:
        """Pixel values scaled to [0, 1] and arranged for a model input shape.

        Accepts (rows, cols), single-channel (1, rows, cols), or the
        flattened (rows * cols,) form.
        """
        if not (0 <= index < len(self.images)):
            raise DatasetError(f"image index {index} out of range [0, {len(self.images)})")
        img = self.images[index].astype(np.float64) / 255.0
        h, w = img.shape
        if input_shape == (h, w):
            return img
        if input_shape == (1, h, w):
            return img.reshape(1, h, w)
        if input_shape == (h * w,):
            return img.reshape(-1)
        raise DatasetError(f"cannot arrange a {h}x{w} image as model input "
                           f"shape {input_shape}")
