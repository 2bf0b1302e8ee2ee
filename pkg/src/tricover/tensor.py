"""Dense tensors with validated shapes and finite entries."""

from __future__ import annotations

import numpy as np

from .errors import NumericError, ShapeError


class Tensor:
    """Immutable dense row-major array of finite real numbers.

    Construction rejects NaN/Inf values, non-positive dimensions, and
    shape/length mismatches. Values are held as float64.
    """

    __slots__ = ("_array",)

    def __init__(self, values, shape=None):
        arr = np.array(values, dtype=np.float64)
        if shape is not None:
            shape = tuple(int(d) for d in shape)
            if arr.size != int(np.prod(shape)):
                raise ShapeError(
                    f"cannot view {arr.size} values as shape {shape}"
                )
            arr = arr.reshape(shape)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if any(d <= 0 for d in arr.shape):
            raise ShapeError(f"non-positive dimension in shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor values must be finite (no NaN/Inf)")
        arr.flags.writeable = False
        self._array = arr

    @property
    def shape(self) -> tuple[int, ...]:
        return self._array.shape

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the values."""
        return self._array.reshape(-1)

    def as_array(self) -> np.ndarray:
        """Read-only ndarray of the stored shape."""
        return self._array

    def __len__(self) -> int:
        return self._array.size

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Tensor)
            and self.shape == other.shape
            and np.array_equal(self._array, other._array)
        )

    def __hash__(self):
        return hash((self.shape, self._array.tobytes()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


def as_tensor(values) -> Tensor:
    """Coerce an array-like (or pass a Tensor through) with validation."""
    if isinstance(values, Tensor):
        return values
    return Tensor(values)
