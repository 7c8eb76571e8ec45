"""
SignalField helpers.

A SignalField is a float64 `numpy.ndarray` whose shape is the signal shape
([d], [H, W] or [H, W, C]); its flat view is `field.ravel()`.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from dpps_restore.errors import ShapeMismatchError

SignalField = np.ndarray


def as_signal_field(values: object, shape: Sequence[int] | None = None) -> SignalField:
    field = np.asarray(values, dtype=np.float64)
    if shape is not None:
        expected_shape = tuple(int(size) for size in shape)
        if field.size != int(np.prod(expected_shape)):
            raise ShapeMismatchError(
                f"Campo com {field.size} valores não cabe no shape {expected_shape}."
            )
        field = field.reshape(expected_shape)
    return field


def check_shape(field: SignalField, expected_shape: Sequence[int], name: str = "campo") -> None:
    if tuple(field.shape) != tuple(expected_shape):
        raise ShapeMismatchError(f"{name} com shape {tuple(field.shape)}; esperado {tuple(expected_shape)}.")


def check_same_shape(first: SignalField, second: SignalField, names: tuple[str, str] = ("x", "y")) -> None:
    if first.shape != second.shape:
        raise ShapeMismatchError(
            f"Shapes incompatíveis: {names[0]}={first.shape}, {names[1]}={second.shape}."
        )


def is_finite(field: SignalField) -> bool:
    return bool(np.all(np.isfinite(field)))


def squared_norm(field: SignalField) -> float:
    flat = field.ravel()
    return float(flat @ flat)
