"""Distortion metrics against a reference signal."""
from __future__ import annotations

import math

import numpy as np

from dpps_restore.errors import InvalidRangeError
from dpps_restore.fields import SignalField, check_same_shape

PSNR_IDENTICAL = math.inf


def mse(x: SignalField, ref: SignalField) -> float:
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    check_same_shape(x, ref, ("x", "ref"))
    return float(np.mean(np.square(x - ref)))


def psnr(x: SignalField, ref: SignalField, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE); `PSNR_IDENTICAL` (+inf) when the signals coincide."""
    if peak <= 0.0:
        raise InvalidRangeError(f"peak deve ser positivo (recebido {peak}).")
    error = mse(x, ref)
    if error == 0.0:
        return PSNR_IDENTICAL
    return float(10.0 * np.log10(peak**2 / error))
