"""
Linear degradation operators A with forward and transpose application, the measurement-noise
model y = A x0 + sigma_y * n, and dense-matrix construction for small oracles.
"""
from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from typing import Sequence

import numpy as np
from scipy import signal

from dpps_restore.errors import CapExceededError, InvalidRangeError, ShapeMismatchError
from dpps_restore.fields import SignalField, check_shape

logger = logging.getLogger(__name__)

DEFAULT_DENSE_CAP = 10**6
_PAD_MODES = {"reflect": "symmetric", "zero": "constant", "wrap": "wrap"}


class LinearOperator(ABC):
    """A: R^input_shape -> R^output_shape with its adjoint."""

    def __init__(self, input_shape: Sequence[int], output_shape: Sequence[int]):
        self.input_shape = tuple(int(size) for size in input_shape)
        self.output_shape = tuple(int(size) for size in output_shape)

    @abstractmethod
    def _forward(self, x: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def _adjoint(self, u: np.ndarray) -> np.ndarray: ...

    def apply(self, x: SignalField) -> SignalField:
        x = np.asarray(x, dtype=np.float64)
        check_shape(x, self.input_shape, "x")
        return self._forward(x)

    def apply_transpose(self, u: SignalField) -> SignalField:
        u = np.asarray(u, dtype=np.float64)
        check_shape(u, self.output_shape, "u")
        return self._adjoint(u)

    @property
    def input_size(self) -> int:
        return int(np.prod(self.input_shape))

    @property
    def output_size(self) -> int:
        return int(np.prod(self.output_shape))

    def __matmul__(self, inner: "LinearOperator") -> "CompositeOperator":
        return CompositeOperator(self, inner)

    @property
    def T(self) -> "LinearOperator":  # pylint: disable=invalid-name
        return TransposeOperator(self)


class IdentityOperator(LinearOperator):
    def __init__(self, shape: Sequence[int]):
        super().__init__(shape, shape)

    def _forward(self, x: np.ndarray) -> np.ndarray:
        return x.copy()

    def _adjoint(self, u: np.ndarray) -> np.ndarray:
        return u.copy()


class MaskOperator(LinearOperator):
    """
    Inpainting: keeps the entries where `mask` is true, in compact form (output length equals
    the number of kept entries, C-order). A mask over [H, W] applied to an [H, W, C] input is
    broadcast jointly over the channels.
    """

    def __init__(self, mask: np.ndarray, input_shape: Sequence[int] | None = None):
        mask = np.asarray(mask, dtype=bool)
        input_shape = tuple(mask.shape) if input_shape is None else tuple(int(size) for size in input_shape)
        if tuple(input_shape[: mask.ndim]) != tuple(mask.shape):
            raise ShapeMismatchError(f"Máscara com shape {mask.shape} incompatível com entrada {input_shape}.")
        full_mask = np.broadcast_to(mask.reshape(mask.shape + (1,) * (len(input_shape) - mask.ndim)), input_shape)
        if not full_mask.any():
            raise InvalidRangeError("Máscara não mantém nenhum pixel.")
        self.mask = mask
        self._kept = np.flatnonzero(full_mask)
        super().__init__(input_shape, (self._kept.size,))

    @property
    def kept_fraction(self) -> float:
        return float(self.mask.mean())

    def _forward(self, x: np.ndarray) -> np.ndarray:
        return x.ravel()[self._kept]

    def _adjoint(self, u: np.ndarray) -> np.ndarray:
        scattered = np.zeros(self.input_size)
        scattered[self._kept] = u
        return scattered.reshape(self.input_shape)


class ConvolutionOperator(LinearOperator):
    """
    2D blur with an odd-sided kernel normalized to sum 1, applied per channel. The boundary is
    handled by padding (reflect = half-sample symmetric); the adjoint is the full convolution
    with the kernel folded back through the padding index map, so it matches the dense matrix.
    """

    def __init__(self, kernel: np.ndarray, input_shape: Sequence[int], boundary: str = "reflect"):
        kernel = np.asarray(kernel, dtype=np.float64)
        if kernel.ndim != 2 or kernel.shape[0] % 2 == 0 or kernel.shape[1] % 2 == 0:
            raise InvalidRangeError(f"Kernel deve ser 2D com lados ímpares (recebido {kernel.shape}).")
        total = float(kernel.sum())
        if total <= 0.0:
            raise InvalidRangeError("Kernel deve ter soma positiva.")
        if boundary not in _PAD_MODES:
            raise InvalidRangeError(f"Fronteira '{boundary}' inválida. Opções: {sorted(_PAD_MODES)}.")
        input_shape = tuple(int(size) for size in input_shape)
        if len(input_shape) not in (2, 3):
            raise ShapeMismatchError(f"Convolução requer entrada [H, W] ou [H, W, C] (recebido {input_shape}).")
        super().__init__(input_shape, input_shape)
        self.kernel = kernel / total
        self.boundary = boundary
        height, width = input_shape[:2]
        self._pad = ((kernel.shape[0] // 2,) * 2, (kernel.shape[1] // 2,) * 2)
        self._padded_index = self._padding_index_map(height, width)

    def _padding_index_map(self, height: int, width: int) -> np.ndarray:
        pixel_index = np.arange(height * width).reshape(height, width)
        if self.boundary == "zero":
            return np.pad(pixel_index, self._pad, mode="constant", constant_values=-1)
        return np.pad(pixel_index, self._pad, mode=_PAD_MODES[self.boundary])

    def _channels(self, field: np.ndarray) -> list[np.ndarray]:
        return [field] if field.ndim == 2 else [field[..., channel] for channel in range(field.shape[2])]

    def _stack(self, planes: list[np.ndarray]) -> np.ndarray:
        return planes[0] if len(self.input_shape) == 2 else np.stack(planes, axis=-1)

    def _pad_plane(self, plane: np.ndarray) -> np.ndarray:
        padded = plane.ravel()[np.maximum(self._padded_index, 0)]
        if self.boundary == "zero":
            padded = np.where(self._padded_index >= 0, padded, 0.0)
        return padded

    def _fold_plane(self, padded: np.ndarray) -> np.ndarray:
        valid = self._padded_index >= 0
        folded = np.bincount(
            self._padded_index[valid], weights=padded[valid], minlength=self.input_shape[0] * self.input_shape[1]
        )
        return folded.reshape(self.input_shape[:2])

    def _forward(self, x: np.ndarray) -> np.ndarray:
        return self._stack(
            [signal.correlate2d(self._pad_plane(plane), self.kernel, mode="valid") for plane in self._channels(x)]
        )

    def _adjoint(self, u: np.ndarray) -> np.ndarray:
        return self._stack(
            [self._fold_plane(signal.convolve2d(plane, self.kernel, mode="full")) for plane in self._channels(u)]
        )


class DownsampleOperator(LinearOperator):
    """Block-average downsampling by an integer factor on the spatial axes (1D: the only axis)."""

    def __init__(self, factor: int, input_shape: Sequence[int]):
        if int(factor) != factor or factor < 1:
            raise InvalidRangeError(f"Fator de downsampling deve ser inteiro positivo (recebido {factor}).")
        input_shape = tuple(int(size) for size in input_shape)
        spatial_axes = 1 if len(input_shape) == 1 else 2
        if any(size % factor for size in input_shape[:spatial_axes]):
            raise ShapeMismatchError(f"Dimensões {input_shape} não são divisíveis pelo fator {factor}.")
        output_shape = tuple(size // factor for size in input_shape[:spatial_axes]) + input_shape[spatial_axes:]
        super().__init__(input_shape, output_shape)
        self.factor = int(factor)
        self._spatial_axes = spatial_axes

    def _forward(self, x: np.ndarray) -> np.ndarray:
        f = self.factor
        if self._spatial_axes == 1:
            return x.reshape(-1, f).mean(axis=1)
        height, width = self.output_shape[:2]
        return x.reshape((height, f, width, f) + self.input_shape[2:]).mean(axis=(1, 3))

    def _adjoint(self, u: np.ndarray) -> np.ndarray:
        f = self.factor
        replicated = np.repeat(u, f, axis=0)
        if self._spatial_axes == 2:
            replicated = np.repeat(replicated, f, axis=1)
        return replicated / f**self._spatial_axes


class CompositeOperator(LinearOperator):
    """outer(inner(x))."""

    def __init__(self, outer: LinearOperator, inner: LinearOperator):
        if outer.input_shape != inner.output_shape:
            raise ShapeMismatchError(
                f"Composição inválida: saída interna {inner.output_shape} != entrada externa {outer.input_shape}."
            )
        super().__init__(inner.input_shape, outer.output_shape)
        self.outer = outer
        self.inner = inner

    def _forward(self, x: np.ndarray) -> np.ndarray:
        return self.outer.apply(self.inner.apply(x))

    def _adjoint(self, u: np.ndarray) -> np.ndarray:
        return self.inner.apply_transpose(self.outer.apply_transpose(u))


class TransposeOperator(LinearOperator):
    def __init__(self, base: LinearOperator):
        super().__init__(base.output_shape, base.input_shape)
        self.base = base

    def _forward(self, x: np.ndarray) -> np.ndarray:
        return self.base.apply_transpose(x)

    def _adjoint(self, u: np.ndarray) -> np.ndarray:
        return self.base.apply(u)


def measure(A: LinearOperator, x0: SignalField, sigma_y: float, rng: np.random.Generator) -> SignalField:
    """y = A x0 + sigma_y * n, n ~ N(0, I). sigma_y is a standard deviation."""
    if sigma_y < 0.0:
        raise InvalidRangeError(f"sigma_y deve ser >= 0 (recebido {sigma_y}).")
    clean = A.apply(x0)
    return clean + sigma_y * rng.standard_normal(clean.shape)


def dense_matrix(A: LinearOperator, cap: int = DEFAULT_DENSE_CAP) -> np.ndarray:
    """(n x d) matrix whose j-th column is A applied to the j-th canonical basis vector."""
    entries = A.input_size * A.output_size
    if entries > cap:
        raise CapExceededError(f"Matriz densa com {entries} entradas excede o limite de {cap}.")
    matrix = np.empty((A.output_size, A.input_size))
    basis_vector = np.zeros(A.input_size)
    for column in range(A.input_size):
        basis_vector[column] = 1.0
        matrix[:, column] = A.apply(basis_vector.reshape(A.input_shape)).ravel()
        basis_vector[column] = 0.0
    return matrix


def gaussian_kernel(size: int, std: float) -> np.ndarray:
    if size % 2 == 0 or size < 1:
        raise InvalidRangeError(f"Tamanho do kernel deve ser ímpar e positivo (recebido {size}).")
    if std <= 0.0:
        raise InvalidRangeError(f"Desvio padrão do kernel deve ser positivo (recebido {std}).")
    offsets = np.arange(size) - size // 2
    profile = np.exp(-(offsets**2) / (2.0 * std**2))
    kernel = np.outer(profile, profile)
    return kernel / kernel.sum()


def box_kernel(size: int) -> np.ndarray:
    if size % 2 == 0 or size < 1:
        raise InvalidRangeError(f"Tamanho do kernel deve ser ímpar e positivo (recebido {size}).")
    return np.full((size, size), 1.0 / size**2)


def motion_kernel(length: int) -> np.ndarray:
    """Horizontal line kernel of odd length."""
    if length % 2 == 0 or length < 1:
        raise InvalidRangeError(f"Comprimento do kernel de movimento deve ser ímpar (recebido {length}).")
    return np.full((1, length), 1.0 / length)


def random_mask(shape: Sequence[int], drop_fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Bernoulli mask keeping each pixel with probability 1 - drop_fraction; never empty."""
    if not 0.0 <= drop_fraction < 1.0:
        raise InvalidRangeError(f"drop_fraction deve estar em [0, 1) (recebido {drop_fraction}).")
    mask = rng.random(tuple(shape)) >= drop_fraction
    if not mask.any():
        mask.flat[int(rng.integers(mask.size))] = True
    return mask
