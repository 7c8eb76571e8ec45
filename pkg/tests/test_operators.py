"""Testes unitários dos operadores lineares de degradação."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from dpps_restore.errors import CapExceededError, InvalidRangeError, ShapeMismatchError
from dpps_restore.operators import (
    CompositeOperator,
    ConvolutionOperator,
    DownsampleOperator,
    IdentityOperator,
    MaskOperator,
    box_kernel,
    dense_matrix,
    gaussian_kernel,
    measure,
    motion_kernel,
    random_mask,
)


def _operators(rng):
    return {
        "identity": IdentityOperator((5,)),
        "mask-1d": MaskOperator(np.array([True, False, True, True, False])),
        "mask-rgb": MaskOperator(random_mask((4, 4), 0.5, rng), (4, 4, 3)),
        "blur-reflect": ConvolutionOperator(gaussian_kernel(3, 1.0), (6, 5), boundary="reflect"),
        "blur-zero": ConvolutionOperator(gaussian_kernel(5, 1.5), (6, 6), boundary="zero"),
        "blur-wrap": ConvolutionOperator(box_kernel(3), (5, 5), boundary="wrap"),
        "motion-rgb": ConvolutionOperator(motion_kernel(3), (4, 4, 3)),
        "downsample-1d": DownsampleOperator(2, (8,)),
        "downsample-2d": DownsampleOperator(2, (4, 4)),
        "composite": CompositeOperator(DownsampleOperator(2, (4, 4)), ConvolutionOperator(box_kernel(3), (4, 4))),
    }


def test_identity_operator(rng):
    """Identidade devolve a entrada e tem transposta identidade."""
    x = rng.standard_normal((3, 2))
    A = IdentityOperator((3, 2))
    assert np.array_equal(A.apply(x), x)
    assert np.array_equal(A.apply_transpose(x), x)


def test_mask_operator_compact_output():
    """Máscara {0, 2} leva [a, b, c] em [a, c] e a transposta espalha de volta com zeros."""
    A = MaskOperator(np.array([True, False, True]))
    assert np.array_equal(A.apply(np.array([4.0, 5.0, 6.0])), [4.0, 6.0])
    assert np.array_equal(A.apply_transpose(np.array([7.0, 8.0])), [7.0, 0.0, 8.0])
    assert A.output_shape == (2,)


def test_mask_operator_is_a_partial_isometry(rng):
    """A A^T = I para a máscara."""
    A = MaskOperator(random_mask((4, 4), 0.6, rng))
    matrix = dense_matrix(A)
    assert_allclose(matrix @ matrix.T, np.eye(A.output_size), atol=0.0)


def test_mask_broadcasts_over_channels(rng):
    """Máscara [H, W] em entrada [H, W, C] mantém todos os canais dos pixels mantidos."""
    mask = random_mask((4, 4), 0.5, rng)
    A = MaskOperator(mask, (4, 4, 3))
    assert A.output_size == int(mask.sum()) * 3
    assert A.kept_fraction == pytest.approx(mask.mean())


def test_mask_rejects_empty_and_mismatched_masks():
    """Máscara vazia ou com shape incompatível é rejeitada."""
    with pytest.raises(InvalidRangeError):
        MaskOperator(np.zeros(4, dtype=bool))
    with pytest.raises(ShapeMismatchError):
        MaskOperator(np.ones((2, 2), dtype=bool), (3, 3))


def test_box_blur_preserves_constant_image():
    """Blur com kernel normalizado e fronteira reflect preserva imagem constante."""
    A = ConvolutionOperator(box_kernel(3), (6, 6), boundary="reflect")
    assert_allclose(A.apply(np.full((6, 6), 0.7)), np.full((6, 6), 0.7), rtol=1e-12)


def test_zero_boundary_darkens_edges():
    """Fronteira zero reduz os cantos de uma imagem constante."""
    blurred = ConvolutionOperator(box_kernel(3), (4, 4), boundary="zero").apply(np.ones((4, 4)))
    assert blurred[0, 0] == pytest.approx(4.0 / 9.0)
    assert blurred[1, 1] == pytest.approx(1.0)


def test_convolution_rejects_invalid_kernels():
    """Kernels de lado par ou fronteiras desconhecidas são rejeitados."""
    with pytest.raises(InvalidRangeError):
        ConvolutionOperator(np.ones((2, 2)), (4, 4))
    with pytest.raises(InvalidRangeError):
        ConvolutionOperator(box_kernel(3), (4, 4), boundary="mirror")
    with pytest.raises(ShapeMismatchError):
        ConvolutionOperator(box_kernel(3), (4,))


def test_downsample_block_average_and_transpose():
    """Downsampling por média em blocos; a transposta replica cada valor dividido por f^2."""
    A = DownsampleOperator(2, (4, 4))
    x = np.arange(16, dtype=np.float64).reshape(4, 4)
    assert_allclose(A.apply(x), [[2.5, 4.5], [10.5, 12.5]])
    back = A.apply_transpose(np.array([[4.0, 8.0], [12.0, 16.0]]))
    assert_allclose(back[:2, :2], np.full((2, 2), 1.0))
    assert_allclose(back[2:, 2:], np.full((2, 2), 4.0))
    assert_allclose(dense_matrix(A.T), dense_matrix(A).T)


def test_downsample_requires_divisible_shape():
    """Dimensões não divisíveis pelo fator são rejeitadas."""
    with pytest.raises(ShapeMismatchError):
        DownsampleOperator(3, (4, 4))
    with pytest.raises(InvalidRangeError):
        DownsampleOperator(0, (4, 4))


def test_adjoint_identity_for_every_operator(rng):
    """<A x, u> = <x, A^T u> para pares aleatórios."""
    for name, A in _operators(rng).items():
        for _ in range(100):
            x = rng.standard_normal(A.input_shape)
            u = rng.standard_normal(A.output_shape)
            left = float(np.sum(A.apply(x) * u))
            right = float(np.sum(x * A.apply_transpose(u)))
            assert left == pytest.approx(right, rel=1e-10, abs=1e-10), name


def test_operators_are_linear(rng):
    """A(a x + b z) = a A x + b A z."""
    for name, A in _operators(rng).items():
        x = rng.standard_normal(A.input_shape)
        z = rng.standard_normal(A.input_shape)
        assert_allclose(A.apply(2.5 * x - 0.5 * z), 2.5 * A.apply(x) - 0.5 * A.apply(z), atol=1e-12, err_msg=name)


def test_dense_matrix_transpose_consistency(rng):
    """dense_matrix(A^T) = dense_matrix(A)^T para todos os operadores."""
    for name, A in _operators(rng).items():
        assert_allclose(dense_matrix(A.T), dense_matrix(A).T, atol=1e-14, err_msg=name)


def test_dense_matrix_of_identity_and_mask():
    """Identidade vira I; máscara {0, 2} em R^3 vira as linhas e0 e e2."""
    assert np.array_equal(dense_matrix(IdentityOperator((3,))), np.eye(3))
    assert np.array_equal(dense_matrix(MaskOperator(np.array([True, False, True]))), [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


def test_composite_matches_matrix_product():
    """A matriz da composição é o produto das matrizes."""
    blur = ConvolutionOperator(gaussian_kernel(3, 1.0), (4, 4))
    downsample = DownsampleOperator(2, (4, 4))
    composite = downsample @ blur
    assert_allclose(dense_matrix(composite), dense_matrix(downsample) @ dense_matrix(blur), atol=1e-14)


def test_composite_rejects_incompatible_shapes():
    """Composição com shapes incompatíveis levanta ShapeMismatchError."""
    with pytest.raises(ShapeMismatchError):
        CompositeOperator(DownsampleOperator(2, (4, 4)), IdentityOperator((3, 3)))


def test_dense_matrix_cap():
    """Matrizes acima do limite levantam CapExceededError."""
    with pytest.raises(CapExceededError):
        dense_matrix(IdentityOperator((16, 16)), cap=1000)


def test_measure_without_noise_is_exact(rng):
    """sigma_y = 0 devolve A x0 exatamente."""
    A = DownsampleOperator(2, (4, 4))
    x0 = rng.standard_normal((4, 4))
    assert np.array_equal(measure(A, x0, 0.0, np.random.default_rng(0)), A.apply(x0))


def test_measure_is_reproducible_and_validates_sigma(rng):
    """Mesma seed gera a mesma medição; sigma_y negativo é rejeitado."""
    A = IdentityOperator((5,))
    x0 = rng.standard_normal(5)
    first = measure(A, x0, 0.1, np.random.default_rng(3))
    second = measure(A, x0, 0.1, np.random.default_rng(3))
    assert np.array_equal(first, second)
    with pytest.raises(InvalidRangeError):
        measure(A, x0, -0.1, np.random.default_rng(3))


def test_apply_rejects_wrong_shape():
    """Entradas com shape errado levantam ShapeMismatchError."""
    A = DownsampleOperator(2, (4, 4))
    with pytest.raises(ShapeMismatchError):
        A.apply(np.zeros((2, 2)))
    with pytest.raises(ShapeMismatchError):
        A.apply_transpose(np.zeros((4, 4)))


def test_kernels_are_normalized():
    """Kernels gaussiano, box e de movimento somam 1."""
    for kernel in (gaussian_kernel(5, 1.0), box_kernel(3), motion_kernel(5)):
        assert kernel.sum() == pytest.approx(1.0, abs=1e-12)
    assert motion_kernel(5).shape == (1, 5)
    with pytest.raises(InvalidRangeError):
        gaussian_kernel(4, 1.0)


def test_random_mask_fraction_and_never_empty():
    """Máscara aleatória mantém aproximadamente 1 - drop_fraction e nunca fica vazia."""
    mask = random_mask((100, 100), 0.8, np.random.default_rng(0))
    assert mask.mean() == pytest.approx(0.2, abs=0.02)
    assert random_mask((1,), 0.999, np.random.default_rng(0)).sum() == 1
    with pytest.raises(InvalidRangeError):
        random_mask((4,), 1.0, np.random.default_rng(0))
