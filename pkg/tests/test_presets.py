"""Testes unitários dos presets de problemas de restauração."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from dpps_restore.catalog.presets import (
    PRESET_NAMES,
    ProblemSource,
    alternating_mask,
    build_problem,
    gmm_component_means,
    squared_exponential_covariance,
)
from dpps_restore.errors import InvalidRangeError, ShapeMismatchError
from dpps_restore.operators import IdentityOperator, MaskOperator


@pytest.mark.parametrize("name", PRESET_NAMES)
def test_every_preset_builds_a_consistent_problem(name):
    """Cada preset gera prior, operador, x0 e y com shapes compatíveis."""
    problem = build_problem(name, seed=0)
    assert problem.x0.shape == problem.shape == problem.operator.input_shape
    assert problem.y.shape == problem.operator.output_shape
    assert problem.sigma_y == 0.01
    assert np.all(np.isfinite(problem.y))


def test_problem_is_reproducible_per_seed():
    """Mesma seed gera mesmo x0, máscara e medição; outra seed muda tudo."""
    first = build_problem("gmm-inpaint-16", seed=3)
    second = build_problem("gmm-inpaint-16", seed=3)
    other = build_problem("gmm-inpaint-16", seed=4)
    assert np.array_equal(first.x0, second.x0)
    assert np.array_equal(first.mask, second.mask)
    assert np.array_equal(first.y, second.y)
    assert not np.array_equal(first.x0, other.x0)


def test_noiseless_measurement():
    """sigma_y = 0 dá y = A x0 exatamente."""
    problem = build_problem("gaussian-blur-16", sigma_y=0.0, seed=1)
    assert np.array_equal(problem.y, problem.operator.apply(problem.x0))


def test_inpainting_preset_drops_most_pixels():
    """O preset de inpainting remove cerca de 80% dos pixels."""
    problem = build_problem("gaussian-inpaint-16", seed=0)
    assert isinstance(problem.operator, MaskOperator)
    assert problem.mask.mean() == pytest.approx(0.2, abs=0.08)
    assert problem.y.size == int(problem.mask.sum())


def test_alternating_mask():
    """Máscara alternada mantém os índices pares."""
    assert alternating_mask((6,)).tolist() == [True, False, True, False, True, False]
    problem = build_problem("gaussian-1d-mask", seed=0)
    assert problem.y.shape == (4,)


def test_operator_overrides():
    """Overrides trocam o operador e removem a máscara alternada quando há drop_fraction."""
    identity = build_problem("gaussian-1d-mask", operator_overrides={"kind": "identity"})
    assert isinstance(identity.operator, IdentityOperator)
    assert identity.y.shape == identity.x0.shape

    random = build_problem("gaussian-1d-mask", operator_overrides={"drop_fraction": 0.5, "kind": None})
    assert "alternating" not in random.settings["operator_params"]

    downsample = build_problem("gaussian-sr4-16", operator_overrides={"factor": 2})
    assert downsample.y.shape == (8, 8)


def test_prior_overrides_and_size():
    """Overrides de prior e tamanho alteram a construção do problema."""
    problem = build_problem("gaussian-inpaint-16", size=8, prior_overrides={"mean": 0.3, "amplitude": None})
    assert problem.shape == (8, 8)
    assert_allclose(problem.prior.mean, np.full((8, 8), 0.3))
    assert problem.settings["prior_params"]["amplitude"] == 0.2


def test_reference_signal_replaces_prior_draw():
    """Uma referência fornecida vira x0 e fixa o tamanho."""
    reference = np.linspace(0.0, 1.0, 64).reshape(8, 8)
    problem = build_problem("gmm-inpaint-16", x0=reference, seed=2)
    assert np.array_equal(problem.x0, reference)
    assert problem.shape == (8, 8)
    with pytest.raises(ShapeMismatchError):
        build_problem("gmm-inpaint-16", x0=np.zeros((4, 6)))
    with pytest.raises(ShapeMismatchError):
        build_problem("gmm-inpaint-16", x0=np.zeros(16))


def test_supplied_mask_is_used():
    """Uma máscara fornecida substitui a máscara aleatória."""
    mask = np.zeros((16, 16), dtype=bool)
    mask[::2, ::2] = True
    problem = build_problem("gaussian-inpaint-16", mask=mask)
    assert np.array_equal(problem.mask, mask)
    assert problem.y.size == 64


def test_invalid_preset_configurations():
    """Preset desconhecido ou blur em sinal 1D são rejeitados."""
    with pytest.raises(InvalidRangeError):
        build_problem("celeba-256")
    with pytest.raises(ShapeMismatchError):
        build_problem("gaussian-1d-mask", operator_overrides={"kind": "blur"})


def test_squared_exponential_covariance():
    """Covariância SE é simétrica, positiva definida e tem diagonal amplitude^2 + jitter."""
    covariance = squared_exponential_covariance((4, 4), 0.2, 2.0, 1e-4)
    assert covariance.shape == (16, 16)
    assert np.array_equal(covariance, covariance.T)
    assert_allclose(np.diag(covariance), 0.04 + 1e-4)
    assert np.linalg.eigvalsh(covariance).min() > 0.0


def test_gmm_component_means_stay_in_range():
    """As médias dos componentes ficam em [0.2, 0.8]."""
    for mean in gmm_component_means(16):
        assert mean.shape == (16, 16)
        assert mean.min() >= 0.2 - 1e-12
        assert mean.max() <= 0.8 + 1e-12


def test_problem_source_pairs_by_seed():
    """ProblemSource reconstrói o mesmo problema por seed e aceita sigma_y por chamada."""
    source = ProblemSource("gaussian-1d-mask", sigma_y=0.05)
    assert np.array_equal(source.build(5).y, source.build(5).y)
    assert source.build(5).sigma_y == 0.05
    noiseless = source.build(5, sigma_y=0.0)
    assert np.array_equal(noiseless.y, noiseless.operator.apply(noiseless.x0))
    assert np.array_equal(noiseless.x0, source.build(5).x0)
