import pytest

from dsmhn.gradcheck import TinyDims, run_gradcheck
from dsmhn.objective import LOSS_KINDS


@pytest.mark.parametrize("kind", LOSS_KINDS)
def test_exact_gradients_pass(kind):
    result = run_gradcheck(kind)
    assert result.passed, result.line()
    assert len(result.checks) == 16


@pytest.mark.parametrize("kind", LOSS_KINDS)
def test_pairwise_term_alone(kind):
    assert run_gradcheck(kind, alpha=0.0, beta=0.0, gamma=0.0, seed=3).passed


@pytest.mark.parametrize("seed", [1, 2])
def test_other_seeds_and_shapes(seed):
    dims = TinyDims(d_x=7, d_y=3, hidden=6, code_length=5, num_classes=2, batch=4)
    assert run_gradcheck("contrastive", seed=seed, dims=dims).passed


def test_corrupt_gradient_fails():
    result = run_gradcheck("l2", variant="corrupt")
    assert not result.passed
    assert result.line().startswith("FAIL")


@pytest.mark.parametrize("variant, kind", [
    ("printed_l1", "l1"),
    ("printed_class_delta", "l2"),
    ("printed_hash_delta", "l2"),
])
def test_printed_formulas_fail(variant, kind):
    assert not run_gradcheck(kind, variant=variant).passed


def test_printed_l1_only_for_l1():
    with pytest.raises(ValueError):
        run_gradcheck("l2", variant="printed_l1")
