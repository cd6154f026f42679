import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from learngene_pool import numerics as nx
from learngene_pool.numerics import (
    GradientError,
    NonDeterministicError,
    NumericError,
    ShapeError,
    Tensor,
    finite_diff_check,
    least_squares_solve,
    precision,
)
from learngene_pool.verify import OP_CASES, TOLERANCE, check_op, check_vit_cross_entropy

seeds = st.integers(min_value=0, max_value=2**31 - 1)


# ---------------------------------------------------------------- forward values


def test_matmul_identity_returns_operand():
    a = np.random.default_rng(0).normal(size=(3, 3))
    out = nx.matmul(Tensor(np.eye(3)), Tensor(a))
    np.testing.assert_array_equal(out.data, a.astype(np.float32))


@given(seeds)
def test_softmax_rows_sum_to_one(seed):
    x = np.random.default_rng(seed).normal(scale=5.0, size=(4, 7))
    s = nx.softmax(Tensor(x)).data
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-6)


@given(seeds)
def test_layer_norm_standardises_features(seed):
    x = np.random.default_rng(seed).normal(loc=3.0, scale=2.0, size=(5, 16))
    with precision(np.float64):
        y = nx.layer_norm(Tensor(x), eps=1e-12).data
    np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-5)
    np.testing.assert_allclose(y.var(axis=-1), 1.0, atol=1e-4)


def test_gelu_matches_erf_definition():
    from scipy.special import erf

    x = np.linspace(-4, 4, 33)
    with precision(np.float64):
        y = nx.gelu(Tensor(x)).data
    np.testing.assert_allclose(y, 0.5 * x * (1 + erf(x / np.sqrt(2))), rtol=1e-14, atol=1e-15)


def test_default_precision_is_32_bit_and_switch_is_scoped():
    assert Tensor([1.0]).dtype == np.float32
    with precision(np.float64):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32


# ---------------------------------------------------------------- error paths


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(3, 2\)"):
        nx.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))


def test_no_implicit_broadcasting():
    with pytest.raises(ShapeError):
        nx.mul(Tensor(np.zeros((2, 3))), Tensor(np.zeros(3)))
    out = nx.broadcast_to(Tensor(np.ones(3)), (2, 3))
    assert out.shape == (2, 3)


def test_non_finite_output_raises():
    with pytest.raises(NumericError):
        nx.exp(Tensor([1000.0]))
    with pytest.raises(NumericError):
        nx.log(Tensor([0.0]))


def test_backward_requires_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(GradientError, match="scalar"):
        (x * 2.0).backward()


def test_repeated_backward_raises():
    x = Tensor(np.ones(3), requires_grad=True)
    loss = nx.sum_(nx.square(x))
    loss.backward()
    with pytest.raises(GradientError):
        loss.backward()


# ---------------------------------------------------------------- gradients, closed forms


def test_linear_gradient_is_input_outer_structure():
    rng = np.random.default_rng(1)
    with precision(np.float64):
        W = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        x = Tensor(rng.normal(size=(5, 4)))
        nx.sum_(nx.matmul(x, W)).backward()
    np.testing.assert_allclose(W.grad, np.repeat(x.data.sum(axis=0)[:, None], 3, axis=1))


def test_mse_gradient_closed_form():
    rng = np.random.default_rng(2)
    with precision(np.float64):
        a = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
        b = Tensor(rng.normal(size=(3, 5)))
        nx.mse(a, b).backward()
    np.testing.assert_allclose(a.grad, 2 * (a.data - b.data) / a.data.size, rtol=1e-12)


def test_non_participating_leaf_gets_no_gradient():
    with precision(np.float64):
        used = Tensor(np.ones(3), requires_grad=True)
        unused = Tensor(np.ones(3), requires_grad=True)
        nx.sum_(used).backward()
    np.testing.assert_array_equal(unused.grad_or_zeros(), 0.0)


def test_shared_subexpression_accumulates():
    with precision(np.float64):
        x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
        y = nx.mul(x, x)
        nx.sum_(nx.add(y, y)).backward()
    np.testing.assert_allclose(x.grad, 4 * x.data)


# ---------------------------------------------------------------- finite differences


@pytest.mark.parametrize("op", sorted(OP_CASES))
def test_every_op_passes_finite_differences_over_20_seeds(op):
    worst = max(check_op(op, seed) for seed in range(20))
    assert worst < TOLERANCE, f"{op}: {worst:.3e}"


@settings(max_examples=20)
@given(seeds)
def test_gelu_and_layer_norm_gradients_random_seeds(seed):
    assert check_op("gelu", seed) < TOLERANCE
    assert check_op("layer_norm", seed) < TOLERANCE


def test_sum_of_squares_is_exact():
    x = Tensor(np.random.default_rng(3).normal(size=(4, 3)))
    assert finite_diff_check(lambda t: nx.sum_(nx.square(t)), x) < 1e-7


def test_constant_function_has_zero_gradient():
    x = Tensor(np.random.default_rng(4).normal(size=5))
    const = Tensor(np.float64(3.0))

    def f(t):
        return nx.add(nx.scale(nx.sum_(t), 0.0), const)

    with precision(np.float64):
        leaf = Tensor(x.data, requires_grad=True, dtype=np.float64)
        f(leaf).backward()
    np.testing.assert_allclose(leaf.grad, 0.0, atol=1e-9)
    assert finite_diff_check(f, x) < 1e-4


def test_full_vit_cross_entropy_gradient():
    assert check_vit_cross_entropy(seed=0) < TOLERANCE


def test_nondeterministic_function_is_rejected():
    rng = np.random.default_rng(0)

    def f(t):
        return nx.sum_(nx.mul(t, Tensor(rng.normal(size=t.shape), dtype=np.float64)))

    with pytest.raises(NonDeterministicError):
        finite_diff_check(f, Tensor(np.ones(3)))


def test_gradcheck_refuses_32_bit_leaves():
    from learngene_pool.numerics import check_params

    p = Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(GradientError):
        check_params(lambda: nx.sum_(p), [p])


# ---------------------------------------------------------------- least squares


def test_lstsq_recovers_planted_solution():
    rng = np.random.default_rng(5)
    A = rng.normal(size=(64, 8))
    X = rng.normal(size=(8, 4))
    res = least_squares_solve(A, A @ X)
    assert not res.rank_deficient and res.rank == 8
    np.testing.assert_allclose(res.solution, X, atol=1e-6)


def test_lstsq_identity_and_zero_cases():
    B = np.random.default_rng(6).normal(size=(5, 3))
    np.testing.assert_allclose(least_squares_solve(np.eye(5), B).solution, B, atol=1e-12)
    np.testing.assert_array_equal(least_squares_solve(np.random.default_rng(7).normal(size=(6, 3)),
                                                      np.zeros((6, 2))).solution, 0.0)


def test_lstsq_rank_deficient_gives_min_norm_and_flag():
    rng = np.random.default_rng(8)
    base = rng.normal(size=(20, 2))
    A = np.concatenate([base, base[:, :1]], axis=1)  # third column repeats the first
    B = rng.normal(size=(20, 2))
    res = least_squares_solve(A, B)
    assert res.rank_deficient and res.rank == 2
    np.testing.assert_allclose(res.solution, np.linalg.pinv(A) @ B, atol=1e-10)


@given(seeds)
def test_lstsq_is_the_argmin(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(30, 5))
    B = rng.normal(size=(30, 3))
    X = least_squares_solve(A, B).solution
    best = np.linalg.norm(A @ X - B)
    for _ in range(5):
        dX = rng.normal(scale=rng.choice([1e-3, 1e-1, 1.0]), size=X.shape)
        assert np.linalg.norm(A @ (X + dX) - B) >= best - 1e-12


def test_lstsq_row_mismatch():
    with pytest.raises(ShapeError):
        least_squares_solve(np.zeros((4, 2)), np.zeros((3, 2)))


# ---------------------------------------------------------------- determinism


def test_forward_is_bit_deterministic():
    from conftest import random_images, tiny_config

    from learngene_pool.vit import VitModel

    cfg = tiny_config()
    x = random_images(np.random.default_rng(0), 3, cfg)
    a = VitModel(cfg, seed=4)(x).data
    b = VitModel(cfg, seed=4)(x).data
    assert a.tobytes() == b.tobytes()
