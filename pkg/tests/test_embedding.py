import numpy as np
import pytest

from bsmotion.embedding import (
    DEFAULT_SCHEDULE,
    EmbeddingStack,
    LevelSchedule,
    build_embedding_basis,
    build_transport,
    embed,
    pad_control_points,
    reconstruct_from_embedding,
)
from bsmotion.solver import ControlGrid, build_fitting_operator
from bsmotion.spline import uniform_basis_matrix

from oracles import moore_penrose_errors


@pytest.fixture(scope="module")
def default_basis():
    return build_embedding_basis()


def test_schedule_validation():
    assert LevelSchedule().counts == (17, 15, 13, 11, 9, 7, 5, 4)
    assert LevelSchedule().total_rows == 81
    with pytest.raises(ValueError, match="decreasing"):
        LevelSchedule((5, 5, 4))
    with pytest.raises(ValueError, match="coarsest"):
        LevelSchedule((6, 3))


def test_equal_size_transport_is_identity():
    tr = build_transport(5, 5, t_prime=16, mu=0.0)
    np.testing.assert_allclose(tr.matrix, np.eye(5), atol=1e-9)


def test_transport_is_operator_times_basis():
    tr = build_transport(17, 15, 16, 1e-3)
    op = build_fitting_operator(uniform_basis_matrix(16, 17), 1e-3)
    expected = op.operator_matrix @ uniform_basis_matrix(16, 15).entries
    np.testing.assert_allclose(tr.matrix, expected, atol=1e-14)
    assert tr.matrix.shape == (17, 15)


def test_transport_moore_penrose(default_basis):
    for tr in default_basis.transports:
        assert max(moore_penrose_errors(tr.matrix, tr.pseudo_inverse)) <= 1e-8
    tr = build_transport(9, 5, 12, 1e-2)
    assert max(moore_penrose_errors(tr.matrix, tr.pseudo_inverse)) <= 1e-8


def test_transport_keeps_constants():
    tr = build_transport(17, 15, 16, 1e-3)
    np.testing.assert_allclose(tr.matrix @ np.full(15, 0.8), np.full(17, 0.8), atol=1e-9)


def test_pad_control_points():
    P = np.arange(16 * 2 * 3, dtype=float).reshape(16, 2, 3)
    out = pad_control_points(ControlGrid(P), 17)
    assert out.control_count == 17
    np.testing.assert_array_equal(out.points[15], out.points[16])
    np.testing.assert_array_equal(pad_control_points(P, 16), P)
    small = pad_control_points(np.arange(4.0)[:, None], 6)
    np.testing.assert_array_equal(small[3:, 0], [3, 3, 3])
    with pytest.raises(ValueError):
        pad_control_points(P, 15)


def test_basis_shape_and_blocks(rng):
    basis = build_embedding_basis(LevelSchedule((5, 4)))
    assert basis.shape == (9, 5)
    P = rng.normal(size=(5, 3))
    tr = build_transport(5, 4, 16, 1e-3)
    top = (np.eye(5) - tr.matrix @ np.linalg.pinv(tr.matrix)) @ P
    np.testing.assert_allclose((basis.matrix @ P)[:5], top, atol=1e-12)
    np.testing.assert_array_equal(basis.matrix @ np.zeros((5, 3)), np.zeros((9, 3)))


def test_default_basis_rows(default_basis):
    assert default_basis.shape == (sum(DEFAULT_SCHEDULE), 17)


def test_embed_zero_and_constant(default_basis):
    zero = embed(np.zeros((17, 4, 3)), default_basis)
    assert all(np.all(r == 0) for r in zero.residuals) and np.all(zero.coarsest == 0)
    c = np.broadcast_to(np.array([0.3, -0.1, 0.5]), (17, 4, 3))
    stack = embed(c, default_basis)
    for R in stack.residuals:
        assert np.abs(R).max() <= 1e-8
    np.testing.assert_allclose(stack.coarsest, np.broadcast_to(c[0], (4, 4, 3)), atol=1e-8)


def test_embed_shape_mismatch(default_basis):
    with pytest.raises(ValueError, match="pad"):
        embed(np.zeros((16, 2, 3)), default_basis)


def test_round_trip(default_basis, rng):
    for _ in range(20):
        P = rng.normal(size=(17, 6, 3))
        rec = reconstruct_from_embedding(embed(P, default_basis)).points
        assert np.abs(rec - P).max() <= 1e-6 * np.abs(P).max()


def test_reconstruct_zero_stack(default_basis):
    stack = EmbeddingStack.from_stacked(np.zeros((81, 2, 3)), default_basis)
    assert np.all(reconstruct_from_embedding(stack).points == 0)


def test_zero_residuals_give_pure_transport_chain(default_basis, rng):
    coarse = rng.normal(size=(4, 2, 3))
    stack = EmbeddingStack(
        residuals=[np.zeros((k, 2, 3)) for k in DEFAULT_SCHEDULE[:-1]],
        coarsest=coarse, basis=default_basis)
    expected = coarse.reshape(4, -1)
    for tr in reversed(default_basis.transports):
        expected = tr.matrix @ expected
    np.testing.assert_allclose(reconstruct_from_embedding(stack).points.reshape(17, -1),
                               expected, atol=1e-12)


def test_residual_lies_outside_transport_range(default_basis, rng):
    stack = embed(rng.normal(size=(17, 5, 3)), default_basis)
    for tr, R in zip(default_basis.transports, stack.residuals):
        assert np.abs(tr.projector @ R.reshape(R.shape[0], -1)).max() <= 1e-8


def test_linearity(default_basis, rng):
    P, Q = rng.normal(size=(2, 17, 3, 3))
    a, b = 0.7, -2.3
    lhs = embed(a * P + b * Q, default_basis).stacked()
    rhs = a * embed(P, default_basis).stacked() + b * embed(Q, default_basis).stacked()
    assert np.abs(lhs - rhs).max() <= 1e-9


def test_smooth_grids_concentrate_in_coarse_levels(default_basis, rng):
    t = np.linspace(0, 1, 17)

    def fine_fraction(P):
        stack = embed(P, default_basis)
        fine = sum(np.sum(R ** 2) for R in stack.residuals[:3])
        return fine / np.sum(stack.stacked() ** 2)

    for _ in range(20):
        f = rng.uniform(0.3, 1.5)
        smooth = np.sin(2 * np.pi * f * t + rng.uniform(0, 6))[:, None]
        noise = rng.normal(size=(17, 1))
        assert fine_fraction(smooth) < fine_fraction(noise)
