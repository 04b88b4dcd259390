import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from oracles import mean_bce

from artrack.actl import (ACTLParams, ReferenceLabels, actl_loss, actl_loss_from_logits, pool_and_normalize,
                          similarity_matrix)
from artrack.gradsuite import run_case
from artrack.tensor import Tensor, backward, finite_diff_check, parameter


def params_for(c=4, ct=3, seed=0):
    return ACTLParams.init(c, ct, np.random.default_rng(seed))


def test_embeddings_have_unit_rows():
    rng = np.random.default_rng(0)
    p = params_for()
    z_a, z_t = pool_and_normalize([Tensor(rng.standard_normal((5, 4))) for _ in range(2)],
                                  Tensor(rng.standard_normal((6, 3))), p)
    assert z_a.shape == (2, 3) and z_t.shape == (6, 3)
    np.testing.assert_allclose(np.linalg.norm(z_a.data, axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(z_t.data, axis=1), 1.0, atol=1e-12)


def test_constant_audio_tokens_pool_to_that_row():
    p = params_for(seed=1)
    row = np.array([0.3, -1.0, 2.0, 0.5])
    z_a, _ = pool_and_normalize([Tensor(np.tile(row, (7, 1)))], Tensor(np.ones((1, 3))), p)
    direct = row @ p.w_q.data + p.b_a.data[0]
    np.testing.assert_allclose(z_a.data[0], direct / np.linalg.norm(direct), atol=1e-12)


def test_pool_matches_loop_evaluation():
    rng = np.random.default_rng(2)
    p = params_for(seed=2)
    p.b_a.data[:] = rng.standard_normal((1, 3))
    audio = [rng.standard_normal((t, 4)) for t in (2, 5, 3)]
    queries = rng.standard_normal((4, 3))
    z_a, z_t = pool_and_normalize([Tensor(a) for a in audio], Tensor(queries), p)
    for m, a in enumerate(audio):
        pooled = [sum(a[t, c] for t in range(len(a))) / len(a) for c in range(4)]
        proj = [sum(pooled[c] * p.w_q.data[c, k] for c in range(4)) + p.b_a.data[0, k] for k in range(3)]
        norm = math.sqrt(sum(v * v for v in proj))
        np.testing.assert_allclose(z_a.data[m], [v / norm for v in proj], atol=1e-12)
    for n, q in enumerate(queries):
        np.testing.assert_allclose(z_t.data[n], q / math.sqrt(sum(v * v for v in q)), atol=1e-12)


def test_zero_query_row_passes_through():
    p = params_for()
    _, z_t = pool_and_normalize([Tensor(np.ones((2, 4)))], Tensor(np.zeros((1, 3))), p)
    np.testing.assert_array_equal(z_t.data, np.zeros((1, 3)))


def test_pool_needs_an_expression():
    with pytest.raises(ValueError):
        pool_and_normalize([], Tensor(np.ones((1, 3))), params_for())


# -- similarity -------------------------------------------------------------------


def test_identical_embeddings():
    z = Tensor([[0.6, 0.8]])
    sim = similarity_matrix(z, z, ACTLParams.init(2, 2, np.random.default_rng(0)))
    assert sim.chi.item() == pytest.approx(1.0 / (1.0 + math.exp(-1.0)), abs=1e-12)
    assert sim.chi.item() == pytest.approx(0.73106, abs=1e-5)


def test_orthogonal_embeddings():
    sim = similarity_matrix(Tensor([[1.0, 0.0]]), Tensor([[0.0, 1.0]]), ACTLParams.init(2, 2, np.random.default_rng(0)))
    assert sim.chi.item() == 0.5


def test_similarity_shape_and_range():
    rng = np.random.default_rng(3)
    p = params_for()
    sim = similarity_matrix(Tensor(rng.standard_normal((3, 3))), Tensor(rng.standard_normal((2, 3))), p)
    assert sim.chi.shape == (3, 2) and sim.logits.shape == (3, 2)
    assert np.all((sim.chi.data > 0) & (sim.chi.data < 1))


def test_temperature_and_bias():
    p = ACTLParams.init(2, 2, np.random.default_rng(0))
    p.phi.data[:] = math.log(0.5)
    p.b_rho.data[:] = -0.25
    sim = similarity_matrix(Tensor([[1.0, 0.0]]), Tensor([[1.0, 0.0]]), p)
    assert p.temperature == pytest.approx(0.5)
    assert sim.logits.item() == pytest.approx(1.0 / 0.5 - 0.25)


def test_similarity_width_mismatch():
    with pytest.raises(ValueError):
        similarity_matrix(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4))), params_for())


# -- loss ---------------------------------------------------------------------------


def test_perfect_alignment_limit():
    chi = np.full((2, 3), 1.0 - 1e-12)
    assert actl_loss(Tensor(chi), np.ones((2, 3), dtype=bool)).item() < 1e-10


def test_single_negative_at_half():
    loss = actl_loss(Tensor([[0.5]]), [[False]], gamma=2.0).item()
    assert loss == pytest.approx(0.25 * math.log(2.0), abs=1e-12)
    assert abs(loss - 0.173287) < 1e-6


def test_positive_and_negative_equal_at_half():
    pos = actl_loss(Tensor([[0.5]]), [[True]]).item()
    neg = actl_loss(Tensor([[0.5]]), [[False]]).item()
    assert pos == pytest.approx(neg, abs=1e-15)


@given(arrays(np.float64, (3, 4), elements=st.floats(0.01, 0.99)),
       arrays(np.bool_, (3, 4)))
def test_gamma_zero_is_mean_bce(chi, labels):
    assert actl_loss(Tensor(chi), labels, gamma=0.0).item() == pytest.approx(mean_bce(chi, labels), abs=1e-12)


@given(arrays(np.float64, (2, 3), elements=st.floats(0.001, 0.999)),
       arrays(np.bool_, (2, 3)), st.floats(0.0, 4.0))
def test_gradient_signs(chi, labels, gamma):
    x = parameter(chi)
    backward(actl_loss(x, labels, gamma))
    assert np.all(x.grad[labels] < 0)
    assert np.all(x.grad[~labels] > 0)


def test_row_permutation_invariance():
    rng = np.random.default_rng(4)
    chi = rng.uniform(0.05, 0.95, (5, 2))
    labels = rng.random((5, 2)) < 0.5
    perm = rng.permutation(5)
    a = actl_loss(Tensor(chi), labels).item()
    b = actl_loss(Tensor(chi[perm]), labels[perm]).item()
    assert a == pytest.approx(b, abs=1e-15)


@pytest.mark.parametrize("bad", [0.0, 1.0, 1.2, -0.1])
def test_rejects_unsquashed_values(bad):
    with pytest.raises(ValueError, match=r"\(0, 1\)"):
        actl_loss(Tensor([[0.5, bad]]), [[True, False]])


def test_shape_mismatch():
    with pytest.raises(ValueError):
        actl_loss(Tensor(np.full((2, 2), 0.5)), np.ones((2, 3), dtype=bool))


def test_labels_define_psi():
    assert ReferenceLabels(np.zeros((3, 2))).psi == 6
    with pytest.raises(ValueError):
        ReferenceLabels(np.zeros(3))


@given(arrays(np.float64, (3, 2), elements=st.floats(-30, 30)), arrays(np.bool_, (3, 2)))
def test_logit_form_agrees(logits, labels):
    chi = 1.0 / (1.0 + np.exp(-logits))
    stable = actl_loss_from_logits(Tensor(logits), labels).item()
    assert np.isfinite(stable)
    if np.all((chi > 1e-9) & (chi < 1 - 1e-9)):
        assert stable == pytest.approx(actl_loss(Tensor(chi), labels).item(), rel=1e-9, abs=1e-12)


def test_two_by_two_gradient_check():
    rng = np.random.default_rng(5)
    p = params_for(c=3, ct=3, seed=5)
    audio = [parameter(rng.standard_normal((4, 3)), f"audio{i}") for i in range(2)]
    queries = parameter(rng.standard_normal((2, 3)), "queries")
    labels = np.array([[True, False], [False, True]])

    def f():
        z_a, z_t = pool_and_normalize(audio, queries, p)
        return actl_loss(similarity_matrix(z_t, z_a, p), labels)

    report = finite_diff_check(f, p.parameters() + audio + [queries])
    assert report.max_rel_error < 1e-4


@pytest.mark.parametrize("seed", range(5))
def test_pipeline_gradient_check(seed):
    assert run_case("actl_pipeline", seed).max_rel_error < 1e-4
