import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tumorfuse.backbones import BackboneConfig
from tumorfuse.capsnet import (CapsNetClassifier, CapsNetConfig, capsule_lengths, dynamic_routing,
                               lengths_to_probs, margin_loss, squash)
from tumorfuse.errors import ContractError
from tumorfuse.nn import one_hot
from tumorfuse.tensor import Tensor


def f64(x):
    return Tensor(np.asarray(x, dtype=np.float64), dtype=np.float64)


def norm(x):
    return np.linalg.norm(x, axis=-1)


class TestSquash:
    @pytest.mark.parametrize("length,expected", [(1.0, 0.5), (3.0, 0.9), (0.0, 0.0)])
    def test_known_lengths(self, length, expected):
        v = squash(f64([length, 0.0, 0.0])).data
        npt.assert_allclose(norm(v), expected, atol=1e-7)

    def test_zero_maps_to_zero(self):
        npt.assert_array_equal(squash(f64(np.zeros((2, 4)))).data, 0.0)

    @given(arrays(np.float64, 6, elements=st.floats(-1e3, 1e3)))
    @settings(max_examples=100, deadline=None)
    def test_inside_unit_ball_and_direction_kept(self, s):
        v = squash(f64(s)).data
        assert norm(v) < 1.0
        if norm(s) > 1e-6:
            assert np.dot(v, s) / (norm(v) * norm(s)) >= 1 - 1e-6


class TestRouting:
    def test_one_iteration_gives_uniform_coupling(self):
        u = f64(np.random.default_rng(0).standard_normal((5, 3, 4)))
        _, c = dynamic_routing(u, iterations=1)
        npt.assert_allclose(c.data, 1 / 3)

    def test_coupling_rows_sum_to_one(self):
        trace = []
        u = f64(np.random.default_rng(1).standard_normal((2, 6, 2, 4)))
        v, c = dynamic_routing(u, iterations=3, trace=trace)
        assert v.shape == (2, 2, 4) and c.shape == (2, 6, 2)
        assert len(trace) == 3
        for ci in trace:
            npt.assert_allclose(ci.sum(axis=-1), 1.0, atol=1e-12)

    def test_agreement_raises_coupling(self):
        # every input predicts the same vector for output 0 and small random ones for output 1
        rng = np.random.default_rng(2)
        u = rng.standard_normal((8, 2, 3)) * 0.3
        u[:, 0] = [2.0, 0.0, 0.0]
        _, c = dynamic_routing(f64(u), iterations=3)
        assert np.all(c.data[:, 0] > 0.5)

    def test_three_iterations_by_hand(self):
        u = np.random.default_rng(4).standard_normal((3, 2, 2))

        def sq(s):
            n = np.linalg.norm(s, axis=-1, keepdims=True)
            return (n ** 2 / (1 + n ** 2)) * s / n

        b = np.zeros((3, 2))
        for it in range(3):
            c = np.exp(b) / np.exp(b).sum(axis=1, keepdims=True)
            v = sq(np.einsum("ij,ijd->jd", c, u))
            if it < 2:
                b = b + np.einsum("ijd,jd->ij", u, v)
        got_v, got_c = dynamic_routing(f64(u), 3)
        # the 1e-8 guard in squash shifts results by ~1e-8 relative
        npt.assert_allclose(got_v.data, v, rtol=1e-6)
        npt.assert_allclose(got_c.data, c, rtol=1e-6)

    def test_needs_an_iteration(self):
        with pytest.raises(ContractError):
            dynamic_routing(f64(np.zeros((2, 2, 2))), iterations=0)


class TestMarginLoss:
    def test_hand_value(self):
        # lengths 0.5 (present class) and 0.3 (absent class)
        v = f64([[0.5, 0.0], [0.0, 0.3]])
        loss = margin_loss(v, np.array([1.0, 0.0]))
        npt.assert_allclose(float(loss.data), 0.4 ** 2 + 0.5 * 0.2 ** 2, rtol=1e-12)

    def test_zero_when_margins_met(self):
        v = f64([[[0.95, 0.0], [0.05, 0.0]]])
        assert float(margin_loss(v, one_hot([0], dtype=np.float64)).data) == 0.0

    def test_lengths_to_probs(self):
        p = lengths_to_probs(f64([[0.9, 0.1], [0.0, 0.0]])).data
        npt.assert_allclose(p[0], [0.9, 0.1], rtol=1e-8)
        npt.assert_allclose(p[1], [0.5, 0.5])


class TestCapsNet:
    def test_forward_shapes(self):
        model = CapsNetClassifier(BackboneConfig(kind="resnet_mini"), CapsNetConfig())
        assert model.n_primary == 64
        x = Tensor(np.random.default_rng(0).uniform(size=(2, 1, 64, 64)).astype(np.float32))
        v = model.class_capsules(x)
        assert v.shape == (2, 2, 16)
        assert np.all(capsule_lengths(v).data < 1)
        npt.assert_allclose(model(x).data.sum(axis=1), 1.0, atol=1e-6)
        npt.assert_allclose(model.last_coupling.sum(axis=-1), 1.0, atol=1e-5)
