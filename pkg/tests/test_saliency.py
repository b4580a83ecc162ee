import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from humattn import numcore as nc
from humattn.errors import FormatError, ValidationError
from humattn.numcore import Tensor
from humattn.saliency import (
    GridGeometry,
    SaliencyMap,
    TextSaliencyNet,
    aggregate_to_grid,
    cell_sums,
    crop_letterbox,
    image_prior_from_map,
    read_map,
    read_pgm,
    write_map,
    write_pgm,
)

from conftest import gradcheck


def naive_cells(values, rows, cols):
    H, W = values.shape
    out = np.zeros(rows * cols)
    for y in range(H):
        for x in range(W):
            out[(y * rows // H) * cols + x * cols // W] += values[y, x]
    return out


class TestCrop:
    def test_matching_aspect_is_identity(self, rng):
        m = SaliencyMap(rng.random((30, 60)), 2.0)
        assert crop_letterbox(m) is m

    def test_square_in_wide_map(self, rng):
        v = rng.random((100, 200))
        out = crop_letterbox(SaliencyMap(v, 1.0))
        np.testing.assert_array_equal(out.values, v[:, 50:150])

    def test_wide_in_square_map(self, rng):
        v = rng.random((100, 100))
        out = crop_letterbox(SaliencyMap(v, 2.0))
        assert out.values.shape == (50, 100)
        np.testing.assert_array_equal(out.values, v[25:75, :])

    def test_degenerate(self):
        with pytest.raises(ValidationError):
            crop_letterbox(SaliencyMap(np.ones((10, 10)), 50.0))
        with pytest.raises(ValidationError):
            crop_letterbox(SaliencyMap(np.ones((10, 10)), 0.0))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 30), st.integers(2, 30), st.integers(0, 12), st.floats(0, 5), st.booleans(), st.integers(0, 999))
    def test_padding_invariance(self, h, w, pad, border, vertical, seed):
        rng = np.random.default_rng(seed)
        content = rng.random((h, w))
        if vertical:
            padded = np.pad(content, ((pad, pad), (0, 0)), constant_values=border)
        else:
            padded = np.pad(content, ((0, 0), (pad, pad)), constant_values=border)
        grid = GridGeometry(min(h, 2), min(w, 3))
        a = image_prior_from_map(SaliencyMap(padded, w / h), grid).weights.data
        b = aggregate_to_grid(SaliencyMap(content, w / h), grid).weights.data
        np.testing.assert_array_equal(a, b)


class TestAggregate:
    def test_uniform(self):
        p = aggregate_to_grid(SaliencyMap(np.full((8, 12), 0.3), 1.5), GridGeometry(4, 6))
        np.testing.assert_allclose(p.weights.data, 1 / 24, atol=1e-9)

    def test_single_pixel(self):
        v = np.zeros((8, 12))
        v[5, 7] = 2.0
        w = aggregate_to_grid(SaliencyMap(v, 1.5), GridGeometry(4, 6)).weights.data
        expected = np.zeros(24)
        expected[2 * 6 + 3] = 1.0
        np.testing.assert_array_equal(w, expected)

    def test_naive_oracle(self, rng):
        v = rng.random((64, 96), dtype=np.float32).astype(np.float64)
        sums = cell_sums(v, GridGeometry(4, 6))
        np.testing.assert_allclose(sums, naive_cells(v, 4, 6), atol=1e-12, rtol=0)
        assert sums.sum() == v.sum()

    def test_mean_one(self, rng):
        p = aggregate_to_grid(SaliencyMap(rng.random((10, 10)), 1.0), GridGeometry(2, 5), "mean_one")
        assert p.weights.data.mean() == pytest.approx(1.0, abs=1e-12)
        p.validate()

    def test_zero_map_uniform_with_warning(self, caplog):
        with caplog.at_level(logging.WARNING):
            p = aggregate_to_grid(SaliencyMap(np.zeros((4, 4)), 1.0), GridGeometry(2, 2))
        np.testing.assert_array_equal(p.weights.data, np.full(4, 0.25))
        assert "all-zero" in caplog.text

    def test_uneven_partition(self):
        v = np.arange(35, dtype=float).reshape(5, 7)
        np.testing.assert_array_equal(cell_sums(v, GridGeometry(2, 3)), naive_cells(v, 2, 3))

    def test_grid_finer_than_map(self):
        with pytest.raises(ValidationError):
            cell_sums(np.ones((2, 2)), GridGeometry(3, 1))

    def test_full_scale_bounds(self):
        GridGeometry(19, 32).check_full_scale()
        GridGeometry(12, 16).check_full_scale()
        with pytest.raises(ValidationError):
            GridGeometry(4, 6).check_full_scale()
        with pytest.raises(ValidationError):
            GridGeometry(20, 30).check_full_scale()


class TestMapFiles:
    def test_msal_round_trip(self, tmp_path, rng):
        v = rng.random((7, 9), dtype=np.float32)
        write_map(tmp_path / "m.msal", SaliencyMap(v, 1.25))
        back = read_map(tmp_path / "m.msal")
        np.testing.assert_array_equal(back.values, v.astype(np.float64))
        assert back.content_aspect == 1.25

    def test_msal_bad_magic_and_truncation(self, tmp_path):
        write_map(tmp_path / "m.msal", SaliencyMap(np.ones((3, 3)), 1.0))
        raw = (tmp_path / "m.msal").read_bytes()
        (tmp_path / "t.msal").write_bytes(raw[:-5])
        (tmp_path / "b.msal").write_bytes(b"XXXX" + raw[4:])
        with pytest.raises(FormatError):
            read_map(tmp_path / "t.msal")
        with pytest.raises(FormatError):
            read_map(tmp_path / "b.msal")

    @pytest.mark.parametrize("binary", [True, False])
    def test_pgm_round_trip(self, tmp_path, rng, binary):
        v = rng.integers(0, 256, size=(6, 10))
        write_pgm(tmp_path / "s.pgm", v, 1.6, binary=binary)
        back = read_pgm(tmp_path / "s.pgm")
        np.testing.assert_array_equal(back.values, v)
        assert back.content_aspect == 1.6

    def test_pgm_with_comment(self, tmp_path):
        (tmp_path / "c.pgm").write_bytes(b"P2\n# made by hand\n3 2\n9\n1 2 3\n4 5 6\n")
        (tmp_path / "c.pgm.json").write_text('{"content_aspect": 1.5}')
        np.testing.assert_array_equal(read_pgm(tmp_path / "c.pgm").values, [[1, 2, 3], [4, 5, 6]])

    def test_pgm_missing_sidecar(self, tmp_path):
        (tmp_path / "c.pgm").write_bytes(b"P2\n1 1\n9\n1\n")
        with pytest.raises(FormatError):
            read_pgm(tmp_path / "c.pgm")


class TestTextSaliency:
    def test_zero_head_uniform(self, rng):
        net = TextSaliencyNet(rng, 6, hidden=8, heads=4)
        net.score.weight.data[:] = 0.0
        mask = np.array([True, True, True, False, False])
        p = net(Tensor(rng.normal(size=(5, 6))), mask)
        np.testing.assert_allclose(p.weights.data, [1 / 3, 1 / 3, 1 / 3, 0, 0], atol=1e-15)

    @pytest.mark.parametrize("n", [1, 4, 14])
    def test_sums_to_one(self, rng, n):
        net = TextSaliencyNet(rng, 6, hidden=8, heads=4)
        p = net(Tensor(rng.normal(size=(2, n, 6))), np.ones((2, n), bool))
        p.validate()
        assert p.weights.shape == (2, n)

    def test_empty_question(self, rng):
        net = TextSaliencyNet(rng, 6, hidden=8, heads=4)
        with pytest.raises(ValidationError):
            net(Tensor(rng.normal(size=(3, 6))), np.zeros(3, bool))

    def test_reversal_covariance(self, rng):
        # swapping the two recurrent directions and the matching projection halves
        # turns the net into its own mirror image
        net = TextSaliencyNet(rng, 5, hidden=4, heads=2)
        x = rng.normal(size=(1, 6, 5))
        mask = np.array([[True, True, True, True, False, False]])
        p = net(Tensor(x), mask).weights.data
        for name in ("w_in", "w_hh", "bias"):
            a, b = getattr(net.fwd, name), getattr(net.bwd, name)
            a.data, b.data = b.data.copy(), a.data.copy()
        w = net.proj.weight.data
        net.proj.weight.data = np.concatenate([w[4:], w[:4]])
        q = net(Tensor(x[:, ::-1].copy()), mask[:, ::-1].copy()).weights.data
        np.testing.assert_allclose(q[:, ::-1], p, atol=1e-12)

    def test_permutation_covariance_after_recurrence(self, rng):
        net = TextSaliencyNet(rng, 5, hidden=4, heads=2)
        h = rng.normal(size=(1, 5, 4))
        mask = np.array([[True, True, False, True, True]])
        perm = rng.permutation(5)

        def head(hh, m):
            s = net.score(net.layer(Tensor(hh), mask=m))
            return nc.softmax(nc.reshape(s, s.shape[:-1]), mask=m).data

        np.testing.assert_allclose(head(h, mask)[:, perm], head(h[:, perm], mask[:, perm]), atol=1e-12)

    def test_gradient_to_tsm_weights(self, rng):
        from humattn.attention import attend

        net = TextSaliencyNet(rng, 4, hidden=4, heads=2)
        emb = Tensor(rng.normal(size=(1, 3, 4)))
        mask = np.ones((1, 3), bool)
        K = Tensor(rng.normal(size=(1, 3, 4)))
        t = rng.normal(size=(1, 3, 4))

        def loss():
            prior = net(emb, mask)
            return (attend(K, K, K, mask, prior=prior)[0] * t).sum()

        params = [net.score.weight, net.fwd.w_in, net.layer.mha.q.weight]
        assert gradcheck(loss, params, max_coords=8) <= 1e-4
        assert all(np.abs(p.grad).max() > 0 for p in params)
