import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wildsam import numerics as nx
from wildsam.nn import component_rng
from wildsam.numerics import DimensionError, Tensor, fd_gradient, relative_error
from wildsam.wgse import AFM, BANDS, SEGate, SpectralCouplingBridge, SubbandSet, WGSE, concat_bands, dwt_haar, idwt_haar


def bands_np(x):
    return [t.data for t in dwt_haar(x)]


def test_dwt_hand_example():
    LL, LH, HL, HH = bands_np(np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert (LL.item(), LH.item(), HL.item(), HH.item()) == (5.0, -2.0, -1.0, 0.0)


def test_dwt_constant_input(rng):
    v = rng.normal()
    LL, LH, HL, HH = bands_np(np.full((2, 3, 6, 8), v))
    np.testing.assert_allclose(LL, 2 * v, rtol=1e-15)
    assert not LH.any() and not HL.any() and not HH.any()


def test_dwt_matches_per_block_loop(rng):
    x = rng.normal(size=(4, 6))
    LL, LH, HL, HH = bands_np(x)
    for i in range(2):
        for j in range(3):
            a, b, c, d = x[2 * i, 2 * j], x[2 * i, 2 * j + 1], x[2 * i + 1, 2 * j], x[2 * i + 1, 2 * j + 1]
            assert LL[i, j] == pytest.approx((a + b + c + d) / 2, abs=1e-14)
            assert LH[i, j] == pytest.approx((a + b - c - d) / 2, abs=1e-14)
            assert HL[i, j] == pytest.approx((a - b + c - d) / 2, abs=1e-14)
            assert HH[i, j] == pytest.approx((a - b - c + d) / 2, abs=1e-14)


def test_odd_sizes_rejected(rng):
    with pytest.raises(DimensionError):
        dwt_haar(rng.normal(size=(1, 1, 5, 4)))
    with pytest.raises(DimensionError):
        idwt_haar(SubbandSet(*(np.zeros((2, 2)),) * 3, np.zeros((2, 3))))


@settings(max_examples=60)
@given(arrays(np.float64, (2, 3, 6, 4), elements=st.floats(-1e3, 1e3)))
def test_inverse_and_parseval(x):
    s = dwt_haar(x)
    np.testing.assert_allclose(idwt_haar(s).data, x, atol=1e-12 * max(1.0, np.abs(x).max()))
    again = dwt_haar(idwt_haar(s))
    for a, b in zip(again, s):
        np.testing.assert_allclose(a.data, b.data, atol=1e-12 * max(1.0, np.abs(x).max()))
    energy = sum(float((t.data ** 2).sum()) for t in s)
    assert energy == pytest.approx(float((x ** 2).sum()), rel=1e-9, abs=1e-300)


def test_zeroing_ll_gives_zero_block_means(rng):
    s = dwt_haar(rng.normal(size=(8, 8)))
    y = idwt_haar(SubbandSet(np.zeros((4, 4)), s.LH, s.HL, s.HH)).data
    means = y.reshape(4, 2, 4, 2).mean(axis=(1, 3))
    np.testing.assert_allclose(means, 0.0, atol=1e-14)


# AFM / SCB / SE -------------------------------------------------------------

def test_afm_zero_and_shapes(rng):
    for band in BANDS:
        afm = AFM(band, 6, 5, rng)
        for n, p in afm.named_parameters():
            if n.endswith("bias"):
                p.data[:] = 0
        assert not afm(np.zeros((2, 6, 4, 3))).data.any()
        assert afm(rng.normal(size=(2, 6, 4, 3))).shape == (2, 12, 5)
    lh, hl = AFM("LH", 6, 5, rng), AFM("HL", 6, 5, rng)
    assert [c.weight.shape[2:] for c in lh.convs] == [(1, 5), (5, 1)]
    assert [c.weight.shape[2:] for c in hl.convs] == [(5, 1), (1, 5)]


def test_scb_identity_at_init(rng):
    scb = SpectralCouplingBridge(8, rng)
    f = rng.normal(size=(2, 5, 8))
    s = rng.normal(size=(2, 15, 8))
    np.testing.assert_array_equal(scb(f, s).data, f)


def test_scb_single_context_token(rng):
    scb = SpectralCouplingBridge(4, rng)
    scb.out.weight.data = rng.normal(size=(4, 4))
    f = rng.normal(size=(1, 3, 4))
    s = rng.normal(size=(1, 1, 4))
    v = s[0] @ scb.wv.weight.data
    expected = f + (v @ scb.out.weight.data + scb.out.bias.data)[None]
    np.testing.assert_allclose(scb(f, s).data, expected, atol=1e-12)


def test_scb_two_token_hand_expansion(rng):
    scb = SpectralCouplingBridge(2, rng)
    for lin in (scb.wq, scb.wk, scb.wv):
        lin.weight.data = np.eye(2)
    scb.out.weight.data = np.array([[1.0, 0.0], [0.0, 2.0]])
    f = np.array([[[1.0, 0.0]]])
    s = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    s1, s2 = 1 / math.sqrt(2), 0.0
    w1 = math.exp(s1) / (math.exp(s1) + math.exp(s2))
    att = np.array([w1, 1 - w1])
    expected = f[0, 0] + np.array([att[0], 2 * att[1]])
    np.testing.assert_allclose(scb(f, s).data[0, 0], expected, rtol=1e-14)
    with pytest.raises(DimensionError):
        scb(f, np.zeros((1, 2, 3)))


def test_concat_bands(rng):
    a, b, c = rng.normal(size=(3, 2, 4, 5))
    out = concat_bands(a, b, c).data
    assert out.shape == (2, 4, 15)
    np.testing.assert_array_equal(out[..., 5:10], b)
    assert not np.array_equal(concat_bands(b, a, c).data, out)
    with pytest.raises(DimensionError):
        concat_bands(a, b, c[:, :3])


def test_se_gate(rng):
    se = SEGate(8, rng)
    f = rng.normal(size=(2, 6, 8))
    s = se.gate(f).data
    assert np.all((s > 0) & (s < 1))
    se.fc2.weight.data[:] = 0
    se.fc2.bias.data[:] = 1e3
    np.testing.assert_array_equal(se(f).data, f)


def test_se_gate_hand_expansion():
    se = SEGate(2, np.random.default_rng(0), ratio=2)  # hidden width 1
    se.fc1.weight.data = np.array([[1.0], [-0.5]])
    se.fc1.bias.data = np.array([0.2])
    se.fc2.weight.data = np.array([[2.0, -1.0]])
    se.fc2.bias.data = np.array([0.0, 0.5])
    f = np.array([[[1.0, 2.0], [3.0, -4.0]]])
    m = f[0].mean(axis=0)
    h = m[0] * 1.0 + m[1] * -0.5 + 0.2
    h = 0.5 * h * (1 + math.erf(h / math.sqrt(2)))
    s = [1 / (1 + math.exp(-(2.0 * h))), 1 / (1 + math.exp(-(-h + 0.5)))]
    np.testing.assert_allclose(se(f).data[0], f[0] * np.array(s), rtol=1e-14)


# full stack -------------------------------------------------------------------

@pytest.fixture
def wgse():
    return WGSE(8, 6, width=5, seed=3)


def test_prompt_shape_and_zero_path(wgse, rng):
    x = rng.normal(size=(2, 8, 8, 8))
    st_ = wgse.stages(x, (8, 8))
    assert st_["prompt"].shape == (2, 6, 8, 8)
    assert st_["context"].shape == (2, 48, 5)
    for i, b in enumerate(BANDS):
        np.testing.assert_array_equal(st_["context"].data[:, 16 * i:16 * (i + 1)], st_["tokens"][b].data)
        np.testing.assert_array_equal(st_["enhanced"][b].data, st_["tokens"][b].data)  # SCB identity at init
    zero = wgse.to_dense_prompt(Tensor(np.zeros((2, 16, 15))), (4, 4), (8, 8))
    assert not zero.data.any()
    assert wgse.to_dense_prompt(Tensor(rng.normal(size=(1, 9, 15))), (3, 3), (7, 5)).shape == (1, 6, 7, 5)


def test_prompt_ignores_ll(wgse, rng):
    x = rng.integers(-8, 8, size=(2, 8, 8, 8)).astype(np.float64)
    shift = np.repeat(np.repeat(rng.integers(-4, 4, size=(2, 8, 4, 4)), 2, axis=2), 2, axis=3)
    a, b = dwt_haar(x), dwt_haar(x + shift)
    assert not np.array_equal(a.LL.data, b.LL.data)
    np.testing.assert_array_equal(wgse(x, (8, 8)).data, wgse(x + shift, (8, 8)).data)


def test_wgse_gradients_match_fd(wgse, rng):
    wgse.scb.out.weight.data = rng.normal(size=(5, 5)) * 0.3
    x = rng.normal(size=(2, 8, 4, 4))
    coef = rng.normal(size=(2, 6, 4, 4))

    def f():
        return nx.tsum(wgse(x, (4, 4)) * coef)

    with nx.Tape() as tape:
        loss = f()
    tape.backward(loss)
    for name, p in wgse.trainable_parameters():
        idx = rng.choice(p.size, size=min(p.size, 4), replace=False)
        fd = fd_gradient(lambda _: f(), p, 1e-5, indices=idx).reshape(-1)[idx]
        assert relative_error(p.grad.reshape(-1)[idx], fd) <= 1e-4, name
