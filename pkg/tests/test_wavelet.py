import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavefuse import wavelet as wv
from wavefuse.nncore import Lambda, finite_diff_check


def energy(x):
    return float(np.sum(np.square(x)))


def pyramid_energy(p):
    return sum(energy(b) for _, _, b in p.bands())


def test_dwt2_constant():
    b = wv.dwt2(np.full((1, 4, 6), 0.3))
    np.testing.assert_allclose(b.LL, 0.6, atol=1e-15)
    for band in (b.V, b.H, b.D):
        np.testing.assert_array_equal(band, 0.0)


def test_dwt2_closed_form_block():
    b = wv.dwt2(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
    assert (b.LL.item(), b.H.item(), b.V.item(), b.D.item()) == (5.0, -1.0, -2.0, 0.0)


def test_dwt2_parseval(rng):
    img = rng.uniform(size=(1, 8, 8))
    b = wv.dwt2(img)
    assert abs(sum(energy(x) for x in (b.LL, b.V, b.H, b.D)) - energy(img)) <= 1e-12


def test_dwt2_rejects_odd():
    with pytest.raises(ValueError):
        wv.dwt2(np.zeros((1, 5, 4)))


def test_idwt2_examples(rng):
    img = rng.uniform(size=(3, 6, 10))
    np.testing.assert_allclose(wv.idwt2(wv.dwt2(img)), img, atol=1e-12)
    z = np.zeros((1, 2, 2))
    np.testing.assert_allclose(wv.idwt2(wv.SubbandSet(np.full((1, 2, 2), 1.4), z, z, z)), 0.7, atol=1e-15)
    one = np.ones((1, 1, 1))
    out = wv.idwt2(wv.SubbandSet(5 * one, -2 * one, -1 * one, 0 * one))
    np.testing.assert_array_equal(out, [[[1.0, 2.0], [3.0, 4.0]]])
    with pytest.raises(ValueError):
        wv.SubbandSet(np.zeros((1, 2, 2)), np.zeros((1, 2, 2)), np.zeros((1, 2, 2)), np.zeros((1, 3, 2)))


def test_dwt_multi_base_case(rng):
    img = rng.uniform(size=(2, 8, 8))
    p = wv.dwt_multi(img, 1)
    b = wv.dwt2(img)
    np.testing.assert_array_equal(p.top_ll, b.LL)
    for got, want in zip(p.levels[0], (b.V, b.H, b.D)):
        np.testing.assert_array_equal(got, want)


def test_dwt_multi_constant():
    p = wv.dwt_multi(np.full((1, 8, 8), 0.25), 2)
    np.testing.assert_allclose(p.top_ll, 1.0, atol=1e-15)
    assert sum(np.abs(b).sum() for lv in p.levels for b in lv) == 0.0


def test_dwt_multi_energy(rng):
    img = rng.uniform(size=(1, 16, 16))
    assert abs(pyramid_energy(wv.dwt_multi(img, 3)) - energy(img)) <= 1e-12


def test_dwt_multi_rejects():
    with pytest.raises(ValueError):
        wv.dwt_multi(np.zeros((1, 12, 12)), 3)
    with pytest.raises(ValueError):
        wv.dwt_multi(np.zeros((1, 8, 8)), 0)


@pytest.mark.parametrize("J", [1, 2, 3])
def test_idwt_multi_round_trip(J, rng):
    img = rng.uniform(size=(3, 32, 32))
    assert np.abs(wv.idwt_multi(wv.dwt_multi(img, J)) - img).max() <= 1e-12


def test_zeroed_details_give_block_means(rng):
    img = rng.uniform(size=(1, 6, 6))
    p = wv.dwt_multi(img, 1)
    p.levels[0] = tuple(np.zeros_like(b) for b in p.levels[0])
    rec = wv.idwt_multi(p)
    means = img.reshape(1, 3, 2, 3, 2).mean(axis=(2, 4))
    np.testing.assert_allclose(rec, means.repeat(2, 1).repeat(2, 2), atol=1e-15)


def test_checkerboard_closed_form():
    board = (np.indices((4, 4)).sum(axis=0) % 2).astype(float)[None]  # 0/1
    p = wv.dwt_multi(board, 1)
    # each block [[0,1],[1,0]]: LL = 1, D = -1, V = H = 0
    np.testing.assert_allclose(p.top_ll, 1.0)
    np.testing.assert_allclose(p.levels[0][2], -1.0)
    np.testing.assert_allclose(p.levels[0][0], 0.0)
    np.testing.assert_allclose(p.levels[0][1], 0.0)
    np.testing.assert_array_equal(wv.idwt_multi(p), board)


def test_idwt_multi_rejects_inconsistent(rng):
    p = wv.dwt_multi(rng.uniform(size=(1, 8, 8)), 2)
    p.levels[1] = tuple(b[..., :1, :] for b in p.levels[1])
    with pytest.raises(ValueError):
        wv.idwt_multi(p)


def test_pack_counts_and_bijection(rng):
    p1 = wv.dwt_multi(rng.uniform(size=(3, 8, 8)), 1)
    s1 = wv.pack_spectrum(p1)
    assert s1.data.shape == (12, 4, 4)
    p2 = wv.dwt_multi(rng.uniform(size=(1, 16, 16)), 2)
    s2 = wv.pack_spectrum(p2)
    assert s2.data.shape == (7, 8, 8)
    assert [m[:2] for m in s2.manifest] == [("LL", 2), ("V", 2), ("H", 2), ("D", 2),
                                            ("V", 1), ("H", 1), ("D", 1)]
    for p, s in ((p1, s1), (p2, s2)):
        q = wv.unpack_spectrum(s)
        np.testing.assert_array_equal(q.top_ll, p.top_ll)
        for la, lb in zip(q.levels, p.levels):
            for a, b in zip(la, lb):
                np.testing.assert_array_equal(a, b)


def test_unpack_rejects_bad_manifest(rng):
    s = wv.pack_spectrum(wv.dwt_multi(rng.uniform(size=(1, 8, 8)), 2))
    s.manifest = s.manifest[:-1]
    with pytest.raises(ValueError):
        wv.unpack_spectrum(s)


def test_subband_energy():
    assert wv.subband_energy(wv.dwt_multi(np.full((1, 8, 8), 0.4), 2)).hf_fraction == 0.0
    board = np.where(np.indices((8, 8)).sum(axis=0) % 2, 1.0, -1.0)[None]  # zero-mean checkerboard
    table = wv.subband_energy(wv.dwt_multi(board, 1))
    assert table.hf_fraction == 1.0
    by_band = {r[0]: r[2] for r in table.rows}
    assert by_band["D"] == 4.0 and by_band["LL"] == by_band["V"] == by_band["H"] == 0.0
    csv = table.to_csv()
    assert csv.splitlines()[0] == "band,level,mean_square,energy"
    assert csv.splitlines()[-1].startswith("hf_fraction,")


def test_subband_energy_phantoms():
    from wavefuse.data import PhantomSpec, generate_phantom

    a, b, f = generate_phantom(PhantomSpec(), 0)
    frac = {k: wv.subband_energy(wv.dwt_multi(v, 2)).hf_fraction for k, v in zip("abf", (a, b, f))}
    assert frac["f"] < frac["a"] and frac["f"] < frac["b"]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([(16, 16), (8, 32), (32, 8)]),
       st.integers(1, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_linearity_and_parseval(seed, hw, J, a, b):
    g = np.random.default_rng(seed)
    i1, i2 = g.uniform(size=(2,) + hw), g.uniform(size=(2,) + hw)
    lhs = wv.dwt_multi(a * i1 + b * i2, J).bands()
    r1, r2 = wv.dwt_multi(i1, J).bands(), wv.dwt_multi(i2, J).bands()
    for (_, _, x), (_, _, y), (_, _, z) in zip(lhs, r1, r2):
        np.testing.assert_allclose(x, a * y + b * z, atol=1e-12)
    assert abs(pyramid_energy(wv.dwt_multi(i1, J)) - energy(i1)) <= 1e-10


def test_dwt_differentiable(rng):
    def fwd(x):
        return wv.pack_spectrum(wv.dwt_multi(x, 2)).data

    spec = wv.pack_spectrum(wv.dwt_multi(np.zeros((1, 8, 8)), 2))

    def bwd(d):
        return wv.dwt_multi_adjoint(wv.pack_spectrum_adjoint(d, spec.manifest, 1))

    assert finite_diff_check(Lambda(fwd, bwd), [rng.uniform(size=(1, 8, 8))]) <= 1e-9
    b = wv.dwt2
    op = Lambda(lambda x: np.stack([getattr(b(x), k) for k in ("LL", "V", "H", "D")]),
                lambda d: wv.idwt2(wv.SubbandSet(*d)))
    assert finite_diff_check(op, [rng.uniform(size=(2, 4, 6))]) <= 1e-9
