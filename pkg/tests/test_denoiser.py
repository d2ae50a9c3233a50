import numpy as np
import pytest
from oracles import leaky, naive_conv_batch

from wavefuse.denoiser import NoiseEmbedding, ResBlock, UNet, UNetConfig, sinusoidal_features
from wavefuse.nncore import finite_diff_check


def small_unet(rng, c_z=2, width=4, depth=2, embed=8, live_output=True):
    net = UNet(UNetConfig(cond_channels=c_z, base_width=width, depth=depth, embed_dim=embed), rng=rng)
    if live_output:
        net.out.weight.value[...] = 0.3 * rng.standard_normal(net.out.weight.value.shape)
        net.out.bias.value[...] = 0.1
    return net


@pytest.mark.parametrize("depth, size", [(1, 8), (2, 16), (3, 8)])
def test_unet_shape_and_zero_output(depth, size, rng):
    net = small_unet(rng, depth=depth, live_output=False)
    out = net.forward(rng.standard_normal((2, 3, size, size)), rng.standard_normal((2, 2, size, size)),
                      np.array([0.3, 0.9]))
    assert out.shape == (2, 3, size, size)
    assert not out.any()


def test_unet_input_errors(rng):
    net = small_unet(rng)
    with pytest.raises(ValueError):
        net.forward(np.zeros((1, 3, 10, 10)), np.zeros((1, 2, 10, 10)), 0.5)
    with pytest.raises(ValueError):
        net.forward(np.zeros((1, 3, 8, 8)), np.zeros((1, 3, 8, 8)), 0.5)
    with pytest.raises(ValueError):
        net.forward(np.zeros((1, 3, 8, 8)), np.zeros((1, 2, 8, 8)), 0.0)


def test_sinusoidal_features():
    f = sinusoidal_features(np.array([0.25, 1.0]), 8)
    assert f.shape == (2, 8)
    np.testing.assert_allclose(f[:, :4] ** 2 + f[:, 4:] ** 2, 1.0, atol=1e-15)
    np.testing.assert_allclose(f[0, 0], np.sin(250.0), atol=1e-15)
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            sinusoidal_features(bad, 8)


def test_embedding_deterministic_and_distinct(rng):
    emb = NoiseEmbedding(16, rng=rng)
    a = emb.forward(np.sqrt([0.1, 0.9]))
    np.testing.assert_array_equal(a, emb.forward(np.sqrt([0.1, 0.9])))
    assert np.linalg.norm(a[0] - a[1]) > 0
    grid = emb.forward(np.sqrt(np.linspace(0.01, 1.0, 50)))
    d = np.linalg.norm(grid[:, None] - grid[None], axis=-1)
    assert d[~np.eye(50, dtype=bool)].min() > 0


def test_noise_level_changes_output(rng):
    net = small_unet(rng)
    I_t, z = rng.standard_normal((1, 3, 8, 8)), rng.standard_normal((1, 2, 8, 8))
    outs = [net.forward(I_t, z, lvl) for lvl in np.sqrt([0.05, 0.3, 0.6, 0.95])]
    for i in range(len(outs)):
        for j in range(i):
            assert not np.array_equal(outs[i], outs[j])


def test_resblock_gradient(rng, wrap):
    blk = ResBlock(3, 5, 4, rng=rng)
    op = wrap(blk, lambda m, x, e: m.forward(x, e), lambda m, d: m.backward(d))
    assert finite_diff_check(op, [rng.standard_normal((2, 3, 4, 4)), rng.standard_normal((2, 4))]) <= 1e-6


def test_unet_gradient(rng, wrap):
    net = small_unet(rng, c_z=4, width=4, embed=8)
    level = np.array([0.4, 0.8])
    op = wrap(net, lambda m, I, z: m.forward(I, z, level), lambda m, d: (None, m.backward(d)))
    inputs = [rng.standard_normal((2, 3, 8, 8)), rng.standard_normal((2, 4, 8, 8))]
    assert finite_diff_check(op, inputs, max_entries=100) <= 1e-3


def test_embedding_projection_gradient(rng, wrap):
    net = small_unet(rng)
    I_t, z = rng.standard_normal((2, 3, 8, 8)), rng.standard_normal((2, 2, 8, 8))
    # only the projection's parameters are exposed to the harness
    op = wrap(net.embed.proj, lambda m, lvl: net.forward(I_t, z, lvl),
              lambda m, d: (net.backward(d), None)[1])
    assert finite_diff_check(op, [np.array([0.35, 0.6])]) <= 1e-3


def test_unet_matches_primitive_chain_oracle(rng):
    net = small_unet(rng, c_z=2, width=4, depth=2, embed=8)
    I_t, z = rng.standard_normal((1, 3, 16, 16)), rng.standard_normal((1, 2, 16, 16))
    level = 0.7

    def conv(m, x):
        return naive_conv_batch(x, m.weight.value, m.bias.value, m.stride)

    def res(blk, x, e):
        sh = e @ blk.shift.weight.value.T + blk.shift.bias.value
        h = leaky(conv(blk.conv1, x) + sh[:, :, None, None])
        h = leaky(conv(blk.conv2, h))
        return h + (conv(blk.skip, x) if blk.skip is not None else x)

    feats = sinusoidal_features(level, 8)
    e = leaky(feats @ net.embed.proj.weight.value.T + net.embed.proj.bias.value)
    x = conv(net.inc, np.concatenate([I_t, z], axis=1))
    skips = []
    for i in range(2):
        x = res(net.enc[i], x, e)
        skips.append(x)
        x = conv(net.down[i], x)
    x = res(net.mid, x, e)
    for i in (1, 0):
        x = conv(net.up[i], x.repeat(2, axis=2).repeat(2, axis=3))
        x = res(net.dec[i], np.concatenate([x, skips[i]], axis=1), e)
    want = conv(net.out, x)
    assert np.abs(net.forward(I_t, z, level) - want).max() <= 1e-10
