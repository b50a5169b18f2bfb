"""The numba kernels and the numpy fallbacks compute the same thing."""

import os
import subprocess
import sys

import numpy as np
import pytest

from uada import _kernels as k

needs_numba = pytest.mark.skipif(not k.HAVE_NUMBA, reason="numba not installed")


def _im2col_loops(x, ksize, pad):
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = h + 2 * pad - ksize + 1, w + 2 * pad - ksize + 1
    out = np.zeros((b * ho * wo, c * ksize * ksize))
    for n in range(b):
        for oy in range(ho):
            for ox in range(wo):
                out[(n * ho + oy) * wo + ox] = xp[n, :, oy:oy + ksize, ox:ox + ksize].reshape(-1)
    return out


def test_im2col_matches_loops(rng):
    x = rng.random((2, 3, 5, 6))
    assert np.array_equal(k.im2col_np(x, 3, 1), _im2col_loops(x, 3, 1))


def test_col2im_is_adjoint_of_im2col(rng):
    # <im2col(x), y> == <x, col2im(y)>
    x = rng.random((2, 3, 6, 5))
    cols = k.im2col_np(x, 3, 1)
    y = rng.random(cols.shape)
    assert np.isclose((cols * y).sum(), (x * k.col2im_np(y, x.shape, 3, 1)).sum())


def test_maxpool_first_max_wins():
    x = np.ones((1, 1, 2, 2))
    out, arg = k.maxpool2_np(x)
    assert out[0, 0, 0, 0] == 1 and arg[0, 0, 0, 0] == 0
    g = k.maxpool2_backward_np(np.full((1, 1, 1, 1), 2.0), arg, x.shape)
    assert g[0, 0].tolist() == [[2.0, 0.0], [0.0, 0.0]]


@needs_numba
def test_backends_agree(rng):
    x = rng.random((3, 4, 8, 8))
    assert np.array_equal(k.im2col_np(x, 3, 1), k.im2col_nb(x, 3, 1))
    cols = rng.random((3 * 64, 36))
    assert np.allclose(k.col2im_np(cols, x.shape, 3, 1), k.col2im_nb(cols, x.shape, 3, 1),
                       rtol=1e-13, atol=1e-13)
    out_np, arg_np = k.maxpool2_np(x)
    out_nb, arg_nb = k.maxpool2_nb(x)
    assert np.array_equal(out_np, out_nb) and np.array_equal(arg_np, arg_nb)
    g = rng.random(out_np.shape)
    assert np.array_equal(k.maxpool2_backward_np(g, arg_np, x.shape),
                          k.maxpool2_backward_nb(g, arg_nb, x.shape))
    img = rng.random((2, 3, 8, 8)).astype(np.float32)
    sy = rng.integers(-1, 8, size=(8, 8))
    sx = np.where(sy < 0, -1, rng.integers(0, 8, size=(8, 8)))
    assert np.array_equal(k.gather_np(img, sy, sx), k.gather_nb(img, sy, sx))


def test_env_flag_selects_numpy():
    env = dict(os.environ, UADA_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", "import uada; print(uada.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


@needs_numba
def test_training_identical_across_backends(tmp_path):
    """A short run gives the same per-epoch metrics with either backend."""
    script = (
        "import sys; from uada.config import load_config; from uada.trainer import train;"
        "cfg = load_config(None, ['data.train_count=64', 'data.test_count=32', 'train.epochs=1',"
        "'train.batch_size=32']);"
        "r = train(cfg); print(r.model_checksum); print(r.epochs[-1].train_loss)"
    )
    outs = []
    for flag in ("0", "1"):
        env = dict(os.environ, UADA_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", script], env=env, capture_output=True,
                             text=True, check=True)
        outs.append(res.stdout.split())
    assert np.isclose(float(outs[0][1]), float(outs[1][1]), rtol=1e-9)
