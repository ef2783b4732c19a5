import numpy as np
import pytest

from lutamm.vq import Codebook


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_codebook(rng, n_c, c, v, scale=1.0):
    k = n_c * v
    return Codebook(rng.normal(scale=scale, size=(n_c, c, v)), input_dim=k)


def codeword_matrix(rng, codebook, m):
    """Rows assembled from the codebook's own codewords (lossless inputs)."""
    picks = rng.integers(0, codebook.c, size=(m, codebook.n_c))
    parts = [codebook.centroids[k][picks[:, k]] for k in range(codebook.n_c)]
    return np.concatenate(parts, axis=1)[:, : codebook.input_dim]


def gemm_loops_permuted(a, b):
    """Independent oracle: naive triple loop with permuted (n, k, m) order."""
    m, k_dim = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for col in range(n):
        for k in range(k_dim):
            for row in range(m):
                out[row, col] += a[row, k] * b[k, col]
    return out
