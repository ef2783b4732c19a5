import numpy as np
import pytest

from conftest import codeword_matrix, gemm_loops_permuted, random_codebook
from lutamm.errors import CorruptionError, InvalidInputError
from lutamm.metrics import DistPrecision, LutPrecision, SimilarityMetric
from lutamm.vq import (
    AmmError,
    Codebook,
    ProblemShape,
    VQConfig,
    amm_error,
    build_lut,
    encode,
    exact_gemm,
    fit_codebook,
    lut_gemm,
    nchw_to_gemm,
    partition,
)


class TestPartition:
    def test_768_by_4_gives_192_groups(self, rng):
        a = rng.normal(size=(3, 768))
        assert partition(a, 4).shape == (192, 3, 4)

    def test_exact_division_no_padding(self, rng):
        a = rng.normal(size=(2, 4))
        groups = partition(a, 4)
        assert groups.shape == (1, 2, 4)
        np.testing.assert_array_equal(groups[0], a)

    def test_ragged_tail_zero_padded(self, rng):
        a = rng.normal(size=(2, 5))
        groups = partition(a, 4)
        assert groups.shape == (2, 2, 4)
        np.testing.assert_array_equal(groups[1][:, 1:], 0.0)
        np.testing.assert_array_equal(groups[1][:, 0], a[:, 4])

    def test_padded_entries_do_not_perturb_products(self, rng):
        # padded coordinates multiply padded (zero) weight rows
        a = rng.normal(size=(4, 5))
        b = rng.normal(size=(5, 3))
        cfg = VQConfig(v=4, c=3)
        cb = fit_codebook(a, cfg, seed=0)
        table = build_lut(cb, b)
        # lossless on its own codewords even with a ragged final subspace
        aw = cb.reconstruct(encode(a, cb))
        np.testing.assert_allclose(
            lut_gemm(encode(a, cb), table), exact_gemm(aw, b), rtol=0, atol=1e-5
        )

    def test_subvector_longer_than_row(self, rng):
        a = rng.normal(size=(2, 3))
        groups = partition(a, 5)
        assert groups.shape == (1, 2, 5)
        np.testing.assert_array_equal(groups[0][:, 3:], 0.0)

    def test_empty_matrix_rejected(self):
        with pytest.raises(InvalidInputError):
            partition(np.zeros((0, 4)), 2)
        with pytest.raises(InvalidInputError):
            partition(np.zeros((4, 4)), 0)


class TestEncode:
    def test_exact_centroid_hits_index_with_zero_distance(self, rng):
        cb = random_codebook(rng, n_c=3, c=5, v=2)
        for metric in SimilarityMetric:
            a = codeword_matrix(rng, cb, m=6)
            idx = encode(a, cb, metric)
            np.testing.assert_array_equal(cb.reconstruct(idx), a)

    def test_metrics_legitimately_disagree(self):
        # subvector (0,0) against j0=(3,0), j1=(2,2):
        #   squared-L2: 9 vs 8 -> j1; L1: 3 vs 4 -> j0; Chebyshev: 3 vs 2 -> j1
        cb = Codebook(np.array([[[3.0, 0.0], [2.0, 2.0]]]), input_dim=2)
        a = np.zeros((1, 2))
        assert encode(a, cb, SimilarityMetric.L2)[0, 0] == 1
        assert encode(a, cb, SimilarityMetric.L1)[0, 0] == 0
        assert encode(a, cb, SimilarityMetric.CHEBYSHEV)[0, 0] == 1

    def test_nearest_of_three(self):
        cb = Codebook(np.array([[[0.0, 0.0], [1.0, 2.0], [3.0, 3.0]]]), input_dim=2)
        idx = encode(np.array([[1.1, 1.9]]), cb, SimilarityMetric.L2)
        assert idx[0, 0] == 1  # squared distance 0.02

    def test_tie_breaks_to_lowest_index(self):
        cb = Codebook(np.array([[[1.0], [1.0], [0.0]]]), input_dim=1)
        assert encode(np.array([[1.0]]), cb)[0, 0] == 0

    def test_shape_mismatch_rejected(self, rng):
        cb = random_codebook(rng, n_c=2, c=3, v=2)
        with pytest.raises(InvalidInputError):
            encode(rng.normal(size=(2, 5)), cb)

    def test_bf16_precision_still_lossless_on_codewords(self, rng):
        cb = random_codebook(rng, n_c=2, c=4, v=3)
        a = codeword_matrix(rng, cb, m=5)
        idx32 = encode(a, cb, dist_precision=DistPrecision.FP32)
        idx16 = encode(a, cb, dist_precision=DistPrecision.BF16)
        np.testing.assert_array_equal(cb.reconstruct(idx32), a)
        assert idx16.shape == idx32.shape


class TestBuildLut:
    def test_zero_centroid_gives_zero_entries(self, rng):
        z = rng.normal(size=(1, 3, 2))
        z[0, 1] = 0.0
        cb = Codebook(z, input_dim=2)
        table = build_lut(cb, rng.normal(size=(2, 4)))
        np.testing.assert_array_equal(table.dense()[0, 1], 0.0)

    def test_scalar_case(self):
        cb = Codebook(np.array([[[2.0]]]), input_dim=1)
        table = build_lut(cb, np.array([[3.0]]))
        assert table.dense()[0, 0, 0] == 6.0

    def test_size_bits_formula(self, rng):
        cb = random_codebook(rng, n_c=6, c=4, v=2)
        table = build_lut(cb, rng.normal(size=(12, 5)))
        assert table.size_bits(8) == 5 * 4 * 6 * 8

    def test_int8_scales_are_per_subspace_column_group(self, rng):
        cb = random_codebook(rng, n_c=3, c=4, v=2)
        b = rng.normal(size=(6, 7))
        table = build_lut(cb, b, LutPrecision.INT8, tile_n=4)
        assert table.entries.dtype == np.int8
        assert table.scales.shape == (3, 2)  # ceil(7 / 4) groups
        exact = build_lut(cb, b).dense()
        err = np.abs(table.dense() - exact).max()
        bound = (table.scales.max() / 2) * 1.001
        assert err <= bound

    def test_weight_row_mismatch_rejected(self, rng):
        cb = random_codebook(rng, n_c=2, c=3, v=2)
        with pytest.raises(InvalidInputError):
            build_lut(cb, rng.normal(size=(5, 3)))


class TestLutGemm:
    def test_lossless_on_codewords(self, rng):
        cb = random_codebook(rng, n_c=4, c=6, v=3)
        a = codeword_matrix(rng, cb, m=9)
        b = rng.normal(size=(12, 7))
        approx = lut_gemm(encode(a, cb), build_lut(cb, b))
        exact = exact_gemm(a, b)
        rel = np.linalg.norm(approx - exact) / np.linalg.norm(exact)
        assert rel <= 1e-5

    def test_single_entry_table_forces_output(self, rng):
        # one subspace, one centroid (1,1) against weights (2,3): every row -> 5
        cb = Codebook(np.array([[[1.0, 1.0]]]), input_dim=2)
        table = build_lut(cb, np.array([[2.0], [3.0]]))
        a = rng.normal(size=(4, 2))
        np.testing.assert_allclose(lut_gemm(encode(a, cb), table), 5.0, rtol=1e-6)

    def test_error_shrinks_with_more_centroids(self, rng):
        # empirical oracle comparison, averaged over seeds
        mean_err = {}
        for c in (2, 4, 8):
            errs = []
            for seed in range(6):
                local = np.random.default_rng(seed)
                a = local.normal(size=(24, 8))
                b = local.normal(size=(8, 6))
                cfg = VQConfig(v=2, c=c)
                cb = fit_codebook(a, cfg, seed=seed)
                errs.append(amm_error(a, b, cfg, cb).frobenius_rel)
            mean_err[c] = np.mean(errs)
        assert mean_err[2] > mean_err[4] > mean_err[8]

    def test_out_of_range_index_is_corruption(self, rng):
        cb = random_codebook(rng, n_c=2, c=3, v=2)
        table = build_lut(cb, rng.normal(size=(4, 3)))
        bad = np.array([[0, 3]])
        with pytest.raises(CorruptionError):
            lut_gemm(bad, table)

    def test_matches_reconstruct_then_multiply(self, rng):
        cb = random_codebook(rng, n_c=3, c=4, v=2)
        a = rng.normal(size=(5, 6))
        b = rng.normal(size=(6, 4))
        idx = encode(a, cb)
        approx = lut_gemm(idx, build_lut(cb, b))
        surrogate = exact_gemm(cb.reconstruct(idx), b)
        rel = np.linalg.norm(approx - surrogate) / np.linalg.norm(surrogate)
        assert rel <= 1e-5


class TestExactGemm:
    def test_identity(self, rng):
        b = rng.normal(size=(4, 3))
        np.testing.assert_array_equal(exact_gemm(np.eye(4), b), b)

    def test_scalar(self):
        assert exact_gemm(np.array([[2.0]]), np.array([[3.0]]))[0, 0] == 6.0

    def test_against_permuted_loop_oracle(self, rng):
        a = rng.normal(size=(8, 8))
        b = rng.normal(size=(8, 8))
        np.testing.assert_allclose(exact_gemm(a, b), gemm_loops_permuted(a, b), atol=1e-12)

    def test_shape_mismatch(self, rng):
        with pytest.raises(InvalidInputError):
            exact_gemm(rng.normal(size=(2, 3)), rng.normal(size=(4, 2)))


class TestAmmError:
    def test_lossless_case(self, rng):
        cb = random_codebook(rng, n_c=2, c=4, v=2)
        a = codeword_matrix(rng, cb, m=6)
        b = rng.normal(size=(4, 3))
        err = amm_error(a, b, VQConfig(v=2, c=4), cb)
        assert err.frobenius_rel <= 1e-5

    def test_single_centroid_equals_rank_collapse_oracle(self, rng):
        a = rng.normal(size=(10, 6))
        b = rng.normal(size=(6, 4))
        cfg = VQConfig(v=2, c=1)
        cb = fit_codebook(a, cfg, seed=0)
        err = amm_error(a, b, cfg, cb)
        # oracle: every subvector collapses to the per-subspace mean
        collapsed = np.tile(
            np.concatenate([cb.centroids[k][0] for k in range(3)]), (10, 1)
        )
        exact = exact_gemm(a, b)
        oracle = np.linalg.norm(exact_gemm(collapsed, b) - exact) / np.linalg.norm(exact)
        assert err.frobenius_rel == pytest.approx(oracle, rel=1e-5)

    def test_int8_never_beats_fp32_on_average(self):
        fp32_errs, int8_errs = [], []
        for seed in range(20):
            local = np.random.default_rng(seed)
            a = local.normal(size=(16, 8))
            b = local.normal(size=(8, 5))
            cb = fit_codebook(a, VQConfig(v=2, c=4), seed=seed)
            fp32_errs.append(amm_error(a, b, VQConfig(v=2, c=4), cb).frobenius_rel)
            int8_errs.append(
                amm_error(a, b, VQConfig(v=2, c=4, lut_precision="int8"), cb).frobenius_rel
            )
        assert np.mean(int8_errs) >= np.mean(fp32_errs)

    def test_reduced_precision_pair_still_works(self, rng):
        # bf16 distances plus int8 tables: the quantization-study setting
        a = rng.normal(size=(12, 8))
        b = rng.normal(size=(8, 5))
        cfg = VQConfig(v=2, c=8, dist_precision="bf16", lut_precision="int8")
        cb = fit_codebook(a, cfg, seed=0)
        err = amm_error(a, b, cfg, cb)
        assert np.isfinite(err.frobenius_rel) and err.frobenius_rel < 1.0

    def test_zero_norm_exact_result_is_flagged(self, rng):
        cb = random_codebook(rng, n_c=1, c=2, v=2)
        a = rng.normal(size=(3, 2))
        err = amm_error(a, np.zeros((2, 2)), VQConfig(v=2, c=2), cb)
        assert err.exact_norm_zero and err.frobenius_rel is None
        assert isinstance(err, AmmError)


class TestCodebook:
    def test_json_round_trip(self, rng):
        cb = random_codebook(rng, n_c=2, c=3, v=2)
        back = Codebook.from_json(cb.to_json())
        np.testing.assert_array_equal(back.centroids, cb.centroids)
        assert back.input_dim == cb.input_dim

    def test_invariants_enforced(self, rng):
        with pytest.raises(InvalidInputError):
            Codebook(np.full((1, 2, 2), np.nan), input_dim=2)
        with pytest.raises(InvalidInputError):
            Codebook(rng.normal(size=(2, 2, 2)), input_dim=2)  # wrong n_c


class TestConfigTypes:
    def test_problem_shape_invariants(self):
        with pytest.raises(InvalidInputError):
            ProblemShape(0, 1, 1)

    def test_vq_config_derived_quantities(self):
        cfg = VQConfig(v=4, c=32)
        assert cfg.num_subspaces(768) == 192
        assert cfg.index_bits == 5
        assert cfg.equivalent_bits == pytest.approx(5 / 4)
        with pytest.raises(InvalidInputError):
            VQConfig(v=0, c=2)


def test_nchw_to_gemm_patch_layout():
    x = np.arange(16, dtype=float).reshape(1, 1, 4, 4)
    cols = nchw_to_gemm(x, 2, 2)
    assert cols.shape == (9, 4)
    np.testing.assert_array_equal(cols[0], [0, 1, 4, 5])
    np.testing.assert_array_equal(cols[-1], [10, 11, 14, 15])
