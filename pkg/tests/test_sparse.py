import numpy as np
import pytest
from scipy.optimize import nnls as scipy_nnls

from varimix.solvers import (
    SolverOptions,
    fcls,
    kkt_residual_l1,
    sparse_su_l0,
    sparse_su_l1,
)
from varimix.types import BudgetError, SpectralImage, SpectralLibrary

from oracles import cd_l1_oracle


def _image(y):
    n, l = y.shape
    return SpectralImage(y.reshape(1, n, l))


def _library(rng, sizes=(3, 3, 2), l=24):
    return SpectralLibrary.from_arrays(
        [f"c{i}" for i in range(len(sizes))],
        [rng.uniform(0.05, 1.0, size=(s, l)) for s in sizes],
    )


class TestSparseL1:
    def test_lambda_zero_matches_nnls(self, rng):
        lib = _library(rng)
        m, _ = lib.flatten()
        y = rng.uniform(0, 1, size=(30, 24))
        res = sparse_su_l1(_image(y), lib, SolverOptions(lambda_sparse=0.0))
        for i in range(30):
            ref, _ = scipy_nnls(m.T, y[i])
            assert np.max(np.abs(res.raw_abundances.data[i] - ref)) < 1e-6

    def test_large_lambda_zeroes_output(self, rng):
        lib = _library(rng)
        m, _ = lib.flatten()
        y = rng.uniform(0, 1, size=(10, 24))
        lam = float(np.max(y @ m.T)) * 1.0001
        res = sparse_su_l1(_image(y), lib, SolverOptions(lambda_sparse=lam))
        assert np.max(res.raw_abundances.data) == 0.0
        # empty rows are reported uniform and flagged
        assert res.solver_log.flags["uniform_rows"] == 10
        assert np.allclose(res.abundances.data, 1 / 3)

    def test_matches_coordinate_descent_oracle(self, rng):
        lib = _library(rng)
        m, _ = lib.flatten()
        y = rng.uniform(0, 1, size=(12, 24))
        lam = 0.02
        res = sparse_su_l1(_image(y), lib, SolverOptions(lambda_sparse=lam))
        for i in range(12):
            oracle = cd_l1_oracle(y[i], m.T, lam)
            assert np.max(np.abs(res.raw_abundances.data[i] - oracle)) < 1e-6

    def test_single_column_pixel_mass(self, rng):
        lib = _library(rng)
        y = lib.classes[1].signatures[0].copy()
        lam = 1e-4 * float(y @ y)
        res = sparse_su_l1(_image(y[None, :]), lib, SolverOptions(lambda_sparse=lam))
        assert res.abundances.data[0, 1] >= 0.95

    def test_kkt_residuals(self, rng):
        lib = _library(rng)
        m, _ = lib.flatten()
        y = rng.uniform(0, 1, size=(40, 24))
        lam = 0.01
        res = sparse_su_l1(_image(y), lib, SolverOptions(lambda_sparse=lam))
        act, inact, scale = kkt_residual_l1(y, m.T, res.raw_abundances.data, lam)
        assert act <= 1e-5 * scale
        assert inact <= 1e-5 * scale

    def test_raw_flag_and_collapse(self, rng):
        lib = _library(rng)
        y = rng.uniform(0, 1, size=(5, 24))
        res = sparse_su_l1(_image(y), lib, SolverOptions(lambda_sparse=1e-3))
        assert not res.raw_abundances.sum_to_one
        assert res.abundances.sum_to_one
        assert np.max(np.abs(res.abundances.data.sum(axis=1) - 1)) < 1e-9
        assert res.endmembers is not None


class TestSparseL0:
    def test_full_support_equals_fcls(self, rng):
        lib = _library(rng, sizes=(2, 2), l=15)
        m, _ = lib.flatten()
        y = rng.uniform(0, 1, size=(10, 15))
        res = sparse_su_l0(_image(y), lib, k=4, mode="exhaustive")
        r_f = fcls(_image(y), m.T)
        re_f = np.linalg.norm(y - r_f.abundances.data @ m, axis=1) / np.sqrt(15)
        re_0 = np.linalg.norm(y - res.raw_abundances.data @ m, axis=1) / np.sqrt(15)
        assert np.max(re_0 - re_f) < 1e-8

    def test_single_column_pixel(self, rng):
        lib = _library(rng)
        y = lib.classes[2].signatures[1][None, :].copy()
        res = sparse_su_l0(_image(y), lib, k=1, mode="greedy")
        col = 3 + 3 + 1     # flattened index of class 2, signature 1
        assert res.raw_abundances.data[0, col] == pytest.approx(1.0, abs=1e-9)

    def test_greedy_close_to_exhaustive(self, rng):
        lib = SpectralLibrary.from_arrays(
            [f"c{i}" for i in range(8)],
            [rng.uniform(0.05, 1.0, size=(1, 30)) for _ in range(8)],
        )
        y = rng.uniform(0, 1, size=(50, 30))
        greedy = sparse_su_l0(_image(y), lib, k=2, mode="greedy")
        exact = sparse_su_l0(_image(y), lib, k=2, mode="exhaustive")
        ok = greedy.per_pixel_re <= 1.05 * exact.per_pixel_re + 1e-12
        assert ok.mean() >= 0.8
        # exhaustive is a lower bound everywhere
        assert np.all(exact.per_pixel_re <= greedy.per_pixel_re + 1e-10)

    def test_support_budget(self, rng):
        lib = _library(rng)
        with pytest.raises(BudgetError):
            sparse_su_l0(_image(rng.uniform(0, 1, (2, 24))), lib, k=8,
                         mode="exhaustive", support_budget=10)

    def test_k_validation(self, rng):
        lib = _library(rng)
        with pytest.raises(ValueError):
            sparse_su_l0(_image(rng.uniform(0, 1, (2, 24))), lib, k=0)
        with pytest.raises(ValueError):
            sparse_su_l0(_image(rng.uniform(0, 1, (2, 24))), lib, k=99)
