# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0
# For details: see NOTICE.txt at the top of the source tree.

"""Tests of comfetch/numerics.py"""

import re
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from comfetch.exceptions import ContractViolation
from comfetch.numerics import (
    child_seed, coordinate_median, frobenius_norm, l2_norm, matmul, median_of,
    power_iteration, rng_for, spectral_norm, splitmix64, splitmix64_array,
)
from comfetch.sketch import materialize, new_operator

from tests.comfetchtest import ComfetchTest
from tests.helpers import assert_comfetch_warnings, jacobi_top_eigenvalue, naive_matmul


class MatmulTest(ComfetchTest):
    """Tests of numerics.matmul."""

    run_in_temp_dir = False

    def test_against_triple_loop(self):
        rng = np.random.default_rng(7)
        for rows, inner, cols in [(1, 1, 1), (3, 5, 2), (6, 4, 7)]:
            a = rng.standard_normal((rows, inner))
            b = rng.standard_normal((inner, cols))
            assert np.max(np.abs(matmul(a, b) - naive_matmul(a, b))) <= 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ContractViolation, match=r"Can't multiply 2x3 by 2x3"):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_not_a_matrix(self):
        with pytest.raises(ContractViolation, match="must be 2-D"):
            matmul(np.ones(3), np.ones((3, 1)))

    def test_non_finite(self):
        a = np.ones((2, 2))
        a[0, 1] = np.nan
        with pytest.raises(ContractViolation, match="non-finite"):
            matmul(a, np.ones((2, 2)))


class NormTest(ComfetchTest):
    """Tests of the norms."""

    run_in_temp_dir = False

    def test_frobenius(self):
        assert frobenius_norm([[3.0, 0.0], [0.0, 4.0]]) == 5.0

    def test_l2(self):
        assert l2_norm([1.0, 2.0, 2.0]) == 3.0

    def test_spectral_norm_of_diagonal(self):
        assert abs(spectral_norm(np.diag([3.0, 1.0])) - 3.0) <= 1e-9

    def test_spectral_norm_against_jacobi(self):
        rng = np.random.default_rng(11)
        for shape in [(4, 4), (6, 3), (3, 6)]:
            m = rng.standard_normal(shape)
            want = np.sqrt(jacobi_top_eigenvalue(m.T @ m))
            assert abs(spectral_norm(m) - want) <= 1e-8 * want

    def test_spectral_norm_of_zero(self):
        result = power_iteration(np.zeros((3, 2)))
        assert result.value == 0.0
        assert result.converged

    def test_empty_matrix(self):
        with pytest.raises(ContractViolation, match="empty matrix"):
            spectral_norm(np.zeros((0, 3)))

    def test_non_convergence_warns(self):
        # Two nearly equal top singular values converge slowly.
        m = np.diag([1.0, 0.999999, 0.5])
        with warnings.catch_warnings(record=True) as warns:
            warnings.simplefilter("always")
            value = spectral_norm(m, iters=2, tol=0.0)
        msg = re.compile(r"^Spectral norm didn't converge in 2 iterations")
        assert_comfetch_warnings(warns, msg)
        assert 0.5 < value <= 1.0 + 1e-12

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 7), st.integers(1, 7), st.integers(0, 10**6))
    def test_spectral_at_most_frobenius(self, rows, cols, data_seed):
        m = np.random.default_rng(data_seed).standard_normal((rows, cols))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            assert spectral_norm(m) <= frobenius_norm(m) * (1 + 1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 30), st.integers(1, 30), st.integers(0, 2**64 - 1))
    def test_recovery_spectral_at_most_frobenius(self, d, c, seed):
        h = materialize(new_operator(d, min(c, d), seed))
        r = h.T @ h
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            assert spectral_norm(r) <= frobenius_norm(r) * (1 + 1e-12)


class MedianTest(ComfetchTest):
    """Tests of the medians."""

    run_in_temp_dir = False

    @pytest.mark.parametrize("values, median", [
        ([5], 5.0),
        ([3, 1, 2], 2.0),
        ([4, 1, 3, 2], 2.5),
        ([-1, -1, 7, 7], 3.0),
    ])
    def test_median_of(self, values, median):
        assert median_of(values) == median

    def test_median_of_nothing(self):
        with pytest.raises(ContractViolation):
            median_of([])

    def test_coordinate_median_odd(self):
        stack = np.array([[1.0, 9.0], [5.0, 2.0], [3.0, 4.0]])
        med = coordinate_median(stack)
        assert med.value.tolist() == [3.0, 4.0]
        assert med.low.tolist() == [2, 2]
        assert med.high.tolist() == med.low.tolist()

    def test_coordinate_median_even(self):
        stack = np.array([[1.0], [4.0], [2.0], [8.0]])
        med = coordinate_median(stack)
        assert med.value.tolist() == [3.0]
        assert med.low.tolist() == [2]
        assert med.high.tolist() == [1]

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=9))
    def test_coordinate_median_matches_numpy(self, values):
        stack = np.array(values)[:, None]
        assert coordinate_median(stack).value[0] == pytest.approx(np.median(values), abs=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(st.data(), st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=9))
    def test_median_of_ignores_order(self, data, values):
        shuffled = data.draw(st.permutations(values))
        assert median_of(shuffled) == median_of(values)

    @settings(max_examples=50, deadline=None)
    @given(st.data(), st.integers(1, 8), st.integers(1, 5), st.integers(0, 10**6))
    def test_coordinate_median_ignores_order(self, data, k, width, data_seed):
        stack = np.random.default_rng(data_seed).standard_normal((k, width))
        order = data.draw(st.permutations(range(k)))
        want = coordinate_median(stack)
        got = coordinate_median(stack[list(order)])
        assert np.array_equal(got.value, want.value)
        # The chosen indices point at the same entries after reordering.
        assert np.array_equal(np.take_along_axis(stack[list(order)], got.low[None], 0),
                              np.take_along_axis(stack, want.low[None], 0))


class SeedTest(ComfetchTest):
    """Tests of the seed mixing."""

    run_in_temp_dir = False

    def test_splitmix64_known_values(self):
        # The first outputs of the reference generator seeded with 0.
        assert splitmix64(0) == 0xE220A8397B1DCDAF

    def test_array_matches_scalar(self):
        xs = [0, 1, 2, 2**63, 2**64 - 1, 123456789]
        got = splitmix64_array(np.array(xs, dtype=np.uint64))
        assert [int(v) for v in got] == [splitmix64(x) for x in xs]

    def test_child_seeds_differ(self):
        seeds = {child_seed(0, a, b) for a in range(5) for b in range(5)}
        assert len(seeds) == 25
        assert child_seed(3, 1, 2) == child_seed(3, 1, 2)
        assert child_seed(3, 1, 2) != child_seed(3, 2, 1)

    def test_negative_path(self):
        with pytest.raises(ContractViolation, match="non-negative"):
            child_seed(0, -1)

    def test_rng_for_is_reproducible(self):
        assert rng_for(5, 1).random() == rng_for(5, 1).random()
        assert rng_for(5, 1).random() != rng_for(5, 2).random()
