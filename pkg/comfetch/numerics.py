# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0
# For details: see NOTICE.txt at the top of the source tree.

"""Dense linear algebra, statistics, and seed mixing for comfetch.

Matrices and vectors are numpy float64 arrays.  The helpers here check the
shapes and values that the rest of the package relies on, so that a bad
argument is reported as a `ContractViolation` near its source instead of as
a broadcasting surprise three modules away.

"""

import collections
import warnings

import numpy as np

from comfetch.exceptions import ComfetchWarning, ContractViolation


MASK64 = (1 << 64) - 1
GOLDEN64 = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def as_matrix(m, name="matrix"):
    """Return `m` as a finite 2-D float64 array, or raise ContractViolation."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ContractViolation(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractViolation(f"{name} has non-finite entries")
    return a


def as_vector(v, name="vector"):
    """Return `v` as a finite 1-D float64 array, or raise ContractViolation."""
    a = np.asarray(v, dtype=np.float64)
    if a.ndim != 1:
        raise ContractViolation(f"{name} must be 1-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractViolation(f"{name} has non-finite entries")
    return a


def matmul(a, b):
    """The matrix product `a`·`b`."""
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ContractViolation(
            f"Can't multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}"
        )
    return a @ b


def frobenius_norm(m):
    """The Frobenius norm of a matrix."""
    return float(np.sqrt(np.sum(np.square(as_matrix(m)))))


def l2_norm(v):
    """The Euclidean norm of a vector."""
    return float(np.sqrt(np.sum(np.square(as_vector(v)))))


PowerIteration = collections.namedtuple("PowerIteration", "value, converged, iterations")


def power_iteration(m, iters=10000, tol=1e-13, seed=0):
    """Estimate the largest singular value of `m` by power iteration on mᵀm.

    The estimate is the square root of the Rayleigh quotient.  Iteration
    stops when the estimate changes by no more than `tol` relative to its
    size.  Returns a `PowerIteration` tuple: (value, converged, iterations).

    """
    m = as_matrix(m)
    if m.size == 0:
        raise ContractViolation("Can't take the spectral norm of an empty matrix")
    if not np.any(m):
        return PowerIteration(0.0, True, 0)

    gram = m.T @ m
    v = np.random.default_rng(seed).standard_normal(gram.shape[0])
    v /= np.linalg.norm(v)
    estimate = 0.0
    for i in range(1, iters + 1):
        w = gram @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            # The start vector was in the null space: the estimate stands.
            return PowerIteration(np.sqrt(estimate), True, i)
        v = w / norm
        new_estimate = float(v @ gram @ v)
        if abs(new_estimate - estimate) <= tol * max(new_estimate, 1.0):
            return PowerIteration(np.sqrt(max(new_estimate, 0.0)), True, i)
        estimate = new_estimate
    return PowerIteration(np.sqrt(max(estimate, 0.0)), False, iters)


def spectral_norm(m, iters=10000, tol=1e-13):
    """The largest singular value of `m`, by power iteration.

    If the iteration doesn't converge, the best estimate is returned and a
    ComfetchWarning is issued.

    """
    result = power_iteration(m, iters=iters, tol=tol)
    if not result.converged:
        warnings.warn(
            f"Spectral norm didn't converge in {iters} iterations, using {result.value:.6g}",
            ComfetchWarning,
            stacklevel=2,
        )
    return float(result.value)


def median_of(values):
    """The median of `values`: the mean of the middle two for even counts."""
    a = np.asarray(values, dtype=np.float64).ravel()
    if a.size == 0:
        raise ContractViolation("Can't take the median of nothing")
    return float(np.median(a))


CoordinateMedian = collections.namedtuple("CoordinateMedian", "value, low, high")


def coordinate_median(stack):
    """Take the median along the first axis of `stack`, remembering the choice.

    Returns a `CoordinateMedian` of arrays shaped like ``stack[0]``: the
    median values, and the indices of the entries that produced them.  For
    an odd count `low` and `high` are the same index.  For an even count the
    value is the mean of the two middle entries, `low` and `high`.

    """
    stack = np.asarray(stack, dtype=np.float64)
    k = stack.shape[0]
    if k == 0:
        raise ContractViolation("Can't take the median of zero estimates")
    order = np.argsort(stack, axis=0, kind="stable")
    low = order[(k - 1) // 2]
    high = order[k // 2]
    low_val = np.take_along_axis(stack, low[None], axis=0)[0]
    if k % 2:
        return CoordinateMedian(low_val, low, high)
    high_val = np.take_along_axis(stack, high[None], axis=0)[0]
    return CoordinateMedian(0.5 * (low_val + high_val), low, high)


def splitmix64(x):
    """One step of the splitmix64 mixer over Python integers."""
    z = (x + GOLDEN64) & MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def splitmix64_array(x):
    """`splitmix64` applied elementwise to a uint64 array."""
    z = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = z + np.uint64(GOLDEN64)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def child_seed(root, *path):
    """Derive a 64-bit seed from `root` and a path of non-negative integers.

    Different paths give independent-looking seeds, and the derivation is
    the same on every platform.

    """
    seed = splitmix64(int(root) & MASK64)
    for part in path:
        if part < 0:
            raise ContractViolation(f"Seed path parts must be non-negative: {path!r}")
        seed = splitmix64(seed ^ splitmix64(int(part) & MASK64))
    return seed


def rng_for(root, *path):
    """A numpy Generator seeded by `child_seed(root, *path)`."""
    return np.random.default_rng(child_seed(root, *path))
