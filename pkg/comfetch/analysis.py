# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0
# For details: see NOTICE.txt at the top of the source tree.

"""Executable checks of the guarantees behind sketched training.

* `prediction_error_bound` compares the layer-by-layer error bound for a
  ReLU network with recovered weights against the actual output error.
* `hcs_recovery_check` measures how often median-of-k recovery misses an
  entry by more than ε.
* `convergence_report` summarizes a run's squared gradient norms.

"""

import math

import numpy as np

from comfetch.debug import SimpleReprMixin
from comfetch.exceptions import ContractViolation
from comfetch.nn import (
    FC, NetworkSpec, fc_forward, init_network, sketch_network, surrogate_network,
)
from comfetch.numerics import child_seed, l2_norm, rng_for, spectral_norm
from comfetch.sketch import (
    MultiSketch, identity_operator, materialize, new_multi_sketch, recover_median,
    sketch_matrix,
)


# The constant in c = C·‖W‖_F²/ε², calibrated so that median recovery with
# k = 9 meets a 5% per-entry failure rate at d = 256, ε = 0.1.
SKETCH_LENGTH_CONSTANT = 100


def sketch_sizing(d, eps, delta, norm_sq=1.0, constant=SKETCH_LENGTH_CONSTANT):
    """(c, k) for recovery within `eps` with probability 1 - `delta`.

    c = ⌈constant·norm_sq/ε²⌉ capped at d, and k = ⌈ln(d/δ)⌉.

    """
    if eps <= 0 or not 0 < delta <= 1:
        raise ContractViolation(f"Need eps > 0 and 0 < delta <= 1, got {eps}, {delta}")
    c = min(d, max(1, math.ceil(constant * norm_sq / eps ** 2)))
    k = max(1, math.ceil(math.log(d / delta)))
    return c, k


def theoretical_step_size(c, d, momentum, depth, rounds):
    """η = c⁸(1-ρ)/(2d⁸L²√T), the step size the convergence rate assumes."""
    return c ** 8 * (1 - momentum) / (2 * d ** 8 * depth ** 2 * math.sqrt(rounds))


class ErrorBoundReport(SimpleReprMixin):
    """Both sides of the prediction-error bound for one input."""

    def __init__(self, lambdas, lambda_hats, eps, dim, terms, linear_terms, empirical, layer_eps):
        self.lambdas = lambdas
        self.lambda_hats = lambda_hats
        self.eps = eps
        self.dim = dim
        self.terms = terms
        self.bound = float(sum(terms))
        self.linear_terms = linear_terms
        self.linear_bound = float(sum(linear_terms))
        self.empirical = empirical
        self.layer_eps = layer_eps
        self.holds = empirical <= self.bound * (1 + 1e-12)

    def as_dict(self):
        return {
            "lambdas": self.lambdas,
            "lambda_hats": self.lambda_hats,
            "eps": self.eps,
            "dim": self.dim,
            "terms": self.terms,
            "bound": self.bound,
            "linear_bound": self.linear_bound,
            "empirical": self.empirical,
            "layer_eps": self.layer_eps,
            "holds": self.holds,
        }


def bound_terms(lambdas, lambda_hats, x_norm, dim, eps, power=2):
    """g_j = (λ_j···λ_L)·‖x‖·d^power·ε²·(λ̂_1···λ̂_{j-1}) for j = 1..L."""
    terms = []
    depth = len(lambdas)
    for j in range(depth):
        after = math.prod(lambdas[j:])
        before = math.prod(lambda_hats[:j])
        terms.append(after * x_norm * dim ** power * eps ** 2 * before)
    return terms


def recovery_spectral_norm(ms):
    """The largest σ_max of HᵀH over the operators of a `MultiSketch`.

    Power iteration on the materialized matrix, checked against the exact
    value (the largest bucket size).

    """
    best = 0.0
    for op in ms:
        h = materialize(op)
        estimate = spectral_norm(h.T @ h)
        exact = op.recovery_spectral_norm()
        if abs(estimate - exact) > 1e-6 * max(1.0, exact):
            raise ContractViolation(
                f"Power iteration gave ‖HᵀH‖₂ = {estimate}, bucket sizes say {exact}"
            )
        best = max(best, estimate)
    return best


def prediction_error_bound(net, sknet, x, eps=None):
    """Compare ‖ỹ_L - ŷ_L‖ with the bound Σ g_j(x) for a fully-connected net.

    ŷ_L is the last hidden activation of `net`, ỹ_L that of the network with
    recovered weights (median recovery when there are several sketches).
    `eps` is the per-entry recovery accuracy; by default it is measured as
    the largest entry error over all layers.

    """
    if net.spec.kind != FC or sknet.spec.kind != FC:
        raise ContractViolation("The prediction-error bound is only defined for FC networks")
    recovered = surrogate_network(sknet)
    layer_eps = [
        float(np.max(np.abs(w_hat - w))) for w_hat, w in zip(recovered.weights, net.weights)
    ]
    if eps is None:
        eps = max(layer_eps)
    lambdas = [spectral_norm(w) for w in net.weights]
    lambda_hats = [recovery_spectral_norm(ms) for ms in sknet.multi_sketches()]
    dim = max(max(shape) for shape in net.spec.layer_shapes())
    x = np.asarray(x, dtype=np.float64)
    x_norm = l2_norm(x)
    _, exact_tape = fc_forward(net, x)
    _, approx_tape = fc_forward(recovered, x)
    empirical = l2_norm((approx_tape.activations[-1] - exact_tape.activations[-1]).ravel())
    return ErrorBoundReport(
        lambdas=lambdas,
        lambda_hats=lambda_hats,
        eps=eps,
        dim=dim,
        terms=bound_terms(lambdas, lambda_hats, x_norm, dim, eps, power=2),
        linear_terms=bound_terms(lambdas, lambda_hats, x_norm, dim, eps, power=1),
        empirical=empirical,
        layer_eps=layer_eps,
    )


def hcs_recovery_check(d, c, k, trials, eps, seed=0, norm=1.0, cols=4, identity_hash=False):
    """The fraction of entries that median-of-k recovery gets wrong by more than `eps`.

    Each trial draws a random d×cols matrix with Frobenius norm `norm`,
    sketches it k times, and recovers it with the coordinate-wise median.
    Trial i uses the same operators for every k, so runs with different k
    are paired.

    """
    if trials < 100:
        raise ContractViolation(f"Need at least 100 trials, got {trials}")
    failures = 0
    for trial in range(trials):
        rng = rng_for(seed, 5, trial)
        w = rng.standard_normal((d, cols))
        w *= norm / np.sqrt(np.sum(w * w))
        if identity_hash:
            ms = MultiSketch([identity_operator(d)] * k)
        else:
            ms = new_multi_sketch(d, c, child_seed(seed, 6, trial), k)
        w_hat = recover_median(ms, [sketch_matrix(op, w) for op in ms])
        failures += int(np.count_nonzero(np.abs(w_hat - w) > eps))
    return failures / (trials * d * cols)


class ConvergenceReport(SimpleReprMixin):
    """Squared gradient norms per round, their running minimum, and its trend."""

    def __init__(self, series, running_min, slope):
        self.series = series
        self.running_min = running_min
        self.slope = slope

    def as_dict(self):
        return {
            "series": list(self.series),
            "running_min": list(self.running_min),
            "slope": self.slope,
        }


def convergence_report(history):
    """Summarize a run: `history` is RoundReports or squared gradient norms.

    The slope is the least-squares fit of log(running min) against log(t).

    """
    series = [float(getattr(h, "true_grad_norm_sq", h)) for h in history]
    if not series:
        raise ContractViolation("Can't report on an empty history")
    running_min = np.minimum.accumulate(np.array(series))
    assert np.all(np.diff(running_min) <= 0)
    if len(series) < 2:
        slope = 0.0
    else:
        t = np.arange(1, len(series) + 1, dtype=np.float64)
        logs = np.log(np.maximum(running_min, np.finfo(np.float64).tiny))
        slope = float(np.polyfit(np.log(t), logs, 1)[0])
    return ConvergenceReport(series, [float(v) for v in running_min], slope)


class BoundCheck(SimpleReprMixin):
    """How often the prediction-error bound failed over random networks."""

    def __init__(self, trials, violations, allowed, c, k):
        self.trials = trials
        self.violations = violations
        self.rate = violations / trials
        self.allowed = allowed
        self.c = c
        self.k = k
        self.passed = self.rate <= allowed


def bound_violation_rate(trials, dim, depth, eps, delta, seed=0):
    """Monte-Carlo check of the prediction-error bound on random FC nets.

    Each trial draws a dim→[dim]*depth→1 network and an input, sizes the
    sketches with `sketch_sizing` for (`eps`, `delta`), and compares the
    output error with the bound at accuracy `eps`.  The allowed rate is the
    union bound 1-(1-δ)^depth plus three standard errors.

    """
    if trials < 1:
        raise ContractViolation(f"Need at least one trial, got {trials}")
    spec = NetworkSpec.fc(dim, [dim] * depth)
    violations = 0
    c = k = None
    for trial in range(trials):
        net = init_network(spec, child_seed(seed, 7, trial))
        norm_sq = max(float(np.sum(w * w)) for w in net.weights)
        c, k = sketch_sizing(dim, eps, delta, norm_sq=norm_sq)
        sketches = [
            new_multi_sketch(rows, c, child_seed(seed, 8, trial, layer), k)
            for layer, (rows, _) in enumerate(spec.layer_shapes())
        ]
        sknet = sketch_network(net, sketches)
        x = rng_for(seed, 9, trial).standard_normal(dim)
        if not prediction_error_bound(net, sknet, x, eps=eps).holds:
            violations += 1
    p = 1 - (1 - delta) ** depth
    allowed = p + 3 * math.sqrt(p * (1 - p) / trials)
    return BoundCheck(trials, violations, allowed, c, k)
