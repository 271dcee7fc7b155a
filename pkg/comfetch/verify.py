# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0
# For details: see NOTICE.txt at the top of the source tree.

"""The invariant and oracle suite behind ``comfetch verify``.

Every check builds its own small problem from a seed, runs it, and says
whether the guarantee held.  The quick suite finishes in seconds; `full`
runs the checks at their acceptance sizes.

"""

import collections
import time

import numpy as np

from comfetch.analysis import (
    bound_violation_rate, hcs_recovery_check, prediction_error_bound, sketch_sizing,
)
from comfetch.data import partition, synthetic_teacher_fc
from comfetch.debug import write_formatted_info
from comfetch.fed import BASELINE, COMFETCH, ServerOptState, ef_topk_step, make_server, run_round
from comfetch.ledger import DOWN, UP, CommLedger
from comfetch.nn import (
    Loss, NetworkSpec, NetworkState, backward_sketched, fc_forward, fc_forward_sketched,
    finite_difference_gradient, init_network, sketch_network, two_sided_backward,
)
from comfetch.numerics import child_seed, matmul, rng_for, spectral_norm
from comfetch.sketch import (
    SketchedWeight, apply, apply_transpose, materialize, new_multi_sketch, new_operator,
    two_sided_sketch,
)


CheckResult = collections.namedtuple("CheckResult", "name, passed, detail, seconds")


def check_matmul(seed, full):
    rng = rng_for(seed, 20)
    a = rng.standard_normal((5, 7))
    b = rng.standard_normal((7, 3))
    got = matmul(a, b)
    worst = 0.0
    for i in range(5):
        for j in range(3):
            want = sum(a[i, k] * b[k, j] for k in range(7))
            worst = max(worst, abs(got[i, j] - want))
    return worst <= 1e-12, f"max error {worst:.3g}"


def check_spectral_norm(seed, full):
    rng = rng_for(seed, 21)
    m = rng.standard_normal((6, 4))
    want = float(np.linalg.svd(m, compute_uv=False)[0])
    got = spectral_norm(m)
    diag = spectral_norm(np.diag([3.0, 1.0]))
    ok = abs(got - want) <= 1e-8 * want and abs(diag - 3.0) <= 1e-9
    return ok, f"random {got:.12g} vs {want:.12g}, diag(3,1) {diag:.12g}"


def check_sketch_adjoint(seed, full):
    worst = 0.0
    for trial in range(20):
        rng = rng_for(seed, 22, trial)
        op = new_operator(16, 5, child_seed(seed, 22, trial))
        x = rng.standard_normal(16)
        y = rng.standard_normal(5)
        h = materialize(op)
        worst = max(
            worst,
            abs(apply(op, x) @ y - x @ apply_transpose(op, y)),
            float(np.max(np.abs(h @ x - apply(op, x)))),
        )
    return worst <= 1e-12, f"max error {worst:.3g}"


def check_wire_format(seed, full):
    op = new_operator(12, 4, child_seed(seed, 23))
    w = rng_for(seed, 23).standard_normal((12, 3))
    sw = SketchedWeight.from_weight(op, w)
    back = SketchedWeight.from_bytes(sw.to_bytes())
    same_op = (
        back.op.descriptor == op.descriptor
        and np.array_equal(back.op.buckets, op.buckets)
        and np.array_equal(back.op.signs, op.signs)
    )
    same_payload = np.array_equal(back.payload, sw.payload.astype(np.float32))
    return same_op and same_payload, f"{len(sw.to_bytes())} bytes"


def check_gradient_identity(seed, full):
    """Hᵀ times the gradient by HW equals the finite-difference gradient by W."""
    nets = 50 if full else 8
    loss = Loss("squared")
    worst = 0.0
    for trial in range(nets):
        rng = rng_for(seed, 24, trial)
        depth = int(rng.integers(1, 4))
        d = int(rng.integers(2, 9)) * 2
        spec = NetworkSpec.fc(d, [d] * depth)
        net = init_network(spec, child_seed(seed, 24, trial))
        ops = [new_operator(d, d // 2, child_seed(seed, 25, trial, i)) for i in range(depth)]
        x = rng.standard_normal((3, d))
        y = rng.standard_normal(3)
        sknet = sketch_network(net, ops)
        _, tape = fc_forward_sketched(sknet, x)
        grads = backward_sketched(sknet, tape, y, loss)
        layer = int(rng.integers(0, depth))
        op = ops[layer]
        analytic = materialize(op).T @ grads.hidden[layer]

        def surrogate_loss(w, layer=layer):
            weights = list(net.weights)
            weights[layer] = w
            state = NetworkState(spec, weights, net.output)
            pred, _ = fc_forward_sketched(sketch_network(state, ops), x)
            return loss.value(pred, y)

        numeric = finite_difference_gradient(surrogate_loss, net.weights[layer], h=1e-6)
        scale = max(float(np.max(np.abs(numeric))), 1e-4)
        worst = max(worst, float(np.max(np.abs(analytic - numeric))) / scale)
    return worst <= 1e-5, f"max relative error {worst:.3g} over {nets} nets"


def check_two_sided(seed, full):
    worst = 0.0
    for trial in range(100):
        rng = rng_for(seed, 26, trial)
        op1 = new_operator(4, 2, child_seed(seed, 26, trial, 1))
        op2 = new_operator(4, 2, child_seed(seed, 26, trial, 2))
        g = rng.standard_normal((2, 2))
        h1, h2 = materialize(op1), materialize(op2)
        kron = np.kron(h2.T, h1.T) @ g.ravel(order="F")
        got = two_sided_backward(op1, op2, g)
        worst = max(worst, float(np.max(np.abs(got - kron.reshape((4, 4), order="F")))))
        w = rng.standard_normal((4, 4))
        worst = max(worst, float(np.max(np.abs(two_sided_sketch(op1, op2, w) - h1 @ w @ h2.T))))
    return worst <= 1e-12, f"max error {worst:.3g}"


def check_recovery(seed, full):
    d = 256 if full else 64
    trials = 1000 if full else 100
    c, _ = sketch_sizing(d, 0.1, 0.05)
    rate = hcs_recovery_check(d, c, 9, trials, 0.1, seed=seed)
    return rate <= 0.05, f"failure rate {rate:.4f} at d={d} c={c} k=9 over {trials} trials"


def check_ef_degeneracy(seed, full):
    """With Top-k keeping everything and no momentum, the step is plain SGD."""
    rng = rng_for(seed, 27)
    shapes = [(6, 4), (3, 6)]
    opt = ServerOptState(shapes, 0.05, 0.0, 1.0)
    weights = [rng.standard_normal(s) for s in shapes]
    sgd = [w.copy() for w in weights]
    same = True
    for _ in range(10):
        grads = [rng.standard_normal(s) for s in shapes]
        ef_topk_step(opt, weights, grads)
        for w, g in zip(sgd, grads):
            w -= 0.05 * g
        same = same and all(np.array_equal(a, b) for a, b in zip(weights, sgd))
    return same, "bit-identical to SGD" if same else "diverged from SGD"


def _small_federation(seed, rounds, **kwargs):
    data = synthetic_teacher_fc(8, 200, seed=seed)
    clients = partition(data, 10, "iid", seed)
    spec = NetworkSpec.fc(8, [8, 8])
    server = make_server(init_network(spec, seed), Loss("squared"), lr=0.05, seed=seed, **kwargs)
    reports = [run_round(server, clients, 5) for _ in range(rounds)]
    return server, reports


def check_identity_baseline(seed, full):
    rounds = 100 if full else 20
    _, comfetch = _small_federation(
        seed, rounds, mode=COMFETCH, ratio=1.0, identity_hash=True,
    )
    _, baseline = _small_federation(seed, rounds, mode=BASELINE)
    worst = max(abs(a.loss - b.loss) for a, b in zip(comfetch, baseline))
    return worst <= 1e-9, f"max loss difference {worst:.3g} over {rounds} rounds"


def check_multi_sketch_degeneracy(seed, full):
    rounds = 50 if full else 10
    single, _ = _small_federation(seed, rounds, multi_sketch=False)
    multi, _ = _small_federation(seed, rounds, multi_sketch=True)
    same = all(np.array_equal(a, b) for a, b in zip(single.state.weights, multi.state.weights))
    return same, f"{'bit-identical' if same else 'different'} after {rounds} rounds"


def check_ledger(seed, full):
    rng = rng_for(seed, 28)
    for _ in range(20):
        ledger = CommLedger()
        dims = [int(v) for v in rng.integers(2, 40, size=int(rng.integers(1, 4)))]
        cs = [int(rng.integers(1, d + 1)) for d in dims]
        clients = int(rng.integers(1, 10))
        for layer, (d, c) in enumerate(zip(dims, cs)):
            ledger.charge_sketched(1, layer, DOWN, d, c, d, clients=clients)
            ledger.charge_sketched(1, layer, UP, d, c, d, clients=clients)
        want_down = clients * sum((c + 1) * d for d, c in zip(dims, cs))
        want_up = clients * sum(c * d for d, c in zip(dims, cs))
        if ledger.total(DOWN).values != want_down or ledger.total(UP).values != want_up:
            return False, f"ledger disagrees with closed form for d={dims} c={cs}"
    return True, "20 configurations exact"


def check_error_bound(seed, full):
    if full:
        result = bound_violation_rate(500, 32, 3, 0.1, 0.1, seed=seed)
    else:
        result = bound_violation_rate(20, 12, 3, 0.1, 0.1, seed=seed)
    return result.passed, (
        f"violation rate {result.rate:.3f} (allowed {result.allowed:.3f}) "
        f"with c={result.c} k={result.k}"
    )


def check_surrogate_forward(seed, full):
    """The sketched forward pass equals the dense pass with weights HᵀHW."""
    spec = NetworkSpec.fc(10, [10, 10])
    net = init_network(spec, seed)
    ms = [new_multi_sketch(10, 5, child_seed(seed, 29, i), 1) for i in range(2)]
    sknet = sketch_network(net, ms)
    x = rng_for(seed, 29).standard_normal((4, 10))
    sk_pred, _ = fc_forward_sketched(sknet, x)
    recovered = [materialize(m[0]).T @ materialize(m[0]) @ w for m, w in zip(ms, net.weights)]
    dense_pred, _ = fc_forward(NetworkState(spec, recovered, net.output), x)
    worst = float(np.max(np.abs(sk_pred - dense_pred)))
    report = prediction_error_bound(net, sknet, x[0])
    return worst <= 1e-10 and report.holds, f"max difference {worst:.3g}"


CHECKS = [
    ("matmul", check_matmul),
    ("spectral-norm", check_spectral_norm),
    ("sketch-adjoint", check_sketch_adjoint),
    ("wire-format", check_wire_format),
    ("surrogate-forward", check_surrogate_forward),
    ("gradient-identity", check_gradient_identity),
    ("two-sided-backprop", check_two_sided),
    ("sketch-recovery", check_recovery),
    ("ef-degeneracy", check_ef_degeneracy),
    ("identity-vs-baseline", check_identity_baseline),
    ("multi-sketch-degeneracy", check_multi_sketch_degeneracy),
    ("ledger-closed-form", check_ledger),
    ("error-bound", check_error_bound),
]


def run_checks(seed=0, full=False, only=None):
    """Run the checks, or just those named in `only`.  Returns `CheckResult`s."""
    results = []
    for name, check in CHECKS:
        if only and name not in only:
            continue
        start = time.perf_counter()
        passed, detail = check(seed, full)
        results.append(CheckResult(name, bool(passed), detail, time.perf_counter() - start))
    return results


def write_results(writer, results):
    """Write `results` as a formatted table on `writer`."""
    info = [
        (r.name, f"{'ok' if r.passed else 'FAILED'}: {r.detail} ({r.seconds:.2f}s)")
        for r in results
    ]
    write_formatted_info(writer, "verify", info)
