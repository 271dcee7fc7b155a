# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0
# For details: see NOTICE.txt at the top of the source tree.

"""The federated protocol: broadcast, client update, aggregation, and the
server's error-feedback momentum Top-k step.

A round goes like this::

    broadcast       fresh operators H for round t, clients get (H, HW)
    client_update   each sampled client uploads ∂L/∂(HW), c×n per layer
    aggregate       the server sums the uploads, applies Hᵀ once, averages
    ef_topk_step    u = ρu + g;  z = ηu + e;  Δ = TopK(z);  e = z - Δ;  W -= Δ

All persistent state is on the `Server`.  Clients are pure functions of the
broadcast and their data, so they can run in any order or concurrently.

"""

import concurrent.futures
import math
import time
import warnings

import numpy as np

from comfetch.data import ClientDataset
from comfetch.debug import NoDebugging, SimpleReprMixin
from comfetch.exceptions import ComfetchWarning, ContractViolation, NumericFailure
from comfetch.ledger import DOWN, UP, CommLedger
from comfetch.nn import (
    NetworkState, SketchedNetwork, accuracy, backward, backward_sketched, forward,
    sketch_network,
)
from comfetch.numerics import child_seed, rng_for
from comfetch.sketch import (
    MultiSketch, identity_operator, new_operator, sketch_length, unsketch_matrix,
)


COMFETCH = "comfetch"
BASELINE = "baseline"
MODES = (COMFETCH, BASELINE)

# Seed path tags, so that sampling and sketching draw from separate streams.
SAMPLE_TAG = 1
SKETCH_TAG = 2

VIRTUAL_DRIFT_TOLERANCE = 1e-8


def topk_count(n, fraction):
    """How many of `n` entries a Top-k budget `fraction` keeps: at least one."""
    if not 0 < fraction <= 1:
        raise ContractViolation(f"Top-k fraction must be in (0, 1], got {fraction}")
    return min(n, max(1, math.ceil(fraction * n - 1e-9)))


def topk(z, k):
    """The `k` entries of `z` with largest magnitude, lowest index first on ties.

    Returns (indices, values), with indices in increasing order.

    """
    z = np.asarray(z, dtype=np.float64).ravel()
    if not 1 <= k <= len(z):
        raise ContractViolation(f"Top-k needs 1 <= k <= {len(z)}, got {k}")
    chosen = np.sort(np.argsort(-np.abs(z), kind="stable")[:k])
    return chosen, z[chosen]


class ServerOptState:
    """Per-layer momentum u and error accumulator e, and the step settings."""

    def __init__(self, shapes, lr, momentum, topk_fraction):
        if lr <= 0:
            raise ContractViolation(f"Learning rate must be positive, got {lr}")
        if not 0 <= momentum < 1:
            raise ContractViolation(f"Momentum must be in [0, 1), got {momentum}")
        topk_count(1, topk_fraction)
        self.lr = lr
        self.momentum = momentum
        self.topk_fraction = topk_fraction
        self.u = [np.zeros(shape) for shape in shapes]
        self.e = [np.zeros(shape) for shape in shapes]

    def __repr__(self):
        return (
            f"<ServerOptState lr={self.lr} momentum={self.momentum} "
            f"topk={self.topk_fraction} layers={len(self.u)}>"
        )


def _check_finite(arrays, what):
    for i, a in enumerate(arrays, start=1):
        if not np.all(np.isfinite(a)):
            raise NumericFailure(f"Non-finite {what} in layer {i}")


def ef_topk_step(state, weights, grads):
    """Apply one error-feedback momentum Top-k step, in place.

    `weights` is the list of weight arrays to update.  Returns the list of
    applied updates Δ.  Nothing is changed if any gradient is non-finite.

    """
    if len(grads) != len(state.u):
        raise ContractViolation(f"Expected {len(state.u)} gradients, got {len(grads)}")
    for g, u in zip(grads, state.u):
        if np.shape(g) != u.shape:
            raise ContractViolation(f"Gradient shape {np.shape(g)} doesn't match {u.shape}")
    _check_finite(grads, "gradient")

    deltas = []
    for i, g in enumerate(grads):
        u = state.momentum * state.u[i] + g
        z = (state.lr * u + state.e[i]).ravel()
        chosen, values = topk(z, topk_count(z.size, state.topk_fraction))
        delta = np.zeros_like(z)
        delta[chosen] = values
        e = z.copy()
        e[chosen] = 0.0
        state.u[i] = u
        state.e[i] = e.reshape(u.shape)
        delta = delta.reshape(u.shape)
        weights[i] -= delta
        deltas.append(delta)
    return deltas


class VirtualSequence:
    """Tracks W̃ = W - e - ηρ/(1-ρ)·u across steps.

    Under the update rule, W̃ moves by exactly -η/(1-ρ)·g each step.  The
    drift is the largest difference between that prediction and the value
    computed from the actual state, relative to the size of W̃.

    """

    def __init__(self, weights):
        self.tracked = [w.copy() for w in weights]
        self.max_drift = 0.0

    @staticmethod
    def current(weights, state):
        scale = state.lr * state.momentum / (1 - state.momentum)
        return [w - e - scale * u for w, e, u in zip(weights, state.e, state.u)]

    def update(self, weights, state, grads):
        step = state.lr / (1 - state.momentum)
        actual = self.current(weights, state)
        drift = 0.0
        for tracked, g, now in zip(self.tracked, grads, actual):
            predicted = tracked - step * g
            size = max(1.0, float(np.max(np.abs(now))))
            drift = max(drift, float(np.max(np.abs(predicted - now))) / size)
        self.tracked = actual
        self.max_drift = max(self.max_drift, drift)
        return drift


class Monitors(SimpleReprMixin):
    """Running maxima of the quantities the convergence argument bounds."""

    def __init__(self):
        self.max_grad_norm_sq = 0.0
        self.max_weight_norm = 0.0
        self.max_momentum_sq = 0.0
        self.max_error_sq = 0.0
        self.max_hh_ratio = 0.0

    def update(self, grad_norm_sq, weight_norm, momentum_sq, error_sq, hh_ratio):
        self.max_grad_norm_sq = max(self.max_grad_norm_sq, grad_norm_sq)
        self.max_weight_norm = max(self.max_weight_norm, weight_norm)
        self.max_momentum_sq = max(self.max_momentum_sq, momentum_sq)
        self.max_error_sq = max(self.max_error_sq, error_sq)
        self.max_hh_ratio = max(self.max_hh_ratio, hh_ratio)


class ClientUpload(SimpleReprMixin):
    """What one client sends back in one round."""

    simple_repr_ignore = ["hidden", "output", "selections", "simple_repr_ignore"]

    def __init__(self, round_index, client_id, hidden, output, loss, examples, selections=None):
        self.round_index = round_index
        self.client_id = client_id
        self.hidden = hidden
        self.output = output
        self.loss = loss
        self.examples = examples
        self.selections = selections or []


class RoundReport(SimpleReprMixin):
    """Everything recorded about one round."""

    def __init__(self, **kwargs):
        self.round_index = 0
        self.clients = []
        self.loss = 0.0
        self.grad_norms_sq = []
        self.grad_norm_sq = 0.0
        self.true_grad_norms_sq = []
        self.true_grad_norm_sq = 0.0
        self.hh_ratio = 0.0
        self.hh_condition = []
        self.virtual_drift = 0.0
        self.selection_disagreement = 0.0
        self.down_values = 0
        self.up_values = 0
        self.down_bytes = 0
        self.up_bytes = 0
        self.max_grad_norm_sq = 0.0
        self.max_weight_norm = 0.0
        self.max_momentum_sq = 0.0
        self.max_error_sq = 0.0
        self.wall_ms = 0.0
        for name, value in kwargs.items():
            if not hasattr(self, name):
                raise ContractViolation(f"RoundReport has no field {name!r}")
            setattr(self, name, value)

    def as_dict(self):
        return dict(self.__dict__)


class Server:
    """The server: full weights, optimizer state, ledger, and monitors."""

    def __init__(
        self, state, opt, loss, mode=COMFETCH, ratio=0.5, sketch_count=1,
        identity_hash=False, seed=0, output_lr=None, train_output=True,
        weighted=False, workers=1, multi_sketch=None, debug=None,
    ):
        if mode not in MODES:
            raise ContractViolation(f"Unknown mode {mode!r}, expected one of {MODES}")
        if not 0 < ratio <= 1:
            raise ContractViolation(f"Sketch ratio must be in (0, 1], got {ratio}")
        if sketch_count < 1:
            raise ContractViolation(f"Sketch count must be at least 1, got {sketch_count}")
        if identity_hash and ratio != 1:
            raise ContractViolation("Identity hashing needs a sketch ratio of 1")
        self.state = state
        self.opt = opt
        self.loss = loss
        self.mode = mode
        self.ratio = ratio
        self.sketch_count = sketch_count
        self.identity_hash = identity_hash
        self.seed = seed
        self.output_lr = opt.lr if output_lr is None else output_lr
        self.train_output = train_output
        self.weighted = weighted
        self.workers = workers
        self.multi_sketch = sketch_count > 1 if multi_sketch is None else multi_sketch
        self.debug = debug or NoDebugging()
        self.round_index = 0
        self.ledger = CommLedger()
        self.monitors = Monitors()
        self.virtual = VirtualSequence(state.weights)
        self._warned_drift = False

    def __repr__(self):
        return f"<Server mode={self.mode} round={self.round_index} {self.state.spec!r}>"

    def sketch_lengths(self):
        """The sketch length c for each hidden layer."""
        return [sketch_length(rows, self.ratio) for rows, _ in self.state.spec.layer_shapes()]

    def operators(self, round_index, seed=None):
        """The per-layer operators for a round, as `MultiSketch` objects."""
        seed = self.seed if seed is None else seed
        sketches = []
        for layer, ((rows, _), c) in enumerate(
            zip(self.state.spec.layer_shapes(), self.sketch_lengths())
        ):
            if self.identity_hash:
                ops = [identity_operator(rows)] * self.sketch_count
            else:
                ops = [
                    new_operator(rows, c, child_seed(seed, SKETCH_TAG, round_index, layer, i))
                    for i in range(self.sketch_count)
                ]
            sketches.append(MultiSketch(ops))
        return sketches

    def sample_clients(self, round_index, available, count, seed=None):
        """Pick `count` of `available` clients, uniformly without replacement."""
        if not 1 <= count <= available:
            raise ContractViolation(f"Can't sample {count} clients from {available}")
        rng = rng_for(self.seed if seed is None else seed, SAMPLE_TAG, round_index)
        return sorted(int(i) for i in rng.choice(available, size=count, replace=False))


def broadcast(server, round_index, clients=1, sketches=None):
    """Make the model the sampled clients download, and charge the downlink.

    In comfetch mode this is a `SketchedNetwork` built with this round's
    operators.  In baseline mode it is a copy of the dense network.

    """
    state = server.state
    if not state.all_finite():
        raise NumericFailure(f"Server weights are non-finite before round {round_index}")
    ledger = server.ledger
    if server.mode == BASELINE:
        model = state.copy(round_index)
        for layer, (rows, cols) in enumerate(state.spec.layer_shapes()):
            ledger.charge_dense(round_index, layer, DOWN, rows, cols, clients=clients)
    else:
        if sketches is None:
            sketches = server.operators(round_index)
        model = sketch_network(state, sketches, round_index, multi=server.multi_sketch)
        for layer, (ms, (rows, cols)) in enumerate(zip(sketches, state.spec.layer_shapes())):
            ledger.charge_sketched(
                round_index, layer, DOWN, rows, ms.c, cols, k=ms.k, clients=clients,
            )
            if server.debug.should("sketch"):
                for i, op in enumerate(ms):
                    sizes = op.bucket_sizes()
                    seed = "identity" if op.seed is None else f"{op.seed:#018x}"
                    server.debug.write(
                        f"round {round_index} layer {layer} sketch {i}: d={op.d} c={op.c} "
                        f"seed={seed} buckets min={sizes.min()} max={sizes.max()} "
                        f"|HᵀH|_F²={op.recovery_frobenius_sq()}"
                    )
    rows, cols = state.spec.output_shape[0], int(np.prod(state.spec.output_shape[1:]))
    ledger.charge_dense(round_index, CommLedger.OUTPUT, DOWN, rows, cols, clients=clients)
    return model


def _batch_features(model, data):
    return data.features.reshape((len(data),) + model.spec.input_shape)


def _selection_maps(tape, k):
    """Each layer's per-coordinate majority choice of sketch over the batch."""
    maps = []
    batch = tape.batch
    for low in tape.selections():
        rows = low.shape[0]
        per_example = low.reshape(rows, batch, -1)
        counts = np.stack([(per_example == j).sum(axis=1) for j in range(k)])
        maps.append(np.argmax(counts, axis=0))
    return maps


def client_update(model, data, loss, client_id=0):
    """Compute one client's upload: full-batch gradients over its data.

    Against a `SketchedNetwork` the hidden gradients are by the sketched
    weights: c×n each, or k×c×n with k sketches.  Against a dense network
    (baseline mode) they are by the full weights.

    """
    if len(data) == 0:
        raise ContractViolation("Client has no data")
    _, tape = forward(model, _batch_features(model, data))
    selections = []
    if isinstance(model, SketchedNetwork):
        grads = backward_sketched(model, tape, data.labels, loss)
        round_index = model.round_index
        if model.multi:
            selections = _selection_maps(tape, model.k)
    else:
        grads = backward(model, tape, data.labels, loss)
        round_index = model.round_index
    return ClientUpload(
        round_index, client_id, grads.hidden, grads.output, grads.loss, len(data), selections,
    )


def multi_sketch_client_update(sknet, data, loss, client_id=0):
    """Compute a client's upload against a k-sketch network.

    Each hidden gradient is stacked k×c×n: the gradient by each sketch HⱼW,
    with the upstream gradient routed through the median selection.

    """
    if not isinstance(sknet, SketchedNetwork) or not sknet.multi:
        raise ContractViolation("Multi-sketch update needs a multi-sketch network")
    return client_update(sknet, data, loss, client_id)


def _combine(arrays, counts, weighted):
    """Sum `arrays`, weighted by `counts` if asked.  Returns (sum, divisor)."""
    if weighted:
        total = counts[0] * arrays[0]
        for n, a in zip(counts[1:], arrays[1:]):
            total = total + n * a
        return total, float(sum(counts))
    total = arrays[0].copy()
    for a in arrays[1:]:
        total = total + a
    return total, float(len(arrays))


def _check_uploads(uploads, round_index):
    if not uploads:
        raise ContractViolation("No uploads to aggregate")
    for up in uploads:
        if up.round_index != round_index:
            raise ContractViolation(
                f"Upload from client {up.client_id} is for round {up.round_index}, "
                f"not round {round_index}"
            )


def _recover_layers(summed, sketches, divisor):
    grads = []
    for layer, (total, ms) in enumerate(zip(summed, sketches)):
        if total.ndim == 3:
            if total.shape[0] != ms.k:
                raise ContractViolation(
                    f"Layer {layer} has {total.shape[0]} sketch gradients, expected {ms.k}"
                )
            recovered = unsketch_matrix(ms[0], total[0])
            for op, part in zip(list(ms)[1:], total[1:]):
                recovered = recovered + unsketch_matrix(op, part)
        else:
            if ms.k != 1:
                raise ContractViolation(f"Layer {layer} has one sketch gradient, expected {ms.k}")
            recovered = unsketch_matrix(ms[0], total)
        grads.append(recovered / divisor)
    return grads


def aggregate(server, round_index, uploads, sketches=None):
    """Average the uploads into full-size gradients, and charge the uplink.

    Sketched uploads are summed first and unsketched once per layer.
    Returns (hidden gradients, read-out gradient).

    """
    _check_uploads(uploads, round_index)
    spec = server.state.spec
    counts = [up.examples for up in uploads]
    layers = len(spec.layer_shapes())
    summed = []
    divisor = None
    for layer in range(layers):
        total, divisor = _combine([up.hidden[layer] for up in uploads], counts, server.weighted)
        summed.append(total)
    out_total, divisor = _combine([up.output for up in uploads], counts, server.weighted)

    ledger = server.ledger
    if server.mode == BASELINE:
        grads = [total / divisor for total in summed]
        for layer, (rows, cols) in enumerate(spec.layer_shapes()):
            ledger.charge_dense(round_index, layer, UP, rows, cols, clients=len(uploads))
    else:
        if sketches is None:
            sketches = server.operators(round_index)
        grads = _recover_layers(summed, sketches, divisor)
        for layer, (ms, (rows, cols)) in enumerate(zip(sketches, spec.layer_shapes())):
            ledger.charge_sketched(
                round_index, layer, UP, rows, ms.c, cols, k=ms.k, clients=len(uploads),
            )
    rows, cols = spec.output_shape[0], int(np.prod(spec.output_shape[1:]))
    ledger.charge_dense(round_index, CommLedger.OUTPUT, UP, rows, cols, clients=len(uploads))
    return grads, out_total / divisor


def multi_sketch_recover(server, round_index, uploads, sketches=None):
    """Recover full gradients from k-sketch uploads: Σⱼ Hⱼᵀgⱼ, averaged."""
    _check_uploads(uploads, round_index)
    if sketches is None:
        sketches = server.operators(round_index)
    for up in uploads:
        for layer, (g, ms) in enumerate(zip(up.hidden, sketches)):
            if np.ndim(g) != 3 or g.shape[0] != ms.k:
                raise ContractViolation(
                    f"Client {up.client_id} layer {layer} upload doesn't have {ms.k} sketches"
                )
    return aggregate(server, round_index, uploads, sketches)


def _selection_disagreement(uploads):
    """The fraction of coordinates where the clients' median choices differ."""
    if len(uploads) < 2 or not uploads[0].selections:
        return 0.0
    fractions = []
    for layer in range(len(uploads[0].selections)):
        maps = np.stack([up.selections[layer] for up in uploads])
        fractions.append(float(np.mean(np.any(maps != maps[0], axis=0))))
    return float(np.mean(fractions))


def _hh_ratio(deltas, errors):
    """max over layers of max(z²)/‖z‖², with z recovered as Δ + e."""
    best = 0.0
    for delta, e in zip(deltas, errors):
        z = delta + e
        norm_sq = float(np.sum(z * z))
        if norm_sq > 0:
            best = max(best, float(np.max(z * z)) / norm_sq)
    return best


def run_round(server, clients, count, seed=None):
    """Run one federated round over the client datasets `clients`.

    `count` clients are sampled.  `seed` overrides the server's root seed for
    this round's sampling and sketching only.  Returns a `RoundReport`.

    """
    start = time.perf_counter()
    server.round_index += 1
    t = server.round_index
    sampled = server.sample_clients(t, len(clients), count, seed=seed)
    sketches = server.operators(t, seed=seed) if server.mode == COMFETCH else None
    model = broadcast(server, t, clients=len(sampled), sketches=sketches)

    def work(cid):
        return client_update(model, clients[cid], server.loss, client_id=cid)

    if server.workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=server.workers) as pool:
            uploads = list(pool.map(work, sampled))
    else:
        uploads = [work(cid) for cid in sampled]
    grads, out_grad = aggregate(server, t, uploads, sketches)
    _check_finite(grads + [out_grad], "aggregated gradient")
    true_norms = [float(np.sum(g * g)) for g in full_gradient(model, clients, server.loss)]

    state = server.state
    opt = server.opt
    deltas = ef_topk_step(opt, state.weights, grads)
    if server.train_output:
        state.output -= server.output_lr * out_grad
    drift = server.virtual.update(state.weights, opt, grads)
    if drift > VIRTUAL_DRIFT_TOLERANCE and not server._warned_drift:
        server._warned_drift = True
        warnings.warn(
            f"Error-feedback virtual sequence drifted by {drift:.3g} in round {t}",
            ComfetchWarning,
        )

    grad_norms_sq = [float(np.sum(g * g)) for g in grads]
    hh_ratio = _hh_ratio(deltas, opt.e)
    hh_condition = []
    for w in state.weights:
        peak = float(np.max(w * w))
        hh_condition.append(float(np.sum(w * w)) / peak if peak > 0 else 0.0)
    server.monitors.update(
        grad_norm_sq=sum(grad_norms_sq),
        weight_norm=max(float(np.sqrt(np.sum(w * w))) for w in state.weights),
        momentum_sq=sum(float(np.sum(u * u)) for u in opt.u),
        error_sq=sum(float(np.sum(e * e)) for e in opt.e),
        hh_ratio=hh_ratio,
    )
    total_examples = sum(up.examples for up in uploads)
    loss = sum(up.loss * up.examples for up in uploads) / total_examples
    down = server.ledger.round_total(t, DOWN)
    up = server.ledger.round_total(t, UP)
    mon = server.monitors
    report = RoundReport(
        round_index=t,
        clients=sampled,
        loss=loss,
        grad_norms_sq=grad_norms_sq,
        grad_norm_sq=sum(grad_norms_sq),
        true_grad_norms_sq=true_norms,
        true_grad_norm_sq=sum(true_norms),
        hh_ratio=hh_ratio,
        hh_condition=hh_condition,
        virtual_drift=drift,
        selection_disagreement=_selection_disagreement(uploads),
        down_values=down.values,
        up_values=up.values,
        down_bytes=down.bytes,
        up_bytes=up.bytes,
        max_grad_norm_sq=mon.max_grad_norm_sq,
        max_weight_norm=mon.max_weight_norm,
        max_momentum_sq=mon.max_momentum_sq,
        max_error_sq=mon.max_error_sq,
        wall_ms=(time.perf_counter() - start) * 1000.0,
    )
    debug = server.debug
    if debug.should("round"):
        debug.write(
            f"round {t}: clients={sampled} loss={loss:.6g} |g|²={report.grad_norm_sq:.6g} "
            f"|∇f|²={report.true_grad_norm_sq:.6g} "
            f"hh={hh_ratio:.4f}"
        )
    if debug.should("ledger"):
        for layer in range(len(grads)):
            charges = server.ledger.rounds[t][layer]
            debug.write(
                f"round {t} layer {layer}: down {charges[DOWN].values} values "
                f"{charges[DOWN].bytes} bytes, up {charges[UP].values} values "
                f"{charges[UP].bytes} bytes"
            )
    if debug.should("monitor"):
        debug.write(
            f"round {t} monitors: G²={mon.max_grad_norm_sq:.6g} B={mon.max_weight_norm:.6g} "
            f"|u|²={mon.max_momentum_sq:.6g} |e|²={mon.max_error_sq:.6g} drift={drift:.3g} "
            f"disagreement={report.selection_disagreement:.4f}"
        )
    return report


def make_server(state, loss, lr=0.001, momentum=0.9, topk=0.10, **kwargs):
    """Build a `Server` with a fresh `ServerOptState` for `state`."""
    shapes = [w.shape for w in state.weights]
    opt = ServerOptState(shapes, lr, momentum, topk)
    return Server(state, opt, loss, **kwargs)


def dense_gradients(state, data, loss):
    """Full-batch gradients of the dense network over `data`."""
    if not isinstance(state, NetworkState):
        raise ContractViolation(f"Need a NetworkState, got {state!r}")
    _, tape = forward(state, _batch_features(state, data))
    return backward(state, tape, data.labels, loss)


def full_gradient(model, clients, loss):
    """∇f by the full hidden weights, over every client's data.

    `model` is a round's broadcast, so the sketch configuration is held at
    that round's operators.  f is the mean loss over all examples, which
    weights each client by its dataset size.  Nothing is charged to the
    ledger.

    """
    union = ClientDataset.combine(clients)
    if isinstance(model, SketchedNetwork):
        _, tape = forward(model, _batch_features(model, union))
        grads = backward_sketched(model, tape, union.labels, loss)
        return _recover_layers(grads.hidden, model.multi_sketches(), 1.0)
    return dense_gradients(model, union, loss).hidden


def evaluate(state, data, loss):
    """The dense network's (loss, accuracy) over `data`.

    Accuracy is None unless the labels are classes and the network has more
    than one output.

    """
    prediction, _ = forward(state, _batch_features(state, data))
    value = loss.value(prediction, data.labels)
    acc = None
    if data.is_classification and state.spec.outputs > 1:
        acc = accuracy(prediction, data.labels)
    return value, acc
