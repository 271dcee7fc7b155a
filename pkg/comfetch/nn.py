# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0
# For details: see NOTICE.txt at the top of the source tree.

"""Networks, sketched networks, forward passes and reverse-mode gradients.

Two architectures are supported: a fully-connected ReLU chain with a linear
read-out, and a convolutional ResNet built on patch extraction.  Both are
evaluated by the same linear-layer primitives, in one of three flavors:

* `DenseLinear` holds a full weight W and computes W·P.
* `SketchedLinear` holds S = HW and computes Hᵀ(S·P), never forming W.
* `MultiSketchedLinear` holds k sketches and takes the coordinate-wise
  median of the k recoveries Hᵢᵀ(Sᵢ·P).

Layer inputs are carried as "flat" matrices: one column per (example,
pixel) pair, so that a layer application is a single matrix product.  With
the identity operator the sketched layers perform exactly the same floating
point operations as the dense one.

"""

import collections
import math

import numpy as np

from comfetch.exceptions import ConfigError, ContractViolation
from comfetch.numerics import as_matrix, coordinate_median, rng_for
from comfetch.sketch import MultiSketch, SketchedWeight, two_sided_unsketch, unsketch_matrix


FC = "fc"
CONV_RESNET = "conv-resnet"
KINDS = (FC, CONV_RESNET)


class NetworkSpec:
    """The shape of a network: layer sizes and architecture constants.

    Build one with `NetworkSpec.fc` or `NetworkSpec.conv_resnet`.

    """

    def __init__(self, kind, outputs, **kwargs):
        self.kind = kind
        self.outputs = outputs
        self.input_dim = kwargs.get("input_dim", 0)
        self.hidden = tuple(kwargs.get("hidden", ()))
        self.input_channels = kwargs.get("input_channels", 1)
        self.height = kwargs.get("height", 0)
        self.width = kwargs.get("width", 0)
        self.channels = kwargs.get("channels", 0)
        self.patch = kwargs.get("patch", 1)
        self.c_sigma = kwargs.get("c_sigma", 2.0)
        self.c_res = kwargs.get("c_res", 0.5)
        self.conv_depth = kwargs.get("depth", 0)

    def __repr__(self):
        if self.kind == FC:
            return f"<NetworkSpec fc {self.input_dim}->{list(self.hidden)}->{self.outputs}>"
        return (
            f"<NetworkSpec conv-resnet {self.input_channels}x{self.height}x{self.width} "
            f"m={self.channels} q={self.patch} L={self.depth} -> {self.outputs}>"
        )

    def __eq__(self, other):
        return isinstance(other, NetworkSpec) and vars(self) == vars(other)

    @classmethod
    def fc(cls, input_dim, hidden, outputs=1):
        """A fully-connected ReLU network: input_dim -> hidden... -> outputs."""
        hidden = tuple(int(h) for h in hidden)
        if input_dim < 1 or outputs < 1:
            raise ContractViolation("Network input and output sizes must be positive")
        if not hidden or min(hidden) < 1:
            raise ContractViolation(f"Need at least one positive hidden width, got {hidden!r}")
        return cls(FC, outputs, input_dim=input_dim, hidden=hidden)

    @classmethod
    def conv_resnet(
        cls, input_channels, height, width, channels, depth, patch=9,
        c_sigma=2.0, c_res=0.5, outputs=1, validate=True,
    ):
        """A convolutional ResNet over `height` x `width` images.

        `validate=False` skips the 0 < c_res < 1 check, for degenerate test
        networks.

        """
        side = math.isqrt(patch)
        if side * side != patch:
            raise ContractViolation(f"Patch size must be a perfect square, got {patch}")
        if min(input_channels, height, width, channels, depth, outputs) < 1:
            raise ContractViolation("Convolutional network sizes must be positive")
        if validate and not (0 < c_res < 1):
            raise ContractViolation(f"Residual scale must be in (0, 1), got {c_res}")
        if c_sigma <= 0:
            raise ContractViolation(f"Activation scale must be positive, got {c_sigma}")
        return cls(
            CONV_RESNET, outputs, input_channels=input_channels, height=height,
            width=width, channels=channels, patch=patch, c_sigma=c_sigma,
            c_res=c_res, depth=depth,
        )

    @property
    def depth(self):
        """L, the number of hidden (sketchable) layers."""
        return len(self.hidden) if self.kind == FC else self.conv_depth

    @property
    def pixels(self):
        return self.height * self.width

    @property
    def input_shape(self):
        """The shape of one input example."""
        if self.kind == FC:
            return (self.input_dim,)
        return (self.input_channels, self.pixels)

    def layer_shapes(self):
        """(rows, cols) of each hidden weight, in order."""
        if self.kind == FC:
            dims = (self.input_dim,) + self.hidden
            return [(dims[i + 1], dims[i]) for i in range(len(self.hidden))]
        shapes = [(self.channels, self.patch * self.input_channels)]
        shapes += [(self.channels, self.patch * self.channels)] * (self.conv_depth - 1)
        return shapes

    @property
    def output_shape(self):
        """The shape of the unsketched read-out weight."""
        if self.kind == FC:
            return (self.outputs, self.hidden[-1])
        return (self.outputs, self.channels, self.pixels)

    def parameter_count(self):
        count = sum(r * c for r, c in self.layer_shapes())
        return count + int(np.prod(self.output_shape))


class NetworkState:
    """The full weights of a network, held only by the server."""

    def __init__(self, spec, weights, output, round_index=None):
        shapes = spec.layer_shapes()
        if len(weights) != len(shapes):
            raise ContractViolation(f"Expected {len(shapes)} weights, got {len(weights)}")
        self.weights = []
        for i, (w, shape) in enumerate(zip(weights, shapes), start=1):
            w = as_matrix(w, f"weight {i}")
            if w.shape != shape:
                raise ContractViolation(f"Weight {i} should be {shape}, got {w.shape}")
            self.weights.append(w.copy())
        output = np.array(output, dtype=np.float64)
        if output.ndim == 1 and spec.kind == FC:
            output = output[None, :]
        if output.shape != spec.output_shape:
            raise ContractViolation(
                f"Read-out should be {spec.output_shape}, got {output.shape}"
            )
        self.spec = spec
        self.output = output
        self.round_index = round_index

    def __repr__(self):
        return f"<NetworkState {self.spec!r}>"

    def copy(self, round_index=None):
        return NetworkState(self.spec, self.weights, self.output, round_index)

    def all_finite(self):
        return all(np.all(np.isfinite(w)) for w in self.weights) and bool(
            np.all(np.isfinite(self.output))
        )


def init_network(spec, seed):
    """Gaussian weights with standard deviation √(2/fan-in), seeded."""
    weights = []
    for i, (rows, cols) in enumerate(spec.layer_shapes()):
        rng = rng_for(seed, 1, i)
        weights.append(rng.standard_normal((rows, cols)) * math.sqrt(2.0 / cols))
    fan_in = int(np.prod(spec.output_shape[1:]))
    rng = rng_for(seed, 2)
    output = rng.standard_normal(spec.output_shape) * math.sqrt(1.0 / fan_in)
    return NetworkState(spec, weights, output)


class SketchedNetwork:
    """What a client downloads: per-layer sketches and the dense read-out.

    `layers[l]` is a tuple of k `SketchedWeight` objects, one per sketch.
    `multi` selects median evaluation; it is on whenever k > 1, and can be
    forced on for k = 1.

    """

    def __init__(self, spec, layers, output, round_index=0, multi=None):
        shapes = spec.layer_shapes()
        layers = [tuple(sws) for sws in layers]
        if len(layers) != len(shapes):
            raise ContractViolation(f"Expected {len(shapes)} sketched layers, got {len(layers)}")
        ks = {len(sws) for sws in layers}
        if len(ks) != 1 or 0 in ks:
            raise ContractViolation("Every layer needs the same, nonzero number of sketches")
        for i, (sws, (rows, cols)) in enumerate(zip(layers, shapes), start=1):
            for sw in sws:
                if sw.op.d != rows or sw.cols != cols:
                    raise ContractViolation(
                        f"Sketched layer {i} should sketch {rows}x{cols}, "
                        f"got d={sw.op.d} with {sw.cols} columns"
                    )
        self.spec = spec
        self.layers = layers
        self.output = np.array(output, dtype=np.float64)
        self.round_index = round_index
        self.multi = self.k > 1 if multi is None else (multi or self.k > 1)

    def __repr__(self):
        return f"<SketchedNetwork {self.spec!r} k={self.k} round={self.round_index}>"

    @property
    def k(self):
        return len(self.layers[0])

    def multi_sketches(self):
        """The operators of each layer, as `MultiSketch` objects."""
        return [MultiSketch(sw.op for sw in sws) for sws in self.layers]

    def with_payloads(self, layer, payloads):
        """A copy with the payloads of `layer` replaced, for perturbation tests."""
        layers = list(self.layers)
        layers[layer] = tuple(
            SketchedWeight(sw.op, p) for sw, p in zip(self.layers[layer], payloads)
        )
        return SketchedNetwork(self.spec, layers, self.output, self.round_index, self.multi)


def sketch_network(state, sketches, round_index=0, multi=None):
    """Sketch every hidden weight of `state`.

    `sketches` has one entry per layer: a `SketchOperator` or a `MultiSketch`.

    """
    layers = []
    for w, ms in zip(state.weights, sketches):
        ops = list(ms) if isinstance(ms, MultiSketch) else [ms]
        layers.append(tuple(SketchedWeight.from_weight(op, w) for op in ops))
    return SketchedNetwork(state.spec, layers, state.output, round_index, multi)


def surrogate_network(sknet):
    """The dense network with weights HᵀHW.

    For a single sketch its forward pass equals the sketched forward pass.
    With several sketches the weights are the median recoveries.

    """
    weights = []
    for sws in sknet.layers:
        estimates = np.stack([sw.recover() for sw in sws])
        weights.append(estimates[0] if len(sws) == 1 else coordinate_median(estimates).value)
    return NetworkState(sknet.spec, weights, sknet.output)


# Linear layer primitives.  `p` is a flat (cols, columns) input, the result
# is a flat (rows, columns) pre-activation.

class DenseLinear:
    """W·P with a full weight."""

    def __init__(self, weight):
        self.weight = weight

    def forward(self, p):
        return self.weight @ p, None

    def backward(self, d_out, p, cache, want_input=True):
        grad = d_out @ p.T
        d_in = self.weight.T @ d_out if want_input else None
        return grad, d_in


class SketchedLinear:
    """Hᵀ(S·P): the c-row product first, then the unsketch gather."""

    def __init__(self, sketched):
        self.sketched = sketched

    def forward(self, p):
        op = self.sketched.op
        z = self.sketched.payload @ p
        return op.signs[:, None] * z[op.buckets], z

    def backward(self, d_out, p, cache, want_input=True):
        op = self.sketched.op
        d_z = np.zeros((op.c, d_out.shape[1]))
        np.add.at(d_z, op.buckets, op.signs[:, None] * d_out)
        grad = d_z @ p.T
        d_in = self.sketched.payload.T @ d_z if want_input else None
        return grad, d_in


class MultiSketchedLinear:
    """The coordinate-wise median over k sketched recoveries.

    The backward pass treats the median selection as fixed: each output
    coordinate's gradient flows only through the sketch it was taken from,
    split evenly between the two middle sketches when k is even.

    """

    def __init__(self, sketched):
        self.parts = [SketchedLinear(sw) for sw in sketched]

    def forward(self, p):
        outs = [part.forward(p) for part in self.parts]
        median = coordinate_median(np.stack([u for u, _ in outs]))
        return median.value, (median, [z for _, z in outs])

    def backward(self, d_out, p, cache, want_input=True):
        median, zs = cache
        even = len(self.parts) % 2 == 0
        grads = []
        d_in = None
        for i, (part, z) in enumerate(zip(self.parts, zs)):
            if even:
                half = 0.5 * d_out
                d_part = np.where(median.low == i, half, 0.0) + np.where(median.high == i, half, 0.0)
            else:
                d_part = np.where(median.low == i, d_out, 0.0)
            grad, d_p = part.backward(d_part, p, z, want_input)
            grads.append(grad)
            if want_input:
                d_in = d_p if d_in is None else d_in + d_p
        return np.stack(grads), d_in


def _linear_layers(model):
    if isinstance(model, NetworkState):
        return [DenseLinear(w) for w in model.weights]
    if isinstance(model, SketchedNetwork):
        if not model.multi:
            return [SketchedLinear(sws[0]) for sws in model.layers]
        return [MultiSketchedLinear(sws) for sws in model.layers]
    raise ContractViolation(f"Can't evaluate {model!r}")


class ForwardTape:
    """What a forward pass keeps for the backward pass.

    `inputs[l]` is layer l's flat input, `pre[l]` its flat pre-activation,
    and `caches[l]` the layer's own intermediates (the c-row products for a
    sketched layer).  `activations` are x⁰ through x^L in network layout.

    """

    def __init__(self, source, single, batch):
        self.source = source
        self.single = single
        self.batch = batch
        self.inputs = []
        self.pre = []
        self.caches = []
        self.activations = []
        self.prediction = None

    def selections(self):
        """For multi-sketch tapes, each layer's median selection (low index)."""
        return [cache[0].low for cache in self.caches if isinstance(cache, tuple)]


def relu(u):
    return np.maximum(u, 0.0)


def _batch(x, example_shape):
    x = np.asarray(x, dtype=np.float64)
    single = x.shape == example_shape
    if single:
        x = x[None]
    if x.shape[1:] != example_shape:
        raise ContractViolation(
            f"Input should be {example_shape} or a batch of them, got {x.shape}"
        )
    if not np.all(np.isfinite(x)):
        raise ContractViolation("Input has non-finite entries")
    return x, single


def _fc_run(model, x):
    spec = model.spec
    if spec.kind != FC:
        raise ContractViolation(f"Not a fully-connected network: {spec!r}")
    x, single = _batch(x, spec.input_shape)
    tape = ForwardTape(model, single, len(x))
    act = np.ascontiguousarray(x.T)
    tape.activations.append(act)
    for layer in _linear_layers(model):
        u, cache = layer.forward(act)
        tape.inputs.append(act)
        tape.pre.append(u)
        tape.caches.append(cache)
        act = relu(u)
        tape.activations.append(act)
    tape.prediction = (model.output @ act).T
    return tape


def fc_forward(net, x):
    """Evaluate a dense fully-connected network.  Returns (prediction, tape)."""
    if not isinstance(net, NetworkState):
        raise ContractViolation(f"fc_forward needs a NetworkState, got {net!r}")
    tape = _fc_run(net, x)
    return _prediction(tape), tape


def fc_forward_sketched(sknet, x):
    """Evaluate a sketched fully-connected network.  Returns (prediction, tape)."""
    if not isinstance(sknet, SketchedNetwork):
        raise ContractViolation(f"fc_forward_sketched needs a SketchedNetwork, got {sknet!r}")
    tape = _fc_run(sknet, x)
    return _prediction(tape), tape


def _prediction(tape):
    return tape.prediction[0] if tape.single else tape.prediction


def _patch_offsets(patch):
    side = math.isqrt(patch)
    return side, (side - 1) // 2


def patchify(x, patch, height, width):
    """Gather each pixel's patch neighborhood, with zero padding.

    `x` is (s, p) or a batch (B, s, p) with p = height·width pixels in
    row-major order.  The result is (q·s, p) (or batched), where row
    ``ch*q + a*side + b`` holds channel `ch` at offset (a, b) in the patch.

    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    batch, s, p = x.shape
    if p != height * width:
        raise ContractViolation(f"{p} pixels don't make a {height}x{width} image")
    side, before = _patch_offsets(patch)
    if side * side != patch:
        raise ContractViolation(f"Patch size must be a perfect square, got {patch}")
    after = side - 1 - before
    padded = np.pad(
        x.reshape(batch, s, height, width),
        ((0, 0), (0, 0), (before, after), (before, after)),
    )
    out = np.empty((batch, s, patch, height, width))
    for a in range(side):
        for b in range(side):
            out[:, :, a * side + b] = padded[:, :, a:a + height, b:b + width]
    out = out.reshape(batch, s * patch, p)
    return out[0] if single else out


def unpatchify(g, channels, patch, height, width):
    """The adjoint of `patchify`: scatter-add patch gradients back to pixels."""
    g = np.asarray(g, dtype=np.float64)
    single = g.ndim == 2
    if single:
        g = g[None]
    batch = g.shape[0]
    side, before = _patch_offsets(patch)
    g = g.reshape(batch, channels, patch, height, width)
    padded = np.zeros((batch, channels, height + side - 1, width + side - 1))
    for a in range(side):
        for b in range(side):
            padded[:, :, a:a + height, b:b + width] += g[:, :, a * side + b]
    out = padded[:, :, before:before + height, before:before + width].reshape(
        batch, channels, height * width
    )
    return out[0] if single else out


def _to_flat(x):
    """(B, rows, p) -> (rows, B·p)."""
    return np.ascontiguousarray(x.transpose(1, 0, 2)).reshape(x.shape[1], -1)


def _from_flat(f, batch):
    """(rows, B·p) -> (B, rows, p)."""
    rows = f.shape[0]
    return np.ascontiguousarray(f.reshape(rows, batch, -1).transpose(1, 0, 2))


def _conv_scales(spec):
    m = spec.channels
    return math.sqrt(spec.c_sigma / m), spec.c_res / (spec.depth * math.sqrt(m))


def _conv_run(model, x0):
    spec = model.spec
    if spec.kind != CONV_RESNET:
        raise ContractViolation(f"Not a convolutional ResNet: {spec!r}")
    x, single = _batch(x0, spec.input_shape)
    batch = x.shape[0]
    first_scale, res_scale = _conv_scales(spec)
    tape = ForwardTape(model, single, len(x))
    tape.activations.append(x)
    for i, layer in enumerate(_linear_layers(model)):
        p = _to_flat(patchify(x, spec.patch, spec.height, spec.width))
        u, cache = layer.forward(p)
        tape.inputs.append(p)
        tape.pre.append(u)
        tape.caches.append(cache)
        branch = _from_flat(relu(u), batch)
        x = first_scale * branch if i == 0 else x + res_scale * branch
        tape.activations.append(x)
    flat_out = model.output.reshape(spec.outputs, -1)
    tape.prediction = x.reshape(batch, -1) @ flat_out.T
    return tape


def conv_resnet_forward(net, x0):
    """Evaluate a dense convolutional ResNet.  Returns (prediction, tape)."""
    if not isinstance(net, NetworkState):
        raise ContractViolation(f"conv_resnet_forward needs a NetworkState, got {net!r}")
    tape = _conv_run(net, x0)
    return _prediction(tape), tape


def conv_resnet_forward_sketched(sknet, x0):
    """Evaluate a sketched convolutional ResNet.  Returns (prediction, tape)."""
    if not isinstance(sknet, SketchedNetwork):
        raise ContractViolation(
            f"conv_resnet_forward_sketched needs a SketchedNetwork, got {sknet!r}"
        )
    tape = _conv_run(sknet, x0)
    return _prediction(tape), tape


def forward(model, x):
    """Evaluate any network, dense or sketched.  Returns (prediction, tape)."""
    tape = _fc_run(model, x) if model.spec.kind == FC else _conv_run(model, x)
    return _prediction(tape), tape


class Loss:
    """A batch-mean loss: squared error or softmax cross-entropy."""

    SQUARED = "squared"
    CROSS_ENTROPY = "cross-entropy"
    KINDS = (SQUARED, CROSS_ENTROPY)

    def __init__(self, kind):
        if kind not in self.KINDS:
            raise ContractViolation(f"Unknown loss {kind!r}, expected one of {self.KINDS}")
        self.kind = kind

    def __repr__(self):
        return f"<Loss {self.kind}>"

    def _prepare(self, prediction, target):
        prediction = np.atleast_2d(prediction)
        target = np.asarray(target)
        want = prediction.shape if self.kind == self.SQUARED else prediction.shape[:1]
        if target.size != math.prod(want):
            raise ConfigError(
                f"{self.kind} loss can't use targets shaped {target.shape} "
                f"for network outputs shaped {prediction.shape}"
            )
        if self.kind == self.SQUARED:
            target = target.astype(np.float64).reshape(want)
        else:
            target = target.astype(np.intp).reshape(want)
            if np.any(target < 0) or np.any(target >= prediction.shape[1]):
                raise ContractViolation("Class labels out of range for the network outputs")
        return prediction, target

    def value_and_grad(self, prediction, target):
        """The mean loss over the batch, and its gradient by prediction."""
        prediction, target = self._prepare(prediction, target)
        batch = prediction.shape[0]
        if self.kind == self.SQUARED:
            diff = prediction - target
            value = 0.5 * float(np.sum(diff * diff)) / batch
            return value, diff / batch
        shifted = prediction - np.max(prediction, axis=1, keepdims=True)
        log_norm = np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
        log_probs = shifted - log_norm
        rows = np.arange(batch)
        value = -float(np.sum(log_probs[rows, target])) / batch
        grad = np.exp(log_probs)
        grad[rows, target] -= 1.0
        return value, grad / batch

    def value(self, prediction, target):
        return self.value_and_grad(prediction, target)[0]


Gradients = collections.namedtuple("Gradients", "hidden, output, loss")
Gradients.__doc__ = """\
Per-layer hidden-weight gradients, the read-out gradient, and the loss value.
"""


def _backward(model, tape, target, loss):
    if tape.source is not model:
        raise ContractViolation("Tape was recorded on a different network")
    spec = model.spec
    value, d_pred = loss.value_and_grad(tape.prediction, target)
    layers = _linear_layers(model)
    hidden = [None] * len(layers)
    if spec.kind == FC:
        last = tape.activations[-1]
        output_grad = d_pred.T @ last.T
        d_act = model.output.T @ d_pred.T
        for i in reversed(range(len(layers))):
            d_u = d_act * (tape.pre[i] > 0)
            hidden[i], d_act = layers[i].backward(d_u, tape.inputs[i], tape.caches[i], i > 0)
    else:
        batch = d_pred.shape[0]
        first_scale, res_scale = _conv_scales(spec)
        last = tape.activations[-1]
        flat_out = model.output.reshape(spec.outputs, -1)
        output_grad = (d_pred.T @ last.reshape(batch, -1)).reshape(spec.output_shape)
        d_x = (d_pred @ flat_out).reshape(last.shape)
        for i in reversed(range(len(layers))):
            scale = first_scale if i == 0 else res_scale
            d_u = _to_flat(scale * d_x) * (tape.pre[i] > 0)
            hidden[i], d_p = layers[i].backward(d_u, tape.inputs[i], tape.caches[i], i > 0)
            if i > 0:
                # Layers after the first read x^(i) through both the
                # residual path and the patch gather.
                d_x = d_x + unpatchify(
                    _from_flat(d_p, batch), spec.channels, spec.patch, spec.height, spec.width,
                )
    return Gradients(hidden, output_grad, value)


def backward(net, tape, target, loss):
    """Gradients of the loss by the dense weights of `net`."""
    if not isinstance(net, NetworkState):
        raise ContractViolation(f"backward needs a NetworkState, got {net!r}")
    return _backward(net, tape, target, loss)


def backward_sketched(sknet, tape, target, loss):
    """Gradients of the loss by each layer's sketched weight S = HW.

    For a single-sketch network each hidden gradient is c×n.  With k
    sketches it is stacked k×c×n, one slice per sketch.

    """
    if not isinstance(sknet, SketchedNetwork):
        raise ContractViolation(f"backward_sketched needs a SketchedNetwork, got {sknet!r}")
    return _backward(sknet, tape, target, loss)


def recover_full_gradient(op, g):
    """Hᵀg: the gradient by W, given the gradient by HW."""
    return unsketch_matrix(op, g)


def two_sided_backward(op1, op2, g):
    """H₁ᵀ·g·H₂, the gradient by W of a two-sided sketch H₁WH₂ᵀ."""
    return two_sided_unsketch(op1, op2, g)


def finite_difference_gradient(f, theta, h=1e-5):
    """Central differences of the scalar function `f` at the array `theta`."""
    if h <= 0:
        raise ContractViolation(f"Step must be positive, got {h}")
    theta = np.array(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    for idx in np.ndindex(theta.shape):
        orig = theta[idx]
        theta[idx] = orig + h
        up = f(theta.copy())
        theta[idx] = orig - h
        down = f(theta.copy())
        theta[idx] = orig
        grad[idx] = (up - down) / (2 * h)
    return grad


def accuracy(prediction, labels):
    """The fraction of rows of `prediction` whose argmax is the label."""
    prediction = np.atleast_2d(prediction)
    labels = np.asarray(labels).astype(np.intp).reshape(prediction.shape[0])
    return float(np.mean(np.argmax(prediction, axis=1) == labels))
