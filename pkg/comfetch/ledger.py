# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0
# For details: see NOTICE.txt at the top of the source tree.

"""Communication accounting for comfetch.

Two measures are kept for every charge.  "Values" follow the cost model of
the protocol: a sketched d×n layer costs its hash vector (d values) plus
its c×n payload on the way down, and c×n on the way up.  "Bytes" follow the
wire format in `comfetch.sketch`: a 24-byte descriptor plus float32
payload.  The uncompressed counterfactual is recorded alongside, so
compression ratios always come from the same ledger.

"""

import collections

from comfetch.exceptions import ContractViolation
from comfetch.sketch import DESCRIPTOR, PAYLOAD_DTYPE


DOWN = "down"
UP = "up"
FLOAT_BYTES = PAYLOAD_DTYPE.itemsize


def sketched_downlink_values(d, c, n, k=1):
    """Values sent to one client for one layer of k sketches."""
    return k * (d + c * n)


def sketched_uplink_values(c, n, k=1):
    """Values sent back by one client for one layer of k sketches."""
    return k * c * n


def sketched_downlink_bytes(c, n, k=1):
    return k * (DESCRIPTOR.size + FLOAT_BYTES * c * n)


def sketched_uplink_bytes(c, n, k=1):
    return k * FLOAT_BYTES * c * n


def dense_values(d, n):
    return d * n


def dense_bytes(d, n):
    return FLOAT_BYTES * d * n


class Charge:
    """Accumulated traffic in one direction."""

    __slots__ = ("values", "bytes", "baseline_values", "baseline_bytes")

    def __init__(self):
        self.values = 0
        self.bytes = 0
        self.baseline_values = 0
        self.baseline_bytes = 0

    def __repr__(self):
        return f"<Charge values={self.values} bytes={self.bytes} baseline={self.baseline_values}>"

    def add(self, values, nbytes, baseline_values, baseline_bytes):
        self.values += values
        self.bytes += nbytes
        self.baseline_values += baseline_values
        self.baseline_bytes += baseline_bytes

    def as_dict(self):
        return {name: getattr(self, name) for name in self.__slots__}


class CommLedger:
    """Exact traffic counts, per round, per layer, and per direction.

    Hidden layers are tallied under their layer index, sketched or not.
    The unsketched read-out is tallied under the key "output" and kept out
    of the hidden-layer totals.

    """

    OUTPUT = "output"

    def __init__(self):
        # {round: {layer: {direction: Charge}}}
        self.rounds = collections.defaultdict(
            lambda: collections.defaultdict(lambda: {DOWN: Charge(), UP: Charge()})
        )

    def __repr__(self):
        return f"<CommLedger rounds={len(self.rounds)}>"

    def _charge(self, round_index, layer, direction):
        if direction not in (DOWN, UP):
            raise ContractViolation(f"Unknown direction {direction!r}")
        return self.rounds[round_index][layer][direction]

    def charge_sketched(self, round_index, layer, direction, d, c, n, k=1, clients=1):
        """Charge `clients` transfers of one sketched d×n layer."""
        if direction == DOWN:
            values = sketched_downlink_values(d, c, n, k)
            nbytes = sketched_downlink_bytes(c, n, k)
        else:
            values = sketched_uplink_values(c, n, k)
            nbytes = sketched_uplink_bytes(c, n, k)
        self._charge(round_index, layer, direction).add(
            clients * values, clients * nbytes,
            clients * dense_values(d, n), clients * dense_bytes(d, n),
        )

    def charge_dense(self, round_index, layer, direction, d, n, clients=1):
        """Charge `clients` transfers of an uncompressed d×n weight."""
        self._charge(round_index, layer, direction).add(
            clients * dense_values(d, n), clients * dense_bytes(d, n),
            clients * dense_values(d, n), clients * dense_bytes(d, n),
        )

    def _total(self, direction, rounds=None, hidden_only=True):
        total = Charge()
        for r, layers in self.rounds.items():
            if rounds is not None and r not in rounds:
                continue
            for layer, charges in layers.items():
                if hidden_only and layer == self.OUTPUT:
                    continue
                c = charges[direction]
                total.add(c.values, c.bytes, c.baseline_values, c.baseline_bytes)
        return total

    def round_total(self, round_index, direction, hidden_only=True):
        return self._total(direction, rounds={round_index}, hidden_only=hidden_only)

    def total(self, direction, hidden_only=True):
        return self._total(direction, hidden_only=hidden_only)

    def layer_total(self, layer, direction):
        total = Charge()
        for layers in self.rounds.values():
            if layer in layers:
                c = layers[layer][direction]
                total.add(c.values, c.bytes, c.baseline_values, c.baseline_bytes)
        return total

    def compression_ratio(self, direction):
        """Baseline values over actual values for the sketched layers."""
        total = self.total(direction)
        if total.values == 0:
            return 1.0
        return total.baseline_values / total.values

    def as_dict(self):
        """A JSON-friendly summary of the ledger."""
        layers = sorted({layer for ls in self.rounds.values() for layer in ls}, key=str)
        return {
            "rounds": len(self.rounds),
            "down": self.total(DOWN).as_dict(),
            "up": self.total(UP).as_dict(),
            "dense_down": self.layer_total(self.OUTPUT, DOWN).as_dict(),
            "dense_up": self.layer_total(self.OUTPUT, UP).as_dict(),
            "layers": {
                str(layer): {
                    DOWN: self.layer_total(layer, DOWN).as_dict(),
                    UP: self.layer_total(layer, UP).as_dict(),
                }
                for layer in layers
            },
        }
