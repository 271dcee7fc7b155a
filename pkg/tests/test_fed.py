# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0
# For details: see NOTICE.txt at the top of the source tree.

"""Tests of comfetch/fed.py"""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from comfetch.data import ClientDataset, synthetic_teacher_fc
from comfetch.exceptions import ContractViolation, NumericFailure
from comfetch.fed import (
    BASELINE, ServerOptState, aggregate, broadcast, client_update,
    dense_gradients, ef_topk_step, evaluate, make_server, multi_sketch_client_update,
    multi_sketch_recover, run_round, topk, topk_count,
)
from comfetch.ledger import DOWN
from comfetch.nn import Loss, NetworkSpec, NetworkState, init_network
from comfetch.sketch import MultiSketch, materialize, new_operator, unsketch_matrix

from tests.comfetchtest import ComfetchTest, small_federation


class TopkTest(ComfetchTest):
    """Tests of Top-k selection."""

    run_in_temp_dir = False

    def test_largest_magnitude(self):
        idx, vals = topk(np.array([3.0, -5.0, 1.0]), 1)
        assert idx.tolist() == [1]
        assert vals.tolist() == [-5.0]

    def test_all(self):
        z = np.array([0.5, -2.0, 0.0, 1.0])
        idx, vals = topk(z, 4)
        assert idx.tolist() == [0, 1, 2, 3]
        assert np.array_equal(vals, z)

    def test_ties_go_to_lowest_index(self):
        idx, _ = topk(np.array([1.0, -2.0, 2.0, 2.0, -2.0]), 2)
        assert idx.tolist() == [1, 2]

    def test_out_of_range(self):
        with pytest.raises(ContractViolation, match="Top-k needs"):
            topk(np.ones(3), 0)
        with pytest.raises(ContractViolation, match="Top-k needs"):
            topk(np.ones(3), 4)

    @pytest.mark.parametrize("n, fraction, count", [
        (100, 0.10, 10),
        (7, 0.10, 1),
        (10, 1.0, 10),
        (30, 0.1, 3),
        (1, 0.5, 1),
    ])
    def test_topk_count(self, n, fraction, count):
        assert topk_count(n, fraction) == count

    def test_bad_fraction(self):
        with pytest.raises(ContractViolation, match=r"\(0, 1\]"):
            topk_count(10, 0.0)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-100, 100), min_size=4, max_size=40))
    def test_contraction(self, values):
        z = np.array(values)
        k = max(1, len(z) // 4)
        idx, vals = topk(z, k)
        rest = z.copy()
        rest[idx] = 0.0
        assert np.sum(rest * rest) <= (1 - k / len(z)) * np.sum(z * z) + 1e-9


class EfTopkStepTest(ComfetchTest):
    """Tests of the error-feedback momentum Top-k step."""

    run_in_temp_dir = False

    def test_full_budget_no_momentum_is_sgd(self):
        rng = np.random.default_rng(1)
        opt = ServerOptState([(3, 4)], 0.1, 0.0, 1.0)
        w = [rng.standard_normal((3, 4))]
        sgd = w[0].copy()
        for _ in range(5):
            g = rng.standard_normal((3, 4))
            ef_topk_step(opt, w, [g])
            sgd -= 0.1 * g
            assert np.array_equal(w[0], sgd)
        assert not np.any(opt.e[0])

    def test_against_straight_line_recursion(self):
        rng = np.random.default_rng(2)
        lr, rho, n = 0.05, 0.9, 20
        opt = ServerOptState([(n,)], lr, rho, 0.10)
        w = [rng.standard_normal(n)]
        # The same recursion, one scalar at a time.
        ww = list(w[0])
        uu = [0.0] * n
        ee = [0.0] * n
        for _ in range(5):
            g = rng.standard_normal(n)
            ef_topk_step(opt, w, [g])
            zz = []
            for i in range(n):
                uu[i] = rho * uu[i] + g[i]
                zz.append(lr * uu[i] + ee[i])
            keep = sorted(range(n), key=lambda i: (-abs(zz[i]), i))[:2]
            for i in range(n):
                if i in keep:
                    ww[i] -= zz[i]
                    ee[i] = 0.0
                else:
                    ee[i] = zz[i]
            assert np.allclose(w[0], ww, atol=1e-14)
            assert np.allclose(opt.u[0], uu, atol=1e-14)
            assert np.allclose(opt.e[0], ee, atol=1e-14)

    def test_conservation_and_unrolling(self):
        rng = np.random.default_rng(3)
        rho = 0.9
        opt = ServerOptState([(4, 5), (2, 4)], 0.01, rho, 0.25)
        weights = [rng.standard_normal((4, 5)), rng.standard_normal((2, 4))]
        history = []
        for _ in range(8):
            grads = [rng.standard_normal(w.shape) for w in weights]
            history.append(grads)
            z = [opt.lr * (rho * u + g) + e for u, g, e in zip(opt.u, grads, opt.e)]
            deltas = ef_topk_step(opt, weights, grads)
            for layer in range(2):
                assert np.array_equal(deltas[layer] + opt.e[layer], z[layer])
                unrolled = sum(
                    rho ** (len(history) - 1 - i) * h[layer] for i, h in enumerate(history)
                )
                assert np.allclose(opt.u[layer], unrolled, atol=1e-9)

    def test_non_finite_gradient_changes_nothing(self):
        opt = ServerOptState([(2, 2)], 0.1, 0.5, 0.5)
        w = [np.ones((2, 2))]
        g = np.ones((2, 2))
        g[1, 1] = np.nan
        with pytest.raises(NumericFailure, match="layer 1"):
            ef_topk_step(opt, w, [g])
        assert np.array_equal(w[0], np.ones((2, 2)))
        assert not np.any(opt.u[0])

    def test_shape_checks(self):
        opt = ServerOptState([(2, 2)], 0.1, 0.5, 0.5)
        with pytest.raises(ContractViolation, match="Expected 1 gradients"):
            ef_topk_step(opt, [np.ones((2, 2))], [])
        with pytest.raises(ContractViolation, match="doesn't match"):
            ef_topk_step(opt, [np.ones((2, 2))], [np.ones((2, 3))])

    @pytest.mark.parametrize("lr, momentum, topk_fraction", [
        (0.0, 0.5, 0.1),
        (0.1, 1.0, 0.1),
        (0.1, -0.1, 0.1),
        (0.1, 0.5, 1.5),
    ])
    def test_bad_settings(self, lr, momentum, topk_fraction):
        with pytest.raises(ContractViolation):
            ServerOptState([(2, 2)], lr, momentum, topk_fraction)


class RoundTest(ComfetchTest):
    """Tests of whole federated rounds."""

    run_in_temp_dir = False

    def test_degenerate_round_is_gradient_descent(self):
        data = synthetic_teacher_fc(6, 20, seed=4)
        spec = NetworkSpec.fc(6, [6, 6])
        state = init_network(spec, 4)
        loss = Loss("squared")
        want = dense_gradients(state, data, loss)
        expected = [w - 0.1 * g for w, g in zip(state.weights, want.hidden)]
        server = make_server(
            state.copy(), loss, lr=0.1, momentum=0.0, topk=1.0,
            ratio=1.0, identity_hash=True, train_output=False,
        )
        run_round(server, [data], 1)
        for got, exp in zip(server.state.weights, expected):
            assert np.allclose(got, exp, atol=1e-13)

    def test_determinism(self):
        a, clients = small_federation(seed=5)
        b, _ = small_federation(seed=5)
        for _ in range(3):
            ra = run_round(a, clients, 4)
            rb = run_round(b, clients, 4)
            assert ra.clients == rb.clients
            assert ra.loss == rb.loss
            assert ra.grad_norms_sq == rb.grad_norms_sq
            assert ra.true_grad_norms_sq == rb.true_grad_norms_sq
        for wa, wb in zip(a.state.weights, b.state.weights):
            assert np.array_equal(wa, wb)

    def test_worker_threads_dont_change_results(self):
        serial, clients = small_federation(seed=6)
        threaded, _ = small_federation(seed=6, workers=4)
        for _ in range(3):
            assert run_round(serial, clients, 4).loss == run_round(threaded, clients, 4).loss
        for wa, wb in zip(serial.state.weights, threaded.state.weights):
            assert np.array_equal(wa, wb)

    def test_round_seed_override(self):
        a, clients = small_federation(seed=0)
        b, _ = small_federation(seed=0)
        plain, _ = small_federation(seed=0)
        assert run_round(a, clients, 4, seed=9).clients == run_round(b, clients, 4, seed=9).clients
        run_round(plain, clients, 4)
        # The override is for that round only.
        assert a.seed == 0
        assert run_round(a, clients, 4).clients == run_round(plain, clients, 4).clients
        for ms_a, ms_plain in zip(a.operators(2), plain.operators(2)):
            assert np.array_equal(ms_a[0].buckets, ms_plain[0].buckets)

    def test_full_gradient_norm_covers_every_client(self):
        server, clients = small_federation(seed=14, clients=6)
        before = server.state.copy()
        sketches = server.operators(1)
        report = run_round(server, clients, 2)
        # A sketched layer computes (HᵀH W)x, so ∇f by W is HᵀH times the
        # dense gradient at the recovered weights HᵀH W.
        recoveries = []
        for ms in sketches:
            h = materialize(ms[0])
            recoveries.append(h.T @ h)
        recovered = NetworkState(
            before.spec, [r @ w for r, w in zip(recoveries, before.weights)], before.output,
        )
        dense = dense_gradients(recovered, ClientDataset.combine(clients), server.loss)
        expected = [float(np.sum((r @ g) ** 2)) for r, g in zip(recoveries, dense.hidden)]
        assert report.true_grad_norms_sq == pytest.approx(expected, rel=1e-9)
        assert report.true_grad_norm_sq == pytest.approx(sum(expected), rel=1e-9)
        assert report.true_grad_norm_sq != report.grad_norm_sq

    def test_full_gradient_norm_in_baseline_mode(self):
        server, clients = small_federation(seed=15, clients=6, mode=BASELINE)
        before = server.state.copy()
        report = run_round(server, clients, 3)
        dense = dense_gradients(before, ClientDataset.combine(clients), server.loss)
        expected = [float(np.sum(g * g)) for g in dense.hidden]
        assert report.true_grad_norms_sq == pytest.approx(expected, rel=1e-12)

    def test_full_gradient_with_every_client_sampled(self):
        # Unweighted averaging of equal-sized clients is the full objective.
        server, clients = small_federation(seed=16, clients=4, mode=BASELINE)
        report = run_round(server, clients, 4)
        assert report.true_grad_norm_sq == pytest.approx(report.grad_norm_sq, rel=1e-9)

    def test_sampling(self):
        server, _ = small_federation(seed=7)
        picked = server.sample_clients(3, 10, 4)
        assert picked == sorted(set(picked))
        assert len(picked) == 4
        assert picked == server.sample_clients(3, 10, 4)
        with pytest.raises(ContractViolation, match="Can't sample 11"):
            server.sample_clients(1, 10, 11)

    def test_ledger_closed_form(self):
        server, clients = small_federation(seed=8, d=8, hidden=(8, 8), ratio=0.5)
        report = run_round(server, clients, 4)
        # Square 8x8 layers with c = 4.
        assert report.down_values == 4 * 2 * (4 + 1) * 8
        assert report.up_values == 4 * 2 * 4 * 8

    def test_baseline_ledger(self):
        server, clients = small_federation(seed=8, d=8, hidden=(8, 8), mode=BASELINE)
        report = run_round(server, clients, 4)
        assert report.down_values == report.up_values == 4 * 2 * 64
        assert server.ledger.compression_ratio(DOWN) == 1.0

    def test_multi_sketch_ledger_scales_by_k(self):
        server, clients = small_federation(seed=8, d=8, hidden=(8,), sketch_count=3)
        report = run_round(server, clients, 2)
        assert report.up_values == 3 * 2 * 4 * 8
        assert report.down_values == 3 * 2 * (8 + 4 * 8)

    def test_identity_hash_matches_baseline(self):
        ident, clients = small_federation(seed=9, ratio=1.0, identity_hash=True)
        base, _ = small_federation(seed=9, mode=BASELINE)
        for _ in range(20):
            a = run_round(ident, clients, 4)
            b = run_round(base, clients, 4)
            assert abs(a.loss - b.loss) <= 1e-9

    def test_single_sketch_multi_path_is_bit_identical(self):
        single, clients = small_federation(seed=10, multi_sketch=False)
        multi, _ = small_federation(seed=10, multi_sketch=True)
        for _ in range(10):
            assert run_round(single, clients, 4).loss == run_round(multi, clients, 4).loss
        for a, b in zip(single.state.weights, multi.state.weights):
            assert np.array_equal(a, b)

    def test_monitors(self):
        server, clients = small_federation(seed=11)
        reports = [run_round(server, clients, 4) for _ in range(5)]
        last = reports[-1]
        assert 0 < last.hh_ratio <= 1
        assert last.max_grad_norm_sq == max(r.grad_norm_sq for r in reports)
        assert len(last.hh_condition) == 2
        assert all(c >= 1 for c in last.hh_condition)
        assert server.virtual.max_drift <= 1e-8

    def test_non_finite_weights(self):
        server, clients = small_federation(seed=12)
        server.state.weights[0][0, 0] = np.inf
        with pytest.raises(NumericFailure, match="before round 1"):
            run_round(server, clients, 2)

    def test_loss_falls_over_200_rounds(self):
        server, clients = small_federation(seed=13, clients=10, lr=0.01, topk=0.5)
        reports = [run_round(server, clients, 5) for _ in range(200)]
        first = np.mean([r.loss for r in reports[:10]])
        last = np.mean([r.loss for r in reports[-10:]])
        assert last < first


class ClientAndAggregateTest(ComfetchTest):
    """Tests of the pieces of a round."""

    run_in_temp_dir = False

    def setup_test(self):
        super().setup_test()
        self.server, self.clients = small_federation(seed=14)

    def test_upload_shapes(self):
        model = broadcast(self.server, 1, clients=1)
        upload = client_update(model, self.clients[0], self.server.loss, client_id=0)
        assert [g.shape for g in upload.hidden] == [(4, 8), (4, 8)]
        assert upload.output.shape == (1, 8)
        assert upload.examples == len(self.clients[0])

    def test_aggregate_unsketches_the_sum(self):
        sketches = self.server.operators(1)
        model = broadcast(self.server, 1, clients=2, sketches=sketches)
        uploads = [client_update(model, self.clients[i], self.server.loss, i) for i in (0, 1)]
        grads, _ = aggregate(self.server, 1, uploads, sketches)
        for layer, ms in enumerate(sketches):
            each = [unsketch_matrix(ms[0], up.hidden[layer]) for up in uploads]
            assert np.allclose(grads[layer], (each[0] + each[1]) / 2, atol=1e-14)

    def test_weighted_aggregate(self):
        server, clients = small_federation(seed=14, weighted=True)
        sizes = [5, 15]
        data = [clients[0].subset(range(sizes[0])), clients[1]]
        data[1] = ClientDataset(
            np.concatenate([clients[1].features, clients[2].features])[:sizes[1]],
            np.concatenate([clients[1].labels, clients[2].labels])[:sizes[1]],
        )
        sketches = server.operators(1)
        model = broadcast(server, 1, clients=2, sketches=sketches)
        uploads = [client_update(model, d, server.loss, i) for i, d in enumerate(data)]
        _, out = aggregate(server, 1, uploads, sketches)
        want = (5 * uploads[0].output + 15 * uploads[1].output) / 20
        assert np.allclose(out, want, atol=1e-14)

    def test_wrong_round(self):
        model = broadcast(self.server, 1, clients=1)
        upload = client_update(model, self.clients[0], self.server.loss)
        with pytest.raises(ContractViolation, match="is for round 1, not round 2"):
            aggregate(self.server, 2, [upload])
        with pytest.raises(ContractViolation, match="No uploads"):
            aggregate(self.server, 1, [])

    def test_empty_client(self):
        model = broadcast(self.server, 1, clients=1)
        empty = self.clients[0]
        empty.features = empty.features[:0]
        empty.labels = empty.labels[:0]
        with pytest.raises(ContractViolation, match="no data"):
            client_update(model, empty, self.server.loss)

    def test_identical_operators_recover_the_single_sketch(self):
        op = new_operator(8, 4, 77)
        single = [MultiSketch([op]), MultiSketch([op])]
        triple = [MultiSketch([op, op, op]), MultiSketch([op, op, op])]
        data = self.clients[0]
        results = []
        for sketches in (single, triple):
            model = broadcast(self.server, 1, clients=1, sketches=sketches)
            if len(sketches[0]) == 3:
                upload = multi_sketch_client_update(model, data, self.server.loss)
                grads, _ = multi_sketch_recover(self.server, 1, [upload], sketches)
            else:
                upload = client_update(model, data, self.server.loss)
                grads, _ = aggregate(self.server, 1, [upload], sketches)
            results.append(grads)
        for a, b in zip(*results):
            assert np.allclose(a, b, atol=1e-14)

    def test_multi_sketch_count_mismatch(self):
        sketches = self.server.operators(1)
        model = broadcast(self.server, 1, clients=1, sketches=sketches)
        upload = client_update(model, self.clients[0], self.server.loss)
        triple = [MultiSketch([ms[0]] * 3) for ms in sketches]
        with pytest.raises(ContractViolation, match="doesn't have 3 sketches"):
            multi_sketch_recover(self.server, 1, [upload], triple)

    def test_multi_sketch_update_needs_multi_network(self):
        model = broadcast(self.server, 1, clients=1)
        with pytest.raises(ContractViolation, match="multi-sketch network"):
            multi_sketch_client_update(model, self.clients[0], self.server.loss)


class EvaluateTest(ComfetchTest):
    """Tests of fed.evaluate."""

    run_in_temp_dir = False

    def test_regression_has_no_accuracy(self):
        server, clients = small_federation(seed=15)
        value, acc = evaluate(server.state, clients[0], server.loss)
        assert value > 0
        assert acc is None

    def test_classification_accuracy(self):
        data = synthetic_teacher_fc(6, 40, seed=16, classes=3)
        spec = NetworkSpec.fc(6, [6], outputs=3)
        value, acc = evaluate(init_network(spec, 16), data, Loss("cross-entropy"))
        assert math.isfinite(value)
        assert 0 <= acc <= 1
