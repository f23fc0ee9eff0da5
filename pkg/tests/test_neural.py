import numpy as np
import pytest

from twinforge.neural import (
    GradientSet,
    NumericError,
    backward,
    clone_network,
    forward,
    grad_check,
    init_network,
    load_network,
    param_count,
    param_step,
    save_network,
)


def counted_params(net):
    """Oracle: enumerate every parameter array and count elements one by one."""
    total = 0
    for arr in list(net.weights) + list(net.biases):
        for _ in np.nditer(arr):
            total += 1
    return total


class TestInit:
    def test_deterministic_per_seed(self):
        a = init_network((5, 8, 3), seed=123)
        b = init_network((5, 8, 3), seed=123)
        for wa, wb in zip(a.weights, b.weights):
            assert np.array_equal(wa, wb)

    def test_different_seed_differs(self):
        a = init_network((5, 8, 3), seed=1)
        b = init_network((5, 8, 3), seed=2)
        assert not np.array_equal(a.weights[0], b.weights[0])

    def test_biases_zero_weights_bounded(self):
        net = init_network((30, 40, 2), seed=0)
        for b in net.biases:
            assert not b.any()
        for w, (fi, fo) in zip(net.weights, [(30, 40), (40, 2)]):
            bound = np.sqrt(6.0 / (fi + fo))
            assert w.shape == (fi, fo)
            assert np.all(np.abs(w) <= bound)
            # the draw actually spreads over the range
            assert w.std() > 0.3 * bound

    def test_param_count_full_size_head(self):
        # the default head for 100 users / 4 UAVs: [208, 256, 256, 256]
        net = init_network((208, 256, 256, 256), seed=0)
        oracle = counted_params(net)
        closed_form = sum(
            fi * fo + fo for fi, fo in [(208, 256), (256, 256), (256, 256)]
        )
        assert oracle == closed_form == param_count(net) == 185_088

    def test_invalid_dims(self):
        with pytest.raises(ValueError):
            init_network((5,), seed=0)
        with pytest.raises(ValueError):
            init_network((5, 0, 2), seed=0)


class TestForward:
    def test_zero_input_zero_biases_gives_zero(self):
        net = init_network((4, 6, 3), seed=0)
        assert np.array_equal(forward(net, np.zeros(4)), np.zeros(3))

    def test_single_linear_layer_is_matmul(self):
        net = init_network((3, 2), seed=0)
        x = np.array([1.0, -2.0, 0.5])
        assert np.allclose(forward(net, x), x @ net.weights[0] + net.biases[0])

    def test_identity_scalar_chain(self):
        net = init_network((1, 1, 1), seed=0)
        net.weights[0][:] = 1.0
        net.weights[1][:] = 1.0
        net.biases[0][:] = 0.0
        net.biases[1][:] = -0.25
        # relu(3)*1 - 0.25
        assert forward(net, np.array([3.0]))[0] == pytest.approx(2.75)
        # hidden relu clips the negative pre-activation
        assert forward(net, np.array([-3.0]))[0] == pytest.approx(-0.25)

    def test_batch_rows_match_single_calls(self):
        net = init_network((5, 7, 4), seed=3)
        rng = np.random.default_rng(0)
        batch = rng.standard_normal((6, 5))
        out = forward(net, batch)
        assert out.shape == (6, 4)
        for i in range(6):
            # gemm vs gemv accumulation order may differ in the last ulp
            assert np.allclose(out[i], forward(net, batch[i]), rtol=1e-12, atol=1e-13)

    def test_forward_is_pure(self):
        net = init_network((4, 4, 2), seed=1)
        before = [w.copy() for w in net.weights]
        forward(net, np.ones(4))
        for w, b in zip(net.weights, before):
            assert np.array_equal(w, b)

    def test_shape_mismatch(self):
        net = init_network((4, 2), seed=0)
        with pytest.raises(ValueError):
            forward(net, np.ones(5))


class TestBackward:
    def test_zero_output_grad_gives_zero(self):
        net = init_network((4, 6, 3), seed=0)
        g = backward(net, np.ones(4), np.zeros(3))
        assert all(not dw.any() for dw in g.d_weights)
        assert all(not db.any() for db in g.d_biases)

    def test_single_layer_outer_product(self):
        # closed form for a linear map: dW = x (outer) g, db = g
        net = init_network((3, 2), seed=0)
        x = np.array([1.0, -2.0, 0.5])
        og = np.array([2.0, -1.0])
        g = backward(net, x, og)
        assert np.allclose(g.d_weights[0], np.outer(x, og))
        assert np.allclose(g.d_biases[0], og)

    def test_batch_grads_sum_over_rows(self):
        net = init_network((4, 5, 3), seed=2)
        rng = np.random.default_rng(1)
        xs = rng.standard_normal((3, 4))
        ogs = rng.standard_normal((3, 3))
        batched = backward(net, xs, ogs)
        for layer in range(net.n_layers):
            acc = sum(backward(net, xs[i], ogs[i]).d_weights[layer] for i in range(3))
            assert np.allclose(batched.d_weights[layer], acc)

    def test_against_central_differences(self):
        # independent oracle: perturb every parameter of a small net
        net = init_network((4, 6, 6, 2), seed=5)
        rng = np.random.default_rng(2)
        x = rng.uniform(0.1, 1.0, 4)
        og = np.array([0.7, -1.3])
        analytic = backward(net, x, og)
        h = 1e-5
        worst = 0.0
        for arr, grad in list(zip(net.weights, analytic.d_weights)) + list(
            zip(net.biases, analytic.d_biases)
        ):
            for idx in np.ndindex(arr.shape):
                keep = arr[idx]
                arr[idx] = keep + h
                hi = float(forward(net, x) @ og)
                arr[idx] = keep - h
                lo = float(forward(net, x) @ og)
                arr[idx] = keep
                numeric = (hi - lo) / (2 * h)
                denom = max(abs(numeric), abs(grad[idx]), 1e-8)
                worst = max(worst, abs(numeric - grad[idx]) / denom)
        assert worst < 1e-4


class TestParamStep:
    def test_lr_zero_is_identity(self):
        net = init_network((3, 3), seed=0)
        before = net.weights[0].copy()
        g = backward(net, np.ones(3), np.ones(3))
        param_step(net, g, 0.0)
        assert np.array_equal(net.weights[0], before)

    def test_scalar_descend_arithmetic(self):
        # theta=1, grad=2, lr=0.1 -> 0.8
        net = init_network((1, 1), seed=0)
        net.weights[0][0, 0] = 1.0
        g = GradientSet([np.array([[2.0]])], [np.array([0.0])])
        param_step(net, g, 0.1, direction="descend")
        assert net.weights[0][0, 0] == pytest.approx(0.8)

    def test_ascend_then_descend_round_trip(self):
        net = init_network((4, 5, 2), seed=9)
        before = [w.copy() for w in net.weights]
        g = backward(net, np.ones(4), np.ones(2))
        param_step(net, g, 0.01, direction="ascend")
        param_step(net, g, 0.01, direction="descend")
        for w, b in zip(net.weights, before):
            assert np.allclose(w, b, atol=1e-12)

    def test_nonfinite_gradient_refused(self):
        net = init_network((2, 2), seed=0)
        before = net.weights[0].copy()
        bad = GradientSet(
            [np.array([[np.nan, 0.0], [0.0, 0.0]])], [np.zeros(2)]
        )
        with pytest.raises(NumericError):
            param_step(net, bad, 0.1)
        assert np.array_equal(net.weights[0], before)

    def test_topology_mismatch_rejected(self):
        net = init_network((3, 3), seed=0)
        g = backward(init_network((3, 4), seed=0), np.ones(3), np.ones(4))
        with pytest.raises(ValueError):
            param_step(net, g, 0.1)

    def test_bad_direction(self):
        net = init_network((2, 2), seed=0)
        g = backward(net, np.ones(2), np.ones(2))
        with pytest.raises(ValueError):
            param_step(net, g, 0.1, direction="sideways")


class TestGradCheck:
    def test_linear_net_quadratic_loss_tight(self):
        net = init_network((4, 3), seed=1)
        x = np.array([0.3, -0.8, 1.2, 0.05])
        err = grad_check(
            net, x, loss=lambda o: float(0.5 * (o @ o)), loss_grad=lambda o: o
        )
        assert err < 1e-8

    def test_relu_net_loose(self):
        net = init_network((6, 16, 16, 3), seed=4)
        x = np.random.default_rng(3).uniform(0.1, 1.0, 6)
        err = grad_check(
            net, x, loss=lambda o: float(0.5 * (o @ o)), loss_grad=lambda o: o
        )
        assert err < 1e-4

    def test_corrupted_gradient_detected(self):
        # negative control: a broken backward pass must be flagged
        net = init_network((4, 8, 2), seed=6)
        x = np.array([0.5, 0.25, -0.4, 0.9])
        corrupt = backward(net, x, forward(net, x))
        corrupt.d_weights[0] = corrupt.d_weights[0] * 1.5 + 0.05
        err = grad_check(
            net,
            x,
            loss=lambda o: float(0.5 * (o @ o)),
            loss_grad=lambda o: o,
            analytic=corrupt,
        )
        assert err > 1e-2


class TestSnapshots:
    def test_round_trip_bit_exact(self, tmp_path):
        net = init_network((7, 11, 4), seed=8)
        p = tmp_path / "net.bin"
        save_network(net, p)
        loaded = load_network(p)
        assert loaded.layer_dims == net.layer_dims
        for a, b in zip(net.weights + net.biases, loaded.weights + loaded.biases):
            assert np.array_equal(a, b)

    def test_same_net_same_bytes(self, tmp_path):
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        save_network(init_network((5, 6, 2), seed=12), a)
        save_network(init_network((5, 6, 2), seed=12), b)
        assert a.read_bytes() == b.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "junk.bin"
        p.write_bytes(b"NOPE" + bytes(64))
        with pytest.raises(ValueError, match="magic"):
            load_network(p)

    def test_truncated_rejected(self, tmp_path):
        net = init_network((5, 6, 2), seed=12)
        p = tmp_path / "net.bin"
        save_network(net, p)
        p.write_bytes(p.read_bytes()[:-16])
        with pytest.raises(ValueError):
            load_network(p)

    def test_clone_is_independent(self):
        net = init_network((3, 3), seed=0)
        twin = clone_network(net)
        twin.weights[0][0, 0] += 1.0
        assert net.weights[0][0, 0] != twin.weights[0][0, 0]
