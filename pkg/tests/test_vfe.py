"""Free-energy assembly, prediction mixtures, and accuracy evaluation."""

import math

import numpy as np
import pytest

from depthbnn import dist, vfe
from depthbnn.net import categorical_loglik, network_kl
from depthbnn.optim import DepthPosterior, finite_diff_check
from depthbnn.spiral import SpiralConfig, generate
from depthbnn.tape import RandomTape

from helpers import all_layers, fresh_net, freeze_stds, set_layer

LN2 = math.log(2.0)


def _hand_q(rate=3.0 / 7.0, upper_q=0.9):
    """Poisson posterior whose truncated pmf is exactly (0.7, 0.3) on {0, 1}."""
    return DepthPosterior("poisson", rate=rate, rate_upper_q=upper_q)


class TestComputeVfe:
    def test_all_kls_vanish_without_data(self):
        for kind in ("poisson", "trunc_normal"):
            net = fresh_net()
            if kind == "poisson":
                q = DepthPosterior("poisson", rate=0.5, rate_upper_q=1.0)
                prior = dist.PoissonDepth(0.5)
            else:
                q = DepthPosterior("trunc_normal", mu=0.0, sigma=1.15,
                                   lower_q=0.0, upper_q=1.0)
                prior = dist.TruncNormalDepth(0.0, 1.15)
            support = q.support()
            net.ensure_depth(support.stop - 1)
            for layer in all_layers(net):
                set_layer(layer, 0.0, 0.0, std=1.0)  # posterior == prior
            bd = vfe.compute_vfe(net, q, prior, np.zeros((0, 2)), np.zeros(0, dtype=int),
                                 0, RandomTape(0))
            assert bd.total == pytest.approx(0.0, abs=1e-9)

    def test_point_mass_uniform_logits_gives_ln2(self):
        net = fresh_net(prior_std=1e-8)
        q = DepthPosterior("trunc_normal", mu=-10.0, sigma=0.5,
                           lower_q=0.025, upper_q=0.975)
        assert q.support() == range(0, 1)
        prior = dist.TruncNormalDepth(-10.0, 0.5)
        for layer in all_layers(net):
            set_layer(layer, 0.0, 0.0, std=1e-8)
        xs = np.array([[0.5, -0.3]])
        ys = np.array([0])
        bd = vfe.compute_vfe(net, q, prior, xs, ys, 1, RandomTape(3))
        assert bd.total == pytest.approx(LN2, abs=1e-6)
        assert bd.expected_param_kl == pytest.approx(0.0, abs=1e-9)
        assert bd.depth_kl == pytest.approx(0.0, abs=1e-9)

    def test_hand_assembled_weighted_sum(self):
        net = fresh_net(seed=11)
        net.ensure_depth(1)
        q = _hand_q()
        prior = dist.PoissonDepth(0.5)
        data = generate(SpiralConfig(omega=3.0, n=8, seed=5))
        n_total = 32  # batch of 8 scaled up by 4

        pmf = q.pmf()
        np.testing.assert_allclose(pmf.probs, [0.7, 0.3], atol=1e-12)

        tape = RandomTape(21)
        trace = net.forward(data.xs, 1, tape.clone())
        hand_nll = [
            -sum(categorical_loglik(trace.logits[l].data[i], int(data.ys[i]))
                 for i in range(8))
            for l in (0, 1)
        ]
        hand_total = dist.depth_kl(pmf, prior) + sum(
            pmf.prob(l) * (network_kl(net, l) + (n_total / 8) * hand_nll[l])
            for l in (0, 1)
        )

        bd = vfe.compute_vfe(net, q, prior, data.xs, data.ys, n_total, tape.clone())
        assert bd.total == pytest.approx(hand_total, abs=1e-9)
        assert bd.per_depth_nll == pytest.approx(hand_nll, abs=1e-9)
        assert bd.total == pytest.approx(
            bd.depth_kl + bd.expected_param_kl + bd.expected_nll, abs=1e-9
        )

    @pytest.mark.parametrize("k", [1, 2, 3, 4])
    def test_linear_in_support(self, k):
        net = fresh_net(seed=2)
        net.ensure_depth(k)
        q = DepthPosterior("trunc_normal", mu=0.7, sigma=1.3,
                           lower_q=0.025, upper_q=0.975)
        prior = dist.TruncNormalDepth(0.0, 1.15)
        support = range(0, k + 1)
        data = generate(SpiralConfig(omega=4.0, n=16, seed=9))
        tape = RandomTape(33)

        ls = np.arange(0, k + 1)
        cells = dist.trunc_normal_cell_masses(0.7, 1.3, ls)
        probs = cells / cells.sum()
        trace = net.forward(data.xs, k, tape.clone())
        explicit = sum(
            probs[l] * (math.log(probs[l]) - dist.untruncated_log_pmf(prior, l))
            for l in ls
        )
        for l in ls:
            nll = -sum(categorical_loglik(trace.logits[l].data[i], int(data.ys[i]))
                       for i in range(16))
            explicit += probs[l] * (network_kl(net, l) + (16 / 16) * nll)

        bd = vfe.compute_vfe(net, q, prior, data.xs, data.ys, 16, tape.clone(),
                             support=support)
        assert bd.total == pytest.approx(explicit, abs=1e-9)

    def test_minibatch_scaling_is_unbiased(self):
        net = fresh_net(seed=4)
        net.ensure_depth(1)
        freeze_stds(net)
        q = _hand_q()
        prior = dist.PoissonDepth(0.5)
        data = generate(SpiralConfig(omega=2.0, n=64, seed=13))
        tape = RandomTape(1)

        full = vfe.compute_vfe(net, q, prior, data.xs, data.ys, 64, tape.clone())
        batch_terms = []
        for b in range(4):
            sl = slice(16 * b, 16 * (b + 1))
            bd = vfe.compute_vfe(net, q, prior, data.xs[sl], data.ys[sl], 64, tape.clone())
            batch_terms.append(bd.expected_nll)
        assert np.mean(batch_terms) == pytest.approx(full.expected_nll, abs=1e-9)

    def test_support_cap_enforced(self):
        net = fresh_net()
        net.ensure_depth(0)
        q = _hand_q()
        prior = dist.PoissonDepth(0.5)
        with pytest.raises(vfe.SupportCapError):
            vfe.compute_vfe(net, q, prior, np.zeros((1, 2)), np.zeros(1, dtype=int),
                            1, RandomTape(0), support=range(0, 70))

    def test_depth_parameter_gradients_match_fd(self):
        data = generate(SpiralConfig(omega=2.0, n=8, seed=3))
        for kind in ("trunc_normal", "poisson"):
            net = fresh_net(seed=6, init_std=0.2)
            if kind == "trunc_normal":
                q = DepthPosterior("trunc_normal", mu=0.4, sigma=0.9,
                                   lower_q=0.025, upper_q=0.975)
                prior = dist.TruncNormalDepth(0.0, 1.15)
            else:
                q = DepthPosterior("poisson", rate=1.2, rate_upper_q=0.9)
                prior = dist.PoissonDepth(0.5)
            support = q.support()
            net.ensure_depth(support.stop - 1)

            def objective(tape):
                return vfe.compute_vfe(net, q, prior, data.xs, data.ys, data.n,
                                       tape, support=support).loss

            report = finite_diff_check(objective, q.named_params(), RandomTape(17),
                                       h=1e-5, tol=1e-4)
            assert report.passed, report.failures


class TestPredict:
    def test_deterministic_single_depth(self):
        net = fresh_net(seed=8)
        net.ensure_depth(0)
        freeze_stds(net)
        q = DepthPosterior("poisson", rate=0.01, rate_upper_q=0.9)
        assert q.support() == range(0, 1)
        xs = RandomTape(2).normal((12, 2))
        probs = vfe.predict(net, q, xs, 1, RandomTape(0))
        trace = net.forward(xs, 0, RandomTape(1))
        logits = trace.logits[0].data
        expected = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        np.testing.assert_allclose(probs, expected, atol=1e-9)

    def test_symmetric_network_gives_half(self):
        net = fresh_net()
        net.ensure_depth(0)
        freeze_stds(net)
        set_layer(net.output_heads[0], 0.0, 0.0, std=1e-14)
        xs = RandomTape(3).normal((10, 2))
        probs = vfe.predict(net, q_depth=_hand_q(rate=0.01, upper_q=0.9),
                            xs=xs, num_samples=1, tape=RandomTape(0))
        np.testing.assert_allclose(probs, 0.5, atol=1e-9)

    def test_two_depth_mixture_matches_hand_average(self):
        net = fresh_net(seed=12)
        net.ensure_depth(1)
        freeze_stds(net)
        q = _hand_q()
        xs = RandomTape(4).normal((6, 2))
        probs = vfe.predict(net, q, xs, 1, RandomTape(0))
        trace = net.forward(xs, 1, RandomTape(1))

        def softmax(z):
            e = np.exp(z - z.max(axis=1, keepdims=True))
            return e / e.sum(axis=1, keepdims=True)

        hand = 0.7 * softmax(trace.logits[0].data) + 0.3 * softmax(trace.logits[1].data)
        np.testing.assert_allclose(probs, hand, atol=1e-9)

    def test_rows_sum_to_one_with_sampling(self):
        net = fresh_net(seed=14)
        net.ensure_depth(2)
        q = DepthPosterior("trunc_normal", mu=0.5, sigma=0.9,
                           lower_q=0.025, upper_q=0.975)
        xs = RandomTape(5).normal((40, 2))
        probs = vfe.predict(net, q, xs, 5, RandomTape(6))
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)

    def test_requires_at_least_one_sample(self):
        net = fresh_net()
        with pytest.raises(ValueError):
            vfe.predict(net, _hand_q(), np.zeros((1, 2)), 0, RandomTape(0))


class TestEvaluateAccuracy:
    def _sign_net(self):
        # logits (h, -h) with h = leaky(x1): predicts class 0 iff x1 > 0
        net = fresh_net()
        net.ensure_depth(0)
        freeze_stds(net)
        w0 = np.zeros((2, 4))
        w0[0, 0] = 1.0
        set_layer(net.input_layer, w0, 0.0, std=1e-14)
        wh = np.zeros((4, 2))
        wh[0, 0] = 1.0
        wh[0, 1] = -1.0
        set_layer(net.output_heads[0], wh, 0.0, std=1e-14)
        return net

    def test_perfect_and_inverted(self):
        net = self._sign_net()
        q = _hand_q(rate=0.01, upper_q=0.9)
        xs = np.array([[1.0, 0.0], [2.0, 0.5], [-1.0, 0.3], [-3.0, -1.0]])
        ys = np.array([0, 0, 1, 1])
        acc = vfe.evaluate_accuracy(net, q, xs, ys, 1, RandomTape(0))
        assert acc == 1.0
        inverted = vfe.evaluate_accuracy(net, q, xs, 1 - ys, 1, RandomTape(0))
        assert inverted == 0.0

    def test_chance_level_on_label_independent_data(self):
        net = fresh_net(seed=20)
        net.ensure_depth(1)
        q = _hand_q()
        tape = RandomTape(30)
        xs = tape.normal((1024, 2))
        ys = tape.permutation(1024) % 2  # balanced, independent of xs
        acc = vfe.evaluate_accuracy(net, q, xs, ys, 3, RandomTape(31))
        assert 0.45 <= acc <= 0.55

    def test_empty_dataset_rejected(self):
        net = fresh_net()
        with pytest.raises(ValueError):
            vfe.evaluate_accuracy(net, _hand_q(), np.zeros((0, 2)), np.zeros(0), 1,
                                  RandomTape(0))
