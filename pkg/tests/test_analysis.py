"""Pairwise error probabilities, quadratic-form MGF, union bounds."""

import dataclasses
import math

import numpy as np
import pytest
import scipy.special

from riscbc import analysis
from riscbc.channel import moment_set, sample_channel, stream_rng, STREAM_CHANNEL
from riscbc.harness import ExperimentSpec, build_system, dbm_to_mw
from riscbc.transceiver import hypotheses, noiseless_signal


def q_exact(x: float) -> float:
    return 0.5 * scipy.special.erfc(x / math.sqrt(2.0))


@pytest.fixture(scope="module")
def passive_setup():
    config = build_system(ExperimentSpec(mode="passive", p_t_dbm=(6.0,), trials=1))
    return config, moment_set(config.channel)


@pytest.fixture(scope="module")
def active_setup():
    config = build_system(
        ExperimentSpec(mode="active-on", p_t_dbm=(-14.0,), trials=1)
    )
    return config, moment_set(config.channel)


def sample_weighted_sums(params, alphabet, hi, lo, n_samples, seed=77):
    """Empirical joint draws of the weighted amplitude sums and |g|.

    Returns an (n_samples, len(alphabet) + 1) matrix whose columns are the
    weighted sums at every alphabet count plus the direct amplitude, sampled
    from the true fading law.  Serves as the covariance oracle.
    """
    out = np.empty((n_samples, len(alphabet) + 1))
    chunk = 2000
    row = 0
    trial = 0
    while row < n_samples:
        take = min(chunk, n_samples - row)
        for j in range(take):
            r = sample_channel(params, stream_rng(seed, STREAM_CHANNEL, trial))
            prefix = r.cascade_prefix()
            total = prefix[-1]
            for col, n_a in enumerate(alphabet):
                out[row + j, col] = hi * prefix[n_a] + lo * (total - prefix[n_a])
            out[row + j, -1] = abs(r.g)
            trial += 1
        row += take
    return out


class TestQApprox:
    def test_at_zero(self):
        assert analysis.q_approx(0.0) == pytest.approx(1.0 / 3.0, rel=1e-15)

    def test_near_exact_tail(self):
        assert analysis.q_approx(3.0) == pytest.approx(q_exact(3.0), rel=0.15)

    def test_monotone(self):
        grid = np.linspace(0.0, 10.0, 101)
        values = [analysis.q_approx(x) for x in grid]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            analysis.q_approx(-0.1)


class TestStats:
    def test_equal_count_projections(self, passive_setup):
        config, moments = passive_setup
        pool = hypotheses(config.bit_map)
        truth = next(h for h in pool if h.bit_label == "0001")  # x=1, all on
        error = next(h for h in pool if h.bit_label == "0101")  # x=j, all on
        stats = analysis.build_stats_passive(
            truth, error, moments, config.bit_map.alphabet
        )
        xt = truth.x * np.exp(1j * truth.psi)
        xe = error.x * np.exp(1j * error.psi)
        b_r = np.array([(xt - xe).real, (truth.x - error.x).real])
        b_i = np.array([(xt - xe).imag, (truth.x - error.x).imag])
        assert np.allclose(stats.b_matrix,
                           np.outer(b_r, b_r) + np.outer(b_i, b_i))
        assert stats.mean.shape == (2,)

    def test_shared_prefix_covariance(self, passive_setup):
        config, moments = passive_setup
        pool = hypotheses(config.bit_map)
        truth = next(h for h in pool if h.n_a == 62)
        error = next(h for h in pool if h.n_a == 128)
        stats = analysis.build_stats_passive(
            truth, error, moments, config.bit_map.alphabet
        )
        assert stats.cov[0, 1] == pytest.approx(62 * moments.sigma2, rel=1e-12)

    def test_rejects_identical_pair(self, passive_setup):
        config, moments = passive_setup
        pool = hypotheses(config.bit_map)
        with pytest.raises(ValueError):
            analysis.build_stats_passive(pool[0], pool[0], moments,
                                         config.bit_map.alphabet)

    def test_active_unit_gain_reduces_to_full_passive(self, passive_setup):
        config, moments = passive_setup
        pool = hypotheses(config.bit_map)
        stats = analysis.build_stats_active(
            pool[0], pool[1], moments, config.bit_map.alphabet, 1.0, 128
        )
        n = config.channel.n_elements
        # every variance and covariance collapses to the all-on sum's
        expected = n * moments.sigma2
        assert np.allclose(stats.cov[:2, :2], expected, rtol=1e-12)
        assert stats.mean[0] == pytest.approx(n * moments.mu, rel=1e-12)

    def test_covariance_against_sampling_passive(self, passive_setup):
        config, moments = passive_setup
        alphabet = config.bit_map.alphabet
        draws = sample_weighted_sums(config.channel, alphabet, 1.0, 0.0, 30000)
        emp = np.cov(draws.T)
        pool = hypotheses(config.bit_map)
        truth = next(h for h in pool if h.n_a == alphabet[0])
        error = next(h for h in pool if h.n_a == alphabet[1])
        stats = analysis.build_stats_passive(truth, error, moments, alphabet)
        # columns: [sum@62, sum@128, |g|]
        assert emp[0, 0] == pytest.approx(stats.cov[0, 0], rel=0.05)
        assert emp[1, 1] == pytest.approx(stats.cov[1, 1], rel=0.05)
        assert emp[0, 1] == pytest.approx(stats.cov[0, 1], rel=0.05)
        assert emp[2, 2] == pytest.approx(stats.cov[2, 2], rel=0.05)

    def test_covariance_against_sampling_active(self, active_setup):
        config, moments = active_setup
        alphabet = config.bit_map.alphabet
        draws = sample_weighted_sums(config.channel, alphabet, config.xi, 1.0, 30000)
        emp = np.cov(draws.T)
        pool = hypotheses(config.bit_map)
        truth = next(h for h in pool if h.n_a == alphabet[0])
        error = next(h for h in pool if h.n_a == alphabet[1])
        stats = analysis.build_stats_active(
            truth, error, moments, alphabet, config.xi, config.channel.n_elements
        )
        assert emp[0, 0] == pytest.approx(stats.cov[0, 0], rel=0.05)
        assert emp[0, 1] == pytest.approx(stats.cov[0, 1], rel=0.05)

    def test_covariances_positive_semidefinite(self, passive_setup, active_setup):
        for config, moments in (passive_setup, active_setup):
            pool = hypotheses(config.bit_map)
            build = (
                analysis.build_stats_passive if config.mode == "passive"
                else lambda t, e, m, a: analysis.build_stats_active(
                    t, e, m, a, config.xi, config.channel.n_elements
                )
            )
            rng = np.random.default_rng(1)
            for _ in range(25):
                t, e = rng.choice(len(pool), size=2, replace=False)
                stats = build(pool[t], pool[e], moments, config.bit_map.alphabet)
                eigenvalues = np.linalg.eigvalsh(stats.cov)
                assert eigenvalues.min() >= -1e-10


class TestMgf:
    @staticmethod
    def toy_stats(dim, seed=0):
        rng = np.random.default_rng(seed)
        mean = rng.normal(size=dim)
        root = rng.normal(size=(dim, dim))
        cov = root @ root.T + 0.1 * np.eye(dim)
        b_r = rng.normal(size=dim)
        b_i = rng.normal(size=dim)
        return analysis.QuadraticFormStats(
            mean=mean, cov=cov,
            b_matrix=np.outer(b_r, b_r) + np.outer(b_i, b_i),
        )

    def test_unity_at_zero(self):
        assert analysis.mgf(self.toy_stats(3), 0.0) == pytest.approx(1.0, rel=1e-14)

    def test_zero_form_matrix(self):
        stats = self.toy_stats(2)
        flat = analysis.QuadraticFormStats(
            mean=stats.mean, cov=stats.cov, b_matrix=np.zeros((2, 2))
        )
        for t in (-0.01, -1.0, -100.0):
            assert analysis.mgf(flat, t) == pytest.approx(1.0, rel=1e-14)

    @pytest.mark.parametrize("dim,seed", [(2, 1), (3, 2), (3, 3)])
    def test_against_monte_carlo(self, dim, seed):
        stats = self.toy_stats(dim, seed)
        mean_form = float(
            np.trace(stats.b_matrix @ stats.cov)
            + stats.mean @ stats.b_matrix @ stats.mean
        )
        t = -0.5 / mean_form
        rng = np.random.default_rng(seed + 100)
        root = np.linalg.cholesky(stats.cov)
        draws = stats.mean + (root @ rng.standard_normal((dim, 200_000))).T
        lam = np.einsum("ij,jk,ik->i", draws, stats.b_matrix, draws)
        empirical = float(np.mean(np.exp(t * lam)))
        assert analysis.mgf(stats, t) == pytest.approx(empirical, rel=0.02)

    def test_log_convex_in_t(self):
        stats = self.toy_stats(3, 4)
        ts = np.linspace(-2.0, 0.0, 21)
        logs = np.array([math.log(analysis.mgf(stats, t)) for t in ts])
        second = logs[:-2] - 2.0 * logs[1:-1] + logs[2:]
        assert np.all(second >= -1e-9)

    def test_rejects_positive_t(self):
        with pytest.raises(ValueError):
            analysis.mgf(self.toy_stats(2), 0.1)

    def test_singular_direct_path_raises(self, passive_setup):
        config, moments = passive_setup
        pool = hypotheses(config.bit_map)
        degenerate = dataclasses.replace(moments, sigma_g2=0.0)
        stats = analysis.build_stats_passive(
            pool[0], pool[1], degenerate, config.bit_map.alphabet
        )
        with pytest.raises(ValueError, match="singular"):
            analysis.mgf(stats, -1.0)


class TestPep:
    def test_low_power_limit(self, passive_setup):
        config, moments = passive_setup
        pool = hypotheses(config.bit_map)
        weak = dataclasses.replace(config, p_t=1e-30)
        assert analysis.unconditional_pep(pool[0], pool[5], weak, moments) == \
            pytest.approx(1.0 / 3.0, rel=1e-9)

    def test_high_power_limit(self, passive_setup):
        config, moments = passive_setup
        pool = hypotheses(config.bit_map)
        strong = dataclasses.replace(config, p_t=1e9)
        assert analysis.unconditional_pep(pool[0], pool[5], strong, moments) < 1e-30

    def test_pairwise_simulation_oracle(self, passive_setup):
        # two-hypothesis competition: the averaged closed form must land
        # within a small factor of the simulated pairwise error frequency
        config, moments = passive_setup
        pool = hypotheses(config.bit_map)
        truth = next(h for h in pool if h.bit_label == "0001")
        error = next(h for h in pool if h.bit_label == "0010")
        point = dataclasses.replace(config, p_t=dbm_to_mw(8.0))
        predicted = analysis.unconditional_pep(truth, error, point, moments)
        assert 5e-4 < predicted < 5e-3  # operating near the 1e-3 level

        trials = 150_000
        errors = 0
        rng = np.random.default_rng(12)
        for t in range(trials):
            r = sample_channel(point.channel, stream_rng(71, STREAM_CHANNEL, t))
            s_true = noiseless_signal(point, r, truth)
            s_err = noiseless_signal(point, r, error)
            w = (rng.standard_normal() + 1j * rng.standard_normal()) / math.sqrt(2)
            y = s_true + w * math.sqrt(point.n0)
            if abs(y - s_err) ** 2 < abs(y - s_true) ** 2:
                errors += 1
        simulated = errors / trials
        assert predicted == pytest.approx(simulated, rel=0.5)

    def test_conjugate_symmetry(self, passive_setup):
        config, moments = passive_setup
        pool = hypotheses(config.bit_map)
        rng = np.random.default_rng(2)
        for _ in range(10):
            i, j = rng.choice(len(pool), size=2, replace=False)
            truth, error = pool[i], pool[j]
            reflected_truth = dataclasses.replace(
                truth, psi=-truth.psi, x=truth.x.conjugate()
            )
            reflected_error = dataclasses.replace(
                error, psi=-error.psi, x=error.x.conjugate()
            )
            direct = analysis.unconditional_pep(truth, error, config, moments)
            mirrored = analysis.unconditional_pep(
                reflected_truth, reflected_error, config, moments
            )
            assert mirrored == pytest.approx(direct, rel=1e-12)


class TestSerBounds:
    def test_overall_dominates(self, passive_setup):
        config, moments = passive_setup
        bounds = analysis.ser_bounds(config, moments)
        assert bounds.overall >= max(bounds.active, bounds.backscatter)

    def test_unmodulated_source_has_no_source_errors(self):
        spec = ExperimentSpec(mode="passive", schedule=(4, 12), a_psk=1,
                              p_t_dbm=(6.0,), trials=1)
        config = build_system(spec)
        moments = moment_set(config.channel)
        bounds = analysis.ser_bounds(config, moments)
        assert bounds.active == 0.0
        assert bounds.backscatter == bounds.overall

    def test_clamped_view(self, passive_setup):
        config, moments = passive_setup
        weak = dataclasses.replace(config, p_t=dbm_to_mw(-20.0))
        bounds = analysis.ser_bounds(weak, moments)
        assert bounds.overall > 1.0  # raw union sums may exceed one
        assert max(bounds.clamped()) == 1.0

    def test_effective_noise(self, passive_setup, active_setup):
        config_p, moments_p = passive_setup
        assert analysis.effective_noise(config_p, moments_p, 62) == config_p.n0
        config_a, moments_a = active_setup
        n_a = config_a.bit_map.alphabet[0]
        expected = (
            config_a.xi ** 2 * n_a * moments_a.f_moments[1] * config_a.n_v
            + config_a.n0
        )
        assert analysis.effective_noise(config_a, moments_a, n_a) == \
            pytest.approx(expected, rel=1e-14)

    def test_pep_table_size(self, passive_setup):
        config, moments = passive_setup
        table = analysis.pep_table(config, moments)
        assert len(table.values) == 16 * 15
        assert all(0.0 <= v <= 1.0 for v in table.values.values())
