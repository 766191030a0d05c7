import numpy as np
import pytest

from convcnp.kernels import DATA_KERNELS, EQ, gram
from convcnp.synthdata import (
    LVTrajectory,
    ProcessSpec,
    RejectedTrajectory,
    Task,
    gillespie_lv,
    gp_sample,
    lv_to_task,
    lv_total_rate,
    make_rng,
    sample_task,
    sawtooth_sample,
)


class TestGPSample:
    def test_empty_input(self):
        assert gp_sample(EQ(), [], seed=0).shape == (0,)

    def test_deterministic_per_seed(self):
        xs = np.linspace(-2, 2, 30)
        a = gp_sample(EQ(), xs, seed=123)
        b = gp_sample(EQ(), xs, seed=123)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, gp_sample(EQ(), xs, seed=124))

    def test_marginal_variance(self):
        draws = np.array([gp_sample(EQ(), [0.3], seed=s)[0] for s in range(10000)])
        assert draws.var() == pytest.approx(1.0, abs=0.05)

    def test_two_point_correlation(self):
        draws = np.array([gp_sample(EQ(), [0.0, 0.25], seed=s) for s in range(10000)])
        corr = np.corrcoef(draws.T)[0, 1]
        assert corr == pytest.approx(np.exp(-0.5), abs=0.03)

    @pytest.mark.parametrize("kind", list(DATA_KERNELS))
    def test_empirical_covariance_matches_gram(self, kind):
        kernel = DATA_KERNELS[kind]
        probes = np.array([-1.5, -0.4, 0.0, 0.7, 1.8])
        draws = np.stack([gp_sample(kernel, probes, seed=s) for s in range(10000)])
        emp = draws.T @ draws / len(draws)
        expected = gram(kernel, probes)
        n = len(draws)
        # MC stderr of a covariance estimate: sqrt((kii*kjj + kij^2)/n)
        stderr = np.sqrt(
            (np.outer(np.diag(expected), np.diag(expected)) + expected**2) / n
        )
        assert np.all(np.abs(emp - expected) <= 3 * stderr)


class TestSawtooth:
    def _params(self, seed):
        rng = make_rng(seed)
        freq = rng.uniform(3.0, 5.0)
        trunc = int(rng.integers(10, 21))
        shift = rng.uniform(-5.0, 5.0)
        return freq, trunc, shift

    def test_value_at_shift_is_half_amplitude(self):
        for seed in range(5):
            _, _, shift = self._params(seed)
            assert sawtooth_sample([shift], seed=seed)[0] == pytest.approx(0.5)

    def test_amplitude_bound_on_dense_grids(self):
        xs = np.linspace(-2, 2, 10000)
        for seed in range(100):
            ys = sawtooth_sample(xs, seed=seed)
            assert ys.min() > -0.1 and ys.max() < 1.1

    def test_deterministic(self):
        xs = np.linspace(-2, 2, 64)
        np.testing.assert_array_equal(
            sawtooth_sample(xs, seed=9), sawtooth_sample(xs, seed=9)
        )

    def test_parameter_ranges(self):
        freqs, truncs, shifts = zip(*(self._params(s) for s in range(200)))
        assert 3 <= min(freqs) and max(freqs) <= 5
        assert 10 <= min(truncs) and max(truncs) <= 20
        assert -5 <= min(shifts) and max(shifts) <= 5


class TestGillespie:
    def test_rate_arithmetic(self):
        assert lv_total_rate((0.01, 0.5, 1.0, 0.01), 50, 100) == pytest.approx(225.0)

    def test_extinct_state_terminates_immediately(self):
        tr = gillespie_lv(x0=0, y0=0, seed=0)
        assert tr.n_events == 0

    def test_population_changes_by_one_per_event(self):
        tr = gillespie_lv(seed=3, max_events=500)
        steps = np.abs(np.diff(tr.predators)) + np.abs(np.diff(tr.prey))
        np.testing.assert_array_equal(steps, np.ones(tr.n_events))

    def test_interevent_times_positive(self):
        tr = gillespie_lv(seed=4, max_events=500)
        assert np.all(np.diff(tr.times) > 0)

    def test_pure_death_mean(self):
        # X' = -theta2 X gives E[X(t)] = 100 exp(-theta2 t)
        theta2, t_probe = 0.5, 2.0
        finals = []
        for seed in range(1000):
            tr = gillespie_lv(
                theta=(0.0, theta2, 1.0, 0.0), x0=100, y0=0, seed=seed, max_time=10.0
            )
            i = np.searchsorted(tr.times, t_probe, side="right") - 1
            finals.append(tr.predators[i])
        expected = 100 * np.exp(-theta2 * t_probe)
        assert np.mean(finals) == pytest.approx(expected, rel=0.10)

    def test_event_proportions_chi_squared(self):
        from scipy.stats import chisquare

        counts = np.zeros(4, dtype=int)
        for seed in range(30000):
            tr = gillespie_lv(seed=seed, max_events=1, max_time=np.inf)
            dx = tr.predators[1] - tr.predators[0]
            dy = tr.prey[1] - tr.prey[0]
            counts[{(1, 0): 0, (-1, 0): 1, (0, 1): 2, (0, -1): 3}[(dx, dy)]] += 1
        rates = np.array([0.01 * 50 * 100, 0.5 * 50, 1.0 * 100, 0.01 * 50 * 100])
        _, p = chisquare(counts, counts.sum() * rates / rates.sum())
        assert p > 1e-4

    def test_rejects_invalid_rates(self):
        with pytest.raises(ValueError):
            gillespie_lv(theta=(0, 0, 0, 0))
        with pytest.raises(ValueError):
            gillespie_lv(x0=-1)


def _ok_trajectory(n=200, duration=50.0):
    times = np.linspace(0, duration, n)
    rng = np.random.default_rng(0)
    return LVTrajectory(
        times=times,
        predators=rng.integers(1, 100, size=n),
        prey=rng.integers(1, 100, size=n),
    )


class TestLVTask:
    def test_rejects_long_duration(self):
        with pytest.raises(RejectedTrajectory, match="100"):
            lv_to_task(_ok_trajectory(duration=100.5), seed=0)

    def test_rejects_too_many_events(self):
        with pytest.raises(RejectedTrajectory, match="10000"):
            lv_to_task(_ok_trajectory(n=10002), seed=0)

    def test_rejects_zero_population_channel(self):
        tr = _ok_trajectory()
        tr.prey[...] = 0
        with pytest.raises(RejectedTrajectory, match="zero"):
            lv_to_task(tr, seed=0)

    def test_accepted_task_scaled_and_sized(self):
        tr = _ok_trajectory()
        task = lv_to_task(tr, seed=1)
        assert len(task.context_x) + len(task.target_x) == 150
        assert 3 <= len(task.context_x) <= 80
        raw = np.stack([tr.predators, tr.prey], axis=1)
        lookup = {t: row for t, row in zip(tr.times, raw)}
        for x, y in zip(task.context_x, task.context_y):
            np.testing.assert_allclose(y, 2.0 / 7.0 * lookup[x])

    def test_context_target_disjoint(self):
        task = lv_to_task(_ok_trajectory(), seed=2)
        assert not set(task.context_x) & set(task.target_x)


class TestSampleTask:
    def test_inputs_within_range(self):
        for seed in range(20):
            task = sample_task(ProcessSpec("eq"), seed)
            xs = np.concatenate([task.context_x, task.target_x])
            assert xs.min() >= -2 and xs.max() <= 2

    def test_counts_within_bounds(self):
        for seed in range(50):
            task = sample_task(ProcessSpec("eq"), seed)
            assert 3 <= len(task.context_x) <= 50
            assert 3 <= len(task.target_x) <= 50

    def test_sawtooth_default_counts(self):
        spec = ProcessSpec.default_for("sawtooth")
        sizes = [len(sample_task(spec, s).target_x) for s in range(100)]
        assert max(sizes) > 50  # wider target range than the GP processes

    def test_disjoint_by_construction(self):
        task = sample_task(ProcessSpec("eq"), 5)
        assert not set(task.context_x) & set(task.target_x)

    def test_deterministic(self):
        a = sample_task(ProcessSpec("eq"), 11)
        b = sample_task(ProcessSpec("eq"), 11)
        np.testing.assert_array_equal(a.context_y, b.context_y)

    def test_shifted_range_translates_tasks(self):
        base = sample_task(ProcessSpec("eq", x_range=(-2.0, 2.0)), 7)
        shifted = sample_task(ProcessSpec("eq", x_range=(2.0, 6.0)), 7)
        np.testing.assert_allclose(shifted.context_x, base.context_x + 4, atol=1e-12)
        np.testing.assert_allclose(shifted.context_y, base.context_y, atol=1e-6)
        np.testing.assert_allclose(shifted.target_y, base.target_y, atol=1e-6)

    def test_lv_task_shape(self):
        task = sample_task(ProcessSpec("lotka-volterra"), 1)
        assert task.dim_y == 2
        assert len(task.context_x) + len(task.target_x) == 150

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            ProcessSpec("plasticc")


class TestTaskSerialization:
    def test_json_roundtrip(self):
        task = sample_task(ProcessSpec("eq"), 3)
        restored = Task.from_json(task.to_json())
        np.testing.assert_array_equal(restored.context_x, task.context_x)
        np.testing.assert_array_equal(restored.target_y, task.target_y)
        assert restored.process == "eq" and restored.seed == 3

    def test_translated(self):
        task = sample_task(ProcessSpec("eq"), 4)
        moved = task.translated(4.0)
        np.testing.assert_allclose(moved.context_x, task.context_x + 4.0)
        np.testing.assert_array_equal(moved.context_y, task.context_y)
