import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sichainfl.datagen import (
    LabeledDataset,
    ScenarioSet,
    assign_quality,
    build_scenarios,
    corrupt_labels,
    dirichlet_partition,
    feature_summary,
    gen_rare_event_dataset,
    stratify_validation,
)
from sichainfl.model import ModelParams, local_train, predict_proba


class TestGenerate:
    def test_exact_positive_count(self):
        d = gen_rare_event_dataset(1000, 5, 0.1, 0.5, 0)
        assert d.n_positive == 100
        assert d.positive_rate == pytest.approx(d.labels.mean(), abs=1e-12)

    def test_deterministic(self):
        a = gen_rare_event_dataset(300, 4, 0.2, 0.3, 11)
        b = gen_rare_event_dataset(300, 4, 0.2, 0.3, 11)
        assert a.features.tobytes() == b.features.tobytes()
        assert a.labels.tobytes() == b.labels.tobytes()

    def test_noise_free_is_learnable(self):
        d = gen_rare_event_dataset(500, 4, 0.2, 0.0, 5)
        m = ModelParams.zeros(4)
        u = local_train(m, d, 0.5, 200, 0)
        p = predict_proba(m.with_weights(m.weights + u.delta), d.features)
        assert np.mean((p >= 0.5) == d.labels) >= 0.99

    @pytest.mark.parametrize("rate", [0.0, 0.5, 0.7])
    def test_rate_bounds(self, rate):
        with pytest.raises(ValueError):
            gen_rare_event_dataset(100, 2, rate, 0.1, 0)

    def test_infeasible_count(self):
        with pytest.raises(ValueError, match="infeasible"):
            gen_rare_event_dataset(10, 2, 0.01, 0.1, 0)

    def test_csv_round_trip(self, tmp_path):
        d = gen_rare_event_dataset(50, 3, 0.1, 0.4, 2)
        d.to_csv(tmp_path / "d.csv")
        header = (tmp_path / "d.csv").read_text().splitlines()[0]
        assert header == "f0,f1,f2,label"
        back = LabeledDataset.from_csv(tmp_path / "d.csv")
        assert np.array_equal(back.features, d.features)
        assert np.array_equal(back.labels, d.labels)


class TestPartition:
    def test_single_client(self):
        d = gen_rare_event_dataset(200, 3, 0.1, 0.5, 0)
        (only,) = dirichlet_partition(d, 1, 0.5, 1.0, 0)
        assert np.array_equal(only.index, d.index)

    def test_exact_partition_many_seeds(self):
        d = gen_rare_event_dataset(2000, 3, 0.1, 0.5, 0)
        built = 0
        for seed in range(50):
            try:
                shards = dirichlet_partition(d, 8, 0.5, 0.5, seed)
            except ValueError as exc:
                # an empty client is reported, never silently produced
                assert "partition infeasible" in str(exc)
                continue
            built += 1
            idx = np.concatenate([s.index for s in shards])
            assert idx.size == d.n
            assert np.array_equal(np.sort(idx), np.arange(d.n))
            for s in shards:
                assert s.n > 0
                assert np.array_equal(s.features, d.features[s.index])
        assert built >= 45

    def test_concentrated_dirichlet_keeps_rate(self):
        d = gen_rare_event_dataset(10_000, 3, 0.1, 0.5, 1)
        shards = dirichlet_partition(d, 10, 1000.0, 0.0, 3)
        for s in shards:
            assert abs(s.positive_rate - 0.1) <= 0.05

    def test_infeasible(self):
        d = gen_rare_event_dataset(20, 2, 0.1, 0.5, 0)
        with pytest.raises(ValueError, match="partition infeasible"):
            dirichlet_partition(d, 40, 0.5, 0.0, 0)


class TestScenarios:
    def test_single(self):
        d = gen_rare_event_dataset(200, 3, 0.1, 0.5, 0)
        s = build_scenarios(d, 1)
        assert s.R == 1 and np.array_equal(s.scenarios[0].index, d.index)

    def test_partition_property(self):
        d = gen_rare_event_dataset(400, 3, 0.1, 0.5, 0)
        s = build_scenarios(d, 4, seed=2)
        idx = np.concatenate([sc.index for sc in s.scenarios])
        assert np.array_equal(np.sort(idx), np.arange(d.n))
        assert np.all((s.pi > 0) & (s.pi < 1))
        assert abs(s.omega.sum() - 1) <= 1e-12

    def test_omega_normalised(self):
        d = gen_rare_event_dataset(200, 3, 0.1, 0.5, 0)
        s = build_scenarios(d, 2, omega=(2, 2))
        assert np.array_equal(s.omega, [0.5, 0.5])

    def test_scenario_without_positive(self):
        d = gen_rare_event_dataset(100, 2, 0.02, 0.5, 0)
        with pytest.raises(ValueError, match="without positives"):
            build_scenarios(d, 3)


def _scenario(n_pos, n_neg, seed=0):
    rng = np.random.default_rng(seed)
    y = np.r_[np.ones(n_pos, dtype=int), np.zeros(n_neg, dtype=int)]
    return ScenarioSet([LabeledDataset(rng.normal(size=(y.size, 2)), y)], None)


class TestStratify:
    def test_budget(self):
        out = stratify_validation(_scenario(10, 500), 3.0, 0).scenarios[0]
        assert out.n_positive == 10 and out.n - out.n_positive == 30

    def test_saturates(self):
        out = stratify_validation(_scenario(10, 500), 1e6, 0).scenarios[0]
        assert out.n == 510

    def test_deterministic(self):
        a = stratify_validation(_scenario(10, 500), 2.5, 4).scenarios[0]
        b = stratify_validation(_scenario(10, 500), 2.5, 4).scenarios[0]
        assert np.array_equal(a.index, b.index)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 30), st.integers(1, 200), st.floats(0.1, 20), st.integers(0, 1000))
    def test_positives_kept(self, n_pos, n_neg, rho, seed):
        src = _scenario(n_pos, n_neg, seed)
        out = stratify_validation(src, rho, seed).scenarios[0]
        assert out.positive_index() == src.scenarios[0].positive_index()
        assert set(out.index.tolist()) <= set(src.scenarios[0].index.tolist())
        assert out.n - out.n_positive == min(int(np.floor(rho * n_pos + 1e-9)), n_neg)


class TestCorrupt:
    def test_identity_and_full(self):
        d = gen_rare_event_dataset(100, 2, 0.1, 0.5, 0)
        assert np.array_equal(corrupt_labels(d, 0.0, 1).labels, d.labels)
        assert np.array_equal(corrupt_labels(d, 1.0, 1).labels, 1 - d.labels)

    def test_hamming(self):
        d = gen_rare_event_dataset(100, 2, 0.1, 0.5, 0)
        out = corrupt_labels(d, 0.3, 1)
        assert int(np.sum(out.labels != d.labels)) == 30
        assert np.array_equal(out.features, d.features)


class TestQuality:
    def test_bands(self):
        for s in range(20):
            hi = assign_quality("honest_high", s).as_tuple()
            lo = assign_quality("honest_low", s).as_tuple()
            assert max(hi) <= 0.05
            assert min(lo) >= 0.2 and max(lo) <= 0.6

    def test_deterministic(self):
        assert assign_quality("poisoner", 3) == assign_quality("poisoner", 3)

    def test_custom_band(self):
        q = assign_quality("poisoner", 0, band=(0.9, 1.0))
        assert min(q.as_tuple()) >= 0.9

    def test_summary_unit_norm(self):
        d = gen_rare_event_dataset(100, 4, 0.1, 0.5, 0)
        assert np.linalg.norm(feature_summary(d)) == pytest.approx(1.0)
