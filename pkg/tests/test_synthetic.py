import numpy as np
import pytest
from scipy.stats import chi2_contingency

from markerloop.synthetic import SyntheticSpec, generate_synthetic
from markerloop.table import MISSING, select_target


class TestDeterminism:
    def test_same_seed_same_table(self):
        spec = SyntheticSpec(
            n_rows=200,
            n_noise_numeric=3,
            n_noise_categorical=2,
            informative_markers=(("sig", 1.5),),
            leakage_marker=("leak", 0.8),
            positive_rate=0.3,
            missing_rate=0.15,
            seed=7,
        )
        a = generate_synthetic(spec)
        b = generate_synthetic(spec)
        assert a.fingerprint() == b.fingerprint()

    def test_different_seed_differs(self):
        base = dict(
            n_rows=200, n_noise_numeric=2, positive_rate=0.3, missing_rate=0.0
        )
        a = generate_synthetic(SyntheticSpec(seed=1, **base))
        b = generate_synthetic(SyntheticSpec(seed=2, **base))
        assert a.fingerprint() != b.fingerprint()


class TestConstruction:
    def test_full_determinism_leak_equals_label(self):
        spec = SyntheticSpec(
            n_rows=300,
            informative_markers=(("sig", 1.0),),
            leakage_marker=("leak", 1.0),
            positive_rate=0.25,
            seed=3,
        )
        t = generate_synthetic(spec)
        leak = t.categorical_values("leak")
        outcome = t.categorical_values("outcome")
        assert all(a == b for a, b in zip(leak, outcome))

    def test_positive_rate_hits_target(self):
        spec = SyntheticSpec(
            n_rows=2000,
            n_noise_numeric=2,
            informative_markers=(("sig", 2.0),),
            positive_rate=0.2,
            seed=11,
        )
        t = generate_synthetic(spec)
        _, y = select_target(t, "outcome")
        # binomial sd at n=2000 is ~0.009; 0.03 is beyond 3 sigma
        assert abs(float(np.mean(y)) - 0.2) <= 0.03

    def test_missing_rate_applies_to_features_only(self):
        spec = SyntheticSpec(
            n_rows=1000,
            n_noise_numeric=4,
            n_noise_categorical=2,
            positive_rate=0.4,
            missing_rate=0.2,
            seed=5,
        )
        t = generate_synthetic(spec)
        assert t.missing_count("outcome") == 0
        fractions = [
            t.missing_fraction(m.name) for m in t.schema if m.name != "outcome"
        ]
        assert all(0.1 < f < 0.3 for f in fractions)

    def test_target_name_collision_rejected(self):
        with pytest.raises(ValueError, match="collides"):
            SyntheticSpec(n_rows=10, informative_markers=(("outcome", 1.0),))

    def test_invalid_rates_rejected(self):
        with pytest.raises(ValueError):
            SyntheticSpec(n_rows=10, positive_rate=0.0)
        with pytest.raises(ValueError):
            SyntheticSpec(n_rows=10, missing_rate=1.0)


class TestIndependenceSmoke:
    def test_zero_effect_means_label_independent_of_features(self):
        # statistical smoke test at a fixed seed, as documented
        spec = SyntheticSpec(
            n_rows=10000,
            n_noise_numeric=2,
            n_noise_categorical=2,
            informative_markers=(("sig", 0.0),),
            positive_rate=0.3,
            seed=42,
        )
        t = generate_synthetic(spec)
        feats, y = select_target(t, "outcome")
        for name in ("noise_c00", "noise_c01"):
            values = feats.categorical_values(name)
            cats = sorted(set(values))
            table = [
                [sum(1 for v, lab in zip(values, y) if v == c and lab == k) for c in cats]
                for k in (0, 1)
            ]
            _, p, _, _ = chi2_contingency(np.asarray(table))
            assert p > 0.01
        for name in ("sig", "noise_n00", "noise_n01"):
            x = feats.numeric_values(name)
            bins = np.quantile(x, [0.25, 0.5, 0.75])
            binned = np.digitize(x, bins)
            table = [
                [int(np.sum((binned == b) & (y == k))) for b in range(4)]
                for k in (0, 1)
            ]
            _, p, _, _ = chi2_contingency(np.asarray(table))
            assert p > 0.01
