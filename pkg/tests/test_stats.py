"""PP / WR / stability against constructed classifiers and the analytic
linear oracle."""

import numpy as np
import pytest

from certdw import (
    ClassRepresentatives,
    DomainError,
    LabeledDataset,
    LinearClassifier,
    NoiseSpec,
    RepresentativeUnavailableError,
    SeededStream,
    TableClassifier,
    TriggerSpec,
    analytic_pd_linear,
    principal_probability,
    select_class_representatives,
    stability,
    watermark_robustness,
)
from certdw.classifiers import Classifier

SHAPE = (1, 2, 2)
PIXEL = (1, 1, 1)


class FakeClassifier(Classifier):
    """Deterministic per-sample prediction distributions for arithmetic tests.

    Each input's first entry (scaled by 1000 so unit noise cannot flip it)
    indexes a row of ``count_rows``; label counts under noise are that row
    regardless of the noise values.
    """

    kind = "fake"

    def __init__(self, count_rows, input_shape=SHAPE):
        rows = np.asarray(count_rows, dtype=np.int64)
        super().__init__(rows.shape[1], input_shape)
        self.rows = rows

    def _row_index(self, first_entry):
        idx = int(round(float(first_entry) / 1000.0))
        return min(max(idx, 0), self.rows.shape[0] - 1)

    def logits(self, x):
        out = np.zeros(self.num_classes)
        out[self._row_index(np.asarray(x).ravel()[0]) % self.num_classes] = 1.0
        return out

    def label_counts(self, flat_batch):
        row = self.rows[self._row_index(flat_batch[0, 0])]
        scale = flat_batch.shape[0] // row.sum()
        return row * scale


def grid_pool(labels_per_class=6, k=4):
    """Pool where class k's samples all equal k/10 + 0.02 in every pixel
    (values sit well inside 0.05-wide quantization cells)."""
    tensors, labels = [], []
    for k_i in range(k):
        for _ in range(labels_per_class):
            tensors.append(np.full(SHAPE, k_i / 10.0 + 0.02, dtype=np.float32))
            labels.append(k_i)
    return LabeledDataset(np.stack(tensors), np.array(labels), k, "test")


def grid_table(k=4):
    """Table classifier that classifies the grid_pool perfectly."""
    table = {}
    for k_i in range(k):
        flat = np.full(4, np.float32(k_i / 10.0 + 0.02), dtype=np.float64)
        cell = tuple(int(v) for v in np.floor(flat / 0.05))
        table[cell] = k_i
    return TableClassifier(0.05, table, 0, k, SHAPE)


class TestSelectRepresentatives:
    def test_perfect_classifier_yields_one_correct_per_class(self):
        pool = grid_pool()
        clf = grid_table()
        reps = select_class_representatives(clf, pool, SeededStream(1))
        assert reps.samples.shape == (4, 1) + SHAPE
        for k in range(4):
            assert clf.predict(reps.samples[k, 0]) == k

    def test_missing_class_is_named(self):
        pool = grid_pool()
        clf = TableClassifier(0.5, {}, 2, 4, SHAPE)  # constant 2: misses 3 classes
        with pytest.raises(RepresentativeUnavailableError) as err:
            select_class_representatives(clf, pool, SeededStream(1))
        assert err.value.class_label == 0

    def test_two_seeds_both_satisfy_the_predicate(self):
        pool = grid_pool()
        clf = grid_table()
        for seed in (1, 2):
            reps = select_class_representatives(clf, pool, SeededStream(seed),
                                                samples_per_class=2)
            for k in range(4):
                for i in range(2):
                    assert pool.labels[0] is not None
                    assert clf.predict(reps.samples[k, i]) == k

    def test_not_enough_candidates_for_multiple(self):
        pool = grid_pool(labels_per_class=1)
        with pytest.raises(RepresentativeUnavailableError):
            select_class_representatives(grid_table(), pool, SeededStream(1),
                                         samples_per_class=2)


def fake_reps(k=4, per_class=1):
    samples = np.zeros((k, per_class) + SHAPE)
    for k_i in range(k):
        samples[k_i, :, 0, 0, 0] = 1000.0 * k_i
    return ClassRepresentatives(samples)


SPEC = NoiseSpec.gaussian(1.0)


class TestPrincipalProbability:
    def test_average_of_two_rows(self):
        # PDs [0.7, 0.3] and [0.4, 0.6] -> average [0.55, 0.45] -> PP 0.55
        clf = FakeClassifier([[7, 3], [4, 6]])
        reps = fake_reps(k=2)
        pp = principal_probability(clf, reps, SPEC, 100, SeededStream(3))
        assert pp == pytest.approx(0.55)

    def test_constant_classifier_has_pp_one(self):
        clf = TableClassifier(0.5, {}, 0, 4, SHAPE)
        pp = principal_probability(clf, fake_reps(), SPEC, 64, SeededStream(3))
        assert pp == 1.0

    def test_balanced_table_tends_to_one_over_k(self):
        # single pixel; labels cycle over 0.5-wide cells; the uniform (-2, 2)
        # noise window spans exactly four label periods from any start, so
        # every per-sample PD is exactly uniform (interval-overlap oracle).
        cells = range(-6, 10)
        table = {(c,): c % 4 for c in cells}
        clf = TableClassifier(0.5, table, 0, 4, PIXEL)
        spec = NoiseSpec.uniform(-2.0, 2.0)
        xs = [0.25 + 0.5 * k for k in range(4)]
        masses = np.zeros(4)
        for x in xs:  # brute-force expected frequencies over all cells
            for c in cells:
                lo, hi = max(c * 0.5, x - 2.0), min((c + 1) * 0.5, x + 2.0)
                masses[c % 4] += max(0.0, hi - lo) / 4.0 / len(xs)
        np.testing.assert_allclose(masses, 0.25, atol=1e-12)
        reps = ClassRepresentatives(np.array([[[[[x]]]] for x in xs]))
        for k in range(4):
            assert clf.predict(reps.samples[k, 0]) == k
        pp = principal_probability(clf, reps, spec, 8192, SeededStream(4))
        assert abs(pp - 0.25) <= 0.02

    def test_pp_at_least_one_over_k(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            rows = rng.multinomial(16, np.ones(4) / 4, size=4)
            clf = FakeClassifier(rows)
            pp = principal_probability(clf, fake_reps(), SPEC, 16, SeededStream(6))
            assert pp >= 0.25 - 1e-12


def linear_handle(w, b):
    w = np.asarray(w, dtype=np.float64).reshape(1, -1)
    return LinearClassifier(np.vstack([np.zeros_like(w), w]),
                            np.array([0.0, float(b)]), SHAPE)


class TestWatermarkRobustness:
    def test_constant_target_classifier(self):
        clf = TableClassifier(0.5, {}, 1, 4, SHAPE)
        trig = TriggerSpec("blended-noise", 1, np.zeros(SHAPE), l2_budget=None)
        assert watermark_robustness(clf, fake_reps(), trig, SPEC, 32,
                                    SeededStream(7)) == 1.0

    def test_never_target_classifier(self):
        clf = TableClassifier(0.5, {}, 0, 4, SHAPE)
        trig = TriggerSpec("blended-noise", 1, np.zeros(SHAPE))
        assert watermark_robustness(clf, fake_reps(), trig, SPEC, 32,
                                    SeededStream(7)) == 0.0

    def test_linear_oracle_per_sample(self):
        rng = np.random.default_rng(8)
        w = rng.standard_normal(4)
        b = 0.1
        v = rng.standard_normal(SHAPE) * 0.3
        clf = linear_handle(w, b)
        sigma = 0.9
        reps = ClassRepresentatives(rng.random((2, 1) + SHAPE))
        trig = TriggerSpec("blended-noise", 1, v)
        m = 100_000
        got = watermark_robustness(clf, reps, trig, NoiseSpec.gaussian(sigma), m,
                                   SeededStream(9), clip=False)
        expected = min(
            analytic_pd_linear(w, b, reps.samples[k, 0] + v, sigma)
            for k in range(2)
        )
        assert abs(got - expected) <= 0.006

    def test_zero_trigger_equals_stability_on_same_streams(self):
        rng = np.random.default_rng(10)
        clf = linear_handle(rng.standard_normal(4), 0.0)
        reps = ClassRepresentatives(rng.random((2, 1) + SHAPE))
        zero = TriggerSpec("blended-noise", 1, np.zeros(SHAPE))
        s = SeededStream(11)
        wr = watermark_robustness(clf, reps, zero, SPEC, 512, s)
        st = stability(clf, reps, 1, SPEC, 512, s)
        assert wr == st

    def test_min_reduction_matches_per_sample_oracle(self):
        # recompute the per-sample entries with the same substreams: WR must
        # equal their min, and shrinking one entry can only lower the min
        from certdw import estimate_pd, apply_trigger
        rng = np.random.default_rng(12)
        clf = linear_handle(rng.standard_normal(4), -0.1)
        reps = ClassRepresentatives(rng.random((2, 1) + SHAPE))
        trig = TriggerSpec("blended-noise", 1, rng.standard_normal(SHAPE) * 0.2)
        s = SeededStream(13)
        vals = []
        for k in range(2):
            x = apply_trigger(reps.samples[k, 0], trig, clip=True)
            pd = estimate_pd(clf, x, SPEC, 256, s.child(k, 0))
            vals.append(float(pd.probs[1]))
        got = watermark_robustness(clf, reps, trig, SPEC, 256, s)
        assert got == min(vals)
        assert min(vals + [got - 0.1]) <= got

    def test_values_are_multiples_of_inverse_m(self):
        rng = np.random.default_rng(14)
        clf = linear_handle(rng.standard_normal(4), 0.2)
        reps = ClassRepresentatives(rng.random((2, 1) + SHAPE))
        trig = TriggerSpec("blended-noise", 1, rng.standard_normal(SHAPE) * 0.1)
        m = 640
        for fn in (
            lambda: watermark_robustness(clf, reps, trig, SPEC, m, SeededStream(15)),
            lambda: stability(clf, reps, 1, SPEC, m, SeededStream(15)),
            lambda: principal_probability(clf, reps, SPEC, m, SeededStream(15)),
        ):
            val = fn()
            assert 0.0 <= val <= 1.0
            scaled = val * m * reps.num_classes  # PP averages K per-sample PDs
            assert abs(scaled - round(scaled)) < 1e-9


class TestStability:
    def test_constant_target(self):
        clf = TableClassifier(0.5, {}, 1, 4, SHAPE)
        assert stability(clf, fake_reps(), 1, SPEC, 64, SeededStream(16)) == 1.0

    def test_never_target(self):
        clf = TableClassifier(0.5, {}, 3, 4, SHAPE)
        assert stability(clf, fake_reps(), 1, SPEC, 64, SeededStream(16)) == 0.0

    def test_linear_oracle(self):
        rng = np.random.default_rng(17)
        w = rng.standard_normal(4)
        clf = linear_handle(w, 0.05)
        reps = ClassRepresentatives(rng.random((2, 1) + SHAPE))
        sigma = 1.1
        got = stability(clf, reps, 1, NoiseSpec.gaussian(sigma), 100_000,
                        SeededStream(18))
        expected = min(
            analytic_pd_linear(w, 0.05, reps.samples[k, 0], sigma)
            for k in range(2)
        )
        assert abs(got - expected) <= 0.006

    def test_target_out_of_range(self):
        clf = TableClassifier(0.5, {}, 1, 4, SHAPE)
        with pytest.raises(DomainError):
            stability(clf, fake_reps(), 7, SPEC, 16, SeededStream(19))
