import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gramtraj.analysis import (
    ClusterAssignment,
    CorrelationReport,
    ReferenceVector,
    TrajectoryMatrix,
    align_by_perplexity,
    cluster_trajectories,
    correlate,
    correlation_curve,
    fleiss_kappa,
    load_reference_csv,
    mean_pairwise_correlation,
    metric_vector,
    save_reference_csv,
)
from gramtraj.harness import Challenge, ChallengeSuite, DecisionMatrix, MinimalPair


def make_traj(values, steps=None, ppl=None, model_id="m", vocab_hash="vh", uids=None):
    values = np.asarray(values, dtype=np.float64)
    n_steps, n_ch = values.shape
    steps = list(range(0, n_steps * 10, 10)) if steps is None else steps
    ppl = list(np.linspace(20.0, 5.0, n_steps)) if ppl is None else ppl
    uids = [f"ch{j:02d}" for j in range(n_ch)] if uids is None else uids
    return TrajectoryMatrix(
        steps=steps,
        perplexities=ppl,
        values=values,
        challenges=[(u, f"term_{u}", "syntax") for u in uids],
        model_id=model_id,
        vocab_hash=vocab_hash,
    )


class TestCorrelate:
    def test_affine_pearson_is_one(self):
        v1 = [0.1, 0.35, 0.2, 0.4]
        v2 = [2 * x + 0.1 for x in v1]
        assert correlate(v1, v2, "pearson") == pytest.approx(1.0, abs=1e-12)

    def test_strictly_decreasing_spearman(self):
        v1 = [0.1, 0.5, 0.3, 0.9, 0.7]
        v2 = [0.9, 0.2, 0.6, 0.01, 0.1]  # reversed order of v1
        assert correlate(v1, v2, "spearman") == pytest.approx(-1.0, abs=1e-12)

    def test_hand_formula_oracle(self):
        v1 = [0.1, 0.4, 0.2, 0.9]
        v2 = [0.2, 0.5, 0.1, 0.8]
        # hand computation: deviations (-.3, 0, -.2, .5) and (-.2, .1, -.3, .4)
        want = 0.32 / math.sqrt(0.38 * 0.30)
        assert correlate(v1, v2, "pearson") == pytest.approx(want, abs=1e-12)

    def test_constant_vector_errors(self):
        with pytest.raises(ValueError, match="zero variance"):
            correlate([0.5, 0.5, 0.5], [0.1, 0.2, 0.3])

    def test_too_short_errors(self):
        with pytest.raises(ValueError, match="at least 3"):
            correlate([1.0, 2.0], [2.0, 1.0])

    def test_spearman_tie_handling(self):
        # ties get average ranks: [1, 2.5, 2.5, 4]
        r = correlate([1.0, 2.0, 2.0, 3.0], [1.0, 2.0, 3.0, 4.0], "spearman")
        # hand computation with ranks a=[1,2.5,2.5,4], b=[1,2,3,4]
        a = np.array([1, 2.5, 2.5, 4.0]) - 2.5
        b = np.array([1.0, 2, 3, 4]) - 2.5
        want = float(a @ b / np.sqrt((a @ a) * (b @ b)))
        assert r == pytest.approx(want, abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(st.integers(0, 10**6), min_size=4, max_size=12, unique=True),
        st.floats(0.1, 5.0),
        st.floats(-1.0, 1.0),
    )
    def test_symmetry_and_affine_invariance(self, grid, scale, shift):
        # well-separated values: float absorption cannot reorder ranks
        xs = [0.05 + 0.9 * g / 10**6 for g in grid]
        rng = np.random.default_rng(len(xs))
        ys = rng.permutation(xs)
        if np.var(ys) == 0:
            return
        r1 = correlate(xs, list(ys))
        assert correlate(list(ys), xs) == pytest.approx(r1, abs=1e-9)
        assert correlate([scale * x + shift for x in xs], list(ys)) == pytest.approx(r1, abs=1e-6)
        assert correlate(xs, list(ys), "spearman") == pytest.approx(
            correlate([scale * x + shift for x in xs], list(ys), "spearman"), abs=1e-12
        )


class TestMeanPairwise:
    def test_identical_vectors(self):
        v = [0.1, 0.2, 0.5, 0.4]
        rep = mean_pairwise_correlation([v, v, v])
        assert rep.mean_r == pytest.approx(1.0)
        assert len(rep.pairs) == 3

    def test_two_vectors_equals_single(self):
        v1, v2 = [0.1, 0.4, 0.3], [0.2, 0.3, 0.9]
        rep = mean_pairwise_correlation([v1, v2])
        assert rep.mean_r == pytest.approx(correlate(v1, v2))

    def test_matches_per_pair_oracle(self):
        rng = np.random.default_rng(3)
        vecs = [rng.random(10).tolist() for _ in range(4)]
        rep = mean_pairwise_correlation(vecs, labels=list("abcd"))
        assert len(rep.pairs) == 6
        for la, lb, r in rep.pairs:
            ia, ib = "abcd".index(la), "abcd".index(lb)
            assert r == pytest.approx(correlate(vecs[ia], vecs[ib]), abs=1e-12)
        assert rep.mean_r == pytest.approx(np.mean([r for _, _, r in rep.pairs]))


class TestCorrelationCurve:
    def test_ref_equal_to_final_row(self):
        rng = np.random.default_rng(1)
        values = rng.uniform(0.2, 0.9, size=(6, 8))
        traj = make_traj(values)
        ref = ReferenceVector("final", dict(zip(traj.uids, values[-1])))
        curve = correlation_curve(traj, ref)
        assert curve.argmax_step == traj.steps[-1]
        assert curve.r_values[-1] == pytest.approx(1.0, abs=1e-12)

    def test_linear_interpolation_peaks_at_matched_step(self):
        # endpoints share their centered norm (reversal) but differ in mean,
        # so the correlation peak and the matched-performance step coincide
        a = np.array([0.08, -0.04, 0.02, -0.08, 0.04, -0.02, 0.06, -0.06])
        start = a + 0.40
        end = a[::-1] + 0.60
        steps = 11
        values = np.stack([start + (t / (steps - 1)) * (end - start) for t in range(steps)])
        traj = make_traj(values)
        ref = ReferenceVector("mid", dict(zip(traj.uids, (start + end) / 2)))
        curve = correlation_curve(traj, ref)

        # enumeration oracle over all steps
        rs = [correlate(values[i], (start + end) / 2) for i in range(steps)]
        assert curve.argmax_step == traj.steps[int(np.argmax(rs))]
        gaps = [abs(values[i].mean() - ref.mean_accuracy) for i in range(steps)]
        assert curve.matched_performance_step == traj.steps[int(np.argmin(gaps))]

        middle = traj.steps[steps // 2]
        assert curve.argmax_step == middle
        assert curve.matched_performance_step == middle

    def test_matched_step_monotone_scan(self):
        means = np.linspace(0.3, 0.95, 9)
        values = np.tile(means[:, None], (1, 4)) + np.array([0.0, 0.01, -0.01, 0.02])
        traj = make_traj(values)
        ref = ReferenceVector("r", dict(zip(traj.uids, [0.67, 0.68, 0.66, 0.69])))
        curve = correlation_curve(traj, ref)
        gaps = [abs(row.mean() - curve.ref_mean_accuracy) for row in values]
        assert curve.matched_performance_step == traj.steps[int(np.argmin(gaps))]

    def test_empty_join_errors(self):
        traj = make_traj(np.random.default_rng(0).random((4, 5)))
        ref = ReferenceVector("r", {"zzz": 0.5})
        with pytest.raises(ValueError, match="empty join"):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                correlation_curve(traj, ref)

    def test_partial_join_warns(self):
        traj = make_traj(np.random.default_rng(0).random((4, 5)))
        acc = {u: 0.5 + 0.1 * j for j, u in enumerate(traj.uids[:4])}
        with pytest.warns(UserWarning, match="inner join dropped"):
            correlation_curve(traj, ReferenceVector("r", acc))

    def test_label_permutation_invariance(self):
        rng = np.random.default_rng(5)
        values = rng.uniform(0.1, 0.9, size=(7, 6))
        traj = make_traj(values)
        ref = ReferenceVector("r", dict(zip(traj.uids, rng.uniform(0.2, 0.8, 6))))
        base = correlation_curve(traj, ref)
        perm = rng.permutation(6)
        traj2 = make_traj(values[:, perm], uids=[traj.uids[j] for j in perm])
        curve2 = correlation_curve(traj2, ref)
        assert curve2.argmax_step == base.argmax_step
        assert curve2.matched_performance_step == base.matched_performance_step
        assert curve2.r_values == pytest.approx(base.r_values, abs=1e-12)


class TestAlignByPerplexity:
    def test_identity_on_self(self):
        traj = make_traj(np.random.default_rng(0).random((5, 4)), ppl=[10, 8, 6, 4, 2])
        assert align_by_perplexity(traj, traj) == [(s, s) for s in traj.steps]

    def test_nearest_log_matching(self):
        ta = make_traj(np.random.default_rng(0).random((3, 4)), ppl=[10, 5, 2], steps=[1, 2, 3])
        tb = make_traj(np.random.default_rng(1).random((3, 4)), ppl=[9, 4.8, 2.2], steps=[7, 8, 9])
        assert align_by_perplexity(ta, tb) == [(1, 7), (2, 8), (3, 9)]

    def test_disjoint_ranges_collapse(self):
        ta = make_traj(np.random.default_rng(0).random((2, 4)), ppl=[100, 90], steps=[1, 2])
        tb = make_traj(np.random.default_rng(1).random((3, 4)), ppl=[3, 2, 1.5], steps=[5, 6, 7])
        assert align_by_perplexity(ta, tb) == [(1, 5), (2, 5)]

    def test_vocab_hash_mismatch(self):
        ta = make_traj(np.random.default_rng(0).random((3, 4)), vocab_hash="aa")
        tb = make_traj(np.random.default_rng(1).random((3, 4)), vocab_hash="bb")
        with pytest.raises(ValueError, match="hash mismatch"):
            align_by_perplexity(ta, tb)


class TestFleissKappa:
    def test_perfect_agreement_mixed_items(self):
        bits = np.array([[1, 1, 1], [0, 0, 0], [1, 1, 1], [0, 0, 0]])
        dm = DecisionMatrix(bits, [f"i{k}" for k in range(4)], ["a", "b", "c"])
        assert fleiss_kappa(dm) == pytest.approx(1.0)

    def test_degenerate_all_identical(self):
        bits = np.ones((5, 3))
        dm = DecisionMatrix(bits, [f"i{k}" for k in range(5)], ["a", "b", "c"])
        assert fleiss_kappa(dm) == 1.0

    def test_independent_coins_near_zero(self):
        rng = np.random.default_rng(8)
        bits = rng.integers(0, 2, size=(10_000, 2))
        dm = DecisionMatrix(bits, [f"i{k}" for k in range(10_000)], ["a", "b"])
        assert abs(fleiss_kappa(dm)) <= 0.05

    def test_worked_example(self):
        # 3 raters x 4 items; hand computation:
        # item agreements P_i = 1, 1/3, 1, 1/3 -> P_bar = 2/3
        # p(cat=1) = 6/12 -> P_e = 1/2 -> kappa = (2/3 - 1/2) / (1/2) = 1/3
        bits = np.array([[1, 1, 1], [1, 1, 0], [0, 0, 0], [1, 0, 0]])
        dm = DecisionMatrix(bits, list("wxyz"), list("abc"))
        assert fleiss_kappa(dm) == pytest.approx(1 / 3, abs=1e-9)

    def test_order_invariance(self):
        rng = np.random.default_rng(4)
        bits = rng.integers(0, 2, size=(40, 5))
        dm = DecisionMatrix(bits, [f"i{k}" for k in range(40)], list("abcde"))
        k0 = fleiss_kappa(dm)
        rp = rng.permutation(40)
        cp = rng.permutation(5)
        dm2 = DecisionMatrix(bits[rp][:, cp], [f"i{k}" for k in rp], [f"c{j}" for j in cp])
        assert fleiss_kappa(dm2) == pytest.approx(k0, abs=1e-12)

    def test_min_sizes(self):
        with pytest.raises(ValueError, match="at least 2"):
            fleiss_kappa(DecisionMatrix(np.ones((3, 1)), list("abc"), ["x"]))


def suite_of(sentences_by_uid):
    challenges = []
    for uid, items in sentences_by_uid.items():
        pairs = [
            MinimalPair(good, bad, i, annotations=dict(ann))
            for i, (good, bad, ann) in enumerate(items)
        ]
        challenges.append(Challenge(uid=uid, super_phenomenon="t", field="f", pairs=pairs))
    return ChallengeSuite(challenges=challenges)


class TestMetricVector:
    def test_sentence_length_mean(self):
        suite = suite_of({"c1": [("a b c d", "x", {}), ("a b c d e f", "x", {})]})
        mv = metric_vector(suite, "sentence_length")
        assert mv.accuracies == {"c1": 5.0}

    def test_constant_metric(self):
        suite = suite_of({"c1": [("a b", "x", {})], "c2": [("c d", "x", {})]})
        mv = metric_vector(suite, lambda p: 1.0)
        assert list(mv.accuracies.values()) == [1.0, 1.0]

    def test_missing_depth_lists_pairs(self):
        suite = suite_of({"c1": [("a", "x", {"depth": 2}), ("b", "x", {})]})
        with pytest.raises(ValueError, match="missing depth annotations: c1/1"):
            metric_vector(suite, "annotated_depth")

    def test_length_depth_correlation_matches_aggregation_oracle(self, synth_suite):
        lv = metric_vector(synth_suite, "sentence_length")
        dv = metric_vector(synth_suite, "annotated_depth")
        # independent aggregation: plain running sums per challenge
        from gramtraj.corpus import tokenize

        sums = {}
        for ch in synth_suite.challenges:
            ls = [len(tokenize(p.sentence_good)) for p in ch.pairs]
            ds = [p.annotations["depth"] for p in ch.pairs]
            sums[ch.uid] = (sum(ls) / len(ls), sum(ds) / len(ds))
        uids = synth_suite.uids
        want = correlate([sums[u][0] for u in uids], [sums[u][1] for u in uids])
        got = correlate([lv.accuracies[u] for u in uids], [dv.accuracies[u] for u in uids])
        assert got == pytest.approx(want, abs=1e-12)


class TestClustering:
    def rising_falling_traj(self, noise_seed=0):
        rng = np.random.default_rng(noise_seed)
        steps = 6
        curves = []
        for _ in range(10):
            curves.append(np.linspace(0.2, 0.9, steps) + rng.normal(0, 0.02, steps))
        for _ in range(10):
            curves.append(np.linspace(0.9, 0.2, steps) + rng.normal(0, 0.02, steps))
        return make_traj(np.array(curves).T)

    @pytest.mark.parametrize("seed", range(5))
    def test_rising_vs_falling_purity(self, seed):
        traj = self.rising_falling_traj()
        result = cluster_trajectories(traj, k=2, seed=seed)
        groups = [set(), set()]
        for j, uid in enumerate(traj.uids):
            groups[result.assignment[uid]].add(j)
        want = [set(range(10)), set(range(10, 20))]
        assert groups in ([want[0], want[1]], [want[1], want[0]])

    def test_duplicate_curves_co_clustered(self):
        rng = np.random.default_rng(2)
        base = rng.random((5, 6))
        values = np.concatenate([base, base[:, :1]], axis=1)  # ch06 duplicates ch00
        traj = make_traj(values)
        result = cluster_trajectories(traj, k=3, seed=0)
        assert result.assignment["ch00"] == result.assignment["ch06"]

    def test_k1_single_cluster(self):
        traj = make_traj(np.random.default_rng(0).random((5, 4)))
        result = cluster_trajectories(traj, k=1)
        assert set(result.assignment.values()) == {0}

    def test_identical_curves_warn_single_cluster(self):
        values = np.tile(np.linspace(0, 1, 5)[:, None], (1, 6))
        with pytest.warns(UserWarning, match="identical"):
            result = cluster_trajectories(make_traj(values), k=2)
        assert set(result.assignment.values()) == {0}

    def test_permutation_invariance_up_to_relabel(self):
        traj = self.rising_falling_traj()
        r1 = cluster_trajectories(traj, k=2, seed=1)
        perm = np.random.default_rng(9).permutation(20)
        traj2 = make_traj(traj.values[:, perm], uids=[traj.uids[j] for j in perm])
        r2 = cluster_trajectories(traj2, k=2, seed=1)
        # same partition of uids, possibly different cluster ids
        part1 = {}
        for u, c in r1.assignment.items():
            part1.setdefault(c, set()).add(u)
        part2 = {}
        for u, c in r2.assignment.items():
            part2.setdefault(c, set()).add(u)
        assert set(map(frozenset, part1.values())) == set(map(frozenset, part2.values()))

    def test_needs_more_challenges_than_k(self):
        traj = make_traj(np.random.default_rng(0).random((5, 3)))
        with pytest.raises(ValueError, match="more challenges"):
            cluster_trajectories(traj, k=3)


class TestTrajectoryMatrix:
    def test_from_rows(self):
        rows = []
        for step, ppl in ((10, 8.0), (20, 6.0)):
            for uid, acc in (("a", 0.5), ("b", 0.7)):
                rows.append(
                    dict(
                        model_id="m",
                        step=step,
                        dev_perplexity=ppl,
                        challenge_uid=uid,
                        field="f",
                        linguistics_term="t",
                        accuracy=acc + step / 100,
                    )
                )
        traj = TrajectoryMatrix.from_rows(rows, "m", vocab_hash="vh")
        assert traj.steps == [10, 20]
        assert traj.perplexities == [8.0, 6.0]
        assert traj.values[1, 0] == pytest.approx(0.7)

    def test_validation(self):
        with pytest.raises(ValueError, match="positive"):
            make_traj(np.random.default_rng(0).random((2, 3)), ppl=[1.0, -2.0])
        with pytest.raises(ValueError, match="increasing"):
            make_traj(np.random.default_rng(0).random((2, 3)), steps=[5, 5])


def test_reference_csv_roundtrip(tmp_path):
    ref = ReferenceVector("human", {"a": 0.5, "b": 0.625}, source="ingested")
    save_reference_csv(ref, tmp_path / "ref.csv")
    text = (tmp_path / "ref.csv").read_text()
    assert text.splitlines()[0] == "challenge_uid,human"
    back = load_reference_csv(tmp_path / "ref.csv")
    assert back.label == "human"
    assert back.accuracies == ref.accuracies


def test_reference_csv_bad_header(tmp_path):
    (tmp_path / "bad.csv").write_text("uid,acc\na,0.5\n")
    with pytest.raises(ValueError, match="expected header"):
        load_reference_csv(tmp_path / "bad.csv")
