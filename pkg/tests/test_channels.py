import itertools

import numpy as np
import pytest

from soundgnn.channels import (DECREASING, INCREASING, PROVEN_NOT_UNBOUNDED, PROVEN_UNBOUNDED, STABLE,
                               UNDETERMINED, UNKNOWN, ChannelReport, analyze, classify_monotonicity,
                               classify_safe, gray_code_vectors, probe, unbounded_exact, unbounded_sampled)
from soundgnn.codec import encode_canonical
from soundgnn.errors import BudgetExceededError, ValidationError
from soundgnn.gnn import Layer, SumGnn, forward

from strategies import two_layer_model, random_dataset, random_model, random_subset


def single_layer(A):
    A = np.array(A, dtype=float)
    n = A.shape[1]
    return SumGnn(tuple(f"U{i}" for i in range(n)), (), [Layer(A, {}, np.zeros(A.shape[0]))])


def model_with_predecessors(A, classes):
    """Two-layer model where layer-1 channel j has the class ``classes[j]``."""
    n = len(classes)
    first = np.zeros((n, n))
    for j, c in enumerate(classes):
        first[j, j] = {INCREASING: 1.0, DECREASING: -1.0, STABLE: 0.0}.get(c, 0.0)
        if c == UNDETERMINED:
            # +U_j and -U_(j+1) mixes increasing and decreasing inputs
            first[j, j], first[j, (j + 1) % n] = 1.0, -1.0
    layers = [Layer(first, {}, np.zeros(n)), Layer(np.array(A, dtype=float), {}, np.zeros(n))]
    return SumGnn(tuple(f"U{i}" for i in range(n)), (), layers)


class TestSafe:
    def test_worked_example(self):
        A = [[1, 0, 1, 4], [1, 0, 0, 2], [-8, -1, 0, -2]]
        # layer-1 channel 3 (index 2) unsafe, the others safe
        first = np.eye(4)
        first[2, 0] = -1.0
        m = SumGnn(("a", "b", "c", "d"), (), [Layer(first, {}, np.zeros(4)),
                                              Layer(np.array(A + [[0, 0, 0, 0]], float), {}, np.zeros(4))])
        safe = classify_safe(m)
        assert safe[1].tolist() == [True, True, False, True]
        assert safe[2][:3].tolist() == [False, True, False]

    def test_all_zero_model_is_safe(self):
        m = random_model(np.random.default_rng(0), p_neg=0.0)
        for layer in m.layers:
            for w in layer.matrices():
                w[:] = 0
        assert all(f.all() for f in classify_safe(m))

    def test_single_negative_entry(self):
        m = single_layer([[1, -0.1], [1, 1]])
        assert classify_safe(m)[1].tolist() == [False, True]

    def test_negative_neighbour_weight(self):
        m = SumGnn(("U",), ("R",), [Layer(np.ones((1, 1)), {"R": -np.ones((1, 1))}, np.zeros(1))])
        assert not classify_safe(m)[1][0]


class TestMonotonicity:
    def test_worked_example(self):
        A = [[1, 0, -1, -2], [2, 1, -3, 0], [1, 0, 1, 2], [-3, 0, 2, 0]]
        m = model_with_predecessors(A, [INCREASING, UNDETERMINED, DECREASING, STABLE])
        mono = classify_monotonicity(m)
        assert mono[1] == [INCREASING, UNDETERMINED, DECREASING, STABLE]
        assert mono[2] == [INCREASING, UNDETERMINED, UNDETERMINED, DECREASING]

    def test_increasing_but_unsafe(self):
        neg = -np.ones((2, 2))
        m = SumGnn(("U1", "U2"), (), [Layer(neg, {}, np.zeros(2)), Layer(neg, {}, np.zeros(2))])
        assert classify_monotonicity(m)[2] == [INCREASING, INCREASING]
        assert not classify_safe(m)[2].any()

    def test_stable_but_unsafe(self):
        m = SumGnn(("U1", "U2"), (), [Layer(np.zeros((2, 2)), {}, np.zeros(2)),
                                      Layer(-np.ones((2, 2)), {}, np.zeros(2))])
        assert classify_monotonicity(m)[2] == [STABLE, STABLE]
        assert not classify_safe(m)[2].any()

    def test_stable_takes_priority(self):
        m = SumGnn(("U1", "U2"), (), [Layer(np.zeros((2, 2)), {}, np.ones(2))])
        assert classify_monotonicity(m)[1] == [STABLE, STABLE]

    def test_decreasing_via_neighbours(self):
        m = SumGnn(("U",), ("R",), [Layer(np.zeros((1, 1)), {"R": -np.ones((1, 1))}, np.zeros(1))])
        assert classify_monotonicity(m)[1] == [DECREASING]

    def test_tolerance_flag(self):
        m = single_layer([[1, -1e-9], [1, 1]])
        assert classify_monotonicity(m)[1][0] == UNDETERMINED
        assert classify_monotonicity(m, tol=1e-6)[1][0] == INCREASING
        assert classify_safe(m, tol=1e-6)[1].all()

    @pytest.mark.parametrize("seed", range(40))
    def test_never_both_and_safe_implies_monotone(self, seed):
        m = random_model(np.random.default_rng(seed))
        safe = classify_safe(m)
        mono = classify_monotonicity(m)
        for flags, classes in zip(safe, mono):
            for s, c in zip(flags, classes):
                assert c in (STABLE, INCREASING, DECREASING, UNDETERMINED)
                if s:
                    assert c in (STABLE, INCREASING)

    @pytest.mark.parametrize("seed", range(40))
    def test_classes_predict_behaviour_under_subsets(self, seed):
        rng = np.random.default_rng(1000 + seed)
        m = random_model(rng)
        mono = classify_monotonicity(m)
        d = random_dataset(rng, m.signature)
        sub = random_subset(rng, d)
        g, gs = encode_canonical(d, m.signature), encode_canonical(sub, m.signature)
        full, part = forward(m, g).values, forward(m, gs).values
        rows = [g.vertex_index()[v] for v in gs.vertices]
        for l, classes in enumerate(mono):
            big, small = full[l][rows], part[l]
            for i, c in enumerate(classes):
                if c == STABLE:
                    assert np.allclose(small[:, i], big[:, i], atol=1e-9)
                elif c == INCREASING:
                    assert (small[:, i] <= big[:, i] + 1e-9).all()
                elif c == DECREASING:
                    assert (small[:, i] >= big[:, i] - 1e-9).all()


def brute_force_unbounded(m):
    """Independent enumeration: plain loops, no chunking or early exit."""
    found = set()
    for bits in itertools.product((0, 1), repeat=m.delta):
        for seq in itertools.product(m.colours, repeat=m.num_layers):
            y = np.array(bits, dtype=float)
            for layer, c in zip(m.layers, seq):
                z = layer.B[c] @ y
                y = np.maximum(z, 0)
            found.update(int(p) for p in np.flatnonzero(z < 0))
    return found


class TestUnbounded:
    def test_decreasing_unbounded_channel(self):
        m = two_layer_model([[-1, 0], [0, 0]])
        w = probe(m, (1, 1), ("c", "c"))
        assert w.final == (-1.0, 0.0)
        found, proven_not = unbounded_exact(m)
        assert set(found) == {0} and proven_not == [1]
        assert classify_monotonicity(m)[2][0] == DECREASING

    def test_undetermined_unbounded_channel(self):
        m = two_layer_model([[-2, 1], [0, 0]])
        assert probe(m, (1, 1), ("c", "c")).final == (-1.0, 0.0)
        found, proven_not = unbounded_exact(m)
        assert set(found) == {0} and proven_not == [1]
        assert classify_monotonicity(m)[2][0] == UNDETERMINED

    def test_non_negative_neighbour_weights(self):
        m = random_model(np.random.default_rng(3), p_neg=0.0)
        found, proven_not = unbounded_exact(m)
        assert found == {} and proven_not == list(range(m.delta))
        assert unbounded_sampled(m, 200, 0) == {}

    @pytest.mark.parametrize("seed", range(25))
    def test_exact_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        m = random_model(rng, delta=3, n_colours=2, layers=2, p_neg=0.4)
        found, proven_not = unbounded_exact(m, chunk=3)
        assert set(found) == brute_force_unbounded(m)
        assert set(proven_not) == set(range(3)) - set(found)

    @pytest.mark.parametrize("seed", range(25))
    def test_sampled_subset_of_exact_and_replayable(self, seed):
        rng = np.random.default_rng(50 + seed)
        m = random_model(rng, p_neg=0.4)
        exact, _ = unbounded_exact(m)
        sampled = unbounded_sampled(m, 64, seed)
        assert set(sampled) <= set(exact)
        for p, w in list(sampled.items()) + list(exact.items()):
            replay = probe(m, w.y0, w.colours)
            assert replay.final == w.final and replay.final[p] < 0

    def test_sampled_is_deterministic(self):
        m = random_model(np.random.default_rng(7), p_neg=0.5)
        assert unbounded_sampled(m, 100, 3) == unbounded_sampled(m, 100, 3)

    def test_sampled_finds_unbounded_channel(self):
        m = two_layer_model([[-1, 0], [0, 0]])
        assert all(0 in unbounded_sampled(m, 64, s) for s in range(20))

    def test_budget(self):
        m = random_model(np.random.default_rng(0), delta=4, n_colours=3, layers=3)
        with pytest.raises(BudgetExceededError, match="sampled"):
            unbounded_exact(m, budget=100)

    def test_probe_rejects_capped_hidden_layers(self):
        Z = np.zeros((1, 1))
        m = SumGnn(("U",), ("c",), [Layer(Z, {"c": Z}, np.zeros(1), "capped_relu", 1.0),
                                    Layer(Z, {"c": Z}, np.zeros(1))])
        with pytest.raises(ValidationError):
            probe(m, (1,), ("c", "c"))
        assert analyze(m).unbounded == [UNKNOWN]

    def test_probe_checks_lengths(self):
        m = two_layer_model([[-1, 0], [0, 0]])
        with pytest.raises(ValidationError):
            probe(m, (1, 1), ("c",))
        with pytest.raises(ValidationError):
            probe(m, (1, 2), ("c", "c"))

    def test_gray_code_neighbours_differ_in_one_bit(self):
        codes = gray_code_vectors(4)
        assert len({tuple(r) for r in codes}) == 16
        assert all(np.abs(codes[i] - codes[i + 1]).sum() == 1 for i in range(15))


class TestReport:
    def test_json_round_trip(self):
        m = two_layer_model([[-1, 0], [0, 0]])
        report = analyze(m, "exact")
        back = ChannelReport.from_json(report.to_json())
        assert back.mono == report.mono and back.safe == report.safe
        assert back.unbounded == report.unbounded and back.witnesses == report.witnesses
        assert back.fingerprint == m.fingerprint()

    def test_percentages(self):
        report = analyze(two_layer_model([[-1, 0], [0, 0]]), "exact")
        assert report.percentages() == {"pct_ub": 50.0, "pct_stable": 50.0, "pct_inc": 0.0, "pct_safe": 50.0}

    def test_sampled_never_proves_boundedness(self):
        report = analyze(two_layer_model([[-1, 0], [0, 0]]), "sampled", samples=50)
        assert PROVEN_NOT_UNBOUNDED not in report.unbounded
        assert report.method == {"kind": "sampled", "n": 50, "seed": 0}

    def test_auto_picks_exact_for_small_models(self):
        assert analyze(two_layer_model([[-1, 0], [0, 0]])).method["kind"] == "exact"

    @pytest.mark.parametrize("seed", range(30))
    def test_unbounded_channels_are_not_monotone(self, seed):
        m = random_model(np.random.default_rng(seed), p_neg=0.4)
        report = analyze(m, "exact")
        for p, state in enumerate(report.unbounded):
            if state == PROVEN_UNBOUNDED:
                assert report.mono[-1][p] in (DECREASING, UNDETERMINED)
                assert not report.safe[-1][p]
