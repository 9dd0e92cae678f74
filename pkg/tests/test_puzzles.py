import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gmss.errors import ContractError, DimensionError, FormatError
from gmss.puzzles import (PermutationSet, PuzzleSampler, apply_frequency, apply_spatial, hamming, invert,
                          inverse_spatial, min_pairwise_hamming, random_puzzle, select_permutations)

# mean over 10 uniformly random 128-subsets of S10 of the minimum pairwise
# Hamming distance, drawn with default_rng(0); recomputed below
RANDOM_SUBSET_MIN_HAMMING = 3.7


def random_subset_baseline(seed=0, trials=10, k=128, m=10):
    rng = np.random.default_rng(seed)
    return float(np.mean([min_pairwise_hamming(np.array([rng.permutation(m) for _ in range(k)]))
                          for _ in range(trials)]))


perm5 = st.permutations(range(5))
perm10 = st.permutations(range(10))


def test_s5_exhaustive_lexicographic():
    ps = select_permutations(5, 120)
    assert ps.perms.tolist() == [list(p) for p in itertools.permutations(range(5))]
    assert ps.perm(1).tolist() == [0, 1, 2, 3, 4]
    assert ps.perm(120).tolist() == [4, 3, 2, 1, 0]
    for label in range(1, 121):
        assert ps.label_of(ps.perm(label)) == label


def test_spatial_set_distinct_and_spread():
    ps = select_permutations(10, 128, seed=42)
    assert ps.perms.shape == (128, 10)
    assert len({tuple(p) for p in ps.perms.tolist()}) == 128
    assert ps.perm(1).tolist() == list(range(10))
    assert min_pairwise_hamming(ps.perms) >= RANDOM_SUBSET_MIN_HAMMING


def test_random_baseline_oracle():
    assert random_subset_baseline() == pytest.approx(RANDOM_SUBSET_MIN_HAMMING)


def test_selection_is_deterministic():
    a = select_permutations(10, 128, seed=42)
    b = select_permutations(10, 128, seed=42)
    np.testing.assert_array_equal(a.perms, b.perms)


def test_small_group_greedy_is_exact():
    # k = 2 for m = 4: after the identity the farthest permutation differs everywhere
    ps = select_permutations(4, 2)
    assert hamming(ps.perm(1), ps.perm(2)) == 4


@given(st.integers(1, 24))
def test_exact_greedy_min_distance_nonincreasing(k):
    ps = select_permutations(4, k)
    assert len({tuple(p) for p in ps.perms.tolist()}) == k


@pytest.mark.parametrize("m,k", [(5, 0), (5, 121), (3, 7)])
def test_k_out_of_range(m, k):
    with pytest.raises(ContractError):
        select_permutations(m, k)


def test_hamming_length_mismatch():
    with pytest.raises(ContractError):
        hamming([0, 1], [0, 1, 2])


@given(perm10)
def test_invert_composes_to_identity(p):
    p = np.array(p)
    np.testing.assert_array_equal(p[invert(p)], np.arange(10))
    np.testing.assert_array_equal(invert(p)[p], np.arange(10))


def test_partition_sizes(partition):
    assert partition.sizes == [5, 6, 6, 6, 6, 6, 9, 6, 6, 6]
    assert partition.n == 62 and partition.m == 10


@given(perm10, st.integers(0, 2**31))
def test_spatial_transform_inverts_exactly(partition, p, seed):
    X = np.random.default_rng(seed).normal(size=(62, 5))
    Y = apply_spatial(X, p, partition)
    np.testing.assert_array_equal(inverse_spatial(Y, p, partition), X)


@given(perm10)
def test_spatial_moves_whole_blocks(partition, p):
    X = np.repeat(np.arange(62.0)[:, None], 5, axis=1)
    Y = apply_spatial(X, p, partition)
    start = 0
    for slot, src in enumerate(p):
        rows = partition.blocks[src][1]
        np.testing.assert_array_equal(Y[start:start + len(rows), 0], rows)
        start += len(rows)


def test_identity_spatial_is_block_order(partition):
    Y = apply_spatial(np.arange(62.0)[:, None], list(range(10)), partition)
    order = [i for _, rows in partition.blocks for i in rows]
    np.testing.assert_array_equal(Y[:, 0], order)


@given(perm5, st.integers(0, 2**31))
def test_frequency_transform_semantics_and_inverse(p, seed):
    X = np.random.default_rng(seed).normal(size=(62, 5))
    Y = apply_frequency(X, p)
    for j in range(5):
        np.testing.assert_array_equal(Y[:, j], X[:, p[j]])
    np.testing.assert_array_equal(apply_frequency(Y, invert(p)), X)


def test_spatial_wrong_rows(partition):
    with pytest.raises(DimensionError):
        apply_spatial(np.zeros((61, 5)), list(range(10)), partition)


def test_permutation_set_json_roundtrip(tmp_path):
    ps = select_permutations(5, 30, seed=3)
    ps.save(tmp_path / "p.json")
    back = PermutationSet.load(tmp_path / "p.json")
    np.testing.assert_array_equal(back.perms, ps.perms)
    assert (back.m, back.k, back.seed) == (5, 30, 3)


def test_permutation_set_rejects_garbage():
    with pytest.raises(FormatError):
        PermutationSet.from_json('{"m": 3}')
    with pytest.raises(ContractError):
        PermutationSet(3, 2, None, np.array([[0, 1, 2], [0, 1, 2]]))
    with pytest.raises(ContractError):
        PermutationSet(3, 1, None, np.array([[0, 0, 2]]))


def test_sampler_matches_scalar_transforms(partition, rng):
    sp, fr = select_permutations(10, 128, 42), select_permutations(5, 120, 42)
    sampler = PuzzleSampler(sp, fr, partition)
    X = rng.normal(size=(7, 62, 5))
    xs, ys = sampler.puzzles(X, "spatial", rng)
    xf, yf = sampler.puzzles(X, "frequency", rng)
    for b in range(7):
        np.testing.assert_array_equal(xs[b], apply_spatial(X[b], sp.perm(ys[b]), partition))
        np.testing.assert_array_equal(xf[b], apply_frequency(X[b], fr.perm(yf[b])))


def test_views_are_sample_major(partition, rng):
    sp, fr = select_permutations(10, 128, 42), select_permutations(5, 120, 42)
    sampler = PuzzleSampler(sp, fr, partition)
    X = rng.normal(size=(3, 62, 5))
    V = sampler.views(X, 4, rng)
    assert V.shape == (12, 62, 5)
    for row in range(12):
        # each view is a rearrangement of its own sample's entries
        np.testing.assert_array_equal(np.sort(V[row], axis=None), np.sort(X[row // 4], axis=None))


def test_puzzle_labels_uniform(partition):
    # label counts over 128 classes: chi-square against the uniform law
    sp, fr = select_permutations(10, 128, 42), select_permutations(5, 120, 42)
    sampler = PuzzleSampler(sp, fr, partition)
    X = np.zeros((12800, 62, 5))
    _, labels = sampler.puzzles(X, "spatial", np.random.default_rng(5))
    counts = np.bincount(labels, minlength=129)[1:]
    assert labels.min() >= 1 and labels.max() <= 128
    chi2 = float(((counts - 100.0) ** 2 / 100.0).sum())
    # 127 dof; mean 127, sd ~15.9, so 127 + 5 sd is far beyond chance
    assert chi2 < 127 + 5 * math.sqrt(2 * 127)


def test_random_puzzle_checks_kind(partition, rng):
    ps = select_permutations(5, 120)
    with pytest.raises(ContractError):
        random_puzzle(np.zeros((62, 5)), ps, "diagonal", rng)
    with pytest.raises(ContractError):
        random_puzzle(np.zeros((62, 5)), ps, "spatial", rng, partition)
    x, label = random_puzzle(np.arange(5.0)[None, :], ps, "frequency", rng)
    assert x[0].tolist() == ps.perm(label).tolist()
