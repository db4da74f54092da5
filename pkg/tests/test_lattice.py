import json
from itertools import combinations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scatgeo.lattice import (
    ClusterDecomposition,
    InterclusterLink,
    PairIndex,
    decompositions_of_size,
    enumerate_decompositions,
    intercluster_links,
    is_refinement,
    is_strict_refinement,
    merge_blocks,
    pair_as_decomposition,
    pair_leq,
    split_link,
)

D = ClusterDecomposition


def bell_triangle(n_max):
    """Bell numbers B_0..B_n_max from the Aitken triangle."""
    bells, row = [1], [1]
    for _ in range(n_max):
        nxt = [row[-1]]
        for v in row:
            nxt.append(nxt[-1] + v)
        row = nxt
        bells.append(row[0])
    return bells


def brute_force_partitions(items):
    """Insert each element into an existing block or a new one."""
    if not items:
        return [[]]
    first, rest = items[0], items[1:]
    out = []
    for part in brute_force_partitions(rest):
        out.append([[first], *part])
        for k in range(len(part)):
            out.append(part[:k] + [[first, *part[k]]] + part[k + 1 :])
    return out


def test_bell_oracle_frozen():
    assert bell_triangle(8)[2:] == [2, 5, 15, 52, 203, 877, 4140]


@pytest.mark.parametrize("n", range(2, 9))
def test_counts_match_bell_triangle(n):
    assert len(enumerate_decompositions(n)) == bell_triangle(n)[n]


@pytest.mark.parametrize("n", range(2, 7))
def test_matches_brute_force(n):
    ours = {d.blocks for d in enumerate_decompositions(n)}
    brute = {D(p, n).blocks for p in brute_force_partitions(list(range(1, n + 1)))}
    assert ours == brute
    assert len(ours) == len(enumerate_decompositions(n))


def test_small_cases():
    two = enumerate_decompositions(2)
    assert {d.blocks for d in two} == {((1, 2),), ((1,), (2,))}
    three = enumerate_decompositions(3)
    assert len(three) == 5
    assert sum(d.size >= 2 for d in three) == 4
    assert len(enumerate_decompositions(4)) == 15
    assert [d.size for d in three] == sorted(d.size for d in three)


@pytest.mark.parametrize("n", [1, 9, 0, -2])
def test_out_of_range(n):
    with pytest.raises(ValueError):
        enumerate_decompositions(n)


def test_canonical_form_and_validation():
    assert D([[3], [2, 1]]) == D([[1, 2], [3]])
    assert D([[3], [2, 1]]).blocks == ((1, 2), (3,))
    with pytest.raises(ValueError):
        D([[1, 2], [2, 3]])
    with pytest.raises(ValueError):
        D([[1], [3]], 3)
    with pytest.raises(ValueError):
        PairIndex(2, 1)


def test_refinement_examples():
    assert is_refinement(D([[1], [2], [3]]), D([[1, 2], [3]]))
    assert not is_refinement(D([[1, 2], [3]]), D([[1, 3], [2]]))
    a = D([[1, 3], [2]])
    assert is_refinement(a, a)
    assert not is_strict_refinement(a, a)
    with pytest.raises(ValueError):
        is_refinement(D([[1], [2]]), D([[1, 2, 3]]))


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_refinement_is_partial_order(n):
    ds = enumerate_decompositions(n)
    rel = {(a, b): is_refinement(a, b) for a in ds for b in ds}
    for a in ds:
        assert rel[a, a]
        assert rel[ClusterDecomposition.singletons(n), a]
        assert rel[a, ClusterDecomposition.whole(n)]
    for a in ds:
        for b in ds:
            if a != b and rel[a, b]:
                assert not rel[b, a]
                assert a.size > b.size
    if n <= 4:
        for a in ds:
            for b in ds:
                if rel[a, b]:
                    for c in ds:
                        if rel[b, c]:
                            assert rel[a, c]
    else:
        # transitivity through the covering relation suffices on the larger case
        up = {a: [b for b in ds if rel[a, b]] for a in ds}
        for a in ds:
            for b in up[a]:
                assert set(up[b]) <= set(up[a])


def test_pair_leq_examples():
    a = D([[1, 2], [3]])
    assert pair_leq(PairIndex(1, 2), a)
    assert not pair_leq(PairIndex(1, 3), a)
    for i, j in combinations(range(1, 5), 2):
        assert pair_leq(PairIndex(i, j), ClusterDecomposition.whole(4))


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_pair_leq_matches_pair_decomposition(n):
    for b in enumerate_decompositions(n):
        for i, j in combinations(range(1, n + 1), 2):
            alpha = PairIndex(i, j)
            assert pair_leq(alpha, b) == is_refinement(pair_as_decomposition(alpha, n), b)
        assert len(b.pairs()) + len(b.crossing_pairs()) == n * (n - 1) // 2


@pytest.mark.parametrize("k,count", [(2, 1), (3, 3), (4, 6)])
def test_link_counts(k, count):
    b = decompositions_of_size(5, k)[0]
    links = intercluster_links(b)
    assert len(links) == count
    assert [(l.from_block, l.to_block) for l in links] == list(combinations(range(k), 2))
    assert [l.k for l in links] == list(range(count))


def test_links_need_two_blocks():
    with pytest.raises(ValueError):
        intercluster_links(ClusterDecomposition.whole(3))
    with pytest.raises(ValueError):
        InterclusterLink(0, 1, 1)


def test_merge_examples():
    c = ClusterDecomposition.singletons(3)
    assert merge_blocks(c, InterclusterLink(0, 0, 1)) == D([[1, 2], [3]])
    two = D([[1, 3], [2]])
    assert merge_blocks(two, intercluster_links(two)[0]) == ClusterDecomposition.whole(3)
    with pytest.raises(ValueError):
        merge_blocks(two, InterclusterLink(0, 0, 5))


@pytest.mark.parametrize("n", [3, 4])
def test_merge_preserves_refinement(n):
    ds = enumerate_decompositions(n)
    for c in ds:
        if c.size < 2:
            continue
        for link in intercluster_links(c):
            b = merge_blocks(c, link)
            assert b.size == c.size - 1
            assert is_refinement(c, b)
            assert split_link(b, c) == link
            for d in ds:
                if is_refinement(d, c):
                    assert is_refinement(d, b)


def test_split_link_rejects_non_neighbours():
    with pytest.raises(ValueError):
        split_link(ClusterDecomposition.whole(3), ClusterDecomposition.singletons(3))


@st.composite
def decompositions(draw):
    n = draw(st.integers(2, 7))
    labels = draw(st.lists(st.integers(0, n - 1), min_size=n, max_size=n))
    blocks = {}
    for idx, lab in enumerate(labels):
        blocks.setdefault(lab, []).append(idx + 1)
    return D(blocks.values(), n)


@settings(max_examples=200, deadline=None)
@given(decompositions())
def test_json_round_trip(d):
    text = d.to_json()
    assert json.loads(text) == [list(b) for b in d.blocks]
    assert D.from_json(text) == d
    assert d in enumerate_decompositions(d.n)
