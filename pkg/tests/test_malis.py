import numpy as np
import pytest

from affseg.malis import (
    OutOfBounds,
    malis_edge_counts,
    malis_gradient,
    maximin_affinity,
)
from affseg.volume import AffinityVolume, LabelVolume, ShapeMismatch

from oracles import maximin_by_threshold, pair_counts


def chain_volume(x_affs):
    """1 x 1 x n chain with the given x affinities."""
    n = len(x_affs) + 1
    a = np.zeros((3, 1, 1, n), dtype=np.float32)
    a[2, 0, 0, : n - 1] = x_affs
    return AffinityVolume(a)


def random_instance(rng, max_dim=3, n_labels=2):
    shape = tuple(rng.integers(1, max_dim + 1, 3).tolist())
    a = rng.random((3,) + shape, dtype=np.float32)
    aff = AffinityVolume(a)
    gt = LabelVolume(rng.integers(0, n_labels + 1, shape).astype(np.uint64))
    return aff, gt


def test_maximin_single_path():
    aff = chain_volume([0.9, 0.4])
    assert maximin_affinity(aff, (0, 0, 0), (0, 0, 2)) == pytest.approx(0.4)


def test_maximin_detour_beats_direct():
    a = np.zeros((3, 1, 2, 2), dtype=np.float32)
    a[2, 0, 0, 0] = 0.2
    a[2, 0, 1, 0] = 0.7
    a[1, 0, 0, 0] = 0.6
    a[1, 0, 0, 1] = 0.5
    aff = AffinityVolume(a)
    # direct path bottleneck 0.2, detour through the second row 0.5
    assert maximin_affinity(aff, (0, 0, 0), (0, 0, 1)) == pytest.approx(0.5)


def test_maximin_rejects_identical_voxels():
    aff = chain_volume([0.5])
    with pytest.raises(OutOfBounds):
        maximin_affinity(aff, (0, 0, 1), (0, 0, 1))


def test_maximin_rejects_out_of_bounds():
    aff = chain_volume([0.5])
    with pytest.raises(OutOfBounds):
        maximin_affinity(aff, (0, 0, 0), (0, 0, 5))


def test_maximin_matches_threshold_oracle():
    rng = np.random.default_rng(7)
    for _ in range(20):
        aff, _ = random_instance(rng)
        shape = aff.shape3
        n = shape.voxels
        if n < 2:
            continue
        u = int(rng.integers(0, n))
        v = int(rng.integers(0, n))
        if u == v:
            continue
        got = maximin_affinity(aff, shape.unflatten(u), shape.unflatten(v))
        assert got == pytest.approx(maximin_by_threshold(aff, shape.unflatten(u),
                                                         shape.unflatten(v)), abs=0)


def test_counts_chain_example():
    aff = chain_volume([0.9, 0.4])
    gt = LabelVolume(np.array([[[1, 1, 2]]], dtype=np.uint64))
    counts = malis_edge_counts(aff, gt)
    assert counts.pos[2, 0, 0, :].tolist() == [1, 0, 0]
    assert counts.neg[2, 0, 0, :].tolist() == [0, 2, 0]
    assert counts.pos[0].sum() == counts.pos[1].sum() == 0
    assert counts.neg[0].sum() == counts.neg[1].sum() == 0


def test_counts_all_background():
    aff = chain_volume([0.9, 0.4])
    gt = LabelVolume(np.zeros((1, 1, 3), dtype=np.uint64))
    counts = malis_edge_counts(aff, gt)
    assert counts.total_pairs == 0


def test_counts_single_label():
    rng = np.random.default_rng(8)
    aff, _ = random_instance(rng)
    n = aff.shape3.voxels
    gt = LabelVolume(np.ones(aff.shape3.as_tuple(), dtype=np.uint64))
    counts = malis_edge_counts(aff, gt)
    assert int(counts.neg.sum()) == 0
    assert int(counts.pos.sum()) == n * (n - 1) // 2


def test_counts_shape_mismatch():
    aff = chain_volume([0.9, 0.4])
    gt = LabelVolume(np.zeros((1, 1, 4), dtype=np.uint64))
    with pytest.raises(ShapeMismatch):
        malis_edge_counts(aff, gt)


def test_counts_match_bruteforce_oracle():
    rng = np.random.default_rng(9)
    for _ in range(60):
        aff, gt = random_instance(rng)
        counts = malis_edge_counts(aff, gt)
        exp_pos, exp_neg = pair_counts(aff, gt)
        assert np.array_equal(counts.pos, exp_pos)
        assert np.array_equal(counts.neg, exp_neg)


def test_counts_match_oracle_with_ties():
    # coarse affinity grid forces equal values; tie rule must agree
    rng = np.random.default_rng(10)
    for _ in range(30):
        shape = tuple(rng.integers(1, 4, 3).tolist())
        a = (rng.integers(0, 5, (3,) + shape) / 4.0).astype(np.float32)
        aff = AffinityVolume(a)
        gt = LabelVolume(rng.integers(0, 3, shape).astype(np.uint64))
        counts = malis_edge_counts(aff, gt)
        exp_pos, exp_neg = pair_counts(aff, gt)
        assert np.array_equal(counts.pos, exp_pos)
        assert np.array_equal(counts.neg, exp_neg)


def test_count_conservation():
    rng = np.random.default_rng(11)
    for _ in range(20):
        shape = tuple(rng.integers(2, 4, 3).tolist())
        n_edges = 3 * shape[0] * shape[1] * shape[2]
        vals = (np.linspace(0.05, 0.95, n_edges)).astype(np.float32)
        rng.shuffle(vals)
        aff = AffinityVolume(vals.reshape((3,) + shape))  # distinct, positive
        gt = LabelVolume(rng.integers(0, 3, shape).astype(np.uint64))
        counts = malis_edge_counts(aff, gt)
        labeled = int((gt.data != 0).sum())
        assert counts.total_pairs == labeled * (labeled - 1) // 2


def test_counts_invariant_under_label_permutation():
    rng = np.random.default_rng(12)
    for _ in range(10):
        aff, gt = random_instance(rng, n_labels=3)
        counts = malis_edge_counts(aff, gt)
        perm = {0: 0, 1: 3, 2: 1, 3: 2}
        permuted = np.vectorize(perm.get)(gt.data.astype(np.int64)).astype(np.uint64)
        counts_p = malis_edge_counts(aff, LabelVolume(permuted))
        assert np.array_equal(counts.pos, counts_p.pos)
        assert np.array_equal(counts.neg, counts_p.neg)


def test_gradient_chain_example():
    aff = chain_volume([0.9, 0.4])
    gt = LabelVolume(np.array([[[1, 1, 2]]], dtype=np.uint64))
    res = malis_gradient(aff, gt)
    assert res.loss == pytest.approx(0.33, abs=1e-6)
    assert res.gradient.data[2, 0, 0, 0] == pytest.approx(-0.2, abs=1e-6)
    assert res.gradient.data[2, 0, 0, 1] == pytest.approx(1.6, abs=1e-6)


def test_gradient_perfect_affinities_zero_loss():
    gt = LabelVolume(np.array([[[1, 1, 2, 2]]], dtype=np.uint64))
    a = np.zeros((3, 1, 1, 4), dtype=np.float32)
    a[2, 0, 0, :3] = [1.0, 0.0, 1.0]
    res = malis_gradient(AffinityVolume(a), gt)
    assert res.loss == 0.0
    assert np.all(res.gradient.data == 0.0)


def test_gradient_no_labels_zero():
    aff = chain_volume([0.9, 0.4])
    gt = LabelVolume(np.zeros((1, 1, 3), dtype=np.uint64))
    for normalize in (False, True):
        res = malis_gradient(aff, gt, normalize=normalize)
        assert res.loss == 0.0
        assert np.all(res.gradient.data == 0.0)


def test_gradient_zero_where_no_counts():
    rng = np.random.default_rng(13)
    aff, gt = random_instance(rng)
    counts = malis_edge_counts(aff, gt)
    res = malis_gradient(aff, gt)
    untouched = (counts.pos == 0) & (counts.neg == 0)
    assert np.all(res.gradient.data[untouched] == 0.0)


def test_normalized_gradient_scales():
    aff = chain_volume([0.9, 0.4])
    gt = LabelVolume(np.array([[[1, 1, 2]]], dtype=np.uint64))
    raw = malis_gradient(aff, gt, normalize=False)
    norm = malis_gradient(aff, gt, normalize=True)
    assert norm.loss == pytest.approx(raw.loss / 3.0)
    assert np.allclose(norm.gradient.data, raw.gradient.data / 3.0, atol=1e-7)


def tie_free_instance(rng, shape=(2, 3, 3)):
    """Distinct affinities with gaps comfortably above the FD step."""
    n_edges = 3 * shape[0] * shape[1] * shape[2]
    vals = np.linspace(0.05, 0.95, n_edges).astype(np.float32)
    rng.shuffle(vals)
    aff = AffinityVolume(vals.reshape((3,) + shape))
    gt = LabelVolume(rng.integers(0, 3, shape).astype(np.uint64))
    return aff, gt


def test_gradient_matches_finite_differences():
    from affseg.volume import inbounds_edge_region

    rng = np.random.default_rng(14)
    shape = (2, 3, 3)
    for _ in range(5):
        aff, gt = tie_free_instance(rng, shape)
        res = malis_gradient(aff, gt)
        h = 1e-3
        for c in range(3):
            region = inbounds_edge_region(c, aff.shape3)
            zz, yy, xx = [q.ravel() for q in np.meshgrid(
                *[np.arange(s.stop) for s in region], indexing="ij")]
            for z, y, x in zip(zz.tolist(), yy.tolist(), xx.tolist()):
                up = aff.data.copy()
                up[c, z, y, x] += h
                down = aff.data.copy()
                down[c, z, y, x] -= h
                lu = malis_gradient(AffinityVolume(up, check_range=False), gt).loss
                ld = malis_gradient(AffinityVolume(down, check_range=False), gt).loss
                # the +-h step lands on float32 grid points; divide by the
                # step that was actually realized
                dh = float(up[c, z, y, x]) - float(down[c, z, y, x])
                fd = (lu - ld) / dh
                assert res.gradient.data[c, z, y, x] == pytest.approx(fd, abs=1e-4)
