import numpy as np
import pytest

from affseg.malis import malis_gradient
from affseg.synthdata import (
    NoiseParams,
    SynthParams,
    TooManySeeds,
    affinities_from_labels,
    labels_from_seeds,
    synth_affinities,
    synth_labels,
)
from affseg.volume import LabelVolume, Shape3, oob_edge_mask
from affseg.zwatershed import WatershedParams, zwatershed

from oracles import connected_components, partitions_equal


def test_single_seed_labels_everything():
    vol = synth_labels(Shape3(3, 4, 5), SynthParams(n_seeds=1, rng_seed=11))
    assert np.all(vol.data == 1)


def test_two_seeds_split_chain():
    vol = labels_from_seeds(Shape3(1, 1, 4), np.array([[0, 0, 0], [0, 0, 3]]), 1.0)
    assert vol.data.ravel().tolist() == [1, 1, 2, 2]


def test_tie_goes_to_lower_seed_index():
    vol = labels_from_seeds(Shape3(1, 1, 3), np.array([[0, 0, 0], [0, 0, 2]]), 1.0)
    assert vol.data.ravel().tolist() == [1, 1, 2]  # middle voxel equidistant


def test_anisotropy_flattens_cells():
    # under a high z cost the boundary between diagonal seeds turns into a
    # flat z cut instead of a slanted plane
    seeds = np.array([[0, 0, 1], [3, 0, 4]])
    iso = labels_from_seeds(Shape3(4, 1, 8), seeds, 1.0)
    aniso = labels_from_seeds(Shape3(4, 1, 8), seeds, 4.0)
    assert (aniso.data == 1).sum() != (iso.data == 1).sum()
    # each z section of the anisotropic volume is a single cell
    assert all(len(np.unique(aniso.data[z])) == 1 for z in range(4))


def test_labels_deterministic():
    p = SynthParams(n_seeds=5, anisotropy=3.0, rng_seed=99)
    a = synth_labels(Shape3(4, 8, 8), p)
    b = synth_labels(Shape3(4, 8, 8), p)
    assert np.array_equal(a.data, b.data)


def test_all_seed_labels_present():
    vol = synth_labels(Shape3(4, 8, 8), SynthParams(n_seeds=7, rng_seed=1))
    assert sorted(np.unique(vol.data).tolist()) == list(range(1, 8))


def test_too_many_seeds():
    with pytest.raises(TooManySeeds):
        synth_labels(Shape3(1, 2, 2), SynthParams(n_seeds=5, rng_seed=0))


def test_noiseless_is_exact_encoding():
    gt = synth_labels(Shape3(4, 6, 6), SynthParams(n_seeds=3, rng_seed=2))
    aff = synth_affinities(gt, NoiseParams())
    lab = gt.data
    assert np.all((aff.data == 0.0) | (aff.data == 1.0))
    same_x = lab[:, :, :-1] == lab[:, :, 1:]
    assert np.array_equal(aff.data[2, :, :, :-1] == 1.0, same_x)
    mask = oob_edge_mask(gt.shape3)
    assert np.all(aff.data[mask] == 0.0)


def test_noiseless_watershed_recovers_components():
    for seed in range(5):
        gt = synth_labels(Shape3(6, 8, 8), SynthParams(n_seeds=4, anisotropy=2.0, rng_seed=seed))
        aff = synth_affinities(gt, NoiseParams())
        seg, _ = zwatershed(aff, WatershedParams(0.9, 0.3, 0, 0.3))
        assert partitions_equal(seg.data, connected_components(gt))


def test_affinities_deterministic():
    gt = synth_labels(Shape3(4, 6, 6), SynthParams(n_seeds=3, rng_seed=3))
    n = NoiseParams(flip_sigma=0.2, jitter_prob=0.5, rng_seed=17)
    a = synth_affinities(gt, n)
    b = synth_affinities(gt, n)
    assert np.array_equal(a.data, b.data)


def test_forced_jitter_flips_z_affinities_at_stripe_boundary():
    striped = LabelVolume(np.array([[[1, 2], [1, 2]], [[1, 2], [1, 2]]], dtype=np.uint64))
    clean = affinities_from_labels(striped)
    assert np.all(clean.data[0, 0] == 1.0)
    jittered = affinities_from_labels(striped, np.array([[0, 0], [0, 1]]))
    flipped = (clean.data[0, 0] == 1.0) & (jittered.data[0, 0] == 0.0)
    assert flipped.any()


def test_jitter_keeps_xy_channels():
    striped = LabelVolume(np.array([[[1, 2], [1, 2]], [[1, 2], [1, 2]]], dtype=np.uint64))
    clean = affinities_from_labels(striped)
    jittered = affinities_from_labels(striped, np.array([[0, 1], [0, -1]]))
    assert np.array_equal(clean.data[1:], jittered.data[1:])


def test_noise_is_clamped_and_oob_stays_zero():
    gt = synth_labels(Shape3(4, 6, 6), SynthParams(n_seeds=3, rng_seed=4))
    aff = synth_affinities(gt, NoiseParams(flip_sigma=0.8, jitter_prob=0.2, rng_seed=4))
    assert float(aff.data.min()) >= 0.0
    assert float(aff.data.max()) <= 1.0
    assert np.all(aff.data[oob_edge_mask(gt.shape3)] == 0.0)


def test_noiseless_malis_loss_zero_and_noise_raises_it():
    shape = Shape3(4, 8, 8)
    means = []
    for sigma in (0.0, 0.08, 0.2):
        losses = []
        for seed in range(20):
            gt = synth_labels(shape, SynthParams(n_seeds=4, anisotropy=2.0, rng_seed=seed))
            aff = synth_affinities(gt, NoiseParams(flip_sigma=sigma, rng_seed=seed))
            losses.append(malis_gradient(aff, gt, normalize=True).loss)
        means.append(float(np.mean(losses)))
    assert means[0] == 0.0
    assert means[0] < means[1] < means[2]
