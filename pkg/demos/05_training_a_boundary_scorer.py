"""
Training the logistic boundary scorer
=====================================

The mean-affinity scorer is parameter-free; the logistic scorer learns
from ground truth instead.  Decisions are generated by simulated
agglomeration: a boundary is a merge example iff both segments map to
the same dominant GT label with at least 50% purity; positives are
merged, features recomputed, and collection repeats until nothing is
mergeable.  The 51 features per boundary are moments, extrema, and
histogram fractions of each affinity channel plus log boundary size and
log segment sizes.
"""

import numpy as np

from affseg import (
    Logistic,
    MeanAffinity,
    NoiseParams,
    Shape3,
    SynthParams,
    WatershedParams,
    agglomerate,
    build_rag,
    edge_features,
    split_vi,
    synth_affinities,
    synth_labels,
    train_scorer,
    zwatershed,
)

# %%
# An over-segmented base with clean boundaries: mild edge noise, no jitter.

gt = synth_labels(Shape3(6, 12, 12), SynthParams(n_seeds=4, anisotropy=2.0, rng_seed=0))
aff = synth_affinities(gt, NoiseParams(flip_sigma=0.25, rng_seed=0))
base, stats = zwatershed(aff, WatershedParams(0.995, 0.5, 0, 0.5))
print(f"{stats.n_segments} supervoxels over {4} true cells")

# %%
# The region adjacency graph summarizes every boundary with mergeable
# statistics; feature vectors come straight from the accumulators.

rag = build_rag(base, aff)
print(f"RAG: {rag.n_nodes} nodes, {rag.n_edges} boundaries")
some_edge = sorted(rag.edges)[0]
fv = edge_features(rag, some_edge)
print(f"boundary {some_edge}: mean z-affinity {fv[0]:.3f}, "
      f"log boundary count {fv[48]:.2f}")

# %%
# Fit the scorer and look at its decision set.

scorer = train_scorer(rag, gt)
y = scorer.training_decisions
print(f"collected {len(y)} decisions ({int(y.sum())} merge, "
      f"{int((1 - y).sum())} keep-separate)")

# %%
# Agglomerating with the trained scorer: scores are merge probabilities,
# so 0.5 is the natural threshold.

seg_log, _ = agglomerate(base, aff, scorer, 0.5)
seg_mean, _ = agglomerate(base, aff, MeanAffinity(), 0.8)
print("trained scorer :", split_vi(seg_log, gt))
print("mean affinity  :", split_vi(seg_mean, gt))

# %%
# Models persist as a tiny flat file: version byte, 51 weights, bias.

import tempfile
from pathlib import Path

with tempfile.TemporaryDirectory() as d:
    path = Path(d) / "model.bin"
    scorer.save(path)
    print(f"model file: {path.stat().st_size} bytes")
    back = Logistic.load(path)
    print("round-trip exact:", bool(np.array_equal(back.weights, scorer.weights)))
