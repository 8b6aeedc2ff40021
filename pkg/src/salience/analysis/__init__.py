from salience.analysis.embed import EmbeddingResult, aligned_embed, knn_overlap, neighbor_embed
from salience.analysis.kmeans import elbow, inertia_curve, minibatch_kmeans, purity, standardize
from salience.analysis.mic import mic, mic_value
from salience.analysis.pca import explained_variance, pca
from salience.analysis.profiles import (discounted_future_sum, max_unit_mic, partition_profiles,
                                        pc1_spearman, unit_transducer)
from salience.analysis.representation import LatentSet, encode_dataset, read_latents, write_latents

__all__ = [
    "EmbeddingResult", "aligned_embed", "knn_overlap", "neighbor_embed", "elbow", "inertia_curve",
    "minibatch_kmeans", "purity", "standardize", "mic", "mic_value", "explained_variance", "pca",
    "discounted_future_sum", "max_unit_mic", "partition_profiles", "pc1_spearman", "unit_transducer",
    "LatentSet", "encode_dataset", "read_latents", "write_latents",
]
