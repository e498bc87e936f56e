import logging

import numpy as np

from convflat.core.exceptions import ValidationError
from convflat.schemas.dataset import BlobParams, SyntheticDataset

logger = logging.getLogger(__name__)


def class_means(params: BlobParams) -> np.ndarray:
    """(class_count, raw_channels) means: separation along channel c mod raw_channels."""
    means = np.zeros((params.class_count, params.channels))
    for c in range(params.class_count):
        means[c, c % params.channels] = params.separation
    return means


def generate_blobs(params: BlobParams) -> SyntheticDataset:
    """Seeded Gaussian-blob images with a train/validation split.

    Sample i of class c is ``mu_c + sigma * (offset_i + noise_i)`` where
    ``offset_i`` is one draw per channel broadcast over the image and
    ``noise_i`` is per-pixel. With sigma = 0 every image equals its class mean.
    """
    n = params.total_samples
    n_val = round(n * params.val_fraction)
    if n_val < 1 or n_val >= n:
        raise ValidationError(
            f"val_fraction {params.val_fraction} leaves an empty split of {n} samples",
            errors={"samples": n, "val": n_val},
        )

    rng = np.random.default_rng(params.seed)
    c, h, w = params.channels, params.height, params.width
    labels = np.repeat(np.arange(params.class_count, dtype=np.int64), params.samples_per_class)

    offsets = rng.standard_normal((n, c, 1, 1))
    pixels = rng.standard_normal((n, c, h, w))
    means = class_means(params)[labels][:, :, None, None]
    inputs = means + params.covariance_scale * (offsets + pixels)

    order = rng.permutation(n)
    inputs, labels = inputs[order], labels[order]
    split = rng.permutation(n)
    logger.debug(
        "Generated blob dataset",
        extra={"props": {"samples": n, "classes": params.class_count, "seed": params.seed}},
    )
    return SyntheticDataset(
        inputs=inputs,
        labels=labels,
        class_count=params.class_count,
        params=params,
        train_idx=np.sort(split[n_val:]),
        val_idx=np.sort(split[:n_val]),
    )
