import numpy as np
import pytest
import torch

from labelsift.augment import (DEFAULT_STRONG_OPS, AugmentedBatch, AugmentPolicy,
                               epoch_rng, iter_augmented, iter_plain, strong_views,
                               to_model_input, weak_views)


@pytest.fixture()
def images():
    rng = np.random.default_rng(0)
    return rng.integers(0, 256, size=(40, 32, 32, 3), dtype=np.uint8)


def test_weak_views_shape_and_determinism(images):
    policy = AugmentPolicy()
    out1 = weak_views(images, epoch_rng(1, 2, 3), policy)
    out2 = weak_views(images, epoch_rng(1, 2, 3), policy)
    out3 = weak_views(images, epoch_rng(1, 2, 4), policy)
    assert out1.shape == images.shape and out1.dtype == np.uint8
    assert np.array_equal(out1, out2)
    assert not np.array_equal(out1, out3)


@pytest.mark.parametrize("op", DEFAULT_STRONG_OPS)
def test_each_strong_op_runs(images, op):
    policy = AugmentPolicy(strong_ops=(op,), n_strong_ops=2)
    out = strong_views(images, epoch_rng(0, 0, 0), policy)
    assert out.shape == images.shape and out.dtype == np.uint8


def test_unknown_op_rejected():
    with pytest.raises(ValueError):
        AugmentPolicy(strong_ops=("sparkle",))


def test_to_model_input_range(images):
    x = to_model_input(images)
    assert x.shape == (40, 3, 32, 32)
    assert x.dtype == torch.float32
    assert x.min() >= -1.0 and x.max() <= 1.0


def test_iterator_covers_each_index_once(images):
    labels = np.arange(40) % 4
    seen = []
    for batch in iter_augmented(images, labels, np.arange(40), 16,
                                epoch_rng(5, 0, 0), AugmentPolicy()):
        assert isinstance(batch, AugmentedBatch)
        assert len(np.unique(batch.indices)) == len(batch.indices)
        assert torch.equal(batch.labels, torch.from_numpy(labels[batch.indices]))
        seen.extend(batch.indices.tolist())
    assert sorted(seen) == list(range(40))


def test_iterator_deterministic_per_epoch(images):
    labels = np.zeros(40, dtype=np.int64)

    def first_batch(epoch):
        it = iter_augmented(images, labels, np.arange(40), 8,
                            epoch_rng(9, epoch, 1), AugmentPolicy())
        return next(it)

    a, b, c = first_batch(0), first_batch(0), first_batch(1)
    assert np.array_equal(a.indices, b.indices)
    assert torch.equal(a.weak_views, b.weak_views)
    assert not np.array_equal(a.indices, c.indices) or not torch.equal(a.weak_views, c.weak_views)


def test_iterator_rejects_empty_and_bad_batch(images):
    with pytest.raises(ValueError):
        list(iter_augmented(images, np.zeros(40, np.int64), np.array([], np.int64),
                            8, epoch_rng(0, 0, 0), AugmentPolicy()))
    with pytest.raises(ValueError):
        list(iter_augmented(images, np.zeros(40, np.int64), np.arange(40),
                            0, epoch_rng(0, 0, 0), AugmentPolicy()))


def test_plain_iteration_applies_no_augmentation(images):
    chunks = list(iter_plain(images, 16))
    assert [start for start, _ in chunks] == [0, 16, 32]
    recon = torch.cat([x for _, x in chunks])
    assert torch.equal(recon, to_model_input(images))


def test_batch_rejects_duplicate_indices(images):
    x = to_model_input(images[:4])
    with pytest.raises(ValueError, match="unique"):
        AugmentedBatch(x, x, x, np.array([0, 1, 1, 2]), torch.zeros(4, dtype=torch.long))
