import numpy as np
import pytest

from labelsift.data import (DEFAULT_ASYM_MAPPING, DatasetBundle, ImbalanceSpec,
                            NoiseSpec, apply_noise, imbalance_class_size,
                            inject_asymmetric_noise, inject_symmetric_noise,
                            load_bundle, load_cifar10_dir, load_external_labels,
                            make_imbalanced, make_synthetic_dataset, save_bundle,
                            save_external_labels)


def flat_bundle(n_per_class, num_classes, seed=0):
    labels = np.repeat(np.arange(num_classes), n_per_class).astype(np.int64)
    rng = np.random.default_rng(seed)
    images = rng.integers(0, 256, size=(len(labels), 2, 2, 3), dtype=np.uint8)
    return DatasetBundle(images, labels.copy(), labels, num_classes)


class TestSymmetricNoise:
    def test_zero_rate_is_identity(self):
        b = flat_bundle(50, 4)
        out = inject_symmetric_noise(b, 0.0, seed=3)
        assert np.array_equal(out.noisy_labels, out.true_labels)

    def test_flip_rate_half_ten_classes(self):
        b = flat_bundle(1000, 10)
        out = inject_symmetric_noise(b, 0.5, seed=1)
        frac = (out.noisy_labels != out.true_labels).mean()
        assert abs(frac - 0.45) <= 0.02

    def test_flip_rate_one_two_classes(self):
        b = flat_bundle(5000, 2)
        out = inject_symmetric_noise(b, 1.0, seed=2)
        frac = (out.noisy_labels != out.true_labels).mean()
        assert abs(frac - 0.5) <= 0.02

    def test_empirical_rate_matches_uniform_redraw(self):
        # invariant: effective corruption r * (C - 1) / C within 2% over >= 10k samples
        for rate, c in ((0.2, 10), (0.8, 5)):
            b = flat_bundle(12000 // c, c)
            out = inject_symmetric_noise(b, rate, seed=5)
            frac = (out.noisy_labels != out.true_labels).mean()
            assert abs(frac - rate * (c - 1) / c) <= 0.02

    def test_true_labels_never_mutated_and_deterministic(self):
        b = flat_bundle(100, 5)
        before = b.true_labels.copy()
        out1 = inject_symmetric_noise(b, 0.7, seed=9)
        out2 = inject_symmetric_noise(b, 0.7, seed=9)
        assert np.array_equal(b.true_labels, before)
        assert np.array_equal(out1.true_labels, before)
        assert np.array_equal(out1.noisy_labels, out2.noisy_labels)

    def test_rejects_bad_rate(self):
        b = flat_bundle(10, 2)
        with pytest.raises(ValueError):
            inject_symmetric_noise(b, 1.2, seed=0)
        with pytest.raises(ValueError):
            inject_symmetric_noise(b, -0.1, seed=0)


class TestAsymmetricNoise:
    def test_zero_rate_and_identity_mapping(self):
        b = flat_bundle(100, 3)
        ident = {0: 0, 1: 1, 2: 2}
        assert np.array_equal(inject_asymmetric_noise(b, 0.0, {0: 1, 1: 2, 2: 0}, 1).noisy_labels,
                              b.true_labels)
        assert np.array_equal(inject_asymmetric_noise(b, 0.9, ident, 1).noisy_labels,
                              b.true_labels)

    def test_flip_counts_match_binomial_oracle(self):
        # oracle: relabeled cats ~ Binomial(1000, 0.4)
        sim = np.random.default_rng(0).binomial(1000, 0.4, size=200000)
        assert abs(sim.mean() - 400.0) < 0.5
        three_sigma = 3 * sim.std()
        mapping = {0: 0, 1: 1, 2: 2, 3: 5, 4: 4, 5: 5}  # cat(3) -> dog(5)
        counts = []
        for seed in range(5):
            b = flat_bundle(1000, 6, seed=seed)
            out = inject_asymmetric_noise(b, 0.4, mapping, seed=seed + 100)
            cats = out.true_labels == 3
            counts.append(int((out.noisy_labels[cats] == 5).sum()))
            assert abs(counts[-1] - 400) <= three_sigma
        assert abs(np.mean(counts) - 400) <= 30

    def test_missing_mapping_entry_raises(self):
        b = flat_bundle(10, 3)
        with pytest.raises(ValueError, match="missing"):
            inject_asymmetric_noise(b, 0.1, {0: 1, 1: 0}, seed=0)

    def test_default_mapping_pairs(self):
        assert DEFAULT_ASYM_MAPPING == {9: 1, 2: 0, 4: 7, 3: 5, 5: 3}


class TestExternalLabels:
    def test_roundtrip(self, tmp_path):
        b = flat_bundle(20, 4)
        labels = np.random.default_rng(0).integers(0, 4, size=len(b))
        path = tmp_path / "labels.bin"
        save_external_labels(labels, 4, path)
        out = load_external_labels(b, path)
        assert np.array_equal(out.noisy_labels, labels)
        assert np.array_equal(out.true_labels, b.true_labels)

    def test_length_mismatch(self, tmp_path):
        b = flat_bundle(20, 4)
        path = tmp_path / "labels.bin"
        save_external_labels(np.zeros(10, dtype=int), 4, path)
        with pytest.raises(ValueError, match="length"):
            load_external_labels(b, path)

    def test_out_of_range_class(self, tmp_path):
        b = flat_bundle(5, 4)
        path = tmp_path / "labels.bin"
        bad = np.zeros(len(b), dtype="<i4")
        bad[-1] = 7
        with open(path, "wb") as f:
            f.write(f"{len(b)} 4\n".encode())
            f.write(bad.tobytes())
        with pytest.raises(ValueError, match="out-of-range"):
            load_external_labels(b, path)


class TestImbalance:
    def test_kappa_one_keeps_everything(self):
        b = flat_bundle(40, 5)
        out = make_imbalanced(b, ImbalanceSpec(1.0, seed=0))
        assert len(out) == len(b)

    def test_formula_endpoints(self):
        # kappa=100, C=10: first class keeps all 5000, last keeps 50
        assert imbalance_class_size(5000, 100.0, 1, 10) == 5000
        assert imbalance_class_size(5000, 100.0, 10, 10) == 50

    def test_middle_class_direct_evaluation(self):
        # oracle: direct evaluation of round(5000 / 10^(4/9))
        expected = int(np.rint(5000 / 10 ** (4 / 9)))
        assert expected == 1797
        assert imbalance_class_size(5000, 10.0, 5, 10) == expected

    def test_sizes_on_real_bundle(self):
        b = flat_bundle(100, 4)
        out = make_imbalanced(b, ImbalanceSpec(8.0, seed=1))
        counts = np.bincount(out.true_labels, minlength=4)
        expected = [imbalance_class_size(100, 8.0, i + 1, 4) for i in range(4)]
        assert counts.tolist() == expected
        # monotonically non-increasing in class index
        assert all(counts[i] >= counts[i + 1] for i in range(3))

    def test_deterministic_and_requires_balance(self):
        b = flat_bundle(50, 3)
        out1 = make_imbalanced(b, ImbalanceSpec(5.0, seed=2))
        out2 = make_imbalanced(b, ImbalanceSpec(5.0, seed=2))
        assert np.array_equal(out1.images, out2.images)
        unbalanced = DatasetBundle(b.images[:-3], b.noisy_labels[:-3],
                                   b.true_labels[:-3], 3)
        with pytest.raises(ValueError, match="balanced"):
            make_imbalanced(unbalanced, ImbalanceSpec(2.0, seed=0))

    def test_rejects_kappa_below_one(self):
        with pytest.raises(ValueError):
            ImbalanceSpec(0.5, seed=0)

    def test_noise_after_imbalance(self):
        # imbalance first, then inject noise on the retained samples
        b = flat_bundle(60, 3)
        imb = make_imbalanced(b, ImbalanceSpec(4.0, seed=3))
        noisy = apply_noise(imb, NoiseSpec("sym", 0.5, seed=4))
        assert len(noisy) == len(imb)
        assert np.array_equal(noisy.true_labels, imb.true_labels)


class TestBundle:
    def test_invariants(self):
        with pytest.raises(ValueError, match="length"):
            DatasetBundle(np.zeros((3, 2, 2, 3), np.uint8), np.zeros(2, np.int64),
                          np.zeros(3, np.int64), 2)
        with pytest.raises(ValueError, match="outside"):
            DatasetBundle(np.zeros((2, 2, 2, 3), np.uint8), np.array([0, 5]),
                          np.zeros(2, np.int64), 2)

    def test_train_view_hides_truth(self):
        b = flat_bundle(10, 2)
        view = b.train_view()
        assert not hasattr(view, "true_labels")
        assert np.array_equal(view.noisy_labels, b.noisy_labels)

    def test_save_load_roundtrip(self, tmp_path):
        b = flat_bundle(12, 3)
        save_bundle(b, tmp_path / "d")
        out = load_bundle(tmp_path / "d")
        assert np.array_equal(out.images, b.images)
        assert out.content_hash() == b.content_hash()


class TestSynthetic:
    def test_shapes_and_balance(self):
        train, test = make_synthetic_dataset(num_classes=5, n_train=250, n_test=100, seed=1)
        assert train.images.shape == (250, 32, 32, 3)
        assert np.bincount(train.true_labels).tolist() == [50] * 5
        assert np.array_equal(train.noisy_labels, train.true_labels)
        assert test.split_tag == "test"

    def test_deterministic(self):
        a, _ = make_synthetic_dataset(num_classes=3, n_train=60, n_test=30, seed=7)
        b, _ = make_synthetic_dataset(num_classes=3, n_train=60, n_test=30, seed=7)
        assert np.array_equal(a.images, b.images)


class TestCifarFormat:
    def test_reads_binary_batches(self, tmp_path):
        # two records: label byte then R, G, B planes
        rec = []
        for label, value in ((3, 10), (7, 200)):
            planes = np.full(3 * 32 * 32, value, dtype=np.uint8)
            planes[:1024] = value + 1  # red plane differs
            rec.append(np.concatenate([[label], planes]).astype(np.uint8))
        (tmp_path / "data_batch_1.bin").write_bytes(np.concatenate(rec).tobytes())
        (tmp_path / "test_batch.bin").write_bytes(rec[0].tobytes())
        bundle = load_cifar10_dir(tmp_path, "train")
        assert len(bundle) == 2
        assert bundle.true_labels.tolist() == [3, 7]
        assert bundle.images[0, 0, 0, 0] == 11  # red channel
        assert bundle.images[0, 0, 0, 1] == 10
        assert len(load_cifar10_dir(tmp_path, "test")) == 1

    def test_missing_files(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_cifar10_dir(tmp_path, "train")
