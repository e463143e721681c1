import numpy as np
import numpy.testing as npt
import pytest

from tumorfuse.data import (SYNTH_CLASSES, LabeledDataset, ingest_dataset, pixel_sum_oracle, split, synth_generate,
                            truncate, write_dataset)
from tumorfuse.errors import ContractError, SplitError


@pytest.fixture(scope="module")
def target():
    return synth_generate((500, 400), size=64, seed=0, domain="target")


class TestSynth:
    def test_shapes_and_counts(self, target):
        assert target.images.shape == (900, 1, 64, 64)
        assert target.images.dtype == np.float32
        assert target.counts() == (500, 400)
        assert target.class_names == SYNTH_CLASSES

    def test_values_in_unit_range(self, target):
        assert target.images.min() >= 0.0 and target.images.max() <= 1.0

    def test_deterministic_per_seed(self):
        a = synth_generate((5, 4), size=16, seed=3)
        b = synth_generate((5, 4), size=16, seed=3)
        c = synth_generate((5, 4), size=16, seed=4)
        npt.assert_array_equal(a.images, b.images)
        assert not np.array_equal(a.images, c.images)

    def test_domains_differ(self):
        t = synth_generate((5, 4), size=16, seed=0, domain="target")
        s = synth_generate((5, 4), size=16, seed=0, domain="source")
        assert not np.array_equal(t.images, s.images)

    def test_blob_is_bright(self, target):
        tumor = target.images[target.labels == 0, 0]
        peaks = tumor.reshape(len(tumor), -1).max(axis=1)
        background = np.median(tumor.reshape(len(tumor), -1), axis=1)
        assert np.all(peaks - background >= 0.5)

    def test_classes_separable_by_pixel_sum(self, target):
        assert pixel_sum_oracle(target) >= 0.95

    @pytest.mark.parametrize("kwargs", [{"counts": (0, 3)}, {"domain": "other"}])
    def test_bad_arguments(self, kwargs):
        with pytest.raises(ContractError):
            synth_generate(**{"counts": (3, 3), **kwargs})


class TestSplit:
    def test_stratified_counts(self, target):
        train, test = split(target, 0.8, seed=0)
        assert train.counts() == (400, 320)
        assert test.counts() == (100, 80)

    def test_disjoint_and_complete(self, target):
        train, test = split(target, 0.8, seed=0)
        rows = {img.tobytes() for img in train.images}
        assert not any(img.tobytes() in rows for img in test.images)
        assert len(train) + len(test) == len(target)

    def test_seeded(self, target):
        a, _ = split(target, 0.8, seed=1)
        b, _ = split(target, 0.8, seed=1)
        npt.assert_array_equal(a.images, b.images)

    def test_too_few_samples(self):
        ds = LabeledDataset(np.zeros((3, 1, 2, 2), np.float32), np.array([0, 0, 1]), ("a", "b"))
        with pytest.raises(SplitError):
            split(ds)

    def test_bad_ratio(self, target):
        with pytest.raises(ContractError):
            split(target, 1.0)

    def test_truncate_keeps_proportions(self, target):
        small = truncate(target, 90, seed=0)
        assert small.counts() == (50, 40)
        assert truncate(target, 10_000) is target


class TestIngest:
    def test_round_trip(self, tmp_path):
        ds = synth_generate((6, 5), size=16, seed=2)
        write_dataset(ds, tmp_path)
        back = ingest_dataset(tmp_path, image_size=(16, 16))
        assert back.class_names == ("tumor", "notumor")
        assert back.counts() == (6, 5)
        # 8-bit quantization only
        npt.assert_allclose(back.images, ds.images, atol=0.5 / 255 + 1e-6)

    def test_no_tumor_class_is_last(self, tmp_path):
        ds = synth_generate((3, 3), size=8, seed=0)
        write_dataset(LabeledDataset(ds.images, ds.labels, ("pituitary", "no_tumor")), tmp_path)
        (tmp_path / "glioma").mkdir()
        write_dataset(LabeledDataset(ds.images[:2], np.zeros(2, np.int64), ("glioma",)), tmp_path)
        assert ingest_dataset(tmp_path, (8, 8)).class_names == ("glioma", "pituitary", "no_tumor")

    def test_resizes(self, tmp_path):
        write_dataset(synth_generate((2, 2), size=20, seed=0), tmp_path)
        assert ingest_dataset(tmp_path, (8, 8)).images.shape == (4, 1, 8, 8)

    def test_unreadable_file_is_skipped(self, tmp_path):
        write_dataset(synth_generate((3, 3), size=8, seed=0), tmp_path)
        (tmp_path / "tumor" / "broken.pgm").write_bytes(b"not an image")
        ds = ingest_dataset(tmp_path, (8, 8))
        assert ds.skipped == 1
        assert ds.counts() == (3, 3)

    def test_empty_class(self, tmp_path):
        write_dataset(synth_generate((3, 3), size=8, seed=0), tmp_path)
        (tmp_path / "empty").mkdir()
        with pytest.raises(ContractError, match="empty"):
            ingest_dataset(tmp_path, (8, 8))

    def test_missing_root(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            ingest_dataset(tmp_path / "nope")
