import numpy as np
import numpy.testing as npt
import pytest

from tumorfuse.checkpoint import load_checkpoint, save_checkpoint
from tumorfuse.errors import CheckpointError


@pytest.fixture
def saved(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {"w": rng.standard_normal((3, 4)).astype(np.float32), "b": rng.standard_normal(4).astype(np.float32),
               "scalar": np.array(1.5, np.float32), "empty": np.zeros((0, 2), np.float32)}
    meta = {"seed": 7, "template": [[0.1, 0.9], [1 / 3, 2 / 3]], "name": "vit"}
    path = tmp_path / "m.fbst"
    save_checkpoint(path, tensors, meta)
    return path, tensors, meta


class TestCheckpoint:
    def test_round_trip_is_bitwise(self, saved):
        path, tensors, meta = saved
        loaded, loaded_meta = load_checkpoint(path)
        assert list(loaded) == list(tensors)
        for name, arr in tensors.items():
            assert loaded[name].shape == arr.shape
            assert loaded[name].tobytes() == arr.tobytes()
        assert loaded_meta == meta

    def test_resave_is_identical(self, saved, tmp_path):
        path, _, _ = saved
        tensors, meta = load_checkpoint(path)
        save_checkpoint(tmp_path / "again.fbst", tensors, meta)
        assert (tmp_path / "again.fbst").read_bytes() == path.read_bytes()

    def test_float64_stored_as_float32(self, tmp_path):
        save_checkpoint(tmp_path / "x.fbst", {"a": np.array([0.1, 0.2])})
        npt.assert_array_equal(load_checkpoint(tmp_path / "x.fbst")[0]["a"], np.float32([0.1, 0.2]))

    def test_integer_tensor_rejected(self, tmp_path):
        with pytest.raises(CheckpointError):
            save_checkpoint(tmp_path / "x.fbst", {"a": np.arange(3)})

    def test_bad_magic(self, saved):
        path, _, _ = saved
        path.write_bytes(b"XXXX" + path.read_bytes()[4:])
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_trailing_bytes(self, saved):
        path, _, _ = saved
        path.write_bytes(path.read_bytes() + b"\0")
        with pytest.raises(CheckpointError, match="trailing"):
            load_checkpoint(path)

    @pytest.mark.parametrize("cut", [6, 20, 60, -3])
    def test_truncated(self, saved, cut):
        path, _, _ = saved
        path.write_bytes(path.read_bytes()[:cut])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
