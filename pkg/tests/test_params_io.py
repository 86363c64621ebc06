"""Parameter store, weights container, and MAC accounting."""

import numpy as np
import pytest

from lightfcx.errors import ContractError, DataError
from lightfcx.flops import conv2d_macs, identity_macs
from lightfcx.params import ParamStore, count_params
from lightfcx.weights_io import load_weights, read_entries, save_weights, write_entries


class TestParamStore:
    def test_unique_names_enforced(self):
        store = ParamStore()
        store.param("a.weight", np.zeros(3))
        with pytest.raises(ContractError):
            store.param("a.weight", np.zeros(3))

    def test_count_empty_prefix_set(self):
        store = ParamStore()
        store.param("a.w", np.zeros((2, 2)))
        assert count_params(store, "nothing.") == 0

    def test_count_closed_form(self):
        store = ParamStore()
        store.param("layer.weight", np.zeros((96, 96)))
        store.param("layer.bias", np.zeros(96))
        assert count_params(store, "layer.") == 96 * 96 + 96 == 9312

    def test_buffers_not_counted(self):
        store = ParamStore()
        store.param("bn.gamma", np.ones(8))
        store.buffer("bn.running_mean", np.zeros(8))
        assert count_params(store) == 8

    def test_freeze_all_except(self):
        store = ParamStore()
        a = store.param("stam.rgb.w", np.ones(2))
        b = store.param("head.w", np.ones(2))
        store.freeze_all_except("stam.")
        assert a.requires_grad and not b.requires_grad
        assert store.is_frozen("head.w") and not store.is_frozen("stam.rgb.w")
        assert [n for n, _ in store.trainable()] == ["stam.rgb.w"]
        store.unfreeze_all()
        assert b.requires_grad


class TestWeightsContainer:
    def _store(self, seed):
        rng = np.random.default_rng(seed)
        store = ParamStore()
        store.param("a.weight", rng.normal(size=(3, 4)))
        store.param("b.bias", rng.normal(size=5))
        store.buffer("b.running_mean", rng.normal(size=5))
        return store

    def test_roundtrip_preserves_f32_values(self, tmp_path):
        store = self._store(0)
        path = tmp_path / "w.lfcx"
        save_weights(store, path)
        other = self._store(1)
        load_weights(other, path)
        for name in ("a.weight", "b.bias"):
            expected = store.get(name).data.astype(np.float32).astype(np.float64)
            assert np.array_equal(other.get(name).data, expected)

    def test_magic_and_layout(self, tmp_path):
        path = tmp_path / "w.lfcx"
        write_entries(path, {"x": np.arange(4.0)})
        blob = path.read_bytes()
        assert blob[:4] == b"LFCX"
        assert int.from_bytes(blob[4:8], "little") == 1   # version
        assert int.from_bytes(blob[8:12], "little") == 1  # entry count

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "w.lfcx"
        write_entries(path, {"x": np.arange(16.0)})
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(DataError):
            read_entries(path)

    def test_trailing_garbage_rejected(self, tmp_path):
        path = tmp_path / "w.lfcx"
        write_entries(path, {"x": np.arange(4.0)})
        path.write_bytes(path.read_bytes() + b"zz")
        with pytest.raises(DataError):
            read_entries(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "w.lfcx"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(DataError):
            read_entries(path)

    def test_shape_mismatch_rejected(self, tmp_path):
        path = tmp_path / "w.lfcx"
        store = self._store(2)
        save_weights(store, path)
        other = ParamStore()
        other.param("a.weight", np.zeros((4, 4)))
        with pytest.raises(ContractError):
            load_weights(other, path, ignore_prefixes=("b.",))

    def test_missing_and_extra_entries(self, tmp_path):
        path = tmp_path / "w.lfcx"
        save_weights(self._store(3), path)
        sparse = ParamStore()
        sparse.param("a.weight", np.zeros((3, 4)))
        with pytest.raises(ContractError):      # extra b.* entries in the file
            load_weights(sparse, path)
        load_weights(sparse, path, ignore_prefixes=("b.",))
        extra = self._store(4)
        extra.param("stam.rgb.w", np.zeros(2))
        with pytest.raises(ContractError):      # stam.* missing from the file
            load_weights(extra, path)
        load_weights(extra, path, allow_missing=("stam.",))
        assert np.array_equal(extra.get("stam.rgb.w").data, np.zeros(2))


class TestMacFormulas:
    def test_pointwise_conv_example(self):
        assert conv2d_macs(192, 96, 1, 16, 16) == 192 * 96 * 256

    def test_identity_is_free(self):
        assert identity_macs() == 0

    def test_grouped_conv_scales_down(self):
        assert conv2d_macs(96, 96, 3, 8, 8, groups=96) == 96 * 9 * 64
