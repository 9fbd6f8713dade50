"""Tests for checkpoint save/load."""

import json

import numpy as np
import pytest

from replay_engine.config.settings import ActionTable, ModelConfig
from replay_engine.exceptions import CheckpointError
from replay_engine.models.base_policy import NetworkPolicy
from replay_engine.models.checkpoint import FORMAT_VERSION, MAGIC, PREAMBLE, load_checkpoint, save_checkpoint
from replay_engine.models.params import init_params
from replay_engine.training.optimizer import Adam
from tests.helpers import tiny_model

HASH = "ab" * 32


def _save(path, meta=None, optimizer_state=None, seed=0):
    config = tiny_model()
    params = init_params(config, ActionTable(), seed=seed)
    save_checkpoint(path, params, config, ActionTable(), HASH, meta=meta, optimizer_state=optimizer_state)
    return params


def _rewrite_header(path, edit):
    """Apply edit to the JSON header and write the file back with the same payload."""
    data = path.read_bytes()
    magic, version, reserved, header_len = PREAMBLE.unpack_from(data)
    header = json.loads(data[PREAMBLE.size:PREAMBLE.size + header_len])
    edit(header)
    new_header = json.dumps(header).encode("utf-8")
    payload = data[PREAMBLE.size + header_len:]
    path.write_bytes(PREAMBLE.pack(magic, version, reserved, len(new_header)) + new_header + payload)


class TestCheckpointRoundTrip:
    """Test what a saved checkpoint brings back."""

    def test_params_within_f32(self, tmp_path):
        """Test parameters come back as f32 copies of the saved values."""
        path = tmp_path / "model.ckpt"
        params = _save(path)
        ckpt = load_checkpoint(path)
        assert ckpt.params.dtype == np.float32
        np.testing.assert_array_equal(ckpt.params.flat, params.flat.astype(np.float32))
        assert ckpt.params.index.names() == params.index.names()

    def test_configs_and_meta(self, tmp_path):
        """Test the model config, action table, hash and counters are restored."""
        path = tmp_path / "model.ckpt"
        _save(path, meta={"epoch": 3, "policy_version": 12})
        ckpt = load_checkpoint(path)
        assert ckpt.model_config == tiny_model()
        assert ckpt.actions == ActionTable()
        assert ckpt.config_hash == HASH
        assert ckpt.meta == {"epoch": 3, "policy_version": 12}
        assert ckpt.optimizer_state is None

    def test_optimizer_state(self, tmp_path):
        """Test Adam moments and step count survive a round trip."""
        config = tiny_model()
        params = init_params(config)
        grads = params.zeros_like()
        grads.flat[:] = np.random.default_rng(0).normal(size=params.num_params)
        adam = Adam(params.num_params, lr=1e-3)
        adam.step(params, grads)
        adam.step(params, grads)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, config, ActionTable(), HASH, optimizer_state=adam.state_dict())

        state = load_checkpoint(path).optimizer_state
        assert state["t"] == 2
        np.testing.assert_array_equal(state["m"], adam.m)
        np.testing.assert_array_equal(state["v"], adam.v)

    def test_atomic_write(self, tmp_path):
        """Test no temporary file is left behind and missing directories are created."""
        path = tmp_path / "deep" / "dir" / "model.ckpt"
        _save(path)
        assert path.exists()
        assert [p.name for p in path.parent.iterdir()] == ["model.ckpt"]

    def test_overwrite(self, tmp_path):
        """Test saving over an existing checkpoint replaces it."""
        path = tmp_path / "model.ckpt"
        _save(path, seed=0)
        params = _save(path, seed=1)
        np.testing.assert_array_equal(load_checkpoint(path).params.flat, params.flat.astype(np.float32))

    def test_expected_configs_accepted(self, tmp_path):
        """Test matching expectations pass."""
        path = tmp_path / "model.ckpt"
        _save(path)
        load_checkpoint(path, expected_model=tiny_model(), expected_hash=HASH)

    def test_network_policy_from_checkpoint(self, tmp_path):
        """Test a policy built from a checkpoint takes its version from the counters."""
        path = tmp_path / "model.ckpt"
        _save(path, meta={"policy_version": 7})
        policy = NetworkPolicy.from_checkpoint(load_checkpoint(path))
        assert policy.version == 7
        assert policy.greedy


class TestCheckpointErrors:
    """Test malformed and mismatching checkpoints are rejected."""

    def test_missing_file(self, tmp_path):
        """Test a missing file raises CheckpointError."""
        with pytest.raises(CheckpointError, match="cannot read"):
            load_checkpoint(tmp_path / "absent.ckpt")

    def test_too_short(self, tmp_path):
        """Test a file shorter than the preamble is rejected."""
        path = tmp_path / "short.ckpt"
        path.write_bytes(MAGIC)
        with pytest.raises(CheckpointError, match="too short"):
            load_checkpoint(path)

    def test_bad_magic(self, tmp_path):
        """Test a foreign file is rejected by its magic."""
        path = tmp_path / "model.ckpt"
        _save(path)
        data = bytearray(path.read_bytes())
        data[:4] = b"XXXX"
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointError, match="bad magic"):
            load_checkpoint(path)

    def test_unsupported_version(self, tmp_path):
        """Test a newer format version is rejected."""
        path = tmp_path / "model.ckpt"
        _save(path)
        data = path.read_bytes()
        _, _, reserved, header_len = PREAMBLE.unpack_from(data)
        path.write_bytes(PREAMBLE.pack(MAGIC, FORMAT_VERSION + 1, reserved, header_len) + data[PREAMBLE.size:])
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_invalid_header(self, tmp_path):
        """Test an unparseable header is rejected."""
        path = tmp_path / "model.ckpt"
        path.write_bytes(PREAMBLE.pack(MAGIC, FORMAT_VERSION, 0, 5) + b"{oops")
        with pytest.raises(CheckpointError, match="invalid checkpoint header"):
            load_checkpoint(path)

    def test_truncated_payload(self, tmp_path):
        """Test a payload of the wrong length is rejected."""
        path = tmp_path / "model.ckpt"
        _save(path)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(CheckpointError, match="expected"):
            load_checkpoint(path)

    def test_index_mismatch(self, tmp_path):
        """Test a stored index that disagrees with the stored model config is rejected."""
        path = tmp_path / "model.ckpt"
        _save(path)

        def edit(header):
            header["index"][0]["name"] = "renamed"

        _rewrite_header(path, edit)
        with pytest.raises(CheckpointError, match="parameter index"):
            load_checkpoint(path)

    def test_model_mismatch(self, tmp_path):
        """Test a checkpoint of another model size is rejected when a model is expected."""
        path = tmp_path / "model.ckpt"
        _save(path)
        other = ModelConfig(latent_dim=16, num_heads=2, trunk_depth=1, value_embed_dim=4)
        with pytest.raises(CheckpointError, match="model config differs"):
            load_checkpoint(path, expected_model=other)

    def test_hash_mismatch(self, tmp_path):
        """Test a checkpoint from another experiment config is rejected when a hash is expected."""
        path = tmp_path / "model.ckpt"
        _save(path)
        with pytest.raises(CheckpointError, match="config hash"):
            load_checkpoint(path, expected_hash="cd" * 32)
