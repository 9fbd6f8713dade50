"""Tests for configuration models and config files."""

from pathlib import Path

import pytest
from pydantic import ValidationError

from replay_engine.config.loader import flatten_config, load_config, parse_config, write_config
from replay_engine.config.settings import (
    ActionTable,
    ExperimentConfig,
    GeneratorConfig,
    ModelConfig,
    ModelPreset,
    RlConfig,
    SimConfig,
    TrainConfig,
    TrainPreset,
    Transport,
    config_hash,
    parse_address,
)
from replay_engine.exceptions import ConfigError

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


class TestActionTable:
    """Test the discrete action table."""

    def test_default_shape(self):
        """Test the default table has 6 x 5 actions."""
        table = ActionTable()
        assert table.num_accel == 6
        assert table.num_steer == 5

    def test_zero_index_decodes_to_zero(self):
        """Test the zero action sits at the middle index."""
        table = ActionTable()
        assert table.decode(*table.zero_index) == (0.0, 0.0)

    def test_first_index_decodes_to_minimum(self):
        """Test index (0, 0) is the strongest braking and steering right."""
        assert ActionTable().decode(0, 0) == (-4.0, -0.4)

    def test_all_pairs_distinct(self):
        """Test every index pair decodes to a distinct action."""
        table = ActionTable()
        pairs = {table.decode(i, j) for i in range(table.num_accel) for j in range(table.num_steer)}
        assert len(pairs) == 30

    def test_out_of_range(self):
        """Test out-of-range indices are rejected."""
        table = ActionTable()
        with pytest.raises(IndexError):
            table.decode(6, 0)
        with pytest.raises(IndexError):
            table.decode(0, -1)


class TestConfigValidation:
    """Test pydantic validation of config sections."""

    def test_defaults(self):
        """Test the default simulation constants."""
        sim = SimConfig()
        assert sim.dt == 0.1
        assert sim.max_steps == 400
        assert sim.front_overhang == pytest.approx(3.75)

    def test_unknown_key_rejected(self):
        """Test extra fields are forbidden."""
        with pytest.raises(ValidationError):
            SimConfig(time_step=0.1)

    def test_heads_must_divide_latent(self):
        """Test latent_dim must be a multiple of num_heads."""
        with pytest.raises(ValidationError):
            ModelConfig(latent_dim=10, num_heads=3)

    def test_modality_order_permutation(self):
        """Test modality_order must name each modality once."""
        ModelConfig(modality_order=["route", "active_agent", "road_network"])
        with pytest.raises(ValidationError):
            ModelConfig(modality_order=["route", "route", "active_agent"])

    def test_capacity_at_least_batch(self):
        """Test the replay table must hold one learner batch."""
        with pytest.raises(ValidationError):
            RlConfig(batch_size=512, replay_capacity=100)

    def test_gamma_range(self):
        """Test gamma must lie in (0, 1]."""
        TrainConfig(gamma=1.0)
        with pytest.raises(ValidationError):
            TrainConfig(gamma=0.0)

    def test_generator_num_steps(self):
        """Test recorded steps include both endpoints."""
        assert GeneratorConfig(segment_seconds=30.0).num_steps == 301
        assert GeneratorConfig.get_evaluation_config().num_steps == 101

    def test_generator_segment_too_long(self):
        """Test segments longer than max_steps are rejected."""
        with pytest.raises(ValidationError):
            GeneratorConfig(segment_seconds=60.0)

    def test_socket_transport_settings(self):
        """Test rank, address and loop checks for the socket transport."""
        rl = RlConfig(transport="socket", num_learners=2, rank=1, address="10.0.0.5:4000")
        assert rl.transport == Transport.SOCKET
        assert parse_address(rl.address) == ("10.0.0.5", 4000)
        with pytest.raises(ValidationError, match="outside"):
            RlConfig(transport="socket", num_learners=2, rank=2)
        with pytest.raises(ValidationError, match="socket transport only"):
            RlConfig(num_learners=2, rank=1)
        with pytest.raises(ValidationError, match="synchronous"):
            RlConfig(transport="socket", synchronous=True)
        with pytest.raises(ValidationError):
            RlConfig(transport="carrier-pigeon")

    @pytest.mark.parametrize("address", ["29500", "localhost:", ":29500", "host:port", "host:70000"])
    def test_bad_address(self, address):
        """Test malformed server addresses are rejected."""
        with pytest.raises(ValueError, match="host:port"):
            parse_address(address)
        with pytest.raises(ValidationError):
            RlConfig(address=address)


class TestPresets:
    """Test named presets."""

    def test_model_presets(self):
        """Test preset sizes grow."""
        sizes = [ModelConfig.get_preset(p).latent_dim for p in ModelPreset]
        assert sizes == [128, 256, 768]

    def test_train_presets(self):
        """Test the desk preset shrinks batches only."""
        full = TrainConfig.get_preset(TrainPreset.FULL)
        desk = TrainConfig.get_preset(TrainPreset.DESK)
        assert desk.rl.batch_size < full.rl.batch_size
        assert desk.rl.lr == full.rl.lr
        assert desk.gamma == full.gamma


class TestConfigFiles:
    """Test key-value config files."""

    def test_parse_nested_keys(self):
        """Test dotted keys reach nested sections."""
        config = parse_config({"train.rl.lr": "1e-4", "sim.dt": "0.2", "actions.accel_bins": "-1, 0, 1"})
        assert config.train.rl.lr == 1e-4
        assert config.sim.dt == 0.2
        assert config.actions.accel_bins == [-1.0, 0.0, 1.0]

    def test_unknown_key(self):
        """Test unknown keys raise ConfigError."""
        with pytest.raises(ConfigError):
            parse_config({"sim.warp": "9"})

    def test_unqualified_key(self):
        """Test keys without a section raise ConfigError."""
        with pytest.raises(ConfigError):
            parse_config({"dt": "0.1"})

    def test_invalid_value(self):
        """Test failing validation raises ConfigError."""
        with pytest.raises(ConfigError):
            parse_config({"train.gamma": "1.5"})

    def test_missing_file(self, tmp_path):
        """Test a missing file raises ConfigError."""
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.cfg")

    def test_none_gives_defaults(self):
        """Test no path yields the default config."""
        assert load_config(None) == ExperimentConfig()

    def test_load_with_comments(self, tmp_path):
        """Test comment lines are ignored."""
        path = tmp_path / "run.cfg"
        path.write_text("# desk run\nmodel.latent_dim = 64\ntrain.seed = 3\n")
        config = load_config(path)
        assert config.model.latent_dim == 64
        assert config.train.seed == 3

    def test_write_then_load(self, tmp_path):
        """Test a written config loads back equal."""
        config = ExperimentConfig(model=ModelConfig(latent_dim=64, num_heads=4))
        path = tmp_path / "out.cfg"
        write_config(config, path)
        assert load_config(path) == config

    def test_flatten_keys(self):
        """Test flattened keys are dotted."""
        flat = flatten_config(ExperimentConfig())
        assert flat["train.rl.clip"] == "0.3"
        assert flat["model.modality_order"] == "road_network,route,active_agent"

    def test_shipped_configs_load(self):
        """Test the example config files validate."""
        for name in ("desk", "full", "eval"):
            load_config(CONFIG_DIR / f"{name}.cfg")


class TestConfigHash:
    """Test config hashing."""

    def test_stable(self):
        """Test equal configs hash equal."""
        assert config_hash(ExperimentConfig()) == config_hash(ExperimentConfig())

    def test_sensitive(self):
        """Test any field change alters the hash."""
        changed = ExperimentConfig(train=TrainConfig(seed=1))
        assert config_hash(changed) != config_hash(ExperimentConfig())
