import pytest
from hypothesis import given, strategies as st

from gala import config as config_io
from gala.config import ConfigError, ExperimentConfig


class TestDefaults:
    def test_classifier(self):
        c = ExperimentConfig().classifier
        assert (c.num_layers, c.hidden_dim, c.lr, c.epochs, c.batch_size) == (3, 64, 1e-3, 100, 64)

    def test_diffusion(self):
        d = ExperimentConfig().diffusion
        assert (d.num_layers, d.heads, d.lr, d.batch_size, d.ema) == (4, 8, 2e-5, 128, 0.9999)
        assert (d.dt, d.t_recon, d.beta_min, d.beta_max) == (0.001, 0.1, 0.1, 20.0)
        assert d.step_override is None

    def test_curriculum_and_runs(self):
        cfg = ExperimentConfig()
        assert (cfg.curriculum.alpha_start, cfg.curriculum.alpha_end) == (0.95, 0.99)
        assert cfg.seeds == 5 and cfg.run_seeds == [0, 1, 2, 3, 4]
        assert cfg.adapt.epochs == 50 and cfg.adapt.lr == 1e-3


class TestFileFormat:
    def test_round_trip_defaults(self):
        cfg = ExperimentConfig()
        assert config_io.loads(config_io.dumps(cfg)) == cfg

    @given(st.floats(1e-9, 1.0), st.integers(1, 500), st.booleans(), st.text("abc/_-.", min_size=1, max_size=12))
    def test_round_trip_random(self, lr, epochs, flag, path):
        cfg = ExperimentConfig()
        cfg.diffusion.lr = lr
        cfg.adapt.epochs = epochs
        cfg.adapt.jigsaw = flag
        cfg.output_dir = path
        assert config_io.loads(config_io.dumps(cfg)) == cfg

    def test_comments_and_blank_lines(self):
        cfg = config_io.loads("# header\n\nseed = 7  # trailing\ndiffusion.t_recon=0.2\n")
        assert cfg.seed == 7 and cfg.diffusion.t_recon == 0.2

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            config_io.loads("diffusion.bogus=1\n")

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            config_io.loads("seed=abc\n")

    def test_bad_bool(self):
        with pytest.raises(ConfigError):
            config_io.loads("adapt.jigsaw=maybe\n")

    def test_missing_equals(self):
        with pytest.raises(ConfigError):
            config_io.loads("seed 3\n")

    def test_file_round_trip(self, tmp_path):
        cfg = ExperimentConfig()
        cfg.synthetic.graphs_per_domain = 40
        config_io.save(cfg, tmp_path / "run.cfg")
        assert config_io.load(tmp_path / "run.cfg") == cfg

    def test_keys_are_field_paths(self):
        keys = config_io.flatten(ExperimentConfig())
        assert "classifier.hidden_dim" in keys and "curriculum.alpha_start" in keys
