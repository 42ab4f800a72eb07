import pytest

from arccm.config import ConfigError, RunConfig


def write(tmp_path, text):
    p = tmp_path / "run.toml"
    p.write_text(text)
    return p


class TestDefaults:
    def test_default_sections_present(self):
        cfg = RunConfig.default()
        for sec in ("system", "synthesis", "simulation", "estimator",
                    "verify", "output"):
            assert hasattr(cfg, sec)

    def test_default_values(self):
        cfg = RunConfig.default()
        assert cfg.system.name == "example-ccs-3state"
        assert cfg.simulation.t1 == 12.0
        assert cfg.simulation.control_period == 1e-2
        assert cfg.estimator.kind == "scheduled"
        assert cfg.estimator.theta_final == "true"
        assert cfg.synthesis.theta_grid == [11, 11]
        assert cfg.synthesis.rate_convention == "c1-2lambda"
        assert cfg.output.plots is True


class TestLoading:
    def test_partial_override(self, tmp_path):
        p = write(tmp_path, '[simulation]\nt1 = 3.0\n\n[estimator]\nkind = "rls"\n')
        cfg = RunConfig.load(p)
        assert cfg.simulation.t1 == 3.0
        assert cfg.simulation.h == 1e-3  # untouched default
        assert cfg.estimator.kind == "rls"

    def test_explicit_theta_final_list(self, tmp_path):
        p = write(tmp_path, "[estimator]\ntheta_final = [0.1, 0.2, 0.3, 0.4]\n")
        cfg = RunConfig.load(p)
        assert cfg.estimator.theta_final == [0.1, 0.2, 0.3, 0.4]

    def test_unknown_section_rejected(self, tmp_path):
        p = write(tmp_path, "[simulator]\nt1 = 3.0\n")
        with pytest.raises(ConfigError):
            RunConfig.load(p)

    def test_unknown_key_rejected(self, tmp_path):
        p = write(tmp_path, "[simulation]\nt_final = 3.0\n")
        with pytest.raises(ConfigError):
            RunConfig.load(p)

    def test_malformed_toml_rejected(self, tmp_path):
        p = write(tmp_path, "[simulation\nt1 = 3.0\n")
        with pytest.raises(ConfigError):
            RunConfig.load(p)

    def test_missing_file_raises(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            RunConfig.load(tmp_path / "absent.toml")
