import pytest

from gbart.config import SamplerConfig, parse_config, read_config_file
from gbart.errors import ValidationError


class TestSamplerConfig:
    def test_defaults(self):
        cfg = SamplerConfig()
        assert (cfg.gamma, cfg.beta, cfg.num_trees) == (0.95, 2.0, 50)
        assert (cfg.p_birth, cfg.p_death, cfg.p_change) == (0.25, 0.25, 0.5)

    @pytest.mark.parametrize("kw", [
        dict(iterations=10, burn_in=10),
        dict(burn_in=-1),
        dict(thin=0),
        dict(chains=0),
        dict(iterations=11, burn_in=0, thin=2),
        dict(k=0.0),
        dict(sampler="gibbs"),
        dict(p_birth=0.0, p_death=0.0),
    ])
    def test_invalid(self, kw):
        with pytest.raises(ValidationError):
            SamplerConfig(**kw)

    @pytest.mark.parametrize("it, burn, thin, kept", [(2000, 1000, 1, 1000), (10, 4, 3, 2), (5, 4, 1, 1)])
    def test_num_kept(self, it, burn, thin, kept):
        assert SamplerConfig(iterations=it, burn_in=burn, thin=thin).num_kept == kept

    def test_to_dict_flattens_family_options(self):
        d = SamplerConfig(model="hetvar", family_options={"link": "exp"}).to_dict()
        assert d["link"] == "exp" and "family_options" not in d


class TestParsing:
    def test_types(self):
        cfg = parse_config({"num_trees": "7", "k": "0.1", "update_sigma_mu": "false", "model": "hetvar",
                            "variance": "m"})
        assert cfg.num_trees == 7 and cfg.k == 0.1 and cfg.update_sigma_mu is False
        assert cfg.family_options == {"variance": "m"}

    @pytest.mark.parametrize("pairs", [{"bogus": "1"}, {"num_trees": "a"}, {"update_nuisance": "maybe"}])
    def test_errors(self, pairs):
        with pytest.raises(ValidationError):
            parse_config(pairs)

    def test_file(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("# comment\nmodel = logistic\n\nnum_trees=20  # trailing\n")
        assert read_config_file(path) == {"model": "logistic", "num_trees": "20"}
        path.write_text("num_trees 20\n")
        with pytest.raises(ValidationError, match=":1:"):
            read_config_file(path)

    def test_round_trip(self):
        cfg = SamplerConfig(model="weibull", k=0.1, seed=9, update_split_probs=False)
        pairs = {k: str(v) for k, v in cfg.to_dict().items()}
        assert parse_config(pairs) == cfg
