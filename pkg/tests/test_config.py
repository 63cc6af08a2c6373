import pytest

from mga.config import RunConfig, dump_config, load_config, parse_config, parse_value
from mga.errors import ConfigurationError


def test_defaults_validate():
    cfg = RunConfig().validate()
    assert cfg.seeds == list(range(10)) and cfg.n_way == 5 and cfg.k_shot == 1


def test_parse_overrides_and_comments():
    cfg = parse_config(
        """
        # small run
        n_way = 3
        seeds = 0..2, 7   # range plus a single seed
        smga = off
        lr = 5e-3
        cross_variant = frameall
        """
    )
    assert cfg.n_way == 3 and cfg.seeds == [0, 1, 2, 7] and cfg.smga is False
    assert cfg.lr == 5e-3 and cfg.cross_variant == "frameall"


def test_dump_then_parse_round_trips():
    cfg = RunConfig(seeds=[3, 5], cmga=False, lr=0.125, mode="adapter", dim=32)
    assert parse_config(dump_config(cfg)) == cfg


def test_unknown_key_names_the_key():
    with pytest.raises(ConfigurationError, match="n_wya"):
        parse_config("n_wya = 5")


def test_malformed_value_names_the_key():
    with pytest.raises(ConfigurationError, match="k_shot"):
        parse_value("k_shot", "one")
    with pytest.raises(ConfigurationError, match="smga"):
        parse_value("smga", "maybe")


def test_line_without_assignment_reports_line_number():
    with pytest.raises(ConfigurationError, match="line 2"):
        parse_config("n_way = 5\nk_shot 1")


@pytest.mark.parametrize(
    "changes, key",
    [
        ({"r1": 3}, "r1"),
        ({"r2": 5}, "r2"),
        ({"frames": 1}, "frames"),
        ({"n_way": 7}, "n_way"),
        ({"mode": "lora"}, "mode"),
        ({"cross_variant": "diag"}, "cross_variant"),
        ({"grid": 9, "patch": 2}, "grid"),
        ({"mode": "adapter", "dim": 16, "adapter_reduction": 3}, "adapter_reduction"),
        ({"mode": "adapter", "dim": 16, "adapter_reduction": 4, "r1": 8}, "r1"),
        ({"mode": "adapter", "blocks": 1}, "blocks"),
        ({"seeds": []}, "seeds"),
        ({"instances_per_class": 1}, "instances_per_class"),
        ({"lr": 0.0}, "lr"),
    ],
)
def test_invalid_settings_name_their_field(changes, key):
    with pytest.raises(ConfigurationError, match=f"^{key}:"):
        RunConfig().replace(**changes)


def test_missing_file_is_configuration_error(tmp_path):
    with pytest.raises(ConfigurationError, match="not found"):
        load_config(tmp_path / "nope.cfg")
