import math

import pytest

from tfac.config import PRESETS, ConfigError, RunConfig, parse_config_text, parse_value


def test_parse_text():
    vals = parse_config_text(
        """
        # comment
        alpha = 0.7   # trailing
        epsilon2 = 1/(8*pi^2)
        domain = -pi, pi, -pi, pi
        Ns = 64, 128
        scheme = stabilized
        adapt.reject = off
        """
    )
    assert vals["alpha"] == 0.7
    assert vals["epsilon2"] == pytest.approx(1 / (8 * math.pi**2))
    assert vals["domain"] == [-math.pi, math.pi, -math.pi, math.pi]
    assert vals["Ns"] == [64, 128]
    assert vals["adapt.reject"] is False


@pytest.mark.parametrize(
    "text",
    ["alpha 0.7", "bogus = 1", "scheme = euler", "alpha = __import__('os')", "mesh.N0 = 1.5"],
)
def test_parse_errors(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_resolve_precedence_and_header():
    cfg = RunConfig.resolve("convergence", {"alpha": 0.5}, {"alpha": 0.6, "experiment": "table2"})
    assert cfg["alpha"] == 0.6 and cfg["sigma"] == 0.4 and cfg["experiment"] == "table2"
    head = cfg.header()
    assert head.startswith("# command = convergence\n")
    assert "# alpha = 0.6\n" in head and "# mesh.seed = 42\n" in head
    assert all(line.startswith("# ") for line in head.splitlines())


def test_resolve_reports_missing_and_unknown():
    with pytest.raises(ConfigError, match="soe.dt"):
        RunConfig.resolve("soe-table", {}, {"experiment": "table1"})
    with pytest.raises(ConfigError, match="unknown experiment"):
        RunConfig.resolve("bubbles", {}, {"experiment": "nope"})
    with pytest.raises(ConfigError):
        parse_value("nonsense.key", "1")


def test_presets_carry_published_parameters():
    assert PRESETS["table1"]["gammas"] == [1.25, 1.5, 2.0]
    assert PRESETS["table2"]["gammas"] == [2.0, 3.0, 4.0]
    assert PRESETS["table3"]["gammas"] == [1.0, 1.25, 2.0]
    assert PRESETS["table4"]["gammas"] == [2.0, 2.5, 3.0]
    b = PRESETS["bubbles"]
    assert (b["grid.M"], b["mesh.T0"], b["mesh.gamma"], b["T"]) == (128, 0.1, 3.0, 100.0)
    assert (b["adapt.tol"], b["adapt.beta"], b["adapt.tau_min"], b["adapt.tau_max"]) == (0.15, 200.0, 1e-3, 0.1)
    s = PRESETS["bubbles-stabilized"]
    assert (s["S"], s["adapt.tol"], s["adapt.tau_max"]) == (0.1, 1.5, 1.0)
    assert b["epsilon2"] == pytest.approx(0.01)
