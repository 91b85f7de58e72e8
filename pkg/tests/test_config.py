import pytest
from hypothesis import given
from hypothesis import strategies as st

from qrlfd.config import (
    ALGORITHMS,
    TASKS,
    ConfigError,
    config_from_overrides,
    config_hash,
    default_config,
    load_config,
    parse_config,
    resolve,
    to_yaml,
)

GOOD = """\
task: bell
algorithm: sacfd
seeds: [0, 1]
budget: 500
bias:
  level: 0.25
  filter:
    kind: moving_average
    window: 3
sacfd:
  hidden: [32, 32]
"""


def test_parse_good_config():
    cfg = parse_config(GOOD)
    assert cfg.seeds == [0, 1] and cfg.budget == 500
    assert cfg.bias.filter.window == 3 and cfg.sacfd.hidden == [32, 32]


@pytest.mark.parametrize(
    "text, line, fragment",
    [
        ("task: bell\nbudget: -1\n", 2, "non-negative"),
        ("task: bell\nbias:\n  level: 0.5\n", 3, "bias.level"),
        ("task: bell\nbias:\n  filter:\n    kind: moving_average\n    window: 4\n", 5, "odd"),
        ("task: bell\nfoo: 1\n", 2, "unknown key"),
        ("task: bell\nsacfd:\n  batch: many\n", 3, "integer"),
        ("task: bell\nsacfd:\n  reward_scale: 0\n", 3, "reward_scale"),
        ("task: teleport\n", 1, "task must be"),
        ("task: bell\nseeds: [1, 1]\n", 2, "distinct"),
        ("task: bell\nreward:\n  mode: tomography\n", 3, "reward.mode"),
        ("task: [bell\n", 2, "YAML syntax"),
    ],
)
def test_config_errors_carry_line_numbers(text, line, fragment):
    with pytest.raises(ConfigError) as info:
        parse_config(text, "x.yaml")
    assert info.value.line == line
    assert str(info.value).startswith(f"x.yaml:{line}: ")
    assert fragment in str(info.value)


def test_filter_rejected_for_ecd_tasks():
    with pytest.raises(ConfigError, match="ECD"):
        parse_config("task: cat_ecd\nbias:\n  filter:\n    kind: lowpass\n")


def test_load_config_with_overrides(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(GOOD)
    cfg = load_config(path, ["budget=7", "bias.filter.kind=none", "sacfd.lr=3e-4"])
    assert cfg.budget == 7 and cfg.bias.filter.kind == "none" and cfg.sacfd.lr == 3e-4
    with pytest.raises(ConfigError, match="key=value"):
        load_config(path, ["budget"])
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.yaml")


def test_resolve_fills_task_defaults():
    bell = resolve(default_config("bell"))
    assert (bell.pulse.n_segments, bell.pulse.dt_ns, bell.bias.max_level) == (50, 2.0, 0.3)
    assert bell.ppo.init_log_std == -3.0
    binom = resolve(default_config("binomial", "ppo"))
    assert (bell.sacfd.reward_scale, binom.sacfd.reward_scale) == (1.0, 100.0)
    assert (binom.pulse.n_segments, binom.pulse.dt_ns) == (40, 8.0)
    assert binom.ppo.init_log_std == -5.0
    cat = resolve(default_config("cat_ecd"))
    assert (cat.ecd.depth, cat.ecd.n_cavity, cat.bias.max_level) == (5, 30, 0.25)
    assert cat.ppo.init_log_std == -6.0
    gkp = resolve(default_config("gkp_ecd"))
    assert (gkp.ecd.depth, gkp.ecd.n_cavity) == (10, 40)
    explicit = resolve(config_from_overrides(["pulse.n_segments=9"]))
    assert explicit.pulse.n_segments == 9


def test_resolved_yaml_reparses_to_same_hash():
    cfg = config_from_overrides(["budget=123", "bias.level=0.1"], {"task": "cat", "algorithm": "ppo"})
    again = parse_config(to_yaml(resolve(cfg)))
    assert config_hash(again) == config_hash(cfg)
    assert len(config_hash(cfg)) == 16


@given(st.sampled_from(TASKS), st.sampled_from(ALGORITHMS), st.integers(0, 10**6))
def test_hash_sensitive_to_budget(task, algorithm, budget):
    a = config_from_overrides([f"budget={budget}"], {"task": task, "algorithm": algorithm})
    b = config_from_overrides([f"budget={budget + 1}"], {"task": task, "algorithm": algorithm})
    assert config_hash(a) != config_hash(b)
    assert config_hash(a) == config_hash(resolve(a))
