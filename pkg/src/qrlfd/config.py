"""Experiment configuration: YAML sections mapped onto dataclasses.

Unknown keys, wrong types and inconsistent combinations are reported with the
file name and line number. ``resolve`` fills task-dependent defaults so the
written copy of a config reproduces a run exactly; ``config_hash`` is taken
over that resolved form.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

TASKS = ("bell", "binomial", "cat", "gkp_ecd", "cat_ecd")
ALGORITHMS = ("sacfd", "ppo", "sac_scratch", "ppo_scratch")
PULSE_TASKS = ("bell", "binomial", "cat")
ECD_TASKS = ("gkp_ecd", "cat_ecd")


class ConfigError(ValueError):
    def __init__(self, message: str, source: str = "<config>", line: int | None = None):
        self.source, self.line = source, line
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


@dataclass
class TwoQubitSection:
    omega1_mhz: float = 10.0
    omega2_mhz: float = 20.0
    g_max_mhz: float = 20.0
    drive_max_mhz: float = 50.0


@dataclass
class KerrSection:
    d_omega_c_mhz: float = 0.0
    d_omega_q_mhz: float = 0.0
    chi_mhz: float = -2.2
    e_c_mhz: float = 200.0
    k_self_mhz: float = -0.004
    chi_prime_mhz: float = 0.0
    n_q: int = 3
    n_c: int = 7
    cavity_drive_max_mhz: float = 10.0
    qubit_drive_max_mhz: float = 25.0


@dataclass
class PulseSection:
    n_segments: int | None = None  # bell 50, bosonic 40
    dt_ns: float | None = None  # bell 2, bosonic 8


@dataclass
class TargetSection:
    alpha: float = 2.0
    delta: float = 0.3


@dataclass
class FilterSection:
    kind: str = "none"  # none | moving_average | lowpass
    window: int = 3
    cutoff_mhz: float = 62.5


@dataclass
class BiasSection:
    level: float = 0.25
    mode: str = "deterministic_scale"
    seed: int = 0
    max_level: float | None = None  # pulse tasks 0.3, ECD 0.25
    filter: FilterSection = field(default_factory=FilterSection)


@dataclass
class RewardSection:
    mode: str = "exact"
    shots: int = 1000


@dataclass
class GrapeSection:
    learning_rate: float = 1e-3
    max_iters: int = 3000
    target_fidelity: float = 0.999
    stop_fidelity_window: float | None = None
    max_learning_rate: float = 1e3
    init_scale: float | None = None  # bell 0.01, bosonic 0.3


@dataclass
class EcdSection:
    depth: int | None = None  # cat 5, gkp 10
    n_cavity: int | None = None  # cat 30, gkp 40
    beta_max: float = 5.0
    restarts: int = 10
    max_iters: int = 500
    target_fidelity: float = 0.999
    init_scale: float = 0.3


@dataclass
class SacSection:
    gamma: float = 0.99
    alpha: float = 1e-4
    tau: float = 0.005
    mu: float = 0.25
    lambda_bc0: float = 2.0
    bc_decay_tau: float | None = None
    batch: int = 128
    lr: float = 1e-4
    critic_lr: float | None = 1e-3
    env_steps_per_update: int = 1
    updates_per_epoch: int = 1
    hidden: list = field(default_factory=lambda: [128, 128])
    init_log_std: float | None = None  # Bell -3, pulse bosonic tasks -5, ECD -6
    buffer_capacity: int = 100_000
    learning_starts: int = 0
    eval_interval: int = 50
    max_grad_norm: float | None = None
    reward_scale: float | None = None  # Bell 1, bosonic tasks 100


@dataclass
class PpoSection:
    clip: float = 0.2
    gamma: float = 0.99
    lambda_ent: float = 0.01
    rollout_size: int = 64
    epochs_per_update: int = 10
    minibatch: int = 64
    lr: float = 3e-4
    value_lr: float | None = None
    pretrain_iters: int = 500
    pretrain_batch: int = 64
    reward_norm: bool = True
    value_coef: float = 0.5
    target_kl: float | None = 0.05
    hidden: list = field(default_factory=lambda: [128, 128])
    init_log_std: float | None = None  # Bell -3, pulse bosonic tasks -5, ECD -6
    max_grad_norm: float | None = 0.5


@dataclass
class ExperimentConfig:
    task: str = "bell"
    algorithm: str = "sacfd"
    seeds: list = field(default_factory=lambda: [0])
    budget: int = 10_000
    stop_fidelity: float | None = None
    threshold: float = 0.995
    output_dir: str = "runs/experiment"
    wigner_extent: float = 4.0
    wigner_points: int = 61
    save_checkpoint: bool = True
    two_qubit: TwoQubitSection = field(default_factory=TwoQubitSection)
    kerr: KerrSection = field(default_factory=KerrSection)
    pulse: PulseSection = field(default_factory=PulseSection)
    target: TargetSection = field(default_factory=TargetSection)
    bias: BiasSection = field(default_factory=BiasSection)
    reward: RewardSection = field(default_factory=RewardSection)
    grape: GrapeSection = field(default_factory=GrapeSection)
    ecd: EcdSection = field(default_factory=EcdSection)
    sacfd: SacSection = field(default_factory=SacSection)
    ppo: PpoSection = field(default_factory=PpoSection)

    @property
    def uses_demo(self) -> bool:
        return self.algorithm in ("sacfd", "ppo")

    @property
    def is_ecd(self) -> bool:
        return self.task in ECD_TASKS


# --- conversion ------------------------------------------------------------------------

def _is_section(tp) -> bool:
    return isinstance(tp, type) and dataclasses.is_dataclass(tp)


def _field_types(cls) -> dict:
    import typing

    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in fields(cls)}


def _check_scalar(value, tp, path, source, line):
    import types
    import typing

    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        tp = next(a for a in args if a is not type(None))
        origin = typing.get_origin(tp)
    if value is None:
        raise ConfigError(f"{path} may not be null", source, line)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path} must be true/false, got {value!r}", source, line)
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path} must be an integer, got {value!r}", source, line)
        return value
    if tp is float:
        if isinstance(value, str):
            # YAML 1.1 reads exponent literals without a dot (1e-4) as strings
            try:
                value = float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path} must be a number, got {value!r}", source, line)
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path} must be a string, got {value!r}", source, line)
        return value
    if tp is list or origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{path} must be a list, got {value!r}", source, line)
        for v in value:
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"{path} entries must be integers, got {v!r}", source, line)
        return list(value)
    return value


def _build(cls, node, path: str, source: str, lines: dict):
    """Instantiate ``cls`` from a plain mapping, checking keys and types."""
    if node is None:
        node = {}
    line = lines.get(path)
    if not isinstance(node, dict):
        raise ConfigError(f"section {path or '<root>'} must be a mapping", source, line)
    types_ = _field_types(cls)
    kwargs = {}
    for key, value in node.items():
        sub = f"{path}.{key}" if path else str(key)
        if key not in types_:
            raise ConfigError(f"unknown key {key!r} in section {path or '<root>'}", source, lines.get(sub, line))
        tp = types_[key]
        if _is_section(tp):
            kwargs[key] = _build(tp, value, sub, source, lines)
        else:
            kwargs[key] = _check_scalar(value, tp, sub, source, lines.get(sub, line))
    return cls(**kwargs)


def _line_map(text: str) -> dict:
    """Dotted key path -> 1-based line number of its key in the YAML text."""
    out: dict[str, int] = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                sub = f"{path}.{k.value}" if path else str(k.value)
                out[sub] = k.start_mark.line + 1
                walk(v, sub)

    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return out
    walk(root, "")
    return out


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(e, 'problem', e)}", source,
                          mark.line + 1 if mark is not None else None) from None
    lines = _line_map(text)
    cfg = _build(ExperimentConfig, doc, "", source, lines)
    validate(cfg, source, lines)
    return cfg


def load_config(path, overrides: list[str] | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror}", str(path)) from None
    cfg = parse_config(text, str(path))
    if not overrides:
        return cfg
    doc = yaml.safe_load(text) or {}
    apply_overrides(doc, overrides)
    return parse_config(yaml.safe_dump(doc, sort_keys=False), f"{path} with overrides")


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """Apply ``dotted.key=value`` strings; values are parsed as YAML scalars."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value", "--override")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = doc
        for p in parts[:-1]:
            nxt = node.get(p)
            if nxt is None:
                nxt = node[p] = {}
            if not isinstance(nxt, dict):
                raise ConfigError(f"override {key!r}: {p!r} is not a section", "--override")
            node = nxt
        try:
            node[parts[-1]] = yaml.safe_load(raw)
        except yaml.YAMLError:
            raise ConfigError(f"override {key!r}: cannot parse value {raw!r}", "--override") from None
    return doc


def config_from_overrides(overrides: list[str] | None = None, base: dict | None = None) -> ExperimentConfig:
    doc = dict(base or {})
    apply_overrides(doc, overrides or [])
    return parse_config(yaml.safe_dump(doc, sort_keys=False), "--override")


def validate(cfg: ExperimentConfig, source: str = "<config>", lines: dict | None = None) -> None:
    lines = lines or {}

    def fail(msg, key):
        raise ConfigError(msg, source, lines.get(key))

    if cfg.task not in TASKS:
        fail(f"task must be one of {TASKS}, got {cfg.task!r}", "task")
    if cfg.algorithm not in ALGORITHMS:
        fail(f"algorithm must be one of {ALGORITHMS}, got {cfg.algorithm!r}", "algorithm")
    if not cfg.seeds:
        fail("seeds must list at least one seed", "seeds")
    if len(set(cfg.seeds)) != len(cfg.seeds):
        fail("seeds must be distinct", "seeds")
    if cfg.budget < 0:
        fail("budget must be non-negative", "budget")
    if cfg.stop_fidelity is not None and not 0 < cfg.stop_fidelity <= 1:
        fail("stop_fidelity must lie in (0, 1]", "stop_fidelity")
    if not 0 < cfg.threshold <= 1:
        fail("threshold must lie in (0, 1]", "threshold")
    if cfg.wigner_points < 2:
        fail("wigner_points must be at least 2", "wigner_points")
    b = cfg.bias
    if b.mode not in ("deterministic_scale", "random_scale"):
        fail(f"bias.mode must be deterministic_scale or random_scale, got {b.mode!r}", "bias.mode")
    max_level = b.max_level if b.max_level is not None else (0.25 if cfg.is_ecd else 0.3)
    if not 0 <= b.level <= max_level:
        fail(f"bias.level must lie in [0, {max_level}]", "bias.level")
    f = b.filter
    if f.kind not in ("none", "moving_average", "lowpass"):
        fail(f"bias.filter.kind must be none, moving_average or lowpass, got {f.kind!r}", "bias.filter.kind")
    if f.kind != "none" and cfg.is_ecd:
        fail("pulse filters do not apply to gate-level (ECD) tasks", "bias.filter.kind")
    if f.kind == "moving_average" and (f.window < 1 or f.window % 2 == 0):
        fail("bias.filter.window must be a positive odd integer", "bias.filter.window")
    if f.kind == "lowpass" and f.cutoff_mhz <= 0:
        fail("bias.filter.cutoff_mhz must be positive", "bias.filter.cutoff_mhz")
    if cfg.reward.mode not in ("exact", "povm"):
        fail(f"reward.mode must be exact or povm, got {cfg.reward.mode!r}", "reward.mode")
    if cfg.reward.shots < 1:
        fail("reward.shots must be at least 1", "reward.shots")
    if cfg.pulse.n_segments is not None and cfg.pulse.n_segments < 1:
        fail("pulse.n_segments must be at least 1", "pulse.n_segments")
    if cfg.pulse.dt_ns is not None and cfg.pulse.dt_ns <= 0:
        fail("pulse.dt_ns must be positive", "pulse.dt_ns")
    if cfg.task in ("binomial", "cat") and cfg.kerr.n_c < 5:
        fail("kerr.n_c must be at least 5 for bosonic targets", "kerr.n_c")
    if cfg.kerr.n_q < 2:
        fail("kerr.n_q must be at least 2", "kerr.n_q")
    if cfg.ecd.depth is not None and cfg.ecd.depth < 1:
        fail("ecd.depth must be at least 1", "ecd.depth")
    if cfg.ecd.n_cavity is not None and cfg.ecd.n_cavity < 2:
        fail("ecd.n_cavity must be at least 2", "ecd.n_cavity")
    if cfg.sacfd.reward_scale is not None and cfg.sacfd.reward_scale <= 0:
        fail("sacfd.reward_scale must be positive", "sacfd.reward_scale")
    if not 0 <= cfg.sacfd.mu <= 1:
        fail("sacfd.mu must lie in [0, 1]", "sacfd.mu")
    if cfg.sacfd.lambda_bc0 < 0:
        fail("sacfd.lambda_bc0 must be non-negative", "sacfd.lambda_bc0")
    if not 0 < cfg.ppo.clip < 1:
        fail("ppo.clip must lie in (0, 1)", "ppo.clip")
    for sec in ("sacfd", "ppo"):
        if not getattr(cfg, sec).hidden or min(getattr(cfg, sec).hidden) < 1:
            fail(f"{sec}.hidden must list positive layer widths", f"{sec}.hidden")
    if cfg.grape.max_iters < 0:
        fail("grape.max_iters must be non-negative", "grape.max_iters")


def resolve(cfg: ExperimentConfig) -> ExperimentConfig:
    """Copy with every task-dependent ``null`` default filled in."""
    cfg = dataclasses.replace(cfg)
    bell = cfg.task == "bell"
    ecd_cat = cfg.task == "cat_ecd"
    cfg.pulse = dataclasses.replace(
        cfg.pulse,
        n_segments=cfg.pulse.n_segments if cfg.pulse.n_segments is not None else (50 if bell else 40),
        dt_ns=cfg.pulse.dt_ns if cfg.pulse.dt_ns is not None else (2.0 if bell else 8.0),
    )
    cfg.bias = dataclasses.replace(
        cfg.bias, max_level=cfg.bias.max_level if cfg.bias.max_level is not None else (0.25 if cfg.is_ecd else 0.3))
    cfg.ecd = dataclasses.replace(
        cfg.ecd,
        depth=cfg.ecd.depth if cfg.ecd.depth is not None else (5 if ecd_cat else 10),
        n_cavity=cfg.ecd.n_cavity if cfg.ecd.n_cavity is not None else (30 if ecd_cat else 40),
    )
    cfg.grape = dataclasses.replace(
        cfg.grape, init_scale=cfg.grape.init_scale if cfg.grape.init_scale is not None else (0.01 if bell else 0.3))
    std = -3.0 if bell else (-6.0 if cfg.is_ecd else -5.0)
    cfg.sacfd = dataclasses.replace(
        cfg.sacfd,
        init_log_std=cfg.sacfd.init_log_std if cfg.sacfd.init_log_std is not None else std,
        reward_scale=cfg.sacfd.reward_scale if cfg.sacfd.reward_scale is not None else (1.0 if bell else 100.0),
        bc_decay_tau=cfg.sacfd.bc_decay_tau if cfg.sacfd.bc_decay_tau is not None
        else 0.2 * (cfg.budget if cfg.budget else 10_000),
    )
    cfg.ppo = dataclasses.replace(
        cfg.ppo, init_log_std=cfg.ppo.init_log_std if cfg.ppo.init_log_std is not None else std)
    return cfg


def to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def to_yaml(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False, default_flow_style=None)


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(to_dict(resolve(cfg)), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def default_config(task: str = "bell", algorithm: str = "sacfd") -> ExperimentConfig:
    cfg = ExperimentConfig(task=task, algorithm=algorithm)
    validate(cfg)
    return cfg
