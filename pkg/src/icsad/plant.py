"""Discrete-time multi-stage tank plant with a PLC-style controller.

Stage ``k`` (numbered from 1 in signal names) has a level sensor
``LIT{k}01``, an inflow meter ``FIT{k}01``, an outflow meter ``FIT{k}02``,
an inlet valve ``MV{k}01`` and an outlet pump ``P{k}01`` feeding the next
stage. Stage 1 draws from an unlimited source and the last pump discharges
freely. A pump whose downstream inlet valve is shut recirculates, so its
tank neither gains nor loses water through it. Valves take
``valve_travel_s`` seconds to move between shut and fully open; the
recorded ``MV`` value is the commanded state.

Each tick:
    1. the controller reads the levels reported on the previous tick and
       commands valves and pumps
    2. forced actuator states override the controller (except interlocked ones)
    3. valves travel toward their command; flows follow from valve
       openings, pump states and available water
    4. reported values = true values + noise, unless spoofed
    5. the record is emitted
    6. levels advance by inflow - outflow and are clamped to [0, capacity]

Noise for continuous signal ``j`` of stage ``k`` at tick ``t`` is normal
draw ``(t * stages + k) * 3 + j`` of the seeded counter stream, so attacks
never shift the noise seen by later records.
"""
import json
from dataclasses import asdict, dataclass, field
from importlib import resources

import numpy as np

from .data import AttackLabel, RawDataset
from .errors import ConfigError
from .prng import normals

ATTACK_KINDS = ("stuck_sensor", "ramp_sensor", "force_actuator")
# per-stage signal kinds, in column order, with their name prefix and suffix
SIGNALS = (("LIT", "LIT", "01"), ("FIT_IN", "FIT", "01"), ("FIT_OUT", "FIT", "02"), ("MV", "MV", "01"), ("P", "P", "01"))
SENSOR_KINDS = ("LIT", "FIT_IN", "FIT_OUT")


def signal_name(kind, stage):
    for key, prefix, suffix in SIGNALS:
        if key == kind:
            return f"{prefix}{stage + 1}{suffix}"
    raise KeyError(kind)


@dataclass
class StageConfig:
    capacity: float = 1000.0
    low: float = 200.0
    high: float = 800.0
    low_low: float = 100.0  # pump dry-run stop
    outflow_rate: float = 20.0
    initial_level: float = 500.0

    def validate(self, k):
        if not self.capacity > self.high > self.low > self.low_low > 0:
            raise ConfigError(f"stage {k + 1}: need capacity > high > low > low_low > 0")
        if self.outflow_rate <= 0:
            raise ConfigError(f"stage {k + 1}: outflow_rate must be > 0")
        if not 0 <= self.initial_level <= self.capacity:
            raise ConfigError(f"stage {k + 1}: initial_level outside [0, capacity]")


def _default_stages():
    return [StageConfig(outflow_rate=20.0), StageConfig(outflow_rate=12.0), StageConfig(outflow_rate=6.0)]


@dataclass
class PlantConfig:
    stages: list = field(default_factory=_default_stages)
    source_inflow: float = 30.0
    valve_travel_s: int = 5
    noise_std: float = 0.002  # fraction of each sensor's full scale
    flow_full_scale: float = 50.0
    interlocked: list = field(default_factory=lambda: ["MV301", "P301"])
    seed: int = 0
    warmup_seconds: int = 600

    def __post_init__(self):
        self.stages = [s if isinstance(s, StageConfig) else StageConfig(**s) for s in self.stages]
        if not self.stages:
            raise ConfigError("plant needs at least one stage")
        for k, s in enumerate(self.stages):
            s.validate(k)
        if self.source_inflow <= 0 or self.flow_full_scale <= 0:
            raise ConfigError("source_inflow and flow_full_scale must be > 0")
        if self.valve_travel_s < 1:
            raise ConfigError("valve_travel_s must be >= 1")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")
        if self.warmup_seconds < 0:
            raise ConfigError("warmup_seconds must be >= 0")
        unknown = [a for a in self.interlocked if a not in self.actuator_names()]
        if unknown:
            raise ConfigError(f"interlocked actuators not in plant: {unknown}")

    @property
    def stage_count(self):
        return len(self.stages)

    def stage_kinds(self, k):
        # the last pump discharges freely and has no outflow meter
        return [key for key, _, _ in SIGNALS if not (key == "FIT_OUT" and k == self.stage_count - 1)]

    def stage_features(self, k):
        return [signal_name(key, k) for key in self.stage_kinds(k)]

    def feature_names(self):
        return [name for k in range(self.stage_count) for name in self.stage_features(k)]

    def actuator_names(self):
        return [signal_name(kind, k) for k in range(self.stage_count) for kind in ("MV", "P")]

    def stage_groups(self):
        return {f"P{k + 1}": self.stage_features(k) for k in range(self.stage_count)}

    def locate(self, name):
        """``(stage index, signal kind)`` of a signal name."""
        for k in range(self.stage_count):
            for key, _, _ in SIGNALS:
                if signal_name(key, k) == name:
                    return k, key
        raise ConfigError(f"unknown signal {name!r}")

    def to_dict(self):
        return asdict(self)


@dataclass
class AttackScenario:
    attack_id: int
    start: int
    end: int
    kind: str
    target: str
    value: float
    expected_impact_achieved: bool = True
    description: str = ""

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ConfigError(f"attack {self.attack_id}: unknown kind {self.kind!r}")
        if not self.end > self.start:
            raise ConfigError(f"attack {self.attack_id}: end must be after start")

    def to_dict(self):
        return asdict(self)


@dataclass
class SimulationResult:
    data: RawDataset
    attacks: list
    true_levels: np.ndarray  # [ticks, stages], level at the start of each tick
    inflow: np.ndarray  # [ticks, stages], volume entering during the tick
    outflow: np.ndarray  # [ticks, stages], volume leaving through the pump during the tick
    events: list  # (tick, stage, "overflow" | "dry_run")


def check_scenarios(config, duration_s, scenarios):
    by_target = {}
    for sc in scenarios:
        _, kind = config.locate(sc.target)
        if (sc.kind == "force_actuator") == (kind in SENSOR_KINDS):
            raise ConfigError(f"attack {sc.attack_id}: {sc.kind} cannot target {sc.target}")
        if sc.start < config.warmup_seconds:
            raise ConfigError(f"attack {sc.attack_id} starts at {sc.start}, inside the {config.warmup_seconds} s warm-up")
        if sc.end > duration_s:
            raise ConfigError(f"attack {sc.attack_id} ends at {sc.end}, after the simulation ({duration_s} s)")
        by_target.setdefault(sc.target, []).append(sc)
    for target, group in by_target.items():
        group = sorted(group, key=lambda s: s.start)
        for a, b in zip(group, group[1:]):
            if b.start < a.end:
                raise ConfigError(f"attacks {a.attack_id} and {b.attack_id} overlap on {target}")


def attack_table(config, scenarios):
    """One row per attack id, spanning all of its scenarios."""
    grouped = {}
    for sc in scenarios:
        grouped.setdefault(sc.attack_id, []).append(sc)
    table = []
    for aid in sorted(grouped):
        g = grouped[aid]
        tags = sorted({f"P{config.locate(s.target)[0] + 1}" for s in g})
        desc = g[0].description or "; ".join(f"{s.kind} {s.target}={s.value:g}" for s in g)
        table.append(AttackLabel(aid, min(s.start for s in g), max(s.end for s in g), tags, desc,
                                 all(s.expected_impact_achieved for s in g)))
    return table


def run_plant(config, duration_s, scenarios=()):
    """Simulate ``duration_s`` one-second ticks; returns a :class:`SimulationResult`."""
    if duration_s < 1:
        raise ConfigError(f"duration must be >= 1 s, got {duration_s}")
    scenarios = list(scenarios)
    check_scenarios(config, duration_s, scenarios)
    n_stage = config.stage_count
    stages = config.stages
    noise = normals(config.seed, 0, duration_s * n_stage * 3).reshape(duration_s, n_stage, 3)
    noise[..., 0] *= np.array([s.capacity for s in stages])[None, :] * config.noise_std
    noise[..., 1:] *= config.flow_full_scale * config.noise_std

    spoof, force = {}, {}
    for sc in scenarios:
        key = config.locate(sc.target)
        if sc.kind != "force_actuator":
            spoof.setdefault(key, []).append(sc)
        elif sc.target not in config.interlocked:
            force.setdefault(key, []).append(sc)

    def active(table, key, t):
        for sc in table.get(key, ()):
            if sc.start <= t < sc.end:
                return sc
        return None

    def reported(key, true_value, t, noise_value):
        sc = active(spoof, key, t)
        if sc is None:
            return true_value + noise_value
        if sc.kind == "stuck_sensor":
            return sc.value
        return true_value + noise_value + sc.value * (t - sc.start + 1)

    step = 1.0 / config.valve_travel_s
    level = np.array([s.initial_level for s in stages], dtype=np.float64)
    valve = [False] * n_stage
    opening = [0.0] * n_stage
    pump = [False] * n_stage
    columns = [(k, kind) for k in range(n_stage) for kind in config.stage_kinds(k)]
    values = np.empty((duration_s, len(columns)))
    levels_out = np.empty((duration_s, n_stage))
    inflow_out = np.empty((duration_s, n_stage))
    outflow_out = np.empty((duration_s, n_stage))
    events = []
    last_read = [s.initial_level for s in stages]
    for t in range(duration_s):
        for k, s in enumerate(stages):
            if last_read[k] < s.low:
                valve[k] = True
            elif last_read[k] > s.high:
                valve[k] = False
            if last_read[k] < s.low_low:
                pump[k] = False
            elif last_read[k] > s.low:
                pump[k] = True
            sc = active(force, (k, "MV"), t)
            if sc is not None:
                valve[k] = bool(sc.value)
            sc = active(force, (k, "P"), t)
            if sc is not None:
                pump[k] = bool(sc.value)
            target = 1.0 if valve[k] else 0.0
            opening[k] = min(opening[k] + step, target) if target > opening[k] else max(opening[k] - step, target)

        inflow = np.zeros(n_stage)
        out = np.zeros(n_stage)
        for k, s in enumerate(stages):
            accept = opening[k + 1] if k + 1 < n_stage else 1.0
            if pump[k]:
                out[k] = min(s.outflow_rate * accept, level[k])
            inflow[k] = config.source_inflow * opening[0] if k == 0 else out[k - 1]

        now_read = [reported((k, "LIT"), level[k], t, noise[t, k, 0]) for k in range(n_stage)]
        current = {"LIT": now_read, "FIT_IN": inflow, "FIT_OUT": out,
                   "MV": [float(v) for v in valve], "P": [float(p) for p in pump]}
        row = values[t]
        for j, (k, kind) in enumerate(columns):
            if kind == "FIT_IN":
                row[j] = reported((k, kind), inflow[k], t, noise[t, k, 1])
            elif kind == "FIT_OUT":
                row[j] = reported((k, kind), out[k], t, noise[t, k, 2])
            else:
                row[j] = current[kind][k]
        levels_out[t], inflow_out[t], outflow_out[t] = level, inflow, out
        last_read = now_read

        level = level + inflow - out
        for k, s in enumerate(stages):
            if level[k] > s.capacity:
                events.append((t, k, "overflow"))
                level[k] = s.capacity
            elif pump[k] and out[k] > 0 and level[k] <= 0.0:
                events.append((t, k, "dry_run"))
                level[k] = 0.0

    timestamps = np.arange(duration_s, dtype=np.int64)
    labels = np.zeros(duration_s, dtype=np.int8)
    for sc in scenarios:
        labels[sc.start : sc.end] = 1
    table = attack_table(config, scenarios)
    data = RawDataset(timestamps, values, config.feature_names(), labels, table)
    return SimulationResult(data, table, levels_out, inflow_out, outflow_out, events)


def simulate(config, duration_s, scenarios=()):
    """Labeled 1 Hz recording plus its attack table."""
    result = run_plant(config, duration_s, scenarios)
    return result.data, result.attacks


# ----------------------------------------------------------------- benchmark

def load_scenario_suite(path=None):
    """``(suite dict, scenarios)`` from a JSON suite file (the bundled one by default)."""
    if path is None:
        text = resources.files("icsad").joinpath("resources/benchmark_scenarios.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    suite = json.loads(text)
    unknown = set(suite) - {"train_seconds", "test_seconds", "plant", "scenarios"}
    if unknown:
        raise ConfigError(f"unknown scenario suite keys {sorted(unknown)}")
    return suite, [AttackScenario(**s) for s in suite["scenarios"]]


@dataclass
class Benchmark:
    train: RawDataset
    test: RawDataset
    attacks: list
    config: PlantConfig


def standard_benchmark(seed=0, plant=None, suite_path=None):
    """Attack-free training recording and attacked test recording.

    Both keep their warm-up so callers trim it with the configured count;
    the two recordings use independent noise streams derived from ``seed``.
    ``plant`` overrides the suite's plant settings (its seed is ignored).
    """
    suite, scenarios = load_scenario_suite(suite_path)
    base = plant.to_dict() if plant is not None else suite.get("plant", {})
    train_cfg = PlantConfig(**{**base, "seed": 2 * seed})
    test_cfg = PlantConfig(**{**base, "seed": 2 * seed + 1})
    train, _ = simulate(train_cfg, int(suite["train_seconds"]), [])
    test, attacks = simulate(test_cfg, int(suite["test_seconds"]), scenarios)
    return Benchmark(train, test, attacks, train_cfg)
