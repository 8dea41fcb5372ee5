"""Experiment driver: run configurations, scenario sweeps over request load,
network size and channel count, aggregation over seeds and the emitted
CSV, summary and plots."""
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd
import yaml
from scipy import stats
from tqdm.auto import tqdm

from .agents import AgentConfig
from .allocate import Problem
from .environment import realize
from .model import generate_instance, load_instance
from .oracle import OracleLimits, SizeLimitError, oracle_solve
from .orchestrator import EpisodeConfig, PolicyKind, run_episode, write_trace
from .plots import plot_metrics
from .utils import export

COLUMNS = [
    "scenario_point",
    "policy",
    "acceptance_mean",
    "acceptance_std",
    "energy_mean",
    "energy_std",
    "latency_mean",
    "latency_std",
    "oracle_ratio",
]

SWEEP_KEYS = {
    "single": None,
    "requests-sweep": "requests_per_frame",
    "network-sweep": "nodes",
    "channels-sweep": "channels",
}

PRESETS = {
    "requests-sweep": (2, 4, 6, 8),
    "network-sweep": (6, 8, 10),
    "channels-sweep": (2, 4, 6, 8),
}

XLABELS = {
    "single": "Scenario point",
    "requests-sweep": "New requests per frame",
    "network-sweep": "Network nodes",
    "channels-sweep": "Channels",
}


@export
class ConfigError(ValueError):
    """A run configuration is malformed or inconsistent."""

    pass


@export
@dataclass
class RunConfig:
    instance: Optional[str] = None
    generator: Dict = field(default_factory=dict)
    policies: Tuple[str, ...] = ("perfect", "random")
    seeds: Tuple[int, ...] = (0,)
    horizon: int = 200
    scenario: str = "single"
    sweep: Tuple[float, ...] = ()
    out: str = "runs"
    agent: AgentConfig = field(default_factory=AgentConfig)
    phase_fraction: float = 0.25
    alpha: float = 0.001
    chi: float = 0.5
    kappa: float = 0.8
    eval_fraction: float = 1.0
    arrival_rate: Optional[float] = None
    oracle_limits: Dict = field(default_factory=dict)
    save_traces: bool = False
    progress: bool = True

    def __post_init__(self):
        if self.scenario not in SWEEP_KEYS:
            raise ConfigError(f"unknown scenario {self.scenario}, pick one of {sorted(SWEEP_KEYS)}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.horizon < 0:
            raise ConfigError(f"horizon must be >= 0, got {self.horizon}")
        for p in self.policies:
            if p not in {k.value for k in PolicyKind}:
                raise ConfigError(f"unknown policy {p}")
        if self.scenario != "single" and not self.sweep:
            self.sweep = PRESETS[self.scenario]
        if any(b <= a for a, b in zip(self.sweep, self.sweep[1:])):
            raise ConfigError(f"sweep values must be strictly increasing, got {list(self.sweep)}")
        if self.scenario == "requests-sweep" and any(v < 0 or v != int(v) for v in self.sweep):
            raise ConfigError(f"request counts must be whole and non-negative, got {list(self.sweep)}")
        if self.instance is not None and self.scenario in ("network-sweep", "channels-sweep"):
            raise ConfigError(f"{self.scenario} needs a generator block, not an instance file")
        if set(self.oracle_limits) - {f.name for f in fields(OracleLimits)}:
            raise ConfigError(f"unknown oracle limits {sorted(self.oracle_limits)}")

    @property
    def points(self):
        return tuple(self.sweep) if self.scenario != "single" else (0,)

    def requests_at(self, point):
        """Exact new requests per frame at ``point``; None outside the requests
        sweep, where arrivals stay Poisson."""
        return int(point) if self.scenario == "requests-sweep" else None

    def episode(self, policy, seed, point=0):
        return EpisodeConfig(
            policy=policy,
            frames=self.horizon,
            seed=seed,
            agent=self.agent,
            phase_fraction=self.phase_fraction,
            alpha=self.alpha,
            chi=self.chi,
            kappa=self.kappa,
            arrival_rate=self.arrival_rate,
            requests_per_frame=self.requests_at(point),
            eval_fraction=self.eval_fraction,
        )

    def to_dict(self):
        doc = asdict(self)
        doc["agent"] = self.agent.to_dict()
        for key in ("policies", "seeds", "sweep"):
            doc[key] = list(doc[key])
        return doc

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc or {})
        unknown = set(doc) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown run settings {sorted(unknown)}")
        try:
            doc["agent"] = AgentConfig.from_dict(doc.get("agent"))
        except ValueError as e:
            raise ConfigError(str(e)) from e
        for key in ("policies", "seeds", "sweep"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return cls(**doc)


@export
def load_config(path, **overrides):
    """Reads a YAML run configuration; ``overrides`` replace top-level keys."""
    with open(path) as f:
        doc = yaml.safe_load(f)
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: run configuration must be a mapping")
    doc.update({k: v for k, v in overrides.items() if v is not None})
    if doc.get("instance") is not None and not os.path.isabs(doc["instance"]):
        doc["instance"] = os.path.join(os.path.dirname(os.path.abspath(path)), doc["instance"])
    return RunConfig.from_dict(doc)


@export
@dataclass
class MetricsRow:
    scenario_point: float
    policy: str
    acceptance_mean: float
    acceptance_std: float
    energy_mean: float
    energy_std: float
    latency_mean: float
    latency_std: float
    oracle_ratio: float = float("nan")


@export
@dataclass
class RunRecord:
    point: float
    policy: str
    seed: int
    metrics: Dict[str, float]
    oracle_objective: Optional[float] = None


@export
def build_instance(config, point):
    """The instance of one sweep point."""
    key = SWEEP_KEYS[config.scenario]
    if config.instance is not None:
        return load_instance(config.instance)
    params = dict(config.generator)
    params.setdefault("frames", max(config.horizon, 1))
    if key in ("nodes", "channels"):
        params[key] = int(point)
    try:
        return generate_instance(**params)
    except TypeError as e:
        raise ConfigError(f"bad generator block: {e}") from e


def _static_fit(instance, horizon, limits):
    return (
        len(instance.topology.nodes) <= limits.max_nodes
        and len(instance.topology.uavs) <= limits.max_uavs
        and instance.grid.n_areas <= limits.max_areas
        and len(instance.channels) <= limits.max_channels
        and instance.time.slots_per_frame <= limits.max_slots
        and horizon <= limits.max_frames
        and len(instance.functions) <= limits.max_functions
    )


@export
def oracle_certificate(instance, config, seed, point=0):
    """Oracle result for (instance, seed), or None beyond the micro limits."""
    limits = OracleLimits(**config.oracle_limits)
    if not _static_fit(instance, config.horizon, limits):
        return None
    realization = realize(instance, config.horizon, seed, config.arrival_rate, config.requests_at(point))
    problem = Problem(instance, realization)
    try:
        return oracle_solve(problem, config.alpha, limits)
    except SizeLimitError:
        return None


def _run_one(config, instance, point, policy, seed, oracle):
    certificate = oracle.allocation if oracle is not None else None
    if policy == PolicyKind.ORACLE_REPLAY.value and certificate is None:
        raise ConfigError(f"oracle-replay at point {point} seed {seed}: instance exceeds the oracle limits")
    episode = config.episode(policy, seed, point)
    result = run_episode(instance, episode, certificate)
    if config.save_traces:
        directory = os.path.join(config.out, "traces")
        os.makedirs(directory, exist_ok=True)
        name = f"{config.scenario}_{point}_{policy}_{seed}.ndjson"
        write_trace(os.path.join(directory, name), instance, episode, result.trace)
    return RunRecord(point, policy, seed, result.metrics, oracle.report.objective_value if oracle else None)


@export
def collect_runs(config):
    """Every (point, policy, seed) episode, in that order. Workers share only
    read-only instances; ``AERO_ORCH_THREADS`` caps the pool."""
    workers = max(1, int(os.environ.get("AERO_ORCH_THREADS", "1")))
    instances = {p: build_instance(config, p) for p in config.points}
    oracles = {(p, s): oracle_certificate(instances[p], config, s, p) for p in config.points for s in config.seeds}
    jobs = [(p, pol, s) for p in config.points for pol in config.policies for s in config.seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_one, config, instances[p], p, pol, s, oracles[(p, s)]) for p, pol, s in jobs]
        records = [f.result() for f in tqdm(futures, desc=config.scenario, disable=not config.progress)]
    logging.info(f"{config.scenario}: {len(records)} episodes over {len(config.points)} points")
    return records


def _mean_std(values):
    values = [v for v in values if not math.isnan(v)]
    if not values:
        return float("nan"), float("nan")
    return float(np.mean(values)), float(np.std(values))


@export
def aggregate(records):
    """One MetricsRow per (point, policy), sorted by point then policy."""
    groups = {}
    for rec in records:
        groups.setdefault((rec.point, rec.policy), []).append(rec)
    rows = []
    for (point, policy), recs in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        acc = _mean_std([r.metrics["acceptance_pct"] for r in recs])
        energy = _mean_std([r.metrics["energy_per_request"] for r in recs])
        latency = _mean_std([r.metrics["latency_ms"] for r in recs])
        ratios = [
            r.metrics["objective"] / r.oracle_objective
            for r in recs
            if r.oracle_objective is not None and r.oracle_objective > 0
        ]
        ratio = float(np.mean(ratios)) if ratios else float("nan")
        rows.append(MetricsRow(point, policy, *acc, *energy, *latency, ratio))
    return rows


@export
def run_scenario(config):
    return aggregate(collect_runs(config))


@export
def emit_outputs(rows, directory, config=None):
    """metrics.csv, summary.yaml and one plot per metric under ``directory``."""
    if not rows:
        raise ValueError("no metrics rows to emit")
    os.makedirs(directory, exist_ok=True)
    frame = pd.DataFrame([asdict(r) for r in rows], columns=COLUMNS)
    frame.to_csv(os.path.join(directory, "metrics.csv"), index=False)
    summary = {"rows": [{k: float(v) if k != "policy" else v for k, v in asdict(r).items()} for r in rows]}
    if config is not None:
        summary["config"] = config.to_dict()
    with open(os.path.join(directory, "summary.yaml"), "w") as f:
        yaml.safe_dump(summary, f, sort_keys=False)
    xlabel = XLABELS[config.scenario] if config is not None else XLABELS["single"]
    plot_metrics(frame, directory, xlabel)
    logging.info(f"wrote {len(rows)} rows to {directory}")
    return frame


@export
def read_metrics(path):
    frame = pd.read_csv(path, float_precision="round_trip")
    if list(frame.columns) != COLUMNS:
        raise ValueError(f"{path}: unexpected columns {list(frame.columns)}")
    return [MetricsRow(**{k: (v if k == "policy" else float(v)) for k, v in row.items()}) for row in frame.to_dict("records")]


@export
def sign_test(a, b):
    """One-sided sign test p-value for paired samples, H1: a tends to exceed b."""
    wins = sum(x > y for x, y in zip(a, b))
    n = sum(x != y for x, y in zip(a, b))
    if n == 0:
        return 1.0
    return float(stats.binomtest(wins, n, 0.5, alternative="greater").pvalue)
