"""Run configuration: one JSON document covering the episode, the
comparison and oracle budgets, seeds and the output directory."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List

from .errors import ConfigError
from .runtime import EpisodeConfig

OUTPUT_ROOT_ENV = "FRES_OUTPUT_ROOT"
METHODS = ("fres", "random", "local", "remote", "ts", "lts", "sa", "asa")
SEARCH_METHODS = ("ts", "lts", "sa", "asa")


@dataclass
class SearchBudgets:
    # iteration budget of the ts and lts baselines
    ts_iters: int = 90
    sa_t_max: float = 100.0
    sa_t_min: float = 1.0
    sa_cooling: float = 0.95
    sa_moves: int = 1


@dataclass
class OracleConfig:
    qpb_geometries: int = 200
    gradient_draws: int = 50
    lts_instances: int = 20
    lts_iters: int = 30
    grid: int = 8
    n_ues: tuple = (2, 3)
    m_uavs: tuple = (1, 2)
    budget: int = 10**7


@dataclass
class RunConfig:
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    seeds: List[int] = field(default_factory=lambda: [0])
    methods: List[str] = field(default_factory=lambda: ["fres", "random", "local", "remote", "ts"])
    # comparisons score the last `eval_window` slots of the episode
    eval_window: int = 100
    search: SearchBudgets = field(default_factory=SearchBudgets)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    output_dir: str = "runs"

    def __post_init__(self):
        self.seeds = [int(s) for s in self.seeds]
        self.methods = list(self.methods)
        if not self.seeds:
            raise ConfigError("need at least one seed")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; choose from {METHODS}")
        if self.eval_window < 1:
            raise ConfigError("eval_window must be >= 1")

    def to_dict(self) -> dict:
        return {
            "episode": self.episode.to_dict(),
            "seeds": list(self.seeds),
            "methods": list(self.methods),
            "eval_window": self.eval_window,
            "search": asdict(self.search),
            "oracle": {**asdict(self.oracle), "n_ues": list(self.oracle.n_ues), "m_uavs": list(self.oracle.m_uavs)},
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        _reject_unknown("run", d, cls)
        if "episode" in d:
            d["episode"] = EpisodeConfig.from_dict(d["episode"])
        if "search" in d:
            _reject_unknown("search", d["search"], SearchBudgets)
            d["search"] = SearchBudgets(**d["search"])
        if "oracle" in d:
            o = dict(d["oracle"])
            _reject_unknown("oracle", o, OracleConfig)
            for k in ("n_ues", "m_uavs"):
                if k in o:
                    o[k] = tuple(o[k])
            d["oracle"] = OracleConfig(**o)
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def output_path(self) -> Path:
        root = os.environ.get(OUTPUT_ROOT_ENV)
        return Path(root) / self.output_dir if root else Path(self.output_dir)


def _reject_unknown(where, d, cls):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} section must be a mapping")
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: not valid JSON ({exc})") from None
    return RunConfig.from_dict(data)


def save_config(config: RunConfig, path) -> None:
    Path(path).write_text(config.to_json() + "\n")


def parse_uav_schedule(text: str) -> list:
    """``"0:3,1000:4,1500:3"`` -> ``[(0, 3), (1000, 4), (1500, 3)]``."""
    out = []
    for part in text.split(","):
        try:
            slot, m = part.split(":")
            out.append((int(slot), int(m)))
        except ValueError:
            raise ConfigError(f"bad UAV schedule entry {part!r}; expected slot:count") from None
    return out
