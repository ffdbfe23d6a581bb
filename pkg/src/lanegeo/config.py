"""Run configuration for the command-line workflow: JSON-backed settings with
path and range validation up front, so commands fail fast on bad input."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .federated import FedTrainConfig
from .lanes import PARAM_RANGES, DetectionParams
from .losses import DEFAULT_WEIGHTS
from .metanet import DEFAULT_HIDDEN, DEFAULT_LR


class BadInput(Exception):
    """Invalid configuration or input file; maps to exit code 2."""


@dataclass
class RunConfig:
    """Everything a command needs beyond its subcommand flags.

    Paths are optional; commands that need one raise BadInput when it is
    missing. Scene paths may also name built-in benchmark scenes by id."""

    output_dir: str = "out"
    scene: str | None = None
    tracks_path: str | None = None
    reference_path: str | None = None
    detected_path: str | None = None
    homography_path: str | None = None
    checkpoint_path: str | None = None
    weights: tuple[float, float, float, float] = DEFAULT_WEIGHTS
    stop_threshold: float = 0.0
    rounds: int = 20
    sample_fraction: float = 1.0
    lr: float = DEFAULT_LR
    seed: int = 0
    hidden: int = DEFAULT_HIDDEN
    grid: dict | None = None
    detection: DetectionParams = field(
        default_factory=lambda: DetectionParams(
            smoothing=5.0,
            angle_threshold=0.5,
            bin_count=64,
            peak_prominence=0.1,
            kmeans_seed=0,
        )
    )

    def __post_init__(self):
        self.weights = tuple(float(w) for w in self.weights)
        if len(self.weights) != 4 or any(w < 0 for w in self.weights):
            raise BadInput("weights must be 4 non-negative numbers")
        if self.rounds < 1:
            raise BadInput("rounds must be >= 1")
        if not (0.0 < self.sample_fraction <= 1.0):
            raise BadInput("sample_fraction must be in (0, 1]")
        if self.lr <= 0:
            raise BadInput("lr must be positive")
        if self.hidden < 1:
            raise BadInput("hidden must be >= 1")
        if self.stop_threshold < 0:
            raise BadInput("stop_threshold must be non-negative")
        if self.grid is not None:
            for name in PARAM_RANGES:
                values = self.grid.get(name)
                if not values:
                    raise BadInput(f"grid missing values for {name}")
                lo, hi = PARAM_RANGES[name]
                for v in values:
                    if not (lo <= float(v) <= hi):
                        raise BadInput(f"grid value {v} for {name} outside [{lo}, {hi}]")
        for attr in (
            "tracks_path",
            "reference_path",
            "detected_path",
            "homography_path",
            "checkpoint_path",
        ):
            path = getattr(self, attr)
            if path is not None and not os.path.isfile(path):
                raise BadInput(f"{attr} does not exist: {path}")

    def fed_config(self) -> FedTrainConfig:
        return FedTrainConfig(
            rounds=self.rounds,
            sample_fraction=self.sample_fraction,
            lr=self.lr,
            seed=self.seed,
            hidden=self.hidden,
            stop_threshold=self.stop_threshold,
        )

    def require(self, attr: str) -> str:
        value = getattr(self, attr)
        if value is None:
            raise BadInput(f"config field {attr} is required for this command")
        return value


_FIELDS = {
    "output_dir",
    "scene",
    "tracks_path",
    "reference_path",
    "detected_path",
    "homography_path",
    "checkpoint_path",
    "weights",
    "stop_threshold",
    "rounds",
    "sample_fraction",
    "lr",
    "seed",
    "hidden",
    "grid",
    "detection",
}


def load_config(path: str | None) -> RunConfig:
    """RunConfig from a JSON file; None yields all defaults."""
    if path is None:
        return RunConfig()
    if not os.path.isfile(path):
        raise BadInput(f"config file does not exist: {path}")
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise BadInput(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise BadInput("config must be a JSON object")
    unknown = set(data) - _FIELDS
    if unknown:
        raise BadInput(f"unknown config fields: {sorted(unknown)}")
    if "detection" in data:
        try:
            data["detection"] = DetectionParams.from_dict(data["detection"])
        except (KeyError, TypeError, ValueError) as exc:
            raise BadInput(f"bad detection params: {exc}") from exc
    if "weights" in data:
        data["weights"] = tuple(data["weights"])
    try:
        return RunConfig(**data)
    except (TypeError, ValueError) as exc:
        raise BadInput(str(exc)) from exc
