"""Black-box meta-learner: a two-layer MLP with a shared tanh hidden layer and
per-parameter sigmoid heads mapping scene features to detection parameters.
Gradients are computed analytically; nothing flows through the detection
pipeline itself."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .lanes import PARAM_RANGES, DetectionParams

HEAD_NAMES = ("smoothing", "angle_threshold", "bin_count", "peak_prominence")
FEATURE_NAMES = (
    "mean_speed",
    "speed_std",
    "track_count",
    "hour_sin",
    "hour_cos",
    "heading_spread",
    "lateral_extent",
)
# fixed (center, scale) standardization constants per feature
FEATURE_STANDARDIZATION = {
    "mean_speed": (15.0, 10.0),
    "speed_std": (2.0, 2.0),
    "track_count": (300.0, 300.0),
    "hour_sin": (0.0, 1.0),
    "hour_cos": (0.0, 1.0),
    "heading_spread": (0.5, 1.0),
    "lateral_extent": (10.0, 10.0),
}
DEFAULT_HIDDEN = 16
DEFAULT_LR = 0.05


@dataclass(frozen=True)
class SceneFeatures:
    """Scene-level summary feeding the meta-learner (7 values: the hour enters
    as a sin/cos pair)."""

    mean_speed: float
    speed_std: float
    track_count: float
    hour_sin: float
    hour_cos: float
    heading_spread: float
    lateral_extent: float

    def __post_init__(self):
        for name in FEATURE_NAMES:
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"feature {name} must be finite")

    def vector(self) -> np.ndarray:
        """Standardized fixed-length feature vector."""
        out = np.empty(len(FEATURE_NAMES))
        for idx, name in enumerate(FEATURE_NAMES):
            center, scale = FEATURE_STANDARDIZATION[name]
            out[idx] = (getattr(self, name) - center) / scale
        return out

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in FEATURE_NAMES}

    @classmethod
    def from_dict(cls, data) -> "SceneFeatures":
        return cls(**{name: float(data[name]) for name in FEATURE_NAMES})


@dataclass(frozen=True)
class MetaNet:
    """Weights of the meta-learner: shared hidden layer plus one scalar head
    per steerable detection parameter."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    def arrays(self) -> tuple[np.ndarray, ...]:
        return (self.W1, self.b1, self.W2, self.b2)


@dataclass(frozen=True)
class MetaGrad:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def arrays(self) -> tuple[np.ndarray, ...]:
        return (self.W1, self.b1, self.W2, self.b2)


def init_net(seed: int, hidden: int = DEFAULT_HIDDEN) -> MetaNet:
    """Seeded uniform init in [-a, a] with a = sqrt(6 / (fan_in + fan_out));
    biases start at zero."""
    rng = np.random.default_rng(seed)
    n_in = len(FEATURE_NAMES)
    n_heads = len(HEAD_NAMES)
    a1 = math.sqrt(6.0 / (n_in + hidden))
    a2 = math.sqrt(6.0 / (hidden + 1))
    return MetaNet(
        W1=rng.uniform(-a1, a1, size=(hidden, n_in)),
        b1=np.zeros(hidden),
        W2=rng.uniform(-a2, a2, size=(n_heads, hidden)),
        b2=np.zeros(n_heads),
    )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def _as_vector(x) -> np.ndarray:
    if isinstance(x, SceneFeatures):
        return x.vector()
    return np.asarray(x, dtype=float)


def forward_units(net: MetaNet, x) -> np.ndarray:
    """Raw head outputs in [0, 1], one per steerable parameter."""
    v = _as_vector(x)
    h = np.tanh(net.W1 @ v + net.b1)
    return _sigmoid(net.W2 @ h + net.b2)


def forward(net: MetaNet, x, kmeans_seed: int = 0) -> DetectionParams:
    """Head outputs rescaled to each parameter's range. The bin count is
    rounded here, at pipeline-call time; training sees the real-valued head."""
    units = forward_units(net, x)
    values = {}
    for idx, name in enumerate(HEAD_NAMES):
        lo, hi = PARAM_RANGES[name]
        values[name] = lo + (hi - lo) * float(units[idx])
    return DetectionParams(
        smoothing=values["smoothing"],
        angle_threshold=values["angle_threshold"],
        bin_count=int(round(values["bin_count"])),
        peak_prominence=values["peak_prominence"],
        kmeans_seed=kmeans_seed,
    )


def _normalized_targets(theta: DetectionParams) -> np.ndarray:
    norm = theta.normalized()
    return np.array([norm[name] for name in HEAD_NAMES])


def alignment_loss(net: MetaNet, x, theta_star: DetectionParams) -> float:
    """Range-normalized squared error between predicted and reference
    parameters, with the bin-count head kept real-valued."""
    units = forward_units(net, x)
    targets = _normalized_targets(theta_star)
    return float(np.sum((units - targets) ** 2))


def grad_param_loss(net: MetaNet, x, theta_star: DetectionParams) -> MetaGrad:
    """Exact analytic gradient of alignment_loss w.r.t. every weight."""
    v = _as_vector(x)
    pre = net.W1 @ v + net.b1
    h = np.tanh(pre)
    z = net.W2 @ h + net.b2
    units = _sigmoid(z)
    targets = _normalized_targets(theta_star)

    dz = 2.0 * (units - targets) * units * (1.0 - units)
    gW2 = np.outer(dz, h)
    gb2 = dz
    dh = net.W2.T @ dz
    dpre = dh * (1.0 - h**2)
    gW1 = np.outer(dpre, v)
    gb1 = dpre
    return MetaGrad(W1=gW1, b1=gb1, W2=gW2, b2=gb2)


def zero_grad_like(net: MetaNet) -> MetaGrad:
    return MetaGrad(*(np.zeros_like(a) for a in net.arrays()))


def add_grads(a: MetaGrad, b: MetaGrad) -> MetaGrad:
    return MetaGrad(*(x + y for x, y in zip(a.arrays(), b.arrays())))


def scale_grad(g: MetaGrad, factor: float) -> MetaGrad:
    return MetaGrad(*(factor * x for x in g.arrays()))


def sgd_step(net: MetaNet, grad: MetaGrad, lr: float) -> MetaNet:
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    return MetaNet(*(w - lr * g for w, g in zip(net.arrays(), grad.arrays())))


def checkpoint_dict(net: MetaNet) -> dict:
    return {
        "hidden": net.hidden,
        "heads": list(HEAD_NAMES),
        "W1": net.W1.ravel().tolist(),
        "b1": net.b1.tolist(),
        "W2": net.W2.ravel().tolist(),
        "b2": net.b2.tolist(),
    }


def serialize_net(net: MetaNet) -> bytes:
    return json.dumps(checkpoint_dict(net), sort_keys=True).encode()


def net_checksum(net: MetaNet) -> str:
    return hashlib.sha256(serialize_net(net)).hexdigest()[:16]


def save_checkpoint(net: MetaNet, path) -> int:
    """Write the checkpoint JSON; returns its size in bytes."""
    payload = serialize_net(net)
    with open(path, "wb") as fh:
        fh.write(payload + b"\n")
    return len(payload)


def load_checkpoint(path) -> MetaNet:
    with open(path) as fh:
        data = json.load(fh)
    hidden = int(data["hidden"])
    n_in = len(FEATURE_NAMES)
    n_heads = len(HEAD_NAMES)
    return MetaNet(
        W1=np.asarray(data["W1"], dtype=float).reshape(hidden, n_in),
        b1=np.asarray(data["b1"], dtype=float),
        W2=np.asarray(data["W2"], dtype=float).reshape(n_heads, hidden),
        b2=np.asarray(data["b2"], dtype=float),
    )
