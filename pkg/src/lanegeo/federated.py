"""In-process federated optimization of the meta-learner: seeded client
sampling, local analytic gradients, unweighted FedAvg aggregation, and a
byte-accurate communication ledger. Clients exchange serialized messages only;
raw trajectories never cross the message boundary."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .lanes import DetectionParams, LaneModel
from .metanet import (
    DEFAULT_HIDDEN,
    DEFAULT_LR,
    MetaGrad,
    MetaNet,
    SceneFeatures,
    add_grads,
    alignment_loss,
    checkpoint_dict,
    grad_param_loss,
    init_net,
    net_checksum,
    scale_grad,
    serialize_net,
    sgd_step,
    zero_grad_like,
)


@dataclass
class ClientTask:
    """One roadside unit's local task. Tracks stay local; only features,
    gradients, and losses are ever serialized into messages."""

    client_id: str
    features: SceneFeatures
    theta_star: DetectionParams | None
    reference: LaneModel | None = None
    tracks: list | None = None
    raw_file_bytes: int = 0


@dataclass(frozen=True)
class LedgerEntry:
    round: int
    direction: str  # "up" | "down"
    bytes: int
    seconds: float


class CommLedger:
    """Per-round record of bytes moved in each direction."""

    def __init__(self):
        self.entries: list[LedgerEntry] = []

    def add(self, round_index: int, direction: str, nbytes: int, seconds: float) -> None:
        if direction not in ("up", "down"):
            raise ValueError("direction must be 'up' or 'down'")
        if seconds <= 0:
            raise ValueError("seconds must be positive")
        self.entries.append(LedgerEntry(round_index, direction, int(nbytes), float(seconds)))

    @property
    def total_bytes(self) -> int:
        return sum(e.bytes for e in self.entries)

    @property
    def total_seconds(self) -> float:
        return sum(e.seconds for e in self.entries)

    def bytes_in_direction(self, direction: str) -> int:
        return sum(e.bytes for e in self.entries if e.direction == direction)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["round", "direction", "bytes", "seconds"])
            for e in self.entries:
                writer.writerow([e.round, e.direction, e.bytes, e.seconds])


def bps(ledger: CommLedger, session_seconds: float) -> float:
    """Megabits per second over the whole session."""
    if session_seconds <= 0:
        raise ValueError("session_seconds must be positive")
    return (ledger.total_bytes * 8.0 / 1e6) / session_seconds


@dataclass
class RoundReport:
    round: int
    client_ids: list[str]
    losses: dict[str, float]
    checksum: str
    bytes_up: int
    bytes_down: int
    aborted: bool = False

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "client_ids": self.client_ids,
            "losses": self.losses,
            "checksum": self.checksum,
            "bytes_up": self.bytes_up,
            "bytes_down": self.bytes_down,
            "aborted": self.aborted,
        }


def downlink_message(net: MetaNet, round_index: int) -> bytes:
    return json.dumps(
        {"type": "model_broadcast", "round": round_index, "model": checkpoint_dict(net)},
        sort_keys=True,
    ).encode()


def uplink_message(client_id: str, round_index: int, grad: MetaGrad, loss: float) -> bytes:
    return json.dumps(
        {
            "type": "gradient_update",
            "round": round_index,
            "client_id": client_id,
            "loss_param": loss,
            "grad": {
                "W1": grad.W1.ravel().tolist(),
                "b1": grad.b1.tolist(),
                "W2": grad.W2.ravel().tolist(),
                "b2": grad.b2.tolist(),
            },
        },
        sort_keys=True,
    ).encode()


def _decode_grad(payload: bytes, hidden: int, n_in: int, n_heads: int) -> tuple[MetaGrad, float, str]:
    data = json.loads(payload)
    g = data["grad"]
    grad = MetaGrad(
        W1=np.asarray(g["W1"], dtype=float).reshape(hidden, n_in),
        b1=np.asarray(g["b1"], dtype=float),
        W2=np.asarray(g["W2"], dtype=float).reshape(n_heads, hidden),
        b2=np.asarray(g["b2"], dtype=float),
    )
    return grad, float(data["loss_param"]), str(data["client_id"])


def run_round(
    net: MetaNet,
    clients: list[ClientTask],
    sample_fraction: float,
    lr: float,
    seed: int,
    round_index: int = 0,
    ledger: CommLedger | None = None,
    round_seconds: float = 1.0,
    extra_upload_bytes: int = 0,
    message_log: list | None = None,
) -> tuple[MetaNet, RoundReport]:
    """One federated round: broadcast, local gradients, FedAvg, one SGD step.

    Aggregation reduces in fixed client-id order regardless of sampling order,
    so permuting the client list cannot change the update.
    """
    if not clients:
        raise ValueError("need at least one client")
    if not (0.0 < sample_fraction <= 1.0):
        raise ValueError("sample_fraction must be in (0, 1]")
    ordered = sorted(clients, key=lambda c: c.client_id)
    n_sampled = math.ceil(sample_fraction * len(ordered))
    rng = np.random.default_rng([seed, round_index])
    picked = rng.choice(len(ordered), size=n_sampled, replace=False)
    sampled = sorted((ordered[i] for i in picked), key=lambda c: c.client_id)

    down_payload = downlink_message(net, round_index)
    bytes_down = len(down_payload) * len(sampled)
    if message_log is not None:
        message_log.extend(("down", down_payload) for _ in sampled)

    uplinks: list[bytes] = []
    for client in sampled:
        if client.theta_star is None:
            continue
        grad = grad_param_loss(net, client.features, client.theta_star)
        loss = alignment_loss(net, client.features, client.theta_star)
        uplinks.append(uplink_message(client.client_id, round_index, grad, loss))
    if message_log is not None:
        message_log.extend(("up", payload) for payload in uplinks)

    bytes_up = sum(len(p) for p in uplinks) + int(extra_upload_bytes)
    if ledger is not None:
        ledger.add(round_index, "down", bytes_down, round_seconds / 2.0)
        ledger.add(round_index, "up", bytes_up, round_seconds / 2.0)

    if not uplinks:
        report = RoundReport(
            round=round_index,
            client_ids=[c.client_id for c in sampled],
            losses={},
            checksum=net_checksum(net),
            bytes_up=bytes_up,
            bytes_down=bytes_down,
            aborted=True,
        )
        return net, report

    n_in = net.W1.shape[1]
    n_heads = net.W2.shape[0]
    decoded = [_decode_grad(p, net.hidden, n_in, n_heads) for p in uplinks]
    decoded.sort(key=lambda item: item[2])
    total = zero_grad_like(net)
    losses: dict[str, float] = {}
    for grad, loss, client_id in decoded:
        total = add_grads(total, grad)
        losses[client_id] = loss
    averaged = scale_grad(total, 1.0 / len(decoded))
    new_net = sgd_step(net, averaged, lr)

    report = RoundReport(
        round=round_index,
        client_ids=[c.client_id for c in sampled],
        losses=losses,
        checksum=net_checksum(new_net),
        bytes_up=bytes_up,
        bytes_down=bytes_down,
    )
    return new_net, report


@dataclass
class FedTrainConfig:
    rounds: int = 20
    sample_fraction: float = 1.0
    lr: float = DEFAULT_LR
    seed: int = 0
    hidden: int = DEFAULT_HIDDEN
    round_seconds: float = 0.05
    file_upload_bytes_per_round: int = 0
    stop_threshold: float = 0.0  # stop early once mean loss drops below; 0 disables


@dataclass
class FedTrainResult:
    net: MetaNet
    reports: list[RoundReport]
    ledger: CommLedger
    curve: list[tuple[int, float, float]]  # (round, mean loss, std loss)


def train_fedmeta(
    clients: list[ClientTask],
    config: FedTrainConfig,
    net: MetaNet | None = None,
    message_log: list | None = None,
) -> FedTrainResult:
    if config.rounds < 1:
        raise ValueError("need at least one round")
    if net is None:
        net = init_net(config.seed, config.hidden)
    ledger = CommLedger()
    reports: list[RoundReport] = []
    curve: list[tuple[int, float, float]] = []
    for r in range(config.rounds):
        net, report = run_round(
            net,
            clients,
            config.sample_fraction,
            config.lr,
            config.seed,
            round_index=r,
            ledger=ledger,
            round_seconds=config.round_seconds,
            extra_upload_bytes=config.file_upload_bytes_per_round,
            message_log=message_log,
        )
        reports.append(report)
        values = list(report.losses.values())
        if values:
            mean = float(np.mean(values))
            curve.append((r, mean, float(np.std(values))))
            if 0.0 < config.stop_threshold and mean < config.stop_threshold:
                break
        else:
            curve.append((r, float("nan"), float("nan")))
    return FedTrainResult(net=net, reports=reports, ledger=ledger, curve=curve)


@dataclass
class CentralTrainConfig:
    epochs: int = 20
    lr: float = DEFAULT_LR
    seed: int = 0
    hidden: int = DEFAULT_HIDDEN
    session_seconds: float = 1.0


def train_meta_centralized(
    clients: list[ClientTask],
    config: CentralTrainConfig,
) -> tuple[MetaNet, list[tuple[int, float, float]], CommLedger]:
    """Centralized regime: all (features, reference-parameter) pairs pooled at
    the server; the ledger charges each client's declared raw-file bytes as
    upload."""
    pool = [c for c in sorted(clients, key=lambda c: c.client_id) if c.theta_star is not None]
    if not pool:
        raise ValueError("no client provides reference parameters")
    ledger = CommLedger()
    for client in sorted(clients, key=lambda c: c.client_id):
        ledger.add(0, "up", client.raw_file_bytes, config.session_seconds / len(clients))
    net = init_net(config.seed, config.hidden)
    curve: list[tuple[int, float, float]] = []
    for epoch in range(config.epochs):
        for client in pool:
            grad = grad_param_loss(net, client.features, client.theta_star)
            net = sgd_step(net, grad, config.lr)
        losses = [alignment_loss(net, c.features, c.theta_star) for c in pool]
        curve.append((epoch, float(np.mean(losses)), float(np.std(losses))))
    return net, curve, ledger


def baseline_ledger(clients: list[ClientTask], session_seconds: float = 1.0) -> CommLedger:
    """Fixed-parameter regime: no model traffic, full trajectory-file upload."""
    ledger = CommLedger()
    for client in sorted(clients, key=lambda c: c.client_id):
        ledger.add(0, "up", client.raw_file_bytes, session_seconds / len(clients))
    return ledger


def write_round_reports(reports: list[RoundReport], path) -> None:
    with open(path, "w") as fh:
        for report in reports:
            fh.write(json.dumps(report.to_dict(), sort_keys=True) + "\n")


def write_curve_csv(curve, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "loss_param_mean", "loss_param_std"])
        for row in curve:
            writer.writerow(list(row))
