"""Command-line workflow: detect lanes in a scene, evaluate a detected model
against a reference, train the meta-learner (baseline, centralized, or
federated), and build cross-model comparison reports with figures.

Exit codes: 0 success, 1 internal error, 2 bad input.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

from .config import BadInput, RunConfig, load_config
from .federated import (
    CentralTrainConfig,
    baseline_ledger,
    bps,
    train_fedmeta,
    train_meta_centralized,
    write_curve_csv,
    write_round_reports,
)
from .geometry import Homography, apply_homography_many
from .lanes import (
    DetectionParams,
    InsufficientData,
    LaneModel,
    detect_lanes,
    load_tracks_jsonl,
    to_geojson,
)
from .losses import loss_total
from .metanet import forward, load_checkpoint, save_checkpoint
from .plots import save_comparison, save_loss_curve
from .scenario import (
    SceneSpec,
    benchmark_scenes,
    build_client,
    extract_features,
    generate_tracks,
    reference_model,
)

LOSS_COLUMNS = ("L_consistency", "L_geometry", "L_center", "L_lane_num", "L_total")
TRAIN_MODES = ("baseline", "meta", "fedmeta")


def _builtin_scenes() -> dict[str, SceneSpec]:
    seen, holdout = benchmark_scenes()
    return {spec.scene_id: spec for spec in seen + holdout}


def _resolve_scene(name: str) -> SceneSpec:
    if os.path.isfile(name):
        return SceneSpec.load(name)
    builtin = _builtin_scenes()
    if name in builtin:
        return builtin[name]
    raise BadInput(f"scene is neither a file nor a built-in id: {name}")


def _json_dump(data, path) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _loss_row(breakdown) -> list[float]:
    return [
        breakdown.consistency,
        breakdown.geometry,
        breakdown.center,
        breakdown.lane_num,
        breakdown.total,
    ]


def _aligned_table(header: list[str], rows: list[list]) -> str:
    cells = [header] + [
        [f"{v:.4f}" if isinstance(v, float) else str(v) for v in row] for row in rows
    ]
    widths = [max(len(row[c]) for row in cells) for c in range(len(header))]
    lines = [
        "  ".join(cell.rjust(w) for cell, w in zip(row, widths)) for row in cells
    ]
    return "\n".join(lines) + "\n"


def _load_tracks_for(config: RunConfig, spec: SceneSpec | None):
    if config.tracks_path is not None:
        tracks = load_tracks_jsonl(config.tracks_path)
        if config.homography_path is not None:
            hom = Homography.load(config.homography_path)
            for tr in tracks:
                tr.xy = apply_homography_many(hom, tr.xy)
        return tracks
    if spec is None:
        raise BadInput("detect needs --scene or a tracks_path in the config")
    return generate_tracks(spec)


def cmd_detect(config: RunConfig, scene: str | None, out: str, seed: int | None) -> int:
    spec = None
    scene = scene or config.scene
    if scene is not None:
        spec = _resolve_scene(scene)
        if seed is not None:
            spec = replace(spec, seed=seed)
    tracks = _load_tracks_for(config, spec)

    if config.checkpoint_path is not None:
        net = load_checkpoint(config.checkpoint_path)
        hour = spec.hour_of_day if spec is not None else 12.0
        features = extract_features(tracks, hour)
        params = forward(net, features, kmeans_seed=config.detection.kmeans_seed)
    else:
        params = config.detection

    scene_id = spec.scene_id if spec is not None else "tracks"
    model = detect_lanes(tracks, params, scene_id=scene_id)

    os.makedirs(out, exist_ok=True)
    model.save(os.path.join(out, f"{scene_id}.lane_model.json"))
    _json_dump(to_geojson(model), os.path.join(out, f"{scene_id}.lanes.geojson"))
    _json_dump(params.to_dict(), os.path.join(out, f"{scene_id}.params.json"))
    print(f"{scene_id}: {len(model.lanes)} lanes -> {out}")
    return 0


def cmd_eval(config: RunConfig, out: str) -> int:
    detected = LaneModel.load(config.require("detected_path"))
    reference = LaneModel.load(config.require("reference_path"))
    breakdown = loss_total(detected, reference, weights=config.weights)

    os.makedirs(out, exist_ok=True)
    _json_dump(breakdown.to_dict(), os.path.join(out, "eval.json"))
    table = _aligned_table(
        ["scene"] + list(LOSS_COLUMNS),
        [[detected.scene_id] + _loss_row(breakdown)],
    )
    with open(os.path.join(out, "eval.txt"), "w") as fh:
        fh.write(table)
    sys.stdout.write(table)
    return 0


def _seen_clients(config: RunConfig):
    seen, _ = benchmark_scenes()
    return [
        build_client(spec, grid=config.grid, weights=config.weights) for spec in seen
    ]


def cmd_train(config: RunConfig, mode: str, out: str, seed: int | None) -> int:
    if mode not in TRAIN_MODES:
        raise BadInput(f"mode must be one of {TRAIN_MODES}")
    if seed is not None:
        config.seed = seed
    os.makedirs(out, exist_ok=True)
    clients = _seen_clients(config)

    if mode == "baseline":
        ledger = baseline_ledger(clients)
        ledger.to_csv(os.path.join(out, "baseline.ledger.csv"))
        _json_dump(config.detection.to_dict(), os.path.join(out, "baseline.params.json"))
        print(f"baseline: fixed params, {ledger.total_bytes} file bytes charged")
        return 0

    if mode == "meta":
        central = CentralTrainConfig(
            epochs=config.rounds, lr=config.lr, seed=config.seed, hidden=config.hidden
        )
        net, curve, ledger = train_meta_centralized(clients, central)
        save_checkpoint(net, os.path.join(out, "meta.checkpoint.json"))
        write_curve_csv(curve, os.path.join(out, "meta.curve.csv"))
        save_loss_curve(curve, os.path.join(out, "meta.curve.png"))
        ledger.to_csv(os.path.join(out, "meta.ledger.csv"))
        print(f"meta: {len(curve)} epochs, final loss {curve[-1][1]:.6f}")
        return 0

    result = train_fedmeta(clients, config.fed_config())
    save_checkpoint(result.net, os.path.join(out, "fedmeta.checkpoint.json"))
    write_round_reports(result.reports, os.path.join(out, "fedmeta.rounds.jsonl"))
    write_curve_csv(result.curve, os.path.join(out, "fedmeta.curve.csv"))
    save_loss_curve(result.curve, os.path.join(out, "fedmeta.curve.png"))
    result.ledger.to_csv(os.path.join(out, "fedmeta.ledger.csv"))
    print(f"fedmeta: {len(result.curve)} rounds, final loss {result.curve[-1][1]:.6f}")
    return 0


def cmd_report(config: RunConfig, modes: str | None, out: str, seed: int | None) -> int:
    requested = TRAIN_MODES if modes is None else tuple(m for m in modes.split(",") if m)
    if not requested:
        raise BadInput("empty model set; pass --mode with at least one of "
                       + ",".join(TRAIN_MODES))
    for m in requested:
        if m not in TRAIN_MODES:
            raise BadInput(f"unknown mode {m!r}; choose from {TRAIN_MODES}")
    if seed is not None:
        config.seed = seed
    os.makedirs(out, exist_ok=True)

    seen, holdout = benchmark_scenes()
    clients = _seen_clients(config)

    nets = {}
    ledgers = {}
    if "baseline" in requested:
        ledgers["baseline"] = baseline_ledger(clients)
    if "meta" in requested:
        central = CentralTrainConfig(
            epochs=config.rounds, lr=config.lr, seed=config.seed, hidden=config.hidden
        )
        nets["meta"], _, ledgers["meta"] = train_meta_centralized(clients, central)
    if "fedmeta" in requested:
        result = train_fedmeta(clients, config.fed_config())
        nets["fedmeta"] = result.net
        ledgers["fedmeta"] = result.ledger
        write_curve_csv(result.curve, os.path.join(out, "fedmeta.curve.csv"))
        save_loss_curve(result.curve, os.path.join(out, "fedmeta.curve.png"))

    rows = []
    scene_ids = []
    totals = {mode: [] for mode in requested}
    for spec in seen + holdout:
        tracks = generate_tracks(spec)
        reference = reference_model(spec)
        subset = "seen" if spec in seen else "unseen"
        scene_ids.append(spec.scene_id)
        for mode in requested:
            if mode == "baseline":
                params = config.detection
            else:
                features = extract_features(tracks, spec.hour_of_day)
                params = forward(
                    nets[mode], features, kmeans_seed=config.detection.kmeans_seed
                )
            detected = detect_lanes(tracks, params, scene_id=spec.scene_id)
            breakdown = loss_total(detected, reference, weights=config.weights)
            rows.append([mode, spec.scene_id, subset] + _loss_row(breakdown))
            totals[mode].append(breakdown.total)

    header = ["model", "scene", "set"] + list(LOSS_COLUMNS)
    with open(os.path.join(out, "losses.csv"), "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.6f}" if isinstance(v, float) else str(v) for v in row) + "\n")
    loss_table = _aligned_table(header, rows)
    with open(os.path.join(out, "losses.txt"), "w") as fh:
        fh.write(loss_table)

    comm_header = ["model", "down_MB", "up_MB", "total_MB", "Mbps"]
    comm_rows = []
    for mode in requested:
        ledger = ledgers[mode]
        comm_rows.append(
            [
                mode,
                ledger.bytes_in_direction("down") / 1e6,
                ledger.bytes_in_direction("up") / 1e6,
                ledger.total_bytes / 1e6,
                bps(ledger, session_seconds=1.0),
            ]
        )
    with open(os.path.join(out, "communication.csv"), "w") as fh:
        fh.write(",".join(comm_header) + "\n")
        for row in comm_rows:
            fh.write(",".join(f"{v:.6f}" if isinstance(v, float) else str(v) for v in row) + "\n")
    comm_table = _aligned_table(comm_header, comm_rows)
    with open(os.path.join(out, "communication.txt"), "w") as fh:
        fh.write(comm_table)

    save_comparison(scene_ids, totals, os.path.join(out, "comparison.png"))
    sys.stdout.write(loss_table)
    sys.stdout.write(comm_table)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lanegeo",
        description="Lane model reconstruction, scoring, and federated "
        "meta-learning of detection parameters.",
    )
    parser.add_argument("--config", help="JSON config file", default=None)
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--out", default=None, help="override output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p_detect = sub.add_parser("detect", help="detect lanes in one scene")
    p_detect.add_argument("--scene", default=None, help="scene JSON path or built-in id")

    sub.add_parser("eval", help="score a detected model against a reference")

    p_train = sub.add_parser("train", help="train detection parameters")
    p_train.add_argument("--mode", required=True, choices=TRAIN_MODES)

    p_report = sub.add_parser("report", help="cross-model comparison tables")
    p_report.add_argument("--mode", default=None, help="comma-separated subset of modes")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        out = args.out or config.output_dir
        if args.command == "detect":
            return cmd_detect(config, args.scene, out, args.seed)
        if args.command == "eval":
            return cmd_eval(config, out)
        if args.command == "train":
            return cmd_train(config, args.mode, out, args.seed)
        return cmd_report(config, args.mode, out, args.seed)
    except (BadInput, InsufficientData, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
