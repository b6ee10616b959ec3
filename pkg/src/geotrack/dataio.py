"""File formats for datasets, parameters, and reports.

All writers are deterministic (sorted keys, repr-exact floats) so that a
write -> read -> write round trip is byte-identical and identically seeded
pipeline runs produce identical files.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from pathlib import Path
from typing import Sequence

import numpy as np

from .calibration import CalibrationParams
from .core import Arena, Gaussian2D, ObjectPose
from .kalman import DetectionFrame, FilterParams
from .metrics import MetricReport
from .simulator import CameraNode, ScenarioConfig, default_scenario


def dumps(obj, indent: int | None = None) -> str:
    if indent is None:
        return json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return json.dumps(obj, sort_keys=True, indent=indent)


def _f(x) -> float:
    return float(x)


# ---------------------------------------------------------------------------
# detections: line-delimited JSON, one frame per line


def write_detections(path: Path, frames: Sequence[DetectionFrame]) -> None:
    with open(path, "w") as fh:
        for frame in frames:
            rec = {
                "t": _f(frame.t),
                "detections": [
                    {
                        "view": view,
                        "mean": [_f(g.mean[0]), _f(g.mean[1])],
                        "cov": [
                            [_f(g.cov[0, 0]), _f(g.cov[0, 1])],
                            [_f(g.cov[1, 0]), _f(g.cov[1, 1])],
                        ],
                    }
                    for view, g in frame.detections
                ],
            }
            fh.write(dumps(rec) + "\n")


def read_detections(path: Path) -> list[DetectionFrame]:
    frames = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
            dets = tuple(
                (d["view"], Gaussian2D(d["mean"], d["cov"]))
                for d in rec["detections"]
            )
            frames.append(DetectionFrame(rec["t"], dets))
    return frames


# ---------------------------------------------------------------------------
# truth: CSV with header t,x,y,heading,width,length

TRUTH_HEADER = ["t", "x", "y", "heading", "width", "length"]


def write_truth(path: Path, samples: Sequence[tuple[float, ObjectPose]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRUTH_HEADER)
        for t, pose in samples:
            writer.writerow(
                [
                    repr(_f(t)),
                    repr(_f(pose.position[0])),
                    repr(_f(pose.position[1])),
                    repr(_f(pose.heading)),
                    repr(_f(pose.extent[0])),
                    repr(_f(pose.extent[1])),
                ]
            )


def read_truth(path: Path) -> list[tuple[float, ObjectPose]]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRUTH_HEADER:
            raise ValueError(f"{path}: expected header {TRUTH_HEADER}, got {header}")
        for row in reader:
            t, x, y, heading, width, length = (float(v) for v in row)
            out.append((t, ObjectPose((x, y), heading, (width, length))))
    return out


# ---------------------------------------------------------------------------
# scenario config


def scenario_to_dict(config: ScenarioConfig) -> dict:
    return {
        "arena": {"width": _f(config.arena.width), "length": _f(config.arena.length)},
        "nodes": [
            {
                "id": n.id,
                "position": [_f(n.position[0]), _f(n.position[1])],
                "facing": _f(n.facing),
                "fov": _f(n.fov),
                "noise_floor": _f(n.noise_floor),
                "noise_slope": _f(n.noise_slope),
                "miscalibration": [_f(n.miscalibration[0]), _f(n.miscalibration[1])],
            }
            for n in config.nodes
        ],
        "occluders": [list(r) for r in config.occluders],
        "lighting": config.lighting,
        "low_light_noise_multiplier": _f(config.low_light_noise_multiplier),
        "fps": _f(config.fps),
        "duration": _f(config.duration),
        "split": list(config.split),
        "object_extent": list(config.object_extent),
        "seed": int(config.seed),
        "fallback_rate": _f(config.fallback_rate),
        "fallback_sigma": _f(config.fallback_sigma),
        "ray_anisotropy": _f(config.ray_anisotropy),
    }


_NODE_KEYS = {"id", "position", "facing", "fov", "noise_floor", "noise_slope", "miscalibration"}
_CONFIG_KEYS = set(scenario_to_dict(default_scenario()).keys())


def scenario_from_dict(data: dict) -> ScenarioConfig:
    """Build a config from a possibly partial dict; missing fields take the
    bundled defaults. Unknown fields are an error, named in the message."""
    unknown = set(data) - _CONFIG_KEYS
    if unknown:
        raise ValueError(f"unknown config field: {sorted(unknown)[0]}")
    base = default_scenario(seed=int(data.get("seed", 0)))
    kwargs: dict = {}
    if "arena" in data:
        kwargs["arena"] = Arena(float(data["arena"]["width"]), float(data["arena"]["length"]))
    if "nodes" in data:
        nodes = []
        for nd in data["nodes"]:
            bad = set(nd) - _NODE_KEYS
            if bad:
                raise ValueError(f"unknown config field: nodes.{sorted(bad)[0]}")
            nodes.append(
                CameraNode(
                    id=nd["id"],
                    position=nd["position"],
                    facing=float(nd["facing"]),
                    fov=float(nd.get("fov", 2.0 * math.pi / 3.0)),
                    noise_floor=float(nd.get("noise_floor", 3.0)),
                    noise_slope=float(nd.get("noise_slope", 0.01)),
                    miscalibration=tuple(nd.get("miscalibration", (1.0, 0.0))),
                )
            )
        kwargs["nodes"] = tuple(nodes)
    for key in (
        "lighting",
        "low_light_noise_multiplier",
        "fps",
        "duration",
        "fallback_rate",
        "fallback_sigma",
        "ray_anisotropy",
    ):
        if key in data:
            kwargs[key] = data[key]
    if "occluders" in data:
        kwargs["occluders"] = tuple(tuple(r) for r in data["occluders"])
    if "split" in data:
        kwargs["split"] = tuple(data["split"])
    if "object_extent" in data:
        kwargs["object_extent"] = tuple(data["object_extent"])
    return dataclasses.replace(base, **kwargs)


def load_scenario(path: Path) -> ScenarioConfig:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))


def write_scenario(path: Path, config: ScenarioConfig) -> None:
    Path(path).write_text(dumps(scenario_to_dict(config), indent=2) + "\n")


# ---------------------------------------------------------------------------
# parameter files


def write_filter_params(path: Path, params: FilterParams) -> None:
    Path(path).write_text(
        dumps(
            {"sigma_accel": _f(params.sigma_accel), "init_vel_var": _f(params.init_vel_var)},
            indent=2,
        )
        + "\n"
    )


def read_filter_params(path: Path) -> FilterParams:
    data = json.loads(Path(path).read_text())
    return FilterParams(
        sigma_accel=float(data["sigma_accel"]),
        init_vel_var=float(data.get("init_vel_var", 1e4)),
    )


def write_calibration(path: Path, params: dict[str, CalibrationParams], shared: bool = False) -> None:
    Path(path).write_text(
        dumps(
            {
                "shared": shared,
                "views": {v: {"a": _f(p.a), "b": _f(p.b)} for v, p in params.items()},
            },
            indent=2,
        )
        + "\n"
    )


def read_calibration(path: Path) -> dict[str, CalibrationParams]:
    data = json.loads(Path(path).read_text())
    return {v: CalibrationParams(d["a"], d["b"]) for v, d in data["views"].items()}


# ---------------------------------------------------------------------------
# track output


def write_track(path: Path, times: np.ndarray, marginals: Sequence[Gaussian2D]) -> None:
    with open(path, "w") as fh:
        for t, g in zip(times, marginals):
            rec = {
                "t": _f(t),
                "mean": [_f(g.mean[0]), _f(g.mean[1])],
                "cov": [
                    [_f(g.cov[0, 0]), _f(g.cov[0, 1])],
                    [_f(g.cov[1, 0]), _f(g.cov[1, 1])],
                ],
            }
            fh.write(dumps(rec) + "\n")


def read_track(path: Path) -> list[tuple[float, Gaussian2D]]:
    out = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
            out.append((rec["t"], Gaussian2D(rec["mean"], rec["cov"])))
    return out


# ---------------------------------------------------------------------------
# metric report


def write_report(path: Path, report: MetricReport) -> None:
    Path(path).write_text(dumps(report.to_dict(), indent=2) + "\n")


def read_report(path: Path) -> MetricReport:
    data = json.loads(Path(path).read_text())
    return MetricReport(
        nll=data["nll"],
        opm=data["opm"],
        det_pr=data["det_pr"],
        loc_a=data["loc_a"],
        seed=data["seed"],
        n_mc=data["n_mc"],
        alpha_sweep=tuple(data["alpha_sweep"]),
    )


def write_report_row(path: Path, report: MetricReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["nll", "opm", "det_pr", "loc_a", "seed", "n_mc"])
        writer.writerow(
            [
                repr(report.nll),
                repr(report.opm),
                repr(report.det_pr),
                repr(report.loc_a),
                report.seed,
                report.n_mc,
            ]
        )


def write_histogram(path: Path, values: np.ndarray, bins: int = 30) -> None:
    """Binned counts of a value list, for plot-ready NLL histograms."""
    values = np.asarray(values, dtype=float)
    lo, hi = float(np.min(values)), float(np.max(values))
    if lo == hi:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    counts, _ = np.histogram(values, bins=edges)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_left", "bin_right", "count"])
        for i, c in enumerate(counts):
            writer.writerow([repr(float(edges[i])), repr(float(edges[i + 1])), int(c)])


# ---------------------------------------------------------------------------
# tuning history


def write_history(path: Path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_nll", "val_nll", "sigma_accel"])
        for row in rows:
            writer.writerow(
                [
                    row["epoch"],
                    repr(row["train_nll"]),
                    repr(row["val_nll"]),
                    repr(row["sigma_accel"]),
                ]
            )
