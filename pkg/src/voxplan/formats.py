"""Bit-exact file formats and wire objects.

Floats are serialized as shortest round-trip decimals (json default), so
parse(serialize(x)) reproduces every value exactly. The corridor checksum
hashes raw IEEE-754 little-endian bytes and is the cross-language mirror
contract of the teach protocol.
"""
from __future__ import annotations

import hashlib
import json
import struct
from typing import Optional

import numpy as np

from .corridor import Polyhedron
from .curves import BezierPiece, BSplineTrajectory, PiecewiseBezier
from .grid import MapRecipe, OccupancyGrid
from .replan import ReplanConfig
from .sim import Injection, RunLog, Scenario
from .planner import DescentConfig
from .temporal import KinodynamicLimits, TimeMap


def dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"))


# ---------------------------------------------------------------------------
# occupancy map: text header + run-length-encoded occupancy, x-fastest

def serialize_map(grid: OccupancyGrid) -> str:
    o = [float(c) for c in grid.origin]
    lines = ["voxmap 1",
             f"resolution {float(grid.resolution)!r}",
             f"dims {grid.dims[0]} {grid.dims[1]} {grid.dims[2]}",
             f"origin {o[0]!r} {o[1]!r} {o[2]!r}",
             "rle"]
    flat = grid.occupancy.transpose(2, 1, 0).ravel()  # x varies fastest
    runs = []
    value = bool(flat[0])
    count = 0
    for v in flat:
        if bool(v) == value:
            count += 1
        else:
            runs.append((value, count))
            value = bool(v)
            count = 1
    runs.append((value, count))
    lines.extend(f"{int(v)} {c}" for v, c in runs)
    lines.append("end")
    return "\n".join(lines) + "\n"


def parse_map(text: str) -> OccupancyGrid:
    lines = text.strip().splitlines()
    if not lines or lines[0].split() != ["voxmap", "1"]:
        raise ValueError("not a voxmap file")
    resolution = None
    dims = None
    origin = None
    i = 1
    while i < len(lines) and lines[i] != "rle":
        key, *vals = lines[i].split()
        if key == "resolution":
            resolution = float(vals[0])
        elif key == "dims":
            dims = tuple(int(v) for v in vals)
        elif key == "origin":
            origin = np.array([float(v) for v in vals])
        else:
            raise ValueError(f"unknown map header field {key!r}")
        i += 1
    if resolution is None or dims is None or origin is None or i >= len(lines):
        raise ValueError("incomplete voxmap header")
    flat = np.empty(dims[0] * dims[1] * dims[2], dtype=bool)
    pos = 0
    for line in lines[i + 1:]:
        if line == "end":
            break
        v, c = line.split()
        flat[pos:pos + int(c)] = bool(int(v))
        pos += int(c)
    if pos != flat.size:
        raise ValueError(f"RLE covers {pos} voxels, expected {flat.size}")
    occ = flat.reshape(dims[2], dims[1], dims[0]).transpose(2, 1, 0)
    return OccupancyGrid(dims, resolution, origin, occ)


# ---------------------------------------------------------------------------
# timestamped path

def serialize_path(times, points) -> str:
    entries = [{"t": float(t), "x": float(p[0]), "y": float(p[1]),
                "z": float(p[2])} for t, p in zip(times, points)]
    return dumps(entries)


def parse_path(text: str):
    data = json.loads(text)
    times = [e["t"] for e in data]
    points = np.array([[e["x"], e["y"], e["z"]] for e in data])
    return times, points


# ---------------------------------------------------------------------------
# corridor

def polyhedron_to_obj(poly: Polyhedron) -> dict:
    return {
        "halfspaces": [{"a": [float(a) for a in n], "k": float(k)}
                       for n, k in zip(poly.normals, poly.offsets)],
        "vertices": [[float(c) for c in v] for v in poly.vertices],
    }


def polyhedron_from_obj(obj: dict) -> Polyhedron:
    normals = np.array([h["a"] for h in obj["halfspaces"]], dtype=float)
    offsets = np.array([h["k"] for h in obj["halfspaces"]], dtype=float)
    vertices = np.array(obj["vertices"], dtype=float).reshape(-1, 3)
    return Polyhedron(normals=normals, offsets=offsets, vertices=vertices)


def corridor_to_obj(corridor) -> dict:
    return {
        "start": [float(c) for c in corridor.start],
        "end": [float(c) for c in corridor.end],
        "transition_points": [[float(c) for c in p]
                              for p in corridor.transition_points],
        "polyhedra": [polyhedron_to_obj(p) for p in corridor.polyhedra],
    }


def serialize_corridor(corridor) -> str:
    return dumps(corridor_to_obj(corridor))


class CorridorFile:
    """Parsed corridor artifact (clusters are not persisted)."""

    def __init__(self, polyhedra, start, end, transition_points):
        self.polyhedra = polyhedra
        self.start = np.asarray(start, dtype=float)
        self.end = np.asarray(end, dtype=float)
        self.transition_points = [np.asarray(p, dtype=float)
                                  for p in transition_points]

    def __len__(self):
        return len(self.polyhedra)

    def contains(self, p, tol: float = 1e-9) -> bool:
        return any(poly.contains(p, tol) for poly in self.polyhedra)


def parse_corridor(text: str) -> CorridorFile:
    obj = json.loads(text)
    return CorridorFile(
        polyhedra=[polyhedron_from_obj(p) for p in obj["polyhedra"]],
        start=obj["start"], end=obj["end"],
        transition_points=obj.get("transition_points", []))


def corridor_checksum(polyhedra) -> str:
    """SHA-256 over f64le values of every polyhedron, in corridor order."""
    h = hashlib.sha256()
    for poly in polyhedra:
        h.update(struct.pack("<I", len(poly.offsets)))
        for n, k in zip(poly.normals, poly.offsets):
            h.update(struct.pack("<dddd", n[0], n[1], n[2], k))
        h.update(struct.pack("<I", len(poly.vertices)))
        for v in poly.vertices:
            h.update(struct.pack("<ddd", v[0], v[1], v[2]))
    return h.hexdigest()


# ---------------------------------------------------------------------------
# piecewise Bezier trajectory

def trajectory_to_obj(traj: PiecewiseBezier) -> dict:
    return {
        "degree": traj.degree,
        "pieces": [{
            "duration": float(p.duration),
            "ctrl": {axis: [float(c) for c in p.ctrl[:, i]]
                     for i, axis in enumerate("xyz")},
        } for p in traj.pieces],
    }


def serialize_trajectory(traj: PiecewiseBezier) -> str:
    return dumps(trajectory_to_obj(traj))


def parse_trajectory(text: str) -> PiecewiseBezier:
    obj = json.loads(text)
    pieces = []
    for p in obj["pieces"]:
        ctrl = np.column_stack([p["ctrl"]["x"], p["ctrl"]["y"], p["ctrl"]["z"]])
        pieces.append(BezierPiece(ctrl, p["duration"]))
    return PiecewiseBezier(pieces)


# ---------------------------------------------------------------------------
# B-spline

def spline_to_obj(spline: BSplineTrajectory) -> dict:
    return {
        "degree": spline.degree,
        "knots": [float(t) for t in spline.knots],
        "ctrl": [[float(c) for c in q] for q in spline.ctrl],
    }


def serialize_spline(spline: BSplineTrajectory) -> str:
    return dumps(spline_to_obj(spline))


def parse_spline(text: str) -> BSplineTrajectory:
    obj = json.loads(text)
    return BSplineTrajectory(obj["degree"], np.array(obj["ctrl"]),
                             np.array(obj["knots"]))


# ---------------------------------------------------------------------------
# time map

def timemap_to_obj(tmap: TimeMap) -> dict:
    return {
        "rho": float(tmap.rho),
        "pieces": [{
            "beta": [float(b) for b in tmap.beta[m]],
            "alpha": [float(a) for a in tmap.alpha[m]],
            "dt": [float(d) for d in tmap.dt[m]],
        } for m in range(len(tmap.beta))],
        "durations_new": [float(d) for d in tmap.durations_new],
        "durations_old": [float(d) for d in tmap.durations_old],
    }


def parse_timemap(obj_or_text) -> TimeMap:
    obj = json.loads(obj_or_text) if isinstance(obj_or_text, str) else obj_or_text
    return TimeMap(
        beta=[np.array(p["beta"]) for p in obj["pieces"]],
        alpha=[np.array(p["alpha"]) for p in obj["pieces"]],
        dt=[np.array(p["dt"]) for p in obj["pieces"]],
        durations_new=np.array(obj["durations_new"]),
        durations_old=np.array(obj["durations_old"]),
        rho=obj["rho"])


# ---------------------------------------------------------------------------
# run log: line-delimited records

def serialize_runlog(log: RunLog) -> str:
    lines = [dumps({"line": "meta", **log.meta})]
    lines.extend(dumps({"line": "event", **e}) for e in log.events)
    lines.extend(dumps({"line": "record", **r}) for r in log.records)
    return "\n".join(lines) + "\n"


def parse_runlog(text: str) -> RunLog:
    meta = {}
    events = []
    records = []
    for line in text.strip().splitlines():
        obj = json.loads(line)
        kind = obj.pop("line")
        if kind == "meta":
            meta = obj
        elif kind == "event":
            events.append(obj)
        elif kind == "record":
            records.append(obj)
        else:
            raise ValueError(f"unknown runlog line kind {kind!r}")
    return RunLog(records=records, events=events, meta=meta)


# ---------------------------------------------------------------------------
# scenario

def scenario_to_obj(s: Scenario) -> dict:
    r = s.recipe
    return {
        "recipe": {
            "seed": r.seed, "dims": list(r.dims), "resolution": r.resolution,
            "origin": list(r.origin), "n_blocks": r.n_blocks,
            "block_size": list(r.block_size), "n_walls": r.n_walls,
            "arch_size": list(r.arch_size), "n_rings": r.n_rings,
            "ring_inner_diameter": r.ring_inner_diameter,
            "ring_thickness": r.ring_thickness, "n_tunnels": r.n_tunnels,
            "tunnel_bore": r.tunnel_bore, "tunnel_length": r.tunnel_length,
            "density": r.density,
            "ring_centers": r.ring_centers,
            "clear_boxes": [[list(lo), list(hi)] for lo, hi in r.clear_boxes],
        },
        "teach_times": [float(t) for t in s.teach_times],
        "teach_points": [[float(c) for c in p] for p in s.teach_points],
        "limits": {"v_max": s.limits.v_max, "a_max": s.limits.a_max,
                   "delta_alpha": s.limits.delta_alpha},
        "descent": {"w_time": s.descent.w_time, "rho": s.descent.rho,
                    "dt": s.descent.dt, "max_rounds": s.descent.max_rounds,
                    "tolerance": s.descent.tolerance,
                    "degree": s.descent.degree},
        "replan": {"horizon": s.replan.horizon,
                   "check_rate": s.replan.check_rate,
                   "clearance": s.replan.clearance,
                   "trigger": s.replan.trigger,
                   "lambda_smooth": s.replan.lambda_smooth,
                   "lambda_collision": s.replan.lambda_collision,
                   "lambda_feasible": s.replan.lambda_feasible,
                   "alpha_stretch": s.replan.alpha_stretch,
                   "span": s.replan.span},
        "injections": [{"time": i.time, "kind": i.kind,
                        "center": list(i.center), "size": list(i.size),
                        "inner_diameter": i.inner_diameter}
                       for i in s.injections],
        "tick_rate": s.tick_rate,
        "tracker_lag": s.tracker_lag,
        "sensing_range": s.sensing_range,
        "drift": list(s.drift) if s.drift is not None else None,
    }


def parse_scenario(text: str) -> Scenario:
    obj = json.loads(text)
    r = obj["recipe"]
    recipe = MapRecipe(
        seed=r["seed"], dims=tuple(r["dims"]), resolution=r["resolution"],
        origin=tuple(r["origin"]), n_blocks=r["n_blocks"],
        block_size=tuple(r["block_size"]), n_walls=r["n_walls"],
        arch_size=tuple(r["arch_size"]), n_rings=r["n_rings"],
        ring_inner_diameter=r["ring_inner_diameter"],
        ring_thickness=r["ring_thickness"], n_tunnels=r["n_tunnels"],
        tunnel_bore=r["tunnel_bore"], tunnel_length=r["tunnel_length"],
        density=r["density"], ring_centers=r.get("ring_centers"),
        clear_boxes=[(tuple(lo), tuple(hi))
                     for lo, hi in r.get("clear_boxes", [])])
    limits = KinodynamicLimits(**obj["limits"])
    descent = DescentConfig(**obj["descent"])
    replan = ReplanConfig(**obj["replan"])
    injections = [Injection(time=i["time"], kind=i["kind"],
                            center=tuple(i["center"]), size=tuple(i["size"]),
                            inner_diameter=i["inner_diameter"])
                  for i in obj["injections"]]
    return Scenario(recipe=recipe, teach_times=obj["teach_times"],
                    teach_points=obj["teach_points"], limits=limits,
                    descent=descent, replan=replan, injections=injections,
                    tick_rate=obj["tick_rate"],
                    tracker_lag=obj["tracker_lag"],
                    sensing_range=obj["sensing_range"],
                    drift=tuple(obj["drift"]) if obj.get("drift") else None)
