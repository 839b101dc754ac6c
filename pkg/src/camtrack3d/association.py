"""Nearest-neighbor data association with two-stage gating, track-merge
prevention, combinatorial track birth and covariance-threshold death.

Per target and camera, the most likely feature is selected by a likelihood
that multiplies two cheap indicator gates (image distance, blob area) with
exp(-d) where d is the Mahalanobis distance between the back-projected
pixel ray and the predicted 3D position. The indicators are evaluated
first so the ray test only runs for plausible pairings.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .features import Feature
from .geometry import (
    BehindCamera,
    CameraModel,
    DegenerateGeometry,
    PointAtInfinity,
    Ray3,
    pixel_ray,
    project,
    triangulate,
)
from .tracker import TargetState

_COND_LIMIT = 1e12


class SingularCovariance(Exception):
    """Position covariance is not invertible within tolerance."""


@dataclass
class GateConfig:
    """Gating and track-lifecycle thresholds. All configurable; defaults
    suit the desk-scale simulated rigs."""

    dist2d_threshold: float = 30.0        # px
    area_threshold: float = 1.0           # px^2, strict 'greater than'
    mahalanobis_gate: float = 5.0         # cap on accepted ray distance
    birth_reprojection_threshold: float = 1.5   # px
    death_covariance_threshold: float = 0.004   # m^2, max position eigenvalue
    min_birth_cameras: int = 2
    birth_miss_tolerance: int = 1         # cameras allowed silent at birth
    sigma_birth: float = 0.01             # m, new-track position stddev
    sigma_vbirth: float = 1.0             # m/s, new-track velocity stddev
    birth_pair_distance: float = 0.03     # m, pairwise ray-consistency prune

    def __post_init__(self):
        for name in ("dist2d_threshold", "area_threshold", "mahalanobis_gate",
                     "birth_reprojection_threshold", "death_covariance_threshold",
                     "sigma_birth", "sigma_vbirth", "birth_pair_distance"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.birth_miss_tolerance < 0:
            raise ValueError("birth_miss_tolerance must be nonnegative")


@dataclass
class LikelihoodCounters:
    """Instrumentation: how often each gating stage actually ran."""

    dist2d_evals: int = 0
    area_evals: int = 0
    mahalanobis_evals: int = 0


@dataclass
class SpawnStats:
    """Instrumentation for the birth search."""

    camera_combinations: int = 0
    hypotheses_triangulated: int = 0
    passes: int = 0


def mahalanobis_closest_point(ray: Ray3, center, cov) -> tuple[np.ndarray, float]:
    """Minimize the Mahalanobis distance from `center` (covariance `cov`)
    over points of the ray; closed form via the zero of the derivative of
    the quadratic in the ray parameter. Returns (closest point, distance)."""
    center = np.asarray(center, dtype=float).reshape(3)
    cov = np.asarray(cov, dtype=float).reshape(3, 3)
    if not np.all(np.isfinite(cov)) or np.linalg.cond(cov) > _COND_LIMIT:
        raise SingularCovariance("position covariance condition too high")
    try:
        Sd = np.linalg.solve(cov, ray.direction)
        Sw = np.linalg.solve(cov, center - ray.origin)
    except np.linalg.LinAlgError as e:
        raise SingularCovariance(str(e)) from e
    denom = float(ray.direction @ Sd)
    if denom <= 0:
        raise SingularCovariance("covariance not positive definite along ray")
    s = float(ray.direction @ Sw) / denom
    point = ray.point_at(s)
    diff = point - center
    d2 = float(diff @ np.linalg.solve(cov, diff))
    return point, math.sqrt(max(0.0, d2))


def feature_likelihood(z: Feature, target: TargetState, cam: CameraModel,
                       gate: GateConfig,
                       counters: LikelihoodCounters | None = None) -> float:
    """Likelihood that feature `z` arose from `target` seen by `cam`.

    Returns 0 when the image-distance or area gate fails (the Mahalanobis
    stage is not evaluated in that case) or when the ray distance exceeds
    the gate; otherwise exp(-d_mahal).
    """
    try:
        pu, pv = project(cam, target.position)
    except (BehindCamera, PointAtInfinity):
        return 0.0
    if counters is not None:
        counters.dist2d_evals += 1
    if math.hypot(z.u - pu, z.v - pv) >= gate.dist2d_threshold:
        return 0.0
    if counters is not None:
        counters.area_evals += 1
    if not z.area > gate.area_threshold:
        return 0.0
    if counters is not None:
        counters.mahalanobis_evals += 1
    try:
        ray = pixel_ray(cam, (z.u, z.v))
        _, d = mahalanobis_closest_point(ray, target.position, target.cov[:3, :3])
    except (DegenerateGeometry, SingularCovariance):
        return 0.0
    if d > gate.mahalanobis_gate:
        return 0.0
    return math.exp(-d)


@dataclass(frozen=True)
class AssignmentMatrix:
    """Per-target assignment columns: one entry per camera (in camera-id
    order), each a feature index into that camera's feature list or None."""

    camera_ids: tuple[str, ...]
    columns: dict[int, tuple[int | None, ...]]

    def claimed(self) -> set[tuple[str, int]]:
        used = set()
        for col in self.columns.values():
            for cam_id, idx in zip(self.camera_ids, col):
                if idx is not None:
                    used.add((cam_id, idx))
        return used


def assign(features_by_camera: Mapping[str, Sequence[Feature]],
           targets: Sequence[TargetState],
           cameras: Sequence[CameraModel],
           gate: GateConfig,
           counters: LikelihoodCounters | None = None) -> AssignmentMatrix:
    """Nearest-neighbor assignment: per target and camera, the feature
    maximizing the likelihood (None when every feature gates to zero).
    Ties break to the lowest feature index."""
    cams = sorted(cameras, key=lambda c: c.cam_id)
    columns: dict[int, tuple[int | None, ...]] = {}
    for target in targets:
        col = []
        for cam in cams:
            feats = features_by_camera.get(cam.cam_id, ())
            best_idx, best_p = None, 0.0
            for j, z in enumerate(feats):
                p = feature_likelihood(z, target, cam, gate, counters)
                if p > best_p:
                    best_idx, best_p = j, p
            col.append(best_idx)
        columns[target.target_id] = tuple(col)
    return AssignmentMatrix(camera_ids=tuple(c.cam_id for c in cams),
                            columns=columns)


def resolve_shared(assignments: AssignmentMatrix,
                   targets: Sequence[TargetState],
                   features_by_camera: Mapping[str, Sequence[Feature]],
                   cameras: Sequence[CameraModel]) -> AssignmentMatrix:
    """Merge prevention: when several targets hold the exact same non-null
    assignment subset, the one whose predicted observation is closest
    (summed image distance) keeps it; the others are stripped to all-null
    for this frame. Ties break to the lowest target id."""
    cams = {c.cam_id: c for c in cameras}
    by_id = {t.target_id: t for t in targets}
    groups: dict[tuple, list[int]] = {}
    for tid, col in assignments.columns.items():
        if any(idx is not None for idx in col):
            groups.setdefault(col, []).append(tid)
    columns = dict(assignments.columns)
    null_col = (None,) * len(assignments.camera_ids)
    for col, tids in groups.items():
        if len(tids) < 2:
            continue

        def prediction_distance(tid: int) -> float:
            target = by_id[tid]
            total = 0.0
            for cam_id, idx in zip(assignments.camera_ids, col):
                if idx is None:
                    continue
                z = features_by_camera[cam_id][idx]
                try:
                    pu, pv = project(cams[cam_id], target.position)
                except (BehindCamera, PointAtInfinity):
                    return math.inf
                total += math.hypot(z.u - pu, z.v - pv)
            return total

        winner = min(sorted(tids), key=prediction_distance)
        for tid in tids:
            if tid != winner:
                columns[tid] = null_col
    return replace(assignments, columns=columns)


def gate_claimed_features(features_by_camera: Mapping[str, Sequence[Feature]],
                          targets: Sequence[TargetState],
                          cameras: Sequence[CameraModel],
                          gate: GateConfig) -> set[tuple[str, int]]:
    """Features plausibly explained by an existing target: inside its
    image-distance gate AND with a back-projected ray passing the target's
    3D Mahalanobis gate.

    Such features are considered claimed by that prediction even when the
    target selected a different (more likely) feature, so they must not
    seed new tracks: a near-duplicate birth next to a live target would
    fight it for measurements and fragment the trajectory. The ray test
    keeps the claim local in 3D; a feature that merely projects near a
    distant track along its viewing ray stays available for births.
    """
    claimed: set[tuple[str, int]] = set()
    if not targets:
        return claimed
    for cam in cameras:
        feats = features_by_camera.get(cam.cam_id, ())
        if not feats:
            continue
        for target in targets:
            try:
                pu, pv = project(cam, target.position)
            except (BehindCamera, PointAtInfinity):
                continue
            for j, z in enumerate(feats):
                if (cam.cam_id, j) in claimed:
                    continue
                if math.hypot(z.u - pu, z.v - pv) >= gate.dist2d_threshold:
                    continue
                try:
                    ray = pixel_ray(cam, (z.u, z.v))
                    _, d = mahalanobis_closest_point(ray, target.position,
                                                     target.cov[:3, :3])
                except (DegenerateGeometry, SingularCovariance):
                    continue
                if d <= gate.mahalanobis_gate:
                    claimed.add((cam.cam_id, j))
    return claimed


def _cameras_viewing(point, cameras: Sequence[CameraModel]) -> int:
    """How many cameras have `point` in front of them and inside the image."""
    n = 0
    for cam in cameras:
        try:
            u, v = project(cam, point)
        except (BehindCamera, PointAtInfinity):
            continue
        w, h = cam.image_size
        if 0 <= u <= w and 0 <= v <= h:
            n += 1
    return n


def _ray_ray_distance(r1: Ray3, r2: Ray3) -> float:
    """Minimum Euclidean distance between two lines."""
    w0 = r1.origin - r2.origin
    b = float(r1.direction @ r2.direction)
    d = float(r1.direction @ w0)
    e = float(r2.direction @ w0)
    denom = 1.0 - b * b
    if denom < 1e-12:  # parallel
        return float(np.linalg.norm(w0 - d * r1.direction))
    s = (b * e - d) / denom
    t = (e - b * d) / denom
    return float(np.linalg.norm(r1.point_at(s) - r2.point_at(t)))


def spawn_targets(unclaimed_by_camera: Mapping[str, Sequence[tuple[int, Feature]]],
                  cameras: Sequence[CameraModel],
                  gate: GateConfig,
                  frame_number: int,
                  next_id: int,
                  stats: SpawnStats | None = None
                  ) -> tuple[list[TargetState], set[tuple[str, int]]]:
    """Hypothesize new targets from features no existing track claimed.

    Every camera combination of size min_birth_cameras..n is enumerated;
    within a combination, feature tuples (one per camera) are grown
    depth-first with a pairwise ray-consistency prune, then triangulated.
    A hypothesis is acceptable when its mean reprojection error is below
    the birth threshold AND it is supported by nearly every camera able to
    see the hypothesized point (all but `birth_miss_tolerance` of them):
    with detection thresholds set low a real target is seen by almost all
    covering cameras, whereas clutter coincidences and mixed-target
    phantom points muster only two or three consistent rays. The
    acceptable hypothesis with the most cameras wins, ties broken by
    smaller error then lexicographic feature choice; its features are
    consumed and the search repeats until nothing acceptable remains.

    `unclaimed_by_camera` maps camera id to (feature index, feature) pairs;
    returns the new targets and the set of consumed (camera id, index).
    """
    cams = sorted(cameras, key=lambda c: c.cam_id)
    pool: dict[str, list[tuple[int, Feature]]] = {
        c.cam_id: list(unclaimed_by_camera.get(c.cam_id, ())) for c in cams}
    rays: dict[tuple[str, int], Ray3] = {}

    def ray_of(cam: CameraModel, idx: int, z: Feature) -> Ray3 | None:
        key = (cam.cam_id, idx)
        if key not in rays:
            try:
                rays[key] = pixel_ray(cam, (z.u, z.v))
            except DegenerateGeometry:
                return None
        return rays[key]

    born: list[TargetState] = []
    used: set[tuple[str, int]] = set()
    min_size = max(2, gate.min_birth_cameras)

    while True:
        if stats is not None:
            stats.passes += 1
        best = None  # (-n_cams, err, cam_ids, idx tuple, point)
        for size in range(len(cams), min_size - 1, -1):
            for combo in itertools.combinations(cams, size):
                if stats is not None:
                    stats.camera_combinations += 1
                for choice in _consistent_tuples(combo, pool, ray_of, gate):
                    views = [(cam, (z.u, z.v)) for cam, _, z in choice]
                    if stats is not None:
                        stats.hypotheses_triangulated += 1
                    try:
                        point, err = triangulate(views)
                    except DegenerateGeometry:
                        continue
                    if err >= gate.birth_reprojection_threshold:
                        continue
                    viewing = _cameras_viewing(point, cams)
                    if size < viewing - gate.birth_miss_tolerance:
                        continue
                    key = (-size, err, tuple((cam.cam_id, idx) for cam, idx, _ in choice))
                    if best is None or key < best[0]:
                        best = (key, point, choice)
        if best is None:
            break
        _, point, choice = best
        cov = np.diag([gate.sigma_birth**2] * 3 + [gate.sigma_vbirth**2] * 3)
        born.append(TargetState(target_id=next_id,
                                mean=np.append(point, [0.0, 0.0, 0.0]),
                                cov=cov, frames_since_observation=0,
                                born_at=frame_number))
        next_id += 1
        for cam, idx, _ in choice:
            used.add((cam.cam_id, idx))
            pool[cam.cam_id] = [(i, z) for i, z in pool[cam.cam_id] if i != idx]
    return born, used


def _consistent_tuples(combo, pool, ray_of, gate):
    """Depth-first enumeration of one-feature-per-camera choices over a
    camera combination, pruning pairs whose back-projected rays pass
    farther apart than the birth consistency distance."""
    combo = list(combo)

    def grow(level, chosen):
        if level == len(combo):
            yield list(chosen)
            return
        cam = combo[level]
        for idx, z in pool[cam.cam_id]:
            ray = ray_of(cam, idx, z)
            if ray is None:
                continue
            ok = True
            for pcam, pidx, pz in chosen:
                pray = ray_of(pcam, pidx, pz)
                if pray is None or _ray_ray_distance(ray, pray) >= gate.birth_pair_distance:
                    ok = False
                    break
            if ok:
                chosen.append((cam, idx, z))
                yield from grow(level + 1, chosen)
                chosen.pop()

    yield from grow(0, [])


def cull_targets(targets: Sequence[TargetState], gate: GateConfig
                 ) -> tuple[list[TargetState], list[TargetState]]:
    """Split targets into (kept, removed): removed when the largest
    eigenvalue of the position covariance block exceeds the death
    threshold."""
    kept, removed = [], []
    for t in targets:
        if np.linalg.eigvalsh(t.cov[:3, :3])[-1] > gate.death_covariance_threshold:
            removed.append(t)
        else:
            kept.append(t)
    return kept, removed
