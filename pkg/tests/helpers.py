"""Shared fixtures-by-hand for the test suite: simple synthetic cameras."""

import numpy as np

from camtrack3d.geometry import CameraModel


def look_at_camera(position, target, cam_id="cam", focal=800.0,
                   image_size=(640, 480), up=(0.0, 0.0, 1.0)):
    """Build a pinhole camera at `position` looking at `target`."""
    pos = np.asarray(position, dtype=float)
    tgt = np.asarray(target, dtype=float)
    zc = tgt - pos
    zc = zc / np.linalg.norm(zc)
    up = np.asarray(up, dtype=float)
    xc = np.cross(zc, up)
    if np.linalg.norm(xc) < 1e-9:
        xc = np.cross(zc, np.array([1.0, 0.0, 0.0]))
    xc = xc / np.linalg.norm(xc)
    yc = np.cross(zc, xc)
    R = np.vstack([xc, yc, zc])
    w, h = image_size
    K = np.array([[focal, 0.0, w / 2.0],
                  [0.0, focal, h / 2.0],
                  [0.0, 0.0, 1.0]])
    P = K @ np.hstack([R, (-R @ pos)[:, None]])
    return CameraModel(projection=P, cam_id=cam_id, image_size=image_size)


def ring_of_cameras(n, radius=2.0, height=0.6, target=(0.0, 0.0, 0.3),
                    focal=800.0, image_size=(640, 480)):
    cams = []
    for i in range(n):
        a = 2.0 * np.pi * i / n
        pos = (radius * np.cos(a), radius * np.sin(a), height + 0.15 * (i % 3))
        cams.append(look_at_camera(pos, target, cam_id=f"c{i:02d}",
                                   focal=focal, image_size=image_size))
    return cams


def point_to_ray_distance(point, ray):
    w = np.asarray(point, dtype=float) - ray.origin
    return float(np.linalg.norm(w - (w @ ray.direction) * ray.direction))


def make_feature(u, v, area=20.0, peak=150.0, theta=0.0, ecc=2.0):
    from camtrack3d.features import Feature

    return Feature(u=float(u), v=float(v), u_raw=float(u), v_raw=float(v),
                   area=area, peak=peak, theta=theta, ecc=ecc)


def bruteforce_assignment(features_by_camera, targets, cameras, gate,
                          miss=2e-22):
    """Exhaustive maximum-likelihood assignment oracle.

    Scores every assignment matrix as the product over targets and cameras
    of the per-feature likelihood, with a fixed miss factor for null
    entries chosen below any in-gate likelihood (exp(-gate) is the floor of
    accepted values). Ties keep the first maximal matrix in enumeration
    order (null first, then feature indices ascending), matching the
    documented lowest-index tie-break.
    """
    import itertools

    from camtrack3d.association import feature_likelihood

    cams = sorted(cameras, key=lambda c: c.cam_id)
    per_target_columns = []
    for t in targets:
        options_per_cam = []
        for cam in cams:
            feats = features_by_camera.get(cam.cam_id, ())
            opts = [(None, miss)]
            opts += [(j, feature_likelihood(z, t, cam, gate))
                     for j, z in enumerate(feats)]
            options_per_cam.append(opts)
        cols = []
        for combo in itertools.product(*options_per_cam):
            idxs = tuple(j for j, _ in combo)
            score = 1.0
            for _, p in combo:
                score *= p
            cols.append((idxs, score))
        per_target_columns.append(cols)
    best_score, best = -1.0, None
    for assignment in itertools.product(*per_target_columns):
        score = 1.0
        for _, s in assignment:
            score *= s
        if score > best_score:
            best_score = score
            best = {t.target_id: col for t, (col, _) in zip(targets, assignment)}
    return best
