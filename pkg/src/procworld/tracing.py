"""Sphere tracing against field programs.

Used for cheap camera probes and as an oracle independent of any mesh.
"""

from __future__ import annotations

import numpy as np

from .camera import CameraModel


def sphere_trace(
    sdf,
    origins: np.ndarray,
    directions: np.ndarray,
    t_max: float,
    *,
    t_min: float = 0.0,
    lipschitz: float = 1.0,
    eps: float = 1e-4,
    max_steps: int = 512,
    refine: bool = True,
    bisect_iters: int = 40,
    eps_rel: float = 0.0,
) -> np.ndarray:
    """Distance along each unit ray to the first zero crossing, inf on miss.

    Steps by ``|sdf| / lipschitz``.  A ray stops once ``|sdf| < eps +
    eps_rel * t`` (``eps_rel`` > 0 gives cone tracing) or when a step lands on
    the far side of the surface; the latter crossings are refined by bisection.
    """
    o = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    d = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    if len(o) == 1 and len(d) > 1:
        o = np.broadcast_to(o, d.shape)
    n = len(d)
    t = np.full(n, float(t_min))
    out = np.full(n, np.inf)
    prev_t = t.copy()
    finished = np.zeros(n, bool)
    active = np.arange(n)
    v = sdf(o + d * t[:, None])
    sign0 = np.sign(v)
    sign0[sign0 == 0] = 1
    for _ in range(max_steps):
        if len(active) == 0:
            break
        va = v[active]
        done = np.abs(va) < eps + eps_rel * t[active]
        crossed = np.sign(va) != sign0[active]
        fin = done | crossed
        finished[active[fin]] = True
        active = active[~fin]
        if len(active) == 0:
            break
        prev_t[active] = t[active]
        t[active] += np.maximum(np.abs(v[active]) / lipschitz, eps * 0.5)
        active = active[t[active] <= t_max]
        if len(active):
            v[active] = sdf(o[active] + d[active] * t[active, None])
    idx = np.nonzero(finished)[0]
    if len(idx):
        # brackets are refined together: one batched evaluation per iteration
        out[idx] = _bisect(sdf, o[idx], d[idx], prev_t[idx], t[idx], sign0[idx], bisect_iters) if refine else t[idx]
    return out


def _bisect(sdf, o, d, lo, hi, sign0, iters=40):
    lo, hi = lo.copy(), hi.copy()
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        vm = sdf(o + d * mid[:, None])
        same = np.sign(vm) == sign0
        same &= vm != 0
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
    return hi


def trace_camera(sdf, camera: CameraModel, **kw) -> np.ndarray:
    """Per-pixel ray distance to the SDF surface, ``(H, W)``, inf on miss."""
    rays = camera.pixel_rays().reshape(-1, 3)
    dirs = rays / np.linalg.norm(rays, axis=1, keepdims=True)
    world = dirs @ camera.rotation
    kw.setdefault("t_min", camera.near)
    dist = sphere_trace(sdf, camera.position[None, :], world, camera.far, **kw)
    return dist.reshape(camera.height, camera.width)
