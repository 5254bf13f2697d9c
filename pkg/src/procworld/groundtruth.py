"""Geometry-exact ground truth from a software z-buffer rasterizer.

Depth is solved per pixel by intersecting the pixel-center ray with the
winning triangle's plane, so it is exact for the mesh rather than
interpolated.  Derived layers (occlusion boundaries, plane-fit normals,
segmentation, flow, disparity) are pure functions of the :class:`FrameBuffer`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import CameraModel
from .mesh import Mesh, merge

TAU_REL = 0.03


@dataclass(eq=False)
class FrameBuffer:
    camera: CameraModel
    depth: np.ndarray  # z-depth, inf on miss
    distance: np.ndarray  # along-ray euclidean distance, inf on miss
    face_id: np.ndarray  # -1 on miss
    instance_id: np.ndarray
    object_id: np.ndarray
    barycentrics: np.ndarray  # (H, W, 3)
    planes: np.ndarray = field(repr=False, default=None)  # (F, 4) camera-frame n, d with n.x = d

    @property
    def hit(self) -> np.ndarray:
        return self.face_id >= 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape


def _clip_near(vc: np.ndarray, faces: np.ndarray, near: float):
    """Clip camera-frame triangles against ``z = near``; returns (tris, source face)."""
    z = vc[faces][:, :, 2]
    front = (z >= near).all(axis=1)
    cross = ~front & (z >= near).any(axis=1)
    tris = [vc[faces[front]]]
    src = [np.nonzero(front)[0]]
    for f in np.nonzero(cross)[0]:
        poly = []
        p = vc[faces[f]]
        for a in range(3):
            pa, pb = p[a], p[(a + 1) % 3]
            ina, inb = pa[2] >= near, pb[2] >= near
            if ina:
                poly.append(pa)
            if ina != inb:
                t = (near - pa[2]) / (pb[2] - pa[2])
                poly.append(pa + t * (pb - pa))
        for k in range(1, len(poly) - 1):
            tris.append(np.array([[poly[0], poly[k], poly[k + 1]]]))
            src.append(np.array([f]))
    return np.concatenate(tris), np.concatenate(src)


def rasterize(meshes, camera: CameraModel, chunk_pairs: int = 1 << 22) -> FrameBuffer:
    """Z-buffer the meshes at pixel centers.

    Face ids index the faces of ``merge(meshes)``.  The nearest surface wins;
    exact depth ties go to the lower face id, so results do not depend on
    submission order.
    """
    mesh = meshes if isinstance(meshes, Mesh) else merge(list(meshes))
    H, W = camera.height, camera.width
    best_z = np.full(H * W, np.inf)
    best_f = np.full(H * W, -1, np.int64)
    vc = camera.world_to_camera(mesh.vertices)
    planes = np.zeros((mesh.n_faces, 4))
    if mesh.n_faces:
        tri_c = vc[mesh.faces]
        n = np.cross(tri_c[:, 1] - tri_c[:, 0], tri_c[:, 2] - tri_c[:, 0])
        n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)
        planes = np.concatenate([n, np.einsum("ij,ij->i", n, tri_c[:, 0])[:, None]], axis=1)
    if mesh.n_faces:
        tris, src = _clip_near(vc, mesh.faces, camera.near * 0.999)
    else:
        tris, src = np.zeros((0, 3, 3)), np.zeros(0, np.int64)

    f = camera.focal_px
    cx, cy = camera.principal_point
    if len(tris):
        uv = np.stack([f * tris[..., 0] / tris[..., 2] + cx, f * tris[..., 1] / tris[..., 2] + cy], axis=-1)
        u0 = np.clip(np.ceil(uv[..., 0].min(axis=1) - 0.5), 0, W).astype(np.int64)
        u1 = np.clip(np.floor(uv[..., 0].max(axis=1) - 0.5), -1, W - 1).astype(np.int64)
        v0 = np.clip(np.ceil(uv[..., 1].min(axis=1) - 0.5), 0, H).astype(np.int64)
        v1 = np.clip(np.floor(uv[..., 1].max(axis=1) - 0.5), -1, H - 1).astype(np.int64)
        bw = np.maximum(u1 - u0 + 1, 0)
        bh = np.maximum(v1 - v0 + 1, 0)
        counts = bw * bh
        order = np.nonzero(counts)[0]
        csum = np.cumsum(counts[order])
        start = 0
        while start < len(order):
            base = csum[start - 1] if start else 0
            stop = int(np.searchsorted(csum, base + chunk_pairs, side="right"))
            stop = max(stop, start + 1)
            sel = order[start:stop]
            _raster_chunk(sel, counts, u0, v0, bw, uv, tris, src, planes, camera, best_z, best_f)
            start = stop

    face = best_f.reshape(H, W)
    hit = face >= 0
    rays = camera.pixel_rays()
    depth = best_z.reshape(H, W)
    distance = np.where(hit, depth * np.linalg.norm(rays, axis=-1), np.inf)
    inst = np.full((H, W), -1, np.int32)
    obj = np.full((H, W), -1, np.int32)
    inst[hit] = mesh.instance_ids[face[hit]]
    obj[hit] = mesh.object_ids[face[hit]]
    bary = np.zeros((H, W, 3))
    if hit.any():
        p = rays[hit] * depth[hit][:, None]
        tri = vc[mesh.faces[face[hit]]]
        bary[hit] = _barycentric3(p, tri)
    return FrameBuffer(camera, depth, distance, face, inst, obj, bary, planes)


def _barycentric3(p, tri):
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    v0, v1, v2 = b - a, c - a, p - a
    d00 = np.einsum("ij,ij->i", v0, v0)
    d01 = np.einsum("ij,ij->i", v0, v1)
    d11 = np.einsum("ij,ij->i", v1, v1)
    d20 = np.einsum("ij,ij->i", v2, v0)
    d21 = np.einsum("ij,ij->i", v2, v1)
    den = d00 * d11 - d01 * d01
    den = np.where(den == 0, 1.0, den)
    w1 = (d11 * d20 - d01 * d21) / den
    w2 = (d00 * d21 - d01 * d20) / den
    return np.stack([1 - w1 - w2, w1, w2], axis=1)


def _raster_chunk(sel, counts, u0, v0, bw, uv, tris, src, planes, camera, best_z, best_f):
    W = camera.width
    c = counts[sel]
    t = np.repeat(sel, c)
    offs = np.arange(len(t)) - np.repeat(np.cumsum(c) - c, c)
    px = u0[t] + offs % bw[t]
    py = v0[t] + offs // bw[t]
    x = px + 0.5
    y = py + 0.5
    a, b, d = uv[t, 0], uv[t, 1], uv[t, 2]
    area = (b[:, 0] - a[:, 0]) * (d[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (d[:, 0] - a[:, 0])
    w0 = (b[:, 0] - x) * (d[:, 1] - y) - (b[:, 1] - y) * (d[:, 0] - x)
    w1 = (d[:, 0] - x) * (a[:, 1] - y) - (d[:, 1] - y) * (a[:, 0] - x)
    w2 = (a[:, 0] - x) * (b[:, 1] - y) - (a[:, 1] - y) * (b[:, 0] - x)
    sgn = np.sign(area)
    eps = -1e-9 * np.abs(area)
    inside = (area != 0) & (w0 * sgn >= eps) & (w1 * sgn >= eps) & (w2 * sgn >= eps)
    if not inside.any():
        return
    t, px, py = t[inside], px[inside], py[inside]
    face = src[t]
    f = camera.focal_px
    cx, cy = camera.principal_point
    dx = (px + 0.5 - cx) / f
    dy = (py + 0.5 - cy) / f
    pl = planes[face]
    denom = pl[:, 0] * dx + pl[:, 1] * dy + pl[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        z = pl[:, 3] / denom
    ok = np.isfinite(z) & (z > 0)
    pix = (py * W + px)[ok]
    z, face = z[ok], face[ok]
    order = np.lexsort((face, z, pix))
    pix, z, face = pix[order], z[order], face[order]
    first = np.ones(len(pix), bool)
    first[1:] = pix[1:] != pix[:-1]
    pix, z, face = pix[first], z[first], face[first]
    better = (z < best_z[pix]) | ((z == best_z[pix]) & (face < best_f[pix]))
    best_z[pix[better]] = z[better]
    best_f[pix[better]] = face[better]


# --------------------------------------------------------------------------
# occlusion boundaries


def _predict(planes, face, rays):
    pl = planes[face]
    den = np.einsum("...j,...j->...", pl[..., :3], rays)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = pl[..., 3] / den
    return np.where(np.isfinite(z) & (z > 0), z, np.inf)


def occlusion_edges(fb: FrameBuffer, tau_rel: float = TAU_REL, planes: np.ndarray | None = None):
    """Discontinuity flags between 4-neighbours: ``(horizontal (H, W-1), vertical (H-1, W))``.

    A neighbour pair is discontinuous when one side misses, or when each
    pixel's depth disagrees by more than ``tau_rel`` with the depth predicted
    by extending the other pixel's surface plane along its own ray.
    """
    planes = fb.planes if planes is None else planes
    rays = fb.camera.pixel_rays()
    hit = fb.hit
    z = fb.depth
    face = np.where(hit, fb.face_id, 0)
    out = []
    for sa, sb in (
        ((slice(None), slice(None, -1)), (slice(None), slice(1, None))),
        ((slice(None, -1), slice(None)), (slice(1, None), slice(None))),
    ):
        ha, hb = hit[sa], hit[sb]
        za, zb = z[sa], z[sb]
        pred_b = _predict(planes, face[sa], rays[sb])  # a's plane along b's ray
        pred_a = _predict(planes, face[sb], rays[sa])
        with np.errstate(invalid="ignore"):
            off_b = np.abs(zb - pred_b) > tau_rel * zb
            off_a = np.abs(za - pred_a) > tau_rel * za
        both = ha & hb
        out.append((ha != hb) | (both & off_a & off_b))
    return out[0], out[1]


def occlusion_boundaries(fb: FrameBuffer, scene: Mesh | None = None, tau_rel: float = TAU_REL) -> np.ndarray:
    """Boolean mask of pixels adjacent to an occlusion discontinuity.

    Both pixels of a discontinuous pair are marked, except background
    (miss) pixels.  ``scene`` may supply the mesh when ``fb`` lacks planes.
    """
    planes = fb.planes
    if planes is None:
        if scene is None:
            raise ValueError("need the scene mesh to recover face planes")
        planes = _face_planes(scene, fb.camera)
    h, v = occlusion_edges(fb, tau_rel, planes)
    mask = np.zeros(fb.shape, bool)
    mask[:, :-1] |= h
    mask[:, 1:] |= h
    mask[:-1, :] |= v
    mask[1:, :] |= v
    return mask & fb.hit


def _face_planes(mesh: Mesh, camera: CameraModel) -> np.ndarray:
    tri = camera.world_to_camera(mesh.vertices)[mesh.faces]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)
    return np.concatenate([n, np.einsum("ij,ij->i", n, tri[:, 0])[:, None]], axis=1)


# --------------------------------------------------------------------------
# surface normals


def _shift(a, dy, dx, fill):
    """out[y, x] = a[y + dy, x + dx], ``fill`` outside."""
    H, W = a.shape[:2]
    out = np.full_like(a, fill)
    ys = slice(max(0, -dy), min(H, H - dy))
    xs = slice(max(0, -dx), min(W, W - dx))
    yd = slice(max(0, dy), min(H, H + dy))
    xd = slice(max(0, dx), min(W, W + dx))
    out[ys, xs] = a[yd, xd]
    return out


def reachable_offsets(fb: FrameBuffer, radius: int, edges=None) -> dict:
    """For each window offset, pixels whose neighbour at that offset is reachable
    from the center through hit pixels without crossing a discontinuity."""
    h_edges, v_edges = occlusion_edges(fb) if edges is None else edges
    H, W = fb.shape
    # passable[(dy, dx)][y, x]: step from (y, x) to (y+dy, x+dx) allowed
    right = np.zeros((H, W), bool)
    right[:, :-1] = ~h_edges
    down = np.zeros((H, W), bool)
    down[:-1, :] = ~v_edges
    left = np.zeros((H, W), bool)
    left[:, 1:] = ~h_edges
    up = np.zeros((H, W), bool)
    up[1:, :] = ~v_edges
    steps = {(0, 1): right, (1, 0): down, (0, -1): left, (-1, 0): up}
    hit = fb.hit
    reach = {(0, 0): hit.copy()}
    frontier = [(0, 0)]
    changed = True
    while changed:
        changed = False
        for off in list(reach):
            cur = reach[off]
            for (sy, sx), ok in steps.items():
                nxt = (off[0] + sy, off[1] + sx)
                if abs(nxt[0]) > radius or abs(nxt[1]) > radius:
                    continue
                # pixel c reaches c+nxt if it reaches c+off and the step from c+off is passable
                step_ok = _shift(ok, off[0], off[1], False) & _shift(hit, nxt[0], nxt[1], False)
                new = cur & step_ok
                prev = reach.get(nxt)
                if prev is None:
                    reach[nxt] = new
                    changed = changed or new.any()
                else:
                    upd = prev | new
                    if (upd != prev).any():
                        reach[nxt] = upd
                        changed = True
    return reach


def normals_from_depth(fb: FrameBuffer, window_radius: int = 2, respect_boundaries: bool = True):
    """Least-squares plane normals from the depth map.

    Returns ``(normals (H, W, 3), valid (H, W))`` in the camera frame,
    oriented toward the camera.  Window samples not reachable from the
    center without crossing an occlusion boundary are excluded; fewer than
    three usable samples, or a degenerate fit, marks the pixel invalid.
    """
    if window_radius < 1:
        raise ValueError("window radius must be >= 1")
    H, W = fb.shape
    pts = fb.camera.unproject(np.where(fb.hit, fb.depth, 0.0))
    if respect_boundaries:
        reach = reachable_offsets(fb, window_radius)
    else:
        reach = {}
        for dy in range(-window_radius, window_radius + 1):
            for dx in range(-window_radius, window_radius + 1):
                reach[(dy, dx)] = fb.hit & _shift(fb.hit, dy, dx, False)
    cnt = np.zeros((H, W))
    s = np.zeros((H, W, 3))
    ss = np.zeros((H, W, 3, 3))
    center = pts
    for (dy, dx), m in reach.items():
        q = _shift(pts, dy, dx, 0.0) - center  # centred for conditioning
        q = np.where(m[..., None], q, 0.0)
        cnt += m
        s += q
        ss += q[..., :, None] * q[..., None, :]
    valid = fb.hit & (cnt >= 3)
    mean = s / np.maximum(cnt, 1)[..., None]
    cov = ss / np.maximum(cnt, 1)[..., None, None] - mean[..., :, None] * mean[..., None, :]
    normals = np.full((H, W, 3), np.nan)
    if valid.any():
        evals, evecs = np.linalg.eigh(cov[valid])
        n = evecs[:, :, 0]
        scale = np.maximum(evals[:, 2], 1e-300)
        degenerate = evals[:, 1] <= 1e-12 * scale
        facing = np.einsum("ij,ij->i", n, pts[valid])
        n = np.where((facing > 0)[:, None], -n, n)
        n[degenerate] = np.nan
        normals[valid] = n
        vv = valid.copy()
        vv[valid] = ~degenerate
        valid = vv
    return normals, valid


# --------------------------------------------------------------------------
# labels, flow, disparity


def instance_segmentation(fb: FrameBuffer, grouping=None) -> np.ndarray:
    """Map instance ids through ``grouping`` (dict or callable); others keep their id."""
    inst = fb.instance_id if isinstance(fb, FrameBuffer) else np.asarray(fb)
    if grouping is None:
        return inst.copy()
    ids = np.unique(inst)
    if callable(grouping):
        table = {int(i): int(grouping(int(i))) for i in ids}
    else:
        table = {int(i): int(grouping.get(int(i), int(i))) for i in ids}
    lut_keys = np.array(sorted(table))
    lut_vals = np.array([table[k] for k in lut_keys])
    out = lut_vals[np.searchsorted(lut_keys, inst)]
    return out.astype(inst.dtype)


def flow_static(fb1: FrameBuffer, cam1: CameraModel, cam2: CameraModel):
    """Optical flow of a static scene from depth and relative pose.

    Returns ``(flow (H, W, 2), valid)``; misses and points behind ``cam2``
    are invalid with flow NaN.
    """
    hit = fb1.hit
    pc = cam1.unproject(np.where(hit, fb1.depth, 1.0))
    world = cam1.camera_to_world(pc.reshape(-1, 3))
    uv2, z2 = cam2.project(world)
    u, v = cam1.pixel_grid()
    uv1 = np.stack([u, v], axis=-1).reshape(-1, 2)
    flow = (uv2 - uv1).reshape(fb1.shape + (2,))
    valid = hit & (z2.reshape(fb1.shape) > 0)
    flow[~valid] = np.nan
    return flow, valid


def disparity(fb_left: FrameBuffer, rig) -> np.ndarray:
    """Rectified disparity ``f_px * baseline / z``; zero where depth is infinite."""
    if isinstance(rig, tuple):
        left, right = rig
        baseline = float(np.linalg.norm(right.position - left.position))
    else:
        baseline = float(rig)
    f = fb_left.camera.focal_px
    with np.errstate(divide="ignore"):
        d = f * baseline / fb_left.depth
    return np.where(np.isfinite(fb_left.depth), d, 0.0)


def face_pixel_stats(fb: FrameBuffer, mesh: Mesh, bins: int = 32) -> dict:
    """Per visible face: covered pixel count and world area in cm^2, plus summaries."""
    ids = fb.face_id[fb.hit]
    if len(ids) == 0:
        return {"faces": [], "pixels": [], "area_cm2": [], "pixel_hist": [], "area_hist": [], "quantiles": {}}
    faces, px = np.unique(ids, return_counts=True)
    area = mesh.face_areas()[faces] * 1e4
    q = [0.05, 0.25, 0.5, 0.75, 0.95]
    return {
        "faces": faces.tolist(),
        "pixels": px.tolist(),
        "area_cm2": area.tolist(),
        "pixel_hist": _log_hist(px.astype(float), bins),
        "area_hist": _log_hist(area, bins),
        "quantiles": {
            "pixels": dict(zip(map(str, q), np.quantile(px, q).tolist())),
            "area_cm2": dict(zip(map(str, q), np.quantile(area, q).tolist())),
        },
    }


def _log_hist(x, bins):
    x = x[x > 0]
    if len(x) == 0:
        return []
    counts, edges = np.histogram(np.log2(x), bins=bins)
    return [{"log2_lo": float(a), "log2_hi": float(b), "count": int(c)} for a, b, c in zip(edges[:-1], edges[1:], counts)]
