"""Noise primitives, domain warping and SDF composition.

Everything spatial in procworld is a :class:`FieldProgram`: an immutable DAG of
operator nodes evaluated in bulk over ``(N, 3)`` arrays of points in meters.
Terrain elements, placement masks and displacement fields all share it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Sequence

import numpy as np

from .seeding import MASK64, _mix, hash_cells, hash_unit


class FieldBuildError(ValueError):
    """Raised when a program is assembled from incompatible nodes."""


# --------------------------------------------------------------------------
# noise kernels


def _fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(1.0 - z * z)
    a = math.pi * (3.0 - math.sqrt(5.0)) * i
    return np.stack([r * np.cos(a), r * np.sin(a), z], axis=1)


# 256 fixed unit gradients; unit length keeps single-octave output within
# sqrt(3)/2 < 1.
GRADIENTS = _fibonacci_sphere(256)


def _fade(t: np.ndarray) -> np.ndarray:
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def perlin(points: np.ndarray, seed: int) -> np.ndarray:
    """Gradient-lattice Perlin noise with hashed gradients, values in [-1, 1]."""
    p = np.asarray(points, dtype=np.float64)
    cell = np.floor(p)
    f = p - cell
    ci = cell.astype(np.int64).astype(np.uint64)
    u = _fade(f)
    out = np.zeros(len(p))
    # the chained hash of hash_cells, with per-axis stages shared between corners
    golden = np.uint64(0x9E3779B97F4A7C15)
    h0 = _mix(np.full(len(p), np.uint64(int(seed) & MASK64), dtype=np.uint64) + golden)
    for dx in (0, 1):
        wx = u[:, 0] if dx else 1.0 - u[:, 0]
        hx = _mix(h0 ^ (ci[:, 0] + np.uint64(dx) + golden))
        for dy in (0, 1):
            wy = u[:, 1] if dy else 1.0 - u[:, 1]
            hy = _mix(hx ^ (ci[:, 1] + np.uint64(dy) + golden))
            for dz in (0, 1):
                wz = u[:, 2] if dz else 1.0 - u[:, 2]
                h = _mix(hy ^ (ci[:, 2] + np.uint64(dz) + golden))
                g = GRADIENTS[(h & np.uint64(255)).astype(np.intp)]
                d = (
                    g[:, 0] * (f[:, 0] - dx)
                    + g[:, 1] * (f[:, 1] - dy)
                    + g[:, 2] * (f[:, 2] - dz)
                )
                out += wx * wy * wz * d
    return out


def fbm(points, seed, frequency=1.0, octaves=4, lacunarity=2.0, gain=0.5):
    """Fractal sum of Perlin octaves; ``|v| <= sum(gain**i)``."""
    p = np.asarray(points, dtype=np.float64)
    out = np.zeros(len(p))
    amp, freq = 1.0, float(frequency)
    for i in range(int(octaves)):
        out += amp * perlin(p * freq, seed + i)
        amp *= gain
        freq *= lacunarity
    return out


def _smin(a, b, k):
    h = np.clip(0.5 + 0.5 * (b - a) / k, 0.0, 1.0)
    return b + (a - b) * h - k * h * (1.0 - h)


def voronoi(points: np.ndarray, seed: int, frequency: float = 1.0, smooth: float = 0.0):
    """Cellular noise over a jittered lattice.

    Returns ``(f1, center)``: distance in meters to the nearest feature point
    and that feature point's position.  With ``smooth > 0`` the first value is
    a polynomial smooth-min over all candidates, width given in cell units.
    """
    p = np.asarray(points, dtype=np.float64) * frequency
    base = np.floor(p).astype(np.int64)
    best = np.full(len(p), np.inf)
    center = np.zeros_like(p)
    soft = None
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dz in (-1, 0, 1):
                c = base + np.array([dx, dy, dz])
                jitter = np.stack(
                    [hash_unit(seed + a, c[:, 0], c[:, 1], c[:, 2]) for a in range(3)], axis=1
                )
                fp = c + jitter
                d = np.linalg.norm(fp - p, axis=1)
                closer = d < best
                best = np.where(closer, d, best)
                center[closer] = fp[closer]
                if smooth > 0:
                    soft = d if soft is None else _smin(soft, d, smooth)
    f1 = soft if smooth > 0 else best
    return f1 / frequency, center / frequency


def voronoi_f1f2(points: np.ndarray, seed: int, frequency: float = 1.0):
    """Nearest and second-nearest feature points: ``(f1, f2, c1, c2)`` in meters."""
    p = np.asarray(points, dtype=np.float64) * frequency
    base = np.floor(p).astype(np.int64)
    n = len(p)
    d1 = np.full(n, np.inf)
    d2 = np.full(n, np.inf)
    c1 = np.zeros_like(p)
    c2 = np.zeros_like(p)
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dz in (-1, 0, 1):
                c = base + np.array([dx, dy, dz])
                jitter = np.stack(
                    [hash_unit(seed + a, c[:, 0], c[:, 1], c[:, 2]) for a in range(3)], axis=1
                )
                fp = c + jitter
                d = np.linalg.norm(fp - p, axis=1)
                first = d < d1
                second = ~first & (d < d2)
                d2 = np.where(first, d1, np.where(second, d, d2))
                c2[first] = c1[first]
                c2[second] = fp[second]
                d1 = np.where(first, d, d1)
                c1[first] = fp[first]
    return d1 / frequency, d2 / frequency, c1 / frequency, c2 / frequency


def wave(points: np.ndarray, seed: int, frequency: float = 1.0) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(seed))
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    return np.sin(2.0 * math.pi * frequency * (np.asarray(points) @ direction) + phase)


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "perlin-fbm"
    frequency: float = 1.0
    octaves: int = 1
    lacunarity: float = 2.0
    gain: float = 0.5
    warp: tuple[float, "NoiseSpec"] | None = None
    seed: int = 0
    smooth_width: float = 0.1

    KINDS = ("perlin-fbm", "voronoi-F1", "voronoi-F1-smooth", "wave")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise FieldBuildError(f"unknown noise kind {self.kind!r}")
        if self.octaves < 1:
            raise FieldBuildError("octaves must be >= 1")
        if not self.frequency > 0:
            raise FieldBuildError("frequency must be > 0")
        if not 0 < self.gain < 1:
            raise FieldBuildError("gain must lie in (0, 1)")
        if self.warp is not None and self.warp[0] < 0:
            raise FieldBuildError("warp amplitude must be >= 0")

    def amplitude_bound(self) -> float:
        if self.kind == "perlin-fbm":
            return sum(self.gain**i for i in range(self.octaves))
        return 1.0


def eval_noise(spec: NoiseSpec, points: np.ndarray) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64)
    if spec.warp is not None:
        p = warp_domain(p, spec.warp[1], spec.warp[0])
    if spec.kind == "perlin-fbm":
        return fbm(p, spec.seed, spec.frequency, spec.octaves, spec.lacunarity, spec.gain)
    if spec.kind == "voronoi-F1":
        return voronoi(p, spec.seed, spec.frequency)[0]
    if spec.kind == "voronoi-F1-smooth":
        return voronoi(p, spec.seed, spec.frequency, smooth=spec.smooth_width)[0]
    return wave(p, spec.seed, spec.frequency)


def noise3(points: np.ndarray, spec: NoiseSpec) -> np.ndarray:
    """Three decorrelated channels of ``spec``, each normalised to [-1, 1]."""
    bound = spec.amplitude_bound()
    chans = [eval_noise(replace(spec, seed=spec.seed + 1013 * a), points) for a in range(3)]
    return np.clip(np.stack(chans, axis=1) / bound, -1.0, 1.0)


def warp_domain(points: np.ndarray, warp: NoiseSpec, amplitude: float) -> np.ndarray:
    """Return ``p + amplitude * noise3(p)``; each axis moves at most ``amplitude``."""
    if amplitude < 0:
        raise FieldBuildError("warp amplitude must be >= 0")
    p = np.asarray(points, dtype=np.float64)
    if amplitude == 0:
        return p.copy()
    return p + amplitude * noise3(p, warp)


# --------------------------------------------------------------------------
# operator registry


@dataclass(frozen=True)
class Socket:
    name: str
    kind: str  # "scalar" | "vector"
    default: Any = None  # None = required; "position" = the evaluation point


@dataclass(frozen=True)
class OpSpec:
    name: str
    inputs: tuple[Socket, ...]
    params: tuple[tuple[str, Any], ...]
    out_kind: str
    fn: Callable[..., np.ndarray]
    doc: str = ""

    def param_defaults(self) -> dict[str, Any]:
        return dict(self.params)


OPERATORS: dict[str, OpSpec] = {}


def _op(name, inputs=(), params=(), out="scalar", doc=""):
    def deco(fn):
        OPERATORS[name] = OpSpec(name, tuple(Socket(*s) for s in inputs), tuple(params), out, fn, doc)
        return fn

    return deco


P = ("p", "vector", "position")


def _div(a, b):
    b = np.asarray(b, dtype=np.float64)
    safe = np.abs(b) > 1e-300
    return np.where(safe, a / np.where(safe, b, 1.0), 0.0)


# sources
_op("constant", params=(("value", 0.0),))(lambda n, value: np.full(n, float(value)))
_op("vector", params=(("value", (0.0, 0.0, 0.0)),), out="vector")(
    lambda n, value: np.tile(np.asarray(value, dtype=np.float64), (n, 1))
)
_op("position", out="vector")(lambda n: None)  # resolved by the evaluator
_op("separate", inputs=(("v", "vector", "position"),), params=(("axis", 0),))(
    lambda n, v, axis: v[:, int(axis)].copy()
)
_op("combine", inputs=(("x", "scalar", 0.0), ("y", "scalar", 0.0), ("z", "scalar", 0.0)), out="vector")(
    lambda n, x, y, z: np.stack([x, y, z], axis=1)
)

# scalar arithmetic
_op("add", inputs=(("a", "scalar", 0.0), ("b", "scalar", 0.0)))(lambda n, a, b: a + b)
_op("subtract", inputs=(("a", "scalar", 0.0), ("b", "scalar", 0.0)))(lambda n, a, b: a - b)
_op("multiply", inputs=(("a", "scalar", 1.0), ("b", "scalar", 1.0)))(lambda n, a, b: a * b)
_op("divide", inputs=(("a", "scalar", 0.0), ("b", "scalar", 1.0)))(lambda n, a, b: _div(a, b))
_op("negate", inputs=(("a", "scalar", None),))(lambda n, a: -a)
_op("abs", inputs=(("a", "scalar", None),))(lambda n, a: np.abs(a))
_op("sqrt", inputs=(("a", "scalar", None),))(lambda n, a: np.sqrt(np.abs(a)))
_op("sin", inputs=(("a", "scalar", None),))(lambda n, a: np.sin(a))
_op("cos", inputs=(("a", "scalar", None),))(lambda n, a: np.cos(a))
_op("minimum", inputs=(("a", "scalar", None), ("b", "scalar", None)))(lambda n, a, b: np.minimum(a, b))
_op("maximum", inputs=(("a", "scalar", None), ("b", "scalar", None)))(lambda n, a, b: np.maximum(a, b))
_op("smooth_min", inputs=(("a", "scalar", None), ("b", "scalar", None)), params=(("k", 0.1),))(
    lambda n, a, b, k: _smin(a, b, k) if k > 0 else np.minimum(a, b)
)
_op("clamp", inputs=(("a", "scalar", None),), params=(("lo", 0.0), ("hi", 1.0)))(
    lambda n, a, lo, hi: np.clip(a, lo, hi)
)
_op("mix", inputs=(("a", "scalar", 0.0), ("b", "scalar", 1.0), ("t", "scalar", 0.5)))(
    lambda n, a, b, t: (1.0 - t) * a + t * b
)
_op("greater_than", inputs=(("a", "scalar", None), ("b", "scalar", 0.0)))(
    lambda n, a, b: (a > b).astype(np.float64)
)
_op("compare", inputs=(("a", "scalar", None), ("b", "scalar", 0.0)), params=(("epsilon", 1e-6),))(
    lambda n, a, b, epsilon: (np.abs(a - b) <= epsilon).astype(np.float64)
)


@_op(
    "map_range",
    inputs=(("a", "scalar", None),),
    params=(("from_lo", 0.0), ("from_hi", 1.0), ("to_lo", 0.0), ("to_hi", 1.0), ("clamp", True)),
)
def _map_range(n, a, from_lo, from_hi, to_lo, to_hi, clamp):
    span = from_hi - from_lo
    t = (a - from_lo) / span if span != 0 else np.zeros_like(a)
    if clamp:
        t = np.clip(t, 0.0, 1.0)
    return to_lo + t * (to_hi - to_lo)


@_op("curve", inputs=(("a", "scalar", None),), params=(("xs", (0.0, 1.0)), ("ys", (0.0, 1.0))))
def _curve(n, a, xs, ys):
    return np.interp(a, np.asarray(xs, dtype=float), np.asarray(ys, dtype=float))


_op("sum", inputs=(("items", "scalar*", ()),))(
    lambda n, items: np.sum(items, axis=0) if len(items) else np.zeros(n)
)

# vector arithmetic
_op("vector_add", inputs=(("a", "vector", None), ("b", "vector", None)), out="vector")(lambda n, a, b: a + b)
_op("vector_subtract", inputs=(("a", "vector", None), ("b", "vector", None)), out="vector")(
    lambda n, a, b: a - b
)
_op("vector_scale", inputs=(("v", "vector", None), ("s", "scalar", 1.0)), out="vector")(
    lambda n, v, s: v * s[:, None]
)
_op("length", inputs=(("v", "vector", None),))(lambda n, v: np.linalg.norm(v, axis=1))
_op("dot", inputs=(("a", "vector", None), ("b", "vector", None)))(lambda n, a, b: np.einsum("ij,ij->i", a, b))

# noise
_op("perlin", inputs=(P,), params=(("frequency", 1.0), ("seed", 0)))(
    lambda n, p, frequency, seed: perlin(p * frequency, int(seed))
)
_op(
    "fbm",
    inputs=(P,),
    params=(("frequency", 1.0), ("octaves", 4), ("lacunarity", 2.0), ("gain", 0.5), ("seed", 0)),
)(lambda n, p, frequency, octaves, lacunarity, gain, seed: fbm(p, int(seed), frequency, int(octaves), lacunarity, gain))
_op("voronoi_f1", inputs=(P,), params=(("frequency", 1.0), ("seed", 0)))(
    lambda n, p, frequency, seed: voronoi(p, int(seed), frequency)[0]
)
_op("voronoi_f1_smooth", inputs=(P,), params=(("frequency", 1.0), ("seed", 0), ("width", 0.1)))(
    lambda n, p, frequency, seed, width: voronoi(p, int(seed), frequency, smooth=width)[0]
)
_op("wave", inputs=(P,), params=(("frequency", 1.0), ("seed", 0)))(
    lambda n, p, frequency, seed: wave(p, int(seed), frequency)
)


@_op(
    "warp",
    inputs=(P,),
    params=(("amplitude", 1.0), ("frequency", 1.0), ("octaves", 1), ("lacunarity", 2.0), ("gain", 0.5), ("seed", 0)),
    out="vector",
)
def _warp(n, p, amplitude, frequency, octaves, lacunarity, gain, seed):
    spec = NoiseSpec("perlin-fbm", frequency, int(octaves), lacunarity, gain, seed=int(seed))
    return warp_domain(p, spec, amplitude)


# SDF primitives (meters, negative inside)
_op("sdf_sphere", inputs=(P,), params=(("center", (0.0, 0.0, 0.0)), ("radius", 1.0)))(
    lambda n, p, center, radius: np.linalg.norm(p - np.asarray(center), axis=1) - radius
)


@_op("sdf_box", inputs=(P,), params=(("center", (0.0, 0.0, 0.0)), ("half_size", (1.0, 1.0, 1.0))))
def _sdf_box(n, p, center, half_size):
    q = np.abs(p - np.asarray(center)) - np.asarray(half_size)
    return np.linalg.norm(np.maximum(q, 0.0), axis=1) + np.minimum(q.max(axis=1), 0.0)


@_op("sdf_plane", inputs=(P,), params=(("normal", (0.0, 0.0, 1.0)), ("offset", 0.0)))
def _sdf_plane(n, p, normal, offset):
    nrm = np.asarray(normal, dtype=float)
    return p @ (nrm / np.linalg.norm(nrm)) - offset


@_op("sdf_torus", inputs=(P,), params=(("center", (0.0, 0.0, 0.0)), ("major", 1.0), ("minor", 0.25)))
def _sdf_torus(n, p, center, major, minor):
    q = p - np.asarray(center)
    ring = np.hypot(q[:, 0], q[:, 1]) - major
    return np.hypot(ring, q[:, 2]) - minor


def capsule_chain_sdf(p: np.ndarray, starts, ends, r0, r1) -> np.ndarray:
    """Union of tapered capsules; radius interpolates linearly along each segment."""
    p = np.asarray(p, dtype=np.float64)
    out = np.full(len(p), np.inf)
    starts = np.asarray(starts, dtype=float).reshape(-1, 3)
    ends = np.asarray(ends, dtype=float).reshape(-1, 3)
    r0 = np.asarray(r0, dtype=float).ravel()
    r1 = np.asarray(r1, dtype=float).ravel()
    chunk = max(1, 2_000_000 // max(len(p), 1))
    for s in range(0, len(starts), chunk):
        a, b = starts[s : s + chunk], ends[s : s + chunk]
        ab = b - a
        denom = np.maximum(np.einsum("ij,ij->i", ab, ab), 1e-300)
        ap = p[:, None, :] - a[None, :, :]
        t = np.clip(np.einsum("nsj,sj->ns", ap, ab) / denom, 0.0, 1.0)
        d = np.linalg.norm(ap - t[..., None] * ab, axis=2)
        d -= r0[s : s + chunk] + (r1[s : s + chunk] - r0[s : s + chunk]) * t
        out = np.minimum(out, d.min(axis=1))
    return out


_op("sdf_capsules", inputs=(P,), params=(("starts", ()), ("ends", ()), ("r0", ()), ("r1", ())))(
    lambda n, p, starts, ends, r0, r1: capsule_chain_sdf(p, starts, ends, r0, r1)
    if len(np.asarray(starts).ravel())
    else np.full(n, 1e9)
)


# --------------------------------------------------------------------------
# programs


def _freeze(v):
    if isinstance(v, np.ndarray):
        v = v.copy()
        v.setflags(write=False)
        return v
    if isinstance(v, list):
        return tuple(_freeze(x) for x in v)
    return v


@dataclass(frozen=True, eq=False)
class FieldProgram:
    """One node of a field DAG; the node is also the program rooted at it.

    Inputs are other programs (shared sub-programs are evaluated once per
    call).  Build through :func:`node` or the helpers below so sockets are
    checked before anything is evaluated.
    """

    op: str
    inputs: tuple["FieldProgram", ...] = ()
    params: dict = field(default_factory=dict)
    kind: str = "scalar"

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.evaluate(points)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return _evaluate(self, pts, {})

    def walk(self) -> list["FieldProgram"]:
        """Nodes in post-order, each shared node listed once."""
        seen: set[int] = set()
        order: list[FieldProgram] = []
        stack: list[tuple[FieldProgram, bool]] = [(self, False)]
        while stack:
            nd, expanded = stack.pop()
            if id(nd) in seen:
                continue
            if expanded:
                seen.add(id(nd))
                order.append(nd)
                continue
            stack.append((nd, True))
            for child in reversed(_flat_inputs(nd)):
                if id(child) not in seen:
                    stack.append((child, False))
        return order

    # operator sugar for scalar SDF work
    def __or__(self, other):
        return sdf_combine("union", self, other)

    def __and__(self, other):
        return sdf_combine("intersect", self, other)

    def __sub__(self, other):
        return sdf_combine("subtract", self, other)


def _flat_inputs(nd: FieldProgram) -> list[FieldProgram]:
    out = []
    for x in nd.inputs:
        if isinstance(x, tuple):
            out.extend(x)
        else:
            out.append(x)
    return out


def _evaluate(nd: FieldProgram, pts: np.ndarray, memo: dict) -> np.ndarray:
    key = id(nd)
    if key in memo:
        return memo[key]
    if nd.op == "position":
        val = pts
    elif nd.op == "custom":
        fn = nd.params["fn"]
        args = [_evaluate(x, pts, memo) for x in nd.inputs]
        val = fn(pts, *args)
    else:
        spec = OPERATORS[nd.op]
        args = []
        for x in nd.inputs:
            if isinstance(x, tuple):
                args.append([_evaluate(y, pts, memo) for y in x])
            else:
                args.append(_evaluate(x, pts, memo))
        val = spec.fn(len(pts), *args, **nd.params)
    memo[key] = val
    return val


POSITION = FieldProgram("position", kind="vector")


def node(op: str, *inputs: "FieldProgram | float | Sequence", **params) -> FieldProgram:
    """Build a validated node; bare numbers in input slots become constants."""
    if op not in OPERATORS:
        raise FieldBuildError(f"unknown operator {op!r}")
    if op == "position":
        return POSITION
    spec = OPERATORS[op]
    if len(inputs) > len(spec.inputs):
        raise FieldBuildError(f"{op}: expected at most {len(spec.inputs)} inputs, got {len(inputs)}")
    unknown = set(params) - {k for k, _ in spec.params}
    if unknown:
        raise FieldBuildError(f"{op}: unknown parameters {sorted(unknown)}")
    bound = []
    for i, sock in enumerate(spec.inputs):
        val = inputs[i] if i < len(inputs) else sock.default
        if sock.kind == "scalar*":
            items = tuple(_as_program(v, "scalar", op, sock.name) for v in (val or ()))
            bound.append(items)
            continue
        if val is None:
            raise FieldBuildError(f"{op}: input {sock.name!r} is not bound")
        bound.append(_as_program(val, sock.kind, op, sock.name))
    full = spec.param_defaults()
    full.update({k: _freeze(v) for k, v in params.items()})
    return FieldProgram(op, tuple(bound), full, spec.out_kind)


def _as_program(val, kind, op, name) -> FieldProgram:
    if isinstance(val, FieldProgram):
        prog = val
    elif isinstance(val, str) and val == "position":
        prog = POSITION
    elif kind == "vector":
        prog = node("vector", value=tuple(float(x) for x in val))
    else:
        prog = node("constant", value=float(val))
    if prog.kind != kind:
        raise FieldBuildError(f"{op}: input {name!r} expects {kind}, got {prog.kind}")
    return prog


def as_input(val, kind: str = "scalar") -> FieldProgram:
    """Coerce a number, 3-vector or program into a program of ``kind``."""
    return _as_program(val, kind, "input", kind)


def custom(fn: Callable, *inputs: FieldProgram, kind: str = "scalar", label: str = "custom", **meta) -> FieldProgram:
    """Wrap a vectorised ``fn(points, *input_values)`` as a node.

    Used by terrain elements whose kernels need data (heightfield tiles,
    Voronoi cell sets) that would be awkward to express as primitive nodes.
    Custom nodes evaluate like any other but cannot be serialised to a node
    graph document.
    """
    return FieldProgram("custom", tuple(inputs), {"fn": fn, "label": label, **meta}, kind)


def constant(value: float) -> FieldProgram:
    return node("constant", value=value)


def sphere(radius: float = 1.0, center=(0.0, 0.0, 0.0), p=POSITION) -> FieldProgram:
    return node("sdf_sphere", p, center=tuple(map(float, center)), radius=float(radius))


def box(half_size, center=(0.0, 0.0, 0.0), p=POSITION) -> FieldProgram:
    return node("sdf_box", p, center=tuple(map(float, center)), half_size=tuple(map(float, half_size)))


def plane(normal=(0.0, 0.0, 1.0), offset: float = 0.0, p=POSITION) -> FieldProgram:
    return node("sdf_plane", p, normal=tuple(map(float, normal)), offset=float(offset))


def torus(major: float, minor: float, center=(0.0, 0.0, 0.0), p=POSITION) -> FieldProgram:
    return node("sdf_torus", p, center=tuple(map(float, center)), major=float(major), minor=float(minor))


def translate(prog_builder: Callable[[FieldProgram], FieldProgram], offset) -> FieldProgram:
    """Evaluate ``prog_builder(p - offset)``."""
    shifted = node("vector_subtract", POSITION, node("vector", value=tuple(map(float, offset))))
    return prog_builder(shifted)


def noise_field(spec: NoiseSpec, p: FieldProgram = POSITION) -> FieldProgram:
    """Lower a :class:`NoiseSpec` (including its warp) to program nodes."""
    if spec.warp is not None:
        amp, inner = spec.warp
        if inner.kind != "perlin-fbm":
            raise FieldBuildError("warp noise must be perlin-fbm")
        p = node(
            "warp",
            p,
            amplitude=float(amp),
            frequency=inner.frequency,
            octaves=inner.octaves,
            lacunarity=inner.lacunarity,
            gain=inner.gain,
            seed=inner.seed,
        )
    if spec.kind == "perlin-fbm":
        return node(
            "fbm",
            p,
            frequency=spec.frequency,
            octaves=spec.octaves,
            lacunarity=spec.lacunarity,
            gain=spec.gain,
            seed=spec.seed,
        )
    if spec.kind == "voronoi-F1":
        return node("voronoi_f1", p, frequency=spec.frequency, seed=spec.seed)
    if spec.kind == "voronoi-F1-smooth":
        return node("voronoi_f1_smooth", p, frequency=spec.frequency, seed=spec.seed, width=spec.smooth_width)
    return node("wave", p, frequency=spec.frequency, seed=spec.seed)


def sdf_combine(op: str, a: FieldProgram, b: FieldProgram) -> FieldProgram:
    """Boolean SDF composition: union=min, intersect=max, subtract=max(a, -b)."""
    for x in (a, b):
        if not isinstance(x, FieldProgram) or x.kind != "scalar":
            raise FieldBuildError(f"{op}: inputs must be scalar field programs")
    if op == "union":
        return node("minimum", a, b)
    if op == "intersect":
        return node("maximum", a, b)
    if op == "subtract":
        return node("maximum", a, node("negate", b))
    raise FieldBuildError(f"unknown boolean op {op!r}")


def eval_field(program: FieldProgram, p) -> float | np.ndarray:
    """Evaluate at a single point; scalar programs return a float."""
    v = program.evaluate(np.asarray(p, dtype=np.float64).reshape(1, 3))
    return float(v[0]) if program.kind == "scalar" else v[0]
