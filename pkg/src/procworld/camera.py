"""Pinhole camera shared by meshing, placement and ground-truth extraction.

Camera frame follows the usual vision convention: +x right, +y down, +z
forward.  ``rotation``/``translation`` map world points into that frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, eq=False)
class CameraModel:
    width: int
    height: int
    fov_y: float
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    near: float = 0.1
    far: float = 1000.0
    baseline: float | None = None

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("resolution must be at least 1x1")
        if not 0 < self.fov_y < math.pi:
            raise ValueError("vertical FOV must lie in (0, pi)")
        if not 0 < self.near < self.far:
            raise ValueError("need 0 < near < far")
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))

    @classmethod
    def look_at(cls, eye, target, width, height, fov_y, up=(0.0, 0.0, 1.0), **kw) -> "CameraModel":
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(right) < 1e-9:
            right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        rot = np.stack([right, down, fwd])
        return cls(width, height, fov_y, rot, -rot @ eye, **kw)

    @classmethod
    def from_pose(cls, position, yaw, pitch, width, height, fov_y, **kw) -> "CameraModel":
        """World z-up pose: ``yaw`` about +z from +x, ``pitch`` up from horizontal."""
        fwd = np.array([math.cos(pitch) * math.cos(yaw), math.cos(pitch) * math.sin(yaw), math.sin(pitch)])
        return cls.look_at(position, np.asarray(position, dtype=float) + fwd, width, height, fov_y, **kw)

    @property
    def focal_px(self) -> float:
        return 0.5 * self.height / math.tan(0.5 * self.fov_y)

    @property
    def principal_point(self) -> tuple[float, float]:
        return 0.5 * self.width, 0.5 * self.height

    @property
    def intrinsics(self) -> np.ndarray:
        cx, cy = self.principal_point
        f = self.focal_px
        return np.array([[f, 0.0, cx], [0.0, f, cy], [0.0, 0.0, 1.0]])

    @property
    def position(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @property
    def axes(self) -> np.ndarray:
        """Rows: camera right, down and forward directions in world space."""
        return self.rotation.copy()

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def camera_to_world(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.translation) @ self.rotation

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """World points to continuous pixel coords ``(N, 2)`` and z-depth."""
        pc = self.world_to_camera(points)
        cx, cy = self.principal_point
        z = pc[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            uv = np.stack([self.focal_px * pc[:, 0] / z + cx, self.focal_px * pc[:, 1] / z + cy], axis=1)
        return uv, z

    def pixel_grid(self) -> tuple[np.ndarray, np.ndarray]:
        """Pixel-center coordinates ``(u, v)``, each shaped ``(H, W)``."""
        u = np.arange(self.width) + 0.5
        v = np.arange(self.height) + 0.5
        return np.meshgrid(u, v)

    def pixel_rays(self) -> np.ndarray:
        """Camera-frame ray directions with unit z, shaped ``(H, W, 3)``."""
        u, v = self.pixel_grid()
        cx, cy = self.principal_point
        f = self.focal_px
        return np.stack([(u - cx) / f, (v - cy) / f, np.ones_like(u)], axis=-1)

    def unproject(self, depth: np.ndarray) -> np.ndarray:
        """z-depth image to camera-frame points ``(H, W, 3)``."""
        return self.pixel_rays() * np.asarray(depth)[..., None]

    def half_angles(self) -> tuple[float, float]:
        """Azimuth and elevation half-extents of the frustum (see :mod:`meshing`)."""
        f = self.focal_px
        return math.atan(0.5 * self.width / f), math.atan(0.5 * self.height / f)

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "fov_y": self.fov_y,
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
            "near": self.near,
            "far": self.far,
            "baseline": self.baseline,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        return cls(**d)

    def with_resolution(self, width: int, height: int) -> "CameraModel":
        return CameraModel(width, height, self.fov_y, self.rotation, self.translation, self.near, self.far, self.baseline)

    def with_range(self, near: float, far: float) -> "CameraModel":
        return CameraModel(self.width, self.height, self.fov_y, self.rotation, self.translation, near, far, self.baseline)
