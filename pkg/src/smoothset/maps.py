"""Parameterized smooth maps of the plane and the planar SVD.

Maps carry forward/inverse point evaluators, the Jacobian determinant,
the full differential, and declared Lipschitz constants that are
spot-verified on samples before a map is trusted by any sweep.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import cos, pi, sin
from typing import Callable, Sequence

import numpy as np

from .geometry import AxisBox
from .util import philox


class MapValidationError(ValueError):
    """A declared map constant failed its sampled verification."""


@dataclass(frozen=True)
class PlanarLinearMap:
    """2x2 linear map with its singular value factorization m = V S W."""

    matrix: np.ndarray
    v: np.ndarray
    sigma: np.ndarray
    w: np.ndarray
    singular_values: tuple[float, float]
    invertible: bool

    @property
    def op_norm(self) -> float:
        return self.singular_values[0]

    @property
    def inverse_norm(self) -> float:
        if not self.invertible:
            raise ValueError("map is not invertible")
        return 1.0 / self.singular_values[1]


def svd2(matrix: Sequence[Sequence[float]]) -> PlanarLinearMap:
    """Factor a 2x2 matrix as V * diag(singular values) * W with V, W
    orthogonal and the singular values sorted descending."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.shape != (2, 2):
        raise ValueError("expected a 2x2 matrix")
    u, s, vh = np.linalg.svd(m)
    sv = (float(s[0]), float(s[1]))
    return PlanarLinearMap(
        matrix=m,
        v=u,
        sigma=np.diag(s),
        w=vh,
        singular_values=sv,
        invertible=sv[1] > 1e-12 * max(sv[0], 1.0),
    )


@dataclass(frozen=True)
class SmoothMap:
    """Bilipschitz map with Jacobian data.

    forward/inverse act on point arrays of shape (..., 2); jac_det returns
    the determinant of the differential, dphi the differential matrices
    (..., 2, 2). lipschitz bounds both the map and its inverse;
    jac_lipschitz bounds |det J(x) - det J(y)| / |x - y|.
    """

    name: str
    params: dict
    forward: Callable[[np.ndarray], np.ndarray]
    inverse: Callable[[np.ndarray], np.ndarray]
    jac_det: Callable[[np.ndarray], np.ndarray]
    dphi: Callable[[np.ndarray], np.ndarray]
    lipschitz: float
    jac_lipschitz: float

    def tangent_at(self, box: AxisBox) -> "SmoothMap":
        """First-order affine model T(x) = phi(z) + Dphi(z)(x - z) anchored
        at the box corner (a dyadic-coordinate point for dyadic cubes)."""
        z = np.asarray(box.corner, dtype=np.float64)
        fz = self.forward(z[None, :])[0]
        dz = self.dphi(z[None, :])[0]
        det = abs(float(np.linalg.det(dz)))
        inv = np.linalg.inv(dz)

        def fwd(pts, fz=fz, dz=dz, z=z):
            return fz + (np.asarray(pts) - z) @ dz.T

        def backward(pts, fz=fz, inv=inv, z=z):
            return z + (np.asarray(pts) - fz) @ inv.T

        sv = np.linalg.svd(dz, compute_uv=False)
        lip = float(max(sv[0], 1.0 / sv[1]))
        return SmoothMap(
            name=f"tangent({self.name})",
            params={"anchor": tuple(z)},
            forward=fwd,
            inverse=backward,
            jac_det=lambda pts: np.full(np.asarray(pts).shape[:-1], det),
            dphi=lambda pts: np.broadcast_to(dz, np.asarray(pts).shape[:-1] + (2, 2)).copy(),
            lipschitz=lip,
            jac_lipschitz=0.0,
        )


def _affine_map(name: str, params: dict, a: np.ndarray, b: np.ndarray) -> SmoothMap:
    det = abs(float(np.linalg.det(a)))
    inv = np.linalg.inv(a)
    sv = np.linalg.svd(a, compute_uv=False)

    def fwd(pts):
        return np.asarray(pts, dtype=np.float64) @ a.T + b

    def back(pts):
        return (np.asarray(pts, dtype=np.float64) - b) @ inv.T

    return SmoothMap(
        name=name,
        params=params,
        forward=fwd,
        inverse=back,
        jac_det=lambda pts: np.full(np.asarray(pts).shape[:-1], det),
        dphi=lambda pts: np.broadcast_to(a, np.asarray(pts).shape[:-1] + (2, 2)).copy(),
        lipschitz=float(max(sv[0], 1.0 / sv[1])),
        jac_lipschitz=0.0,
    )


def identity_map() -> SmoothMap:
    return _affine_map("identity", {}, np.eye(2), np.zeros(2))


def swap_map() -> SmoothMap:
    """Coordinate swap (x, y) -> (y, x)."""
    return _affine_map("swap", {}, np.array([[0.0, 1.0], [1.0, 0.0]]), np.zeros(2))


def rotation_map(angle: float, center: Sequence[float] = (0.5, 0.5)) -> SmoothMap:
    c = np.asarray(center, dtype=np.float64)
    a = np.array([[cos(angle), -sin(angle)], [sin(angle), cos(angle)]])
    b = c - a @ c
    return _affine_map("rotation", {"angle": angle, "center": tuple(c)}, a, b)


def dilation_map(lam: float, axis: int = 0, center: Sequence[float] = (0.5, 0.5)) -> SmoothMap:
    if lam <= 0:
        raise ValueError("dilation factor must be positive")
    c = np.asarray(center, dtype=np.float64)
    a = np.eye(2)
    a[axis, axis] = lam
    b = c - a @ c
    return _affine_map("dilation", {"lambda": lam, "axis": axis, "center": tuple(c)}, a, b)


def shear_map(amplitude: float, frequency: float = 1.0) -> SmoothMap:
    """(x, y) -> (x + amplitude * sin(2 pi frequency y), y): unit Jacobian
    determinant, so image volumes equal source volumes exactly."""
    w = 2.0 * pi * frequency

    def fwd(pts):
        pts = np.asarray(pts, dtype=np.float64)
        out = pts.copy()
        out[..., 0] += amplitude * np.sin(w * pts[..., 1])
        return out

    def back(pts):
        pts = np.asarray(pts, dtype=np.float64)
        out = pts.copy()
        out[..., 0] -= amplitude * np.sin(w * pts[..., 1])
        return out

    def dphi(pts):
        pts = np.asarray(pts, dtype=np.float64)
        out = np.zeros(pts.shape[:-1] + (2, 2))
        out[..., 0, 0] = 1.0
        out[..., 1, 1] = 1.0
        out[..., 0, 1] = amplitude * w * np.cos(w * pts[..., 1])
        return out

    g = abs(amplitude) * w
    # ||Dphi|| for a unit-determinant shear with off-diagonal g
    lip = (g + np.sqrt(g * g + 4.0)) / 2.0
    return SmoothMap(
        name="shear",
        params={"amplitude": amplitude, "frequency": frequency},
        forward=fwd,
        inverse=back,
        jac_det=lambda pts: np.ones(np.asarray(pts).shape[:-1]),
        dphi=dphi,
        lipschitz=float(lip),
        jac_lipschitz=0.0,
    )


def compose(*maps: SmoothMap) -> SmoothMap:
    """Composition applying the rightmost map first."""
    if not maps:
        raise ValueError("empty composition")
    if len(maps) == 1:
        return maps[0]

    def fwd(pts):
        for m in reversed(maps):
            pts = m.forward(pts)
        return pts

    def back(pts):
        for m in maps:
            pts = m.inverse(pts)
        return pts

    def jac_det(pts):
        pts = np.asarray(pts, dtype=np.float64)
        acc = np.ones(pts.shape[:-1])
        for m in reversed(maps):
            acc = acc * m.jac_det(pts)
            pts = m.forward(pts)
        return acc

    def dphi(pts):
        pts = np.asarray(pts, dtype=np.float64)
        acc = np.broadcast_to(np.eye(2), pts.shape[:-1] + (2, 2)).copy()
        for m in reversed(maps):
            acc = m.dphi(pts) @ acc
            pts = m.forward(pts)
        return acc

    lip = float(np.prod([m.lipschitz for m in maps]))
    if all(m.jac_lipschitz == 0.0 for m in maps):
        jl = 0.0  # every factor has a constant determinant
    else:
        dets = [abs(float(m.jac_det(np.zeros((1, 2)))[0])) + m.jac_lipschitz * 2.0 for m in maps]
        jl = float(np.prod(dets)) * sum(
            m.jac_lipschitz * m.lipschitz for m in maps
        )
    return SmoothMap(
        name="+".join(m.name for m in maps),
        params={"parts": [(m.name, m.params) for m in maps]},
        forward=fwd,
        inverse=back,
        jac_det=jac_det,
        dphi=dphi,
        lipschitz=lip,
        jac_lipschitz=float(jl),
    )


def map_from_spec(spec: dict) -> SmoothMap:
    """Build a map from a JSON-style spec: {"kind": ..., params} or
    {"kind": "composition", "parts": [specs]}."""
    kind = spec.get("kind")
    if kind == "identity":
        return identity_map()
    if kind == "swap":
        return swap_map()
    if kind == "rotation":
        return rotation_map(spec["angle"], tuple(spec.get("center", (0.5, 0.5))))
    if kind == "dilation":
        return dilation_map(spec["lambda"], spec.get("axis", 0), tuple(spec.get("center", (0.5, 0.5))))
    if kind == "shear":
        return shear_map(spec["amplitude"], spec.get("frequency", 1.0))
    if kind == "composition":
        return compose(*(map_from_spec(p) for p in spec["parts"]))
    raise ValueError(f"unknown map kind {spec!r}")


def verify_map(
    map_: SmoothMap,
    n_pairs: int = 10_000,
    seed: int = 0,
    pair_scale: float = 2.0 ** -8,
    slack: float = 1e-7,
) -> None:
    """Spot-verify the declared Lipschitz constant (both directions) and
    the Jacobian continuity modulus on close sample pairs; raises
    MapValidationError on any violation."""
    rng = philox(seed, 0xBEEF)
    x = rng.random((n_pairs, 2))
    d = rng.standard_normal((n_pairs, 2))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    y = np.clip(x + d * pair_scale, 0.0, 1.0)
    dist = np.linalg.norm(x - y, axis=1)
    keep = dist > 1e-12
    x, y, dist = x[keep], y[keep], dist[keep]
    img = np.linalg.norm(map_.forward(x) - map_.forward(y), axis=1)
    ratio = img / dist
    m = map_.lipschitz
    if np.any(ratio > m * (1.0 + 1e-9) + slack) or np.any(ratio < 1.0 / m * (1.0 - 1e-9) - slack):
        raise MapValidationError(
            f"{map_.name}: sampled expansion in [{ratio.min():.6g}, {ratio.max():.6g}]"
            f" violates declared constant {m:.6g}"
        )
    jgap = np.abs(map_.jac_det(x) - map_.jac_det(y))
    if np.any(jgap > map_.jac_lipschitz * dist + slack):
        raise MapValidationError(f"{map_.name}: Jacobian continuity check failed")
    # round trip
    back = map_.inverse(map_.forward(x))
    if np.max(np.linalg.norm(back - x, axis=1)) > 1e-8:
        raise MapValidationError(f"{map_.name}: inverse is not a left inverse on samples")
