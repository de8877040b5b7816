"""Experiment geometry: relay wall, laser and observed spots, target anchors,
and discretization of human-shaped targets into reflective surface patches.

Coordinate frame: the relay wall is the z = 0 plane, +z points into the
hidden volume, +y is up. All lengths are metres, times nanoseconds unless
a function says otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np

from . import SPEED_OF_LIGHT_M_PER_NS

__all__ = [
    "POSITION_NAMES",
    "Point3",
    "Patch",
    "PatchSet",
    "PersonSpec",
    "Scene",
    "discretize_person",
    "path_length",
    "time_of_flight",
    "temporal_to_depth",
    "position_tof_spread",
    "position_index",
    "default_scene",
    "scene_from_config",
    "persons_from_config",
]

POSITION_NAMES = ("A", "B", "C", "D", "E", "Db", "Df")

# Arc bearings (degrees off the wall normal, about the floor point below the
# laser/observed midpoint). Deliberately asymmetric: a mirror-symmetric pair
# of anchors would produce statistically identical echoes at mirrored pixels.
_BEARINGS_DEG = {"A": -40.0, "B": -22.0, "C": -6.0, "D": 12.0, "E": 28.0}
_ARC_RADIUS_M = 1.5
_DB_RADIUS_M = 1.25
_DF_RADIUS_M = 1.75


@dataclass(frozen=True)
class Point3:
    """A position in metres."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise ValueError(f"non-finite point ({self.x}, {self.y}, {self.z})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)


def _as_xyz(p) -> np.ndarray:
    if isinstance(p, Point3):
        return p.as_array()
    a = np.asarray(p, dtype=np.float64)
    if a.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class Patch:
    """A small planar reflective facet of a target surface."""

    center: Point3
    normal: tuple
    area: float
    albedo: float

    def __post_init__(self):
        if self.area <= 0:
            raise ValueError(f"patch area must be positive, got {self.area}")
        if not 0.0 <= self.albedo <= 1.0:
            raise ValueError(f"albedo must be in [0, 1], got {self.albedo}")
        n = np.asarray(self.normal, dtype=np.float64)
        if n.shape != (3,) or abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError(f"normal must be a unit 3-vector, got {self.normal}")


@dataclass(frozen=True)
class PatchSet:
    """Patches stored as flat arrays for vectorized radiometry.

    ``centers`` and ``normals`` are (n, 3), ``areas`` and ``albedos`` (n,).
    Areas are wall-facing projected areas; normals are outward unit vectors.
    """

    centers: np.ndarray
    normals: np.ndarray
    areas: np.ndarray
    albedos: np.ndarray

    def __post_init__(self):
        n = self.centers.shape[0]
        if self.centers.shape != (n, 3) or self.normals.shape != (n, 3):
            raise ValueError("centers and normals must have shape (n, 3)")
        if self.areas.shape != (n,) or self.albedos.shape != (n,):
            raise ValueError("areas and albedos must have shape (n,)")
        for a in (self.centers, self.normals, self.areas, self.albedos):
            a.setflags(write=False)

    def __len__(self) -> int:
        return self.centers.shape[0]

    def total_area(self) -> float:
        return float(self.areas.sum())

    def weighted_area(self) -> float:
        """Albedo-weighted total area, m²."""
        return float((self.areas * self.albedos).sum())

    def patches(self) -> Iterator[Patch]:
        for i in range(len(self)):
            yield Patch(
                center=Point3(*self.centers[i]),
                normal=tuple(self.normals[i]),
                area=float(self.areas[i]),
                albedo=float(self.albedos[i]),
            )

    @staticmethod
    def concatenate(parts: Sequence["PatchSet"]) -> "PatchSet":
        return PatchSet(
            centers=np.concatenate([p.centers for p in parts], axis=0),
            normals=np.concatenate([p.normals for p in parts], axis=0),
            areas=np.concatenate([p.areas for p in parts]),
            albedos=np.concatenate([p.albedos for p in parts]),
        )


@dataclass(frozen=True)
class PersonSpec:
    """Body shape and reflectivity parameters of one target individual."""

    person_id: int
    height: float
    shoulder_width: float
    torso_depth: float
    head_radius: float
    clothing_albedo: float
    skin_albedo: float

    def __post_init__(self):
        if self.person_id < 1:
            raise ValueError(f"person_id must be >= 1, got {self.person_id}")
        for name in ("height", "shoulder_width", "torso_depth", "head_radius"):
            v = getattr(self, name)
            if not 0.0 < v < 3.0:
                raise ValueError(f"{name} must be in (0, 3) m, got {v}")
        if self.height <= 2.0 * self.head_radius:
            raise ValueError("height must exceed the head diameter")
        for name in ("clothing_albedo", "skin_albedo"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")


@dataclass(frozen=True)
class Scene:
    """Static geometry of one acquisition setup."""

    laser_spot: Point3
    observed_spot: Point3
    wall_normal: tuple
    detector_to_wall_distance: float
    positions: Mapping[str, Point3]
    observed_area_side: float = 0.03

    def __post_init__(self):
        n = np.asarray(self.wall_normal, dtype=np.float64)
        if n.shape != (3,) or abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError("wall_normal must be a unit 3-vector")
        if self.detector_to_wall_distance <= 0:
            raise ValueError("detector_to_wall_distance must be positive")
        if self.observed_area_side <= 0:
            raise ValueError("observed_area_side must be positive")
        got = tuple(self.positions.keys())
        if sorted(got) != sorted(POSITION_NAMES):
            raise ValueError(
                f"positions must contain exactly {POSITION_NAMES}, got {got}"
            )
        ordered = {name: self.positions[name] for name in POSITION_NAMES}
        object.__setattr__(self, "positions", ordered)

    def anchor(self, name: str) -> Point3:
        try:
            return self.positions[name]
        except KeyError:
            raise ValueError(f"unknown position name {name!r}") from None


def position_index(name: str) -> int:
    """Canonical label index of a position name."""
    try:
        return POSITION_NAMES.index(name)
    except ValueError:
        raise ValueError(f"unknown position name {name!r}") from None


def path_length(laser_spot, patch_center, observed_spot) -> float:
    """Wall-to-target-to-wall path: |laser_spot − patch| + |patch − observed_spot|, m."""
    l = _as_xyz(laser_spot)
    p = _as_xyz(patch_center)
    o = _as_xyz(observed_spot)
    return float(np.linalg.norm(l - p) + np.linalg.norm(p - o))


def time_of_flight(total_path_m) -> float:
    """Propagation time in ns of a path given in metres."""
    path = np.asarray(total_path_m, dtype=np.float64)
    if np.any(path < 0):
        raise ValueError("path length must be non-negative")
    out = path / SPEED_OF_LIGHT_M_PER_NS
    return float(out) if out.ndim == 0 else out


def temporal_to_depth(dt_ps) -> float:
    """Depth resolution in cm equivalent to a timing width in ps (round trip)."""
    dt = np.asarray(dt_ps, dtype=np.float64)
    if np.any(dt < 0):
        raise ValueError("temporal width must be non-negative")
    out = SPEED_OF_LIGHT_M_PER_NS * dt / 20.0
    return float(out) if out.ndim == 0 else out


def position_tof_spread(scene: Scene, subset: Sequence[str]) -> float:
    """Max minus min time of flight (ns) over the named anchors.

    Validates the constructed geometry: A through E must stay within twice
    the timing response, while {D, Db, Df} must be spread far wider.
    """
    names = list(subset)
    if not names:
        raise ValueError("subset must name at least one position")
    tofs = [
        time_of_flight(path_length(scene.laser_spot, scene.anchor(n), scene.observed_spot))
        for n in names
    ]
    return max(tofs) - min(tofs)


def _tile_front_half(center: np.ndarray, semi: np.ndarray, albedo: float,
                     patch_side: float) -> PatchSet:
    """Tile the wall-facing half of an axis-aligned ellipsoid.

    Cells of side ``patch_side`` cover the frontal silhouette; a cell is kept
    when its center lies inside the silhouette ellipse, so the summed
    (projected) area converges to pi*a*b as the tiling refines. Falls back to
    a single front-pole patch of exactly the analytic area when the tiling is
    coarser than the body.
    """
    a, b, c = semi
    nx = max(1, math.ceil(2.0 * a / patch_side))
    ny = max(1, math.ceil(2.0 * b / patch_side))
    xs = (np.arange(nx) - (nx - 1) / 2.0) * patch_side
    ys = (np.arange(ny) - (ny - 1) / 2.0) * patch_side
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    r2 = (gx / a) ** 2 + (gy / b) ** 2
    keep = r2 <= 1.0
    if not keep.any():
        return PatchSet(
            centers=center[None, :] + np.array([[0.0, 0.0, -c]]),
            normals=np.array([[0.0, 0.0, -1.0]]),
            areas=np.array([math.pi * a * b]),
            albedos=np.array([albedo]),
        )
    dx = gx[keep]
    dy = gy[keep]
    dz = -c * np.sqrt(1.0 - r2[keep])
    centers = center[None, :] + np.stack([dx, dy, dz], axis=1)
    normals = np.stack([dx / a**2, dy / b**2, dz / c**2], axis=1)
    rim = np.linalg.norm(normals, axis=1) == 0.0
    normals[rim] = (0.0, 0.0, -1.0)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    n = dx.shape[0]
    return PatchSet(
        centers=centers,
        normals=normals,
        areas=np.full(n, patch_side**2),
        albedos=np.full(n, albedo),
    )


def discretize_person(spec: PersonSpec, anchor: Point3, patch_side: float) -> PatchSet:
    """Build the wall-facing surface patches of a person standing at ``anchor``.

    The body is a torso ellipsoid from the floor to the neck plus a head
    sphere, both centered on the anchor's vertical; torso patches carry the
    clothing albedo, head patches the skin albedo.
    """
    if patch_side <= 0:
        raise ValueError(f"patch_side must be positive, got {patch_side}")
    if anchor.z <= 0:
        raise ValueError("anchor must lie in front of the relay wall (z > 0)")
    torso_h = spec.height - 2.0 * spec.head_radius
    base = anchor.as_array()
    torso = _tile_front_half(
        center=base + np.array([0.0, torso_h / 2.0, 0.0]),
        semi=np.array([spec.shoulder_width / 2.0, torso_h / 2.0, spec.torso_depth / 2.0]),
        albedo=spec.clothing_albedo,
        patch_side=patch_side,
    )
    head = _tile_front_half(
        center=base + np.array([0.0, spec.height - spec.head_radius, 0.0]),
        semi=np.full(3, spec.head_radius),
        albedo=spec.skin_albedo,
        patch_side=patch_side,
    )
    return PatchSet.concatenate([torso, head])


def _arc_anchor(radius_m: float, bearing_deg: float) -> Point3:
    t = math.radians(bearing_deg)
    return Point3(radius_m * math.sin(t), 0.0, radius_m * math.cos(t))


def default_scene() -> Scene:
    """The checked-in default geometry.

    A through E sit on a 1.5 m floor arc about the point below the midpoint
    of laser and observed spots, so their wall-to-target-to-wall times of
    flight agree to well under the timing response. Db and Df reuse D's
    bearing at 1.25 m and 1.75 m.
    """
    positions = {n: _arc_anchor(_ARC_RADIUS_M, b) for n, b in _BEARINGS_DEG.items()}
    positions["Db"] = _arc_anchor(_DB_RADIUS_M, _BEARINGS_DEG["D"])
    positions["Df"] = _arc_anchor(_DF_RADIUS_M, _BEARINGS_DEG["D"])
    return Scene(
        laser_spot=Point3(-0.5, 1.2, 0.0),
        observed_spot=Point3(0.5, 1.2, 0.0),
        wall_normal=(0.0, 0.0, 1.0),
        detector_to_wall_distance=1.0,
        positions=positions,
        observed_area_side=0.03,
    )


def _vec3(cfg: Mapping, key: str) -> Point3:
    v = cfg[key]
    if not (isinstance(v, tuple) and len(v) == 3):
        raise ValueError(f"{key} must be three numbers, got {v!r}")
    return Point3(*v)


def scene_from_config(cfg: Mapping) -> Scene:
    """Build a Scene from a parsed config mapping (see :mod:`nlosid.config`)."""
    positions = {}
    for name in POSITION_NAMES:
        positions[name] = _vec3(cfg, f"scene.position.{name}")
    return Scene(
        laser_spot=_vec3(cfg, "scene.laser_spot"),
        observed_spot=_vec3(cfg, "scene.observed_spot"),
        wall_normal=tuple(cfg["scene.wall_normal"]),
        detector_to_wall_distance=float(cfg["scene.detector_to_wall_distance"]),
        positions=positions,
        observed_area_side=float(cfg.get("scene.observed_area_side", 0.03)),
    )


def persons_from_config(cfg: Mapping) -> tuple:
    """Collect `person.<id>.*` entries into PersonSpecs, ordered by id."""
    ids = set()
    for key in cfg:
        parts = key.split(".")
        if len(parts) == 3 and parts[0] == "person":
            try:
                ids.add(int(parts[1]))
            except ValueError:
                raise ValueError(f"person id must be an integer, got {key!r}") from None
    if not ids:
        raise ValueError("config defines no person.<id>.* entries")
    persons = []
    for pid in sorted(ids):
        def get(field):
            return float(cfg[f"person.{pid}.{field}"])
        persons.append(
            PersonSpec(
                person_id=pid,
                height=get("height"),
                shoulder_width=get("shoulder_width"),
                torso_depth=get("torso_depth"),
                head_radius=get("head_radius"),
                clothing_albedo=get("clothing_albedo"),
                skin_albedo=get("skin_albedo"),
            )
        )
    return tuple(persons)
