"""Areal supports, polygon overlap, change-of-support weights, adjacency.

Areal data live on collections of planar polygons ("supports").  The finest
support (level 1) carries the latent process; coarser observed supports and
prediction targets are linked to it through area-overlap weight vectors
w_i = area(B ∩ A_i) / area(A_i).  This module computes those weights by exact
polygon clipping (GEOS via shapely), derives boundary-sharing adjacency
matrices, and round-trips supports through GeoJSON.

All geometry objects are immutable after construction.  Coordinates are
planar map units; no geodesic computation is attempted.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import shapely
from shapely.geometry import MultiPolygon, Polygon, mapping, shape as _shapely_shape
from shapely.geometry.polygon import orient as _orient
from shapely.strtree import STRtree

from .errors import DataError, DegenerateGeometryError

logger = logging.getLogger(__name__)

#: Relative tolerance for area identities (cached vs. recomputed, symmetry).
AREA_RELTOL = 1e-9
#: Relative tolerance for partition / conservation checks.
PARTITION_RELTOL = 1e-6
#: Overlap fractions below this are treated as clipping noise and dropped.
SLIVER_RELTOL = 1e-12

#: ``ArealSupport.level`` value marking a prediction-target support.
TARGET_LEVEL = 0


class CoverageWarning(UserWarning):
    """Target units not fully covered by the source partition."""


def shoelace_area(rings):
    """Total area of a list of rings by the shoelace formula.

    Counter-clockwise rings contribute positive area, clockwise rings
    (holes) negative, so a correctly oriented ring list sums to the
    polygon's area.
    """
    total = 0.0
    for ring in rings:
        xy = np.asarray(ring, dtype=float)
        x, y = xy[:, 0], xy[:, 1]
        total += 0.5 * np.sum(x[:-1] * y[1:] - x[1:] * y[:-1])
    return total


def _close_ring(coords):
    xy = np.asarray(coords, dtype=float)
    if xy.ndim != 2 or xy.shape[1] != 2 or xy.shape[0] < 3:
        raise DataError("each ring needs at least 3 planar (x, y) vertices")
    if not np.array_equal(xy[0], xy[-1]):
        xy = np.vstack([xy, xy[0]])
    return xy


def _rings_from_geometry(geom):
    """Flatten a (Multi)Polygon into oriented rings: outers CCW, holes CW."""
    if isinstance(geom, Polygon):
        parts = [geom]
    elif isinstance(geom, MultiPolygon):
        parts = list(geom.geoms)
    else:
        raise DataError(f"unsupported geometry type {geom.geom_type!r}; expected Polygon or MultiPolygon")
    rings = []
    for part in parts:
        part = _orient(part, sign=1.0)  # outer CCW, holes CW
        rings.append(np.asarray(part.exterior.coords, dtype=float))
        for interior in part.interiors:
            rings.append(np.asarray(interior.coords, dtype=float))
    return tuple(rings)


def _geometry_from_rings(rings):
    """Rebuild a (Multi)Polygon from an oriented flat ring list."""
    parts = []
    current_outer = None
    current_holes = []
    for ring in rings:
        signed = shoelace_area([ring])
        if signed >= 0:
            if current_outer is not None:
                parts.append(Polygon(current_outer, current_holes))
            current_outer = ring
            current_holes = []
        else:
            if current_outer is None:
                raise DataError("ring list starts with a hole (clockwise ring)")
            current_holes.append(ring)
    if current_outer is None:
        raise DataError("no outer (counter-clockwise) ring found")
    parts.append(Polygon(current_outer, current_holes))
    return parts[0] if len(parts) == 1 else MultiPolygon(parts)


@dataclass(frozen=True, eq=False)
class ArealUnit:
    """A single areal unit: an id plus one or more oriented polygon rings.

    Parameters
    ----------
    id : str
        Unique label within a support.
    rings : tuple of ndarray
        Closed coordinate rings, outer rings counter-clockwise and holes
        clockwise, each an (k, 2) float array with first vertex repeated
        at the end.
    """

    id: str
    rings: tuple
    geometry: object = field(repr=False, compare=False, default=None)
    area: float = field(default=0.0)

    def __post_init__(self):
        rings = tuple(_close_ring(r) for r in self.rings)
        object.__setattr__(self, "rings", rings)
        geom = self.geometry
        if geom is None:
            geom = _geometry_from_rings(rings)
        if not geom.is_valid:
            raise DataError(f"unit {self.id!r} has an invalid (self-intersecting or degenerate) boundary")
        object.__setattr__(self, "geometry", geom)
        area = geom.area
        if not area > 0.0:
            raise DataError(f"unit {self.id!r} has nonpositive area {area!r}")
        object.__setattr__(self, "area", float(area))
        ringsum = shoelace_area(rings)
        if abs(ringsum - area) > AREA_RELTOL * area:
            raise DegenerateGeometryError(
                f"unit {self.id!r}: shoelace area {ringsum!r} disagrees with polygon area {area!r}"
            )

    @classmethod
    def from_shapely(cls, id, geom):
        """Build a unit from a shapely Polygon or MultiPolygon."""
        if not geom.is_valid:
            raise DataError(f"unit {id!r} has an invalid (self-intersecting or degenerate) boundary")
        return cls(id=str(id), rings=_rings_from_geometry(geom), geometry=geom)

    @classmethod
    def rectangle(cls, id, xmin, ymin, xmax, ymax):
        """Axis-aligned rectangular unit (a common building block)."""
        if not (xmax > xmin and ymax > ymin):
            raise DataError(f"unit {id!r}: rectangle bounds are empty")
        ring = [(xmin, ymin), (xmax, ymin), (xmax, ymax), (xmin, ymax), (xmin, ymin)]
        return cls(id=str(id), rings=(np.asarray(ring, dtype=float),))

    @property
    def bounds(self):
        return self.geometry.bounds


class ArealSupport:
    """An ordered collection of areal units forming (approximately) a partition.

    Parameters
    ----------
    level : int
        Support level: 1 is the finest (source) support, 2, 3, ... are
        coarser observed supports, and ``TARGET_LEVEL`` (0) marks a
        prediction-target support.
    units : sequence of ArealUnit
        Units in a fixed order; all vectors aligned to a support use this
        order.
    adjacency : ndarray, optional
        Symmetric 0/1 boundary-sharing matrix (required downstream only
        for level 1).  Computed on demand by ``adjacency_from_boundaries``.
    validate : bool
        If True (default), check pairwise interior disjointness and
        adjacency symmetry at construction.
    """

    def __init__(self, level, units, adjacency=None, validate=True):
        level = int(level)
        if level < 0:
            raise DataError(f"support level must be >= 0, got {level}")
        self.level = level
        self.units = tuple(units)
        if not self.units:
            raise DataError("a support needs at least one unit")
        ids = [u.id for u in self.units]
        dupes = {i for i in ids if ids.count(i) > 1}
        if dupes:
            raise DataError(f"duplicate unit ids in support: {sorted(dupes)}")
        self.ids = tuple(ids)
        self._index = {uid: k for k, uid in enumerate(ids)}
        self.areas = np.array([u.area for u in self.units], dtype=float)
        if adjacency is not None:
            adjacency = np.asarray(adjacency)
            if adjacency.shape != (len(self.units), len(self.units)):
                raise DataError("adjacency shape does not match the number of units")
        self.adjacency = adjacency
        self._tree = None
        if validate:
            self.validate()

    def __len__(self):
        return len(self.units)

    def __getitem__(self, key):
        if isinstance(key, str):
            return self.units[self._index[key]]
        return self.units[key]

    def index_of(self, uid):
        try:
            return self._index[uid]
        except KeyError:
            raise DataError(f"unknown unit id {uid!r}") from None

    @property
    def bounds(self):
        xs = np.array([u.bounds for u in self.units])
        return (xs[:, 0].min(), xs[:, 1].min(), xs[:, 2].max(), xs[:, 3].max())

    def _strtree(self):
        if self._tree is None:
            self._tree = STRtree([u.geometry for u in self.units])
        return self._tree

    def validate(self):
        """Check the partition invariants; raise DataError on violation."""
        tree = self._strtree()
        geoms = [u.geometry for u in self.units]
        overlapping = []
        for i, gi in enumerate(geoms):
            for j in tree.query(gi, predicate="intersects"):
                j = int(j)
                if j <= i:
                    continue
                inter = _safe_intersection(gi, geoms[j], self.units[i].id, self.units[j].id)
                limit = AREA_RELTOL * min(self.units[i].area, self.units[j].area)
                if inter.area >= limit:
                    overlapping.append((self.units[i].id, self.units[j].id, inter.area))
        if overlapping:
            pairs = ", ".join(f"({a!r}, {b!r}: {x:.3g})" for a, b, x in overlapping[:20])
            raise DataError(f"unit interiors overlap beyond tolerance: {pairs}")
        if self.adjacency is not None:
            adj = self.adjacency
            if not np.array_equal(adj, adj.T):
                raise DataError("adjacency matrix is not symmetric")
            if np.any(np.diag(adj) != 0):
                raise DataError("adjacency matrix has nonzero diagonal entries")

    @property
    def checksum(self):
        """SHA-256 over level, ids, and ring coordinates (order-sensitive)."""
        h = hashlib.sha256()
        h.update(str(self.level).encode())
        for unit in self.units:
            h.update(b"\x00")
            h.update(unit.id.encode("utf-8"))
            h.update(b"\x01")
            for ring in unit.rings:
                h.update(np.ascontiguousarray(ring, dtype="<f8").tobytes())
                h.update(b"\x02")
        return h.hexdigest()

    @classmethod
    def from_geojson(cls, source, level, validate=True):
        """Read a support from a GeoJSON FeatureCollection.

        ``source`` may be a path or an already-parsed dict.  Every feature
        must be a Polygon or MultiPolygon and carry a property ``"id"``.
        All problems are collected and reported together.
        """
        if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
            with open(source) as fh:
                doc = json.load(fh)
        else:
            doc = source
        if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
            raise DataError("expected a GeoJSON FeatureCollection")
        features = doc.get("features", [])
        if not features:
            raise DataError("FeatureCollection has no features")
        problems = []
        units = []
        for k, feat in enumerate(features):
            props = feat.get("properties") or {}
            uid = props.get("id")
            if uid is None:
                problems.append(f"feature #{k} has no 'id' property")
                continue
            uid = str(uid)
            try:
                geom = _shapely_shape(feat.get("geometry") or {})
            except Exception as exc:
                problems.append(f"feature {uid!r}: unreadable geometry ({exc})")
                continue
            try:
                units.append(ArealUnit.from_shapely(uid, geom))
            except DataError as exc:
                problems.append(f"feature {uid!r}: {exc}")
        if problems:
            raise DataError("invalid GeoJSON input: " + "; ".join(problems))
        return cls(level=level, units=units, validate=validate)

    def to_geojson(self, path=None, properties=None):
        """Emit the support as a GeoJSON FeatureCollection.

        ``properties`` optionally maps unit id -> extra property dict to
        merge into each feature (e.g. posterior summaries).
        """
        features = []
        for unit in self.units:
            props = {"id": unit.id}
            if properties and unit.id in properties:
                props.update(properties[unit.id])
            features.append(
                {"type": "Feature", "properties": props, "geometry": mapping(unit.geometry)}
            )
        doc = {"type": "FeatureCollection", "features": features}
        if path is not None:
            with open(path, "w") as fh:
                json.dump(doc, fh)
        return doc


def _safe_intersection(ga, gb, id_a="?", id_b="?"):
    try:
        inter = ga.intersection(gb)
    except shapely.errors.GEOSException as exc:
        raise DegenerateGeometryError(f"polygon clipping failed for units {id_a!r}, {id_b!r}: {exc}") from exc
    return inter


def overlap_fraction(a, b):
    """Fraction of unit ``a`` covered by unit ``b``: area(b ∩ a) / area(a).

    Computed by exact polygon clipping; raises DegenerateGeometryError if
    clipping fails (the caller may fall back to ``overlap_fraction_raster``).
    Fractions below ``SLIVER_RELTOL`` are returned as exactly 0.0, and
    fractions within ``AREA_RELTOL`` of 1 as exactly 1.0.
    """
    inter = _safe_intersection(a.geometry, b.geometry, a.id, b.id)
    frac = inter.area / a.area
    if frac > 1.0 + AREA_RELTOL:
        raise DegenerateGeometryError(
            f"overlap fraction {frac!r} exceeds 1 for units {a.id!r}, {b.id!r}"
        )
    if frac < SLIVER_RELTOL:
        return 0.0
    if frac > 1.0 - AREA_RELTOL:
        return 1.0
    return float(frac)


def overlap_fraction_raster(a, b, cell_size=None):
    """Raster approximation of ``overlap_fraction`` for pathological geometry.

    Covers the bounding box of ``a`` with square cells of side ``cell_size``
    (default: 1/512 of the larger box dimension) and counts cell centers
    inside ``a`` and inside both units.
    """
    xmin, ymin, xmax, ymax = a.bounds
    if cell_size is None:
        cell_size = max(xmax - xmin, ymax - ymin) / 512.0
    if cell_size <= 0:
        raise DataError("cell_size must be positive")
    xs = np.arange(xmin + cell_size / 2.0, xmax, cell_size)
    ys = np.arange(ymin + cell_size / 2.0, ymax, cell_size)
    if xs.size == 0 or ys.size == 0:
        raise DegenerateGeometryError(f"raster cell size {cell_size} too coarse for unit {a.id!r}")
    gx, gy = np.meshgrid(xs, ys)
    gx, gy = gx.ravel(), gy.ravel()
    in_a = shapely.contains_xy(a.geometry, gx, gy)
    n_a = int(in_a.sum())
    if n_a == 0:
        raise DegenerateGeometryError(f"raster fallback found no cells inside unit {a.id!r}")
    in_both = shapely.contains_xy(b.geometry, gx[in_a], gy[in_a])
    return float(in_both.sum()) / n_a


@dataclass(frozen=True)
class CosWeights:
    """Change-of-support weights for one target unit.

    ``weights[i] = area(B ∩ A_i) / area(A_i)`` over the source units, in
    source order.
    """

    target_id: str
    weights: np.ndarray


class WeightMatrix:
    """Dense target × source matrix of change-of-support weights.

    Iterating yields one ``CosWeights`` per target unit.  Row order follows
    the target support, column order the source support.
    """

    def __init__(self, matrix, target_ids, source_ids, source_checksum=None, target_checksum=None):
        matrix = np.asarray(matrix, dtype=float)
        if matrix.shape != (len(target_ids), len(source_ids)):
            raise DataError("weight matrix shape does not match id lists")
        self.matrix = matrix
        self.target_ids = tuple(str(t) for t in target_ids)
        self.source_ids = tuple(str(s) for s in source_ids)
        self.source_checksum = source_checksum
        self.target_checksum = target_checksum

    def __len__(self):
        return len(self.target_ids)

    def __iter__(self):
        for k, tid in enumerate(self.target_ids):
            yield CosWeights(target_id=tid, weights=self.matrix[k])

    def __getitem__(self, k):
        return CosWeights(target_id=self.target_ids[k], weights=self.matrix[k])

    def to_csv(self, path):
        """Write the matrix as CSV: rows = target ids, columns = source ids."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["target_id", *self.source_ids])
            for tid, row in zip(self.target_ids, self.matrix):
                writer.writerow([tid, *(repr(float(v)) for v in row)])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if not header or header[0] != "target_id":
                raise DataError(f"{path}: expected first column 'target_id'")
            source_ids = header[1:]
            target_ids, rows = [], []
            for rec in reader:
                target_ids.append(rec[0])
                rows.append([float(v) for v in rec[1:]])
        return cls(np.asarray(rows, dtype=float), target_ids, source_ids)


def cos_weights(source, target, raster_cell_size=None):
    """Change-of-support weight matrix from a level-1 source support to a target.

    Parameters
    ----------
    source : ArealSupport
        The finest (level-1) support carrying the latent process.
    target : ArealSupport
        Any support whose units lie within the source domain (a coverage
        warning is issued for units with gap fraction > 1e-6).
    raster_cell_size : float, optional
        If given, pairs whose exact clipping fails fall back to the raster
        approximation at this cell size instead of raising.

    Returns
    -------
    WeightMatrix
        Rows follow ``target`` order, columns ``source`` order; entry
        (m, i) is area(B_m ∩ A_i) / area(A_i).
    """
    tree = source._strtree()
    n = len(source)
    w = np.zeros((len(target), n), dtype=float)
    uncovered = []
    for m, tunit in enumerate(target.units):
        for i in tree.query(tunit.geometry, predicate="intersects"):
            i = int(i)
            sunit = source.units[i]
            try:
                frac = overlap_fraction(sunit, tunit)
            except DegenerateGeometryError:
                if raster_cell_size is None:
                    raise
                frac = overlap_fraction_raster(sunit, tunit, cell_size=raster_cell_size)
                if frac < SLIVER_RELTOL:
                    frac = 0.0
            w[m, i] = frac
        covered = float(w[m] @ source.areas)
        gap = (tunit.area - covered) / tunit.area
        if gap > PARTITION_RELTOL:
            uncovered.append((tunit.id, gap))
    if uncovered:
        detail = ", ".join(f"{tid!r} (gap fraction {gap:.3g})" for tid, gap in uncovered)
        warnings.warn(
            f"target units not fully covered by the source partition: {detail}",
            CoverageWarning,
            stacklevel=2,
        )
    return WeightMatrix(
        w,
        target_ids=target.ids,
        source_ids=source.ids,
        source_checksum=source.checksum,
        target_checksum=target.checksum,
    )


def adjacency_from_boundaries(support, rule="rook"):
    """Symmetric 0/1 adjacency from shared boundaries.

    Under the rook rule (default) two units are neighbors iff they share a
    boundary of positive length; under the queen rule a single shared point
    suffices.  Isolated units are permitted but reported through the module
    logger.
    """
    if rule not in ("rook", "queen"):
        raise DataError(f"unknown adjacency rule {rule!r}; expected 'rook' or 'queen'")
    n = len(support)
    adj = np.zeros((n, n), dtype=int)
    tree = support._strtree()
    geoms = [u.geometry for u in support.units]
    for i, gi in enumerate(geoms):
        for j in tree.query(gi, predicate="intersects"):
            j = int(j)
            if j <= i:
                continue
            inter = _safe_intersection(gi, geoms[j], support.units[i].id, support.units[j].id)
            if inter.is_empty:
                continue
            if rule == "rook" and inter.length <= 0.0:
                continue
            adj[i, j] = adj[j, i] = 1
    isolated = [support.units[i].id for i in range(n) if adj[i].sum() == 0]
    if isolated:
        logger.warning("isolated units (no boundary neighbors): %s", ", ".join(isolated))
    return adj
