"""Survey observations on one or more areal supports.

A dataset stacks, per support level, the design-based point estimates
("counts") and their reported sampling variances.  Level 1 is the finest
support and carries the latent process; every coarser level is tied to
level 1 through a precomputed change-of-support weight matrix.  The
stacked views (``counts_stacked`` etc.) order observations as level 1
first, then the coarse levels in the order given.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError, JoinError
from .geometry import WeightMatrix


@dataclass(frozen=True, eq=False)
class SurveyLevel:
    """Observations on one support level.

    Parameters
    ----------
    level : int
        1 for the finest support, 2, 3, ... for coarser ones.
    ids : tuple of str
        Unit ids in support order.
    counts : ndarray
        Design-based estimates Z (nonnegative reals; survey-weighted sums
        are generally non-integer).
    variances : ndarray or None
        Reported sampling variances (nonnegative; zeros are tolerated but
        their variance-model terms are dropped).  None when the survey
        publishes no variances.
    weights : WeightMatrix or None
        Change-of-support weights onto level 1; required for level >= 2,
        must be None for level 1.
    """

    level: int
    ids: tuple
    counts: np.ndarray
    variances: np.ndarray = None
    weights: WeightMatrix = None

    def __post_init__(self):
        ids = tuple(str(i) for i in self.ids)
        counts = np.asarray(self.counts, dtype=float)
        n = len(ids)
        if counts.shape != (n,):
            raise DataError(f"level {self.level}: counts shape {counts.shape} does not match {n} ids")
        if not np.all(np.isfinite(counts)) or np.any(counts < 0):
            bad = [ids[k] for k in np.flatnonzero(~np.isfinite(counts) | (counts < 0))]
            raise DataError(f"level {self.level}: nonfinite or negative counts for ids {bad}")
        variances = self.variances
        if variances is not None:
            variances = np.asarray(variances, dtype=float)
            if variances.shape != (n,):
                raise DataError(f"level {self.level}: variances shape {variances.shape} does not match {n} ids")
            if not np.all(np.isfinite(variances)) or np.any(variances < 0):
                bad = [ids[k] for k in np.flatnonzero(~np.isfinite(variances) | (variances < 0))]
                raise DataError(f"level {self.level}: nonfinite or negative variances for ids {bad}")
            zero = np.flatnonzero(variances == 0)
            if zero.size:
                warnings.warn(
                    f"level {self.level}: {zero.size} observation(s) report zero sampling variance; "
                    "their variance-model terms are dropped "
                    f"(ids {[ids[k] for k in zero[:10]]}{'...' if zero.size > 10 else ''})",
                    UserWarning,
                    stacklevel=2,
                )
        if self.level == 1:
            if self.weights is not None:
                raise DataError("level 1 takes no weight matrix (it is the reference support)")
        else:
            if self.weights is None:
                raise DataError(f"level {self.level} requires a change-of-support weight matrix")
            if tuple(self.weights.target_ids) != ids:
                raise DataError(f"level {self.level}: weight-matrix rows do not match the level's ids")
            rowsum = self.weights.matrix.sum(axis=1)
            empty = [ids[k] for k in np.flatnonzero(rowsum <= 0)]
            if empty:
                raise DataError(f"level {self.level}: units with no overlap onto level 1: {empty}")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "variances", variances)

    @property
    def n(self):
        return len(self.ids)


class SurveyDataset:
    """A stack of survey levels, level 1 first.

    Attributes
    ----------
    levels : tuple of SurveyLevel
    n1 : int
        Number of level-1 units.
    n_obs : int
        Total observations across levels.
    coarse_weights : ndarray, shape (n_obs - n1, n1)
        Stacked coarse weight rows (empty when only level 1 is observed).
    """

    def __init__(self, levels):
        levels = tuple(levels)
        if not levels or levels[0].level != 1:
            raise DataError("the first level of a dataset must be level 1")
        seen = set()
        for lv in levels:
            if lv.level in seen:
                raise DataError(f"duplicate level {lv.level} in dataset")
            seen.add(lv.level)
        ids1 = levels[0].ids
        for lv in levels[1:]:
            if lv.level == 1:
                raise DataError("only one level-1 block is allowed")
            if tuple(lv.weights.source_ids) != ids1:
                raise DataError(
                    f"level {lv.level}: weight-matrix columns do not match the level-1 ids"
                )
        self.levels = levels
        self.n1 = levels[0].n
        self.n_obs = sum(lv.n for lv in levels)
        if len(levels) > 1:
            self.coarse_weights = np.vstack([lv.weights.matrix for lv in levels[1:]])
        else:
            self.coarse_weights = np.zeros((0, self.n1))

    # -- stacked views ----------------------------------------------------
    @property
    def ids1(self):
        return self.levels[0].ids

    @property
    def counts1(self):
        return self.levels[0].counts

    @property
    def counts_stacked(self):
        return np.concatenate([lv.counts for lv in self.levels])

    @property
    def has_variances(self):
        return all(lv.variances is not None for lv in self.levels)

    @property
    def variances_stacked(self):
        """Stacked variances; entries are NaN for levels reporting none."""
        parts = []
        for lv in self.levels:
            if lv.variances is None:
                parts.append(np.full(lv.n, np.nan))
            else:
                parts.append(lv.variances)
        return np.concatenate(parts)

    @property
    def ids_stacked(self):
        out = []
        for lv in self.levels:
            out.extend(f"L{lv.level}:{uid}" for uid in lv.ids)
        return tuple(out)

    def variance_mask(self):
        """Boolean mask of observations whose variance term is usable."""
        v = self.variances_stacked
        return np.isfinite(v) & (v > 0)

    def replace_observations(self, counts_stacked, variances_stacked=None):
        """New dataset with the same structure but different observations
        (used for replicate data).  Variances may be None to drop them."""
        counts_stacked = np.asarray(counts_stacked, dtype=float)
        if counts_stacked.shape != (self.n_obs,):
            raise DataError("replacement counts have the wrong length")
        new_levels = []
        offset = 0
        for lv in self.levels:
            sl = slice(offset, offset + lv.n)
            var = None
            if variances_stacked is not None:
                var = np.asarray(variances_stacked, dtype=float)[sl]
            new_levels.append(
                SurveyLevel(level=lv.level, ids=lv.ids, counts=counts_stacked[sl],
                            variances=var, weights=lv.weights)
            )
            offset += lv.n
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            return SurveyDataset(new_levels)


def read_survey_csv(path, support, level=1, weights=None, require_variance=True):
    """Read one level of survey observations, joined to a support by id.

    The CSV must have columns ``id`` and ``count``; ``variance`` is
    required unless ``require_variance`` is False.  The join is by ``id``
    only and must be exact both ways: every support unit needs exactly one
    row and every row a unit.  All join failures are reported together.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "id" not in reader.fieldnames:
            raise DataError(f"{path}: missing required column 'id'")
        if "count" not in reader.fieldnames:
            raise DataError(f"{path}: missing required column 'count'")
        has_variance = "variance" in reader.fieldnames
        if require_variance and not has_variance:
            raise DataError(
                f"{path}: missing required column 'variance' "
                "(only the variance-free model accepts variance-less input)"
            )
        rows = {}
        dupes = []
        for rec in reader:
            uid = str(rec["id"])
            if uid in rows:
                dupes.append(uid)
            rows[uid] = rec
    if dupes:
        raise DataError(f"{path}: duplicate ids {sorted(set(dupes))}")
    support_ids = set(support.ids)
    table_ids = set(rows)
    missing_rows = support_ids - table_ids
    missing_units = table_ids - support_ids
    if missing_rows or missing_units:
        raise JoinError(
            f"{path}: id join with the support failed",
            missing_in_table=missing_rows,
            missing_in_geometry=missing_units,
        )
    counts = np.empty(len(support.ids))
    variances = np.empty(len(support.ids)) if has_variance else None
    for k, uid in enumerate(support.ids):
        rec = rows[uid]
        try:
            counts[k] = float(rec["count"])
        except ValueError:
            raise DataError(f"{path}: non-numeric count for id {uid!r}: {rec['count']!r}") from None
        if has_variance:
            try:
                variances[k] = float(rec["variance"])
            except ValueError:
                raise DataError(
                    f"{path}: non-numeric variance for id {uid!r}: {rec['variance']!r}"
                ) from None
    return SurveyLevel(level=level, ids=support.ids, counts=counts,
                       variances=variances, weights=weights)


def write_survey_csv(path, level_block):
    """Write one survey level back out as id,count[,variance]."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if level_block.variances is not None:
            writer.writerow(["id", "count", "variance"])
            for uid, z, v in zip(level_block.ids, level_block.counts, level_block.variances):
                writer.writerow([uid, repr(float(z)), repr(float(v))])
        else:
            writer.writerow(["id", "count"])
            for uid, z in zip(level_block.ids, level_block.counts):
                writer.writerow([uid, repr(float(z))])
