"""Posterior draw container and its on-disk store.

``PosteriorDraws`` holds the retained states column-wise (one array per
parameter block, first axis = draw index), the per-draw latent mean
vector mu1, and a metadata block (seed, config fingerprint, geometry
checksum, acceptance ledger, mixing diagnostics).

``save``/``load`` round-trip everything — including the basis, the
dataset, and optionally the level-1 geometry — through the sectioned
binary container, so a fitted model is a single reloadable file.  The
only non-reproducible byte in a store is the ``created_at`` field of
the META section.
"""

from __future__ import annotations

import csv
import json
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .basis import MoranBasis
from .data import SurveyDataset, SurveyLevel
from .errors import DataError
from .geometry import ArealSupport, WeightMatrix
from .io import canonical_json, pack_arrays, read_container, unpack_arrays, write_container
from .model import ModelState


@dataclass(eq=False)
class PosteriorDraws:
    """Retained posterior draws plus everything needed to reuse them."""

    beta: np.ndarray
    eta: np.ndarray
    xi: np.ndarray
    ab: np.ndarray
    phi: np.ndarray
    sigma2_eps: np.ndarray
    sigma2_gamma: np.ndarray
    mu1: np.ndarray
    meta: dict
    basis: MoranBasis = None
    dataset: SurveyDataset = None
    X: np.ndarray = None
    support: ArealSupport = None

    @property
    def n_draws(self):
        return int(self.phi.size)

    @property
    def geometry_checksum(self):
        return self.meta.get("geometry_checksum")

    def state(self, k):
        """Reconstruct the k-th retained state as a ModelState."""
        return ModelState(
            beta=self.beta[k], eta=self.eta[k], xi=self.xi[k],
            a=float(self.ab[k, 0]), b=float(self.ab[k, 1]), phi=float(self.phi[k]),
            sigma2_eps=self.sigma2_eps[k], sigma2_gamma=float(self.sigma2_gamma[k]),
        )

    # -- persistence -------------------------------------------------------
    def save(self, path, support=None):
        """Write the draw store; embeds the level-1 geometry when given
        (or previously attached) so change-of-support needs only this file."""
        support = support if support is not None else self.support
        meta = dict(self.meta)
        meta["created_at"] = time.time()
        if support is not None:
            if meta.get("geometry_checksum") not in (None, support.checksum):
                raise DataError(
                    "the supplied support does not match the geometry these draws were fitted to"
                )
            meta["geometry_checksum"] = support.checksum
        sections = [("META", canonical_json(meta))]
        if support is not None:
            geom_doc = {"level": support.level, "geojson": support.to_geojson()}
            sections.append(("GEOM", canonical_json(geom_doc)))
        if self.dataset is not None:
            sections.append(("DATA", _pack_dataset(self.dataset, self.X)))
        if self.basis is not None:
            sections.append(("BASIS", self.basis.to_bytes()))
        sections.append(("DRAWS", pack_arrays({"K": self.n_draws}, {
            "beta": self.beta, "eta": self.eta, "xi": self.xi, "ab": self.ab,
            "phi": self.phi, "sigma2_eps": self.sigma2_eps,
            "sigma2_gamma": self.sigma2_gamma, "mu1": self.mu1,
        })))
        write_container(path, sections)

    @classmethod
    def load(cls, path):
        sections = read_container(path)
        if "META" not in sections or "DRAWS" not in sections:
            raise DataError(f"{path}: draw store is missing required sections")
        meta = json.loads(sections["META"].decode())
        _, arrays = unpack_arrays(sections["DRAWS"])
        support = None
        if "GEOM" in sections:
            geom_doc = json.loads(sections["GEOM"].decode())
            support = ArealSupport.from_geojson(geom_doc["geojson"], level=geom_doc["level"])
            if meta.get("geometry_checksum") not in (None, support.checksum):
                raise DataError(f"{path}: embedded geometry fails its checksum")
        basis = MoranBasis.from_bytes(sections["BASIS"]) if "BASIS" in sections else None
        dataset, X = (None, None)
        if "DATA" in sections:
            dataset, X = _unpack_dataset(sections["DATA"])
        return cls(
            beta=arrays["beta"], eta=arrays["eta"], xi=arrays["xi"], ab=arrays["ab"],
            phi=arrays["phi"], sigma2_eps=arrays["sigma2_eps"],
            sigma2_gamma=arrays["sigma2_gamma"], mu1=arrays["mu1"],
            meta=meta, basis=basis, dataset=dataset, X=X, support=support,
        )

    def to_trace_csv(self, path):
        """Scalar trace export: draw index, chain, and the scalar blocks."""
        chains = int(self.meta.get("chains", 1))
        per_chain = self.n_draws // max(chains, 1)
        p = self.beta.shape[1]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["draw", "chain", *(f"beta_{j}" for j in range(p)),
                 "a", "b", "phi", "sigma2_gamma"]
            )
            for k in range(self.n_draws):
                chain = k // per_chain if per_chain else 0
                writer.writerow([
                    k, chain, *(repr(v) for v in self.beta[k]),
                    repr(float(self.ab[k, 0])), repr(float(self.ab[k, 1])),
                    repr(float(self.phi[k])), repr(float(self.sigma2_gamma[k])),
                ])


def _pack_dataset(dataset, X):
    header = {"levels": [], "has_X": X is not None}
    arrays = {}
    for lv in dataset.levels:
        entry = {"level": lv.level, "ids": list(lv.ids),
                 "has_variances": lv.variances is not None}
        arrays[f"counts_L{lv.level}"] = lv.counts
        if lv.variances is not None:
            arrays[f"variances_L{lv.level}"] = lv.variances
        if lv.weights is not None:
            entry["weights_source_checksum"] = lv.weights.source_checksum
            arrays[f"weights_L{lv.level}"] = lv.weights.matrix
        header["levels"].append(entry)
    if X is not None:
        arrays["X"] = np.asarray(X, dtype=float)
    return pack_arrays(header, arrays)


def _unpack_dataset(blob):
    header, arrays = unpack_arrays(blob)
    levels = []
    ids1 = None
    for entry in header["levels"]:
        lvl = entry["level"]
        ids = tuple(entry["ids"])
        if lvl == 1:
            ids1 = ids
        counts = arrays[f"counts_L{lvl}"]
        variances = arrays.get(f"variances_L{lvl}") if entry["has_variances"] else None
        weights = None
        if f"weights_L{lvl}" in arrays:
            weights = WeightMatrix(
                arrays[f"weights_L{lvl}"], target_ids=ids, source_ids=ids1,
                source_checksum=entry.get("weights_source_checksum"),
            )
        levels.append(SurveyLevel(level=lvl, ids=ids, counts=counts,
                                  variances=variances, weights=weights))
    X = arrays.get("X") if header.get("has_X") else None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return SurveyDataset(levels), X
