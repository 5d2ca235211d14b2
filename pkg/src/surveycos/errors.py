"""Exception taxonomy shared across the package.

The command-line interface maps these onto process exit codes:
usage/config problems exit 1, data problems exit 2, numerical
failures exit 3.  Library code raises; only the CLI catches.
"""

from __future__ import annotations


class SurveyCosError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(SurveyCosError):
    """Invalid configuration or usage (CLI exit code 1).

    Raised for unknown config keys, out-of-range settings, and
    mutually inconsistent options.  ``errors`` collects every problem
    found so a user can fix a config file in one pass.
    """

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class DataError(SurveyCosError):
    """Invalid or inconsistent input data (CLI exit code 2)."""


class JoinError(DataError):
    """A tabular/geometry join failed; lists every offending id."""

    def __init__(self, message, missing_in_table=(), missing_in_geometry=()):
        self.missing_in_table = sorted(missing_in_table)
        self.missing_in_geometry = sorted(missing_in_geometry)
        parts = [message]
        if self.missing_in_table:
            parts.append("ids with geometry but no table row: %s" % ", ".join(self.missing_in_table))
        if self.missing_in_geometry:
            parts.append("ids with table row but no geometry: %s" % ", ".join(self.missing_in_geometry))
        super().__init__("; ".join(parts))


class ChecksumMismatchError(DataError):
    """A draw store was combined with geometry it was not fitted to."""


class NumericalError(SurveyCosError):
    """Numerical failure (CLI exit code 3)."""


class DegenerateGeometryError(NumericalError):
    """Polygon clipping or validation failed beyond tolerance repair."""


class RankDeficiencyError(NumericalError):
    """A matrix required to have full column rank is numerically singular."""


class NonOrthogonalMatrixError(NumericalError):
    """A matrix required to be orthogonal failed the orthogonality check."""


class NonfiniteStateError(NumericalError):
    """A latent state left the numerically representable range."""


class ConvergenceError(NumericalError):
    """A chain failed the configured convergence gate (split-R-hat)."""
