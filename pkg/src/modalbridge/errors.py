"""Exception taxonomy with stable machine-readable codes.

Every error raised by this package carries a ``code`` string (the class
name). The CLI emits ``{"error": <code>, "message": ...}`` on stderr and
exits 1, so scripts can branch on codes without parsing prose.
"""
from __future__ import annotations


class ModalBridgeError(Exception):
    """Base class for all package errors."""

    @property
    def code(self) -> str:
        return type(self).__name__


# --- store ingestion / loading ---------------------------------------------

class ZeroVector(ModalBridgeError):
    """A vector's L2 norm is below 1e-12 and cannot be normalized."""


class DuplicateId(ModalBridgeError):
    """Two records share an id within one store or query set."""


class DimMismatch(ModalBridgeError):
    """Vector dimensions disagree (rows, query vs store, manifest vs block)."""


class ChecksumMismatch(ModalBridgeError):
    """The vector block's SHA-256 does not match the manifest."""


class CorruptManifest(ModalBridgeError):
    """A store directory is structurally inconsistent or unparseable."""


class NormOutOfTolerance(ModalBridgeError):
    """A stored vector's norm is outside [1 - 1e-4, 1 + 1e-4]."""


class InvalidArtifact(ModalBridgeError):
    """A pairs/run/qrels/stats file violates its schema."""


# --- retrieval ---------------------------------------------------------------

class EmptyModality(ModalBridgeError):
    """An operation requiring candidates hit an empty modality view."""


class EmptyStore(ModalBridgeError):
    """Retrieval over a store with no items."""


# --- calibration -------------------------------------------------------------

class TooFewQueries(ModalBridgeError):
    """Pseudo-pair construction needs at least two queries."""


class TooFewPairs(ModalBridgeError):
    """Statistics estimation needs at least two pairs per modality."""


class DegenerateStats(ModalBridgeError):
    """Estimated score spread is below the 1e-6 floor; standardization undefined."""


class MissingModalityStats(ModalBridgeError):
    """A stats bundle has no entry for the requested modality."""


class MissingStats(ModalBridgeError):
    """Standardized retrieval requested without a stats bundle."""


# --- evaluation --------------------------------------------------------------

class EmptyPositives(ModalBridgeError):
    """A metric was asked to score a query with no positive ids."""


class MissingQrels(ModalBridgeError):
    """A run contains a query absent from the qrels."""


# --- analysis ----------------------------------------------------------------

class ConstantInput(ModalBridgeError):
    """Skewness of an all-equal sample is undefined."""


class TooFewSamples(ModalBridgeError):
    """Skewness needs at least three values."""


class BadRange(ModalBridgeError):
    """Histogram range is empty or bin count non-positive."""


class DegenerateInput(ModalBridgeError):
    """Projection input has fewer than two rows or two columns."""


# --- generation --------------------------------------------------------------

class BadConfig(ModalBridgeError):
    """A synthetic-data or pipeline configuration value is out of range."""
