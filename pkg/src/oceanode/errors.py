"""Exception hierarchy.

Two roots so the CLI can map failures onto exit codes: ``ValidationError``
(bad input, exit 1) and ``NumericalError`` (the math went wrong, exit 2).
"""
from __future__ import annotations


class OceanodeError(Exception):
    pass


class ValidationError(OceanodeError, ValueError):
    pass


class NumericalError(OceanodeError, ArithmeticError):
    pass


# grid / fields
class ShapeMismatch(ValidationError):
    pass


class NonFiniteInput(NumericalError):
    pass


class NonPositiveKappa(ValidationError):
    pass


class OutOfBounds(ValidationError):
    pass


# temporal spline
class TooFewKnots(ValidationError):
    pass


class NonMonotonicTimestamps(ValidationError):
    pass


class OutOfDomain(ValidationError):
    pass


# autodiff / optimisation
class GraphConsumed(OceanodeError, RuntimeError):
    pass


class NonDeterministicFunction(NumericalError):
    pass


class EmptyGrads(ValidationError):
    pass


class DivergedLoss(NumericalError):
    pass


class NumericalBlowup(NumericalError):
    pass


# eei / data
class LengthMismatch(ValidationError):
    pass


class ManifestMalformed(ValidationError):
    pass


class ChecksumMismatch(ValidationError):
    pass


class SplitTooShort(ValidationError):
    pass


class UnstableParams(ValidationError):
    pass


class EmptyEvaluation(ValidationError):
    pass


class IncompatibleCheckpoint(ValidationError):
    pass


class CheckpointWriteFailure(OceanodeError, OSError):
    pass
