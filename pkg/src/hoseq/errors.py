"""Exception hierarchy shared by all hoseq modules."""

from __future__ import annotations


class HoseqError(Exception):
    """Base class for every error raised by hoseq."""


# trace_model
class MalformedHeader(HoseqError):
    pass


class MalformedRow(HoseqError):
    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class EmptyTrace(HoseqError):
    pass


class AllMissingChannel(HoseqError):
    pass


# feature_pipeline
class TooShort(HoseqError):
    pass


class EmptyTrainSet(HoseqError):
    pass


class SingleClass(HoseqError):
    pass


class TooFewWindows(HoseqError):
    pass


# seq_models
class DimensionMismatch(HoseqError):
    pass


class NonFiniteLoss(HoseqError):
    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = history


# ho_control
class MissingPrediction(HoseqError):
    pass


class TooFewBearings(HoseqError):
    pass


# metrics_report
class LengthMismatch(HoseqError):
    pass


class NoBaselinePingPongs(HoseqError):
    pass


class NoBaselineHandovers(HoseqError):
    pass


# cli
class ConfigError(HoseqError):
    pass
