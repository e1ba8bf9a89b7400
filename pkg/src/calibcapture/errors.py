"""Exception types raised across the pipeline.

Everything derives from CalibCaptureError so callers can catch broadly;
the CLI maps subtrees of this hierarchy onto stable exit codes.
"""


class CalibCaptureError(Exception):
    """Base class for all errors raised by this package."""


# --- session / file parsing ---------------------------------------------

class MissingFile(CalibCaptureError):
    pass


class MalformedManifest(CalibCaptureError):
    pass


class InvariantViolation(CalibCaptureError):
    pass


class MalformedRow(CalibCaptureError):
    def __init__(self, line_number, message=""):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}" if message else f"line {line_number}")


class NonMonotonicStamp(InvariantViolation):
    def __init__(self, line_number, message=""):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}" if message else f"line {line_number}")


class UnsupportedFormat(CalibCaptureError):
    pass


class TruncatedData(CalibCaptureError):
    pass


class UnsupportedEncoding(CalibCaptureError):
    pass


class MalformedRiff(CalibCaptureError):
    pass


# --- audio / transcript ---------------------------------------------------

class MalformedTranscript(CalibCaptureError):
    pass


class AudioTooShort(CalibCaptureError):
    pass


class TemplateTooShort(CalibCaptureError):
    pass


# --- time sync -------------------------------------------------------------

class DriftTooLarge(CalibCaptureError):
    pass


class DegenerateAnchors(CalibCaptureError):
    pass


# --- imaging ---------------------------------------------------------------

class ImageTooSmall(CalibCaptureError):
    pass


# --- camera models ----------------------------------------------------------

class BehindCamera(CalibCaptureError):
    pass


class NoConvergence(CalibCaptureError):
    pass


class OutsideValidRegion(CalibCaptureError):
    pass


class OutsideDomain(CalibCaptureError):
    pass


# --- solver ------------------------------------------------------------------

class DegenerateConfiguration(CalibCaptureError):
    pass


class IllConditioned(CalibCaptureError):
    pass


class NotEnoughViews(CalibCaptureError):
    pass


class DivergedOrStalled(CalibCaptureError):
    pass


class DisconnectedGraph(CalibCaptureError):
    def __init__(self, components, message=""):
        self.components = [sorted(c) for c in components]
        detail = "; ".join(",".join(c) for c in self.components)
        super().__init__(message or f"co-visibility graph is disconnected: [{detail}]")


class InsufficientSharedViews(CalibCaptureError):
    pass


# --- synth / reporting --------------------------------------------------------

class InvalidConfig(CalibCaptureError):
    pass


class IoFailure(CalibCaptureError):
    pass


class MissingGroundTruth(CalibCaptureError):
    pass


class MalformedResult(CalibCaptureError):
    pass
