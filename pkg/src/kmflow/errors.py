"""Exception types shared across the toolkit."""


class KmflowError(Exception):
    """Base class for all toolkit errors."""


# --- trace parsing / validation ---

class UnreadableInput(KmflowError):
    """Input is not line-delimited UTF-8 text."""


class MalformedLine(KmflowError):
    """A trace line failed to parse (raised in strict mode only)."""

    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class NonPositiveGap(KmflowError):
    """Session segmentation requires a positive gap."""


# --- process mining ---

class EmptyLog(KmflowError):
    """Step log contains no traces."""


class NoPath(KmflowError):
    """No start-to-end path exists in the dependency graph."""


# --- shareflows ---

class EmptyFlow(KmflowError):
    """A step guide needs at least one step."""


class MissingAuthor(KmflowError):
    """Step guides require author attribution."""


# --- repository ---

class DuplicateId(KmflowError):
    """Document id already present in the index."""


class EmptyQuery(KmflowError):
    """Query is empty after stopword removal."""


class SnapshotFormatError(KmflowError):
    """Index snapshot has an unknown format version."""


# --- recommender ---

class EmptyPrefix(KmflowError):
    """Context detection needs at least one event."""


class NoQuery(KmflowError):
    """No usable terms for query synthesis."""


class UnknownRecommendation(KmflowError):
    """Recommendation id not found."""


# --- network analysis ---

class DegenerateRotation(KmflowError):
    """Group means coincide; no between-group direction exists."""


class SingleGroup(KmflowError):
    """Means rotation needs two non-empty groups."""


class UnderdeterminedPlacement(KmflowError):
    """No unit carries network weight; node placement impossible."""


class EmptyGroup(KmflowError):
    """Network aggregation over an empty unit group."""


# --- statistics ---

class RankDeficientDesign(KmflowError):
    """Design matrix is rank deficient after encoding."""


class NonConvergence(KmflowError):
    """Model fit did not converge."""


class CompleteSeparation(KmflowError):
    """Logistic outcome perfectly separated by the design."""


class SingleClassOutcome(KmflowError):
    """Logistic regression needs both outcome classes."""


class WrongItemCount(KmflowError):
    """Survey response has the wrong number of items."""


class OutOfRange(KmflowError):
    """Survey item value outside the instrument scale."""


class IncompleteGroupMap(KmflowError):
    """Item-to-practice map does not cover the instrument."""


class EmptyInput(KmflowError):
    """Aggregate asked of an empty collection."""


# --- evaluation harness / pipeline ---

class MissingAnnotation(KmflowError):
    """A metric lacks the annotations it needs."""


class InvalidScenario(KmflowError):
    """Simulation scenario failed validation."""


class EmptyReport(KmflowError):
    """Report generation needs at least one comparison row."""


class ConfigError(KmflowError):
    """Pipeline configuration problem; message names the field."""


class PipelineStageError(KmflowError):
    """A pipeline stage failed; carries the stage tag."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


class MissingLibrary(KmflowError):
    """Service cannot start without a step-guide library."""


class PortUnavailable(KmflowError):
    """Requested service port is already bound."""
