"""Exception hierarchy.

Every error carries a short machine-readable ``code`` and the process exit
status the CLI maps it to.
"""


class AtomotionError(Exception):
    code = "error"
    exit_code = 9


# -- motion files (exit 3) ---------------------------------------------------

class MotionError(AtomotionError):
    code = "motion-error"
    exit_code = 3


class MalformedHeader(MotionError):
    code = "malformed-header"


class JointCountMismatch(MotionError):
    code = "joint-count-mismatch"


class NonFiniteCoordinate(MotionError):
    code = "non-finite-coordinate"

    def __init__(self, frame, message=None):
        self.frame = frame
        super().__init__(message or f"non-finite coordinate in frame {frame}")


class DegenerateOutput(MotionError):
    code = "degenerate-output"


class InvalidSkeleton(MotionError):
    code = "invalid-skeleton"


# -- decomposition (exit 4) --------------------------------------------------

class DecompositionError(AtomotionError):
    code = "decomposition-error"
    exit_code = 4


class DegenerateJoints(DecompositionError):
    code = "degenerate-joints"

    def __init__(self, message, frame=None):
        self.frame = frame
        if frame is not None:
            message = f"{message} (frame {frame})"
        super().__init__(message)


class InsufficientData(AtomotionError):
    code = "insufficient-data"
    exit_code = 4


# -- tokenizer (exit 5) ------------------------------------------------------

class TokenizerError(AtomotionError):
    code = "tokenizer-error"
    exit_code = 5


class TooShortMotion(TokenizerError):
    code = "too-short-motion"


class IndexOutOfRange(TokenizerError):
    code = "index-out-of-range"


# -- alignment (exit 6) ------------------------------------------------------

class AlignmentError(AtomotionError):
    code = "alignment-error"
    exit_code = 6


class ZeroVectorInput(AlignmentError):
    code = "zero-vector-input"


class DivergenceDetected(AlignmentError):
    code = "divergence-detected"


# -- generative core (exit 7) ------------------------------------------------

class GenerativeError(AtomotionError):
    code = "generative-error"
    exit_code = 7


class DimensionMismatch(GenerativeError):
    code = "dimension-mismatch"


class InvalidScorerDistribution(GenerativeError):
    code = "invalid-scorer-distribution"


# -- LLM atomizer (exit 8) ---------------------------------------------------

class AtomizerError(AtomotionError):
    code = "atomizer-error"
    exit_code = 8


class EmptyInput(AtomizerError):
    code = "empty-input"


class EmptyDescription(AtomizerError):
    code = "empty-description"


class NotParseable(AtomizerError):
    code = "not-parseable"


class MissingBodyPart(AtomizerError):
    code = "missing-body-part"

    def __init__(self, period, key):
        self.period = period
        self.key = key
        super().__init__(f"period {period} is missing body part {key!r}")


class ExtraKey(AtomizerError):
    code = "extra-key"

    def __init__(self, period, key):
        self.period = period
        self.key = key
        super().__init__(f"period {period} has unexpected key {key!r}")


class NonContiguousPeriods(AtomizerError):
    code = "non-contiguous-periods"


class TransportFailure(AtomizerError):
    code = "transport-failure"


class FixtureMiss(AtomizerError):
    code = "fixture-miss"

    def __init__(self, prompt_hash):
        self.prompt_hash = prompt_hash
        super().__init__(f"no recorded response for prompt {prompt_hash}")


# -- metrics / config (exit 9) -----------------------------------------------

class MetricsError(AtomotionError):
    code = "metrics-error"
    exit_code = 9


class KOutOfRange(MetricsError):
    code = "k-out-of-range"


class ConfigError(AtomotionError):
    code = "config-error"
    exit_code = 9


class FeatureDimensionMismatch(MetricsError):
    code = "dimension-mismatch"
