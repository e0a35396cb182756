"""Exception hierarchy shared across the package.

Data errors (bad files, incompatible inputs) and runtime errors
(subprocess evaluators, adapters) are kept in distinct branches so the
CLI can map them to exit codes.
"""

from __future__ import annotations


class GuardMergeError(Exception):
    """Base class for all package errors."""


class DataError(GuardMergeError):
    """Bad or inconsistent input data (checkpoints, datasets, names)."""


class BadMagic(DataError):
    """File does not start with the checkpoint container magic bytes."""


class CorruptHeader(DataError):
    """Container header is unparseable or internally inconsistent."""


class TruncatedData(DataError):
    """Header declares more data bytes than the file contains."""


class NonFiniteValue(DataError):
    """A loaded tensor contains NaN or Inf and non-finite values are not allowed."""


class UnknownName(DataError):
    """A requested tensor name is not present in the map."""


class IncompatibleCheckpoints(DataError):
    """Checkpoints disagree on names, shapes, or dtypes."""


class EmptySelection(DataError):
    """A merge type selected no tensors; merging nothing is a configuration error."""


class InvalidDropRate(DataError):
    """DARE drop rate outside [0, 1)."""


class ZeroNormVector(DataError):
    """Spherical interpolation received a zero-norm input vector."""


class LengthMismatch(DataError):
    """Prediction and label sequences differ in length."""


class EmptyMaskSet(DataError):
    """Masked-token loss received no masked positions."""


class MalformedModel(DataError):
    """Checkpoint lacks the tensors an evaluator requires."""


class ScoreOutOfRange(DataError):
    """Evaluation score outside [0, 1]."""


class RatioOverflow(DataError):
    """Rounded allocation parts exceed the requested total."""


class EmptyField(DataError):
    """A required text field is empty."""


class RuntimeFailure(GuardMergeError):
    """External process (evaluator or adapter) misbehaved."""


class EvaluatorFailure(RuntimeFailure):
    """External evaluator exited nonzero or produced an unusable score."""


class AdapterExit(RuntimeFailure):
    """Generation adapter exited with a nonzero status."""


class MalformedAdapterOutput(RuntimeFailure):
    """Generation adapter emitted a line that is not a valid sample."""


class CountShortfall(RuntimeFailure):
    """Generation adapter returned fewer samples than requested."""


class ConfigError(GuardMergeError):
    """Invalid configuration file or flag combination (usage error)."""
