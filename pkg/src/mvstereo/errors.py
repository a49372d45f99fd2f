"""Exception hierarchy for the mvstereo package.

Two branches matter to callers (and to the CLI exit-code mapping):

* ``DataError`` — the inputs are malformed, inconsistent, or insufficient
  (bad manifests, truncated disparity files, checkpoint/config mismatches,
  not enough views or sparse points, empty overlap).
* ``NumericalError`` — the math failed (point behind a camera, degenerate
  homography, non-finite values, training divergence).

Everything raised on purpose by this package derives from ``MVStereoError``;
plain ``ValueError``/``TypeError`` are reserved for caller bugs such as
malformed arguments.
"""


class MVStereoError(Exception):
    """Base class for all mvstereo errors."""


class DataError(MVStereoError):
    """Input data is malformed, inconsistent, or insufficient."""


class ManifestError(DataError):
    """A sequence manifest (or a file it references) failed to load."""


class DisparityFormatError(DataError):
    """A disparity file is malformed or truncated."""


class InvalidCameraError(DataError):
    """Camera intrinsics or pose violate their invariants."""


class InsufficientViewsError(DataError):
    """Fewer candidate views than the requested neighbor count."""


class InsufficientFeaturesError(DataError):
    """No usable sparse points observed by the reference view."""


class SamplingError(DataError):
    """A training patch with at least one labeled pixel could not be drawn."""


class EmptyOverlapError(DataError):
    """No jointly valid pixel between prediction and ground truth."""


class CheckpointError(DataError):
    """A checkpoint is unreadable or inconsistent with the requested config."""


class VolumeBudgetError(DataError):
    """A plane-sweep volume would exceed the configured memory budget."""


class ArchiveError(DataError):
    """A saved volume/distribution archive is unreadable or inconsistent."""


class SceneSpecError(DataError):
    """A synthetic scene description is invalid (e.g. camera inside geometry)."""


class ConfigError(DataError):
    """A pipeline configuration file is malformed or internally inconsistent."""


class NumericalError(MVStereoError):
    """A numerical operation failed."""


class BehindCameraError(NumericalError):
    """A point projects behind (or onto) the camera plane."""


class DegenerateHomographyError(NumericalError):
    """A plane-induced homography is singular or near-singular."""


class NonFiniteError(NumericalError):
    """A tensor that must be finite contains NaN or Inf."""


class TrainingDivergenceError(NumericalError):
    """The training loss became non-finite."""

    def __init__(self, step: int, detail: str):
        self.step = step
        self.detail = detail
        super().__init__(f"training diverged at step {step}: {detail}")
