"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Bad shapes, unknown kinds, missing required inputs."""


class TrainingDivergence(RuntimeError):
    """Raised when the training loss blows up; carries diagnostics."""

    def __init__(self, message, step=None, loss=None, initial_loss=None):
        super().__init__(message)
        self.step = step
        self.loss = loss
        self.initial_loss = initial_loss


class EmptySurfaceError(RuntimeError):
    """Surface extraction found no occupied cells / band points."""


class EmptyObservationError(RuntimeError):
    """An observation (masked depth, point cloud) contains no points."""


class DegenerateRotationError(ValueError):
    """9D rotation parameters are rank-deficient or near-zero."""
