class Pix2NextError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(Pix2NextError, ValueError):
    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")


class DatasetError(Pix2NextError, ValueError):
    pass


class ExtractorError(Pix2NextError, ValueError):
    pass


class ShapeError(Pix2NextError, ValueError):
    pass


class CheckpointError(Pix2NextError, ValueError):
    pass


class MetricError(Pix2NextError, ValueError):
    pass


class TrainingDivergedError(Pix2NextError, RuntimeError):
    def __init__(self, component, step, last_checkpoint=None):
        self.component = component
        self.step = step
        self.last_checkpoint = last_checkpoint
        message = f"non-finite {component} at step {step}"
        if last_checkpoint is not None:
            message += f" (last good checkpoint: {last_checkpoint})"
        super().__init__(message)


class NumericalError(Pix2NextError, ValueError):
    pass
