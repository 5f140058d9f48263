"""Exception hierarchy shared by all modules."""


class FaceActionError(Exception):
    """Base class for errors raised by this package."""


class InvalidInputError(FaceActionError, ValueError):
    """An argument violates a documented precondition."""


class EmptySampleError(FaceActionError):
    """No patch could be sampled from a training image (all weights zero)."""


class TrainingError(FaceActionError):
    """A model could not be trained from the given data."""


class PluginError(FaceActionError):
    """A plugin (segmenter, saliency, appearance, detector) failed."""

    def __init__(self, plugin, cause):
        name = getattr(plugin, "__qualname__", None) or type(plugin).__name__
        super().__init__(f"plugin {name!r} failed: {cause}")
        self.plugin = plugin
        self.cause = cause


class SchemaError(FaceActionError):
    """A dataset record or serialized document is malformed."""

    def __init__(self, message, index=None):
        if index is not None:
            message = f"record {index}: {message}"
        super().__init__(message)
        self.index = index
