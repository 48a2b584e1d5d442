"""Exception types shared across the package."""


class LayerAlgebraError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(LayerAlgebraError, ValueError):
    """Extents are non-positive or do not line up."""


class GeometryError(LayerAlgebraError, ValueError):
    """A window geometry cannot be applied to the given map."""


class ConfigurationError(LayerAlgebraError, ValueError):
    """A request names something that does not exist or is not supported."""


class UnsupportedKindError(LayerAlgebraError, NotImplementedError):
    """The operation is not implemented for this layer kind."""
