"""Exception types shared by every shapeline module."""


class ShapelineError(Exception):
    """Base class for all library errors."""


class InvalidArgumentError(ShapelineError, ValueError):
    pass


class EmptyDomainError(ShapelineError, ValueError):
    """Raised when an operation needs at least one point (or two) and got none."""


class DegenerateGeometryError(ShapelineError, ValueError):
    pass


class DisconnectedGraphError(ShapelineError, RuntimeError):
    """The network splits into several components.

    ``component_sizes`` lists component sizes in decreasing order and
    ``component`` (when known) is the label of the unreachable vertex's
    component.
    """

    def __init__(self, message, component_sizes=None, component=None):
        super().__init__(message)
        self.component_sizes = list(component_sizes or [])
        self.component = component


class PropertyViolationError(ShapelineError, AssertionError):
    """A property that must hold by construction failed; ``witness`` says where."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness
