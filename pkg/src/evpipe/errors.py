"""Exception hierarchy shared by every evpipe module."""


class EvPipeError(Exception):
    pass


# container I/O


class ContainerError(EvPipeError):
    """A file on disk does not match the expected layout."""


class MissingDataset(ContainerError):
    pass


class BadShape(ContainerError):
    pass


class UnsortedTimestamps(ContainerError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class CoordinateOutOfBounds(ContainerError):
    pass


class BadHeader(ContainerError):
    pass


class WrongColumnCount(ContainerError):
    pass


class UnknownClassId(ContainerError):
    pass


class MissingRequiredArray(ContainerError):
    pass


# event-volume selection


class SelectionError(EvPipeError):
    pass


class EmptyWindow(SelectionError):
    pass


class NeverSatisfied(SelectionError):
    """Volume growth reached the full stream without meeting the stopping rule."""


class EncoderNeverSatisfiable(NeverSatisfied):
    """No anchor of a sequence produced a valid volume."""


# frame preprocessing


class DegenerateBox(EvPipeError):
    pass
