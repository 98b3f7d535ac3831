"""Exception hierarchy shared across the package."""


class FogCoordError(Exception):
    """Base class for every error raised by fogcoord."""


class DuplicateNamespace(FogCoordError):
    pass


class InvalidDescriptor(FogCoordError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class NoDescriptor(FogCoordError):
    pass


class KindMismatch(FogCoordError):
    pass


class UnknownReplicaSet(FogCoordError):
    pass


class EmptySubset(FogCoordError):
    pass


class UnknownNode(FogCoordError):
    pass


class NodeDown(FogCoordError):
    pass


class InvalidChange(FogCoordError):
    pass


class InvalidScenario(FogCoordError):
    def __init__(self, location: str, message: str, line: int | None = None):
        where = f"line {line}, {location}" if line is not None else location
        super().__init__(f"{where}: {message}" if where else message)
        self.location = location
        self.message = message
        self.line = line


class HistoryTooLarge(FogCoordError):
    pass


class NotQuiescent(FogCoordError):
    pass
