"""Exception hierarchy shared by every pemark module."""


class PEMarkError(Exception):
    """Base class for all library errors."""


# -- document parsing ---------------------------------------------------------

class MalformedJson(PEMarkError, ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at offset {position}")
        self.position = position


class DuplicateTopLevelKey(PEMarkError, ValueError):
    def __init__(self, key: str):
        super().__init__(f"duplicate top-level key {key!r}")
        self.key = key


class TopLevelNotObject(PEMarkError, ValueError):
    pass


class InvalidPermutation(PEMarkError, ValueError):
    pass


# -- permutation codes --------------------------------------------------------

class ValueTooLarge(PEMarkError, ValueError):
    pass


class ItemsNotSortedOrNotDistinct(PEMarkError, ValueError):
    pass


class DuplicateItems(PEMarkError, ValueError):
    pass


# -- embedding / extraction ---------------------------------------------------

class GroupSizeExceedsCapacity(PEMarkError, ValueError):
    """The watermark value does not fit in the permutations of one group."""


class NoCompleteGroups(PEMarkError, ValueError):
    """The document has fewer keys than one group needs."""


class DuplicateKeysInGroup(PEMarkError, ValueError):
    pass


class EmptyInput(PEMarkError, ValueError):
    pass


# -- experiments --------------------------------------------------------------

class IntensityOutOfRange(PEMarkError, ValueError):
    pass


class LengthMismatch(PEMarkError, ValueError):
    pass


class InvalidConfig(PEMarkError, ValueError):
    pass


# -- gateway ------------------------------------------------------------------

class ConfigSyntax(PEMarkError, ValueError):
    pass


class ConfigInvalid(PEMarkError, ValueError):
    def __init__(self, message: str, route: int | None = None, field: str | None = None):
        where = []
        if route is not None:
            where.append(f"routes[{route}]")
        if field is not None:
            where.append(field)
        prefix = ".".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.route = route
        self.field = field


class UpstreamUnreachable(PEMarkError, ConnectionError):
    pass
