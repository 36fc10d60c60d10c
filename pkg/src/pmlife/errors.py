"""Exception types shared across the engine."""


class PmLifeError(Exception):
    pass


class ZeroAmount(PmLifeError, ValueError):
    pass


class SourceUnavailable(PmLifeError):
    """Transient upstream failure; the caller may retry."""


class DecodeError(PmLifeError):
    def __init__(self, layer, position, reason):
        super().__init__(f"{layer}@{position}: {reason}")
        self.layer = layer
        self.position = position
        self.reason = reason


class UnknownBlock(PmLifeError, KeyError):
    pass


class InvalidConfig(PmLifeError, ValueError):
    pass


class StorageUnavailable(PmLifeError):
    pass


class DuplicateKey(PmLifeError):
    pass


class NotFound(PmLifeError, LookupError):
    pass


class ConflictingMapping(PmLifeError):
    def __init__(self, conflicts):
        self.conflicts = list(conflicts)
        desc = ", ".join(f"{a}: {old} vs {new}" for a, old, new in self.conflicts)
        super().__init__(f"conflicting token mappings: {desc}")


class DegenerateInput(PmLifeError, ValueError):
    pass


class NoPregameTrades(PmLifeError, ValueError):
    pass


class FitDegenerate(PmLifeError, ValueError):
    pass
