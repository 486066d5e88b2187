"""Exception hierarchy.

Every error raised on bad input derives from :class:`CGUAError`, which is a
``ValueError`` so callers that only care about "bad input" can catch that.
"""


class CGUAError(ValueError):
    pass


class ZeroVectorError(CGUAError):
    pass


class InconsistentCatalogError(CGUAError):
    pass


class EmptySceneError(CGUAError):
    pass


class NegativeLambdaError(CGUAError):
    pass


class InvalidTemperatureError(CGUAError):
    pass


class NoPairedClustersError(CGUAError):
    pass


class EmptyUnpairedBankError(CGUAError):
    pass


class UnknownClusterError(CGUAError):
    pass


class DegenerateBoxError(CGUAError):
    pass


class NoRelevantError(CGUAError):
    pass


class InfeasiblePackingError(CGUAError):
    pass
