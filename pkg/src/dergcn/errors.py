"""Exception hierarchy shared by every dergcn module."""


class DerGcnError(ValueError):
    """Base class for all errors raised by this package."""


class ShapeMismatch(DerGcnError):
    pass


class NonFinite(DerGcnError):
    pass


class NotScalar(DerGcnError):
    pass


class DetachedRoot(DerGcnError):
    pass


class EmptySequence(DerGcnError):
    pass


class DegenerateNormalizer(DerGcnError):
    pass


class NonBinaryMembership(DerGcnError):
    pass


class EmptyNeighborhood(DerGcnError):
    pass


class RatioOutOfRange(DerGcnError):
    pass


class StaleMaskPlan(DerGcnError):
    pass


class UnknownRelation(DerGcnError):
    pass


class EmptyPositives(DerGcnError):
    pass


class TooFewRelations(DerGcnError):
    pass


class RelationOutOfRange(DerGcnError):
    pass


class DegenerateLabelSet(DerGcnError):
    pass


class NegativeCoefficient(DerGcnError):
    pass


class InvalidSpec(DerGcnError):
    pass


class ConfigInvalid(DerGcnError):
    pass


class DimensionMismatch(DerGcnError):
    pass


class UnknownVariant(DerGcnError):
    pass
