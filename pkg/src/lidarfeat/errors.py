"""Exception types raised across the toolkit."""


class LidarFeatError(Exception):
    """Base class for all toolkit errors."""


class InvalidPixel(LidarFeatError):
    pass


class EmptyCloud(LidarFeatError):
    pass


class EmptySet(LidarFeatError):
    pass


class ShapeMismatch(LidarFeatError):
    pass


class DegenerateStats(LidarFeatError):
    pass


class NoValidCorrespondences(LidarFeatError):
    pass


class Divergence(LidarFeatError):
    """Training loss blew past the divergence bound."""

    def __init__(self, step, loss, initial):
        super().__init__(
            f"loss {loss:.4g} at step {step} exceeds 10x initial loss {initial:.4g}"
        )
        self.step = step
        self.loss = loss
        self.initial = initial


class TooFewMatches(LidarFeatError):
    pass


class Degenerate(LidarFeatError):
    pass


class NoCorrespondences(LidarFeatError):
    pass


class TooFewDescriptors(LidarFeatError):
    pass


class BrokenChain(LidarFeatError):
    pass


class SingularSystem(LidarFeatError):
    pass


class LengthMismatch(LidarFeatError):
    pass


class FormatError(LidarFeatError):
    """A file did not match its binary or text layout."""
