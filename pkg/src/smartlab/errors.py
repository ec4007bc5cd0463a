"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    pass


class InvalidState(RuntimeError):
    pass


class IllConditioned(InvalidState):
    """A local Gram system is too badly conditioned to solve reliably."""


class SingularSplit(InvalidState):
    pass


class NearSingular(InvalidState):
    """The perturbed transfer matrix of a change-of-measure step is (nearly) singular."""

    def __init__(self, message, step=None, atom=None, alpha=None):
        super().__init__(message)
        self.step = step
        self.atom = atom
        self.alpha = alpha


class LambdaTooLarge(InvalidState):
    """A change-of-measure step produced a non-positive density."""

    def __init__(self, message, step=None, atom=None, density=None):
        super().__init__(message)
        self.step = step
        self.atom = atom
        self.density = density
