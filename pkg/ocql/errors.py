from typing import Optional


class OcqlError(Exception):
    """Root of every error raised by ocql."""


class IntegrationError(OcqlError):
    def __init__(self, message: str, time: float, episode: Optional[int] = None, seed: Optional[int] = None):
        """
        Raised when an ODE right-hand side evaluates to a non-finite rate.
        :param message: description of the failure.
        :param time: simulation time (in hours) at which integration failed.
        :param episode: optional episode index, filled in by rollout.
        :param seed: optional rollout seed, filled in by Monte Carlo harnesses.
        """
        super().__init__(message)
        self.time = time
        self.episode = episode
        self.seed = seed

    def __reduce__(self):
        return self.__class__, (self.args[0], self.time, self.episode, self.seed)

    def __str__(self):
        context = ["t={:.4g}".format(self.time)]
        if self.episode is not None:
            context.append("episode={}".format(self.episode))
        if self.seed is not None:
            context.append("seed={}".format(self.seed))
        return "{} ({})".format(super().__str__(), ", ".join(context))


class DegenerateStateError(IntegrationError):
    """A state left the model's domain (division guard, non-positive volume)."""


class ShapeError(OcqlError, ValueError):
    pass


class NonFiniteError(OcqlError, ValueError):
    pass


class TrainingError(OcqlError):
    pass


class EstimationError(OcqlError):
    pass


class ConfigError(OcqlError):
    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message if key is None else "{}: {}".format(key, message))
        self.key = key
