"""Exception hierarchy shared by every module."""


class FedError(Exception):
    """Base class for all simulator errors."""


class DimensionError(FedError, ValueError):
    """Parameter vectors or datasets with incompatible shapes."""


class EmptyAggregateError(FedError, ValueError):
    """Reduction over an empty collection."""


class NonFiniteError(FedError, FloatingPointError):
    """A NaN or Inf entered a parameter vector."""


class InfeasiblePartitionError(FedError, ValueError):
    pass


class ConfigError(FedError, ValueError):
    """Invalid run / sampler / algorithm configuration."""


class UndefinedProbeError(FedError, ValueError):
    """Deviation probe with a zero-norm reference pseudo-gradient."""


class RunError(FedError, RuntimeError):
    """A failure inside the training loop, annotated with round and client."""

    def __init__(self, message, round_index=None, client_id=None):
        where = []
        if round_index is not None:
            where.append(f"round {round_index}")
        if client_id is not None:
            where.append(f"client {client_id}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
        self.round_index = round_index
        self.client_id = client_id
