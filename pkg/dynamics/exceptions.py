class DynamicsException(Exception):
    pass


class ShapeMismatchError(DynamicsException, ValueError):
    pass


class EmptySequenceError(DynamicsException, ValueError):
    pass


class NonFiniteError(DynamicsException, FloatingPointError):
    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        details = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
        super().__init__(f"{message} ({details})" if details else message)


class SolverStepLimitError(DynamicsException, RuntimeError):
    def __init__(self, message, partial_times=None, partial_states=None):
        self.partial_times = partial_times
        self.partial_states = partial_states
        super().__init__(message)


class DegenerateNormalizerError(DynamicsException, ValueError):
    pass


class ContainerFormatError(DynamicsException, ValueError):
    pass


class MissingEmbeddingError(DynamicsException, RuntimeError):
    pass


class DivergenceError(DynamicsException, FloatingPointError):
    def __init__(self, message, last_good_checkpoint=None, diagnostics=None):
        self.last_good_checkpoint = last_good_checkpoint
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class SamplingExhaustedError(DynamicsException, RuntimeError):
    def __init__(self, message, attempts=None):
        self.attempts = attempts
        super().__init__(message)
