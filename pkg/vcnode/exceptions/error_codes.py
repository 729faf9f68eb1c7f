"""
Process exit codes for every exception a vcnode command can raise.

    0  success
    1  anything not listed
    2  configuration or input error
    3  numeric divergence
    4  acceptance-threshold failure (--check)
"""
from frozendict import frozendict

UNKNOWN_KEY = "UNKNOWN"
SUCCESS = 0
FAILURE = 1
CONFIG_ERROR = 2
DIVERGENCE = 3
ACCEPTANCE_FAILURE = 4


def get_error_code(err: Exception) -> int:
    """
    Return an exit code, given an exception.

    The codes are looked up by the section of code the exception class is
    defined in:

    - builtins
    - django
    - vcnode (the application)
    - dynamics (the numerical library)
    - other

    Args:
        err: the Exception for which we need a code.

    Returns:
        A positive integer exit code.
    """
    err_module = err.__class__.__module__
    err_name = err.__class__.__name__
    if err_module.startswith("builtin"):
        return builtin_error_map.get(err_name, builtin_error_map[UNKNOWN_KEY])
    elif err_module.startswith("django"):
        return django_error_map.get(err_name, django_error_map[UNKNOWN_KEY])
    elif err_module.startswith("vcnode"):
        return vcnode_error_map.get(err_name, vcnode_error_map[UNKNOWN_KEY])
    elif err_module.startswith("dynamics"):
        return dynamics_error_map.get(err_name, dynamics_error_map[UNKNOWN_KEY])
    else:
        return other_error_map.get(err_name, other_error_map[UNKNOWN_KEY])


builtin_error_map = frozendict({
    UNKNOWN_KEY: FAILURE,
    "FileNotFoundError": CONFIG_ERROR,
    "FileExistsError": CONFIG_ERROR,
    "IsADirectoryError": CONFIG_ERROR,
    "NotADirectoryError": CONFIG_ERROR,
    "ValueError": CONFIG_ERROR,
    "FloatingPointError": DIVERGENCE,
    "OverflowError": DIVERGENCE,
    "ZeroDivisionError": DIVERGENCE,
})

django_error_map = frozendict({
    UNKNOWN_KEY: FAILURE,
    "ImproperlyConfigured": CONFIG_ERROR,
})

vcnode_error_map = frozendict({
    UNKNOWN_KEY: FAILURE,
    "ConfigError": CONFIG_ERROR,
    "NormalizerMismatchError": CONFIG_ERROR,
    "AcceptanceCheckFailed": ACCEPTANCE_FAILURE,
})

dynamics_error_map = frozendict({
    UNKNOWN_KEY: FAILURE,
    "ShapeMismatchError": CONFIG_ERROR,
    "EmptySequenceError": CONFIG_ERROR,
    "DegenerateNormalizerError": CONFIG_ERROR,
    "ContainerFormatError": CONFIG_ERROR,
    "MissingEmbeddingError": FAILURE,
    "NonFiniteError": DIVERGENCE,
    "SolverStepLimitError": DIVERGENCE,
    "DivergenceError": DIVERGENCE,
})

other_error_map = frozendict({
    UNKNOWN_KEY: FAILURE,
    "JSONDecodeError": CONFIG_ERROR,
    "LinAlgError": DIVERGENCE,
})
