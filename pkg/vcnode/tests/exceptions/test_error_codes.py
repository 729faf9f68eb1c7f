import json

import numpy as np
import pytest
from django.core.exceptions import ImproperlyConfigured

from dynamics.exceptions import (
    ContainerFormatError, DivergenceError, MissingEmbeddingError, NonFiniteError, ShapeMismatchError,
)
from vcnode.errors import AcceptanceCheckFailed, ConfigError, NormalizerMismatchError
import vcnode.exceptions.error_codes as err_codes


class NotARealError(Exception):
    """An error we won't recognize for testing."""
    pass


@pytest.mark.parametrize(
    "example_err,expect_code", [
        (AssertionError, 1),
        (ImproperlyConfigured, 1),
        (ConfigError, 1),
        (ShapeMismatchError, 1),
        (np.linalg.LinAlgError, 1),
    ]
)
def test_get_error_code_unknown(monkeypatch, example_err, expect_code):
    """
    Test behavior when we don't recognize an error from a module.

    Fixtures:
       monkeypatch(pytest): Lets us modify the Exception module.
    """
    monkeypatch.setattr(NotARealError, '__module__', example_err.__module__)
    try:
        raise NotARealError('Message text')
    except Exception as e:
        actual_code = err_codes.get_error_code(e)

    assert actual_code == expect_code


@pytest.mark.parametrize(
    "error,expect_code", [
        (AssertionError, 1),
        (KeyError, 1),
        (TypeError, 1),
        (FileNotFoundError, 2),
        (ValueError, 2),
        (FloatingPointError, 3),
        (ImproperlyConfigured, 2),
        (ConfigError, 2),
        (ShapeMismatchError, 2),
        (ContainerFormatError, 2),
        (MissingEmbeddingError, 1),
        (NonFiniteError, 3),
        (DivergenceError, 3),
        (np.linalg.LinAlgError, 3),
    ]
)
def test_get_error_code(error, expect_code):
    try:
        raise error("Message text")
    except Exception as e:
        actual_code = err_codes.get_error_code(e)

    assert actual_code == expect_code


def test_get_error_code_with_extra_arguments():
    """
    These exceptions need more than a message to be constructed.
    """
    cases = [
        (NormalizerMismatchError("abc", "def"), err_codes.CONFIG_ERROR),
        (AcceptanceCheckFailed(["success rate 0.5 is below 0.8"]), err_codes.ACCEPTANCE_FAILURE),
        (json.JSONDecodeError("Expecting value", "{", 1), err_codes.CONFIG_ERROR),
    ]
    for err, expect_code in cases:
        try:
            raise err
        except Exception as e:
            actual_code = err_codes.get_error_code(e)
        assert actual_code == expect_code
