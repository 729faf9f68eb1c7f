import pytest
from frozendict import frozendict

SCOPE_PREFIXES = frozendict({
    'function': 'FUN',
    'class': 'CLA',
    'module': 'MOD',
    'session': 'SES',
})


def create_scoped_fixtures(globals, fixture_impl_function, scopes=tuple(SCOPE_PREFIXES)):
    """
    Registers one fixture per scope, all sharing the body of `fixture_impl_function`.

    Each fixture is named after the implementation with the scope's prefix
    from `SCOPE_PREFIXES`. Generating a dataset is expensive, so tests
    normally ask for the `SES_` variant, while a test that mutates its copy
    asks for `FUN_`.

    The names are added to `globals` dynamically, so list them in a comment
    above the call:

    ```
    # defines:
    # FUN_tiny_spiral_dataset
    # CLA_tiny_spiral_dataset
    # MOD_tiny_spiral_dataset
    # SES_tiny_spiral_dataset
    create_scoped_fixtures(globals(), tiny_spiral_dataset)
    ```
    """
    for scope in scopes:
        name = scoped_fixture_name(fixture_impl_function, scope)
        globals[name] = pytest.fixture(fixture_impl_function, scope=scope, name=name)


def scoped_fixture_name(fixture_impl_function, scope):
    """`scoped_fixture_name(tiny_spiral_dataset, 'session') == 'SES_tiny_spiral_dataset'`"""
    try:
        prefix = SCOPE_PREFIXES[scope]
    except KeyError:
        raise ValueError(f"Unknown fixture scope {scope!r}; expected one of {tuple(SCOPE_PREFIXES)}") from None
    return f"{prefix}_{fixture_impl_function.__name__}"
