from config.settings.common_settings import * # noqa

# Override default settings
DEBUG = True
VCNODE_LOG_LEVEL = 'DEBUG'
LOGGING['loggers']['dynamics']['level'] = VCNODE_LOG_LEVEL # noqa
LOGGING['loggers']['vcnode']['level'] = VCNODE_LOG_LEVEL # noqa

# Use a local.py module for settings that shouldn't be version tracked
try:
    from .local import * # noqa
except ImportError:
    pass
