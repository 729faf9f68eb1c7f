class ConfigError(Exception):
    pass


class NormalizerMismatchError(Exception):
    def __init__(self, expected, actual, *args):
        self.expected = expected
        self.actual = actual
        super().__init__(f"normalizer fingerprint {actual} does not match {expected}", *args)


class AcceptanceCheckFailed(Exception):
    def __init__(self, failures, *args):
        self.failures = failures
        super().__init__("; ".join(failures), *args)
