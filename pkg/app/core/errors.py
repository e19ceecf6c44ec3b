"""
Exception hierarchy shared by every layer.

ConfigError maps to CLI exit code 1 and HTTP 400; DataError maps to exit
code 2 and HTTP 422.
"""


class EngineError(Exception):
    exit_code = 2
    http_status = 422


class ConfigError(EngineError, ValueError):
    exit_code = 1
    http_status = 400


class DataError(EngineError):
    exit_code = 2
    http_status = 422


class DimensionMismatch(DataError, ValueError):
    """Vector or payload dimension disagrees with what the context requires."""


# Feature store
class FeatureStoreError(DataError):
    pass


class BadMagic(FeatureStoreError):
    pass


class TruncatedFile(FeatureStoreError):
    pass


class NonFiniteValue(FeatureStoreError):
    pass


class InvalidBank(FeatureStoreError):
    pass


class BankIOError(FeatureStoreError, OSError):
    pass


# Preprocessing
class PreprocessingError(DataError):
    pass


class EmptyViewList(PreprocessingError):
    pass


class EmptyList(PreprocessingError):
    pass


class DegenerateVector(PreprocessingError):
    pass


# Sampling
class SamplingError(DataError):
    pass


class NotEnoughClasses(SamplingError):
    pass


class NotEnoughImages(SamplingError):
    pass


# Classifiers
class ClassifierError(DataError):
    pass


class EmptyClass(ClassifierError):
    pass


# Synthetic generator
class InvalidSpec(ConfigError):
    pass


class UnsupportedSpec(ConfigError):
    pass
