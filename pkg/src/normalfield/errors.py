"""Exception types mapped to CLI exit codes (3 = data, 4 = numerical)."""


class DataError(Exception):
    """Missing or corrupt input files, malformed datasets/checkpoints."""


class NumericalError(Exception):
    """Diverged training, failed gradient verification, non-finite math."""
