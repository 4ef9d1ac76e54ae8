"""
Index ranges of families
"""

from .exceptions import ConfigError


def family_indices(start: int, limit: int, step: int) -> range:
    """
    The index values of a family's threads, limit is exclusive

    >>> list(family_indices(10, 0, -2))
    [10, 8, 6, 4, 2]
    >>> len(family_indices(0, 1000, 1)), len(family_indices(0, 0, 1))
    (1000, 0)
    """
    if step == 0:
        raise ConfigError("a family step of 0 never reaches its limit", key="step")
    return range(start, limit, step)
