from .base import Selection, SelectionContext, SelectionRule
from .selection import (SELECTION_RULES, LatentMaxRule, PrimaryOnlyRule, RandomRegionRule, WholeImageRule,
                        get_rule)

__all__ = [
    "Selection",
    "SelectionContext",
    "SelectionRule",
    "SELECTION_RULES",
    "LatentMaxRule",
    "PrimaryOnlyRule",
    "RandomRegionRule",
    "WholeImageRule",
    "get_rule",
]
