"""Closed-loop and open-loop planning metrics."""

from lastlab.metrics.aggregate import DatasetScore, aggregate
from lastlab.metrics.closed_loop import ExtSubScores, SubScores, epdms, ext_sub_scores, pdms, sub_scores
from lastlab.metrics.open_loop import OpenLoopResult, open_loop

__all__ = [
    "DatasetScore",
    "ExtSubScores",
    "OpenLoopResult",
    "SubScores",
    "aggregate",
    "epdms",
    "ext_sub_scores",
    "open_loop",
    "pdms",
    "sub_scores",
]
