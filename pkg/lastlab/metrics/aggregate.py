"""
Dataset-level aggregation.

Dataset PDMS is the mean of per-scene PDMS, never the formula applied to
mean sub-scores.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence


@dataclass(frozen=True)
class DatasetScore:
    score: float
    count: int
    sub_means: Dict[str, float] = field(default_factory=dict)

    def __float__(self) -> float:
        return self.score


def mean(values: Iterable[float]) -> float:
    values = [float(v) for v in values]
    if not values:
        raise ValueError("cannot average an empty list")
    return math.fsum(values) / len(values)


def aggregate(per_scene_scores: Sequence[float],
              per_scene_subs: Optional[Sequence[Mapping[str, float]]] = None) -> DatasetScore:
    """
    Mean score, plus the mean of every numeric sub-score column.

    Raises:
        ValueError: empty input.
    """
    score = mean(per_scene_scores)
    sub_means: Dict[str, float] = {}
    if per_scene_subs:
        for key in per_scene_subs[0]:
            column: List[float] = [float(row[key]) for row in per_scene_subs]
            sub_means[key] = mean(column)
    return DatasetScore(score=score, count=len(per_scene_scores), sub_means=sub_means)
