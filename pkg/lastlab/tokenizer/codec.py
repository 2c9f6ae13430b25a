"""
Trajectory <-> token serialization and answer-format validation.

Waypoints are rendered as signed fixed-point numbers with one decimal
(0.1 m grid, round-half-to-even), "x,y" pairs joined by ';' and wrapped in
<answer> ... </answer>. Every character is its own token.
"""

import re
from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Iterable, List, Optional, Sequence

import numpy as np

from lastlab.tokenizer.vocab import (
    ANSWER_END,
    ANSWER_START,
    GEO_END,
    GEO_START,
    STRUCTURAL_TAGS,
    WM_END,
    WM_START,
)
from lastlab.utils.reliability import (
    ConfigurationError,
    EncodingError,
    FormatError,
    TagError,
    WaypointSyntaxError,
)

FUTURE_LEN = 6
COORD_LIMIT = 32.0

_QUANTUM = Decimal("0.1")
_NUMBER = r"-?(?:0|[1-9]\d?)\.\d"
_PAIR = rf"({_NUMBER}),({_NUMBER})"
_PAIR_RE = re.compile(rf"^{_PAIR}$")


@dataclass(eq=False)
class Trajectory:
    """Future ego positions (x right, y forward) at 0.5 s spacing."""

    waypoints: np.ndarray

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=np.float64).reshape(-1, 2)
        if not np.all(np.isfinite(self.waypoints)):
            raise ConfigurationError("trajectory waypoints must be finite")

    def __len__(self) -> int:
        return len(self.waypoints)

    @property
    def endpoint(self) -> np.ndarray:
        return self.waypoints[-1]

    def in_range(self, limit: float = COORD_LIMIT) -> bool:
        return bool(np.all(np.abs(self.waypoints) <= limit))

    def equals(self, other: "Trajectory") -> bool:
        return self.waypoints.shape == other.waypoints.shape and bool(
            np.array_equal(self.waypoints, other.waypoints)
        )

    @classmethod
    def zeros(cls, n: int = FUTURE_LEN) -> "Trajectory":
        return cls(np.zeros((n, 2)))


def _quantize_value(x: float) -> Decimal:
    q = Decimal(repr(float(x))).quantize(_QUANTUM, rounding=ROUND_HALF_EVEN)
    if q == 0:
        q = Decimal("0.0")
    return q


def quantize(traj: Trajectory) -> Trajectory:
    """Snap every coordinate to the 0.1 m grid (round-half-to-even)."""
    flat = [float(_quantize_value(x)) for x in traj.waypoints.ravel()]
    return Trajectory(np.array(flat).reshape(traj.waypoints.shape))


def format_coordinate(x: float) -> str:
    return f"{_quantize_value(x):.1f}"


def format_pairs(points: np.ndarray) -> str:
    """'x,y;x,y;...' text for a (N, 2) array; shared by answers and history."""
    return ";".join(f"{format_coordinate(x)},{format_coordinate(y)}" for x, y in points)


def serialize_trajectory(traj: Trajectory) -> List[str]:
    """
    Render a trajectory as answer tokens.

    Raises:
        EncodingError: wrong waypoint count or a coordinate outside ±32 m.
    """
    if len(traj) != FUTURE_LEN:
        raise EncodingError(f"trajectory has {len(traj)} waypoints, expected {FUTURE_LEN}")
    q = quantize(traj)
    if not q.in_range():
        worst = float(np.max(np.abs(traj.waypoints)))
        raise EncodingError(f"coordinate {worst:.2f} m outside ±{COORD_LIMIT} m")
    return [ANSWER_START] + list(format_pairs(q.waypoints)) + [ANSWER_END]


def _answer_body(tokens: Sequence[str]) -> str:
    tokens = list(tokens)
    if tokens.count(ANSWER_START) != 1 or tokens.count(ANSWER_END) != 1:
        raise TagError("answer must contain exactly one <answer> and one </answer>")
    start, end = tokens.index(ANSWER_START), tokens.index(ANSWER_END)
    if end < start:
        raise TagError("</answer> precedes <answer>")
    body = tokens[start + 1:end]
    for tok in body:
        if len(tok) != 1:
            raise WaypointSyntaxError(f"unexpected token {tok!r} inside answer")
    return "".join(body)


def parse_trajectory(tokens: Iterable[str]) -> Trajectory:
    """
    Inverse of serialize_trajectory.

    Raises:
        TagError: answer tags missing or out of order.
        WaypointSyntaxError: malformed number, out-of-range value or wrong arity.
    """
    body = _answer_body(list(tokens))
    pairs = body.split(";")
    if len(pairs) != FUTURE_LEN:
        raise WaypointSyntaxError(f"expected {FUTURE_LEN} waypoints, got {len(pairs)}")

    points = []
    for pair in pairs:
        match = _PAIR_RE.match(pair)
        if match is None:
            raise WaypointSyntaxError(f"malformed waypoint {pair!r}")
        x, y = float(match.group(1)), float(match.group(2))
        if abs(x) > COORD_LIMIT or abs(y) > COORD_LIMIT:
            raise WaypointSyntaxError(f"waypoint {pair!r} outside ±{COORD_LIMIT} m")
        points.append((x, y))
    return Trajectory(np.array(points))


@dataclass(frozen=True)
class FormatCheck:
    tags_ok: bool
    syntax_ok: bool


def tags_in_order(tokens: Sequence[str], required: Sequence[str] = STRUCTURAL_TAGS) -> bool:
    """Each required tag exactly once, in the given order; no stray tags."""
    tokens = list(tokens)
    positions = []
    for tag in STRUCTURAL_TAGS:
        count = tokens.count(tag)
        if tag in required:
            if count != 1:
                return False
            positions.append((required.index(tag), tokens.index(tag)))
        elif count:
            return False
    positions.sort()
    indices = [pos for _, pos in positions]
    return indices == sorted(indices)


def validate_format(tokens: Sequence[str], required: Optional[Sequence[str]] = None) -> FormatCheck:
    """
    Total format check used by the format reward.

    `required` narrows the tag set for layouts without latent segments.
    """
    required = tuple(required) if required is not None else STRUCTURAL_TAGS
    try:
        tags_ok = tags_in_order(tokens, required)
    except Exception:
        tags_ok = False
    try:
        parse_trajectory(tokens)
        syntax_ok = True
    except FormatError:
        syntax_ok = False
    except Exception:
        syntax_ok = False
    return FormatCheck(tags_ok=tags_ok, syntax_ok=syntax_ok)


def required_tags(uses_wm: bool, uses_geo: bool) -> tuple:
    tags = []
    if uses_wm:
        tags += [WM_START, WM_END]
    if uses_geo:
        tags += [GEO_START, GEO_END]
    return tuple(tags + [ANSWER_START, ANSWER_END])
