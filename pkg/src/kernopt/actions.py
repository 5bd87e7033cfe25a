"""Semantic action space: enumeration over a source, canonical text grammar.

The canonical action grammar is ``<verb> lines <start>-<end>`` with the verbs
tile / fuse / pipeline / reorder, plus the bare terminal ``stop``. This
grammar is part of the trajectory file format and the prompt format, so it
must stay stable.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .analysis import extract_regions
from .model import (
    ActionKind,
    CodeRegion,
    Observation,
    OptimizationAction,
    STOP_ACTION,
    content_hash,
)

_VERBS = {
    ActionKind.TILING: "tile",
    ActionKind.FUSION: "fuse",
    ActionKind.PIPELINE: "pipeline",
    ActionKind.REORDERING: "reorder",
}
_KIND_BY_VERB = {verb: kind for kind, verb in _VERBS.items()}
_ACTION_TEXT_RE = re.compile(r"^(?P<verb>tile|fuse|pipeline|reorder) lines "
                             r"(?P<start>\d+)-(?P<end>\d+)$")


class ActionParseError(ValueError):
    """Text does not match the canonical action grammar."""


class OutOfCatalogError(LookupError):
    """A grammatical action that is not present in the catalog."""


@dataclass(frozen=True)
class ActionCatalog:
    """Ordered action menu for one observation.

    Exactly one STOP action, always last; no duplicate (kind, region) pairs.
    ``source_fingerprint`` ties the catalog to the source it was built from.
    """

    actions: tuple[OptimizationAction, ...]
    source_fingerprint: str

    def __post_init__(self):
        stops = [a for a in self.actions if a.kind is ActionKind.STOP]
        if len(stops) != 1 or self.actions[-1].kind is not ActionKind.STOP:
            raise ValueError("catalog must contain exactly one STOP action, last")
        keys = [a.sort_key for a in self.actions]
        if len(set(keys)) != len(keys):
            raise ValueError("catalog contains duplicate (kind, region) actions")

    def __len__(self) -> int:
        return len(self.actions)

    def index_of(self, action: OptimizationAction) -> int:
        key = action.sort_key
        for i, candidate in enumerate(self.actions):
            if candidate.sort_key == key:
                return i
        raise OutOfCatalogError(f"action {render_action(action)!r} not in catalog")


def enumerate_actions(obs: Observation) -> ActionCatalog:
    """Build the catalog for an observation: all candidate regions, then STOP.

    Ordering is deterministic: kinds in enum order, regions by (start, end).
    A source with no candidates yields the STOP-only floor catalog.
    """
    source = obs.current_source
    actions: list[OptimizationAction] = []
    for kind in (ActionKind.TILING, ActionKind.FUSION, ActionKind.PIPELINE,
                 ActionKind.REORDERING):
        for region in extract_regions(source, kind):
            actions.append(OptimizationAction(kind, region))
    actions.append(STOP_ACTION)
    return ActionCatalog(actions=tuple(actions),
                         source_fingerprint=content_hash(source.text))


def render_action(action: OptimizationAction) -> str:
    """Canonical text of an action, e.g. ``fuse lines 15-20`` or ``stop``."""
    if action.kind is ActionKind.STOP:
        return "stop"
    region = action.region
    assert region is not None
    return f"{_VERBS[action.kind]} lines {region.start_line}-{region.end_line}"


def parse_action_text(text: str) -> OptimizationAction:
    """Parse canonical action text without catalog resolution.

    Used by trajectory files, where the edge action need not correspond to a
    currently enumerable catalog.
    """
    text = text.strip()
    if text == "stop":
        return STOP_ACTION
    m = _ACTION_TEXT_RE.match(text)
    if m is None:
        raise ActionParseError(f"not a canonical action: {text!r}")
    start, end = int(m.group("start")), int(m.group("end"))
    if not (1 <= start <= end):
        raise ActionParseError(f"invalid line range in action: {text!r}")
    return OptimizationAction(_KIND_BY_VERB[m.group("verb")],
                              CodeRegion(start, end))


def parse_action(text: str, catalog: ActionCatalog) -> OptimizationAction:
    """Resolve canonical action text against a catalog.

    Returns the catalog's own action instance. Raises ActionParseError on a
    grammar mismatch, OutOfCatalogError when the action is grammatical but
    not offered by the catalog.
    """
    action = parse_action_text(text)
    try:
        return catalog.actions[catalog.index_of(action)]
    except OutOfCatalogError:
        raise OutOfCatalogError(
            f"action {text.strip()!r} is not in the catalog "
            f"(fingerprint {catalog.source_fingerprint[:12]})") from None
