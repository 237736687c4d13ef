"""Typed multigraphs over body-worn sensor positions.

Nodes are sensor placements; edges carry one of three anatomical relation
types. Adjacent segments on the same limb chain are *interconnected*,
bilaterally symmetric placements are *analogous*, and same-side (optionally
cross-side) coordination pairs are *lateral*. The same sensor pair may appear
under more than one relation type, so the structure is a true multigraph.

Undirected relations are stored as directed edge pairs, which keeps neighbor
aggregation symmetric and gives every directed edge its own feature slot.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

from .errors import ConfigError, GraphBuildError, LayoutError


class RelationType(IntEnum):
    INTERCONNECTED = 0
    ANALOGOUS = 1
    LATERAL = 2


N_RELATION_TYPES = 3

_SIDES = ("left", "right", "center")
_REGIONS = ("torso", "upper_limb", "lower_limb")


@dataclass(frozen=True)
class SensorLayout:
    """Ordered sensor positions with side and body-region tags."""

    dataset_id: str
    positions: tuple[str, ...]
    sides: tuple[str, ...]
    regions: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.positions)) != len(self.positions):
            raise LayoutError(f"duplicate position names in layout {self.dataset_id!r}")
        if not (len(self.positions) == len(self.sides) == len(self.regions)):
            raise LayoutError("positions, sides, and regions must have equal length")
        for side in self.sides:
            if side not in _SIDES:
                raise LayoutError(f"unknown side {side!r} (expected one of {_SIDES})")
        for region in self.regions:
            if region not in _REGIONS:
                raise LayoutError(f"unknown region {region!r} (expected one of {_REGIONS})")

    def index_of(self, position: str) -> int:
        try:
            return self.positions.index(position)
        except ValueError:
            raise LayoutError(f"unknown sensor position {position!r} in layout {self.dataset_id!r}") from None

    def side_of(self, position: str) -> str:
        return self.sides[self.index_of(position)]

    def region_of(self, position: str) -> str:
        return self.regions[self.index_of(position)]

    @property
    def n_sensors(self) -> int:
        return len(self.positions)


OPPT_LAYOUT = SensorLayout(
    dataset_id="OPPT",
    positions=("Back", "Right Upper Arm", "Right Lower Arm", "Left Upper Arm", "Left Lower Arm"),
    sides=("center", "right", "right", "left", "left"),
    regions=("torso", "upper_limb", "upper_limb", "upper_limb", "upper_limb"),
)

DSADS_LAYOUT = SensorLayout(
    dataset_id="DSADS",
    positions=("Torso", "Right Arm", "Left Arm", "Right Leg", "Left Leg"),
    sides=("center", "right", "left", "right", "left"),
    regions=("torso", "upper_limb", "upper_limb", "lower_limb", "lower_limb"),
)


@dataclass
class RelationRules:
    """Undirected sensor pairs for each relation type, by position name."""

    interconnected: list[tuple[str, str]] = field(default_factory=list)
    analogous: list[tuple[str, str]] = field(default_factory=list)
    lateral: list[tuple[str, str]] = field(default_factory=list)

    def pairs_of(self, rtype: RelationType) -> list[tuple[str, str]]:
        return (self.interconnected, self.analogous, self.lateral)[int(rtype)]


def default_rules(layout: SensorLayout, cross_lateral: bool = True) -> RelationRules:
    """Built-in edge sets for the two reference layouts.

    The published figures for these layouts show the relation categories but
    not a full edge enumeration, so these defaults are an explicit, overridable
    reading of them: limb chains are interconnected, left/right mirror pairs
    are analogous, and the lateral set duplicates the arm chains (for the
    upper-body layout) or pairs same-side arm and leg (for the full-body one,
    plus cross-side pairs when ``cross_lateral`` is on).
    """
    if layout.dataset_id == "OPPT":
        return RelationRules(
            interconnected=[("Back", "Right Upper Arm"), ("Back", "Left Upper Arm"),
                            ("Right Upper Arm", "Right Lower Arm"), ("Left Upper Arm", "Left Lower Arm")],
            analogous=[("Right Upper Arm", "Left Upper Arm"), ("Right Lower Arm", "Left Lower Arm")],
            lateral=[("Right Upper Arm", "Right Lower Arm"), ("Left Upper Arm", "Left Lower Arm")],
        )
    if layout.dataset_id == "DSADS":
        lateral = [("Right Arm", "Right Leg"), ("Left Arm", "Left Leg")]
        if cross_lateral:
            lateral += [("Left Arm", "Right Leg"), ("Right Arm", "Left Leg")]
        return RelationRules(
            interconnected=[("Torso", "Right Arm"), ("Torso", "Left Arm"),
                            ("Torso", "Right Leg"), ("Torso", "Left Leg")],
            analogous=[("Right Arm", "Left Arm"), ("Right Leg", "Left Leg")],
            lateral=lateral,
        )
    raise ConfigError(f"no default rules for layout {layout.dataset_id!r}; supply a rules file")


@dataclass(frozen=True)
class SensorGraph:
    """Immutable directed multigraph: ``edges[e] = (src, dst, relation)``.

    Edges are sorted by (relation, src, dst), so edge index assignment is
    reproducible across builds. Every undirected rule contributes two directed
    edges.
    """

    layout: SensorLayout
    edges: tuple[tuple[int, int, RelationType], ...]
    _incoming: tuple[tuple[tuple[int, int], ...], ...]

    @property
    def n_nodes(self) -> int:
        return self.layout.n_sensors

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def neighbors(self, node: int) -> list[tuple[int, int]]:
        """Incoming ``(source node, edge index)`` pairs, multi-edges included."""
        if not 0 <= node < self.n_nodes:
            raise IndexError(f"node index {node} out of range for {self.n_nodes} nodes")
        return list(self._incoming[node])

    def edge_names(self) -> list[tuple[str, str, str]]:
        """Per-edge (source name, destination name, relation name) triples."""
        pos = self.layout.positions
        return [(pos[s], pos[d], RelationType(t).name.lower()) for s, d, t in self.edges]


def build_graph(layout: SensorLayout, rules: RelationRules) -> SensorGraph:
    """Expand undirected relation rules into a validated directed multigraph."""
    directed: list[tuple[int, int, RelationType]] = []
    for rtype in RelationType:
        seen: set[tuple[int, int]] = set()
        for a, b in rules.pairs_of(rtype):
            i, j = layout.index_of(a), layout.index_of(b)
            if i == j:
                raise GraphBuildError(f"self-loop {a!r} in {rtype.name.lower()} rules")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise GraphBuildError(f"duplicate {rtype.name.lower()} pair {a!r} -- {b!r}")
            seen.add(key)
            directed.append((i, j, rtype))
            directed.append((j, i, rtype))
    if not directed:
        raise GraphBuildError("relation rules produced an empty edge set")
    directed.sort(key=lambda e: (int(e[2]), e[0], e[1]))

    incoming: list[list[tuple[int, int]]] = [[] for _ in range(layout.n_sensors)]
    for e, (src, dst, _) in enumerate(directed):
        incoming[dst].append((src, e))
    for node, inc in enumerate(incoming):
        if not inc:
            raise GraphBuildError(f"sensor {layout.positions[node]!r} has no edges; every node needs degree >= 1")

    return SensorGraph(
        layout=layout,
        edges=tuple(directed),
        _incoming=tuple(tuple(inc) for inc in incoming),
    )


def load_rules_file(path: str | Path) -> tuple[SensorLayout, RelationRules]:
    """Parse a JSON rules document into a layout and its relation rules.

    Expected shape::

        {
          "layout": {"dataset_id": "...",
                     "positions": [{"name": "...", "side": "...", "region": "..."}, ...]},
          "edges": {"interconnected": [["A", "B"], ...],
                    "analogous": [...], "lateral": [...]}
        }
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON at line {err.lineno}, column {err.colno}: {err.msg}") from None

    def fail(json_path: str, message: str):
        raise ConfigError(f"{path}: at {json_path}: {message}")

    if not isinstance(doc, dict):
        fail("$", "top level must be an object")
    layout_doc = doc.get("layout")
    if not isinstance(layout_doc, dict):
        fail("$.layout", "missing or not an object")
    entries = layout_doc.get("positions")
    if not isinstance(entries, list) or not entries:
        fail("$.layout.positions", "must be a non-empty list")
    names, sides, regions = [], [], []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or not {"name", "side", "region"} <= set(entry):
            fail(f"$.layout.positions[{i}]", "each entry needs name, side, and region")
        names.append(str(entry["name"]))
        sides.append(str(entry["side"]))
        regions.append(str(entry["region"]))
    try:
        layout = SensorLayout(
            dataset_id=str(layout_doc.get("dataset_id", "custom")),
            positions=tuple(names), sides=tuple(sides), regions=tuple(regions),
        )
    except LayoutError as err:
        fail("$.layout", str(err))

    edges_doc = doc.get("edges")
    if not isinstance(edges_doc, dict):
        fail("$.edges", "missing or not an object")
    known = {"interconnected", "analogous", "lateral"}
    unknown = set(edges_doc) - known
    if unknown:
        fail("$.edges", f"unknown relation keys {sorted(unknown)}")
    rules = RelationRules()
    for key in known:
        pairs = edges_doc.get(key, [])
        if not isinstance(pairs, list):
            fail(f"$.edges.{key}", "must be a list of pairs")
        out = getattr(rules, key)
        for i, pair in enumerate(pairs):
            if not (isinstance(pair, list) and len(pair) == 2):
                fail(f"$.edges.{key}[{i}]", "each edge must be a two-element pair")
            a, b = str(pair[0]), str(pair[1])
            for name in (a, b):
                if name not in layout.positions:
                    fail(f"$.edges.{key}[{i}]", f"unknown position {name!r}")
            out.append((a, b))
    return layout, rules
