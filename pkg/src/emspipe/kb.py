"""Protocol knowledge base: a heterogeneous graph loaded from JSON.

File layout::

    {
      "nodes": [{"id": ..., "kind": "protocol|symptom|medication|procedure",
                 "name": ..., "terms": [...]}, ...],
      "edges": [{"src": ..., "dst": ..., "relation":
                 "has_symptom|uses_medication|uses_procedure|has_intervention"}, ...],
      "groups": [{"group_id": ..., "adult": ..., "pediatric": ...}, ...],
      "interventions": {"<protocol id>": ["<label>", ...], ...}
    }

``groups`` pair adult/pediatric variants of the same condition for
coarse-grained scoring; ``interventions`` lists, in display order, the
natural-language intervention labels for vision-enabled protocols.

The repository ships a 43-protocol reference file as
``emspipe/data/reference_kb.json``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional

from .errors import SchemaError

NODE_KINDS = ("protocol", "symptom", "medication", "procedure")
RELATIONS = ("has_symptom", "uses_medication", "uses_procedure", "has_intervention")

# Relations whose target terms feed the lexical scorer.
SCORED_RELATIONS = ("has_symptom", "uses_medication", "uses_procedure")


@dataclass(frozen=True)
class Node:
    id: str
    kind: str
    name: str
    terms: tuple[str, ...] = ()


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    relation: str


@dataclass(frozen=True)
class Group:
    group_id: str
    adult: str
    pediatric: str


@dataclass
class KnowledgeBase:
    nodes: dict[str, Node]
    edges: list[Edge]
    groups: list[Group]
    interventions: dict[str, list[str]]
    _neighbors: dict[str, list[str]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for edge in self.edges:
            if edge.relation in SCORED_RELATIONS:
                self._neighbors.setdefault(edge.src, []).append(edge.dst)

    def protocol_ids(self) -> list[str]:
        return [n.id for n in self.nodes.values() if n.kind == "protocol"]

    def has_protocol(self, protocol_id: str) -> bool:
        node = self.nodes.get(protocol_id)
        return node is not None and node.kind == "protocol"

    def group_of(self, protocol_id: str) -> Optional[Group]:
        for group in self.groups:
            if protocol_id in (group.adult, group.pediatric):
                return group
        return None

    def scored_terms(self, protocol_id: str) -> list[str]:
        """Terms of the protocol's symptom/medication/procedure neighbors."""
        terms: list[str] = []
        for dst in self._neighbors.get(protocol_id, []):
            terms.extend(self.nodes[dst].terms)
        return terms

    def scoring_units(self) -> list[tuple[str, tuple[str, ...]]]:
        """Coarse scoring units: one per group plus one per ungrouped protocol.

        Returns (unit_id, member protocol ids); a group's unit id is its
        group_id and its term pool is the union over members.
        """
        grouped: set[str] = set()
        units: list[tuple[str, tuple[str, ...]]] = []
        for group in self.groups:
            units.append((group.group_id, (group.adult, group.pediatric)))
            grouped.update((group.adult, group.pediatric))
        for pid in self.protocol_ids():
            if pid not in grouped:
                units.append((pid, (pid,)))
        return units

    def unit_terms(self, members: Iterable[str]) -> list[str]:
        seen: set[str] = set()
        terms: list[str] = []
        for pid in members:
            for term in self.scored_terms(pid):
                if term not in seen:
                    seen.add(term)
                    terms.append(term)
        return terms

    def intervention_labels(self, protocol_id: str) -> list[str]:
        return list(self.interventions.get(protocol_id, []))

    def all_intervention_labels(self) -> list[str]:
        """Union of every protocol's labels, first-seen order preserved."""
        seen: set[str] = set()
        labels: list[str] = []
        for entry in self.interventions.values():
            for label in entry:
                if label not in seen:
                    seen.add(label)
                    labels.append(label)
        return labels


def _parse(raw: dict) -> KnowledgeBase:
    nodes: dict[str, Node] = {}
    for item in raw.get("nodes", []):
        node = Node(
            id=str(item["id"]),
            kind=str(item["kind"]),
            name=str(item.get("name", item["id"])),
            terms=tuple(str(t) for t in item.get("terms", [])),
        )
        if node.kind not in NODE_KINDS:
            raise SchemaError("node kind", f"{node.id}: {node.kind!r}")
        if node.id in nodes:
            raise SchemaError("duplicate node id", node.id)
        if any(not t.strip() for t in node.terms):
            raise SchemaError("empty term", node.id)
        nodes[node.id] = node

    if not any(n.kind == "protocol" for n in nodes.values()):
        raise SchemaError("at least one protocol required")

    edges: list[Edge] = []
    for item in raw.get("edges", []):
        edge = Edge(src=str(item["src"]), dst=str(item["dst"]), relation=str(item["relation"]))
        if edge.relation not in RELATIONS:
            raise SchemaError("edge relation", f"{edge.src}->{edge.dst}: {edge.relation!r}")
        for endpoint in (edge.src, edge.dst):
            if endpoint not in nodes:
                raise SchemaError("edge endpoint", f"{endpoint} not a node")
        if nodes[edge.src].kind != "protocol":
            raise SchemaError("edge source kind", f"{edge.src} is not a protocol")
        expected_dst = {
            "has_symptom": "symptom",
            "uses_medication": "medication",
            "uses_procedure": "procedure",
        }.get(edge.relation)
        if expected_dst and nodes[edge.dst].kind != expected_dst:
            raise SchemaError("edge target kind", f"{edge.dst} is not a {expected_dst}")
        edges.append(edge)

    groups: list[Group] = []
    grouped: set[str] = set()
    group_ids: set[str] = set()
    for item in raw.get("groups", []):
        group = Group(
            group_id=str(item["group_id"]),
            adult=str(item["adult"]),
            pediatric=str(item["pediatric"]),
        )
        if group.group_id in group_ids:
            raise SchemaError("duplicate group id", group.group_id)
        group_ids.add(group.group_id)
        if group.adult == group.pediatric:
            raise SchemaError("group members distinct", group.group_id)
        for member in (group.adult, group.pediatric):
            if member not in nodes or nodes[member].kind != "protocol":
                raise SchemaError("group member", f"{member} is not a protocol")
            if member in grouped:
                raise SchemaError("protocol in multiple groups", member)
            grouped.add(member)
        groups.append(group)

    interventions: dict[str, list[str]] = {}
    for pid, labels in raw.get("interventions", {}).items():
        if pid not in nodes or nodes[pid].kind != "protocol":
            raise SchemaError("intervention protocol", f"{pid} is not a protocol")
        labels = [str(x) for x in labels]
        if not labels:
            raise SchemaError("intervention labels", f"{pid}: empty list")
        if len(set(labels)) != len(labels) or any(not x.strip() for x in labels):
            raise SchemaError("intervention labels", f"{pid}: blank or duplicate label")
        interventions[pid] = labels

    return KnowledgeBase(nodes=nodes, edges=edges, groups=groups, interventions=interventions)


def load_knowledge_base(path) -> KnowledgeBase:
    """Load and validate a knowledge-base file; SchemaError names the broken rule."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError("invalid json", str(exc)) from exc
    if not isinstance(raw, dict):
        raise SchemaError("invalid json", "top level must be an object")
    return _parse(raw)


def reference_kb_path() -> Path:
    """Path of the shipped 43-protocol reference knowledge base."""
    return Path(str(resources.files("emspipe").joinpath("data/reference_kb.json")))


def load_reference_kb() -> KnowledgeBase:
    return load_knowledge_base(reference_kb_path())
