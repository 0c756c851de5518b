"""Pivot process model: the generic middle stage between DSL and BPMN.

The pivot keeps a deliberately flat element vocabulary (activity,
subprocess, gateway, event) plus flows, so front-end languages and target
languages stay decoupled. Concept-derived elements are tagged with their
originating concept; uids come from the persistent registry so repeated
generation of the same process yields identical models.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .diagnostics import DsprocError
from .domain import Domain
from .mappings import UidRegistry
from .process import ProcessBody, ProcessModel

# element kinds
ACTIVITY = "activity"
SUBPROCESS = "subprocess"
EXCLUSIVE = "exclusive"
PARALLEL = "parallel"
START = "start"
END = "end"


@dataclass(frozen=True)
class CommonFlow:
    source: str  # uid
    target: str  # uid
    condition: Optional[str] = None
    exceptional: bool = False


@dataclass(frozen=True)
class CommonElement:
    uid: str
    kind: str
    label: str = ""
    inner: Optional["CommonModel"] = None  # kind == subprocess only


@dataclass(frozen=True)
class CommonModel:
    name: str
    elements: Tuple[CommonElement, ...] = ()
    flows: Tuple[CommonFlow, ...] = ()
    concept_tags: Dict[str, str] = field(default_factory=dict)

    def element(self, uid: str) -> Optional[CommonElement]:
        for e in self.elements:
            if e.uid == uid:
                return e
        return None


def to_common(p: ProcessModel, d: Domain, registry: UidRegistry) -> CommonModel:
    """Lower a validated process model into the pivot representation.

    Concept references to leaf concepts become tagged activities; references
    to subprocess-defined concepts become tagged subprocess elements whose
    inner model is the recursively lowered concept body. Gateways and flows
    copy over 1:1; start/end become events.
    """
    return _lower_body(p.body, d, registry, p.name, p.name)


def _lower_body(body: ProcessBody, d: Domain, registry: UidRegistry,
                name: str, path: str) -> CommonModel:
    elements: List[CommonElement] = []
    tags: Dict[str, str] = {}
    uid_of: Dict[str, str] = {}

    for node in body.nodes:
        node_path = f"{path}/{node.id}"
        uid = registry.uid_for(node_path)
        uid_of[node.id] = uid
        if node.kind == "start":
            elements.append(CommonElement(uid, START))
        elif node.kind == "end":
            elements.append(CommonElement(uid, END))
        elif node.kind in ("exclusive", "parallel"):
            elements.append(CommonElement(uid, node.kind, label=node.id))
        elif node.kind == "concept":
            concept = d.concept(node.concept)
            if concept is None:
                raise DsprocError(f"unresolved concept {node.concept!r} in {path}")
            if concept.subprocess is not None:
                inner = _lower_body(concept.subprocess, d, registry, node_path, node_path)
                elements.append(CommonElement(uid, SUBPROCESS, label=concept.label, inner=inner))
            else:
                elements.append(CommonElement(uid, ACTIVITY, label=concept.label))
            tags[uid] = concept.name
        else:  # pragma: no cover - parser only emits the kinds above
            raise DsprocError(f"unknown node kind {node.kind!r}")

    flows = tuple(
        CommonFlow(uid_of[f.source], uid_of[f.target], f.condition, f.exceptional)
        for f in body.flows
    )
    return CommonModel(name, tuple(elements), flows, tags)


def common_stats(m: CommonModel) -> Tuple[int, int, int]:
    """(activity, gateway, flow) counts, including nested subprocess content."""
    flow_count = len(m.flows)
    activities = sum(1 for e in m.elements if e.kind == ACTIVITY)
    gateways = sum(1 for e in m.elements if e.kind in (EXCLUSIVE, PARALLEL))
    for e in m.elements:
        if e.kind == SUBPROCESS and e.inner is not None:
            a, g, f = common_stats(e.inner)
            activities += a
            gateways += g
            flow_count += f
    return activities, gateways, flow_count
