"""BPMN 2.0 generation, parsing and validation.

Output uses only the descriptive element subset (start/end events, tasks,
service tasks, subprocesses, exclusive/parallel gateways, sequence flows).
Concept-derived elements carry their traceability uid in an
``extensionElements`` block::

    <bpmn:extensionElements>
      <dsml:conceptRef uid="u3" concept="ApproveOrder" domain="OrderHandling"/>
    </bpmn:extensionElements>

Serialization is byte-deterministic: UTF-8, LF line endings, two-space
indentation, fixed attribute order. Exceptional pivot flows are lowered to
an inserted exclusive gateway whose exceptional branch carries the
condition label ``exception``; the inserted gateway has no concept uid.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

from . import diagnostics as diag
from .diagnostics import Diagnostic, DsprocError, ParseError
from .pivot import CommonModel

BPMN_NS = "http://www.omg.org/spec/BPMN/20100524/MODEL"
DSML_NS = "urn:dsml:1"

KNOWN_KINDS = (
    "startEvent", "endEvent", "serviceTask", "task", "subProcess",
    "exclusiveGateway", "parallelGateway",
)

_KIND_FROM_COMMON = {
    "start": "startEvent",
    "end": "endEvent",
    "activity": "serviceTask",
    "subprocess": "subProcess",
    "exclusive": "exclusiveGateway",
    "parallel": "parallelGateway",
}


@dataclass
class SequenceFlow:
    id: str
    source: str
    target: str
    condition: Optional[str] = None


@dataclass
class BpmnElement:
    id: str
    kind: str
    name: str = ""
    concept_uid: Optional[str] = None
    concept_name: Optional[str] = None
    inner_elements: List["BpmnElement"] = field(default_factory=list)
    inner_flows: List[SequenceFlow] = field(default_factory=list)
    attrs: Dict[str, str] = field(default_factory=dict)  # preserved extras


@dataclass
class BpmnModel:
    process_id: str
    elements: List[BpmnElement] = field(default_factory=list)
    flows: List[SequenceFlow] = field(default_factory=list)
    domain: Optional[str] = None

    def element(self, element_id: str) -> Optional[BpmnElement]:
        for e in walk_elements(self):
            if e.id == element_id:
                return e
        return None


def walk_elements(model) -> Iterator[BpmnElement]:
    """All elements of a model (or element list), nested subprocesses included."""
    elements = model.elements if hasattr(model, "elements") else model
    for e in elements:
        yield e
        if e.inner_elements:
            yield from walk_elements(e.inner_elements)


def generate_bpmn(m: CommonModel, domain_name: str) -> BpmnModel:
    """Deterministically lower a pivot model to BPMN."""
    elements, flows = _lower_level(m, domain_name)
    model = BpmnModel(process_id=_ncname(m.name), elements=elements,
                      flows=flows, domain=domain_name)
    _check_uid_uniqueness(model)
    return model


def _lower_level(m: CommonModel, domain_name: str) -> Tuple[List[BpmnElement], List[SequenceFlow]]:
    elements: List[BpmnElement] = []
    by_uid: Dict[str, BpmnElement] = {}
    for ce in m.elements:
        kind = _KIND_FROM_COMMON[ce.kind]
        el = BpmnElement(id=ce.uid, kind=kind, name=ce.label)
        concept = m.concept_tags.get(ce.uid)
        if concept is not None:
            el.concept_uid = ce.uid
            el.concept_name = concept
        if ce.kind == "subprocess" and ce.inner is not None:
            el.inner_elements, el.inner_flows = _lower_level(ce.inner, domain_name)
        elements.append(el)
        by_uid[ce.uid] = el

    # exceptional-flow lowering: collect per-source, insert a routing gateway
    raw = [(f.source, f.target, f.condition, f.exceptional) for f in m.flows]
    final: List[Tuple[str, str, Optional[str]]] = []
    inserted: Dict[str, str] = {}
    for src, _tgt, _cond, exc in raw:
        if exc and by_uid[src].kind != "exclusiveGateway" and src not in inserted:
            gw_id = f"{src}_exc"
            gw = BpmnElement(id=gw_id, kind="exclusiveGateway")
            elements.insert(elements.index(by_uid[src]) + 1, gw)
            inserted[src] = gw_id
    for src, gw_id in inserted.items():
        final.append((src, gw_id, None))
    for src, tgt, cond, exc in raw:
        if exc and cond is None:
            cond = "exception"
        new_src = inserted.get(src, src)
        final.append((new_src, tgt, cond))

    flows: List[SequenceFlow] = []
    used_ids = set()
    for src, tgt, cond in final:
        fid = f"f_{src}_{tgt}"
        n = 2
        while fid in used_ids:
            fid = f"f_{src}_{tgt}_{n}"
            n += 1
        used_ids.add(fid)
        flows.append(SequenceFlow(fid, src, tgt, cond))
    # keep document order stable: element order is already fixed; order flows
    # by (source position, original order) so gateway bridges come first
    return elements, flows


def _check_uid_uniqueness(model: BpmnModel) -> None:
    seen = set()
    for e in walk_elements(model):
        if e.concept_uid is None:
            continue
        if e.concept_uid in seen:
            raise DsprocError(f"duplicate concept uid {e.concept_uid!r}")
        seen.add(e.concept_uid)


# ---------------------------------------------------------------------------
# serialization


def serialize_bpmn(model: BpmnModel) -> str:
    out: List[str] = ['<?xml version="1.0" encoding="UTF-8"?>']
    out.append(
        f'<bpmn:definitions xmlns:bpmn="{BPMN_NS}" xmlns:dsml="{DSML_NS}" '
        f'id="defs_{model.process_id}" targetNamespace="{DSML_NS}">'
    )
    out.append(f'  <bpmn:process id="{_att(model.process_id)}" isExecutable="true">')
    _emit_level(out, model.elements, model.flows, model.domain, indent=1)
    out.append("  </bpmn:process>")
    out.append("</bpmn:definitions>")
    return "\n".join(out) + "\n"


def _emit_level(out: List[str], elements: List[BpmnElement],
                flows: List[SequenceFlow], domain: Optional[str], indent: int) -> None:
    pad = "  " * (indent + 1)
    for e in elements:
        attrs = [f'id="{_att(e.id)}"']
        if e.name:
            attrs.append(f'name="{_att(e.name)}"')
        for key in sorted(e.attrs):
            attrs.append(f'{key}="{_att(e.attrs[key])}"')
        head = f"{pad}<bpmn:{e.kind} " + " ".join(attrs)
        has_ext = e.concept_uid is not None
        has_children = has_ext or e.inner_elements or e.inner_flows
        if not has_children:
            out.append(head + "/>")
            continue
        out.append(head + ">")
        if has_ext:
            out.append(f"{pad}  <bpmn:extensionElements>")
            out.append(
                f'{pad}    <dsml:conceptRef uid="{_att(e.concept_uid)}" '
                f'concept="{_att(e.concept_name or "")}" domain="{_att(domain or "")}"/>'
            )
            out.append(f"{pad}  </bpmn:extensionElements>")
        if e.inner_elements or e.inner_flows:
            _emit_level(out, e.inner_elements, e.inner_flows, domain, indent + 1)
        out.append(f"{pad}</bpmn:{e.kind}>")
    for f in flows:
        head = (f'{pad}<bpmn:sequenceFlow id="{_att(f.id)}" '
                f'sourceRef="{_att(f.source)}" targetRef="{_att(f.target)}"')
        if f.condition is None:
            out.append(head + "/>")
        else:
            out.append(head + ">")
            out.append(f"{pad}  <bpmn:conditionExpression>{_txt(f.condition)}"
                       f"</bpmn:conditionExpression>")
            out.append(f"{pad}</bpmn:sequenceFlow>")


def _att(value: str) -> str:
    return (value.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
            .replace('"', "&quot;"))


def _txt(value: str) -> str:
    return value.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


# ---------------------------------------------------------------------------
# parsing


def parse_bpmn(xml_text: str) -> BpmnModel:
    """Parse BPMN XML, keeping enrichment elements without concept refs.

    Unknown flow-element kinds are preserved opaquely (tag and attributes)
    so an edited file survives a parse/serialize round trip.
    """
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        raise ParseError(f"malformed XML: {exc}") from None
    if _local(root.tag) != "definitions":
        raise ParseError(f"expected definitions root, found {_local(root.tag)!r}")
    process = None
    for child in root:
        if _local(child.tag) == "process":
            process = child
            break
    if process is None:
        raise ParseError("no process element found")
    model = BpmnModel(process_id=process.get("id", "process"))
    elements, flows, domain = _parse_level(process)
    model.elements, model.flows, model.domain = elements, flows, domain

    ids = []
    for e in walk_elements(model):
        ids.append(e.id)
    all_flows = list(model.flows)
    for e in walk_elements(model):
        all_flows.extend(e.inner_flows)
    for f in all_flows:
        ids.append(f.id)
    dupes = {i for i in ids if ids.count(i) > 1}
    if dupes:
        raise ParseError(f"duplicate ids: {', '.join(sorted(dupes))}")

    id_set = set(ids)
    for f in all_flows:
        for ref in (f.source, f.target):
            if ref not in id_set:
                raise ParseError(f"sequence flow {f.id!r} references unknown element {ref!r}")
    return model


def _parse_level(node) -> Tuple[List[BpmnElement], List[SequenceFlow], Optional[str]]:
    elements: List[BpmnElement] = []
    flows: List[SequenceFlow] = []
    domain: Optional[str] = None
    for child in node:
        tag = _local(child.tag)
        if tag == "sequenceFlow":
            condition = None
            for sub in child:
                if _local(sub.tag) == "conditionExpression":
                    condition = sub.text or ""
            flows.append(SequenceFlow(
                child.get("id", ""), child.get("sourceRef", ""),
                child.get("targetRef", ""), condition))
            continue
        if tag in ("extensionElements", "conditionExpression", "incoming", "outgoing",
                   "documentation"):
            continue
        el = BpmnElement(id=child.get("id", ""), kind=tag, name=child.get("name", ""))
        el.attrs = {k: v for k, v in child.attrib.items()
                    if k not in ("id", "name") and not k.startswith("{")}
        for sub in child:
            if _local(sub.tag) == "extensionElements":
                for ext in sub:
                    if _local(ext.tag) == "conceptRef":
                        el.concept_uid = ext.get("uid")
                        el.concept_name = ext.get("concept")
                        domain = domain or ext.get("domain")
        if tag == "subProcess":
            el.inner_elements, el.inner_flows, inner_domain = _parse_level(child)
            domain = domain or inner_domain
        elements.append(el)
    return elements, flows, domain


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1] if "}" in tag else tag


# ---------------------------------------------------------------------------
# validation


def validate_bpmn(model: BpmnModel) -> List[Diagnostic]:
    out: List[Diagnostic] = []
    _validate_level(model.elements, model.flows, model.process_id, out)
    return out


def _validate_level(elements: List[BpmnElement], flows: List[SequenceFlow],
                    where: str, out: List[Diagnostic]) -> None:
    starts = [e for e in elements if e.kind == "startEvent"]
    if len(starts) != 1:
        out.append(diag.error(f"{where}: expected exactly one startEvent, found {len(starts)}"))
    outgoing: Dict[str, List[SequenceFlow]] = {}
    for f in flows:
        outgoing.setdefault(f.source, []).append(f)
    for e in elements:
        if e.kind.endswith("Gateway") and not outgoing.get(e.id):
            out.append(diag.error(f"{where}: gateway {e.id!r} has no outgoing flow"))
    if len(starts) == 1:
        seen = set()
        stack = [starts[0].id]
        while stack:
            cur = stack.pop()
            if cur in seen:
                continue
            seen.add(cur)
            for f in outgoing.get(cur, ()):
                stack.append(f.target)
        for e in elements:
            if e.id not in seen:
                out.append(diag.warning(f"{where}: element {e.id!r} is unreachable"))
    for e in elements:
        if e.kind == "subProcess":
            _validate_level(e.inner_elements, e.inner_flows, f"{where}/{e.id}", out)


def _ncname(name: str) -> str:
    safe = "".join(ch if ch.isalnum() or ch in "._-" else "_" for ch in name)
    if not safe or safe[0].isdigit() or safe[0] in ".-":
        safe = "_" + safe
    return safe
