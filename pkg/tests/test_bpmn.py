import re
import xml.etree.ElementTree as ET

import pytest

from dsproc import bpmn, domain as dom, mappings, pivot
from dsproc import process as proc
from dsproc.diagnostics import ParseError

from conftest import compile_pipeline


def _xml_root(xml):
    return ET.fromstring(xml)


def _local(tag):
    return tag.rsplit("}", 1)[-1]


def test_service_task_per_leaf_concept(order_pipeline):
    leaves = [e for e in bpmn.walk_elements(order_pipeline.generated)
              if e.kind == "serviceTask"]
    # oracle: leaf concept references = concept nodes whose concept has no
    # subprocess body, plus all concept nodes inside one subprocess body
    d, model = order_pipeline.domain, order_pipeline.model
    expected = sum(1 for n in model.body.concept_refs()
                   if d.concept(n.concept).subprocess is None)
    for n in model.body.concept_refs():
        sub = d.concept(n.concept).subprocess
        if sub is not None:
            expected += sum(1 for inner in sub.nodes if inner.kind == "concept")
    assert len(leaves) == expected
    assert all(e.concept_uid for e in leaves)


def test_concept_ref_extension_attributes(order_pipeline):
    root = _xml_root(order_pipeline.xml)
    refs = root.findall(f".//{{{bpmn.DSML_NS}}}conceptRef")
    assert refs, "no conceptRef extensions emitted"
    for ref in refs:
        assert set(ref.attrib) == {"uid", "concept", "domain"}
        assert ref.get("domain") == "OrderHandling"
        assert order_pipeline.domain.concept(ref.get("concept")) is not None


def test_element_id_equals_uid(order_pipeline):
    for e in bpmn.walk_elements(order_pipeline.generated):
        if e.concept_uid is not None:
            assert e.id == e.concept_uid


def test_serialization_is_byte_deterministic(order_domain, order_process):
    a = compile_pipeline(order_domain, order_process)
    b = compile_pipeline(order_domain, order_process, store=a.store)
    assert a.xml == b.xml
    assert bpmn.serialize_bpmn(a.generated) == a.xml
    assert "\r" not in a.xml
    assert a.xml.endswith("\n")


def test_round_trip_preserves_structure(order_pipeline):
    parsed = bpmn.parse_bpmn(order_pipeline.xml)
    gen = {(e.id, e.kind, e.concept_uid)
           for e in bpmn.walk_elements(order_pipeline.generated)}
    back = {(e.id, e.kind, e.concept_uid) for e in bpmn.walk_elements(parsed)}
    assert back == gen
    assert {(f.id, f.source, f.target) for f in parsed.flows} == \
        {(f.id, f.source, f.target) for f in order_pipeline.generated.flows}
    assert parsed.domain == "OrderHandling"


def test_subprocess_container_nests_inner_elements(order_pipeline):
    subs = [e for e in order_pipeline.generated.elements if e.kind == "subProcess"]
    assert len(subs) == 1
    sub = subs[0]
    assert sub.concept_name == "ProcessShippingCost"
    inner_kinds = sorted(e.kind for e in sub.inner_elements)
    assert inner_kinds == ["endEvent", "serviceTask", "serviceTask",
                           "serviceTask", "startEvent"]


def _tiny_domain():
    return dom.parse_domain("""
        domain T {
          service s { operation "op" }
          concept A { label "a" services [s] }
          concept B { label "b" services [s] }
        }
    """)


def _compile(src, d=None):
    d = d or _tiny_domain()
    model = proc.parse_process(src, d)
    common = pivot.to_common(model, d, mappings.UidRegistry())
    return common, bpmn.generate_bpmn(common, d.name)


def test_exceptional_flow_inserts_routing_gateway():
    common, model = _compile("""process P uses T {
      node a: concept A
      node b: concept B
      start -> a
      a -> b
      a -> end exceptional
      b -> end
    }""")
    a_uid = next(uid for uid, c in common.concept_tags.items() if c == "A")
    gw = model.element(f"{a_uid}_exc")
    assert gw is not None and gw.kind == "exclusiveGateway"
    assert gw.concept_uid is None
    # all of a's outgoing traffic is re-routed through the gateway
    from_a = [f for f in model.flows if f.source == a_uid]
    assert [f.target for f in from_a] == [gw.id]
    from_gw = {f.target: f.condition for f in model.flows if f.source == gw.id}
    end_uid = common.elements[-1].uid
    assert from_gw[end_uid] == "exception"
    b_uid = next(uid for uid, c in common.concept_tags.items() if c == "B")
    assert from_gw[b_uid] is None


def test_exceptional_flow_from_gateway_needs_no_insertion():
    common, model = _compile("""process P uses T {
      node a: concept A
      node g: exclusive
      start -> a
      a -> g
      g -> end when "ok"
      g -> end exceptional
    }""")
    assert not any(e.id.endswith("_exc") for e in bpmn.walk_elements(model))
    conds = sorted(f.condition for f in model.flows
                   if model.element(f.source).kind == "exclusiveGateway")
    assert conds == ["exception", "ok"]


def test_duplicate_flow_ids_are_deduplicated():
    _, model = _compile("""process P uses T {
      node a: concept A
      node g: exclusive
      start -> a
      a -> g
      g -> end when "x"
      g -> end when "y"
    }""")
    ids = [f.id for f in model.flows]
    assert len(ids) == len(set(ids))
    assert any(i.endswith("_2") for i in ids)


def test_validate_reports_missing_start():
    model = bpmn.BpmnModel("P", elements=[bpmn.BpmnElement("e1", "endEvent")])
    diags = bpmn.validate_bpmn(model)
    assert any(d.severity == "error" and "startEvent" in d.message for d in diags)


def test_validate_reports_gateway_without_outgoing():
    model = bpmn.BpmnModel("P", elements=[
        bpmn.BpmnElement("s", "startEvent"),
        bpmn.BpmnElement("g", "exclusiveGateway"),
        bpmn.BpmnElement("e", "endEvent"),
    ], flows=[bpmn.SequenceFlow("f1", "s", "g")])
    diags = bpmn.validate_bpmn(model)
    assert any("no outgoing" in d.message and d.severity == "error" for d in diags)


def test_validate_clean_generated_model(order_pipeline):
    assert bpmn.validate_bpmn(order_pipeline.generated) == []


def test_parse_rejects_duplicate_ids():
    xml = f"""<?xml version="1.0"?>
    <definitions xmlns="{bpmn.BPMN_NS}">
      <process id="P">
        <startEvent id="x"/>
        <endEvent id="x"/>
      </process>
    </definitions>"""
    with pytest.raises(ParseError, match="duplicate"):
        bpmn.parse_bpmn(xml)


def test_parse_rejects_dangling_flow_reference():
    xml = f"""<?xml version="1.0"?>
    <definitions xmlns="{bpmn.BPMN_NS}">
      <process id="P">
        <startEvent id="s"/>
        <sequenceFlow id="f" sourceRef="s" targetRef="ghost"/>
      </process>
    </definitions>"""
    with pytest.raises(ParseError, match="ghost"):
        bpmn.parse_bpmn(xml)


def test_technical_enrichment_survives_parse(order_pipeline):
    enriched = order_pipeline.xml.replace(
        "</bpmn:process>",
        '  <bpmn:task id="A9" name="audit hook"/>\n  </bpmn:process>')
    parsed = bpmn.parse_bpmn(enriched)
    added = parsed.element("A9")
    assert added is not None
    assert added.kind == "task"
    assert added.concept_uid is None


def test_name_attributes_carry_concept_labels(order_pipeline):
    root = _xml_root(order_pipeline.xml)
    names = {el.get("id"): el.get("name")
             for el in root.iter() if _local(el.tag) == "serviceTask"}
    d = order_pipeline.domain
    for uid, concept in order_pipeline.am.items():
        assert names[uid] == d.concept(concept).label
