import json
import math
import random

import pytest
from hypothesis import given, strategies as st

from dsproc import deploy, engine

from conftest import compile_sources, fixed_bindings, fixed_config, log_lines

_DOMAIN = """
domain T {
  service sa { operation "do a" }
  service sb { operation "do b" }
  concept A { label "A" services [sa] }
  concept B { label "B" services [sb] }
}
"""

_LINEAR = """process P uses T {
  node a: concept A
  start -> a
  a -> end
}"""

_PARALLEL = """process P uses T {
  node split: parallel
  node a: concept A
  node b: concept B
  node join: parallel
  start -> split
  split -> a
  split -> b
  a -> join
  b -> join
  join -> end
}"""

_CHOICE = """process P uses T {
  node g: exclusive
  node a: concept A
  node b: concept B
  start -> g
  g -> a when "fast"
  g -> b when "slow"
  a -> end
  b -> end
}"""


def _sim(process_text, cfg, bindings=None):
    p = compile_sources(_DOMAIN, process_text)
    table = bindings if bindings is not None else fixed_bindings(p.domain)
    manifest = deploy.bind_services(p.domain, table, p.am, p.model.name)
    return p, manifest, engine.simulate(p.generated, manifest, cfg)


def _split_bindings():
    return {"sa": deploy.Binding("sim://a", "p50"),
            "sb": deploy.Binding("sim://b", "p80")}


def _split_config(instances=1, seed=1, **kwargs):
    cfg = engine.SimulationConfig(
        instance_count=instances, seed=seed,
        profiles={"p50": engine.DurationProfile("fixed", value=50.0),
                  "p80": engine.DurationProfile("fixed", value=80.0)},
        **kwargs)
    cfg.validate()
    return cfg


def test_single_activity_exact_trace():
    _, _, records = _sim(_LINEAR, fixed_config(value=100.0))
    trace = [(r.kind, r.ts_ms) for r in records]
    assert trace == [
        ("processStart", 0.0),
        ("activityStart", 0.0),
        ("serviceInvoke", 100.0),
        ("activityEnd", 100.0),
        ("processEnd", 100.0),
    ]
    end = records[-1]
    assert end.status == "ok" and end.duration_ms == 100.0
    invoke = records[2]
    assert invoke.service == "sa" and invoke.duration_ms == 100.0


def test_same_seed_is_byte_identical():
    cfg = fixed_config(instances=20, seed=7, value=10.0)
    _, _, first = _sim(_PARALLEL, cfg)
    _, _, second = _sim(_PARALLEL, cfg)
    assert engine.render_log(first, cfg) == engine.render_log(second, cfg)


def test_different_seed_changes_the_log():
    mk = lambda seed: engine.SimulationConfig(
        instance_count=5, seed=seed,
        profiles={"p": engine.DurationProfile("uniform", low=1.0, high=9.0)},
        default_profile="p")
    a = engine.render_log(_sim(_LINEAR, mk(1), bindings={
        "sa": deploy.Binding("sim://a"), "sb": deploy.Binding("sim://b")})[2], mk(1))
    b = engine.render_log(_sim(_LINEAR, mk(2), bindings={
        "sa": deploy.Binding("sim://a"), "sb": deploy.Binding("sim://b")})[2], mk(2))
    assert a != b


def test_parallel_join_waits_for_slowest_branch():
    _, _, records = _sim(_PARALLEL, _split_config(), bindings=_split_bindings())
    ends = {r.concept: r.ts_ms for r in records if r.kind == "activityEnd"}
    assert ends == {"A": 50.0, "B": 80.0}
    final = [r for r in records if r.kind == "processEnd"]
    assert len(final) == 1
    # oracle: join fires at max(50, 80)
    assert final[0].ts_ms == max(50.0, 80.0)


def test_seq_increases_and_time_never_goes_backwards():
    cfg = _split_config(instances=30, seed=3)
    _, _, records = _sim(_PARALLEL, cfg, bindings=_split_bindings())
    assert [r.seq for r in records] == list(range(1, len(records) + 1))
    assert all(a.ts_ms <= b.ts_ms for a, b in zip(records, records[1:]))


def test_every_instance_gets_start_and_end():
    cfg = _split_config(instances=25, seed=9)
    _, _, records = _sim(_CHOICE, cfg, bindings=_split_bindings())
    starts = [r.instance for r in records if r.kind == "processStart"]
    ends = [r.instance for r in records if r.kind == "processEnd"]
    assert sorted(starts) == sorted(ends) == list(range(1, 26))


def test_gateway_taken_names_a_real_flow():
    p = compile_sources(_DOMAIN, _CHOICE)
    manifest = deploy.bind_services(p.domain, _split_bindings(), p.am, "P")
    cfg = _split_config(instances=10, seed=4)
    records = engine.simulate(p.generated, manifest, cfg)
    flow_ids = {f.id for f in p.generated.flows}
    taken = [r for r in records if r.kind == "gatewayTaken"]
    assert len(taken) == 10  # one decision per instance
    assert all(r.element_id in flow_ids for r in taken)


def test_no_gateway_event_for_single_outgoing():
    _, _, records = _sim(_LINEAR, fixed_config(value=1.0))
    assert not any(r.kind == "gatewayTaken" for r in records)


def test_branch_probabilities_shift_the_split():
    p = compile_sources(_DOMAIN, _CHOICE)
    manifest = deploy.bind_services(p.domain, _split_bindings(), p.am, "P")
    gw_uid = next(e.uid for e in p.common.elements if e.kind == "exclusive")
    out = {f.target: f.id for f in p.generated.flows if f.source == gw_uid}
    a_uid = next(uid for uid, c in p.am.items() if c == "A")
    b_uid = next(uid for uid, c in p.am.items() if c == "B")
    cfg = _split_config(instances=2000, seed=11, branch_probs={
        gw_uid: {out[a_uid]: 0.9, out[b_uid]: 0.1}})
    records = engine.simulate(p.generated, manifest, cfg)
    share_a = sum(1 for r in records
                  if r.kind == "activityStart" and r.concept == "A") / 2000
    assert abs(share_a - 0.9) < 0.03


def test_fault_ends_instance_with_fault_status():
    p = compile_sources(_DOMAIN, _LINEAR)
    manifest = deploy.bind_services(p.domain, fixed_bindings(p.domain), p.am, "P")
    a_uid = next(uid for uid, c in p.am.items() if c == "A")
    cfg = fixed_config(instances=3, value=10.0, fault_probs={a_uid: 1.0})
    records = engine.simulate(p.generated, manifest, cfg)
    for r in records:
        if r.kind in ("activityEnd", "processEnd"):
            assert r.status == "fault"
    assert sum(1 for r in records if r.kind == "processEnd") == 3


def test_fault_rate_tracks_probability():
    p = compile_sources(_DOMAIN, _LINEAR)
    manifest = deploy.bind_services(p.domain, fixed_bindings(p.domain), p.am, "P")
    a_uid = next(uid for uid, c in p.am.items() if c == "A")
    cfg = fixed_config(instances=3000, seed=5, value=1.0,
                       fault_probs={a_uid: 0.25})
    records = engine.simulate(p.generated, manifest, cfg)
    faults = sum(1 for r in records if r.kind == "processEnd" and r.status == "fault")
    assert abs(faults / 3000 - 0.25) < 0.03


def test_subprocess_resumes_outer_flow():
    domain = """
    domain T {
      service sa { operation "a" }
      service sb { operation "b" }
      concept A { label "A" services [sa] }
      concept Outer {
        label "outer"
        subprocess {
          node x: concept A
          start -> x
          x -> end
        }
      }
      concept B { label "B" services [sb] }
    }
    """
    process = """process P uses T {
      node o: concept Outer
      node b: concept B
      start -> o
      o -> b
      b -> end
    }"""
    p = compile_sources(domain, process)
    manifest = deploy.bind_services(p.domain, fixed_bindings(p.domain), p.am, "P")
    records = engine.simulate(p.generated, manifest, fixed_config(value=30.0))
    by_kind = [(r.kind, r.concept, r.ts_ms) for r in records
               if r.kind in ("activityStart", "activityEnd")]
    # inner activity runs 0-30; outer continuation B runs 30-60
    assert by_kind == [
        ("activityStart", "A", 0.0), ("activityEnd", "A", 30.0),
        ("activityStart", "B", 30.0), ("activityEnd", "B", 60.0),
    ]
    assert records[-1].kind == "processEnd" and records[-1].ts_ms == 60.0


def test_unsatisfied_join_raises_deadlock():
    process = """process P uses T {
      node g: exclusive
      node a: concept A
      node b: concept B
      node join: parallel
      start -> g
      g -> a when "left"
      g -> b when "right"
      a -> join
      b -> join
      join -> end
    }"""
    p = compile_sources(_DOMAIN, process)
    manifest = deploy.bind_services(p.domain, fixed_bindings(p.domain), p.am, "P")
    with pytest.raises(engine.SimulationError, match="deadlock"):
        engine.simulate(p.generated, manifest, fixed_config(value=1.0))


def test_multi_service_activity_invokes_each_endpoint_in_order(order_pipeline):
    manifest = deploy.bind_services(order_pipeline.domain,
                                    fixed_bindings(order_pipeline.domain),
                                    order_pipeline.am, "HandleOrder")
    uid = next(uid for uid, c in order_pipeline.am.items() if c == "HandlePayment")
    branch = _handle_order_branch_probs(order_pipeline)
    cfg = fixed_config(instances=1, value=10.0, branch_probs=branch)
    records = engine.simulate(order_pipeline.generated, manifest, cfg)
    invokes = [r for r in records if r.kind == "serviceInvoke" and r.element_uid == uid]
    assert [r.service for r in invokes] == ["s1", "s2"]
    end = next(r for r in records if r.kind == "activityEnd" and r.element_uid == uid)
    # activity duration is the sum of its per-endpoint samples
    assert end.duration_ms == sum(r.duration_ms for r in invokes)


def _handle_order_branch_probs(p):
    """Deterministic branch choices for the order fixture's gateways."""
    probs = {}
    for e in p.generated.elements:
        if e.kind != "exclusiveGateway":
            continue
        out = [f for f in p.generated.flows if f.source == e.id]
        if len(out) > 1:
            probs[e.id] = {f.id: (1.0 if i == 0 else 0.0)
                           for i, f in enumerate(out)}
    return probs


def test_log_render_parse_round_trip():
    cfg = fixed_config(instances=2, value=5.0)
    _, _, records = _sim(_LINEAR, cfg)
    lines = log_lines(records, cfg)
    header = engine.parse_header(lines[0])
    assert header == {"log_version": 1, "seed": 1, "rng": "python-mt19937"}
    parsed = [engine.parse_event_line(l) for l in lines[1:]]
    assert parsed == records
    # field order in each line is stable
    for line in lines[1:]:
        keys = list(json.loads(line))
        assert keys == sorted(keys, key=engine._FIELD_ORDER.index)


def test_unsupported_log_version_rejected():
    with pytest.raises(Exception, match="log version"):
        engine.parse_header('{"log_version": 99, "seed": 0, "rng": "x"}')


def test_normal_profile_matches_box_muller_oracle():
    profile = engine.DurationProfile("normal", mean=200.0, stddev=40.0)
    sample = profile.sample(random.Random(42))
    # independent oracle: same draws, Box-Muller by hand
    r = random.Random(42)
    u1, u2 = r.random(), r.random()
    z = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
    assert sample == pytest.approx(max(0.0, 200.0 + 40.0 * z))


@given(st.integers(0, 2**32), st.floats(0, 100), st.floats(0, 100))
def test_uniform_sample_stays_in_range(seed, low, span):
    profile = engine.DurationProfile("uniform", low=low, high=low + span)
    d = profile.sample(random.Random(seed))
    assert low <= d <= low + span


def test_config_validation_rejects_bad_inputs():
    with pytest.raises(engine.SimulationError, match="sum"):
        engine.SimulationConfig(branch_probs={"g": {"f1": 0.5, "f2": 0.6}}).validate()
    with pytest.raises(engine.SimulationError, match="instance_count"):
        engine.SimulationConfig(instance_count=0).validate()
    with pytest.raises(engine.SimulationError, match="profile"):
        engine.SimulationConfig(default_profile="nope").validate()
    with pytest.raises(engine.SimulationError, match="kind"):
        engine.DurationProfile("weird")


def test_branch_probs_must_cover_gateway_flows():
    p = compile_sources(_DOMAIN, _CHOICE)
    manifest = deploy.bind_services(p.domain, _split_bindings(), p.am, "P")
    gw_uid = next(e.uid for e in p.common.elements if e.kind == "exclusive")
    out = [f.id for f in p.generated.flows if f.source == gw_uid]
    cfg = _split_config(branch_probs={gw_uid: {out[0]: 1.0}})
    with pytest.raises(engine.SimulationError, match="miss"):
        engine.simulate(p.generated, manifest, cfg)


def test_config_json_round_trip(tmp_path):
    text = json.dumps({
        "instance_count": 4, "seed": 9,
        "profiles": {"p": {"kind": "uniform", "low": 1, "high": 2}},
        "default_profile": "p",
        "fault_probs": {"u1": 0.5},
    })
    cfg = engine.SimulationConfig.from_json(text)
    assert cfg.instance_count == 4
    assert cfg.profiles["p"].kind == "uniform"
    assert cfg.fault_probs == {"u1": 0.5}
