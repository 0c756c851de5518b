"""Concept-level monitoring: probes, composite metrics, SLA alerts, reports.

One probe exists per mapped concept; it collects the BPMS layer (activity
completions of every activity mapped to the concept, across all processes)
and the SOA layer (service invocations made by those activities). Events
whose element has no concept mapping land in a per-process technical
bucket, so enrichment-time additions are measured but never surface under
a concept. Ingestion works the same whether a log is replayed in one batch
or fed line by line.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

from .diagnostics import DsprocError
from .domain import Sla
from .engine import EventRecord, parse_event_line, parse_header
from .mappings import ActivityMappings, MappingStore

_SEVERITY_RANK = {"critical": 0, "warning": 1, "info": 2}


@dataclass(frozen=True)
class Sample:
    duration_ms: float
    status: str
    instance: int
    ts_ms: float
    uid: Optional[str]
    element_id: str
    service: Optional[str] = None


@dataclass
class ConceptProbe:
    concept: str
    bpms: List[Sample] = field(default_factory=list)
    soa: List[Sample] = field(default_factory=list)
    slas: Dict[str, Sla] = field(default_factory=dict)


@dataclass
class InstanceRecord:
    start_ts: float
    end_ts: Optional[float] = None
    status: Optional[str] = None

    @property
    def duration_ms(self) -> Optional[float]:
        if self.end_ts is None:
            return None
        return self.end_ts - self.start_ts


@dataclass
class ProcessProbe:
    process: str
    instances: Dict[int, InstanceRecord] = field(default_factory=dict)
    technical: List[Sample] = field(default_factory=list)


@dataclass
class ProbeSet:
    concepts: Dict[str, ConceptProbe] = field(default_factory=dict)
    processes: Dict[str, ProcessProbe] = field(default_factory=dict)


class ProbeBuilder:
    """Incremental log consumer; batch ingest is just a loop over this."""

    def __init__(self, am: ActivityMappings, cm: Dict[str, List[str]],
                 probes: Optional[ProbeSet] = None):
        self.am = am
        self.cm = cm
        self.probes = probes or ProbeSet()
        self._known_processes = set(am.processes())
        self._line_no = 0
        self._header_seen = False
        for _uid, concept in am.items():
            self.probes.concepts.setdefault(concept, ConceptProbe(concept))

    def feed(self, line: str) -> None:
        self._line_no += 1
        line = line.strip()
        if not line:
            return
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DsprocError(f"line {self._line_no}: malformed record: {exc}") from None
        if "log_version" in doc:
            parse_header(line)
            self._header_seen = True
            return
        if not self._header_seen:
            raise DsprocError(f"line {self._line_no}: log header missing")
        try:
            record = parse_event_line(line)
        except (KeyError, TypeError) as exc:
            raise DsprocError(f"line {self._line_no}: malformed record ({exc})") from None
        self._apply(record)

    def _apply(self, r: EventRecord) -> None:
        if self._known_processes and r.process not in self._known_processes:
            raise DsprocError(f"line {self._line_no}: unknown process {r.process!r}")
        pp = self.probes.processes.setdefault(r.process, ProcessProbe(r.process))
        if r.kind == "processStart":
            pp.instances[r.instance] = InstanceRecord(start_ts=r.ts_ms)
        elif r.kind == "processEnd":
            rec = pp.instances.setdefault(r.instance, InstanceRecord(start_ts=0.0))
            rec.end_ts = r.ts_ms
            rec.status = r.status or "ok"
        elif r.kind == "activityEnd":
            sample = Sample(r.duration_ms or 0.0, r.status or "ok", r.instance,
                            r.ts_ms, r.element_uid, r.element_id)
            concept = self.am.entry(r.element_uid).concept \
                if r.element_uid is not None and r.element_uid in self.am else None
            if concept is None:
                pp.technical.append(sample)
            else:
                self.probes.concepts[concept].bpms.append(sample)
        elif r.kind == "serviceInvoke":
            if r.element_uid is not None and r.element_uid in self.am:
                concept = self.am.entry(r.element_uid).concept
                self.probes.concepts[concept].soa.append(Sample(
                    r.duration_ms or 0.0, r.status or "ok", r.instance, r.ts_ms,
                    r.element_uid, r.element_id, r.service))
        # activityStart / gatewayTaken carry no aggregated measure


def ingest(lines: Iterable[str], am: ActivityMappings, cm: Dict[str, List[str]],
           probes: Optional[ProbeSet] = None) -> ProbeSet:
    """Replay a complete event log (header line included) into a probe set.

    Pass an existing ``probes`` to aggregate several logs, e.g. the same
    concept used by two processes accumulates into one probe.
    """
    builder = ProbeBuilder(am, cm, probes)
    for line in lines:
        builder.feed(line)
    return builder.probes


# ---------------------------------------------------------------------------
# composite metrics


@dataclass
class LayerStats:
    count: int = 0
    faults: int = 0
    total_ms: float = 0.0
    mean_ms: Optional[float] = None
    min_ms: Optional[float] = None
    max_ms: Optional[float] = None
    p95_ms: Optional[float] = None


@dataclass
class CompositeMetric:
    subject: str
    subject_kind: str  # concept | process | technical
    layers: Dict[str, LayerStats]
    count: int
    faults: int
    mean_ms: Optional[float]
    min_ms: Optional[float]
    max_ms: Optional[float]
    p95_ms: Optional[float]
    contribution_pct: Optional[float] = None


def _stats(samples: List[Sample]) -> LayerStats:
    if not samples:
        return LayerStats()
    durations = sorted(s.duration_ms for s in samples)
    n = len(durations)
    total = sum(durations)
    rank = max(1, math.ceil(0.95 * n))  # nearest-rank percentile
    return LayerStats(
        count=n,
        faults=sum(1 for s in samples if s.status == "fault"),
        total_ms=total,
        mean_ms=total / n,
        min_ms=durations[0],
        max_ms=durations[-1],
        p95_ms=durations[rank - 1],
    )


def _instance_stats(pp: ProcessProbe) -> LayerStats:
    finished = [r for r in pp.instances.values() if r.duration_ms is not None]
    if not finished:
        return LayerStats(count=len(pp.instances))
    durations = sorted(r.duration_ms for r in finished)
    n = len(durations)
    total = sum(durations)
    rank = max(1, math.ceil(0.95 * n))
    return LayerStats(
        count=len(pp.instances),
        faults=sum(1 for r in pp.instances.values() if r.status == "fault"),
        total_ms=total,
        mean_ms=total / n,
        min_ms=durations[0],
        max_ms=durations[-1],
        p95_ms=durations[rank - 1],
    )


def total_activity_time(probes: ProbeSet) -> float:
    total = sum(_stats(p.bpms).total_ms for p in probes.concepts.values())
    total += sum(_stats(p.technical).total_ms for p in probes.processes.values())
    return total


def composite_metrics(probes: ProbeSet) -> List[CompositeMetric]:
    out: List[CompositeMetric] = []
    denom = total_activity_time(probes)

    def pct(total: float) -> float:
        return (total / denom * 100.0) if denom > 0 else 0.0

    for concept in sorted(probes.concepts):
        probe = probes.concepts[concept]
        bpms = _stats(probe.bpms)
        soa = _stats(probe.soa)
        out.append(CompositeMetric(
            subject=concept, subject_kind="concept",
            layers={"bpms": bpms, "soa": soa},
            count=bpms.count, faults=bpms.faults, mean_ms=bpms.mean_ms,
            min_ms=bpms.min_ms, max_ms=bpms.max_ms, p95_ms=bpms.p95_ms,
            contribution_pct=pct(bpms.total_ms),
        ))
    for process in sorted(probes.processes):
        pp = probes.processes[process]
        inst = _instance_stats(pp)
        out.append(CompositeMetric(
            subject=process, subject_kind="process",
            layers={"bpms": inst},
            count=inst.count, faults=inst.faults, mean_ms=inst.mean_ms,
            min_ms=inst.min_ms, max_ms=inst.max_ms, p95_ms=inst.p95_ms,
        ))
        tech = _stats(pp.technical)
        out.append(CompositeMetric(
            subject=f"technical:{process}", subject_kind="technical",
            layers={"bpms": tech},
            count=tech.count, faults=tech.faults, mean_ms=tech.mean_ms,
            min_ms=tech.min_ms, max_ms=tech.max_ms, p95_ms=tech.p95_ms,
            contribution_pct=pct(tech.total_ms),
        ))
    return out


# ---------------------------------------------------------------------------
# SLA registration and alerts


def register_sla(probes: ProbeSet, pairs: Iterable[Tuple[str, Sla]]) -> ProbeSet:
    """Attach SLAs to concept probes; re-registration is idempotent."""
    for subject, sla in pairs:
        probe = probes.concepts.get(subject)
        if probe is None:
            raise DsprocError(f"cannot register SLA on unknown concept {subject!r}")
        probe.slas[sla.name] = sla
    return probes


def propagated_to_concepts(propagated: Iterable[Tuple[str, Sla]],
                           am: ActivityMappings) -> List[Tuple[str, Sla]]:
    """Reduce per-activity SLA propagation output to (concept, sla) pairs."""
    seen = {}
    for uid, sla in propagated:
        entry = am.entry(uid)
        if entry is None:
            raise DsprocError(f"propagated SLA names unmapped activity {uid!r}")
        seen[(entry.concept, sla.name)] = (entry.concept, sla)
    return list(seen.values())


@dataclass
class Alert:
    sla: str
    subject: str
    metric: str
    observed: float
    threshold: float
    severity: str
    first_ts: Optional[float]
    last_ts: Optional[float]
    instances: List[int]

    def to_json_line(self) -> str:
        return json.dumps({
            "sla": self.sla, "subject": self.subject, "metric": self.metric,
            "observed": self.observed, "threshold": self.threshold,
            "severity": self.severity, "first_ts": self.first_ts,
            "last_ts": self.last_ts, "instances": self.instances,
        })


def evaluate_alerts(probes: ProbeSet) -> List[Alert]:
    alerts: List[Alert] = []
    for concept in probes.concepts:
        probe = probes.concepts[concept]
        for sla in probe.slas.values():
            alert = _check_sla(probe, sla)
            if alert is not None:
                alerts.append(alert)
    alerts.sort(key=lambda a: (_SEVERITY_RANK.get(a.severity, 3), a.subject, a.sla))
    return alerts


def _check_sla(probe: ConceptProbe, sla: Sla) -> Optional[Alert]:
    samples = probe.bpms
    if not samples:
        return None
    if sla.metric == "max_duration":
        threshold = sla.threshold_ms()
        violating = [s for s in samples if s.duration_ms > threshold]
        if not violating:
            return None
        return Alert(sla.name, probe.concept, sla.metric,
                     max(s.duration_ms for s in violating), threshold, sla.severity,
                     min(s.ts_ms for s in violating), max(s.ts_ms for s in violating),
                     sorted({s.instance for s in violating}))
    if sla.metric == "max_mean_duration":
        threshold = sla.threshold_ms()
        mean = sum(s.duration_ms for s in samples) / len(samples)
        if mean <= threshold:
            return None
        return Alert(sla.name, probe.concept, sla.metric, mean, threshold,
                     sla.severity, min(s.ts_ms for s in samples),
                     max(s.ts_ms for s in samples), [])
    if sla.metric == "max_fault_rate":
        faulted = [s for s in samples if s.status == "fault"]
        rate = len(faulted) / len(samples)
        if rate <= sla.threshold:
            return None
        return Alert(sla.name, probe.concept, sla.metric, rate, sla.threshold,
                     sla.severity,
                     min((s.ts_ms for s in faulted), default=None),
                     max((s.ts_ms for s in faulted), default=None),
                     sorted({s.instance for s in faulted}))
    raise DsprocError(f"unknown SLA metric {sla.metric!r}")


# ---------------------------------------------------------------------------
# reporting


def build_report(probes: ProbeSet, store: MappingStore) -> dict:
    """Monitoring report keyed by the modelling-level node paths, not BPMN ids."""
    path_of = {uid: path for path, uid in store.uids.items()}
    denom = total_activity_time(probes)

    def pct(total: float) -> float:
        return (total / denom * 100.0) if denom > 0 else 0.0

    concepts: dict = {}
    uids_by_concept: Dict[str, List[str]] = {}
    for uid, concept in store.am.items():
        uids_by_concept.setdefault(concept, []).append(uid)

    for concept in sorted(probes.concepts):
        probe = probes.concepts[concept]
        bpms = _stats(probe.bpms)
        entry = {
            "count": bpms.count,
            "faults": bpms.faults,
            "total_ms": bpms.total_ms,
            "contribution_pct": pct(bpms.total_ms),
        }
        for key in ("mean_ms", "min_ms", "max_ms", "p95_ms"):
            value = getattr(bpms, key)
            if value is not None:
                entry[key] = value
        nodes = {}
        for uid in sorted(uids_by_concept.get(concept, [])):
            node_samples = [s for s in probe.bpms if s.uid == uid]
            node_stats = _stats(node_samples)
            node_entry = {"count": node_stats.count, "total_ms": node_stats.total_ms}
            if node_stats.mean_ms is not None:
                node_entry["mean_ms"] = node_stats.mean_ms
            nodes[path_of.get(uid, uid)] = node_entry
        entry["nodes"] = nodes
        services: dict = {}
        for svc in store.cm.get(concept, []):
            svc_samples = [s for s in probe.soa if s.service == svc]
            svc_stats = _stats(svc_samples)
            svc_entry = {"count": svc_stats.count, "total_ms": svc_stats.total_ms}
            if svc_stats.mean_ms is not None:
                svc_entry["mean_ms"] = svc_stats.mean_ms
            services[svc] = svc_entry
        entry["services"] = services
        concepts[concept] = entry

    processes: dict = {}
    for process in sorted(probes.processes):
        pp = probes.processes[process]
        inst = _instance_stats(pp)
        tech = _stats(pp.technical)
        proc_entry = {
            "instances": inst.count,
            "faults": inst.faults,
            "technical": {
                "count": tech.count,
                "total_ms": tech.total_ms,
                "contribution_pct": pct(tech.total_ms),
            },
        }
        if inst.mean_ms is not None:
            proc_entry["mean_ms"] = inst.mean_ms
            proc_entry["min_ms"] = inst.min_ms
            proc_entry["max_ms"] = inst.max_ms
            proc_entry["p95_ms"] = inst.p95_ms
        processes[process] = proc_entry

    return {"domain": store.domain, "concepts": concepts, "processes": processes}


def render_report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def render_report_text(report: dict) -> str:
    lines = [f"domain: {report['domain']}", ""]
    header = f"{'concept':<24} {'count':>7} {'faults':>7} {'mean_ms':>12} {'contrib%':>9}"
    lines.append(header)
    lines.append("-" * len(header))
    for concept, entry in report["concepts"].items():
        mean = f"{entry['mean_ms']:.1f}" if "mean_ms" in entry else "-"
        lines.append(f"{concept:<24} {entry['count']:>7} {entry['faults']:>7} "
                     f"{mean:>12} {entry['contribution_pct']:>9.2f}")
    lines.append("")
    for process, entry in report["processes"].items():
        mean = f"{entry['mean_ms']:.1f}" if "mean_ms" in entry else "-"
        tech = entry["technical"]
        lines.append(f"process {process}: instances={entry['instances']} "
                     f"faults={entry['faults']} mean_ms={mean} "
                     f"technical_contrib%={tech['contribution_pct']:.2f}")
    return "\n".join(lines) + "\n"
