"""Two-step service binding: concept -> abstract services -> concrete endpoints.

Abstract services come from the domain; a binding table maps each one to a
concrete endpoint (a URI plus an optional duration profile used by the
simulator). Binding a process produces a deployment manifest with one row
per mapped activity, carrying the full uid -> concept -> services ->
endpoints chain.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from .diagnostics import DsprocError
from .domain import Domain
from .mappings import ActivityMappings


class BindingError(DsprocError):
    def __init__(self, message: str, missing: Optional[List[str]] = None):
        super().__init__(message)
        self.missing = missing or []


@dataclass(frozen=True)
class Binding:
    endpoint: str
    profile: Optional[str] = None


BindingTable = Dict[str, Binding]


def bindings_from_json(text: str) -> BindingTable:
    doc = json.loads(text)
    table: BindingTable = {}
    for name, entry in doc.get("bindings", {}).items():
        table[name] = Binding(entry["endpoint"], entry.get("profile"))
    return table


def load_bindings(path) -> BindingTable:
    with open(path, "r", encoding="utf-8") as fh:
        return bindings_from_json(fh.read())


@dataclass(frozen=True)
class EndpointRef:
    service: str
    endpoint: str
    profile: Optional[str] = None


@dataclass
class ManifestRow:
    uid: str
    element: str
    concept: str
    services: List[str]
    endpoints: List[EndpointRef]


@dataclass
class DeploymentManifest:
    process: str
    rows: List[ManifestRow] = field(default_factory=list)

    def row(self, uid: str) -> Optional[ManifestRow]:
        for r in self.rows:
            if r.uid == uid:
                return r
        return None


def bind_services(d: Domain, table: BindingTable, am: ActivityMappings,
                  process: str, known_processes: Optional[List[str]] = None) -> DeploymentManifest:
    """Resolve every mapped activity of ``process`` to concrete endpoints.

    ``known_processes`` (when given) distinguishes a process with no mapped
    activities from a process that does not exist at all.
    """
    if known_processes is not None and process not in known_processes:
        raise BindingError(f"unknown process {process!r}")
    for name in table:
        if d.service(name) is None:
            raise BindingError(f"binding for unknown service {name!r}")

    rows: List[ManifestRow] = []
    missing: List[str] = []
    for uid, entry in sorted(am.as_dict().items()):
        if entry.process != process:
            continue
        concept = d.concept(entry.concept)
        if concept is None:
            raise BindingError(f"mapped concept {entry.concept!r} missing from domain")
        endpoints: List[EndpointRef] = []
        for svc in concept.service_refs:
            binding = table.get(svc)
            if binding is None:
                if svc not in missing:
                    missing.append(svc)
                continue
            endpoints.append(EndpointRef(svc, binding.endpoint, binding.profile))
        rows.append(ManifestRow(uid, entry.element, entry.concept,
                                list(concept.service_refs), endpoints))
    if missing:
        raise BindingError(
            "unbound abstract services: " + ", ".join(sorted(missing)),
            missing=sorted(missing))
    return DeploymentManifest(process, rows)


def emit_manifest(m: DeploymentManifest) -> str:
    doc = {
        "process": m.process,
        "activities": {
            r.uid: {
                "element": r.element,
                "concept": r.concept,
                "services": r.services,
                "endpoints": [
                    {"service": e.service, "endpoint": e.endpoint, "profile": e.profile}
                    for e in r.endpoints
                ],
            }
            for r in m.rows
        },
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def parse_manifest(text: str) -> DeploymentManifest:
    doc = json.loads(text)
    rows = []
    for uid in sorted(doc.get("activities", {})):
        entry = doc["activities"][uid]
        rows.append(ManifestRow(
            uid, entry["element"], entry["concept"], list(entry["services"]),
            [EndpointRef(e["service"], e["endpoint"], e.get("profile"))
             for e in entry["endpoints"]],
        ))
    return DeploymentManifest(doc["process"], rows)


def load_manifest(path) -> DeploymentManifest:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_manifest(fh.read())
