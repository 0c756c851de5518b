"""Concept/activity mappings, the persistent UID registry and sync merge.

The registry keys every generated element by its path
``<process>/<node id>[/<inner node id>...]`` and hands out stable opaque
uids, so regenerating an unchanged process allocates nothing new and edits
to a generated BPMN file can be reconciled against the original mapping.
The whole mapping state round-trips through ``mappings.json``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional, Tuple

from .diagnostics import DsprocError


class MappingError(DsprocError):
    pass


class UidRegistry:
    """Injective path -> uid map; persisted entries are never reassigned."""

    def __init__(self, entries: Optional[Dict[str, str]] = None):
        self._entries: Dict[str, str] = dict(entries or {})
        self._taken = set(self._entries.values())
        if len(self._taken) != len(self._entries):
            raise MappingError("uid registry is not injective")
        self._next = 1 + max(
            (int(u[1:]) for u in self._taken if u.startswith("u") and u[1:].isdigit()),
            default=0,
        )
        self.new_allocations = 0

    def uid_for(self, path: str) -> str:
        uid = self._entries.get(path)
        if uid is not None:
            return uid
        while f"u{self._next}" in self._taken:
            self._next += 1
        uid = f"u{self._next}"
        self._next += 1
        self._entries[path] = uid
        self._taken.add(uid)
        self.new_allocations += 1
        return uid

    @property
    def entries(self) -> Dict[str, str]:
        return dict(self._entries)

    def path_of(self, uid: str) -> Optional[str]:
        for path, u in self._entries.items():
            if u == uid:
                return path
        return None


@dataclass(frozen=True)
class AmEntry:
    concept: str
    process: str
    element: str


class ActivityMappings:
    """The union of per-process activity -> concept maps, keyed by uid."""

    def __init__(self, entries: Optional[Dict[str, AmEntry]] = None):
        self._entries: Dict[str, AmEntry] = dict(entries or {})

    def add(self, uid: str, entry: AmEntry) -> None:
        existing = self._entries.get(uid)
        if existing is not None and existing != entry:
            raise MappingError(f"uid {uid!r} already mapped to concept "
                               f"{existing.concept!r} (registry corruption?)")
        self._entries[uid] = entry

    def items(self) -> Iterator[Tuple[str, str]]:
        return iter((uid, e.concept) for uid, e in self._entries.items())

    def entry(self, uid: str) -> Optional[AmEntry]:
        return self._entries.get(uid)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, uid: str) -> bool:
        return uid in self._entries

    def uids(self) -> List[str]:
        return list(self._entries)

    def processes(self) -> List[str]:
        seen: Dict[str, None] = {}
        for e in self._entries.values():
            seen.setdefault(e.process, None)
        return list(seen)

    def for_process(self, process: str) -> "ActivityMappings":
        return ActivityMappings({u: e for u, e in self._entries.items()
                                 if e.process == process})

    def as_dict(self) -> Dict[str, AmEntry]:
        return dict(self._entries)


def concept_for_activity(am: ActivityMappings, uid: str) -> Optional[str]:
    entry = am.entry(uid)
    return entry.concept if entry is not None else None


def build_cm(d) -> Dict[str, List[str]]:
    """Concept mappings: each concept with services, mapped to its service list."""
    return {c.name: list(c.service_refs) for c in d.concepts if c.service_refs}


def build_am(models: Iterable, include_subprocess: bool = False) -> ActivityMappings:
    """Union the per-process activity maps of pivot models produced by ``to_common``.

    Subprocess container elements are tagged with their concept too, but by
    default only leaf activities enter the map (monitoring needs leaf
    timings); pass ``include_subprocess=True`` to also map the containers.
    """
    am = ActivityMappings()
    for model in models:
        for element, owner in _walk_tagged(model):
            concept = owner.concept_tags.get(element.uid)
            if concept is None:
                continue
            if element.kind == "subprocess" and not include_subprocess:
                continue
            if element.uid in am:
                raise MappingError(f"uid {element.uid!r} appears in more than one model")
            am.add(element.uid, AmEntry(concept, model.name, element.uid))
    return am


def _walk_tagged(model) -> Iterator:
    """Yield (element, owning model) pairs; tags live on the owning level."""
    for element in model.elements:
        yield element, model
        if element.kind == "subprocess" and element.inner is not None:
            yield from _walk_tagged(element.inner)


@dataclass
class MergeResult:
    merged: object  # BpmnModel
    technical_additions: List[str]
    broken: List[str]


def merge_enriched(generated, edited, am: ActivityMappings) -> MergeResult:
    """Reconcile an externally edited BPMN file with its generated original.

    The merged model keeps every edited element as-is (nothing is restored
    silently). Elements present only in the edited file and carrying no
    concept reference are reported as technical additions; mapped uids that
    the edit removed are reported as broken.
    """
    from . import bpmn  # local import to avoid a module cycle

    gen_ids = {e.id for e in bpmn.walk_elements(generated)}
    gen_uids = [e.concept_uid for e in bpmn.walk_elements(generated) if e.concept_uid]
    edited_uids = {e.concept_uid for e in bpmn.walk_elements(edited) if e.concept_uid}

    additions = [e.id for e in bpmn.walk_elements(edited)
                 if e.id not in gen_ids and e.concept_uid is None]
    broken = [uid for uid in gen_uids if uid in am and uid not in edited_uids]
    return MergeResult(edited, additions, broken)


def new_store(domain_name: str) -> "MappingStore":
    return MappingStore(domain=domain_name)


@dataclass
class MappingStore:
    """Everything ``mappings.json`` holds: CM, AM and the uid registry."""

    domain: str
    cm: Dict[str, List[str]] = field(default_factory=dict)
    am: ActivityMappings = field(default_factory=ActivityMappings)
    uids: Dict[str, str] = field(default_factory=dict)

    def registry(self) -> UidRegistry:
        return UidRegistry(self.uids)

    def node_path(self, uid: str) -> Optional[str]:
        for path, u in self.uids.items():
            if u == uid:
                return path
        return None

    def update_process(self, process: str, am: ActivityMappings,
                       registry: UidRegistry) -> None:
        """Replace this process's AM entries and absorb new uid allocations."""
        kept = {u: e for u, e in self.am.as_dict().items() if e.process != process}
        for uid, entry in am.as_dict().items():
            if entry.process == process:
                kept[uid] = entry
        self.am = ActivityMappings(kept)
        self.uids = registry.entries

    def to_json(self) -> str:
        doc = {
            "domain": self.domain,
            "cm": {k: self.cm[k] for k in sorted(self.cm)},
            "am": {
                uid: {"concept": e.concept, "process": e.process, "element": e.element}
                for uid, e in sorted(self.am.as_dict().items())
            },
            "uids": {k: self.uids[k] for k in sorted(self.uids)},
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def store_from_json(text: str) -> MappingStore:
    doc = json.loads(text)
    am = ActivityMappings({
        uid: AmEntry(e["concept"], e["process"], e["element"])
        for uid, e in doc.get("am", {}).items()
    })
    return MappingStore(
        domain=doc["domain"],
        cm={k: list(v) for k, v in doc.get("cm", {}).items()},
        am=am,
        uids=dict(doc.get("uids", {})),
    )


def load_store(path) -> MappingStore:
    with open(path, "r", encoding="utf-8") as fh:
        return store_from_json(fh.read())


def save_store(store: MappingStore, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(store.to_json())
