"""Command-line front end: check, gen, sync, bind, run, monitor.

Every command is a pure file transformation: identical inputs produce
identical outputs. Exit codes: 0 success, 1 diagnostics or errors,
2 broken concept mappings (sync).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import List, Optional, Tuple

from . import bpmn, deploy, domain as dom, engine, mappings, monitor, pivot, process as proc
from .diagnostics import DsprocError, ParseError

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_BROKEN = 2


def _read(path: str) -> str:
    return Path(path).read_text(encoding="utf-8")


def _write(path: str, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8", newline="\n")


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return EXIT_ERROR


def _load_domain(path: str) -> dom.Domain:
    try:
        return dom.parse_domain(_read(path))
    except ParseError as exc:
        raise DsprocError(f"{path}:{exc}") from None


def _load_process(path: str, d: dom.Domain) -> proc.ProcessModel:
    try:
        return proc.parse_process(_read(path), d)
    except ParseError as exc:
        raise DsprocError(f"{path}:{exc}") from None


def _load_store(path: str, d: dom.Domain) -> mappings.MappingStore:
    if Path(path).exists():
        store = mappings.load_store(path)
        if store.domain != d.name:
            raise DsprocError(
                f"{path} belongs to domain {store.domain!r}, not {d.name!r}")
        return store
    return mappings.new_store(d.name)


def _generate(proc_path: str, domain_path: str, mappings_path: str
              ) -> Tuple[dom.Domain, proc.ProcessModel, pivot.CommonModel,
                         bpmn.BpmnModel, mappings.MappingStore, mappings.UidRegistry]:
    d = _load_domain(domain_path)
    model = _load_process(proc_path, d)
    store = _load_store(mappings_path, d)
    registry = store.registry()
    common = pivot.to_common(model, d, registry)
    generated = bpmn.generate_bpmn(common, d.name)
    am = mappings.build_am([common])
    store.cm = mappings.build_cm(d)
    store.update_process(model.name, am, registry)
    return d, model, common, generated, store, registry


def cmd_check(args) -> int:
    status = EXIT_OK
    try:
        d = _load_domain(args.domain)
    except (DsprocError, OSError) as exc:
        return _fail(str(exc))
    for diagnostic in dom.validate_domain(d):
        print(f"{args.domain}: {diagnostic}")
        if diagnostic.severity == "error":
            status = EXIT_ERROR
    for path in args.processes:
        try:
            model = _load_process(path, d)
        except (DsprocError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            status = EXIT_ERROR
            continue
        for diagnostic in proc.validate_process(model, d):
            print(f"{path}: {diagnostic}")
            if diagnostic.severity == "error":
                status = EXIT_ERROR
    return status


def cmd_gen(args) -> int:
    try:
        _d, _model, _common, generated, store, _registry = _generate(
            args.process, args.domain, args.mappings)
    except (DsprocError, OSError) as exc:
        return _fail(str(exc))
    _write(args.output, bpmn.serialize_bpmn(generated))
    mappings.save_store(store, args.mappings)
    return EXIT_OK


def cmd_sync(args) -> int:
    try:
        _d, _model, _common, generated, store, _registry = _generate(
            args.process, args.domain, args.mappings)
        edited = bpmn.parse_bpmn(_read(args.edited))
    except (DsprocError, OSError) as exc:
        return _fail(str(exc))
    result = mappings.merge_enriched(generated, edited, store.am)
    _write(args.output, bpmn.serialize_bpmn(result.merged))
    for element_id in result.technical_additions:
        print(f"technical addition: {element_id}")
    if result.broken:
        for uid in result.broken:
            print(f"broken mapping: uid {uid} was removed from the edited model",
                  file=sys.stderr)
        return EXIT_BROKEN
    return EXIT_OK


def cmd_bind(args) -> int:
    try:
        d = _load_domain(args.domain)
        store = mappings.load_store(args.mappings)
        table = deploy.load_bindings(args.bindings)
        known = sorted({path.split("/", 1)[0] for path in store.uids})
        manifest = deploy.bind_services(d, table, store.am, args.process,
                                        known_processes=known)
    except (DsprocError, OSError) as exc:
        return _fail(str(exc))
    _write(args.output, deploy.emit_manifest(manifest))
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        model = bpmn.parse_bpmn(_read(args.bpmn))
        manifest = deploy.load_manifest(args.manifest)
        cfg = engine.SimulationConfig.from_json(_read(args.sim)) if args.sim \
            else engine.SimulationConfig()
        if args.instances is not None:
            cfg.instance_count = args.instances
        if args.seed is not None:
            cfg.seed = args.seed
        cfg.validate()
        records = engine.simulate(model, manifest, cfg)
    except (DsprocError, OSError) as exc:
        return _fail(str(exc))
    _write(args.output, engine.render_log(records, cfg))
    return EXIT_OK


def cmd_monitor(args) -> int:
    try:
        d = _load_domain(args.domain)
        store = mappings.load_store(args.mappings)
        with open(args.events, "r", encoding="utf-8") as fh:
            probes = monitor.ingest(fh, store.am, store.cm)
        propagated = dom.propagate_sla(d, store.am)
        monitor.register_sla(
            probes, monitor.propagated_to_concepts(propagated, store.am))
        alerts = monitor.evaluate_alerts(probes)
        report = monitor.build_report(probes, store)
    except (DsprocError, OSError) as exc:
        return _fail(str(exc))
    if args.report:
        _write(args.report, monitor.render_report_json(report))
    if args.alert_out:
        _write(args.alert_out,
               "".join(a.to_json_line() + "\n" for a in alerts))
    sys.stdout.write(monitor.render_report_text(report))
    for alert in alerts:
        print(f"ALERT [{alert.severity}] {alert.subject}: {alert.metric} "
              f"observed {alert.observed:g} > threshold {alert.threshold:g} "
              f"(sla {alert.sla})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dsproc",
        description="Domain-specific process modelling, generation, simulation "
                    "and monitoring toolchain.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="validate a domain and its process models")
    p.add_argument("domain")
    p.add_argument("processes", nargs="*")
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("gen", help="generate BPMN from a process model")
    p.add_argument("process")
    p.add_argument("--domain", required=True)
    p.add_argument("--mappings", required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("sync", help="reconcile an edited BPMN file with its source")
    p.add_argument("process")
    p.add_argument("--domain", required=True)
    p.add_argument("--mappings", required=True)
    p.add_argument("--edited", required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=cmd_sync)

    p = sub.add_parser("bind", help="bind abstract services to endpoints")
    p.add_argument("--domain", required=True)
    p.add_argument("--bindings", required=True)
    p.add_argument("--mappings", required=True)
    p.add_argument("--process", required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=cmd_bind)

    p = sub.add_parser("run", help="simulate a deployed process")
    p.add_argument("bpmn")
    p.add_argument("--manifest", required=True)
    p.add_argument("--instances", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--sim", default=None)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("monitor", help="aggregate an event log into a report and alerts")
    p.add_argument("events")
    p.add_argument("--mappings", required=True)
    p.add_argument("--domain", required=True)
    p.add_argument("--report", default=None)
    p.add_argument("--alert-out", dest="alert_out", default=None)
    p.set_defaults(fn=cmd_monitor)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
