"""Batch front door: build runs, write them to disk, reload and check
them, and export derived views.

Bundle directory layout (all plain text; .jsonl files hold one JSON
object per line; rationals are lowest-terms "numerator/denominator"
strings):

    config.json        run parameters, embedded verbatim
    levels.jsonl       per network per level: default delay + exceptions
    edges.jsonl        drawn edges, grouped by network in draw order
    aggregates.jsonl   per network per level: total mass, inflow, kept share
    provenance.jsonl   one record per step: case, w, edges, discards, tables
    report.json        run summary (counts and final kept shares)

Exit codes are a stable contract: 0 success, 1 check failure, 2 bad
config or unreadable input, 3 construction invariant violation. Files
that parse but describe an impossible construction (a malformed delay,
an edge the conservation ledger rejects) surface as code 3; grammar
problems surface as code 2.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from fractions import Fraction
from pathlib import Path
from typing import Optional

from treeflow.bitseq import BitString
from treeflow.constructions import (
    PRESETS,
    ConfigError,
    ConstructionBundle,
    RunConfig,
    build,
    ml_test,
)
from treeflow.cubes import Cube
from treeflow.dense import compare_runs, dense_build
from treeflow.network import (
    ConstructionError,
    DelayTable,
    EdgeClass,
    ElementaryNetwork,
    ExtraEdge,
    LevelAggregates,
    rat_parse,
    rat_str,
)
from treeflow.scheduler import PairedTaskStream, ScheduleState, TaskStream
from treeflow.templates import DiscardRecord
from treeflow.verify import CHECKS, ORACLE_DEPTH_CAP, dense_oracle, run_checks


class BundleError(Exception):
    """Unreadable or structurally incomplete bundle files."""


def _canon(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _pretty(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _write_text(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def _write_jsonl(path: Path, rows: list) -> None:
    _write_text(path, "".join(_canon(r) + "\n" for r in rows))


def _load_json(path: Path):
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise BundleError(f"cannot read {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise BundleError(f"{path} is not valid JSON: {exc}")


def _load_jsonl(path: Path) -> list:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise BundleError(f"cannot read {path}: {exc}")
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise BundleError(f"{path}:{lineno}: {exc}")
    return rows


# --- writing -------------------------------------------------------------


def _bundle_report(bundle: ConstructionBundle) -> dict:
    return {
        "preset": bundle.config.preset,
        "depth": bundle.depth,
        "networks": len(bundle.networks),
        "edge_counts": {
            str(net.network_id): len(net.edges) for net in bundle.networks
        },
        "discards": len(bundle.discards),
        "final_kept_share": {
            str(net.network_id): rat_str(net.aggregates[-1].s_n)
            for net in bundle.networks
        },
    }


def write_bundle(bundle: ConstructionBundle, outdir: Path) -> None:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_text(outdir / "config.json", _pretty(bundle.config.to_payload()))
    levels = []
    for n in range(bundle.depth + 1):
        for net in bundle.networks:
            levels.append({"network": net.network_id, **net.tables[n].to_record()})
    _write_jsonl(outdir / "levels.jsonl", levels)
    _write_jsonl(
        outdir / "edges.jsonl",
        [e.to_record() for net in bundle.networks for e in net.edges],
    )
    aggregates = []
    for net in bundle.networks:
        for n, agg in enumerate(net.aggregates):
            aggregates.append(
                {"network": net.network_id, "level": n, **agg.to_record()}
            )
    _write_jsonl(outdir / "aggregates.jsonl", aggregates)
    _write_jsonl(outdir / "provenance.jsonl", bundle.provenance)
    _write_text(outdir / "report.json", _pretty(_bundle_report(bundle)))


# --- reading -------------------------------------------------------------


def _table_from_record(rec: dict) -> DelayTable:
    table = DelayTable(rec["level"], rat_parse(rec["default"]))
    for s, v in rec["vertex"]:
        table.set_vertex(BitString.from_str(s), rat_parse(v))
    for pat, v in rec["suffix"]:
        table.add_suffix(Cube.from_pattern(pat), rat_parse(v))
    for s, v in rec["subtree"]:
        table.add_subtree(BitString.from_str(s), rat_parse(v))
    return table


def _edge_from_record(rec: dict) -> ExtraEdge:
    return ExtraEdge(
        source=BitString.from_str(rec["from"]),
        target=BitString.from_str(rec["to"]),
        q=rat_parse(rec["q"]),
        task=rec["task"],
        subtask=rec["subtask"],
        network_id=rec["network"],
        step_drawn=rec["step"],
    )


def read_bundle(path: Path) -> ConstructionBundle:
    """Rebuild a run from its files.

    Tables and edges are recommitted level by level, which re-runs the
    conservation ledger; stored aggregates are kept as the independent
    record the checks compare against."""
    path = Path(path)
    if not path.is_dir():
        raise BundleError(f"{path} is not a bundle directory")
    payload = _load_json(path / "config.json")
    if not isinstance(payload, dict):
        raise BundleError(f"{path / 'config.json'} must hold a JSON object")
    try:
        config = RunConfig.from_payload(payload)
        config.validate()
    except (ConfigError, TypeError) as exc:
        raise BundleError(f"bad config: {exc}")
    level_rows = _load_jsonl(path / "levels.jsonl")
    edge_rows = _load_jsonl(path / "edges.jsonl")
    agg_rows = _load_jsonl(path / "aggregates.jsonl")
    prov_rows = _load_jsonl(path / "provenance.jsonl")

    try:
        tables: dict[tuple[int, int], DelayTable] = {}
        for rec in level_rows:
            key = (rec["network"], rec["level"])
            if key in tables:
                raise BundleError(f"duplicate level record {key}")
            tables[key] = _table_from_record(rec)
        edges_by_net: dict[int, list[ExtraEdge]] = {}
        for rec in edge_rows:
            e = _edge_from_record(rec)
            edges_by_net.setdefault(e.network_id, []).append(e)
        agg_by_net: dict[int, dict[int, LevelAggregates]] = {}
        for rec in agg_rows:
            agg = LevelAggregates(
                rat_parse(rec["total_R"]), rat_parse(rec["extra_inflow"])
            )
            if rat_parse(rec["s_n"]) != agg.s_n:
                raise BundleError(
                    f"aggregate record for network {rec['network']} level "
                    f"{rec['level']} does not add up"
                )
            agg_by_net.setdefault(rec["network"], {})[rec["level"]] = agg
    except (KeyError, ValueError, TypeError, IndexError) as exc:
        raise BundleError(f"malformed bundle record: {exc!r}")

    known = set(range(1, config.networks + 1))
    stray = set(edges_by_net) - known
    if stray:
        raise BundleError(f"edges reference unknown networks {sorted(stray)}")

    nets = []
    for net_id in sorted(known):
        net = ElementaryNetwork(net_id)
        base = tables.get((net_id, 0))
        if base is None:
            raise BundleError(f"missing level-0 record for network {net_id}")
        net.tables[0] = base
        classes_at: dict[int, list[EdgeClass]] = {}
        for e in edges_by_net.get(net_id, []):
            cls = EdgeClass(
                source_cube=Cube.vertex(e.source),
                tail=e.target.suffix_from(len(e.source) + 1),
                q=e.q,
                edges=(e,),
            )
            classes_at.setdefault(len(e.target), []).append(cls)
        for n in range(1, config.depth + 1):
            t = tables.get((net_id, n))
            if t is None:
                raise BundleError(f"missing level-{n} record for network {net_id}")
            net.commit_level(t, classes_at.get(n, []))
        stored = agg_by_net.get(net_id, {})
        if sorted(stored) != list(range(config.depth + 1)):
            raise BundleError(
                f"aggregate records for network {net_id} incomplete"
            )
        net.aggregates = [stored[n] for n in range(config.depth + 1)]
        nets.append(net)

    stream = PairedTaskStream() if config.preset == "divisible" else TaskStream()
    state = ScheduleState(stream, config.depth)
    for net in nets:
        for e in net.edges:
            state.record_edge(e.task, e.subtask, len(e.target))

    discards = []
    for row in prov_rows:
        for rec in row.get("discards", []):
            try:
                edge_net = rec["edge_network"]
                src = BitString.from_str(rec["source"])
                holder = rec["network"]
                cubes = tuple(Cube.from_pattern(p) for p in rec["patterns"])
                bound = rat_parse(rec["bound"])
                target = rec["target"]
                step = rec["step"]
            except (KeyError, ValueError, TypeError) as exc:
                raise BundleError(f"malformed discard record: {exc!r}")
            if edge_net not in known:
                raise BundleError(f"discard references unknown network {edge_net}")
            e = nets[edge_net - 1].edge_by_source.get(src)
            if e is None or str(e.target) != target or e.step_drawn != step:
                raise BundleError(f"discard references unknown edge at {src}")
            discards.append(
                DiscardRecord(
                    network_id=holder, cubes=cubes, edge=e, bound=bound
                )
            )

    try:
        ops, fns = config.resolved_rosters()
    except (ConfigError, ValueError, KeyError) as exc:
        raise BundleError(f"bad rosters: {exc}")

    return ConstructionBundle(
        config=config,
        networks=nets,
        state=state,
        provenance=prov_rows,
        discards=discards,
        operators=ops,
        functions=fns,
    )


# --- commands ------------------------------------------------------------


def _emit(text: str, out: Optional[Path]) -> None:
    if out:
        _write_text(out, text)
    else:
        sys.stdout.write(text)


def cmd_build(args) -> int:
    payload = {}
    if args.config:
        payload = _load_json(args.config)
        if not isinstance(payload, dict):
            raise BundleError(f"{args.config} must hold a JSON object")
    for key in ("preset", "depth", "networks", "mode", "seed"):
        value = getattr(args, key)
        if value is not None:
            payload[key] = value
    if "preset" not in payload or "depth" not in payload:
        raise ConfigError("a preset and a depth are required (flags or --config)")
    config = RunConfig.from_payload(payload)
    config.validate()
    if config.mode == "dense" and config.depth > ORACLE_DEPTH_CAP:
        raise ConfigError(
            f"dense mode replays every vertex and is capped at depth "
            f"{ORACLE_DEPTH_CAP}"
        )
    bundle = build(config)
    if config.mode == "dense":
        problems = compare_runs(bundle, dense_build(config))
        if problems:
            raise ConstructionError(problems[0])
    out = args.out or Path(f"{config.preset}-d{config.depth}")
    write_bundle(bundle, out)
    print(f"wrote {out}")
    return 0


def cmd_verify(args) -> int:
    bundle = read_bundle(args.bundle)
    if args.checks.strip() == "all":
        names = None
    else:
        names = [
            c.strip().replace("-", "_")
            for c in args.checks.split(",")
            if c.strip()
        ]
        unknown = [n for n in names if n not in CHECKS]
        if unknown:
            raise ConfigError(f"unknown checks {unknown}; have {sorted(CHECKS)}")
    reports = run_checks(bundle, names=names)
    if args.oracle_depth is not None:
        cfg = bundle.config
        if args.oracle_depth != bundle.depth:
            cfg = dataclasses.replace(cfg, depth=args.oracle_depth)
        reports.append(dense_oracle(cfg))
    payload = {
        "bundle": str(args.bundle),
        "preset": bundle.config.preset,
        "depth": bundle.depth,
        "passed": all(r.passed for r in reports),
        "checks": [r.to_payload() for r in reports],
    }
    _emit(_pretty(payload), args.out)
    return 0 if payload["passed"] else 1


def cmd_export(args) -> int:
    bundle = read_bundle(args.bundle)
    write_bundle(bundle, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_trace(args) -> int:
    rows = _load_jsonl(Path(args.bundle) / "provenance.jsonl")
    kept = []
    for row in rows:
        if args.task is not None and row.get("task") != args.task:
            continue
        if args.subtask is not None and row.get("subtask") != args.subtask:
            continue
        if args.level is not None and row.get("step") != args.level:
            continue
        kept.append(row)
    _emit("".join(_canon(r) + "\n" for r in kept), args.out)
    return 0


def cmd_mltest(args) -> int:
    bundle = read_bundle(args.bundle)
    test = ml_test(bundle, index=args.index)
    rows = []
    for i in sorted(test.per_index):
        entry = test.per_index[i]
        tail = test.tails[i]
        rows.append(
            {
                "index": i,
                "roots": entry["roots"],
                "mass": rat_str(entry["mass"]),
                "allowance": rat_str(entry["bound_sum"]),
                "cap": rat_str(Fraction(1, 1 << i)),
                "edge_count": entry["edge_count"],
                "ok": entry["ok"],
                "tail_roots": tail["roots"],
                "tail_mass": rat_str(tail["mass"]),
                "tail_ok": tail["ok"],
            }
        )
    _emit("".join(_canon(r) + "\n" for r in rows), args.out)
    return 0 if test.ok() else 1


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="treeflow",
        description="Build, check, and export staged network-flow runs.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build", help="run a construction and write its bundle")
    b.add_argument("--config", type=Path, help="JSON file with run parameters")
    b.add_argument("--preset", choices=PRESETS)
    b.add_argument("--depth", type=int)
    b.add_argument("--networks", type=int)
    b.add_argument(
        "--mode",
        choices=("sparse", "dense"),
        help="dense replays every vertex individually as a build-time cross-check",
    )
    b.add_argument("--seed", type=int)
    b.add_argument(
        "--out", type=Path, help="bundle directory (default: <preset>-d<depth>)"
    )
    b.set_defaults(fn=cmd_build)

    v = sub.add_parser("verify", help="reload a bundle and run checks on it")
    v.add_argument("bundle", type=Path)
    v.add_argument(
        "--checks",
        default="all",
        help='comma-separated check names (dashes ok) or "all"',
    )
    v.add_argument(
        "--oracle-depth",
        type=int,
        dest="oracle_depth",
        help="also replay the config at this depth vertex by vertex",
    )
    v.add_argument("--out", type=Path, help="write the report here, not stdout")
    v.set_defaults(fn=cmd_verify)

    e = sub.add_parser("export", help="reload a bundle and re-serialize it")
    e.add_argument("bundle", type=Path)
    e.add_argument("--out", type=Path, required=True)
    e.set_defaults(fn=cmd_export)

    t = sub.add_parser("trace", help="filter the step-by-step provenance log")
    t.add_argument("bundle", type=Path)
    t.add_argument("--task", type=int)
    t.add_argument("--subtask", type=int)
    t.add_argument("--level", type=int, help="step number, which is the level built")
    t.add_argument("--out", type=Path)
    t.set_defaults(fn=cmd_trace)

    m = sub.add_parser(
        "mltest", help="interval unions per task with exact masses and bounds"
    )
    m.add_argument("bundle", type=Path)
    m.add_argument("--index", type=int, help="one task index instead of all")
    m.add_argument("--out", type=Path)
    m.set_defaults(fn=cmd_mltest)
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (BundleError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConstructionError as exc:
        print(f"construction violation: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
