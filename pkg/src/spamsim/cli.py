"""Command-line entry point.

Exit codes: 0 success or Pass, 1 message filtered, 2 usage/config/input
error, 3 scenario ordering assertion failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path
from typing import List, Optional

from . import corpus as corpus_mod
from .config import Config, ConfigError, load_config
from .corpus import CorpusParseError, FilterLists, GeneratorParams, InvalidParams
from .filters import AddressList, ListParseError, RuleSet, TokenStats, bayes_train, token_stats_dumps
from .message import Decision, content_digest
from .netsim import World, WorldParseError
from .pipeline import Mount, run_pipeline
from .scenarios import (
    CSV_HEADER,
    ComparisonTable,
    FilterSetup,
    ScenarioSpec,
    check_ordering,
    compare_scenarios,
    default_world,
    run_scenario,
)

EXIT_OK, EXIT_FILTERED, EXIT_USAGE, EXIT_ASSERT = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _fail(msg: str) -> int:
    print(f"spamsim: error: {msg}", file=sys.stderr)
    return EXIT_USAGE


def _config(args) -> Config:
    cfg = load_config(getattr(args, "config", None))
    overrides = {k: getattr(args, k, None) for k in ("profile", "corpus", "lists", "world",
                                                     "seed", "n")}
    overrides["output"] = getattr(args, "out", None)
    overrides["plot"] = getattr(args, "plot", None)
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        overrides[key.strip()] = value.strip()
    return cfg.update(overrides)


def _world(cfg: Config) -> World:
    if not cfg.world:
        return default_world()
    return World.loads(Path(cfg.world).read_text(encoding="utf-8"))


def _empty_lists() -> FilterLists:
    return FilterLists(AddressList(), AddressList(), RuleSet(), TokenStats())


def _lists(cfg: Config) -> FilterLists:
    if not cfg.lists:
        return _empty_lists()
    return corpus_mod.load_lists(cfg.lists)


def _corpus(cfg: Config):
    if not cfg.corpus:
        raise UsageError("no corpus given (--corpus or 'corpus' in config)")
    records = corpus_mod.load_corpus(cfg.corpus)
    if not records:
        raise UsageError(f"corpus {cfg.corpus} is empty")
    return records


def _setup(cfg: Config, records) -> FilterSetup:
    lists = _lists(cfg)
    stats = lists.stats
    if not stats.counts:
        stats = bayes_train(corpus_mod.training_pairs(records))
    return FilterSetup(
        whitelist=lists.whitelist, blacklist=lists.blacklist, rules=lists.rules,
        stats=stats, config=cfg.pipeline_config(),
        greylist_min_delay_s=cfg.greylist_min_delay_s,
        greylist_max_lifetime_s=cfg.greylist_max_lifetime_s,
        counter_limit=cfg.counter_limit, counter_window_s=cfg.counter_window_s,
        receiver_policy=cfg.receiver_policy)


def _write(path: Optional[str], text: str, append: bool = False) -> None:
    if not path:
        sys.stdout.write(text)
        return
    with open(path, "a" if append else "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------


def cmd_gen_corpus(args) -> int:
    params = GeneratorParams(
        seed=args.seed, count=args.count, spam_ratio=args.spam_ratio,
        distinct_spam_bodies=args.distinct_spam,
        rcpt_per_message=(args.rcpt_min, args.rcpt_max),
        interval_s=args.interval)
    records = corpus_mod.generate_corpus(params)
    corpus_mod.save_corpus(records, args.out)
    spam_digests = {content_digest(r.message) for r in records if r.is_spam}
    all_digests = {content_digest(r.message) for r in records}
    print(f"records: {len(records)}")
    print(f"spam: {sum(r.is_spam for r in records)}")
    print(f"distinct spam digests: {len(spam_digests)}")
    print(f"distinct digests: {len(all_digests)}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    records = _corpus(cfg)
    stats = bayes_train(corpus_mod.training_pairs(records))
    out = Path(args.out)
    if out.suffix == "" or out.is_dir():
        lists = corpus_mod.load_lists(out) if out.is_dir() else _empty_lists()
        corpus_mod.save_lists(lists._replace(stats=stats), out)
        out = out / corpus_mod.LIST_FILES["stats"]
    else:
        out.write_text(token_stats_dumps(stats), encoding="utf-8", newline="\n")
    print(f"trained on {stats.spam_msgs} spam / {stats.ham_msgs} ham, "
          f"{len(stats.counts)} tokens -> {out}")
    return EXIT_OK


def _scenario_n(cfg: Config, records) -> int:
    return cfg.n if cfg.n is not None else len(records)


def cmd_run(args) -> int:
    cfg = _config(args)
    records = _corpus(cfg)
    spec = ScenarioSpec(args.scenario, _scenario_n(cfg, records), cfg.cost_model(),
                        dedup=cfg.dedup_override(), seed=cfg.seed)
    metrics = run_scenario(spec, _world(cfg), records, _setup(cfg, records))
    out = cfg.output
    fresh = not out or not Path(out).exists() or Path(out).stat().st_size == 0
    _write(out, (CSV_HEADER + "\n" if fresh else "") + metrics.csv_row() + "\n", append=True)
    print(f"scenario {spec.id} ({spec.filter_location.value}-side, "
          f"{len(spec.layout)} destination server(s)): total {metrics.total_virtual_s:.6f} s, "
          f"filter {metrics.filter_time_s:.6f} s, {metrics.filter_invocations} filter runs",
          file=sys.stderr if not out else sys.stdout)
    if args.assert_ordering and out:
        problems = check_ordering(_rows_from_csv(Path(out).read_text(encoding="utf-8")))
        if problems:
            for p in problems:
                print(f"ordering violation: {p}", file=sys.stderr)
            return EXIT_ASSERT
    return EXIT_OK


class _CsvRow:
    def __init__(self, row):
        self.scenario = int(row["scenario"])
        self.profile = row["profile"]
        secs, _, frac = row["total_s"].partition(".")
        self.total_us = int(secs) * 1_000_000 + int(frac.ljust(6, "0")[:6])


def _rows_from_csv(text: str) -> List[_CsvRow]:
    return [_CsvRow(r) for r in csv.DictReader(io.StringIO(text)) if r.get("scenario") != "scenario"]


def cmd_compare(args) -> int:
    cfg = _config(args)
    records = _corpus(cfg)
    n = _scenario_n(cfg, records)
    profiles = [p.strip() for p in (args.profiles or cfg.profile).split(",") if p.strip()]
    specs = [ScenarioSpec(sid, n, cfg.cost_model(p), dedup=cfg.dedup_override(), seed=cfg.seed)
             for p in profiles for sid in (1, 2, 3, 4)]
    table: ComparisonTable = compare_scenarios(specs, _world(cfg), records,
                                               _setup(cfg, records), parallel=args.parallel)
    _write(cfg.output, table.to_csv())
    if cfg.plot:
        Path(cfg.plot).write_text(table.to_plot_data(), encoding="utf-8", newline="\n")
    info = sys.stdout if cfg.output else sys.stderr
    for p in table.profiles:
        print(f"speedup {p}: {table.speedup(p):.1f}", file=info)
    if table.ordering_ok:
        print("ordering: ok (total3 <= total4 <= min(total1, total2))", file=info)
    else:
        for v in table.violations:
            print(f"ordering violation: {v}", file=sys.stderr)
        if args.assert_ordering:
            return EXIT_ASSERT
    return EXIT_OK


def cmd_check(args) -> int:
    cfg = _config(args)
    text = Path(args.message).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise UsageError(f"{args.message} holds no message")
    record = corpus_mod.record_from_json(lines[0])
    msg = record.message
    world = _world(cfg)
    lists = _lists(cfg)
    stats = lists.stats
    if cfg.corpus:
        stats = bayes_train(corpus_mod.training_pairs(_corpus(cfg)))
    setup = FilterSetup(whitelist=lists.whitelist, blacklist=lists.blacklist,
                        rules=lists.rules, stats=stats, config=cfg.pipeline_config(),
                        greylist_min_delay_s=cfg.greylist_min_delay_s,
                        greylist_max_lifetime_s=cfg.greylist_max_lifetime_s,
                        counter_limit=cfg.counter_limit, counter_window_s=cfg.counter_window_s)
    sender = args.server
    clients = world.server(sender).clients if sender in world.servers else frozenset()
    ctx = setup.make_context(Mount(args.mount), cfg.dedup == "on", clients, world.dns)
    worst = EXIT_OK
    for rcpt in msg.rcpt:
        trace = []
        verdict = run_pipeline(msg, rcpt, msg.submitted_at, ctx, trace)
        print(f"{msg.id} -> {rcpt}")
        for stage in trace:
            print(f"  {stage.label}")
        print(f"  verdict: {verdict}")
        if verdict.decision is not Decision.PASS:
            worst = EXIT_FILTERED
    return worst


# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file (default: $SPAMSIM_CONFIG)")
    p.add_argument("--corpus", help="corpus file (JSON Lines)")
    p.add_argument("--lists", help="directory with whitelist.txt, blacklist.txt, rules.tsv, tokens.tsv")
    p.add_argument("--world", help="world description file (default: built-in A,B,C,D world)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key; repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spamsim",
        description="Simulate spam filtering placed at the sending or receiving mail server.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate a labeled corpus")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--spam-ratio", type=float, default=1.0)
    p.add_argument("--distinct-spam", type=int, default=1,
                   help="number of distinct spam bodies (default: %(default)s)")
    p.add_argument("--rcpt-min", type=int, default=1)
    p.add_argument("--rcpt-max", type=int, default=1)
    p.add_argument("--interval", type=float, default=1.0,
                   help="seconds between submissions (default: %(default)s)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train", help="train token statistics from a labeled corpus")
    _add_common(p)
    p.add_argument("--out", required=True, help="tokens file, or a list directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="run one scenario and append a CSV row")
    _add_common(p)
    p.add_argument("--scenario", type=int, choices=(1, 2, 3, 4), required=True)
    p.add_argument("--profile", help="cost profile: hotmail, aol, microsoft, trec, dspam, custom")
    p.add_argument("--n", type=int, help="messages to send (default: whole corpus)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="CSV file to append to (default: stdout)")
    p.add_argument("--assert-ordering", action="store_true",
                   help="exit 3 if the rows in --out break the expected ordering")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="run scenarios 1-4 and compare")
    _add_common(p)
    p.add_argument("--profiles", help="comma-separated cost profiles (default: config profile)")
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="CSV output (default: stdout)")
    p.add_argument("--plot", help="write a gnuplot data file")
    p.add_argument("--assert-ordering", action="store_true")
    p.add_argument("--parallel", action="store_true", help="run scenarios concurrently")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("check", help="trace one message through the pipeline")
    _add_common(p)
    p.add_argument("message", help="file holding one corpus-format JSON record")
    p.add_argument("--mount", choices=("sender", "receiver"), default="sender")
    p.add_argument("--server", default="A", help="server whose clients are authorized")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, InvalidParams, CorpusParseError, ListParseError,
            WorldParseError, ValueError, OSError) as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
