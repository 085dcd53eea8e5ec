from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spamsim.corpus import GeneratorParams, generate_corpus
from spamsim.filters import AddressList, ReverseMode, Rule, RuleSet, TokenStats, bayes_train
from spamsim.message import Decision, Stage, content_digest, parse_address, parse_ip
from spamsim.netsim import DnsDirectory
from spamsim.pipeline import (
    FilterContext,
    Mount,
    PipelineConfig,
    authenticate_sender,
    filter_once,
    identify_receiver,
    run_pipeline,
)
from spamsim.scenarios import FilterSetup, default_world, replay_verdicts

from conftest import make_msg

CLIENT = parse_ip("198.51.100.1")


def ctx_for(world, **cfg):
    return FilterContext(client_directory=world.server("A").clients, dns=world.dns,
                         config=PipelineConfig(**cfg))


def test_clean_message_forwarded(world):
    ctx = ctx_for(world)
    m = make_msg("lunch", "see you at noon")
    trace = []
    v = run_pipeline(m, m.rcpt[0], 0, ctx, trace)
    assert (v.decision, v.stage) == (Decision.PASS, Stage.FORWARDED)
    assert trace == [Stage.SENDER_AUTH, Stage.RECEIVER_IDENT, Stage.WHITELIST_CHECK,
                     Stage.BLACKLIST_CHECK, Stage.CONTENT_FILTER, Stage.RULE_FILTER]


def test_blacklisted_ip_stops_before_content(world):
    ctx = ctx_for(world)
    ctx.blacklist = AddressList.of(str(CLIENT))
    m = make_msg("x", "y")
    trace = []
    v = run_pipeline(m, m.rcpt[0], 0, ctx, trace)
    assert (v.decision, v.stage) == (Decision.BLOCK, Stage.BLACKLIST_CHECK)
    assert Stage.CONTENT_FILTER not in trace and ctx.content_executions == 0


def test_unknown_rcpt_domain_fails_to_sender(world):
    m = make_msg(rcpt=("bob@nowhere.example",))
    v = run_pipeline(m, m.rcpt[0], 0, ctx_for(world))
    assert (v.decision, v.stage) == (Decision.FAILURE_TO_SENDER, Stage.RECEIVER_IDENT)


def test_authenticate_sender(world):
    ctx = ctx_for(world)
    assert authenticate_sender(make_msg(), ctx)
    stranger = make_msg(ip="192.0.2.99")
    v = run_pipeline(stranger, stranger.rcpt[0], 0, ctx)
    assert (v.decision, v.stage) == (Decision.BLOCK, Stage.SENDER_AUTH)


def test_authenticate_with_strict_reverse_lookup(world):
    ctx = ctx_for(world, reverse_lookup=True, reverse_mode=ReverseMode.STRICT)
    # ham host has a PTR for a.example, HELO mail.a.example
    assert authenticate_sender(make_msg(), ctx)
    # registered client but no PTR record
    assert not authenticate_sender(make_msg(ip="203.0.113.1"), ctx)
    lenient = ctx_for(world, reverse_lookup=True, reverse_mode=ReverseMode.LENIENT)
    assert authenticate_sender(make_msg(ip="203.0.113.1"), lenient)


def test_identify_receiver(world):
    assert identify_receiver(parse_address("x@b.example"), world.dns)
    assert not identify_receiver(parse_address("x@zz.example"), world.dns)
    assert not identify_receiver(parse_address("x@b.example"), DnsDirectory())


def test_content_block_and_rules(world):
    ctx = ctx_for(world)
    ctx.stats = bayes_train([(make_msg("", "cash prize winner"), "spam"),
                             (make_msg("", "meeting agenda"), "ham")])
    spam = make_msg("", "cash prize winner")
    v = run_pipeline(spam, spam.rcpt[0], 0, ctx)
    assert (v.decision, v.stage) == (Decision.BLOCK, Stage.CONTENT_FILTER)
    ctx.rules = RuleSet([Rule("subject", "urgent", Decision.BLOCK)])
    m = make_msg("URGENT meeting", "meeting agenda")
    v = run_pipeline(m, m.rcpt[0], 0, ctx)
    assert (v.decision, v.stage) == (Decision.BLOCK, Stage.RULE_FILTER)


def test_whitelist_skips_greylist_not_content(world):
    ctx = ctx_for(world, greylist=True)
    ctx.whitelist = AddressList.of("a.example")
    ctx.rules = RuleSet([Rule("body", "bad", Decision.BLOCK)])
    m = make_msg("", "bad stuff")
    trace = []
    v = run_pipeline(m, m.rcpt[0], 0, ctx, trace)
    assert Stage.GREYLIST_CHECK not in trace
    assert v.stage is Stage.RULE_FILTER
    skip = ctx_for(world, greylist=True, whitelist_skips_content=True)
    skip.whitelist = ctx.whitelist
    skip.rules = ctx.rules
    assert run_pipeline(m, m.rcpt[0], 0, skip).decision is Decision.PASS


def test_greylist_in_pipeline(world):
    ctx = ctx_for(world, greylist=True)
    m = make_msg("hello", "there")
    assert run_pipeline(m, m.rcpt[0], 0, ctx).decision is Decision.TEMP_REJECT
    assert run_pipeline(m, m.rcpt[0], 200, ctx).decision is Decision.PASS


def test_counter_only_on_sender_mount(world):
    cfg = dict(counter=True)
    sender = ctx_for(world, **cfg)
    sender.counter.limit = 1
    m = make_msg()
    assert run_pipeline(m, m.rcpt[0], 0, sender).decision is Decision.PASS
    v = run_pipeline(m, m.rcpt[0], 1, sender)
    assert (v.decision, v.stage) == (Decision.BLOCK, Stage.COUNTER_CHECK)
    receiver = ctx_for(world, mount=Mount.RECEIVER, **cfg)
    receiver.counter.limit = 0
    assert run_pipeline(m, m.rcpt[0], 0, receiver).decision is Decision.PASS


def test_rcpt_must_belong_to_message(world):
    with pytest.raises(ValueError):
        run_pipeline(make_msg(), parse_address("z@b.example"), 0, ctx_for(world))


def test_filter_once_blast(world):
    ctx = ctx_for(world, dedup=True)
    msgs = [make_msg("same", "spam body", mid=f"m{i}", rcpt=(f"u{i}@b.example",)) for i in range(1000)]
    hits = [filter_once(m, ctx)[1] for m in msgs]
    assert ctx.content_executions == 1 and hits.count(True) == 999 and not hits[0]


def test_filter_once_distinct_and_disabled(world):
    ctx = ctx_for(world, dedup=True)
    filter_once(make_msg("a", "one"), ctx)
    filter_once(make_msg("a", "two"), ctx)
    assert ctx.content_executions == 2
    off = ctx_for(world, dedup=False)
    for i in range(5):
        assert filter_once(make_msg("a", "one"), off)[1] is False
    assert off.content_executions == 5 and not off.dedup_cache


def test_header_rules_not_cached(world):
    ctx = ctx_for(world, dedup=True)
    ctx.rules = RuleSet([Rule("from_domain", "bad.example", Decision.BLOCK)])
    good = make_msg("s", "same body", sender="x@a.example")
    bad = make_msg("s", "same body", sender="x@bad.example")
    assert filter_once(good, ctx)[0].decision is Decision.PASS
    v, hit = filter_once(bad, ctx)
    assert hit and v.decision is Decision.BLOCK


# --- properties over random corpora -----------------------------------------

def full_setup(records, **cfg):
    setup = FilterSetup.trained(records)
    rng_pick = [r for r in records if not r.is_spam][:3]
    setup.whitelist = AddressList.of(*(str(r.message.from_addr) for r in rng_pick[:1]))
    setup.blacklist = AddressList.of("203.0.113.3")
    setup.rules = RuleSet([Rule("subject", "tpl0001", Decision.BLOCK),
                           Rule("helo", "mail.a.example", Decision.PASS),
                           Rule("body", "tpl0002", Decision.BLOCK)])
    setup.config = PipelineConfig(greylist=True, reverse_lookup=True,
                                  reverse_mode=ReverseMode.LENIENT, **cfg)
    return setup


def random_corpus(seed, count=60):
    return generate_corpus(GeneratorParams(
        seed=seed, count=count, spam_ratio=0.4, distinct_spam_bodies=4, spam_senders=4,
        rcpt_per_message=(1, 3), rcpt_domains=("b.example", "c.example", "nowhere.example"),
        interval_s=30.0))


def verdicts_for(records, setup, mount, dedup, world):
    ctx = setup.make_context(mount, dedup, world.server("A").clients, world.dns)
    return replay_verdicts(records, ctx), ctx


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6))
def test_stage_trace_is_ordered(seed):
    world = default_world()
    records = random_corpus(seed, 30)
    setup = full_setup(records)
    ctx = setup.make_context(Mount.SENDER, False, world.server("A").clients, world.dns)
    for r in records:
        for rcpt in r.message.rcpt:
            trace = []
            v = run_pipeline(r.message, rcpt, r.message.submitted_at, ctx, trace)
            assert trace == sorted(trace) and len(set(trace)) == len(trace)
            assert all(ctx.config.enabled(s) for s in trace)
            last = trace[-1]
            assert v.stage == (Stage.FORWARDED if v.decision is Decision.PASS else last)
            skipped = [s for s in Stage if s < last and ctx.config.enabled(s) and s not in trace]
            # only a whitelist hit may skip a stage, and only the greylist
            assert skipped in ([], [Stage.GREYLIST_CHECK])


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10**6))
def test_location_invariance_and_dedup_soundness(seed):
    world = default_world()
    records = random_corpus(seed)
    setup = full_setup(records)
    snd, _ = verdicts_for(records, setup, Mount.SENDER, False, world)
    rcv, _ = verdicts_for(records, setup, Mount.RECEIVER, False, world)
    dd, ctx = verdicts_for(records, setup, Mount.SENDER, True, world)
    assert snd == rcv == dd
    _, nodedup = verdicts_for(records, setup, Mount.SENDER, False, world)
    assert ctx.content_executions <= nodedup.content_executions
