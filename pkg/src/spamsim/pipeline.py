"""The outbound filtering pipeline and its filter-once content cache.

One call to :func:`run_pipeline` handles one (message, recipient) pair:
sender authentication, the optional client counter, receiver
identification, the list checks, then content and rule filtering. The first
non-passing stage ends the run.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, NamedTuple, Optional, Tuple

from .filters import (
    CONTENT_FIELDS,
    HEADER_FIELDS,
    AddressList,
    BayesParams,
    CounterState,
    GreylistKey,
    GreylistState,
    ReverseMode,
    RuleSet,
    TokenStats,
    bayes_score,
    blacklist_check,
    counter_check,
    first_match,
    greylist_check,
    reverse_lookup_check,
    whitelist_check,
)
from .message import (
    ContentDigest,
    Decision,
    EmailAddress,
    EmailMessage,
    IpAddress,
    Stage,
    Verdict,
    content_digest,
)
from .netsim import DnsDirectory, dns_resolve


class Mount(enum.Enum):
    SENDER = "sender"
    RECEIVER = "receiver"


@dataclass(frozen=True)
class PipelineConfig:
    """Stage switches and thresholds.

    Sender authentication and receiver identification have no switch: they
    always run. The counter only applies on a sender-side mount.
    """

    mount: Mount = Mount.SENDER
    counter: bool = False
    whitelist: bool = True
    blacklist: bool = True
    greylist: bool = False
    content: bool = True
    rules: bool = True
    reverse_lookup: bool = False
    reverse_mode: ReverseMode = ReverseMode.STRICT
    dedup: bool = False
    whitelist_skips_content: bool = False
    bayes: BayesParams = BayesParams()

    def enabled(self, stage: Stage) -> bool:
        return {
            Stage.SENDER_AUTH: True,
            Stage.COUNTER_CHECK: self.counter and self.mount is Mount.SENDER,
            Stage.RECEIVER_IDENT: True,
            Stage.WHITELIST_CHECK: self.whitelist,
            Stage.BLACKLIST_CHECK: self.blacklist,
            Stage.GREYLIST_CHECK: self.greylist,
            Stage.CONTENT_FILTER: self.content,
            Stage.RULE_FILTER: self.rules,
            Stage.FORWARDED: True,
        }[stage]


class ContentOutcome(NamedTuple):
    """What the content stages concluded from subject and body alone.

    ``score`` is None when content filtering is off; ``rule_index`` is the
    first subject/body rule that matched.
    """

    score: Optional[float]
    rule_index: Optional[int]


@dataclass
class FilterContext:
    client_directory: FrozenSet[IpAddress] = frozenset()
    dns: DnsDirectory = field(default_factory=DnsDirectory)
    whitelist: AddressList = field(default_factory=AddressList)
    blacklist: AddressList = field(default_factory=AddressList)
    greylist: GreylistState = field(default_factory=GreylistState)
    stats: TokenStats = field(default_factory=TokenStats)
    rules: RuleSet = field(default_factory=RuleSet)
    counter: CounterState = field(default_factory=CounterState)
    config: PipelineConfig = field(default_factory=PipelineConfig)
    dedup_cache: Dict[ContentDigest, ContentOutcome] = field(default_factory=dict)
    content_executions: int = 0
    cache_hits: int = 0
    stage_entries: Counter = field(default_factory=Counter)

    def reset_run(self) -> None:
        self.dedup_cache.clear()
        self.content_executions = 0
        self.cache_hits = 0
        self.stage_entries.clear()


def authenticate_sender(msg: EmailMessage, ctx: FilterContext) -> bool:
    if msg.sender_ip not in ctx.client_directory:
        return False
    if not ctx.config.reverse_lookup:
        return True
    outcome = reverse_lookup_check(msg.sender_ip, msg.helo_domain, ctx.dns,
                                   ctx.config.reverse_mode)
    return outcome.decision is Decision.PASS


def identify_receiver(rcpt: EmailAddress, dns: DnsDirectory) -> bool:
    return dns_resolve(rcpt.domain, dns) is not None


def _analyse_content(msg: EmailMessage, ctx: FilterContext) -> ContentOutcome:
    cfg = ctx.config
    score = bayes_score(msg, ctx.stats, cfg.bayes) if cfg.content else None
    idx = first_match(msg, ctx.rules, CONTENT_FIELDS) if cfg.rules else None
    return ContentOutcome(score, idx)


def filter_once(msg: EmailMessage, ctx: FilterContext,
                trace: Optional[List[Stage]] = None) -> Tuple[Verdict, bool]:
    """Content and rule filtering, reusing a cached analysis when allowed.

    Only the subject/body analysis is cached, keyed by content digest.
    Rules on from_domain or helo depend on the sender and are re-evaluated on
    every call at no filter cost.
    """
    cfg = ctx.config
    outcome = None
    key = None
    if cfg.dedup:
        key = content_digest(msg)
        outcome = ctx.dedup_cache.get(key)
    hit = outcome is not None
    if hit:
        ctx.cache_hits += 1
    else:
        outcome = _analyse_content(msg, ctx)
        ctx.content_executions += 1
        if key is not None:
            ctx.dedup_cache[key] = outcome

    def enter(stage):
        ctx.stage_entries[stage] += 1
        if trace is not None:
            trace.append(stage)

    if cfg.content:
        enter(Stage.CONTENT_FILTER)
        if outcome.score >= cfg.bayes.threshold:
            return Verdict(Decision.BLOCK, Stage.CONTENT_FILTER,
                           f"bayes score {outcome.score:.6f}"), hit
    if cfg.rules:
        enter(Stage.RULE_FILTER)
        header_idx = first_match(msg, ctx.rules, HEADER_FIELDS)
        candidates = [i for i in (outcome.rule_index, header_idx) if i is not None]
        if candidates:
            idx = min(candidates)
            if ctx.rules.rules[idx].action is Decision.BLOCK:
                return Verdict(Decision.BLOCK, Stage.RULE_FILTER, f"rule {idx}"), hit
    return Verdict(Decision.PASS, Stage.FORWARDED), hit


def run_pipeline(msg: EmailMessage, rcpt: EmailAddress, now: float,
                 ctx: FilterContext, trace: Optional[List[Stage]] = None) -> Verdict:
    """Filter one (message, recipient) pair at virtual time ``now``.

    ``trace``, if given, receives every stage entered, in order.
    """
    if rcpt not in msg.rcpt:
        raise ValueError(f"{rcpt} is not a recipient of {msg.id}")
    cfg = ctx.config

    def enter(stage):
        ctx.stage_entries[stage] += 1
        if trace is not None:
            trace.append(stage)

    enter(Stage.SENDER_AUTH)
    if not authenticate_sender(msg, ctx):
        return Verdict(Decision.BLOCK, Stage.SENDER_AUTH, "sender not authenticated")

    if cfg.enabled(Stage.COUNTER_CHECK):
        enter(Stage.COUNTER_CHECK)
        if counter_check(msg.sender_ip, now, ctx.counter) is Decision.BLOCK:
            return Verdict(Decision.BLOCK, Stage.COUNTER_CHECK, "send limit reached")

    enter(Stage.RECEIVER_IDENT)
    if not identify_receiver(rcpt, ctx.dns):
        return Verdict(Decision.FAILURE_TO_SENDER, Stage.RECEIVER_IDENT,
                       f"no mail server for {rcpt.domain}")

    whitelisted = False
    if cfg.whitelist:
        enter(Stage.WHITELIST_CHECK)
        whitelisted = whitelist_check(msg.from_addr, ctx.whitelist)

    if cfg.blacklist:
        enter(Stage.BLACKLIST_CHECK)
        if blacklist_check(msg.sender_ip, msg.from_addr.domain, ctx.blacklist,
                           address=msg.from_addr):
            return Verdict(Decision.BLOCK, Stage.BLACKLIST_CHECK, "blacklisted")

    if cfg.greylist and not whitelisted:
        enter(Stage.GREYLIST_CHECK)
        key = GreylistKey(msg.sender_ip, msg.from_addr, rcpt)
        if greylist_check(key, now, ctx.greylist) is Decision.TEMP_REJECT:
            return Verdict(Decision.TEMP_REJECT, Stage.GREYLIST_CHECK, "greylisted")

    if (whitelisted and cfg.whitelist_skips_content) or not (cfg.content or cfg.rules):
        return Verdict(Decision.PASS, Stage.FORWARDED)

    verdict, _ = filter_once(msg, ctx, trace)
    return verdict
