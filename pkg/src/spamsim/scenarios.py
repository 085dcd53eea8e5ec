"""The four filter-placement scenarios and their comparison.

A spammer (and ordinary users) submit mail through server ``A``. Recipients
live on ``B`` (single-server layout) or on ``B``, ``C`` and ``D``
(round-robin). Filtering runs either at the receivers, after the message has
crossed the network, or at ``A`` before anything is sent.

=====  ==============  ===========
 id     filtering at    recipients
=====  ==============  ===========
 1      receiver        B
 2      receivers       B, C, D
 3      sender (A)      B
 4      sender (A)      B, C, D
=====  ==============  ===========
"""

from __future__ import annotations

import copy
import enum
import heapq
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from .corpus import CorpusRecord, ham_sender_ip, spam_sender_ip, training_pairs
from .filters import (
    AddressList,
    CounterState,
    GreylistState,
    RuleSet,
    TokenStats,
    bayes_train,
)
from .message import Decision, EmailAddress, Stage, Verdict
from .netsim import (
    FILTER,
    NETWORK,
    CostModel,
    SmtpSession,
    VirtualClock,
    World,
    charge_filter,
    close_session,
    cost_profile,
    dns_resolve,
    establish_session,
    format_us,
    to_us,
    transmit,
)
from .pipeline import FilterContext, Mount, PipelineConfig, run_pipeline

log = logging.getLogger(__name__)

SENDER_SERVER = "A"
SINGLE_LAYOUT = ("B",)
MULTI_LAYOUT = ("B", "C", "D")

CSV_HEADER = ("scenario,profile,n,total_s,filter_s,network_s,invocations,"
              "sessions,bytes,delivered,blocked,temp_rejected,failures")


class WorldMismatch(ValueError):
    pass


class CorpusTooSmall(ValueError):
    pass


class OrderingViolation(AssertionError):
    pass


class Location(enum.Enum):
    RECEIVER = "receiver"
    SENDER = "sender"


def default_world(spam_senders: int = 10, ham_senders: int = 50) -> World:
    """A sender server ``A`` and three receivers, with PTRs for the ham hosts."""
    world = World()
    clients = ([spam_sender_ip(i) for i in range(spam_senders)]
               + [ham_sender_ip(i) for i in range(ham_senders)])
    world.add_server("A", ["a.example"], clients)
    world.add_server("B", ["b.example"])
    world.add_server("C", ["c.example"])
    world.add_server("D", ["d.example"])
    for i in range(ham_senders):
        world.add_ptr(ham_sender_ip(i), "a.example")
    return world


@dataclass
class FilterSetup:
    """Filter contents shared by every filtering server in a run.

    Each server gets its own fresh context (greylist, counter and dedup
    state are never shared between servers or runs).
    """

    whitelist: AddressList = field(default_factory=AddressList)
    blacklist: AddressList = field(default_factory=AddressList)
    rules: RuleSet = field(default_factory=RuleSet)
    stats: TokenStats = field(default_factory=TokenStats)
    config: PipelineConfig = field(default_factory=PipelineConfig)
    greylist_min_delay_s: float = 120.0
    greylist_max_lifetime_s: float = 86400.0
    counter_limit: int = 100
    counter_window_s: float = 3600.0
    receiver_policy: str = "drop"

    @classmethod
    def trained(cls, records: Sequence[CorpusRecord], **kwargs) -> FilterSetup:
        return cls(stats=bayes_train(training_pairs(records)), **kwargs)

    def make_context(self, mount: Mount, dedup: bool, clients, dns) -> FilterContext:
        return FilterContext(
            client_directory=frozenset(clients),
            dns=dns,
            whitelist=self.whitelist,
            blacklist=self.blacklist,
            greylist=GreylistState(self.greylist_min_delay_s, self.greylist_max_lifetime_s),
            stats=self.stats,
            rules=self.rules,
            counter=CounterState(self.counter_limit, self.counter_window_s),
            config=replace(self.config, mount=mount, dedup=dedup),
        )


@dataclass(frozen=True)
class ScenarioSpec:
    id: int
    n_messages: int = 1000
    profile: Union[str, CostModel] = "dspam"
    dedup: Optional[bool] = None
    seed: int = 0

    def __post_init__(self):
        if self.id not in (1, 2, 3, 4):
            raise ValueError(f"scenario id must be 1-4, got {self.id}")
        if self.n_messages < 1:
            raise ValueError("n_messages must be at least 1")

    @property
    def filter_location(self) -> Location:
        return Location.RECEIVER if self.id in (1, 2) else Location.SENDER

    @property
    def layout(self) -> Tuple[str, ...]:
        return SINGLE_LAYOUT if self.id in (1, 3) else MULTI_LAYOUT

    @property
    def use_dedup(self) -> bool:
        if self.dedup is not None:
            return self.dedup
        return self.filter_location is Location.SENDER

    @property
    def cost(self) -> CostModel:
        return cost_profile(self.profile) if isinstance(self.profile, str) else self.profile


@dataclass
class ScenarioMetrics:
    scenario: int
    profile: str
    n: int
    total_us: int = 0
    filter_us: int = 0
    network_us: int = 0
    filter_invocations: int = 0
    cache_hits: int = 0
    sessions_opened: int = 0
    verification_probes: int = 0
    bytes_transferred: int = 0
    delivered: int = 0
    blocked: int = 0
    temp_rejected: int = 0
    failure_notices: int = 0
    attempted: int = 0
    verdicts: Dict[Tuple[str, EmailAddress], Verdict] = field(
        default_factory=dict, repr=False, compare=False)

    @property
    def total_virtual_s(self) -> float:
        return self.total_us / 1e6

    @property
    def filter_time_s(self) -> float:
        return self.filter_us / 1e6

    @property
    def network_time_s(self) -> float:
        return self.network_us / 1e6

    def csv_row(self) -> str:
        return ",".join(str(v) for v in (
            self.scenario, self.profile, self.n, format_us(self.total_us),
            format_us(self.filter_us), format_us(self.network_us),
            self.filter_invocations, self.sessions_opened, self.bytes_transferred,
            self.delivered, self.blocked, self.temp_rejected, self.failure_notices))


def assign_destinations(records: Sequence[CorpusRecord],
                        domains: Sequence[str]) -> List[CorpusRecord]:
    """Re-home recipients round-robin over ``domains``, keeping local parts.

    The counter runs over every (message, recipient) pair in corpus order.
    """
    out = []
    i = 0
    for rec in records:
        rcpt = []
        for r in rec.message.rcpt:
            addr = EmailAddress(r.local, domains[i % len(domains)])
            i += 1
            if addr not in rcpt:
                rcpt.append(addr)
        out.append(CorpusRecord(rec.message.with_rcpt(rcpt), rec.label, rec.retry))
    return out


class _AttemptQueue:
    """Delivery attempts ordered by (time, submission order)."""

    def __init__(self, records: Sequence[CorpusRecord]):
        self._heap = [(r.message.submitted_at, i, i, r.message.rcpt, 0)
                      for i, r in enumerate(records)]
        heapq.heapify(self._heap)
        self._seq = len(records)

    def __bool__(self):
        return bool(self._heap)

    def pop(self):
        t, _, idx, rcpts, attempt = heapq.heappop(self._heap)
        return t, idx, rcpts, attempt

    def retry(self, t: float, idx: int, rcpts) -> None:
        heapq.heappush(self._heap, (t, self._seq, idx, tuple(rcpts), 1))
        self._seq += 1


def replay_verdicts(records: Sequence[CorpusRecord], ctx: FilterContext,
                    retry_delay_s: Optional[float] = None
                    ) -> Dict[Tuple[str, EmailAddress], Verdict]:
    """Run every (message, recipient) pair through one context, no network.

    Temporarily rejected pairs whose record allows it are retried once,
    ``retry_delay_s`` (default: the greylist minimum delay) later.
    """
    delay = ctx.greylist.min_delay_s if retry_delay_s is None else retry_delay_s
    queue = _AttemptQueue(records)
    final = {}
    while queue:
        t, idx, rcpts, attempt = queue.pop()
        rec = records[idx]
        again = []
        for rcpt in rcpts:
            v = run_pipeline(rec.message, rcpt, t, ctx)
            if v.decision is Decision.TEMP_REJECT and rec.retry == "retry_once" and attempt == 0:
                again.append(rcpt)
            else:
                final[(rec.message.id, rcpt)] = v
        if again:
            queue.retry(t + delay, idx, again)
    return final


class _Run:
    def __init__(self, spec: ScenarioSpec, world: World, records, setup: FilterSetup):
        self.spec = spec
        self.world = world
        self.records = records
        self.setup = setup
        self.cost = spec.cost
        self.clock = VirtualClock()
        self.sessions: Dict[str, SmtpSession] = {}
        self.verified: set = set()
        clients = world.server(SENDER_SERVER).clients
        if spec.filter_location is Location.SENDER:
            self.contexts = {SENDER_SERVER: setup.make_context(
                Mount.SENDER, spec.use_dedup, clients, world.dns)}
        else:
            self.contexts = {s: setup.make_context(Mount.RECEIVER, spec.use_dedup,
                                                   clients, world.dns)
                             for s in spec.layout}
        for name, ctx in self.contexts.items():
            world.server(name).context = ctx
        self.metrics = ScenarioMetrics(spec.id, self.cost.profile, len(records))

    def session(self, dest: str) -> SmtpSession:
        s = self.sessions.get(dest)
        if s is None:
            s = establish_session(self.world, SENDER_SERVER, dest, self.clock, self.cost)
            self.sessions[dest] = s
        return s

    def verify_destination(self, dest: str) -> None:
        # connect, HELO, QUIT with no mail: checks the receiving domain's server
        if dest in self.verified:
            return
        self.verified.add(dest)
        us = to_us(self.cost.session_setup_s) + to_us(self.cost.per_command_s)
        self.clock.charge(us, NETWORK, f"verify {SENDER_SERVER}->{dest}")
        self.metrics.verification_probes += 1

    def filter(self, ctx: FilterContext, msg, rcpt, t) -> Tuple[Verdict, List[Stage]]:
        before = ctx.content_executions
        trace: List[Stage] = []
        verdict = run_pipeline(msg, rcpt, t, ctx, trace)
        ran = ctx.content_executions - before
        if ran:
            charge_filter(self.clock, self.cost, ran, f"content filter {msg.id}")
        for stage in trace:
            if stage in (Stage.CONTENT_FILTER, Stage.RULE_FILTER):
                continue
            price = self.cost.stage_costs_s.get(stage.label)
            if price:
                self.clock.charge(to_us(price), FILTER, f"{stage.label} {msg.id}")
        return verdict, trace

    def settle(self, rec, rcpt, verdict, attempt, again, dest=None) -> None:
        m = self.metrics
        if (verdict.decision is Decision.TEMP_REJECT and rec.retry == "retry_once"
                and attempt == 0):
            again.append(rcpt)
            return
        m.verdicts[(rec.message.id, rcpt)] = verdict
        if verdict.decision is Decision.PASS:
            m.delivered += 1
        elif verdict.decision is Decision.BLOCK:
            m.blocked += 1
            if dest is not None and self.setup.receiver_policy == "spam_folder":
                self.world.server(dest).spam_folder[rcpt] += 1
        elif verdict.decision is Decision.TEMP_REJECT:
            m.temp_rejected += 1
        else:
            m.failure_notices += 1

    def deliver(self, msg, dest: str, group) -> None:
        transmit(msg.with_rcpt(group), len(group), self.session(dest), self.clock, self.cost)

    def sender_attempt(self, rec, rcpts, t, attempt, again) -> None:
        ctx = self.contexts[SENDER_SERVER]
        msg = rec.message
        outbound: Dict[str, list] = {}
        for rcpt in rcpts:
            dest = dns_resolve(rcpt.domain, self.world.dns)
            verdict, trace = self.filter(ctx, msg, rcpt, t)
            if dest is not None and Stage.RECEIVER_IDENT in trace:
                self.verify_destination(dest)
            self.settle(rec, rcpt, verdict, attempt, again)
            if verdict.decision is Decision.PASS:
                outbound.setdefault(dest, []).append(rcpt)
        for dest, group in outbound.items():
            self.deliver(msg, dest, group)
            for rcpt in group:
                self.world.server(dest).mailboxes[rcpt] += 1

    def receiver_attempt(self, rec, rcpts, t, attempt, again) -> None:
        msg = rec.message
        inbound: Dict[str, list] = {}
        for rcpt in rcpts:
            dest = dns_resolve(rcpt.domain, self.world.dns)
            if dest is None:
                # unroutable at A: bounced without ever reaching a filter
                verdict = Verdict(Decision.FAILURE_TO_SENDER, Stage.RECEIVER_IDENT,
                                  f"no mail server for {rcpt.domain}")
                self.settle(rec, rcpt, verdict, attempt, again)
            else:
                inbound.setdefault(dest, []).append(rcpt)
        for dest, group in inbound.items():
            self.deliver(msg, dest, group)
            received = msg.with_rcpt(group)
            ctx = self.contexts[dest]
            for rcpt in group:
                verdict, _ = self.filter(ctx, received, rcpt, t)
                self.settle(rec, rcpt, verdict, attempt, again, dest)
                if verdict.decision is Decision.PASS:
                    self.world.server(dest).mailboxes[rcpt] += 1

    def run(self) -> ScenarioMetrics:
        queue = _AttemptQueue(self.records)
        delay = self.setup.greylist_min_delay_s
        sender_side = self.spec.filter_location is Location.SENDER
        while queue:
            t, idx, rcpts, attempt = queue.pop()
            rec = self.records[idx]
            again: list = []
            if sender_side:
                self.sender_attempt(rec, rcpts, t, attempt, again)
            else:
                self.receiver_attempt(rec, rcpts, t, attempt, again)
            if again:
                queue.retry(t + delay, idx, again)
        for s in self.sessions.values():
            close_session(s, self.clock, self.cost)

        m = self.metrics
        m.total_us = self.clock.total_us()
        m.filter_us = self.clock.total_us(FILTER)
        m.network_us = self.clock.total_us(NETWORK)
        m.filter_invocations = sum(c.content_executions for c in self.contexts.values())
        m.cache_hits = sum(c.cache_hits for c in self.contexts.values())
        m.sessions_opened = len(self.sessions)
        m.bytes_transferred = sum(s.bytes_sent for s in self.sessions.values())
        m.attempted = sum(len(r.message.rcpt) for r in self.records)
        assert m.total_us == m.filter_us + m.network_us == self.clock.now_us
        assert (m.delivered + m.blocked + m.temp_rejected + m.failure_notices
                == m.attempted)
        return m


def run_scenario(spec: ScenarioSpec, world: World, corpus: Sequence[CorpusRecord],
                 setup: Optional[FilterSetup] = None) -> ScenarioMetrics:
    """Run one placement scenario over the first ``spec.n_messages`` records.

    The world is copied, so mailbox counts in the caller's world are not
    touched. Without an explicit ``setup`` the token statistics are trained
    on the same records, using their ground-truth labels.
    """
    for name in (SENDER_SERVER, *spec.layout):
        if name not in world.servers:
            raise WorldMismatch(f"scenario {spec.id} needs server {name}")
        if name != SENDER_SERVER and not world.servers[name].domains:
            raise WorldMismatch(f"server {name} hosts no domain")
    try:
        world.check_consistent()
    except ValueError as exc:
        raise WorldMismatch(str(exc)) from None
    if len(corpus) < spec.n_messages:
        raise CorpusTooSmall(f"scenario needs {spec.n_messages} records, corpus has {len(corpus)}")

    records = list(corpus[:spec.n_messages])
    if setup is None:
        setup = FilterSetup.trained(records)
    world = copy.deepcopy(world)
    domains = [min(world.servers[name].domains) for name in spec.layout]
    records = assign_destinations(records, domains)
    return _Run(spec, world, records, setup).run()


def speedup(receiver: ScenarioMetrics, sender: ScenarioMetrics) -> float:
    """Receiver-side filter time over sender-side filter time (inf if the latter is 0)."""
    if sender.filter_us == 0:
        return math.inf
    return receiver.filter_us / sender.filter_us


@dataclass
class ComparisonTable:
    rows: List[ScenarioMetrics]
    violations: List[str] = field(default_factory=list)

    def get(self, scenario: int, profile: Optional[str] = None) -> ScenarioMetrics:
        for m in self.rows:
            if m.scenario == scenario and (profile is None or m.profile == profile):
                return m
        raise KeyError((scenario, profile))

    @property
    def profiles(self) -> List[str]:
        return list(dict.fromkeys(m.profile for m in self.rows))

    @property
    def ordering_ok(self) -> bool:
        return not self.violations

    def assert_ordering(self) -> None:
        if self.violations:
            raise OrderingViolation("; ".join(self.violations))

    def speedup(self, profile: Optional[str] = None) -> float:
        return speedup(self.get(1, profile), self.get(3, profile))

    def to_csv(self) -> str:
        return CSV_HEADER + "\n" + "".join(m.csv_row() + "\n" for m in self.rows)

    def to_plot_data(self) -> str:
        """Whitespace-separated table for a grouped bar chart (one row per profile)."""
        buf = io.StringIO()
        buf.write("# total virtual seconds by scenario\n")
        buf.write("# profile scenario1 scenario2 scenario3 scenario4\n")
        for profile in self.profiles:
            cells = []
            for sid in (1, 2, 3, 4):
                try:
                    cells.append(format_us(self.get(sid, profile).total_us))
                except KeyError:
                    cells.append("NaN")
            buf.write(f"{profile} {' '.join(cells)}\n")
        return buf.getvalue()


def check_ordering(rows: Iterable[ScenarioMetrics]) -> List[str]:
    """Describe every breach of total(3) <= total(4) <= min(total(1), total(2))."""
    by_profile: Dict[str, Dict[int, int]] = {}
    for m in rows:
        by_profile.setdefault(m.profile, {})[m.scenario] = m.total_us
    problems = []
    for profile, t in by_profile.items():
        if not {1, 2, 3, 4} <= set(t):
            continue
        if t[3] > t[4]:
            problems.append(f"{profile}: total(3)={format_us(t[3])} > total(4)={format_us(t[4])}")
        low = min(t[1], t[2])
        if t[4] > low:
            problems.append(f"{profile}: total(4)={format_us(t[4])} > "
                            f"min(total(1), total(2))={format_us(low)}")
    return problems


def compare_scenarios(specs: Sequence[ScenarioSpec], world: World,
                      corpus: Sequence[CorpusRecord],
                      setup: Optional[FilterSetup] = None,
                      parallel: bool = False) -> ComparisonTable:
    """Run each spec on its own copy of the world and check the ordering."""
    specs = list(specs)
    if not specs:
        raise ValueError("no scenarios to compare")
    if len({(s.n_messages, s.seed) for s in specs}) != 1:
        raise ValueError("compared scenarios must share corpus size and seed")
    if setup is None:
        n = specs[0].n_messages
        if len(corpus) < n:
            raise CorpusTooSmall(f"scenario needs {n} records, corpus has {len(corpus)}")
        setup = FilterSetup.trained(list(corpus[:n]))

    def one(spec):
        return run_scenario(spec, world, corpus, setup)

    if parallel:
        with ThreadPoolExecutor(max_workers=4) as pool:
            rows = list(pool.map(one, specs))
    else:
        rows = [one(s) for s in specs]
    table = ComparisonTable(rows, check_ordering(rows))
    for v in table.violations:
        log.warning("ordering violation: %s", v)
    return table


def scenario_specs(n_messages: int = 1000, profiles: Sequence[Union[str, CostModel]] = ("dspam",),
                   seed: int = 0) -> List[ScenarioSpec]:
    return [ScenarioSpec(sid, n_messages, p, seed=seed) for p in profiles for sid in (1, 2, 3, 4)]
