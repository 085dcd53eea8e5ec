"""Virtual-time model of mail servers, DNS and SMTP sessions.

Time is kept as an integer count of microseconds so that totals are exact
and reports are identical across runs. Every advance of the clock is
recorded in an audit ledger.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Dict, FrozenSet, List, NamedTuple, Optional

from .message import EmailMessage, IpAddress, parse_ip

US_PER_S = 1_000_000

NETWORK = "network"
FILTER = "filter"


class UnknownServer(KeyError):
    pass


class SessionClosed(RuntimeError):
    pass


class WorldParseError(ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line


def to_us(seconds_per_unit: float, units: int = 1) -> int:
    """Exact fixed-point product, rounded half-even to the microsecond."""
    exact = Decimal(repr(seconds_per_unit)) * units * US_PER_S
    return int(exact.to_integral_value(rounding=ROUND_HALF_EVEN))


def format_us(us: int) -> str:
    """Render microseconds as seconds with six decimals, e.g. ``250.000000``."""
    sign = "-" if us < 0 else ""
    q, r = divmod(abs(us), US_PER_S)
    return f"{sign}{q}.{r:06d}"


class Charge(NamedTuple):
    category: str
    label: str
    us: int


class VirtualClock:
    """Monotone simulated clock, advanced only by charges."""

    def __init__(self):
        self.now_us = 0
        self.ledger: List[Charge] = []

    @property
    def now(self) -> float:
        return self.now_us / US_PER_S

    def charge(self, us: int, category: str, label: str) -> int:
        if us < 0:
            raise ValueError("negative charge")
        self.now_us += us
        self.ledger.append(Charge(category, label, us))
        return us

    def total_us(self, category: Optional[str] = None) -> int:
        return sum(c.us for c in self.ledger if category is None or c.category == category)


@dataclass(frozen=True)
class CostModel:
    """Virtual-time prices, in seconds.

    ``filter_cost_s`` is one full content-filter execution. ``stage_costs_s``
    optionally prices the cheap stages (list lookups, DNS) per entry; it is
    empty by default so only content filtering is charged.
    """

    profile: str = "custom"
    session_setup_s: float = 0.05
    per_command_s: float = 0.001
    per_byte_s: float = 1e-6
    filter_cost_s: float = 0.0
    stage_costs_s: Dict[str, float] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("session_setup_s", "per_command_s", "per_byte_s", "filter_cost_s"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if any(v < 0 for v in self.stage_costs_s.values()):
            raise ValueError("stage costs must be non-negative")

    def with_overrides(self, **overrides) -> CostModel:
        """Copy with some prices replaced.

        The profile keeps its name unless its filter cost is overridden.
        """
        if not overrides:
            return self
        name = self.profile
        if "filter_cost_s" in overrides and overrides["filter_cost_s"] != self.filter_cost_s:
            name = "custom"
        return replace(self, profile=overrides.pop("profile", name), **overrides)


# Per-execution filter cost = measured time for 1000 messages / 1000.
PROFILES: Dict[str, CostModel] = {
    "hotmail": CostModel("hotmail", filter_cost_s=1e-4),
    "aol": CostModel("aol", filter_cost_s=9e-5),
    "microsoft": CostModel("microsoft", filter_cost_s=1e-4),
    "trec": CostModel("trec", filter_cost_s=0.2),
    "dspam": CostModel("dspam", filter_cost_s=0.25),
}


def cost_profile(name: str, **overrides) -> CostModel:
    if name == "custom":
        return CostModel(**overrides)
    try:
        base = PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown cost profile {name!r}; "
                         f"choose from {', '.join([*PROFILES, 'custom'])}") from None
    return base.with_overrides(**overrides)


@dataclass
class DnsDirectory:
    forward: Dict[str, str] = field(default_factory=dict)
    reverse: Dict[IpAddress, str] = field(default_factory=dict)


def dns_resolve(domain: str, dns: DnsDirectory) -> Optional[str]:
    """Server name hosting ``domain``, or None when not found."""
    return dns.forward.get(domain.lower())


def dns_reverse(ip: IpAddress, dns: DnsDirectory) -> Optional[str]:
    return dns.reverse.get(ip)


@dataclass
class MailServer:
    name: str
    domains: FrozenSet[str] = frozenset()
    clients: FrozenSet[IpAddress] = frozenset()
    context: object = None
    mailboxes: Counter = field(default_factory=Counter)
    spam_folder: Counter = field(default_factory=Counter)


@dataclass
class World:
    servers: Dict[str, MailServer] = field(default_factory=dict)
    dns: DnsDirectory = field(default_factory=DnsDirectory)

    def add_server(self, name: str, domains=(), clients=()) -> MailServer:
        if name in self.servers:
            raise ValueError(f"duplicate server {name!r}")
        server = MailServer(name, frozenset(d.lower() for d in domains),
                            frozenset(parse_ip(str(c)) for c in clients))
        for d in server.domains:
            owner = self.dns.forward.get(d)
            if owner is not None:
                raise ValueError(f"domain {d} already hosted by {owner}")
            self.dns.forward[d] = name
        self.servers[name] = server
        return server

    def add_ptr(self, ip, domain: str) -> None:
        self.dns.reverse[parse_ip(str(ip))] = domain.lower()

    def server(self, name: str) -> MailServer:
        try:
            return self.servers[name]
        except KeyError:
            raise UnknownServer(name) from None

    def check_consistent(self) -> None:
        for name, server in self.servers.items():
            for d in server.domains:
                if self.dns.forward.get(d) != name:
                    raise ValueError(f"{d} does not resolve to {name}")
        for d, name in self.dns.forward.items():
            if d not in self.server(name).domains:
                raise ValueError(f"{d} resolves to {name}, which does not host it")

    @classmethod
    def loads(cls, text: str) -> World:
        world = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            words = line.split()
            try:
                if words[0] == "server" and len(words) >= 2:
                    opts = {}
                    for w in words[2:]:
                        key, sep, value = w.partition("=")
                        if not sep or key not in ("domains", "clients"):
                            raise ValueError(f"bad server option {w!r}")
                        opts[key] = [v for v in value.split(",") if v]
                    world.add_server(words[1], opts.get("domains", ()), opts.get("clients", ()))
                elif words[0] == "ptr" and len(words) == 3:
                    world.add_ptr(words[1], words[2])
                else:
                    raise ValueError(f"unrecognized line {line!r}")
            except ValueError as exc:
                raise WorldParseError(lineno, str(exc)) from None
        return world

    def dumps(self) -> str:
        out = []
        for s in self.servers.values():
            out.append(f"server {s.name} domains={','.join(sorted(s.domains))} "
                       f"clients={','.join(str(c) for c in sorted(s.clients))}\n")
        for ip in sorted(self.dns.reverse):
            out.append(f"ptr {ip} {self.dns.reverse[ip]}\n")
        return "".join(out)


@dataclass
class SmtpSession:
    src: str
    dst: str
    opened_at_us: int
    commands: int = 0
    bytes_sent: int = 0
    open: bool = True


def establish_session(world: World, a: str, b: str, clock: VirtualClock,
                      cost: CostModel) -> SmtpSession:
    """Connect ``a`` to ``b`` and complete the greeting/HELO exchange."""
    world.server(a)
    world.server(b)
    if a == b:
        raise ValueError("a server cannot open a session to itself")
    clock.charge(to_us(cost.session_setup_s), NETWORK, f"connect {a}->{b}")
    return SmtpSession(a, b, clock.now_us)


def transmit(msg: EmailMessage, rcpt_count: int, session: SmtpSession,
             clock: VirtualClock, cost: CostModel) -> float:
    """MAIL FROM, one RCPT TO per recipient, DATA with the encoded message."""
    if not session.open:
        raise SessionClosed(f"{session.src}->{session.dst} is closed")
    if rcpt_count < 1:
        raise ValueError("rcpt_count must be at least 1")
    commands = 2 + rcpt_count
    us = to_us(cost.per_command_s, commands) + to_us(cost.per_byte_s, msg.size_bytes)
    clock.charge(us, NETWORK, f"transmit {msg.id} {session.src}->{session.dst}")
    session.commands += commands
    session.bytes_sent += msg.size_bytes
    return us / US_PER_S


def close_session(session: SmtpSession, clock: VirtualClock, cost: CostModel) -> None:
    if not session.open:
        return
    clock.charge(to_us(cost.per_command_s), NETWORK, f"quit {session.src}->{session.dst}")
    session.commands += 1
    session.open = False


def charge_filter(clock: VirtualClock, cost: CostModel, executions: int,
                  label: str = "content filter") -> float:
    if executions < 0:
        raise ValueError("executions must be non-negative")
    us = to_us(cost.filter_cost_s, executions)
    clock.charge(us, FILTER, f"{label} x{executions}")
    return us / US_PER_S
