"""Filter families: list checks, greylisting, Bayesian content scoring,
literal rules, reverse lookup and the per-client send counter.

List, rule, Bayes and reverse-lookup checks are pure. Greylist and counter
checks mutate the state object they are given.
"""

from __future__ import annotations

import bisect
import enum
import math
import re
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, Iterable, List, NamedTuple, Optional, Set, Tuple, Union

from .message import (
    Decision,
    EmailAddress,
    EmailMessage,
    IpAddress,
    MalformedAddress,
    MalformedIp,
    normalize_text,
    parse_address,
    parse_ip,
)

if TYPE_CHECKING:
    from .netsim import DnsDirectory

ListKey = Union[EmailAddress, IpAddress, str]

_DOTTED_DIGITS = re.compile(r"^[0-9.]+$")
_TOKEN = re.compile(r"[^\W_]{3,}")


class ListParseError(ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class EmptyCorpus(ValueError):
    pass


# ---------------------------------------------------------------------------
# White/black lists


def parse_list_key(text: str) -> ListKey:
    """Classify one list entry as an address, an IPv4 address or a domain."""
    text = text.strip()
    if "@" in text:
        return parse_address(text)
    if _DOTTED_DIGITS.match(text):
        return parse_ip(text)
    # A bare domain is validated with a throwaway local part.
    return EmailAddress("x", text).domain


def format_list_key(key: ListKey) -> str:
    return str(key)


def _key_sort(key: ListKey):
    kind = 0 if isinstance(key, EmailAddress) else 1 if isinstance(key, str) else 2
    return (kind, str(key).casefold())


@dataclass
class AddressList:
    entries: Set[ListKey] = field(default_factory=set)

    def __contains__(self, key) -> bool:
        return key in self.entries

    def __len__(self):
        return len(self.entries)

    def add(self, key: Union[ListKey, str]) -> None:
        if isinstance(key, str):
            key = parse_list_key(key)
        self.entries.add(key)

    @classmethod
    def of(cls, *keys: str) -> AddressList:
        lst = cls()
        for key in keys:
            lst.add(key)
        return lst

    @classmethod
    def loads(cls, text: str) -> AddressList:
        lst = cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                lst.add(parse_list_key(line))
            except (MalformedAddress, MalformedIp) as exc:
                raise ListParseError(lineno, str(exc)) from None
        return lst

    def dumps(self) -> str:
        return "".join(format_list_key(k) + "\n" for k in sorted(self.entries, key=_key_sort))


def whitelist_check(from_addr: EmailAddress, lst: AddressList) -> bool:
    return from_addr in lst or from_addr.domain in lst


def blacklist_check(ip: IpAddress, domain: str, lst: AddressList,
                    address: Optional[EmailAddress] = None) -> bool:
    """True when the sending IP or the sender domain is listed.

    ``address`` lets full-address entries block a single mailbox too.
    """
    if ip in lst or domain.lower() in lst:
        return True
    return address is not None and address in lst


# ---------------------------------------------------------------------------
# Greylisting


class GreylistKey(NamedTuple):
    sender_ip: IpAddress
    from_addr: EmailAddress
    rcpt: EmailAddress


@dataclass
class GreylistRecord:
    first_seen: float
    accepted: bool = False


@dataclass
class GreylistState:
    min_delay_s: float = 120.0
    max_lifetime_s: float = 86400.0
    records: Dict[GreylistKey, GreylistRecord] = field(default_factory=dict)

    def purge(self, now: float) -> int:
        stale = [k for k, r in self.records.items()
                 if now - r.first_seen > self.max_lifetime_s]
        for k in stale:
            del self.records[k]
        return len(stale)


def greylist_check(key: GreylistKey, now: float, state: GreylistState) -> Decision:
    rec = state.records.get(key)
    if rec is None or now - rec.first_seen > state.max_lifetime_s:
        state.records[key] = GreylistRecord(first_seen=now)
        return Decision.TEMP_REJECT
    if now - rec.first_seen >= state.min_delay_s:
        rec.accepted = True
        return Decision.PASS
    return Decision.TEMP_REJECT


# ---------------------------------------------------------------------------
# Bayesian content scoring


def tokenize(text: str) -> Set[str]:
    """Case-folded maximal runs of letters/digits, three characters or more."""
    return set(_TOKEN.findall(text.casefold()))


def message_tokens(msg: EmailMessage) -> Set[str]:
    return tokenize(msg.subject) | tokenize(msg.body)


@dataclass
class TokenStats:
    counts: Dict[str, List[int]] = field(default_factory=dict)
    spam_msgs: int = 0
    ham_msgs: int = 0

    def spam_count(self, token: str) -> int:
        return self.counts.get(token, (0, 0))[0]

    def ham_count(self, token: str) -> int:
        return self.counts.get(token, (0, 0))[1]

    def add(self, tokens: Iterable[str], is_spam: bool) -> None:
        col = 0 if is_spam else 1
        for tok in set(tokens):
            self.counts.setdefault(tok, [0, 0])[col] += 1
        if is_spam:
            self.spam_msgs += 1
        else:
            self.ham_msgs += 1


@dataclass(frozen=True)
class BayesParams:
    p_unknown: float = 0.4
    floor: float = 0.01
    ceil: float = 0.99
    max_tokens: int = 15
    threshold: float = 0.9


def bayes_train(corpus: Iterable[Tuple[EmailMessage, str]],
                stats: Optional[TokenStats] = None) -> TokenStats:
    """Count per-message token presence for each label ("spam" or "ham")."""
    stats = stats if stats is not None else TokenStats()
    seen = 0
    for msg, label in corpus:
        if label not in ("spam", "ham"):
            raise ValueError(f"unknown label {label!r}")
        stats.add(message_tokens(msg), label == "spam")
        seen += 1
    if not seen:
        raise EmptyCorpus("cannot train on an empty corpus")
    return stats


def token_probability(token: str, stats: TokenStats,
                      params: BayesParams = BayesParams()) -> float:
    spam, ham = stats.counts.get(token, (0, 0))
    spam_f = spam / stats.spam_msgs if stats.spam_msgs else 0.0
    ham_f = ham / stats.ham_msgs if stats.ham_msgs else 0.0
    if spam_f + ham_f == 0:
        return params.p_unknown
    p = spam_f / (spam_f + ham_f)
    return min(max(p, params.floor), params.ceil)


def most_significant(probs: Dict[str, float], n: int) -> List[float]:
    """The n probabilities farthest from 0.5; ties go to the smaller token.

    Distances are rounded so that float noise (0.6 vs 0.4) cannot break a tie.
    """
    ranked = sorted(probs.items(), key=lambda kv: (-round(abs(kv[1] - 0.5), 12), kv[0]))
    return [p for _, p in ranked[:n]]


def _drop_complements(probs: List[float]) -> List[float]:
    """Remove pairs (p, 1 - p); each scales both products by p(1 - p)."""
    waiting: Dict[float, List[int]] = {}
    keep = [True] * len(probs)
    for i, p in enumerate(probs):
        mates = waiting.get(round(1.0 - p, 12))
        if mates:
            keep[i] = keep[mates.pop()] = False
        else:
            waiting.setdefault(round(p, 12), []).append(i)
    return [p for p, k in zip(probs, keep) if k]


def combine(probs: Iterable[float]) -> float:
    """Naive-Bayes combination P = prod(p) / (prod(p) + prod(1 - p)).

    Evaluated in log space; probabilities of exactly 0 or 1 are handled by
    the limits of the formula.
    """
    probs = list(probs)
    if not probs:
        return 0.5
    if any(p == 0.0 for p in probs):
        return 0.0 if all(p < 1.0 for p in probs) else 0.5
    if any(p == 1.0 for p in probs):
        return 1.0
    probs = _drop_complements(probs)
    if not probs:
        return 0.5
    log_s = math.fsum(math.log(p) for p in probs)
    log_h = math.fsum(math.log1p(-p) for p in probs)
    # P = 1 / (1 + exp(log_h - log_s))
    d = log_h - log_s
    if d > 700:
        return 0.0
    return 1.0 / (1.0 + math.exp(d))


def score_tokens(tokens: Iterable[str], stats: TokenStats,
                 params: BayesParams = BayesParams()) -> float:
    probs = {t: token_probability(t, stats, params) for t in set(tokens)}
    return combine(most_significant(probs, params.max_tokens))


def bayes_score(msg: EmailMessage, stats: TokenStats,
                params: BayesParams = BayesParams()) -> float:
    return score_tokens(message_tokens(msg), stats, params)


# ---------------------------------------------------------------------------
# Rules


RULE_FIELDS = ("subject", "body", "from_domain", "helo")
CONTENT_FIELDS = frozenset({"subject", "body"})
HEADER_FIELDS = frozenset({"from_domain", "helo"})


@dataclass(frozen=True)
class Rule:
    field: str
    pattern: str
    action: Decision

    def __post_init__(self):
        if self.field not in RULE_FIELDS:
            raise ValueError(f"unknown rule field {self.field!r}")
        if self.action not in (Decision.PASS, Decision.BLOCK):
            raise ValueError("rule action must be Pass or Block")

    def matches(self, msg: EmailMessage) -> bool:
        # Whitespace-normalized so that content rules agree with the digest.
        return normalize_text(self.pattern) in normalize_text(_field_value(msg, self.field))


def _field_value(msg: EmailMessage, name: str) -> str:
    if name == "subject":
        return msg.subject
    if name == "body":
        return msg.body
    if name == "from_domain":
        return msg.from_addr.domain
    return msg.helo_domain


@dataclass
class RuleSet:
    rules: List[Rule] = field(default_factory=list)

    def __iter__(self):
        return iter(self.rules)

    def __len__(self):
        return len(self.rules)

    @classmethod
    def loads(cls, text: str) -> RuleSet:
        rules = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ListParseError(lineno, "expected field<TAB>pattern<TAB>action")
            fld, pattern, action = parts
            try:
                rules.append(Rule(fld.strip(), pattern, Decision(action.strip())))
            except ValueError as exc:
                raise ListParseError(lineno, str(exc)) from None
        return cls(rules)

    def dumps(self) -> str:
        return "".join(f"{r.field}\t{r.pattern}\t{r.action.value}\n" for r in self.rules)


def first_match(msg: EmailMessage, rules: RuleSet,
                fields: Iterable[str] = RULE_FIELDS) -> Optional[int]:
    fields = frozenset(fields)
    for i, rule in enumerate(rules):
        if rule.field in fields and rule.matches(msg):
            return i
    return None


def rules_apply(msg: EmailMessage, rules: RuleSet) -> Tuple[Decision, Optional[int]]:
    idx = first_match(msg, rules)
    if idx is None:
        return Decision.PASS, None
    return rules.rules[idx].action, idx


# ---------------------------------------------------------------------------
# Reverse lookup


class ReverseMode(enum.Enum):
    STRICT = "strict"
    LENIENT = "lenient"


class ReverseOutcome(NamedTuple):
    decision: Decision
    confirmed: bool


def reverse_lookup_check(ip: IpAddress, helo_domain: str, dns: DnsDirectory,
                         mode: ReverseMode = ReverseMode.STRICT) -> ReverseOutcome:
    """Confirm the HELO name against the PTR record of the connecting IP.

    The PTR name may equal the HELO name or be one of its parent domains.
    Lenient mode lets unconfirmed senders through with ``confirmed=False``.
    """
    ptr = dns.reverse.get(ip)
    helo = helo_domain.lower()
    confirmed = ptr is not None and (helo == ptr or helo.endswith("." + ptr))
    if confirmed or mode is ReverseMode.LENIENT:
        return ReverseOutcome(Decision.PASS, confirmed)
    return ReverseOutcome(Decision.BLOCK, False)


# ---------------------------------------------------------------------------
# Counter technique


@dataclass
class CounterState:
    """Sliding-window outbound limit per client IP.

    A send at ``now`` counts against the half-open window (now - window_s, now].
    """

    limit: int = 100
    window_s: float = 3600.0
    sends: Dict[IpAddress, List[float]] = field(default_factory=dict)


def counter_check(client: IpAddress, now: float, state: CounterState) -> Decision:
    stamps = state.sends.setdefault(client, [])
    cutoff = now - state.window_s
    # drop everything at or before the cutoff
    del stamps[:bisect.bisect_right(stamps, cutoff)]
    if len(stamps) < state.limit:
        stamps.append(now)
        return Decision.PASS
    return Decision.BLOCK


def token_stats_dumps(stats: TokenStats) -> str:
    lines = [f"__totals__\t{stats.spam_msgs}\t{stats.ham_msgs}\n"]
    for tok in sorted(stats.counts):
        s, h = stats.counts[tok]
        lines.append(f"{tok}\t{s}\t{h}\n")
    return "".join(lines)


def token_stats_loads(text: str) -> TokenStats:
    stats = TokenStats()
    lines = text.splitlines()
    if not lines:
        raise ListParseError(1, "missing totals header")
    head = lines[0].split("\t")
    if len(head) != 3 or head[0] != "__totals__":
        raise ListParseError(1, "expected __totals__<TAB>spam_msgs<TAB>ham_msgs")
    try:
        stats.spam_msgs, stats.ham_msgs = int(head[1]), int(head[2])
    except ValueError:
        raise ListParseError(1, "totals must be integers") from None
    for lineno, line in enumerate(lines[1:], 2):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ListParseError(lineno, "expected token<TAB>spam<TAB>ham")
        try:
            s, h = int(parts[1]), int(parts[2])
        except ValueError:
            raise ListParseError(lineno, "counts must be integers") from None
        if s < 0 or h < 0 or s > stats.spam_msgs or h > stats.ham_msgs:
            raise ListParseError(lineno, "count out of range")
        stats.counts[parts[0]] = [s, h]
    return stats
