"""Labeled corpora: deterministic generation and JSON Lines persistence,
plus on-disk white/black lists, rules and token statistics."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, NamedTuple, Sequence, Tuple, Union

from .filters import AddressList, RuleSet, TokenStats, token_stats_dumps, token_stats_loads
from .message import EmailMessage, MalformedAddress, MalformedIp, parse_address, parse_ip

PathLike = Union[str, Path]

LABELS = ("spam", "ham")
RETRY_POLICIES = ("none", "retry_once")
FIELDS = ("id", "sender_ip", "helo", "from", "rcpt", "subject", "body",
          "label", "retry", "submitted_at")


class InvalidParams(ValueError):
    pass


class CorpusParseError(ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


@dataclass(frozen=True)
class CorpusRecord:
    message: EmailMessage
    label: str
    retry: str = "none"

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"label must be spam or ham, got {self.label!r}")
        if self.retry not in RETRY_POLICIES:
            raise ValueError(f"retry must be none or retry_once, got {self.retry!r}")

    @property
    def is_spam(self) -> bool:
        return self.label == "spam"


@dataclass(frozen=True)
class GeneratorParams:
    seed: int = 0
    count: int = 1000
    spam_ratio: float = 1.0
    distinct_spam_bodies: int = 1
    spam_vocab: int = 60
    ham_vocab: int = 200
    body_words: Tuple[int, int] = (20, 60)
    rcpt_per_message: Tuple[int, int] = (1, 1)
    rcpt_domains: Tuple[str, ...] = ("b.example",)
    rcpt_pool: int = 500
    spam_senders: int = 1
    ham_senders: int = 20
    interval_s: float = 1.0

    def validate(self) -> int:
        """Check ranges and return the number of spam records."""
        if self.count < 1:
            raise InvalidParams("count must be at least 1")
        if not 0.0 <= self.spam_ratio <= 1.0:
            raise InvalidParams(f"spam_ratio must lie in [0, 1], got {self.spam_ratio}")
        n_spam = round(self.count * self.spam_ratio)
        if n_spam and not 1 <= self.distinct_spam_bodies <= n_spam:
            raise InvalidParams(
                f"distinct_spam_bodies must be between 1 and the spam count ({n_spam})")
        lo, hi = self.body_words
        if not 1 <= lo <= hi:
            raise InvalidParams("body_words must satisfy 1 <= min <= max")
        lo, hi = self.rcpt_per_message
        if not 1 <= lo <= hi <= self.rcpt_pool:
            raise InvalidParams("rcpt_per_message must satisfy 1 <= min <= max <= rcpt_pool")
        if self.spam_vocab < 5 or self.ham_vocab < 5:
            raise InvalidParams("vocabularies need at least 5 words")
        if self.spam_senders < 1 or self.ham_senders < 1 or self.interval_s < 0:
            raise InvalidParams("sender counts must be positive and interval non-negative")
        if not self.rcpt_domains:
            raise InvalidParams("at least one recipient domain is required")
        return n_spam


_SYLLABLES = ("ka", "lo", "mi", "ne", "ru", "sa", "to", "vi", "ze", "po",
              "qua", "dre", "fli", "gor", "hu", "jan", "bex", "cul", "wim", "yot")


def _vocabulary(rng: random.Random, size: int, taken: set) -> List[str]:
    words = []
    while len(words) < size:
        w = "".join(rng.choice(_SYLLABLES) for _ in range(rng.randint(2, 4)))
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


def spam_sender_ip(i: int) -> str:
    return f"203.0.113.{i + 1}"


def ham_sender_ip(i: int) -> str:
    return f"198.51.100.{i + 1}"


def generate_corpus(params: GeneratorParams) -> List[CorpusRecord]:
    """Build a reproducible labeled corpus.

    Spam bodies come from ``distinct_spam_bodies`` fixed templates, each
    carrying its own marker token, so identical-template messages share one
    content digest. Spam is never retried; ham retries once. All randomness
    comes from ``params.seed``.
    """
    n_spam = params.validate()
    rng = random.Random(params.seed)
    taken: set = set()
    spam_words = _vocabulary(rng, params.spam_vocab, taken)
    ham_words = _vocabulary(rng, params.ham_vocab, taken)

    templates = []
    for k in range(max(params.distinct_spam_bodies, 1) if n_spam else 0):
        n_words = rng.randint(*params.body_words)
        subject = " ".join(rng.choice(spam_words) for _ in range(4)) + f" tpl{k:04d}"
        body = " ".join(rng.choice(spam_words) for _ in range(n_words)) + f"\nref tpl{k:04d}"
        templates.append((subject, body))

    spam_slots = set(rng.sample(range(params.count), n_spam))
    records = []
    spam_seen = 0
    for i in range(params.count):
        n_rcpt = rng.randint(*params.rcpt_per_message)
        users = rng.sample(range(params.rcpt_pool), n_rcpt)
        rcpt = tuple(parse_address(f"user{u}@{rng.choice(params.rcpt_domains)}") for u in users)
        if i in spam_slots:
            subject, body = templates[spam_seen % len(templates)]
            spam_seen += 1
            j = rng.randrange(params.spam_senders)
            ip = spam_sender_ip(j)
            sender = parse_address(f"deals{j}@bulk-offers.example")
            helo = "mx.bulk-offers.example"
            label, retry = "spam", "none"
        else:
            n_words = rng.randint(*params.body_words)
            subject = " ".join(rng.choice(ham_words) for _ in range(4))
            body = " ".join(rng.choice(ham_words) for _ in range(n_words))
            j = rng.randrange(params.ham_senders)
            ip = ham_sender_ip(j)
            sender = parse_address(f"staff{j}@a.example")
            helo = "mail.a.example"
            label, retry = "ham", "retry_once"
        msg = EmailMessage(f"msg{i:06d}", parse_ip(ip), helo, sender, rcpt,
                           subject, body, round(i * params.interval_s, 6))
        records.append(CorpusRecord(msg, label, retry))
    return records


def record_to_json(rec: CorpusRecord) -> str:
    m = rec.message
    obj = {
        "id": m.id,
        "sender_ip": str(m.sender_ip),
        "helo": m.helo_domain,
        "from": str(m.from_addr),
        "rcpt": ",".join(str(r) for r in m.rcpt),
        "subject": m.subject,
        "body": m.body,
        "label": rec.label,
        "retry": rec.retry,
        "submitted_at": m.submitted_at,
    }
    return json.dumps(obj, ensure_ascii=False)


def record_from_json(line: str, lineno: int = 1) -> CorpusRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CorpusParseError(lineno, f"invalid JSON: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise CorpusParseError(lineno, "record must be a JSON object")
    missing = [f for f in FIELDS if f not in obj]
    if missing:
        raise CorpusParseError(lineno, f"missing fields: {', '.join(missing)}")
    extra = sorted(set(obj) - set(FIELDS))
    if extra:
        raise CorpusParseError(lineno, f"unknown fields: {', '.join(extra)}")
    try:
        rcpt_text = obj["rcpt"].strip()
        if not rcpt_text:
            raise ValueError("empty recipient list")
        rcpt = tuple(parse_address(r) for r in rcpt_text.split(","))
        submitted = obj["submitted_at"]
        if isinstance(submitted, bool) or not isinstance(submitted, (int, float)):
            raise ValueError("submitted_at must be a number")
        msg = EmailMessage(str(obj["id"]), parse_ip(obj["sender_ip"]), obj["helo"],
                           parse_address(obj["from"]), rcpt, obj["subject"],
                           obj["body"], float(submitted))
        return CorpusRecord(msg, obj["label"], obj["retry"])
    except (ValueError, TypeError, AttributeError, MalformedAddress, MalformedIp) as exc:
        raise CorpusParseError(lineno, str(exc)) from None


def dumps_corpus(records: Iterable[CorpusRecord]) -> str:
    return "".join(record_to_json(r) + "\n" for r in records)


def loads_corpus(text: str) -> List[CorpusRecord]:
    records = []
    ids = set()
    for lineno, line in enumerate(text.split("\n"), 1):
        if not line.strip():
            continue
        rec = record_from_json(line, lineno)
        if rec.message.id in ids:
            raise CorpusParseError(lineno, f"duplicate id {rec.message.id}")
        ids.add(rec.message.id)
        records.append(rec)
    return records


def save_corpus(records: Iterable[CorpusRecord], path: PathLike) -> None:
    Path(path).write_text(dumps_corpus(records), encoding="utf-8", newline="\n")


def load_corpus(path: PathLike) -> List[CorpusRecord]:
    return loads_corpus(Path(path).read_text(encoding="utf-8"))


class FilterLists(NamedTuple):
    whitelist: AddressList
    blacklist: AddressList
    rules: RuleSet
    stats: TokenStats


LIST_FILES = {
    "whitelist": "whitelist.txt",
    "blacklist": "blacklist.txt",
    "rules": "rules.tsv",
    "stats": "tokens.tsv",
}


def load_lists(directory: PathLike) -> FilterLists:
    """Read the four filter files from ``directory``; absent files load empty."""
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"list directory not found: {d}")

    def read(name):
        p = d / LIST_FILES[name]
        return p.read_text(encoding="utf-8") if p.exists() else None

    wl, bl, rules, stats = (read(k) for k in ("whitelist", "blacklist", "rules", "stats"))
    return FilterLists(
        AddressList.loads(wl or ""),
        AddressList.loads(bl or ""),
        RuleSet.loads(rules or ""),
        token_stats_loads(stats) if stats else TokenStats(),
    )


def save_lists(lists: FilterLists, directory: PathLike) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    texts = {
        "whitelist": lists.whitelist.dumps(),
        "blacklist": lists.blacklist.dumps(),
        "rules": lists.rules.dumps(),
        "stats": token_stats_dumps(lists.stats),
    }
    for key, text in texts.items():
        (d / LIST_FILES[key]).write_text(text, encoding="utf-8", newline="\n")


def training_pairs(records: Sequence[CorpusRecord]):
    return [(r.message, r.label) for r in records]
