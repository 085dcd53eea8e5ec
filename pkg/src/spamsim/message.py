"""Addresses, messages, digests and verdicts shared by the rest of the package."""

from __future__ import annotations

import enum
import hashlib
import ipaddress
import re
from dataclasses import dataclass, field
from typing import Iterable, Tuple

IpAddress = ipaddress.IPv4Address

_WS_RUN = re.compile(r"\s+")


class MalformedAddress(ValueError):
    pass


class MalformedIp(ValueError):
    pass


def _valid_domain(domain: str) -> bool:
    if not domain or "@" in domain or _WS_RUN.search(domain):
        return False
    dot = domain.find(".", 1)
    return 0 < dot < len(domain) - 1


class EmailAddress:
    """A mailbox address.

    The local part keeps its case for display; comparison and hashing use the
    case-folded local part and the lowercased domain.
    """

    __slots__ = ("local", "domain")

    def __init__(self, local: str, domain: str):
        domain = domain.lower()
        if not local or "@" in local or _WS_RUN.search(local):
            raise MalformedAddress(f"bad local part: {local!r}")
        if not _valid_domain(domain):
            raise MalformedAddress(f"bad domain: {domain!r}")
        self.local = local
        self.domain = domain

    def _key(self) -> Tuple[str, str]:
        return (self.local.casefold(), self.domain)

    def __eq__(self, other):
        if not isinstance(other, EmailAddress):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def __lt__(self, other: EmailAddress) -> bool:
        return self._key() < other._key()

    def __str__(self):
        return f"{self.local}@{self.domain}"

    def __repr__(self):
        return f"EmailAddress({str(self)!r})"


def parse_address(text: str) -> EmailAddress:
    text = text.strip()
    if text.count("@") != 1:
        raise MalformedAddress(f"expected exactly one '@': {text!r}")
    local, domain = text.split("@")
    return EmailAddress(local, domain)


def parse_ip(text: str) -> IpAddress:
    try:
        return ipaddress.IPv4Address(text.strip())
    except ValueError as exc:
        raise MalformedIp(str(exc)) from None


class Decision(enum.Enum):
    PASS = "Pass"
    BLOCK = "Block"
    TEMP_REJECT = "TempReject"
    FAILURE_TO_SENDER = "FailureToSender"


class Stage(enum.IntEnum):
    """Pipeline stages in execution order."""

    SENDER_AUTH = 0
    COUNTER_CHECK = 1
    RECEIVER_IDENT = 2
    WHITELIST_CHECK = 3
    BLACKLIST_CHECK = 4
    GREYLIST_CHECK = 5
    CONTENT_FILTER = 6
    RULE_FILTER = 7
    FORWARDED = 8

    @property
    def label(self) -> str:
        return "".join(part.capitalize() for part in self.name.split("_"))


@dataclass(frozen=True)
class Verdict:
    decision: Decision
    stage: Stage
    reason: str = ""

    def __post_init__(self):
        if self.decision is Decision.PASS and self.stage is not Stage.FORWARDED:
            raise ValueError("a Pass verdict must be at stage Forwarded")
        if (self.decision is Decision.FAILURE_TO_SENDER
                and self.stage is not Stage.RECEIVER_IDENT):
            raise ValueError("FailureToSender is only issued at ReceiverIdent")

    def __str__(self):
        text = f"{self.decision.value}@{self.stage.label}"
        return f"{text} ({self.reason})" if self.reason else text


@dataclass(frozen=True)
class EmailMessage:
    id: str
    sender_ip: IpAddress
    helo_domain: str
    from_addr: EmailAddress
    rcpt: Tuple[EmailAddress, ...]
    subject: str = ""
    body: str = ""
    submitted_at: float = 0.0
    size_bytes: int = field(init=False, compare=False)

    def __post_init__(self):
        rcpt = tuple(self.rcpt)
        if not rcpt:
            raise ValueError(f"message {self.id}: empty recipient list")
        if len(set(rcpt)) != len(rcpt):
            raise ValueError(f"message {self.id}: duplicate recipients")
        object.__setattr__(self, "rcpt", rcpt)
        object.__setattr__(self, "size_bytes", len(encode(self)))

    def with_rcpt(self, rcpt: Iterable[EmailAddress]) -> EmailMessage:
        return EmailMessage(self.id, self.sender_ip, self.helo_domain,
                            self.from_addr, tuple(rcpt), self.subject,
                            self.body, self.submitted_at)


def encode(msg: EmailMessage) -> bytes:
    """Canonical wire form: a three-line header block, a blank line, the body."""
    head = (f"FROM:{msg.from_addr}\n"
            f"TO:{','.join(str(r) for r in msg.rcpt)}\n"
            f"SUBJECT:{msg.subject}\n\n")
    return (head + msg.body).encode("utf-8")


def encoded_size(msg: EmailMessage) -> int:
    return len(encode(msg))


def normalize_text(text: str) -> str:
    """Case-fold, collapse whitespace runs to a single space, trim."""
    return _WS_RUN.sub(" ", text.casefold()).strip()


@dataclass(frozen=True)
class ContentDigest:
    hex: str

    def __str__(self):
        return self.hex


def content_digest(msg: EmailMessage) -> ContentDigest:
    """SHA-256 over the normalized subject and body.

    Normalized text never contains a newline, so the newline separator is
    unambiguous.
    """
    payload = normalize_text(msg.subject) + "\n" + normalize_text(msg.body)
    return ContentDigest(hashlib.sha256(payload.encode("utf-8")).hexdigest())
