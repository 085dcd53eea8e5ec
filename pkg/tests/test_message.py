import hashlib

import pytest
from hypothesis import given
from hypothesis import strategies as st

from spamsim.message import (
    EmailAddress,
    MalformedAddress,
    MalformedIp,
    Decision,
    Stage,
    Verdict,
    content_digest,
    encode,
    encoded_size,
    normalize_text,
    parse_address,
    parse_ip,
)

from conftest import make_msg


def test_parse_address_splits():
    a = parse_address("alice@example.com")
    assert (a.local, a.domain) == ("alice", "example.com")


def test_address_case_insensitive():
    assert parse_address("Alice@EXAMPLE.COM") == parse_address("alice@example.com")
    assert str(parse_address("Alice@EXAMPLE.COM")) == "Alice@example.com"


@pytest.mark.parametrize("text", ["no-at-sign", "@b.com", "a@", "a b@c.com", "a@com",
                                  "a@.com", "a@com.", "a@b@c.com", "a@b .com"])
def test_malformed_addresses(text):
    with pytest.raises(MalformedAddress):
        parse_address(text)


def test_ip_round_trip_and_range():
    ip = parse_ip("10.0.0.5")
    assert parse_ip(str(ip)) == ip
    with pytest.raises(MalformedIp):
        parse_ip("300.1.1.1")


locals_ = st.from_regex(r"[A-Za-z0-9._+-]{1,12}", fullmatch=True)
labels = st.from_regex(r"[A-Za-z0-9-]{1,10}", fullmatch=True)


@given(locals_, labels, labels)
def test_address_render_parse_round_trip(local, d1, d2):
    a = EmailAddress(local, f"{d1}.{d2}")
    b = parse_address(str(a))
    assert a == b and str(a) == str(b) and hash(a) == hash(b)
    assert parse_address(str(a).upper()) == a


def test_encoded_size_hand_count():
    m = make_msg(sender="a@b.co", rcpt=("c@d.co",))
    # "FROM:a@b.co\n" 12 + "TO:c@d.co\n" 10 + "SUBJECT:\n" 9 + "\n" 1
    assert encode(m) == b"FROM:a@b.co\nTO:c@d.co\nSUBJECT:\n\n"
    assert encoded_size(m) == m.size_bytes == 32


def test_encoded_size_linear_in_ascii_body():
    m1 = make_msg(body="x")
    m2 = make_msg(body="x" + "y" * 100)
    assert m2.size_bytes - m1.size_bytes == 100
    assert encoded_size(m1) == encoded_size(m1)


def test_encoded_size_counts_utf8_bytes():
    assert make_msg(body="é").size_bytes - make_msg(body="").size_bytes == 2


def test_message_invariants():
    with pytest.raises(ValueError):
        make_msg(rcpt=())
    with pytest.raises(ValueError):
        make_msg(rcpt=("a@b.example", "A@B.EXAMPLE"))


def test_digest_ignores_envelope():
    a = make_msg("hi", "body", rcpt=("x@b.example",))
    b = make_msg("hi", "body", rcpt=("y@c.example", "z@d.example"), sender="q@r.example",
                 ip="203.0.113.1", at=99.0)
    assert content_digest(a) == content_digest(b)


def test_digest_sensitive_to_one_char():
    assert content_digest(make_msg("s", "hello world")) != content_digest(make_msg("s", "hello worle"))


def test_digest_whitespace_and_case_normalized():
    # normalization oracle by hand: "Hello  World \n" -> "hello world"
    assert normalize_text("  Hello  World \n") == "hello world"
    assert content_digest(make_msg("", "hello  world")) == content_digest(make_msg("", "hello world"))


def test_digest_golden_value():
    expected = hashlib.sha256(b"free money\nclick here now").hexdigest()
    assert expected == "340d098672f67e17d80f51c9d08f60078bffab205c9539f4cb79c822b3e47c53"
    assert content_digest(make_msg("FREE  Money", " click\there\nnow ")).hex == expected


def test_subject_body_boundary_matters():
    assert content_digest(make_msg("a b", "c")) != content_digest(make_msg("a", "b c"))


def test_verdict_invariants():
    Verdict(Decision.PASS, Stage.FORWARDED)
    with pytest.raises(ValueError):
        Verdict(Decision.PASS, Stage.CONTENT_FILTER)
    with pytest.raises(ValueError):
        Verdict(Decision.FAILURE_TO_SENDER, Stage.SENDER_AUTH)


def test_stage_order():
    assert list(Stage) == sorted(Stage)
    assert Stage.SENDER_AUTH < Stage.RECEIVER_IDENT < Stage.WHITELIST_CHECK < Stage.FORWARDED
    assert Stage.BLACKLIST_CHECK.label == "BlacklistCheck"
