import pytest

from spamsim.corpus import GeneratorParams, generate_corpus
from spamsim.message import EmailMessage, parse_address, parse_ip
from spamsim.scenarios import default_world


def make_msg(subject="", body="", rcpt=("bob@b.example",), sender="alice@a.example",
             ip="198.51.100.1", helo="mail.a.example", mid="m1", at=0.0):
    return EmailMessage(mid, parse_ip(ip), helo, parse_address(sender),
                        tuple(parse_address(r) for r in rcpt), subject, body, at)


@pytest.fixture
def msg_factory():
    return make_msg


@pytest.fixture
def world():
    return default_world()


@pytest.fixture(scope="session")
def blast_1000():
    return generate_corpus(GeneratorParams(count=1000, spam_ratio=1.0, distinct_spam_bodies=1, seed=7))


@pytest.fixture(scope="session")
def mixed_corpus():
    return generate_corpus(GeneratorParams(count=300, spam_ratio=0.5, distinct_spam_bodies=8,
                                           rcpt_per_message=(1, 3), seed=11))


_acceptance = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        _acceptance.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in sorted(_acceptance):
        terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}")
