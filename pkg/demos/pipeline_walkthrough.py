"""Follow a few messages through the filter stages one at a time.

The pipeline sits on server A. Spam arriving from outside A's client list
never gets past SenderAuth, so the interesting case is a compromised client
account relaying a blast through A.
"""

from dataclasses import replace

from spamsim import Decision, FilterSetup, GeneratorParams, default_world, generate_corpus
from spamsim.filters import AddressList, Rule, RuleSet
from spamsim.message import EmailMessage, parse_address, parse_ip
from spamsim.pipeline import Mount, PipelineConfig, run_pipeline

world = default_world()
training = generate_corpus(GeneratorParams(seed=3, count=400, spam_ratio=0.5,
                                           distinct_spam_bodies=6))
setup = FilterSetup.trained(training, config=PipelineConfig(reverse_lookup=True))
setup.blacklist = AddressList.of("192.0.2.66")
setup.rules = RuleSet([Rule("subject", "wire transfer", Decision.BLOCK)])
ctx = setup.make_context(Mount.SENDER, True, world.server("A").clients, world.dns)


def msg(mid, ip, sender, rcpt, subject, body):
    return EmailMessage(mid, parse_ip(ip), "mail.a.example", parse_address(sender),
                        (parse_address(rcpt),), subject, body, 0.0)


ham = training[next(i for i, r in enumerate(training) if not r.is_spam)].message
spam = training[next(i for i, r in enumerate(training) if r.is_spam)].message
relayed = replace(spam, sender_ip=ham.sender_ip, helo_domain=ham.helo_domain)
samples = [
    ("ordinary colleague mail", ham),
    ("bulk offer from outside", spam),
    ("same offer relayed by a compromised client", relayed),
    ("another copy of it", replace(relayed, id="copy2")),
    ("unknown client IP", msg("x1", "192.0.2.66", "x@a.example", "bob@b.example", "hi", "hello")),
    ("recipient domain nobody hosts",
     msg("x2", "198.51.100.1", "staff0@a.example", "bob@gone.example", "hi", "hello")),
    ("rule hit", msg("x3", "198.51.100.1", "staff0@a.example", "bob@b.example",
                     "Urgent wire transfer", "please send it today")),
]

for title, m in samples:
    trace = []
    verdict = run_pipeline(m, m.rcpt[0], 0.0, ctx, trace)
    print(f"{title}:")
    print("   " + " -> ".join(s.label for s in trace))
    print(f"   {verdict}")

print(f"\ncontent filter ran {ctx.content_executions} times, cache hits {ctx.cache_hits}")
