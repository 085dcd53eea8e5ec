"""Greylisting and the outbound counter, step by step."""

from spamsim.filters import (CounterState, Decision, GreylistKey, GreylistState,
                             counter_check, greylist_check)
from spamsim.message import parse_address, parse_ip

key = GreylistKey(parse_ip("198.51.100.7"), parse_address("ann@a.example"),
                  parse_address("bob@b.example"))

print("greylist (min delay 120 s, lifetime 86400 s)")
for offset in (0, 119, 120, 86400, 86401):
    state = GreylistState(120, 86400)
    first = greylist_check(key, 0, state)
    retry = greylist_check(key, offset, state)
    print(f"  first try {first.value:<10} retry after {offset:>6} s -> {retry.value}")

# A spammer who never comes back stays stuck at TempReject.
state = GreylistState()
print(f"  one-shot sender: {greylist_check(key, 0, state).value}")

print("\ncounter (3 messages per 60 s)")
counter = CounterState(limit=3, window_s=60)
client = parse_ip("198.51.100.9")
for t in (0, 10, 20, 30, 59, 61, 75):
    d = counter_check(client, t, counter)
    mark = "" if d is Decision.PASS else "  <- over the limit"
    print(f"  t={t:>3}s {d.value}{mark}")
