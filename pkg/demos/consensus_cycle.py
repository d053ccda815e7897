"""One election cycle with a crashed producer and a dishonest audit minority.

Run: python demos/consensus_cycle.py
"""

import random

from emrshare.ces import TEST_PARAMS
from emrshare.consensus import CYCLE_MS, Consortium
from emrshare.emr import AccountKeyPair
from emrshare.netsim import NetConfig, Network, parse_fault_script

rng = random.Random("demo/keys")
keys = {f"n{i:02d}": AccountKeyPair.generate(TEST_PARAMS, rng, "node") for i in range(52)}

net = Network(NetConfig(seed=3, base_delay=100, jitter=30))
probe = Consortium(Network(NetConfig(seed=3)), keys)
schedule = probe.registry.membership.schedules[0]

# four auditors vote against every block in the first minute: not enough to stall the chain
liars = {a: [(0, 59_999)] for a in schedule.atns[:4]}
c = Consortium(net, keys, byzantine=liars)
victim = schedule.rpns[7]
net.apply_faults(parse_fault_script(f"crash {victim} 65000\nrecover {victim} 120000"))
c.start()
net.run_until(CYCLE_MS)

print(f"height after one cycle: {c.chain.height} (slot 7 skipped while {victim} was down)")
print("all replicas agree:", c.prefix_consistent())
scores = c.registry.table.scores
print(f"{victim} credit: {scores[victim]}")
for a in liars:
    print(f"{a} credit: {scores[a]}")
nxt = c.registry.membership.schedules[-1]
print(f"next cycle starts at t={nxt.cycle_start}; first producers: {', '.join(nxt.rpns[:5])}")
print("lowest-ranked auditors:", ", ".join(nxt.atns[-4:]))
