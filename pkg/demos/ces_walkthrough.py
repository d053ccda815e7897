"""Sign a seven-part record, hand out a redacted copy, and watch what breaks it.

Run: python demos/ces_walkthrough.py
"""

import random

from emrshare import ces
from emrshare.ces import Ceas, CesTag, TEST_PARAMS

rng = random.Random(2024)
doctor = ces.keygen(TEST_PARAMS, rng)
record = [b"Alice Example", b"F", b"34", b"ID-0001", b"seasonal asthma",
          b"spirometry within normal range", b"salbutamol as needed"]

# parts 2, 3 and 5 (gender, age, history) must survive any redaction
sig = ces.sign(doctor, record, Ceas.of({2, 3, 5}), CesTag.random(rng), rng)
print("full signature verifies:", ces.verify_full(doctor.public, record, sig))

# the patient drops the name, id number and prescription
kept, esig = ces.extract(doctor.public, record, sig, {2, 3, 5, 6})
print("kept parts:", sorted(kept))
print("extracted signature verifies:", ces.verify_extracted(doctor.public, kept, esig))

edited = dict(kept)
edited[5] = b"no history"
print("after editing part 5:", ces.verify_extracted(doctor.public, edited, esig))

try:
    ces.extract(doctor.public, record, sig, {2, 3, 6})
except Exception as exc:
    print("dropping a mandatory part:", type(exc).__name__, exc)

# every part shares one nonce, so a single full signature leaks the signing key
a = ces.recover_private_key(doctor.public, record, sig)
print("private exponent recovered from one signature:", a == doctor.a)
