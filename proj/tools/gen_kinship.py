#!/usr/bin/env python3
"""Deterministic generator for the bundled kinship-style dataset.

104 people, each with a generation (0..3), a clan (A/B) and a gender (M/F).
Every ordered pair of distinct people receives exactly one of 25 kinship
terms, a pure function of the two attribute tuples (a classificatory system:
terms depend on generation difference, clan parity and gender). 26 facts are
dropped from the largest term class to land on 10686 triples, split
8544 / 1068 / 1074 with every person and every term present in train.

Rerunning this script reproduces data/kinship byte-for-byte.
"""

import random
from pathlib import Path

SEED = 20240817
N_TRAIN, N_VALID, N_TEST = 8544, 1068, 1074


def make_people():
    people = []
    idx = 0
    for gen in range(4):
        for clan in "AB":
            for k in range(13):
                gender = "MF"[k % 2]
                people.append((f"person_{idx:03d}", gen, clan, gender))
                idx += 1
    assert len(people) == 104
    return people


def term(h, t):
    """Kinship term naming t relative to h. h, t: (name, gen, clan, gender)."""
    _, gh, ch, xh = h
    _, gt, ct, xt = t
    d = max(-2, min(2, gt - gh))
    same = ch == ct
    if d == -2:
        if same:
            return "grandfather" if xt == "M" else "grandmother"
        return "great_uncle" if xt == "M" else "great_aunt"
    if d == -1:
        if same:
            return "father" if xt == "M" else "mother"
        if xt == "M":
            return "uncle" if xh == "M" else "father_in_law"
        return "aunt"
    if d == 1:
        if same:
            return "son" if xt == "M" else "daughter"
        return "nephew" if xt == "M" else "niece"
    if d == 2:
        if same:
            return "grandson" if xt == "M" else "granddaughter"
        return "grandnephew" if xt == "M" else "grandniece"
    # d == 0
    if same:
        if xh == "M":
            return "brother" if xt == "M" else "female_cousin"
        return "male_cousin" if xt == "M" else "sister"
    if xh == "M":
        return "brother_in_law" if xt == "M" else "wife"
    return "husband" if xt == "M" else "sister_in_law"


def main():
    rng = random.Random(SEED)
    people = make_people()
    facts = []
    for h in people:
        for t in people:
            if h is t:
                continue
            facts.append((h[0], term(h, t), t[0]))

    by_term = {}
    for f in facts:
        by_term.setdefault(f[1], []).append(f)
    assert len(by_term) == 25, sorted(by_term)

    # Trim 26 facts from the largest class to reach 10686 total.
    surplus = len(facts) - (N_TRAIN + N_VALID + N_TEST)
    assert surplus >= 0
    largest = max(by_term, key=lambda k: len(by_term[k]))
    victims = set()
    pool = sorted(by_term[largest])
    step = max(1, len(pool) // max(1, surplus))
    i = 0
    while len(victims) < surplus:
        victims.add(pool[i % len(pool)])
        i += step
    facts = [f for f in facts if f not in victims]
    assert len(facts) == N_TRAIN + N_VALID + N_TEST

    rng.shuffle(facts)

    # Guarantee train coverage of every entity and term.
    need_ent = {p[0] for p in people}
    need_rel = set(by_term)
    train, rest = [], []
    for f in facts:
        h, r, t = f
        if h in need_ent or t in need_ent or r in need_rel:
            train.append(f)
            need_ent.discard(h)
            need_ent.discard(t)
            need_rel.discard(r)
        else:
            rest.append(f)
    assert not need_ent and not need_rel
    fill = N_TRAIN - len(train)
    train += rest[:fill]
    valid = rest[fill:fill + N_VALID]
    test = rest[fill + N_VALID:]
    assert len(train) == N_TRAIN and len(valid) == N_VALID and len(test) == N_TEST

    out = Path(__file__).resolve().parent.parent / "data" / "kinship"
    out.mkdir(parents=True, exist_ok=True)
    for name, rows in (("train", train), ("valid", valid), ("test", test)):
        with open(out / f"{name}.txt", "w") as fh:
            for h, r, t in rows:
                fh.write(f"{h}\t{r}\t{t}\n")
    print("wrote", out)


if __name__ == "__main__":
    main()
