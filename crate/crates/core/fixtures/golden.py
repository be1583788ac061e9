"""Recomputes the golden values of the shipped oracle fixtures in exact rational arithmetic.

Usage: python3 golden.py reference_dgp.json [more.json ...]   (rewrites the "golden" block)
"""
import json
import sys
from fractions import Fraction as F

STRATA = {"standard": ["10", "11", "00"], "strong": ["10", "00"]}


def q(v):
    return F(str(v))


def score(pt, s):
    p1 = [q(v) for v in pt["p1"]]
    if s == "10":
        return p1[1] - p1[0]
    if s == "11":
        return p1[0]
    return 1 - p1[1]


def theta(dgp, z, zp, s):
    d = {1: int(s[0]), 0: int(s[1])}
    num = den = F(0)
    for pt in dgp["points"]:
        e = score(pt, s) * q(pt["prob"])
        mu = [q(v) for v in pt["mu"][z][d[z]]]
        r = [q(v) for v in pt["r"][zp][d[zp]]]
        num += e * sum(a * b for a, b in zip(mu, r))
        den += e
    return num / den, den


def main(paths):
    for path in paths:
        with open(path) as fh:
            dgp = json.load(fh)
        golden = []
        for s in STRATA[dgp["monotonicity"]]:
            for z, zp in [(1, 1), (1, 0), (0, 0)]:
                v, e = theta(dgp, z, zp, s)
                golden.append({"quantity": "theta", "z": z, "z_prime": zp, "stratum": s, "value": float(v)})
            golden.append({"quantity": "proportion", "stratum": s, "value": float(e)})
        dgp["golden"] = golden
        with open(path, "w") as fh:
            json.dump(dgp, fh, indent=2)
            fh.write("\n")


if __name__ == "__main__":
    main(sys.argv[1:])
