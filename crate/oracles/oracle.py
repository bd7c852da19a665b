"""Independent reference values for the twistlab test-suite.

Everything here uses mpmath at 60 significant digits, exact Fractions, or
plain integer arithmetic; nothing is shared with the Rust code. Run

    python3 oracles/oracle.py > oracles/golden.json

and the integration tests read the frozen file.
"""

import json
import math
from fractions import Fraction

import mpmath as mp
import numpy as np

mp.mp.dps = 60


def nearest(y):
    f = y - mp.floor(y)
    return min(f, 1 - f)


def s(v, digits=30):
    return mp.nstr(v, digits)


out = {}

# frac(2 sqrt 2) and its distance to the nearest integer
y = 2 * mp.sqrt(2)
out["frac_2sqrt2"] = s(y - mp.floor(y))
out["dist_2sqrt2"] = s(nearest(y))


# continued fractions by exact quadratic arithmetic: x = (P + sqrt D) / Q
def cf_quadratic(p, d, q, n):
    terms = []
    r = math.isqrt(d)
    for _ in range(n):
        a = (p + r) // q if q > 0 else -((-(p + r)) // -q)
        terms.append(a)
        p = a * q - p
        q = (d - p * p) // q
    return terms


out["cf_sqrt2_5"] = cf_quadratic(0, 2, 1, 5)
out["cf_golden_4"] = cf_quadratic(1, 5, 2, 4)

# lacunary pair with digits at 3, 9, 27, 81: exact distances at q = 2^3, 2^9, 2^27
pos = [3, 9, 27, 81]
xi1 = sum(Fraction(1, 2**a) for a in pos)
xi2 = Fraction(1, 2) + sum(Fraction((-1) ** k, 2**a) for k, a in enumerate(pos))


def fdist(fr):
    f = fr - (fr.numerator // fr.denominator)
    return min(f, 1 - f)


out["liouville_3_4"] = [
    {
        "q": str(2**a),
        "dist1": str(fdist(2**a * xi1)),
        "dist2": str(fdist(2**a * xi2)),
        "bound": str(Fraction(2, 2 ** (b - a))),
    }
    for a, b in zip(pos, pos[1:])
]


# weighted badness of (sqrt 2, sqrt 3): q * max(||q x1||^(1/i), ||q x2||^(1/j))
def weighted_min(x1, x2, i, j, qmax, qmin=1):
    best = None
    for q in range(qmin, qmax + 1):
        v = q * max(nearest(q * x1) ** (1 / mp.mpf(i)), nearest(q * x2) ** (1 / mp.mpf(j)))
        if best is None or v < best[0]:
            best = (v, q)
    return best


r2, r3 = mp.sqrt(2), mp.sqrt(3)
v, q = weighted_min(r2, r3, 0.5, 0.5, 100)
out["sqrt23_min_Q100"] = {"value": s(v), "q": q}
v, q = weighted_min(r2, r3, 0.5, 0.5, 1000)
out["sqrt23_c_Q1000"] = {"value": s(v), "q": q}
v, q = weighted_min(r2, r3, mp.mpf(3) / 10, mp.mpf(7) / 10, 1000)
out["sqrt23_c_Q1000_w37"] = {"value": s(v), "q": q}

# golden ratio: q ||q phi|| for 2 <= q <= 10, and at Fibonacci numbers
phi = (1 + mp.sqrt(5)) / 2
best = min((q * nearest(q * phi), q) for q in range(2, 11))
out["golden_min_2_10"] = {"value": s(best[0]), "q": best[1]}
fib = [1, 1]
while len(fib) < 31:
    fib.append(fib[-1] + fib[-2])
out["fib30"] = fib[30]
out["golden_fib_values"] = [{"q": f, "value": s(f * nearest(f * phi))} for f in fib[3:31]]
out["inv_sqrt5"] = s(1 / mp.sqrt(5))


# sqrt 2: minimum of q ||q sqrt 2|| over 1000 <= q <= 10^6 (integer arithmetic
# screen, 60-digit refinement of the candidates)
def screen_min(value_of, qs, keep):
    vals = value_of(qs)
    cut = np.min(vals) + keep
    return [int(q) for q in qs[vals <= cut]]


qs = np.arange(1000, 10**6 + 1, dtype=np.float64)
# float error of the screen is about q * 1e-10 <= 1e-4, so keep a wider band
cands = screen_min(lambda q: q * np.abs(q * math.sqrt(2) - np.round(q * math.sqrt(2))), qs, 1e-3)
best = min((q * nearest(q * r2), q) for q in cands)
out["sqrt2_liminf_tail"] = {"value": s(best[0]), "q": best[1], "target": s(1 / (2 * r2))}

# golden ratio, gamma = 1/2: min q ||q phi - 1/2|| over q <= 10^4
best = min((q * nearest(q * phi - mp.mpf(1) / 2), q) for q in range(1, 10**4 + 1))
out["golden_half_Q1e4"] = {"value": s(best[0]), "q": best[1]}

# union of two torus squares by pixel counting at resolution 1e-4
n = 10_000
ax = (np.arange(n) + 0.5) / n


def cover(c, h):
    d = np.abs(ax - c)
    d = np.minimum(d, 1 - d)
    return d <= h


a = np.outer(cover(0.1, 0.1), cover(0.1, 0.1))
b = np.outer(cover(0.25, 0.1), cover(0.1, 0.1))
out["union_pixels"] = float(np.count_nonzero(a | b)) / n**2

# doubling map on a center
out["center_T_09"] = s(mp.frac(mp.sqrt(2) * mp.mpf("0.9")))

# harmonic sums
out["H4"] = str(sum(Fraction(1, r) for r in range(1, 5)))
out["half_H1000"] = s(mp.harmonic(1000) / 2)
out["H200"] = s(mp.harmonic(200))


# area of {(u, v) in [-1/2, 1/2]^2 : |u v| <= t} by adaptive quadrature
def mult_area(t):
    t = mp.mpf(t)
    f = lambda u: min(mp.mpf(1) / 2, t / u) if u > 0 else mp.mpf(1) / 2
    return 4 * mp.quad(f, [0, 2 * t, mp.mpf(1) / 2]) if 2 * t < 0.5 else mp.mpf(1)


out["mult_area"] = {str(t): s(mult_area(t)) for t in ["0.0001", "0.001", "0.01", "0.1", "0.25"]}

# Gallagher sum for psi = 1/r^2: partial sums and the limit -2 zeta'(2)
out["gallagher_inv_sq"] = {
    "S_1e4": s(mp.fsum(2 * mp.log(r) / mp.mpf(r) ** 2 for r in range(1, 10**4 + 1))),
    "limit": s(-2 * mp.zeta(2, derivative=1)),
}

# theta for k = 100, c = 1/10, i = j = 1/2
out["theta_k100_c01"] = s(mp.sqrt(mp.mpf("0.1") / 200) / 2)

print(json.dumps(out, indent=1))
