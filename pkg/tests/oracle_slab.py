"""Independent brute-force reference for the 1D slab transport app.

Deliberately shares nothing with the package implementation: plain Python
loop, Mersenne Twister draws (``random.Random``), no vectorization.
Agreement with the package is therefore statistical, never bit-wise.

Run as a script to print tallies for given parameters:

    python tests/oracle_slab.py 10000000 1.0 0.5 2.0 20090817
"""

import math
import random
import sys


def simulate(n, sigma_t, sigma_a, thickness, seed):
    """Transport n histories; returns (transmitted, absorbed, backscattered)."""
    rnd = random.Random(seed)
    p_abs = sigma_a / sigma_t
    t = a = b = 0
    for _ in range(n):
        x = 0.0
        mu = 1.0
        while True:
            # 1 - random() lies in (0, 1]: safe for log
            x += (-math.log(1.0 - rnd.random()) / sigma_t) * mu
            if x >= thickness:
                t += 1
                break
            if x < 0.0:
                b += 1
                break
            if rnd.random() < p_abs:
                a += 1
                break
            while True:
                mu = 2.0 * rnd.random() - 1.0
                if abs(mu) >= 1e-12:
                    break
    return t, a, b


def fractions(n, sigma_t, sigma_a, thickness, seed):
    t, a, b = simulate(n, sigma_t, sigma_a, thickness, seed)
    return t / n, a / n, b / n


if __name__ == "__main__":
    n, st, sa, th, seed = (int(sys.argv[1]), float(sys.argv[2]),
                           float(sys.argv[3]), float(sys.argv[4]),
                           int(sys.argv[5]))
    print(simulate(n, st, sa, th, seed))
