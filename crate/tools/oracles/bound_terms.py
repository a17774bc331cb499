"""Independent high-precision evaluation of the bound terms.

Prints the frozen reference values used by the Rust tests. Requires mpmath.
"""
from mpmath import mp, mpf, log, sqrt

mp.dps = 50


def log2(x):
    return log(x) / log(2)


def split(delta, m, n):
    return delta * n / (n + m), delta * m / (n + m)


def complexity_nats(c_bits):
    return c_bits * log(2) + 2 * log(c_bits)


def azuma(delta_hat, nats, delta1, m):
    return delta_hat * sqrt((nats + log(1 / delta1)) / (2 * m))


def subsample(delta_hat, n, delta2):
    return delta_hat * sqrt(log(1 / delta2) / (2 * n))


def three_record():
    v, alpha, ps, c, delta, m, n = 4, mpf("0.5"), [mpf(1), mpf("0.5"), mpf("0.25")], 1, mpf("0.5"), 3, 3
    emp = -sum(log2((1 - alpha) * p + alpha / v) for p in ps) / n
    width = log2(1 + (1 - alpha) * v / alpha)
    d1, d2 = split(delta, m, n)
    az = azuma(width, complexity_nats(c), d1, m)
    sp = subsample(width, n, d2)
    return dict(empirical=emp, azuma=az, subsample=sp, bound=emp + az + sp, width=width, delta1=d1, delta2=d2)


if __name__ == "__main__":
    d1, d2 = split(mpf("0.05"), 9_000_000_000, 10_000)
    print("split(0.05, 9e9, 1e4):", mp.nstr(d1, 17), mp.nstr(d2, 17))
    print("complexity_nats(8):", mp.nstr(complexity_nats(8), 17))
    print("complexity_nats(2^33):", mp.nstr(complexity_nats(2**33), 17))
    print("subsample(1, 1e4, 0.05):", mp.nstr(subsample(1, 10_000, mpf("0.05")), 17))
    print("azuma(1, 2m ln2, 1, m):", mp.nstr(azuma(1, 2 * 1000 * log(2), 1, 1000), 17))
    for k, val in three_record().items():
        print(f"three-record {k}:", mp.nstr(val, 17))
    for v in (50257, 32000):
        print(f"log2({v}) =", mp.nstr(log2(v), 17), f"top-100 threshold =", mp.nstr(1 - mpf(100) / v, 17))
