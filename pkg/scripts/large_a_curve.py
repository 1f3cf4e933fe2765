"""Numeric and closed-form current rate curves at large targets, with log-log slopes.

Usage: python3 scripts/large_a_curve.py [a ...]   (default 10 20 40, profile constant 1/2, T = 1)
"""
import sys

import numpy as np

from ssep import profiles, ratefn, trialbounds


def main(argv=None):
    a_list = [float(a) for a in (argv if argv is not None else sys.argv[1:])] or [10.0, 20.0, 40.0]
    p, T = profiles.constant(0.5), 1.0
    num = ratefn.rate_curve(p, T, a_list)
    up = trialbounds.upper_bound_curve(p, T, a_list)
    print("a,numeric,numeric_over_a3,upper_bound,lower_bound,residual,grid")
    for n, u in zip(num.points, up.points):
        lo = trialbounds.lower_bound_cubic(p, T, n.a, 1.0, p)
        print(f"{n.a:g},{n.value:.6g},{n.value / n.a ** 3:.5f},{u.value:.6g},{lo:.6g},"
              f"{n.meta['residual']:.2e},{n.meta['n_x']}x{n.meta['n_t']}")
    if len(a_list) >= 2:
        x = np.log(a_list)
        print(f"slope numeric {np.polyfit(x, np.log(num.values), 1)[0]:.3f}, "
              f"upper {np.polyfit(x, np.log(up.values), 1)[0]:.3f}")


if __name__ == "__main__":
    main()
