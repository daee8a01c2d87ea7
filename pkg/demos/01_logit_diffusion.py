"""Where stochastic attention logits come from.

Each attention logit follows a mean-reverting diffusion
da = kappa (phi - a) dt + psi dW started at a = 0, with the coefficients
produced per query/key pair by a gating network.  Because the coefficients
are frozen within a forward pass, the marginal at time t is Gaussian with
closed-form mean and variance; no SDE solver runs at inference time.  This
script checks the closed form against brute-force simulation and walks the
moments along t.
"""

import math

import numpy as np

from nsac.autodiff import Rng
from nsac.ou import (
    OUCoefficients,
    euler_maruyama_oracle,
    ou_mean,
    ou_variance,
)


def main():
    rng = Rng(3)
    print("closed form vs Euler-Maruyama (10000 paths, dt = 1e-3)")
    print(f"{'kappa':>6} {'phi':>6} {'psi':>5} {'t':>5} "
          f"{'mean_cf':>9} {'mean_sim':>9} {'var_cf':>8} {'var_sim':>8}")
    draw = rng.child(0)
    for i in range(5):
        c = OUCoefficients(
            kappa=float(draw.uniform(0.3, 2.5)),
            phi=float(draw.uniform(-1.0, 1.0)),
            psi=float(draw.uniform(0.2, 1.2)),
            t=float(draw.uniform(0.2, 1.0)),
        )
        m_sim, v_sim = euler_maruyama_oracle(c, 1e-3, 10_000, rng.child(10 + i))
        print(f"{c.kappa:6.3f} {c.phi:+6.3f} {c.psi:5.3f} {c.t:5.3f} "
              f"{ou_mean(c):+9.5f} {m_sim:+9.5f} "
              f"{ou_variance(c):8.5f} {v_sim:8.5f}")

    print()
    print("moments along t for kappa = 0.7, phi = 0.5, psi = 0.8")
    print("the mean relaxes toward phi; the variance saturates at "
          "psi^2 / (2 kappa) = "
          f"{0.8 ** 2 / (2 * 0.7):.5f}")
    print(f"{'t':>5} {'mean':>8} {'variance':>9}")
    for t in (0.0, 0.1, 0.25, 0.5, 1.0, 2.0, 5.0):
        if t == 0.0:
            print(f"{t:5.2f} {0.0:8.5f} {0.0:9.5f}")
            continue
        c = OUCoefficients(kappa=0.7, phi=0.5, psi=0.8, t=t)
        print(f"{t:5.2f} {ou_mean(c):8.5f} {ou_variance(c):9.5f}")

    print()
    print("short-time behaviour: var ~ psi^2 t, so uncertainty grows "
          "linearly before mean reversion bites")
    for t in (1e-4, 1e-3, 1e-2):
        c = OUCoefficients(kappa=0.7, phi=0.5, psi=0.8, t=t)
        print(f"  t={t:7.0e}  var={ou_variance(c):10.3e}  "
              f"psi^2 t={0.64 * t:10.3e}")


if __name__ == "__main__":
    main()
