"""Hermite moment tensors, the raw material of the decoder.

For a Gaussian N(mu, Sigma) the expected order-m Hermite tensor is a sum
over pairings: mean on the unpaired slots, (Sigma - I) on the paired ones.
A standard normal therefore has all Hermite moments zero, and every nonzero
entry measures departure from N(0, I).

    python3 demos/02_hermite_tensors.py
"""

import numpy as np

from robustgmm import GaussianMixture, sample_mixture
from robustgmm.hermite import dense_to_sym, expected_hermite, hermite_features

rng = np.random.default_rng(1)
mix = GaussianMixture.from_params([0.5, 0.5], [[0.8, 0.0], [-0.8, 0.0]],
                                  [np.diag([0.36, 1.0])] * 2)
# variance along e1 is 0.36 + 0.8^2 = 1, so the mixture is isotropic

for m in (1, 2, 3, 4):
    exact = dense_to_sym(expected_hermite(mix, m))
    for n in (1_000, 100_000):
        x, _ = sample_mixture(mix, n, rng)
        est = hermite_features(x, m).mean(axis=0)
        print(f"order {m}  n={n:>7}  |exact|={np.linalg.norm(exact):.3f}  "
              f"error={np.linalg.norm(est - exact):.4f}")

# Orders 1-3 vanish (the mixture is centered, isotropic and symmetric);
# order 4 is where the two components reveal themselves.
