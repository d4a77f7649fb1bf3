"""Entropy scales, the discretization bridge, and frozen min-max scaling.

Categorical uncertainty is a Shannon entropy (always >= 0); continuous
uncertainty is a Gaussian differential entropy (any sign, different scale).
This demo shows why the two are comparable after min-max normalization:
discretizing a density with bin width eps turns its differential entropy
into a Shannon entropy shifted by ln(1/eps), a constant that min-max
scaling removes.

Run:  python demos/02_entropies_and_normalization.py
"""

import numpy as np

import partal_lab as pl
from partal_lab.uncertainty import discretized_shannon

print("Shannon entropy of categorical maps (nats):")
for probs in ([0.25, 0.25, 0.25, 0.25], [0.97, 0.01, 0.01, 0.01], [0.5, 0.25, 0.25, 0.0]):
    m = np.array(probs).reshape(4, 1, 1) * np.ones((4, 2, 2))
    h = pl.shannon_entropy_map(m)[0, 0]
    print(f"  p={probs}  H={h:.4f}")

print("\nGaussian differential entropy per pixel (nats):")
for dim, var in ((1, 1.0), (1, 1e-4), (3, 1.0)):
    h = pl.gaussian_entropy_map(np.full((dim, 1, 1), var))[0, 0]
    print(f"  dim={dim} sigma^2={var:g}  H={h:+.4f}")

print("\nDiscretization bridge for the standard Gaussian:")
print("  eps      H_disc    H_disc+ln(eps)   true differential entropy")
std_normal = lambda x: np.exp(-0.5 * x * x) / np.sqrt(2 * np.pi)
h_true = 0.5 * (1 + np.log(2 * np.pi))
for eps in (0.1, 0.05, 0.01):
    h = discretized_shannon(std_normal, -8, 8, eps)
    print(f"  {eps:<8g} {h:8.4f}   {h + np.log(eps):12.6f}   {h_true:.6f}")

print("\nFrozen min-max normalization:")
raw = np.array([[1.40, -3.2, 0.9],
                [1.10, -2.1, 0.4],
                [1.25, -4.0, 1.4]])
params = pl.fit_normalization(raw, iteration=1)
print("  fitted u_min =", np.round(params.u_min, 3))
print("  fitted u_max =", np.round(params.u_max, 3))
print("  normalized pool:\n", np.round(pl.apply_normalization(raw, params), 3))

later = raw + np.array([0.4, -1.0, 0.2])  # a later iteration's scores
print("  later scores with the SAME frozen params (may leave [0,1]):\n",
      np.round(pl.apply_normalization(later, params), 3))
