"""How the bottleneck blends behave, without any trained model.

Run: python3 demos/blending.py
"""

import numpy as np

from contentinject.hspace import blend, cumulative_content_fraction

rng = np.random.default_rng(0)
h = rng.standard_normal(4096) * 2.0  # stand-in for a flattened bottleneck map
c = rng.standard_normal(4096) * 5.0  # content features on a different scale

print("norm of the blend relative to |h|")
print(f"{'gamma':>6} {'slerp':>8} {'lerp_norm':>10} {'lerp':>8}")
for g in np.linspace(0, 1, 6):
    ratios = [np.linalg.norm(blend(h, c, g, k)) / np.linalg.norm(h) for k in ("slerp", "lerp_norm", "lerp")]
    print(f"{g:6.1f} " + " ".join(f"{r:8.4f}" for r in ratios))

# Plain lerp sags towards the middle because two nearly orthogonal vectors
# average to something shorter.  The other two keep the norm of h, which is
# what the decoder was trained to see.

print("\nshare of the content after n repeated injections at the same strength")
for g in (0.1, 0.3, 0.6):
    fractions = [cumulative_content_fraction(g, n)[1] for n in (1, 5, 10, 30)]
    print(f"gamma={g}: " + ", ".join(f"n={n}: {f:.3f}" for n, f in zip((1, 5, 10, 30), fractions)))
