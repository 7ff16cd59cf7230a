"""
Scoring proposals against a text query
======================================

The relatedness scorer takes per-box visual features and per-word query
embeddings and produces one probability per box: how likely the box is to
matter for this query. Attention over the query words decides which word
each box should be compared with.
"""

import numpy as np

from querynms import backward, forward, init_params

rng = np.random.default_rng(0)

# A tiny world: 3 boxes with 8-dim visual features, a 2-word query with
# 6-dim word embeddings. Box 0 and the first query word share a pattern.
v, q = 8, 6
pattern = rng.choice([-1.0, 1.0], size=v)
V = np.stack([
    pattern + rng.normal(0, 0.1, size=v),     # looks like the query word
    -pattern + rng.normal(0, 0.1, size=v),    # opposite pattern
    rng.normal(0, 1.0, size=v),               # unrelated noise
])
W = rng.normal(0, 1.0, size=(2, q))

# Freshly initialized weights know nothing yet; scores hover near 0.5.
params = init_params(v=v, q=q, seed=0)
attention, output = forward(params, V, W)
print("untrained relatedness:", np.round(output.relatedness, 3))

# The attention matrix is one softmax row per box over the query words.
print("attention weights (rows sum to 1):")
print(np.round(attention.weights, 3))
print("row sums:", attention.weights.sum(axis=1))

# Gradients flow back from the per-box scores to every weight matrix. Here
# we push score 0 up and score 1 down and look at the strongest response.
upstream = np.array([1.0, -1.0, 0.0])
grads = backward(params, V, W, upstream)
for name in ("out_w", "sim_w"):
    flat = grads[name].reshape(-1)
    print(f"d loss / d {name}: largest |entry| = {np.abs(flat).max():.4f}")

# The analytic gradient agrees with a central finite difference. Nudge one
# weight, re-run the forward pass, and compare slopes.
def loss():
    r = forward(params, V, W)[1].relatedness
    return float(upstream @ r)

eps = 1e-6
params.out_b += eps
up = loss()
params.out_b -= 2 * eps
down = loss()
params.out_b += eps
fd = (up - down) / (2 * eps)
print(f"\nd loss / d out_b: analytic {float(grads['out_b']):.8f}, "
      f"finite difference {fd:.8f}")

# Determinism: the same inputs always produce bit-identical scores.
again = forward(params, V, W)[1].relatedness
assert np.array_equal(again, output.relatedness)
print("repeat forward pass is bit-identical")
