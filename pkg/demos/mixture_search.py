"""
Recover a three-component Kent mixture by message-length search.

The components share kappa = 100 and differ in eccentricity (0.1, 0.5, 0.9).
The search starts from one component and accepts the best split, delete
or merge while the total message length keeps dropping. Afterwards the
mixture is grown past its optimum to show that extra components cost more
than they save.
"""

import logging

from kentmix.mixture import EMResult, fixed_k_fit, replica_mixture, sample_mixture, search_optimal

logging.basicConfig(level=logging.INFO, format="%(message)s")

x, labels = sample_mixture(replica_mixture(), 1000, seed=0)
res = search_optimal(x)
print("\naccepted steps:")
for t in res.accepted():
    print("  K={}  {:10.2f} bits  ({})".format(t.k, t.score, t.operation))
for w, c in zip(res.model.weights, res.model.components):
    print("  weight {:.3f}  kappa {:7.2f}  ecc {:.3f}".format(w, c.kappa, c.ecc))

fit = EMResult(res.model, res.resp, res.score, [res.score], 0, True)
print("\nforced sizes:")
for k in (4, 5):
    fit = fixed_k_fit(x, k, start=fit)
    print("  K={}  {:10.2f} bits".format(fit.model.k, fit.score))
