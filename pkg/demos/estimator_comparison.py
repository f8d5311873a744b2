"""
Fit one small Kent sample with every estimator and compare them.

With only ten points the estimators disagree noticeably. The two MAP
variants use the same prior written in different coordinates and land on
different answers, while ML and MML do not depend on the coordinates.
"""

import math

from kentmix.distributions import KentParams, kent_kl, kent_sample
from kentmix.estimators import ESTIMATORS, PriorSpec, fit_kent, message_length

truth = KentParams.from_ecc(0.0, math.pi / 2, 0.0, 10.0, 0.5)
x = kent_sample(truth, 10, seed=0)
print("truth: kappa={:.2f} beta={:.2f}".format(truth.kappa, truth.beta))
print("{:<11} {:>8} {:>8} {:>10} {:>12}".format("estimator", "kappa", "beta", "KL(nats)", "length(bits)"))
for name in ESTIMATORS:
    p = fit_kent(x, name).params
    ml = message_length(x, p, PriorSpec.THREE_D_KAPPA_BETA)
    print("{:<11} {:8.3f} {:8.3f} {:10.4f} {:12.2f}".format(name, p.kappa, p.beta, kent_kl(truth, p), ml.total_bits))
