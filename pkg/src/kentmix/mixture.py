"""
Mixtures of Kent (FB5) or vMF components.

EM fitting under a maximum likelihood or message-length objective, the
two-part message length of a whole mixture, AIC/BIC scores, and a greedy
split/delete/merge search over the number of components.

All scores are in bits. Data may carry per-point sample weights, which the
split operation uses to run a local EM on one component's share of the data.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, NamedTuple, Optional

import numpy as np
from scipy.special import gammaln

from kentmix.distributions import KentParams, VmfParams, kent_kl, vmf_kl, vmf_log_norm
from kentmix.estimators import (
    LN2,
    TIGHT,
    MessageLength,
    PriorSpec,
    first_part_nats,
    mml_fit,
    ml_fit,
    moment_estimate,
    refine_fit,
    sufficient_stats,
    vmf_first_part_nats,
    vmf_ml_estimate,
    vmf_mml_estimate,
)
from kentmix.norm_series import norm_terms

logger = logging.getLogger(__name__)

W_MIN = 1e-8
# a component with fewer effective points than this is dropped during EM
MIN_SUPPORT = 5.0
# candidates must beat the current score by more than this many bits
ACCEPT_MARGIN = 1e-6
MML_TOL_BITS = 1e-4
ML_REL_TOL = 1e-6
MAX_ITER = 200
# warm starts this eccentric also get a second start from the moment estimate
NEAR_GIRDLE = 0.95

SERIAL_VERSION = 1


class Family(Enum):
    KENT = "kent"
    VMF = "vmf"

    @property
    def params_per_component(self):
        return 5 if self is Family.KENT else 3


class Objective(Enum):
    ML = "ml"
    MML = "mml"


class CriterionKind(Enum):
    MML = "mml"
    AIC = "aic"
    BIC = "bic"

    @property
    def objective(self):
        """EM objective used when fitting under this criterion."""
        return Objective.MML if self is CriterionKind.MML else Objective.ML


@dataclass
class MixtureModel:
    family: Family
    weights: np.ndarray
    components: list

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.components) < 1 or len(self.components) != len(self.weights):
            raise ValueError("need one weight per component and at least one component")
        if abs(self.weights.sum() - 1.0) > 1e-10:
            raise ValueError("weights must sum to 1, got {}".format(self.weights.sum()))
        if np.any(self.weights < W_MIN * (1.0 - 1e-9)):
            raise ValueError("weights must be at least {}".format(W_MIN))
        kind = KentParams if self.family is Family.KENT else VmfParams
        if not all(isinstance(c, kind) for c in self.components):
            raise TypeError("components must all be {}".format(kind.__name__))

    @property
    def k(self):
        return len(self.components)

    @property
    def n_free_params(self):
        """Free parameters: per-component parameters plus K-1 weights."""
        return self.family.params_per_component * self.k + self.k - 1

    def permuted(self, order):
        return MixtureModel(self.family, self.weights[list(order)], [self.components[i] for i in order])


def normalized_weights(w):
    """Floor at ``W_MIN`` and renormalize."""
    w = np.maximum(np.asarray(w, dtype=float), W_MIN)
    w = w / w.sum()
    # a second pass keeps the floor after renormalization
    w = np.maximum(w, W_MIN)
    return w / w.sum()


class Responsibilities(NamedTuple):
    r: np.ndarray
    n_eff: np.ndarray
    # per-point mixture log density from the E-step that produced ``r``
    log_lik: Optional[np.ndarray] = None


# --- densities ----------------------------------------------------------------

def component_log_density(x, comp):
    """Log density of each row of ``x`` under one Kent or vMF component."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if isinstance(comp, KentParams):
        y = x @ comp.axes
        log_c = norm_terms(comp.kappa, comp.beta, TIGHT).log_c
        return comp.kappa * y[:, 0] + comp.beta * (y[:, 1] ** 2 - y[:, 2] ** 2) - log_c
    return comp.kappa * (x @ comp.mean) - vmf_log_norm(comp.kappa)


def _joint_log(data, m: MixtureModel):
    """``(N, K)`` matrix of ``ln w_j + ln f_j(x_i)``."""
    out = np.empty((len(data), m.k))
    for j, (w, c) in enumerate(zip(m.weights, m.components)):
        out[:, j] = math.log(w) + component_log_density(data, c)
    return out


def _logsumexp_rows(a):
    mx = a.max(axis=1, keepdims=True)
    return (mx + np.log(np.exp(a - mx).sum(axis=1, keepdims=True)))[:, 0]


def mixture_log_density(x, m: MixtureModel):
    single = np.ndim(x) == 1
    out = _logsumexp_rows(_joint_log(np.atleast_2d(x), m))
    return float(out[0]) if single else out


def _sample_weights(data, sample_weights):
    n = len(data)
    if sample_weights is None:
        return np.ones(n)
    w = np.asarray(sample_weights, dtype=float)
    if w.shape != (n,) or np.any(w < 0):
        raise ValueError("sample weights must be a nonnegative vector with one entry per point")
    return w


def mixture_negative_log_likelihood(data, m: MixtureModel, sample_weights=None):
    """``-sum_i s_i ln f(x_i)`` in nats."""
    s = _sample_weights(data, sample_weights)
    return float(-(s @ mixture_log_density(np.atleast_2d(data), m)))


def e_step(data, m: MixtureModel, sample_weights=None) -> Responsibilities:
    """Posterior membership probabilities, computed in log space."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    a = _joint_log(data, m)
    ll = _logsumexp_rows(a)
    r = np.exp(a - ll[:, None])
    r /= r.sum(axis=1, keepdims=True)
    s = _sample_weights(data, sample_weights)
    return Responsibilities(r, s @ r, ll)


# --- M-step -------------------------------------------------------------------

def _fit_kent(stats, objective, prior, init):
    """
    Full search from the moment estimate, or Fisher scoring from a warm
    start. Near ``e = 1`` scoring barely moves, so there the moment estimate
    is tried as a second start.
    """
    if init is None:
        res = mml_fit(stats, prior) if objective is Objective.MML else ml_fit(stats)
        init = res.params
    best = refine_fit(stats, init, objective.value, prior)
    if max(init.ecc, best.params.ecc) < NEAR_GIRDLE:
        return best.params
    try:
        alt = refine_fit(stats, moment_estimate(stats), objective.value, prior)
    except (ValueError, ArithmeticError):
        return best.params
    return (alt if alt.objective < best.objective else best).params


def _fit_vmf(stats, objective):
    return vmf_mml_estimate(stats) if objective is Objective.MML else vmf_ml_estimate(stats)


def fit_component(data, weights, family: Family, objective: Objective,
                  prior=PriorSpec.THREE_D_KAPPA_BETA, init=None):
    """Weighted single-component estimate; ``init`` warm-starts Kent refits."""
    stats = sufficient_stats(data, weights)
    if family is Family.VMF:
        return _fit_vmf(stats, objective)
    return _fit_kent(stats, objective, prior, init)


def mixture_weights(n_eff, objective: Objective):
    """``n_j / N`` for ML, ``(n_j + 1/2) / (N + K/2)`` for MML."""
    n_eff = np.asarray(n_eff, dtype=float)
    if objective is Objective.MML:
        w = (n_eff + 0.5) / (n_eff.sum() + 0.5 * len(n_eff))
    else:
        w = n_eff / n_eff.sum()
    return normalized_weights(w)


def m_step(data, resp: Responsibilities, family: Family, objective: Objective,
           prior=PriorSpec.THREE_D_KAPPA_BETA, previous=None, sample_weights=None):
    """
    Refit every component on its responsibility-weighted data.

    :param previous: components aligned with the columns of ``resp`` used to
        warm-start the refits
    :return: ``(model, starved)`` where ``starved`` lists components whose
        effective size fell below ``MIN_SUPPORT``; the model is ``None`` when
        any component starved. A lone component is never starved.
    """
    s = _sample_weights(data, sample_weights)
    k = resp.r.shape[1]
    starved = [j for j, nj in enumerate(resp.n_eff) if nj < MIN_SUPPORT] if k > 1 else []
    if len(starved) == k:
        # keep the largest so something is left to fit
        starved.remove(int(np.argmax(resp.n_eff)))
    if starved:
        return None, starved
    comps = []
    for j in range(k):
        init = previous[j] if previous is not None else None
        comps.append(fit_component(data, s * resp.r[:, j], family, objective, prior, init))
    return MixtureModel(family, mixture_weights(resp.n_eff, objective), comps), []


# --- scores -------------------------------------------------------------------

def _component_first_part(comp, n_j, prior):
    if isinstance(comp, KentParams):
        return first_part_nats(comp, n_j, prior)
    return vmf_first_part_nats(comp, n_j)


def weights_code_nats(weights, n):
    """``((K-1)/2) ln N - (1/2) sum ln w_j - ln (K-1)!``."""
    k = len(weights)
    return 0.5 * (k - 1) * math.log(n) - 0.5 * float(np.sum(np.log(weights))) - float(gammaln(k))


def mixture_message_length(data, m: MixtureModel, resp: Optional[Responsibilities] = None,
                           prior=PriorSpec.THREE_D_KAPPA_BETA, sample_weights=None, precision=None) -> MessageLength:
    """
    First part: ``K`` bits for the component count, the weight code, and
    each component's parameter cost evaluated at its effective size ``n_j``.
    Second part: mixture negative log-likelihood plus half the free
    parameter count.

    :param resp: memberships from ``e_step`` on ``m``; computed when omitted
    :param precision: optional datum accuracy; adds ``-N ln(precision^2)`` to
        the second part so totals are absolute code lengths
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    s = _sample_weights(data, sample_weights)
    if resp is None:
        resp = e_step(data, m, s)
    n = float(s.sum())
    first = m.k * LN2 + weights_code_nats(m.weights, n)
    for comp, n_j in zip(m.components, resp.n_eff):
        first += _component_first_part(comp, max(float(n_j), 1e-300), prior)
    second = _nll(data, m, s, resp) + 0.5 * m.n_free_params
    if precision is not None:
        second -= n * 2.0 * math.log(precision)
    return MessageLength.from_nats(first, second)


def _nll(data, m, s, resp):
    # reuse the E-step's log densities when ``resp`` carries them
    if resp is not None and resp.log_lik is not None:
        return float(-(s @ resp.log_lik))
    return mixture_negative_log_likelihood(data, m, s)


def criterion_score(data, m: MixtureModel, kind: CriterionKind, resp=None,
                    prior=PriorSpec.THREE_D_KAPPA_BETA, sample_weights=None):
    """
    Score in bits. AIC is ``p + L`` and BIC is ``(p/2) ln N + L`` with the
    negative log-likelihood ``L`` in nats, converted to bits afterwards.
    """
    if kind is CriterionKind.MML:
        return mixture_message_length(data, m, resp, prior, sample_weights).total_bits
    s = _sample_weights(np.atleast_2d(data), sample_weights)
    nll = _nll(data, m, s, resp)
    p = m.n_free_params
    penalty = p if kind is CriterionKind.AIC else 0.5 * p * math.log(float(s.sum()))
    return (penalty + nll) / LN2


# --- EM -----------------------------------------------------------------------

class EMResult(NamedTuple):
    model: MixtureModel
    resp: Responsibilities
    score: float
    history: list
    iterations: int
    converged: bool


def _drop_columns(resp_r, drop, s):
    """Remove columns and hand their mass to the rest in proportion."""
    keep = [j for j in range(resp_r.shape[1]) if j not in set(drop)]
    r = resp_r[:, keep]
    tot = r.sum(axis=1, keepdims=True)
    empty = tot[:, 0] <= 0
    r = np.where(empty[:, None], 1.0 / len(keep), r / np.where(tot > 0, tot, 1.0))
    return Responsibilities(r, s @ r), keep


def em_fit(data, init: MixtureModel, criterion=CriterionKind.MML, prior=PriorSpec.THREE_D_KAPPA_BETA,
           sample_weights=None, max_iter=MAX_ITER, tol_bits=MML_TOL_BITS, rel_tol=ML_REL_TOL,
           init_resp: Optional[Responsibilities] = None) -> EMResult:
    """
    Alternate E and M steps from ``init``.

    Stops when the score changes by less than ``tol_bits`` (message length)
    or by a relative ``rel_tol`` (AIC/BIC, whose EM objective is the
    likelihood), or after ``max_iter`` iterations. Components that starve
    are dropped and the loop continues with the smaller mixture. The best
    model seen is returned, so the reported score never exceeds the score
    of any later iterate.

    :param init_resp: start from these memberships (an M-step first) instead
        of from ``init``'s E-step; ``init`` then only warm-starts the refits
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    s = _sample_weights(data, sample_weights)
    objective = criterion.objective
    family = init.family

    def score_of(m, r):
        return criterion_score(data, m, criterion, r, prior, s)

    if init_resp is None:
        resp = e_step(data, init, s)
        score = score_of(init, resp)
        best = (init, resp, score)
        history = [score]
    else:
        resp, score, best, history = init_resp, math.inf, None, []
    prev = list(init.components)
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        new_m, starved = m_step(data, resp, family, objective, prior, prev, s)
        if starved:
            logger.debug("dropping starved components %s", starved)
            resp, keep = _drop_columns(resp.r, starved, s)
            prev = [prev[j] for j in keep]
            # scores before and after a size change are not comparable
            score, best, history = math.inf, None, []
            continue
        new_resp = e_step(data, new_m, s)
        new_score = score_of(new_m, new_resp)
        history.append(new_score)
        if best is None or new_score < best[2]:
            best = (new_m, new_resp, new_score)
        elif new_score > best[2] + 1e-9 * max(1.0, abs(best[2])):
            logger.debug("EM score rose from %.6f to %.6f bits", best[2], new_score)
        delta = abs(score - new_score)
        resp, score, prev = new_resp, new_score, list(new_m.components)
        limit = tol_bits if objective is Objective.MML else rel_tol * max(1.0, abs(new_score))
        if delta < limit:
            converged = True
            break
    if best is None:
        # only starvation steps happened; refit once at the surviving size
        m, _ = m_step(data, resp, family, objective, prior, prev, s)
        if m is None:
            m = MixtureModel(family, normalized_weights(resp.n_eff), prev)
        r = e_step(data, m, s)
        best = (m, r, score_of(m, r))
    return EMResult(best[0], best[1], float(best[2]), history, it, converged)


def single_component(data, family: Family, criterion=CriterionKind.MML,
                     prior=PriorSpec.THREE_D_KAPPA_BETA, sample_weights=None) -> EMResult:
    data = np.atleast_2d(np.asarray(data, dtype=float))
    s = _sample_weights(data, sample_weights)
    comp = fit_component(data, s, family, criterion.objective, prior)
    m = MixtureModel(family, [1.0], [comp])
    resp = e_step(data, m, s)
    return EMResult(m, resp, criterion_score(data, m, criterion, resp, prior, s), [], 0, True)


# --- perturbations ------------------------------------------------------------

def _frame(comp):
    if isinstance(comp, KentParams):
        return comp.axes
    mu = comp.mean
    helper = np.eye(3)[int(np.argmin(np.abs(mu)))]
    u = helper - (helper @ mu) * mu
    u /= np.linalg.norm(u)
    return np.column_stack([mu, u, np.cross(mu, u)])


def split_directions(comp, stats):
    """
    Initial child means for splitting ``comp``.

    In the parent's frame the 2x2 dispersion block across the mean has
    largest eigenvalue ``l1``; the children sit at colatitude
    ``arccos(sqrt(1 - l1))`` on either side of the parent mean along that
    eigenvector.

    :return: ``(child_axes_1, child_axes_2, theta)`` where each axes matrix
        is the parent frame rotated about its minor axis
    """
    Q = _frame(comp)
    B = Q.T @ stats.dispersion @ Q
    vals, vecs = np.linalg.eigh(B[1:, 1:])
    l1 = float(min(max(vals[-1], 0.0), 1.0 - 1e-12))
    major = Q[:, 1:] @ vecs[:, -1]
    mean = Q[:, 0]
    minor = np.cross(mean, major)
    theta = math.acos(math.sqrt(1.0 - l1))
    ct, st = math.cos(theta), math.sin(theta)
    children = []
    for sign in (1.0, -1.0):
        g1 = ct * mean + sign * st * major
        g2 = -sign * st * mean + ct * major
        children.append(np.column_stack([g1, g2, minor]))
    return children[0], children[1], theta


def _child(comp, axes):
    if isinstance(comp, KentParams):
        return KentParams.from_axes(axes, comp.kappa, comp.beta)
    return VmfParams.from_mean(axes[:, 0], comp.kappa)


class Candidate(NamedTuple):
    operation: str
    component: int
    result: EMResult


def split_component(data, fit: EMResult, j, criterion=CriterionKind.MML,
                    prior=PriorSpec.THREE_D_KAPPA_BETA, sample_weights=None) -> Optional[Candidate]:
    """
    Split component ``j`` in two, optimize the children by a local EM on
    ``j``'s share of the data, then run EM on the full ``K+1`` mixture.
    Returns ``None`` when ``j`` is too small to split.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    s = _sample_weights(data, sample_weights)
    m = fit.model
    if fit.resp.n_eff[j] < 2.0 * MIN_SUPPORT:
        return None
    local_w = s * fit.resp.r[:, j]
    parent = m.components[j]
    a1, a2, _ = split_directions(parent, sufficient_stats(data, local_w))
    local = MixtureModel(m.family, [0.5, 0.5], [_child(parent, a1), _child(parent, a2)])
    local_fit = em_fit(data, local, criterion, prior, local_w, max_iter=50)
    if local_fit.model.k < 2:
        return None
    comps = [c for i, c in enumerate(m.components) if i != j] + list(local_fit.model.components)
    w_rest = [w for i, w in enumerate(m.weights) if i != j]
    w = np.array(w_rest + list(m.weights[j] * local_fit.model.weights))
    start = MixtureModel(m.family, normalized_weights(w), comps)
    return Candidate("split", j, em_fit(data, start, criterion, prior, s))


def delete_component(data, fit: EMResult, j, criterion=CriterionKind.MML,
                     prior=PriorSpec.THREE_D_KAPPA_BETA, sample_weights=None) -> Optional[Candidate]:
    """Drop component ``j``, share its memberships among the rest in proportion, and rerun EM."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    s = _sample_weights(data, sample_weights)
    m = fit.model
    if m.k < 2:
        return None
    resp, keep = _drop_columns(fit.resp.r, [j], s)
    start = MixtureModel(m.family, normalized_weights(resp.n_eff / resp.n_eff.sum()), [m.components[i] for i in keep])
    return Candidate("delete", j, em_fit(data, start, criterion, prior, s, init_resp=resp))


def kl_partner(m: MixtureModel, j):
    """Index of the component closest to ``j`` in KL divergence from ``j``."""
    kl = vmf_kl if m.family is Family.VMF else kent_kl
    others = [(kl(m.components[j], m.components[i]), i) for i in range(m.k) if i != j]
    return min(others)[1]


def merge_components(data, fit: EMResult, j, criterion=CriterionKind.MML,
                     prior=PriorSpec.THREE_D_KAPPA_BETA, sample_weights=None) -> Optional[Candidate]:
    """
    Merge ``j`` with its KL-nearest partner: the merged component takes the
    summed weight and memberships, then EM runs on the ``K-1`` mixture.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    s = _sample_weights(data, sample_weights)
    m = fit.model
    if m.k < 2:
        return None
    i = kl_partner(m, j)
    r = fit.resp.r.copy()
    r[:, j] += r[:, i]
    keep = [c for c in range(m.k) if c != i]
    r = r[:, keep]
    resp = Responsibilities(r, s @ r)
    heavier = j if m.weights[j] >= m.weights[i] else i
    comps = [m.components[c] if c != j else m.components[heavier] for c in keep]
    w = [m.weights[c] + (m.weights[i] if c == j else 0.0) for c in keep]
    start = MixtureModel(m.family, normalized_weights(w), comps)
    return Candidate("merge", j, em_fit(data, start, criterion, prior, s, init_resp=resp))


# --- search -------------------------------------------------------------------

@dataclass
class TraceEntry:
    iteration: int
    operation: str
    component: Optional[int]
    k: int
    score: float
    accepted: bool
    first_bits: Optional[float] = None
    second_bits: Optional[float] = None


@dataclass
class SearchResult:
    model: MixtureModel
    score: float
    resp: Responsibilities
    trace: List[TraceEntry] = field(default_factory=list)

    def accepted(self):
        return [t for t in self.trace if t.accepted]


def _parts(data, fit, criterion, prior, s):
    if criterion is not CriterionKind.MML:
        return None, None
    ml = mixture_message_length(data, fit.model, fit.resp, prior, s)
    return ml.first_bits, ml.second_bits


def search_optimal(data, family=Family.KENT, criterion=CriterionKind.MML,
                   prior=PriorSpec.THREE_D_KAPPA_BETA, sample_weights=None, max_k=50) -> SearchResult:
    """
    Greedy search over mixture size. Starting from one component, each
    iteration tries splitting, deleting and merging every component and
    accepts the best candidate if it improves the score by more than
    ``ACCEPT_MARGIN`` bits (ties favour fewer components). Every candidate
    is recorded in the trace.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if len(data) < 10:
        raise ValueError("search needs at least 10 points")
    family = Family(family)
    criterion = CriterionKind(criterion)
    s = _sample_weights(data, sample_weights)
    current = single_component(data, family, criterion, prior, s)
    f1, f2 = _parts(data, current, criterion, prior, s)
    trace = [TraceEntry(0, "initial", None, 1, current.score, True, f1, f2)]
    iteration = 0
    while True:
        iteration += 1
        cands = []
        for j in range(current.model.k):
            ops = [merge_components, delete_component]
            if current.model.k < max_k:
                ops.insert(0, split_component)
            for op in ops:
                c = op(data, current, j, criterion, prior, s)
                if c is not None:
                    cands.append(c)
        if not cands:
            break
        best = min(cands, key=lambda c: (c.result.score, c.result.model.k))
        improved = best.result.score < current.score - ACCEPT_MARGIN
        for c in cands:
            ok = improved and c is best
            f1, f2 = _parts(data, c.result, criterion, prior, s) if ok else (None, None)
            trace.append(TraceEntry(iteration, c.operation, c.component, c.result.model.k, c.result.score, ok, f1, f2))
        logger.info("iteration %d: best %s of component %d -> K=%d, %.3f bits (current %.3f)",
                    iteration, best.operation, best.component, best.result.model.k, best.result.score, current.score)
        if not improved:
            break
        current = best.result
    return SearchResult(current.model, current.score, current.resp, trace)


def fixed_k_fit(data, k, family=Family.KENT, criterion=CriterionKind.MML,
                prior=PriorSpec.THREE_D_KAPPA_BETA, sample_weights=None, start: Optional[EMResult] = None) -> EMResult:
    """
    EM at a given size, grown by repeatedly splitting the component whose
    split scores best. Stops early if no split keeps all children alive.

    :param start: fit to grow from (for example a searched optimum); a single
        component when omitted
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    family = Family(family)
    criterion = CriterionKind(criterion)
    s = _sample_weights(data, sample_weights)
    fit = start if start is not None else single_component(data, family, criterion, prior, s)
    while fit.model.k < k:
        cands = [split_component(data, fit, j, criterion, prior, s) for j in range(fit.model.k)]
        cands = [c for c in cands if c is not None and c.result.model.k == fit.model.k + 1]
        if not cands:
            break
        fit = min(cands, key=lambda c: c.result.score).result
    return fit


def sample_mixture(m: MixtureModel, n, seed=None):
    """Draw ``n`` points; component counts are multinomial in the weights."""
    from kentmix.distributions import kent_sample, vmf_sample

    rng = np.random.default_rng(seed)
    counts = rng.multinomial(n, m.weights)
    parts, labels = [], []
    for j, (c, cnt) in enumerate(zip(m.components, counts)):
        if cnt == 0:
            continue
        draw = kent_sample(c, int(cnt), rng) if isinstance(c, KentParams) else vmf_sample(c, int(cnt), rng)
        parts.append(draw)
        labels.append(np.full(cnt, j))
    x = np.concatenate(parts)
    lab = np.concatenate(labels)
    order = rng.permutation(n)
    return x[order], lab[order]


# --- serialization ------------------------------------------------------------

def mixture_to_dict(m: MixtureModel, **metadata):
    doc = {
        "format": "kentmix.mixture",
        "version": SERIAL_VERSION,
        "family": m.family.value,
        "K": m.k,
        "weights": [float(w) for w in m.weights],
        "components": [c.to_dict() for c in m.components],
        "message_length_convention": {"I_K": "K bits", "weights": "multinomial"},
    }
    if metadata:
        doc["metadata"] = metadata
    return doc


def mixture_from_dict(doc):
    if doc.get("version") != SERIAL_VERSION:
        raise ValueError("unsupported mixture document version {!r}".format(doc.get("version")))
    family = Family(doc["family"])
    kind = KentParams if family is Family.KENT else VmfParams
    comps = [kind(**c) for c in doc["components"]]
    if doc.get("K", len(comps)) != len(comps):
        raise ValueError("K does not match the number of components")
    return MixtureModel(family, np.array(doc["weights"], dtype=float), comps)


def mixture_to_json(m: MixtureModel, **metadata):
    # repr-based float output round-trips every double exactly
    return json.dumps(mixture_to_dict(m, **metadata), indent=2)


def mixture_from_json(text):
    return mixture_from_dict(json.loads(text))


def kent_from_degrees(psi, alpha, eta, kappa, ecc):
    return KentParams.from_ecc(math.radians(psi), math.radians(alpha), math.radians(eta), kappa, ecc)


def replica_mixture():
    """Three equal-weight components with kappa 100 and eccentricities 0.1, 0.5, 0.9, placed close together."""
    comps = [kent_from_degrees(0, 60, 45, 100.0, 0.1),
             kent_from_degrees(150, 45, 30, 100.0, 0.5),
             kent_from_degrees(30, 45, 60, 100.0, 0.9)]
    return MixtureModel(Family.KENT, np.full(3, 1.0 / 3.0), comps)
