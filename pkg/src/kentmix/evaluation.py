"""
Estimator comparison by simulation.

Each trial draws a sample from a known Kent distribution, fits it with every
requested estimator, and records the estimate, its KL divergence from the
true distribution, and a likelihood-ratio statistic against the ML fit.
Trials use independent random streams spawned from one master seed, so a
study is reproducible trial by trial.
"""

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np
from scipy.special import gammaincc

from kentmix.distributions import KentParams, kent_kl, kent_sample
from kentmix.estimators import fit_kent, ml_fit, negative_log_likelihood, refine_fit, sufficient_stats
from kentmix.geometry import wrap_angle

logger = logging.getLogger(__name__)

DEFAULT_ESTIMATORS = ("moment", "ml", "map1", "map2", "mml")
# the two comparison groups: one MAP variant at a time alongside the others
WIN_GROUPS = {
    "map1": ("moment", "ml", "map1", "mml"),
    "map2": ("moment", "ml", "map2", "mml"),
}
LRT_DOF = 5
LRT_LEVEL = 0.01
# angle periods for (psi, alpha, eta); alpha is not periodic
_PERIODS = (math.pi, None, 2.0 * math.pi)


@dataclass
class StudyConfig:
    true_params: KentParams
    sample_size: int
    trials: int
    seed: int
    estimators: Sequence[str] = DEFAULT_ESTIMATORS

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.sample_size < 6:
            raise ValueError("sample_size must be at least 6")
        self.estimators = tuple(self.estimators)

    def to_dict(self):
        return {"true_params": self.true_params.to_dict(), "sample_size": self.sample_size,
                "trials": self.trials, "seed": self.seed, "estimators": list(self.estimators)}


class EstimateRecord(NamedTuple):
    estimator: str
    params: Optional[KentParams]
    kl: float
    lrt_stat: float
    p_value: float
    error: Optional[str] = None


@dataclass
class TrialSummary:
    trial: int
    records: Dict[str, EstimateRecord]


# --- statistics -----------------------------------------------------------------

def param_error(estimate: KentParams, truth: KentParams):
    """Signed error 5-vector; psi and eta differences are wrapped to their periods."""
    d = estimate.as_vector() - truth.as_vector()
    for i, period in enumerate(_PERIODS):
        if period is not None:
            d[i] = float(wrap_angle(d[i], period))
    return d


def bias_mse(estimates: Sequence[KentParams], truth: KentParams):
    """
    ``(bias^2, mse)`` over the parameter 5-vector, where
    ``mse = bias^2 + trace(Var)`` with the population variance.
    """
    if len(estimates) == 0:
        raise ValueError("no estimates")
    err = np.array([param_error(e, truth) for e in estimates])
    mean = err.mean(axis=0)
    bias_sq = float(mean @ mean)
    return bias_sq, bias_sq + float(err.var(axis=0).sum())


def kl_win_fractions(trials: Sequence[TrialSummary], estimators: Optional[Sequence[str]] = None):
    """
    Fraction of trials in which each estimator has the smallest KL
    divergence. A tie between several estimators shares that trial equally.
    """
    if estimators is None:
        estimators = list(trials[0].records) if trials else []
    wins = {e: 0.0 for e in estimators}
    for t in trials:
        kls = [t.records[e].kl for e in estimators]
        best = min(kls)
        winners = [e for e, v in zip(estimators, kls) if v == best]
        for e in winners:
            wins[e] += 1.0 / len(winners)
    n = len(trials)
    return {e: w / n for e, w in wins.items()} if n else wins


def chi2_sf(x, dof=LRT_DOF):
    """Upper tail of the chi-square distribution."""
    if x <= 0:
        return 1.0
    return float(gammaincc(0.5 * dof, 0.5 * x))


def chi2_5_cdf_closed_form(x):
    """``P(chi2_5 <= x)`` written with erf; an independent check of :func:`chi2_sf`."""
    if x <= 0:
        return 0.0
    h = 0.5 * x
    return math.erf(math.sqrt(h)) - math.sqrt(2.0 * x / math.pi) * math.exp(-h) * (1.0 + x / 3.0)


def ml_reference(data, starts: Sequence[KentParams] = (), ml=None):
    """
    Best available ML fit: ``ml`` (or a fresh search from the moment
    estimate) and a Fisher-scoring polish from each extra start; the
    smallest negative log-likelihood wins.
    """
    s = sufficient_stats(data)
    best = ml if ml is not None else ml_fit(s)
    for init in starts:
        r = refine_fit(s, init, "ml")
        if r.objective < best.objective:
            best = r
    return best


def lrt(data, estimate: KentParams, ml=None):
    """
    ``Lambda = 2 (NLL(estimate) - NLL(ML))`` and its chi-square(5) p-value.

    :param ml: a precomputed ML :class:`~kentmix.estimators.FitResult`; when
        omitted one is fitted, also started from ``estimate``
    """
    if ml is None:
        ml = ml_reference(data, [estimate])
    nll_est = negative_log_likelihood(data, estimate)
    # the optimizer can stop a hair short of the true ML point
    stat = max(0.0, 2.0 * (nll_est - min(ml.objective, nll_est)))
    return stat, chi2_sf(stat)


# --- studies --------------------------------------------------------------------

def trial_streams(seed, trials):
    """One independent generator per trial, spawned from the master seed."""
    return [np.random.default_rng(ss) for ss in np.random.SeedSequence(seed).spawn(trials)]


def run_trial(cfg: StudyConfig, index, rng) -> TrialSummary:
    data = kent_sample(cfg.true_params, cfg.sample_size, rng)
    fits, ml = {}, None
    for name in cfg.estimators:
        try:
            res = fit_kent(data, name)
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            logger.warning("trial %d: %s failed: %s", index, name, exc)
            fits[name] = exc
            continue
        fits[name] = res.params
        if name == "ml":
            ml = res
    ml = ml_reference(data, [p for p in fits.values() if isinstance(p, KentParams)], ml)
    records = {}
    for name, p in fits.items():
        if not isinstance(p, KentParams):
            records[name] = EstimateRecord(name, None, math.inf, math.nan, math.nan, str(p))
            continue
        stat, pv = lrt(data, p, ml)
        records[name] = EstimateRecord(name, p, kent_kl(cfg.true_params, p), stat, pv)
    return TrialSummary(index, records)


@dataclass
class StudyReport:
    config: StudyConfig
    trials: List[TrialSummary]
    summary: Dict[str, dict] = field(default_factory=dict)
    win_rates: Dict[str, Dict[str, float]] = field(default_factory=dict)


def summarize(cfg: StudyConfig, trials: Sequence[TrialSummary]):
    out = {}
    for name in cfg.estimators:
        recs = [t.records[name] for t in trials]
        ok = [r for r in recs if r.params is not None]
        row = {"failures": len(recs) - len(ok)}
        if ok:
            b2, mse = bias_mse([r.params for r in ok], cfg.true_params)
            stats = np.array([r.lrt_stat for r in ok])
            row.update({"bias_sq": b2, "mse": mse, "mean_kl": float(np.mean([r.kl for r in ok])),
                        "reject_rate": float(np.mean([r.p_value < LRT_LEVEL for r in ok])),
                        "lrt_median": float(np.median(stats)),
                        "lrt_q1": float(np.percentile(stats, 25)), "lrt_q3": float(np.percentile(stats, 75))})
        out[name] = row
    return out


def win_rates_by_group(cfg: StudyConfig, trials):
    """Win fractions within each MAP group whose members were all run."""
    have = set(cfg.estimators)
    groups = {g: [e for e in members] for g, members in WIN_GROUPS.items() if set(members) <= have}
    if not groups:
        groups = {"all": list(cfg.estimators)}
    return {g: kl_win_fractions(trials, members) for g, members in groups.items()}


def run_study(cfg: StudyConfig) -> StudyReport:
    """Run every trial of one cell and aggregate it."""
    trials = [run_trial(cfg, i, rng) for i, rng in enumerate(trial_streams(cfg.seed, cfg.trials))]
    return StudyReport(cfg, trials, summarize(cfg, trials), win_rates_by_group(cfg, trials))


def eccentricity_grid(kappa, sample_size, trials, seed, eccs=(0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9),
                      estimators=DEFAULT_ESTIMATORS, angles=(0.0, 0.5 * math.pi, 0.0)):
    """One :class:`StudyConfig` per eccentricity; cell seeds derive from ``seed``."""
    seeds = np.random.SeedSequence(seed).generate_state(len(eccs))
    return [StudyConfig(KentParams.from_ecc(*angles, kappa, e), sample_size, trials, int(s), estimators)
            for e, s in zip(eccs, seeds)]


def sample_size_grid(kappa, ecc, sizes, trials, seed, estimators=DEFAULT_ESTIMATORS,
                     angles=(0.0, 0.5 * math.pi, 0.0)):
    seeds = np.random.SeedSequence(seed).generate_state(len(sizes))
    return [StudyConfig(KentParams.from_ecc(*angles, kappa, ecc), n, trials, int(s), estimators)
            for n, s in zip(sizes, seeds)]


# --- output ---------------------------------------------------------------------

def _fmt(x):
    return repr(float(x)) if x is not None else ""


def cell_label(cfg: StudyConfig):
    p = cfg.true_params
    return "N={};kappa={};e={}".format(cfg.sample_size, _fmt(p.kappa), _fmt(p.ecc))


def summary_csv(reports: Sequence[StudyReport]):
    """One row per (estimator, cell)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["estimator", "cell", "N", "kappa", "e", "bias_sq", "mse", "mean_kl",
                "win_rate_map1_group", "win_rate_map2_group", "reject_rate", "lrt_q1", "lrt_median", "lrt_q3",
                "failures"])
    rows = []
    for rep in reports:
        p = rep.config.true_params
        for name in rep.config.estimators:
            s = rep.summary.get(name, {})
            rows.append([name, cell_label(rep.config), rep.config.sample_size, _fmt(p.kappa), _fmt(p.ecc),
                         _fmt(s.get("bias_sq")), _fmt(s.get("mse")), _fmt(s.get("mean_kl")),
                         _fmt(rep.win_rates.get("map1", {}).get(name)), _fmt(rep.win_rates.get("map2", {}).get(name)),
                         _fmt(s.get("reject_rate")), _fmt(s.get("lrt_q1")), _fmt(s.get("lrt_median")),
                         _fmt(s.get("lrt_q3")), s.get("failures", 0)])
    rows.sort(key=lambda r: (r[0], r[1]))
    w.writerows(rows)
    return buf.getvalue()


def trials_csv(reports: Sequence[StudyReport]):
    """Raw per-trial records, ordered by estimator, cell and trial."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["estimator", "cell", "trial", "psi", "alpha", "eta", "kappa", "beta", "kl", "lrt_stat", "p_value",
                "error"])
    rows = []
    for rep in reports:
        for t in rep.trials:
            for name, r in t.records.items():
                v = r.params.as_vector() if r.params is not None else [None] * 5
                rows.append([name, cell_label(rep.config), t.trial] + [_fmt(x) for x in v]
                            + [_fmt(r.kl), _fmt(r.lrt_stat), _fmt(r.p_value), r.error or ""])
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    w.writerows(rows)
    return buf.getvalue()


def report_json(reports: Sequence[StudyReport], seed_scheme="numpy SeedSequence.spawn per trial"):
    doc = {"seed_scheme": seed_scheme,
           "cells": [{"cell": cell_label(r.config), "config": r.config.to_dict(),
                      "summary": r.summary, "win_rates": r.win_rates} for r in reports]}
    return json.dumps(doc, indent=2, sort_keys=True)
