"""
Command-line entry point.

Subcommands: ``fit``, ``sample``, ``mixture``, ``study`` and ``protein``.
Angles are read and written in degrees; everything internal is radians.
Every run writes a manifest (command line, seed, config digest, version,
lattice constants, prior, criterion) next to its outputs.

Exit codes: 0 success, 2 bad input, 3 estimation failure.
"""

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from kentmix import __version__
from kentmix.distributions import KentParams, kent_sample
from kentmix.estimators import (
    ESTIMATORS,
    LATTICE_Q,
    PriorSpec,
    fisher_info,
    fit_kent,
    message_length,
    negative_log_likelihood,
)
from kentmix.evaluation import (
    DEFAULT_ESTIMATORS,
    eccentricity_grid,
    report_json,
    run_study,
    sample_size_grid,
    summary_csv,
    trials_csv,
)
from kentmix.geometry import cartesian_to_spherical, normalize, spherical_to_cartesian
from kentmix.mixture import (
    CriterionKind,
    Family,
    fixed_k_fit,
    mixture_from_json,
    mixture_message_length,
    mixture_to_dict,
    search_optimal,
)
from kentmix.protein_io import (
    DEFAULT_EPSILON,
    ParseError,
    dataset_to_csv,
    directions_from_trace,
    DirectionalDataset,
    encoding_summary,
    parse_ca_file,
)

logger = logging.getLogger("kentmix")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_ESTIMATION = 3


class InputError(Exception):
    pass


class EstimationError(Exception):
    pass


@dataclass
class RunManifest:
    command: list
    seed: object
    config_digest: str
    version: str
    lattice_q: dict
    prior: str
    criterion: str

    @classmethod
    def build(cls, argv, args, prior=None, criterion=None):
        cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
        digest = hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()
        return cls(list(argv), getattr(args, "seed", None), digest, __version__,
                   {str(k): v for k, v in LATTICE_Q.items()}, prior or "", criterion or "")

    def to_dict(self):
        return asdict(self)


# --- I/O helpers --------------------------------------------------------------

def _open_out(path):
    if path is None or path == "-":
        return sys.stdout
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", newline="")


def _write_text(path, text):
    fh = _open_out(path)
    try:
        fh.write(text)
    finally:
        if fh is not sys.stdout:
            fh.close()


def _write_manifest_beside(path, manifest: RunManifest):
    if path is None or path == "-":
        logger.info("manifest: %s", json.dumps(manifest.to_dict(), sort_keys=True))
        return
    _write_text(str(path) + ".manifest.json", json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")


def read_directions(path):
    """
    Unit vectors from a CSV file. A header naming ``x,y,z`` or
    ``theta,phi`` (degrees) picks the format; without a header three
    columns mean vectors and two mean degrees.
    """
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    except OSError as exc:
        raise InputError(str(exc)) from None
    if not rows:
        raise InputError("{}: no data".format(path))
    header = [h.strip().lower() for h in rows[0]]
    cols = None
    if {"x", "y", "z"} <= set(header):
        cols, kind, rows = [header.index(c) for c in ("x", "y", "z")], "xyz", rows[1:]
    else:
        th = [i for i, h in enumerate(header) if h.startswith("theta")]
        ph = [i for i, h in enumerate(header) if h.startswith("phi")]
        if th and ph:
            cols, kind, rows = [th[0], ph[0]], "deg", rows[1:]
    if cols is None:
        kind = "xyz" if len(rows[0]) >= 3 else "deg"
        cols = [0, 1, 2] if kind == "xyz" else [0, 1]
    try:
        vals = np.array([[float(r[c]) for c in cols] for r in rows], dtype=float)
    except (ValueError, IndexError) as exc:
        raise InputError("{}: {}".format(path, exc)) from None
    if len(vals) == 0:
        raise InputError("{}: no data rows".format(path))
    if kind == "xyz":
        norms = np.linalg.norm(vals, axis=1)
        if np.any(norms < 1e-12):
            raise InputError("{}: zero vector in input".format(path))
        return normalize(vals)
    return spherical_to_cartesian(np.radians(vals[:, 0]), np.radians(vals[:, 1]))


def params_to_degrees(p: KentParams):
    return {"psi_deg": math.degrees(p.psi), "alpha_deg": math.degrees(p.alpha), "eta_deg": math.degrees(p.eta),
            "kappa": p.kappa, "beta": p.beta, "ecc": p.ecc}


def params_from_degrees(d):
    try:
        kappa = float(d["kappa"])
        beta = float(d["beta"]) if d.get("beta") is not None else 0.5 * float(d.get("ecc", 0.0)) * kappa
        return KentParams(math.radians(float(d.get("psi", 0.0))), math.radians(float(d.get("alpha", 0.0))),
                          math.radians(float(d.get("eta", 0.0))), kappa, beta)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError("invalid parameters: {}".format(exc)) from None


_PRIORS = {
    "3d_kappa_beta": PriorSpec.THREE_D_KAPPA_BETA,
    "3d_kappa_ecc": PriorSpec.THREE_D_KAPPA_ECC,
    "2d_kappa_beta": PriorSpec.TWO_D_KAPPA_BETA,
    "2d_kappa_ecc": PriorSpec.TWO_D_KAPPA_ECC,
    "rosenblatt": PriorSpec.TWO_D_ROSENBLATT,
}


# --- commands -----------------------------------------------------------------

def cmd_fit(args, argv):
    x = read_directions(args.input)
    prior = _PRIORS[args.prior]
    try:
        res = fit_kent(x, args.estimator, prior)
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        raise EstimationError(str(exc)) from None
    p = res.params
    ml = message_length(x, p, prior)
    fi = fisher_info(p, len(x))
    manifest = RunManifest.build(argv, args, prior.value, "")
    doc = {"estimator": args.estimator, "n": len(x), "estimate": params_to_degrees(p),
           "negative_log_likelihood_nats": negative_log_likelihood(x, p),
           "message_length_bits": {"first": ml.first_bits, "second": ml.second_bits, "total": ml.total_bits},
           "fisher_log_det": fi.log_det,
           "optimizer": {"objective": res.objective, "converged": res.converged, "n_evals": res.n_evals,
                         "flags": list(res.flags)},
           "manifest": manifest.to_dict()}
    _write_text(args.out, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_sample(args, argv):
    if args.params:
        try:
            with open(args.params) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(str(exc)) from None
    else:
        d = {"psi": args.psi, "alpha": args.alpha, "eta": args.eta, "kappa": args.kappa,
             "beta": args.beta, "ecc": args.ecc}
    try:
        p = params_from_degrees(d)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    if args.n < 1:
        raise InputError("-n must be positive")
    x = kent_sample(p, args.n, args.seed)
    theta, phi = cartesian_to_spherical(x)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "y", "z", "theta_deg", "phi_deg"])
    for v, t, f in zip(x, np.atleast_1d(theta), np.atleast_1d(phi)):
        w.writerow([repr(float(v[0])), repr(float(v[1])), repr(float(v[2])), repr(math.degrees(t)),
                    repr(math.degrees(f))])
    _write_text(args.out, buf.getvalue())
    _write_manifest_beside(args.out, RunManifest.build(argv, args))
    return EXIT_OK


def _trace_csv(result, criterion):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "operation", "component", "k", "score_bits", "accepted", "first_bits", "second_bits"])
    for t in result.trace:
        w.writerow([t.iteration, t.operation, "" if t.component is None else t.component, t.k, repr(t.score),
                    int(t.accepted), "" if t.first_bits is None else repr(t.first_bits),
                    "" if t.second_bits is None else repr(t.second_bits)])
    return buf.getvalue()


def cmd_mixture(args, argv):
    x = read_directions(args.input)
    family = Family(args.family)
    criterion = CriterionKind(args.criterion)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest.build(argv, args, PriorSpec.THREE_D_KAPPA_BETA.value, criterion.value)
    try:
        if args.search == "fixed-k":
            if args.k is None or args.k < 1:
                raise InputError("--search fixed-k needs --k >= 1")
            fit = fixed_k_fit(x, args.k, family, criterion)
            model, score, resp, trace = fit.model, fit.score, fit.resp, None
        else:
            res = search_optimal(x, family, criterion)
            model, score, resp, trace = res.model, res.score, res.resp, res
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        raise EstimationError(str(exc)) from None
    ml = mixture_message_length(x, model, resp)
    doc = mixture_to_dict(model, criterion=criterion.value, score_bits=score, first_bits=ml.first_bits,
                          second_bits=ml.second_bits, total_bits=ml.total_bits, n=len(x),
                          manifest=manifest.to_dict())
    _write_text(out / "mixture.json", json.dumps(doc, indent=2) + "\n")
    if trace is not None:
        _write_text(out / "trace.csv", _trace_csv(trace, criterion))
    _write_text(out / "manifest.json", json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _study_configs(cfg):
    try:
        kappa = float(cfg["kappa"])
        trials = int(cfg.get("trials", 100))
        seed = int(cfg.get("seed", 0))
        estimators = tuple(cfg.get("estimators", DEFAULT_ESTIMATORS))
        angles = tuple(math.radians(float(a)) for a in cfg.get("angles_deg", (0.0, 90.0, 0.0)))
        unknown = set(estimators) - set(ESTIMATORS)
        if unknown:
            raise InputError("unknown estimators: {}".format(sorted(unknown)))
        if "sample_sizes" in cfg:
            return sample_size_grid(kappa, float(cfg["ecc"]), [int(n) for n in cfg["sample_sizes"]], trials, seed,
                                    estimators, angles)
        eccs = [float(e) for e in cfg.get("eccs", (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9))]
        return eccentricity_grid(kappa, int(cfg["sample_size"]), trials, seed, eccs, estimators, angles)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError("invalid study config: {}".format(exc)) from None


def cmd_study(args, argv):
    try:
        with open(args.config) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(str(exc)) from None
    configs = _study_configs(cfg)
    reports = [run_study(c) for c in configs]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_text(out / "summary.csv", summary_csv(reports))
    _write_text(out / "trials.csv", trials_csv(reports))
    _write_text(out / "summary.json", report_json(reports) + "\n")
    manifest = RunManifest.build(argv, args, PriorSpec.THREE_D_KAPPA_BETA.value, "")
    manifest.seed = cfg.get("seed", 0)
    _write_text(out / "manifest.json", json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_protein(args, argv):
    try:
        traces = parse_ca_file(args.input)
    except OSError as exc:
        raise InputError(str(exc)) from None
    model = None
    if args.model != "uniform":
        try:
            with open(args.model) as fh:
                model = mixture_from_json(fh.read())
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise InputError("cannot read model: {}".format(exc)) from None
    parts, chains = [], {}
    for i, t in enumerate(traces):
        try:
            ds = directions_from_trace(t)
        except ValueError as exc:
            raise InputError("chain {}: {}".format(t.chain, exc)) from None
        parts.append(ds)
        chains["{}:{}".format(i, t.chain)] = encoding_summary(ds, model, args.epsilon)
    ds = DirectionalDataset.concat(parts)
    doc = encoding_summary(ds, model, args.epsilon)
    doc["chains"] = chains
    doc["manifest"] = RunManifest.build(argv, args).to_dict()
    _write_text(args.out, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    if args.directions:
        _write_text(args.directions, dataset_to_csv(ds))
    return EXIT_OK


# --- parser -------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="kentmix", description="Kent (FB5) and vMF modelling of directional data")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging on standard error")
    p.add_argument("--threads", type=int, default=1, help="worker cap (work currently runs in one process)")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit one Kent distribution")
    f.add_argument("input")
    f.add_argument("--estimator", choices=ESTIMATORS, default="mml")
    f.add_argument("--prior", choices=sorted(_PRIORS), default="3d_kappa_beta")
    f.add_argument("--out", default=None)
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("sample", help="draw from a Kent distribution")
    s.add_argument("--params", help="JSON file with psi, alpha, eta (degrees), kappa and beta or ecc")
    s.add_argument("--psi", type=float, default=0.0)
    s.add_argument("--alpha", type=float, default=0.0)
    s.add_argument("--eta", type=float, default=0.0)
    s.add_argument("--kappa", type=float, default=None)
    s.add_argument("--beta", type=float, default=None)
    s.add_argument("--ecc", type=float, default=0.0)
    s.add_argument("-n", type=int, default=100)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_sample)

    m = sub.add_parser("mixture", help="fit a mixture")
    m.add_argument("input")
    m.add_argument("--family", choices=[f.value for f in Family], default="kent")
    m.add_argument("--criterion", choices=[c.value for c in CriterionKind], default="mml")
    m.add_argument("--search", choices=["exhaustive", "fixed-k"], default="exhaustive")
    m.add_argument("--k", type=int, default=None)
    m.add_argument("--seed", type=int, default=None, help="recorded in the manifest; the search is deterministic")
    m.add_argument("--out", required=True, help="output directory")
    m.set_defaults(func=cmd_mixture)

    st = sub.add_parser("study", help="run an estimator comparison study")
    st.add_argument("--config", required=True)
    st.add_argument("--out-dir", required=True)
    st.set_defaults(func=cmd_study)

    pr = sub.add_parser("protein", help="encoding cost of C-alpha directions")
    pr.add_argument("input")
    pr.add_argument("--model", default="uniform", help="'uniform' or a mixture JSON file")
    pr.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    pr.add_argument("--out", default=None)
    pr.add_argument("--directions", default=None, help="also write theta_deg,phi_deg,r CSV here")
    pr.set_defaults(func=cmd_protein)
    return p


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "sample" and args.params is None and args.kappa is None:
        logger.error("sample needs --params or --kappa")
        return EXIT_INPUT
    try:
        return args.func(args, ["kentmix"] + argv)
    except (InputError, ParseError) as exc:
        logger.error("%s", exc)
        return EXIT_INPUT
    except EstimationError as exc:
        logger.error("estimation failed: %s", exc)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
