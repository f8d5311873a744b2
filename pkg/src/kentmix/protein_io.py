"""
Directional data from protein C-alpha traces, and the cost of encoding it.

Each step between successive C-alpha atoms becomes a unit direction
expressed in a local frame built from the preceding bonds, plus the step
length ``r``. Encoding a direction to accuracy ``epsilon`` on a sphere of
radius ``r`` costs ``-log2(f(x) epsilon^2 / r^2)`` bits under a density ``f``.

Local frame for the step ``v_i`` (atom i to atom i+1):

* ``X1`` is the previous bond ``v_{i-1}``;
* ``X2`` is the part of ``v_{i-2}`` orthogonal to ``X1``;
* ``X3 = X1 x X2``.

The first step of a segment has no preceding bond, so its frame is built
from the step itself (theta = 0); the second uses ``X1 = v_0`` and takes
``X2`` from the step itself (phi = 0). Every frame is therefore intrinsic to
the chain and the dataset does not change under rigid motions.
"""

import csv
import io
import json
import logging
import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional

import numpy as np

from kentmix.geometry import cartesian_to_spherical, spherical_to_cartesian

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-3
# successive C-alpha distances outside this open interval mark a chain break
BREAK_MIN = 2.0
BREAK_MAX = 6.0
_ZERO = 1e-9
LOG2_4PI = math.log2(4.0 * math.pi)


class ParseError(ValueError):
    """Malformed input; the message carries the line number."""


@dataclass
class CaTrace:
    chain: str
    coords: np.ndarray

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float).reshape(-1, 3)
        if len(self.coords) < 2:
            raise ValueError("a trace needs at least two residues")

    def step_lengths(self):
        return np.linalg.norm(np.diff(self.coords, axis=0), axis=1)

    def segments(self):
        """Index ranges ``(start, stop)`` of atoms between chain breaks."""
        d = self.step_lengths()
        out, start = [], 0
        for i, r in enumerate(d):
            if not BREAK_MIN < r < BREAK_MAX:
                if i + 1 - start >= 2:
                    out.append((start, i + 1))
                start = i + 1
        if len(self.coords) - start >= 2:
            out.append((start, len(self.coords)))
        return out


class DirectionalDataset(NamedTuple):
    theta: np.ndarray
    phi: np.ndarray
    radii: np.ndarray

    def __len__(self):
        return len(self.radii)

    def unit_vectors(self):
        return spherical_to_cartesian(self.theta, self.phi)

    @classmethod
    def concat(cls, parts):
        parts = list(parts)
        if not parts:
            return cls(np.empty(0), np.empty(0), np.empty(0))
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in cls._fields))


def _unit(v):
    n = np.linalg.norm(v)
    if n < _ZERO:
        raise ValueError("zero-length step")
    return v / n


def _perp(v, axis):
    """Unit part of ``v`` orthogonal to unit ``axis``, or ``None`` if parallel."""
    w = v - (v @ axis) * axis
    n = np.linalg.norm(w)
    return None if n < 1e-12 * max(1.0, np.linalg.norm(v)) else w / n


def _segment_directions(coords):
    v = np.diff(coords, axis=0)
    r = np.linalg.norm(v, axis=1)
    if np.any(r < _ZERO):
        raise ValueError("zero-length step between successive atoms")
    u = v / r[:, None]
    local = np.empty_like(u)
    prev_x2 = None
    for i in range(len(u)):
        if i == 0:
            local[i] = (1.0, 0.0, 0.0)
            continue
        x1 = u[i - 1]
        x2 = _perp(u[i - 2], x1) if i >= 2 else None
        if x2 is None and prev_x2 is not None:
            x2 = _perp(prev_x2, x1)
        if x2 is None:
            x2 = _perp(u[i], x1)
        if x2 is None:
            # every bond so far is collinear; any perpendicular will do
            helper = np.eye(3)[int(np.argmin(np.abs(x1)))]
            x2 = _perp(helper, x1)
        x3 = np.cross(x1, x2)
        prev_x2 = x2
        local[i] = (u[i] @ x1, u[i] @ x2, u[i] @ x3)
    theta, phi = cartesian_to_spherical(local)
    return DirectionalDataset(np.atleast_1d(theta), np.atleast_1d(phi), r)


def directions_from_trace(trace: CaTrace) -> DirectionalDataset:
    """
    Directions and step lengths for every step of the trace that does not
    cross a chain break.
    """
    parts = []
    for a, b in trace.segments():
        parts.append(_segment_directions(trace.coords[a:b]))
    skipped = len(trace.coords) - 1 - sum(len(p) for p in parts)
    if skipped:
        logger.info("chain %s: skipped %d step(s) across chain breaks", trace.chain, skipped)
    return DirectionalDataset.concat(parts)


def null_model_bits(ds: DirectionalDataset, model="uniform", epsilon=DEFAULT_EPSILON):
    """
    Bits to encode every direction to accuracy ``epsilon``.

    :param model: ``"uniform"`` or a :class:`~kentmix.mixture.MixtureModel`
        (anything accepted by :func:`~kentmix.mixture.mixture_log_density`)
    :return: ``(total_bits, bits_per_residue)``
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    n = len(ds)
    if n == 0:
        return 0.0, math.nan
    area = -2.0 * np.log2(epsilon / np.asarray(ds.radii, dtype=float))
    if isinstance(model, str):
        if model != "uniform":
            raise ValueError("unknown model {!r}".format(model))
        dens = np.full(n, LOG2_4PI)
    else:
        from kentmix.mixture import mixture_log_density

        dens = -mixture_log_density(ds.unit_vectors(), model) / math.log(2.0)
    total = float(np.sum(dens + area))
    return total, total / n


# --- parsing ------------------------------------------------------------------

def _looks_like_pdb(lines):
    for line in lines:
        if line.startswith(("ATOM  ", "HETATM", "HEADER", "MODEL ", "REMARK", "CRYST1")):
            return True
    return False


def _parse_pdb(lines, source):
    chains, order = {}, []
    seen = {}
    for lineno, line in enumerate(lines, 1):
        if line.startswith("ENDMDL"):
            break
        if not line.startswith("ATOM  "):
            continue
        if len(line) < 54:
            raise ParseError("{}:{}: ATOM record too short".format(source, lineno))
        if line[12:16].strip() != "CA":
            continue
        altloc = line[16]
        chain = line[21].strip() or "A"
        res_key = (chain, line[22:27])
        try:
            xyz = [float(line[30:38]), float(line[38:46]), float(line[46:54])]
        except ValueError:
            raise ParseError("{}:{}: bad coordinates".format(source, lineno)) from None
        if altloc not in (" ", "A"):
            seen.setdefault(res_key, (lineno, None))
            continue
        if res_key in seen and seen[res_key][1] is not None:
            continue
        seen[res_key] = (lineno, xyz)
        if chain not in chains:
            chains[chain] = []
            order.append(chain)
        chains[chain].append(xyz)
    for key, (lineno, xyz) in seen.items():
        if xyz is None:
            logger.warning("%s:%d: residue %s %s has no CA with altloc blank or A; skipped",
                           source, lineno, key[0], key[1].strip())
    return [(c, chains[c]) for c in order]


def _parse_csv(lines, source):
    chains, order = {}, []
    for lineno, row in enumerate(csv.reader(lines), 1):
        if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
            continue
        if len(row) not in (3, 4):
            raise ParseError("{}:{}: expected x,y,z[,chain]".format(source, lineno))
        try:
            xyz = [float(v) for v in row[:3]]
        except ValueError:
            if lineno == 1:
                continue  # header
            raise ParseError("{}:{}: bad coordinates".format(source, lineno)) from None
        chain = row[3].strip() if len(row) == 4 else "A"
        if chain not in chains:
            chains[chain] = []
            order.append(chain)
        chains[chain].append(xyz)
    return [(c, chains[c]) for c in order]


def parse_ca_text(text, source="<string>") -> List[CaTrace]:
    """Parse PDB ATOM/CA records or ``x,y,z[,chain]`` CSV into traces."""
    lines = text.splitlines()
    raw = _parse_pdb(lines, source) if _looks_like_pdb(lines) else _parse_csv(lines, source)
    traces = []
    for chain, coords in raw:
        if len(coords) < 2:
            logger.warning("%s: chain %s has fewer than two residues; skipped", source, chain)
            continue
        traces.append(CaTrace(chain, np.array(coords)))
    if not traces:
        raise ParseError("{}: no C-alpha traces found".format(source))
    return traces


def parse_ca_file(path) -> List[CaTrace]:
    with open(path) as fh:
        return parse_ca_text(fh.read(), str(path))


def dataset_to_csv(ds: DirectionalDataset):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["theta_deg", "phi_deg", "r"])
    for t, p, r in zip(ds.theta, ds.phi, ds.radii):
        w.writerow([repr(math.degrees(t)), repr(math.degrees(p)), repr(float(r))])
    return buf.getvalue()


def dataset_from_csv(text) -> DirectionalDataset:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["theta_deg", "phi_deg", "r"]:
        raise ParseError("expected header theta_deg,phi_deg,r")
    vals = np.array([[float(v) for v in row] for row in rows[1:] if row], dtype=float).reshape(-1, 3)
    return DirectionalDataset(np.radians(vals[:, 0]), np.radians(vals[:, 1]), vals[:, 2])


def encoding_summary(ds: DirectionalDataset, model=None, epsilon=DEFAULT_EPSILON):
    uni, uni_pr = null_model_bits(ds, "uniform", epsilon)
    out = {"n_pairs": len(ds), "epsilon": epsilon, "bits_uniform": uni, "bits_per_residue_uniform": uni_pr}
    if model is not None:
        tot, pr = null_model_bits(ds, model, epsilon)
        out.update({"bits_model": tot, "bits_per_residue": pr})
    else:
        out.update({"bits_model": uni, "bits_per_residue": uni_pr})
    return out


def summary_json(summary: dict, per_chain: Optional[dict] = None):
    doc = dict(summary)
    if per_chain is not None:
        doc["chains"] = per_chain
    return json.dumps(doc, indent=2, sort_keys=True)
