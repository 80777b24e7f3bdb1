"""Co-occurrence network modeling of coded interaction streams.

Accumulation uses moving stanza windows: each coded line registers a binary
co-occurrence between its own code and every distinct code appearing in the
preceding window-1 lines of the same conversation, attributed to the line's
unit of analysis and summed over windows. Unit vectors live on the
K*(K-1)/2-dimensional space of unordered code pairs, are normalized to the
unit sphere, and are embedded by a means rotation: the first basis vector is
the normalized difference of the two group means, the remaining directions
come from an SVD on the orthogonal complement, ordered by variance. Code
nodes are co-registered by least squares so that each unit's weighted
edge-midpoint centroid approximates its embedded score.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .coding import ALL_CODES, CodedLine
from .errors import (DegenerateRotation, EmptyGroup, SingleGroup,
                     UnderdeterminedPlacement)

_UNIT_FIELDS = ("participant", "task", "condition")
_CONV_FIELDS = ("condition", "task")


@dataclass(frozen=True)
class ENAConfig:
    window: int = 40
    code_set: tuple[str, ...] = tuple(c.value for c in ALL_CODES)
    unit_fields: tuple[str, ...] = _UNIT_FIELDS
    conversation_fields: tuple[str, ...] = _CONV_FIELDS

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if not self.code_set or len(set(self.code_set)) != len(self.code_set):
            raise ValueError("code_set must be non-empty and duplicate-free")


def pair_list(code_set: Sequence[str]) -> list[tuple[str, str]]:
    """Unordered code pairs in fixed (i < j) order; the vector dimension."""
    return [(code_set[i], code_set[j])
            for i in range(len(code_set)) for j in range(i + 1, len(code_set))]


@dataclass(frozen=True)
class AdjacencyVector:
    unit_key: tuple[str, ...]
    entries: np.ndarray
    outcome: str = "unknown"
    order: int = 0

    def __post_init__(self):
        if np.any(self.entries < 0):
            raise ValueError("adjacency entries must be >= 0")


def _select(key: tuple[str, str, str], fields: Sequence[str],
            names: Sequence[str]) -> tuple[str, ...]:
    pos = {name: i for i, name in enumerate(names)}
    return tuple(key[pos[f]] for f in fields)


def accumulate(lines: Sequence[CodedLine], cfg: ENAConfig | None = None,
               unit_metadata: Mapping[tuple[str, ...], tuple[str, int]] | None = None,
               ) -> list[AdjacencyVector]:
    """Moving-stanza window accumulation into one vector per unit.

    Lines are processed in the given order within each conversation; lines
    whose code is outside cfg.code_set are ignored. unit_metadata maps a unit
    key to (outcome, order) for downstream models.
    """
    cfg = cfg or ENAConfig()
    code_idx = {c: i for i, c in enumerate(cfg.code_set)}
    pairs = pair_list(cfg.code_set)
    pair_idx = {p: i for i, p in enumerate(pairs)}
    dim = len(pairs)

    conversations: dict[tuple[str, ...], list[CodedLine]] = {}
    unit_order: list[tuple[str, ...]] = []
    units: dict[tuple[str, ...], np.ndarray] = {}
    for line in lines:
        conv = _select(line.conversation_key, cfg.conversation_fields, _CONV_FIELDS)
        conversations.setdefault(conv, []).append(line)
        unit = _select(line.unit_key, cfg.unit_fields, _UNIT_FIELDS)
        if unit not in units:
            units[unit] = np.zeros(dim)
            unit_order.append(unit)

    for conv_lines in conversations.values():
        kept = [ln for ln in conv_lines if ln.code.value in code_idx]
        for i, line in enumerate(kept):
            code = line.code.value
            unit = _select(line.unit_key, cfg.unit_fields, _UNIT_FIELDS)
            lo = max(0, i - cfg.window + 1)
            seen: set[str] = set()
            for prev in kept[lo:i]:
                other = prev.code.value
                if other == code or other in seen:
                    continue
                seen.add(other)
                key = (code, other) if code_idx[code] < code_idx[other] else (other, code)
                units[unit][pair_idx[key]] += 1.0

    meta = unit_metadata or {}
    out = []
    for unit in unit_order:
        outcome, order = meta.get(unit, ("unknown", 0))
        out.append(AdjacencyVector(unit_key=unit, entries=units[unit],
                                   outcome=outcome, order=order))
    return out


def normalize_sphere(v: AdjacencyVector) -> AdjacencyVector:
    norm = float(np.linalg.norm(v.entries))
    if norm == 0.0:
        return v
    return replace(v, entries=v.entries / norm)


@dataclass(frozen=True)
class ENASpace:
    basis: np.ndarray              # (r, D) rows orthonormal, MR1 first
    scores: np.ndarray             # (n, r)
    unit_keys: tuple[tuple[str, ...], ...]
    groups: tuple[str, str]
    group_means: Mapping[str, np.ndarray]
    code_set: tuple[str, ...]
    center: np.ndarray             # grand mean removed before projection


def means_rotation(vectors: Sequence[AdjacencyVector],
                   groups: tuple[str, str],
                   group_of: Callable[[AdjacencyVector], str],
                   code_set: Sequence[str] | None = None) -> ENASpace:
    """Embed unit vectors with a two-group means rotation.

    MR1 points from the second group's mean toward the first group's mean, so
    the group listed second lands on the negative side. Remaining directions
    are the principal axes of the data projected onto MR1's orthogonal
    complement; directions with zero variance are dropped, so the projection
    is rigid on the retained subspace.
    """
    label_a, label_b = groups
    X = np.vstack([v.entries for v in vectors]).astype(float)
    labels = [group_of(v) for v in vectors]
    in_a = np.array([lab == label_a for lab in labels])
    in_b = np.array([lab == label_b for lab in labels])
    if not in_a.any() or not in_b.any():
        raise SingleGroup(f"both groups must be non-empty: {groups}")

    center = X.mean(axis=0)
    Xc = X - center
    mu_a = Xc[in_a].mean(axis=0)
    mu_b = Xc[in_b].mean(axis=0)
    diff = mu_a - mu_b
    norm = np.linalg.norm(diff)
    if norm < 1e-12:
        raise DegenerateRotation("group means coincide")
    v1 = diff / norm

    proj = Xc - np.outer(Xc @ v1, v1)
    _, svals, vt = np.linalg.svd(proj, full_matrices=False)
    tol = max(proj.shape) * np.finfo(float).eps * (svals[0] if svals.size else 0.0)
    rest = vt[svals > max(tol, 1e-12)]

    # One re-orthogonalization sweep keeps the basis orthonormal to ~1e-15.
    basis_rows = [v1]
    for row in rest:
        w = row.copy()
        for b in basis_rows:
            w -= (w @ b) * b
        n = np.linalg.norm(w)
        if n > 1e-12:
            w /= n
            # deterministic sign: largest magnitude entry positive
            k = int(np.argmax(np.abs(w)))
            if w[k] < 0:
                w = -w
            basis_rows.append(w)
    basis = np.vstack(basis_rows)

    scores = Xc @ basis.T
    group_means = {
        label_a: scores[in_a].mean(axis=0),
        label_b: scores[in_b].mean(axis=0),
    }
    return ENASpace(
        basis=basis,
        scores=scores,
        unit_keys=tuple(v.unit_key for v in vectors),
        groups=groups,
        group_means=group_means,
        code_set=tuple(code_set) if code_set is not None else _infer_code_set(vectors),
        center=center,
    )


def _infer_code_set(vectors: Sequence[AdjacencyVector]) -> tuple[str, ...]:
    # Vector dimension K*(K-1)/2 determines K; fall back to the full code set.
    dim = vectors[0].entries.shape[0]
    k = int((1 + np.sqrt(1 + 8 * dim)) / 2)
    full = tuple(c.value for c in ALL_CODES)
    if k * (k - 1) // 2 == dim and k == len(full):
        return full
    return tuple(f"c{i}" for i in range(k)) if k * (k - 1) // 2 == dim else full


def place_nodes(space: ENASpace, vectors: Sequence[AdjacencyVector],
                code_set: Sequence[str] | None = None) -> np.ndarray:
    """Least-squares node positions (K x r).

    For unit u with pair weights w, the weighted midpoint centroid is linear
    in node positions: centroid(u) = A_u @ X with A_u[k] = sum of w~/2 over
    pairs containing code k. Minimizing sum ||score(u) - A_u X||^2 is a
    linear least-squares problem solved per score dimension; the minimum-norm
    solution is returned, so rank-deficient systems are still placed. Units
    with all-zero weights are excluded; if none remain the placement is
    undetermined.
    """
    code_set = tuple(code_set if code_set is not None else space.code_set)
    pairs = pair_list(code_set)
    K = len(code_set)
    idx = {c: i for i, c in enumerate(code_set)}
    key_to_row = {key: i for i, key in enumerate(space.unit_keys)}

    rows = []
    targets = []
    for v in vectors:
        total = float(v.entries.sum())
        if total <= 0:
            continue
        a = np.zeros(K)
        for p, w in zip(pairs, v.entries):
            if w == 0:
                continue
            share = (w / total) / 2.0
            a[idx[p[0]]] += share
            a[idx[p[1]]] += share
        rows.append(a)
        targets.append(space.scores[key_to_row[v.unit_key]])
    if not rows:
        raise UnderdeterminedPlacement("no unit carries nonzero network weight")

    A = np.vstack(rows)
    S = np.vstack(targets)
    positions, *_ = np.linalg.lstsq(A, S, rcond=None)
    return positions


@dataclass(frozen=True)
class NetworkSummary:
    code_set: tuple[str, ...]
    weights: np.ndarray            # one weight per unordered pair


def mean_network(vectors: Sequence[AdjacencyVector],
                 group: str | None = None,
                 group_of: Callable[[AdjacencyVector], str] | None = None,
                 code_set: Sequence[str] | None = None) -> NetworkSummary:
    """Per-pair mean of sphere-normalized unit vectors (optionally filtered
    to one group)."""
    if group is not None and group_of is None:
        raise ValueError("group filtering needs a group_of callable")
    selected = [v for v in vectors if group is None or group_of(v) == group]
    if not selected:
        raise EmptyGroup(f"no units in group {group!r}")
    normalized = np.vstack([normalize_sphere(v).entries for v in selected])
    cs = tuple(code_set) if code_set is not None else _infer_code_set(selected)
    return NetworkSummary(code_set=cs, weights=normalized.mean(axis=0))


def subtract_networks(a: NetworkSummary, b: NetworkSummary) -> NetworkSummary:
    if a.code_set != b.code_set:
        raise ValueError("network code sets differ")
    return NetworkSummary(code_set=a.code_set, weights=a.weights - b.weights)


# --- delimited exports and the static diagram --------------------------------

def scores_table(space: ENASpace) -> str:
    dims = space.scores.shape[1]
    header = "unit\t" + "\t".join(f"dim{i + 1}" for i in range(dims))
    lines = [header]
    for key, row in zip(space.unit_keys, space.scores):
        lines.append("|".join(key) + "\t" + "\t".join(f"{x:.10f}" for x in row))
    return "\n".join(lines) + "\n"


def nodes_table(code_set: Sequence[str], positions: np.ndarray) -> str:
    dims = positions.shape[1]
    header = "code\t" + "\t".join(f"dim{i + 1}" for i in range(dims))
    lines = [header]
    for code, row in zip(code_set, positions):
        lines.append(code + "\t" + "\t".join(f"{x:.10f}" for x in row))
    return "\n".join(lines) + "\n"


def network_table(net: NetworkSummary) -> str:
    lines = ["code_a\tcode_b\tweight"]
    for (a, b), w in zip(pair_list(net.code_set), net.weights):
        lines.append(f"{a}\t{b}\t{w:.10f}")
    return "\n".join(lines) + "\n"


def network_diagram_svg(code_set: Sequence[str], positions: np.ndarray,
                        net: NetworkSummary, title: str = "Network",
                        size: int = 640) -> str:
    """Static diagram: nodes at their co-registered positions, edge thickness
    proportional to |weight|, edge color encoding the weight sign."""
    pos2 = positions[:, :2] if positions.shape[1] >= 2 else np.hstack(
        [positions, np.zeros((positions.shape[0], 1))])
    span = float(np.abs(pos2).max()) or 1.0
    margin = 60.0
    scale = (size - 2 * margin) / (2 * span)

    def xy(p):
        return (margin + (p[0] + span) * scale, size - margin - (p[1] + span) * scale)

    wmax = float(np.abs(net.weights).max()) or 1.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<title>{title}</title>',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    for (a, b), w in zip(pair_list(tuple(code_set)), net.weights):
        if w == 0.0:
            continue
        ia, ib = list(code_set).index(a), list(code_set).index(b)
        x1, y1 = xy(pos2[ia])
        x2, y2 = xy(pos2[ib])
        color = "#e8590c" if w > 0 else "#7048e8"
        width = 0.5 + 5.0 * abs(w) / wmax
        parts.append(f'<line x1="{x1:.1f}" y1="{y1:.1f}" x2="{x2:.1f}" y2="{y2:.1f}" '
                     f'stroke="{color}" stroke-width="{width:.2f}"/>')
    for code, p in zip(code_set, pos2):
        x, y = xy(p)
        parts.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="5" fill="#343a40"/>')
        parts.append(f'<text x="{x + 8:.1f}" y="{y - 6:.1f}" font-size="11" '
                     f'font-family="sans-serif">{code}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
