"""Modes of a left-stochastic interaction matrix.

The matrix is block triangular once vertices are ordered by strongly
connected component (SCC), so its spectrum is the union of the spectra of the
diagonal SCC blocks. That gives exact eigenvalues for the structural cases
(acyclic vertices contribute 0, absorbing vertices contribute 1) and keeps
defective zero blocks from smearing into spurious small eigenvalues. A right
eigenvector for an eigenvalue of block ``c`` is supported on the vertices
reachable from ``c``; it is taken from the null space of ``W - lambda I``
restricted to that set.

Modes are classified as

* ``PERSISTENT``  -- ``(1, e_k)`` at an absorbing vertex ``k``;
* ``TRIVIAL``     -- a basis vector of the null space of ``W``;
* ``TRANSIENT_*`` -- ``0 < |lambda| < 1``, split by the sign/phase of lambda;
* ``BOUNDARY``    -- ``|lambda| ~ 1`` without an absorbing vertex behind it.
"""

from __future__ import annotations

import csv
import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence, TextIO

import numpy as np
import scipy.linalg as la
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .cascade_data import CascadeDataset, filter_multi_generation
from .interaction_graph import (
    InteractionGraph,
    build_state_graph,
    induced_subgraph,
    stochastic_matrix,
)

__all__ = [
    "ModeKind",
    "Mode",
    "Spectrum",
    "SpectralAnalysis",
    "Participant",
    "NumericalFailure",
    "ModalExpansionUnavailable",
    "BoundaryModeWarning",
    "eigendecompose",
    "null_space_basis",
    "classify_modes",
    "normalize_mode",
    "propagate",
    "modal_coordinates",
    "modal_expansion",
    "pair_influence",
    "participation",
    "estimated_cycle_length",
    "mode_subgraph",
    "decay_partition",
    "convergence_study",
    "write_modes_csv",
    "write_eigenvectors_csv",
]

RESIDUAL_TOL = 1e-8


class NumericalFailure(ArithmeticError):
    """An eigenpair misses the residual bound even after refinement."""


class ModalExpansionUnavailable(ArithmeticError):
    pass


class BoundaryModeWarning(UserWarning):
    """An eigenvalue of modulus ~1 that no absorbing vertex explains."""


class ModeKind(str, enum.Enum):
    PERSISTENT = "Persistent"
    TRIVIAL = "Trivial"
    TRANSIENT_POSITIVE = "TransientPositive"
    TRANSIENT_NEGATIVE = "TransientNegative"
    TRANSIENT_COMPLEX = "TransientComplex"
    BOUNDARY = "Boundary"

    @property
    def transient(self) -> bool:
        return self.name.startswith("TRANSIENT")


@dataclass(frozen=True, eq=False)
class Mode:
    eigenvalue: complex
    vector: np.ndarray = field(repr=False)
    kind: ModeKind
    vertex: int | None = None  # absorbing vertex of a persistent mode
    partner: int | None = None  # index of the conjugate mode in the analysis

    @property
    def modulus(self) -> float:
        return abs(self.eigenvalue)

    @property
    def angle_deg(self) -> float:
        return math.degrees(np.angle(self.eigenvalue))


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Raw eigen-decomposition.

    ``eigenvalues`` carries algebraic multiplicity; ``vectors[i]`` is a
    normalized right eigenvector or ``None`` where the geometric multiplicity
    runs out. ``component[i]`` is the SCC the eigenvalue came from.
    """

    eigenvalues: np.ndarray
    vectors: list
    component: np.ndarray


def _clean(lam: complex) -> complex:
    lam = complex(lam)
    return complex(lam.real + 0.0, lam.imag + 0.0)


def _sort_key(lam: complex, idx: int):
    return (-round(abs(lam), 12), -round(float(np.angle(lam)), 12), idx)


def normalize_mode(v) -> np.ndarray:
    """Scale ``v`` so its largest-modulus entry is exactly ``+1``.

    Ties on modulus go to the lowest index. Real input stays real.
    """
    v = np.asarray(v)
    mod = np.abs(v)
    if v.size == 0 or mod.max() == 0:
        raise ValueError("cannot normalize a zero vector")
    k = int(np.flatnonzero(mod >= mod.max() * (1 - 1e-12))[0])
    out = v / v[k]
    out[k] = 1.0
    if np.iscomplexobj(out) and not np.iscomplexobj(v):
        out = out.real
    return out


def null_space_basis(W: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Basis of ``ker W`` from a column-pivoted QR.

    The rank is the number of singular values above ``tol``. Free columns of
    the pivoted factorization give sparse basis vectors such as
    ``e_a - 0.5 e_b - 0.5 e_c``; if any of them fails ``|W v| <= tol`` the
    orthonormal SVD basis is returned instead. Columns are unnormalized.
    """
    W = np.asarray(W, dtype=float)
    n = W.shape[1]
    U, s, Vh = la.svd(W)
    rank = int((s > tol).sum())
    if rank == n:
        return np.zeros((n, 0))
    _, R, piv = la.qr(W, pivoting=True)
    X = la.solve_triangular(R[:rank, :rank], R[:rank, rank:]) if rank else np.zeros((0, n))
    basis = np.zeros((n, n - rank))
    basis[piv[:rank], :] = -X
    basis[piv[rank:], np.arange(n - rank)] = 1.0
    for k in range(n - rank):
        v = basis[:, k] / np.abs(basis[:, k]).max()
        if np.abs(W @ v).max() > tol:
            return Vh[rank:].conj().T
    return basis


def _reach(adj, start: int) -> np.ndarray:
    return np.sort(breadth_first_order(adj, start, directed=True, return_predecessors=False))


def _block_vectors(W, R, members, lam, m):
    """Up to ``m`` eigenvectors for ``lam`` supported on ``R`` with nonzero
    restriction to ``members`` (the source SCC of ``R``)."""
    A = W[np.ix_(R, R)] - lam * np.eye(len(R))
    _, s, Vh = la.svd(A)
    scale = max(1.0, s[0])
    k_null = max(1, int((s <= 1e-7 * scale).sum()))
    Nb = Vh[-k_null:].conj().T
    pos = np.searchsorted(R, members)
    X = Nb[pos, :]
    _, sx, Vx = la.svd(X, full_matrices=True)
    r = int((sx > 1e-6 * max(sx[0], 1e-300)).sum()) if sx.size else 0
    k = min(m, r)
    vecs = []
    for col in range(k):
        v = Nb @ Vx[col].conj()
        full = np.zeros(W.shape[0], dtype=v.dtype)
        full[R] = v
        vecs.append(full)
    return vecs


def _refine(W, lam, v):
    """One step of inverse iteration, then renormalize."""
    n = W.shape[0]
    shift = lam + 1e-10 * (1 + abs(lam))
    try:
        y = la.solve(W - shift * np.eye(n), v)
    except la.LinAlgError:
        return v
    if not np.isfinite(y).all() or np.abs(y).max() == 0:
        return v
    y = normalize_mode(y)
    if np.isrealobj(v) and np.iscomplexobj(y):
        y = y.real
    return y


def _residual(W, lam, v) -> float:
    return float(np.abs(W @ v - lam * v).max())


def eigendecompose(W, tol_zero: float = 1e-8, residual_tol: float = RESIDUAL_TOL) -> Spectrum:
    """Eigenvalues (with multiplicity) and right eigenvectors of ``W``.

    Sorted by descending modulus, ties by descending angle in (-pi, pi], then
    by order of discovery.

    Raises
    ------
    NumericalFailure
        If a returned eigenpair has ``|W v - lambda v|_inf > residual_tol``.
    """
    W = np.asarray(W, dtype=float)
    n = W.shape[0]
    if n < 1 or W.shape != (n, n):
        raise ValueError("W must be a non-empty square matrix")
    adj = csr_matrix((W.T != 0).astype(np.int8))
    ncomp, labels = connected_components(adj, directed=True, connection="strong")

    lams, vecs, comps = [], [], []
    for c in range(ncomp):
        members = np.flatnonzero(labels == c)
        if members.size == 1:
            block_eigs = np.array([W[members[0], members[0]]], dtype=complex)
        else:
            block_eigs = la.eigvals(W[np.ix_(members, members)])
        block_eigs = [_clean(x) for x in block_eigs]
        R = _reach(adj, int(members[0]))
        done = [False] * len(block_eigs)
        for a, lam in enumerate(block_eigs):
            if done[a]:
                continue
            if abs(lam) <= tol_zero:
                done[a] = True
                lams.append(lam)
                vecs.append(None)
                comps.append(c)
                continue
            if lam.imag < 0:
                continue  # handled with its conjugate
            cluster = [b for b in range(len(block_eigs))
                       if not done[b] and abs(block_eigs[b] - lam) <= 1e-8 * max(1, abs(lam))]
            lam_c = _clean(np.mean([block_eigs[b] for b in cluster]))
            if lam_c.imag == 0.0 or abs(lam_c.imag) <= 1e-14:
                lam_c = complex(lam_c.real, 0.0)
                Wr = W
            else:
                Wr = W.astype(complex)
            found = _block_vectors(Wr, R, members, lam_c if lam_c.imag else lam_c.real, len(cluster))
            found = [normalize_mode(v) for v in found]
            for b_i, b in enumerate(cluster):
                done[b] = True
                v = found[b_i] if b_i < len(found) else None
                lams.append(lam_c)
                vecs.append(v)
                comps.append(c)
                if lam_c.imag != 0.0:
                    conj = [d for d in range(len(block_eigs))
                            if not done[d] and abs(block_eigs[d] - lam_c.conjugate()) <= 1e-8 * max(1, abs(lam))]
                    if conj:
                        done[conj[0]] = True
                        lams.append(lam_c.conjugate())
                        vecs.append(None if v is None else v.conjugate())
                        comps.append(c)
        for b in range(len(block_eigs)):
            if not done[b]:  # unmatched conjugate, should not happen for real W
                lams.append(block_eigs[b])
                vecs.append(None)
                comps.append(c)

    # null vectors of the whole matrix serve the zero eigenvalue
    zero_idx = [i for i, lam in enumerate(lams) if abs(lam) <= tol_zero]
    if zero_idx:
        basis = null_space_basis(W, tol_zero)
        for i, col in zip(zero_idx, range(basis.shape[1])):
            lams[i] = 0j
            vecs[i] = normalize_mode(basis[:, col])

    for i, (lam, v) in enumerate(zip(lams, vecs)):
        if v is None:
            continue
        res = _residual(W, lam, v)
        if res > residual_tol:
            v = _refine(W, lam, v)
            res = _residual(W, lam, v)
            if res > residual_tol:
                raise NumericalFailure(f"eigenvalue {lam:.6g}: residual {res:.3g} after refinement")
            vecs[i] = v

    order = sorted(range(len(lams)), key=lambda i: _sort_key(lams[i], i))
    return Spectrum(
        np.array([lams[i] for i in order], dtype=complex),
        [vecs[i] for i in order],
        np.array([comps[i] for i in order], dtype=int),
    )


@dataclass(eq=False)
class SpectralAnalysis:
    """Classified modes plus the bookkeeping needed for modal expansion."""

    W: np.ndarray = field(repr=False)
    modes: list
    counts: dict
    zero_algebraic: int
    diagonalizable: bool
    reconstruction_residual: float
    V: np.ndarray | None = field(default=None, repr=False)
    boundary_eigenvalues: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.W.shape[0]

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.array([m.eigenvalue for m in self.modes], dtype=complex)

    def of_kind(self, *kinds) -> list:
        return [m for m in self.modes if m.kind in kinds]

    def top_positive(self) -> Mode | None:
        modes = self.of_kind(ModeKind.TRANSIENT_POSITIVE)
        return max(modes, key=lambda m: m.eigenvalue.real) if modes else None

    def top_negative(self) -> Mode | None:
        modes = self.of_kind(ModeKind.TRANSIENT_NEGATIVE)
        return max(modes, key=lambda m: m.modulus) if modes else None

    def top_complex(self, k: int = 1) -> list:
        """Representatives (angle in (0, pi)) of the ``k`` largest complex pairs."""
        modes = [m for m in self.of_kind(ModeKind.TRANSIENT_COMPLEX) if m.eigenvalue.imag > 0]
        return sorted(modes, key=lambda m: (-m.modulus, m.eigenvalue.imag))[:k]

    def summary(self) -> str:
        c = self.counts
        return (
            f"persistent={c['persistent']} trivial={c['trivial']} "
            f"transient={c['transient']} boundary={c['boundary']}"
        )


def classify_modes(W, graph: InteractionGraph | None = None, tol_unity: float = 1e-8,
                   tol_zero: float = 1e-8) -> SpectralAnalysis:
    """Split the spectrum of ``W`` into persistent, trivial, transient and boundary modes.

    Parameters
    ----------
    W : (N, N) ndarray
        Left-stochastic matrix.
    graph : InteractionGraph, optional
        Supplies the absorbing set; otherwise every column equal to a unit
        vector ``e_k`` counts as absorbing.
    tol_unity, tol_zero : float
        ``|lambda - 1| <= tol_unity`` is unity, ``|lambda| <= tol_zero`` is zero.

    Notes
    -----
    ``counts['zero']`` is the algebraic multiplicity of 0 while
    ``counts['trivial']`` is the number of null-space modes. The identity
    ``persistent + zero + transient + boundary == N`` always holds.
    """
    W = np.asarray(W, dtype=float)
    n = W.shape[0]
    if graph is not None:
        absorbing = sorted(graph.absorbing)
    else:
        absorbing = [k for k in range(n) if W[k, k] == 1.0 and np.count_nonzero(W[:, k]) == 1]
    for k in absorbing:
        e = np.zeros(n)
        e[k] = 1.0
        if not np.array_equal(W[:, k], e):
            raise ValueError(f"vertex {k} is marked absorbing but column {k} is not e_{k}")
    spectrum = eigendecompose(W, tol_zero)

    persistent, boundary, transient, trivial = [], [], [], []
    absorbing_set = set(absorbing)
    comp_vertex = {}
    for k in absorbing:
        comp_vertex[k] = k
    boundary_vals = []
    zero_alg = 0
    for lam, v, c in zip(spectrum.eigenvalues, spectrum.vectors, spectrum.component):
        if abs(lam) <= tol_zero:
            zero_alg += 1
            if v is not None:
                trivial.append(Mode(0j, v, ModeKind.TRIVIAL))
            continue
        if abs(lam - 1) <= tol_unity and v is not None:
            hits = [k for k in absorbing_set if v[k] == 1.0 and np.count_nonzero(v) == 1]
            if hits:
                absorbing_set.discard(hits[0])
                continue  # persistent modes are built directly below
        if abs(lam) >= 1 - tol_unity:
            boundary_vals.append(lam)
            if v is not None:
                boundary.append(Mode(lam, v, ModeKind.BOUNDARY))
            continue
        if v is None:
            transient.append(lam)
            continue
        if lam.imag != 0.0:
            kind = ModeKind.TRANSIENT_COMPLEX
        elif lam.real > 0:
            kind = ModeKind.TRANSIENT_POSITIVE
        else:
            kind = ModeKind.TRANSIENT_NEGATIVE
        transient.append(Mode(lam, v, kind))
    if absorbing_set:
        raise NumericalFailure(f"no unit eigenvalue found for absorbing vertices {sorted(absorbing_set)}")
    if boundary_vals:
        warnings.warn(
            f"{len(boundary_vals)} eigenvalue(s) of modulus ~1 not tied to an absorbing state: "
            + ", ".join(f"{z:.4g}" for z in boundary_vals),
            BoundaryModeWarning,
            stacklevel=2,
        )
    for k in absorbing:
        e = np.zeros(n)
        e[k] = 1.0
        persistent.append(Mode(1 + 0j, e, ModeKind.PERSISTENT, vertex=k))

    transient_modes = [m for m in transient if isinstance(m, Mode)]
    n_transient = len(transient)
    modes = persistent + boundary + transient_modes + trivial
    # link conjugate partners
    for i, m in enumerate(modes):
        if m.kind is ModeKind.TRANSIENT_COMPLEX and m.partner is None:
            for j in range(i + 1, len(modes)):
                o = modes[j]
                if (o.kind is ModeKind.TRANSIENT_COMPLEX and o.partner is None
                        and o.eigenvalue == m.eigenvalue.conjugate()):
                    modes[i] = Mode(m.eigenvalue, m.vector, m.kind, partner=j)
                    modes[j] = Mode(o.eigenvalue, o.vector, o.kind, partner=i)
                    break

    counts = {
        "persistent": len(persistent),
        "trivial": len(trivial),
        "zero": zero_alg,
        "transient": n_transient,
        "transient_positive": sum(m.kind is ModeKind.TRANSIENT_POSITIVE for m in transient_modes),
        "transient_negative": sum(m.kind is ModeKind.TRANSIENT_NEGATIVE for m in transient_modes),
        "transient_complex": sum(m.kind is ModeKind.TRANSIENT_COMPLEX for m in transient_modes),
        "boundary": len(boundary_vals),
    }

    diag, resid, V = False, math.inf, None
    if len(modes) == n:
        V = np.column_stack([m.vector.astype(complex) for m in modes])
        lam = np.array([m.eigenvalue for m in modes])
        try:
            if np.linalg.cond(V) < 1e12:
                recon = V @ np.diag(lam) @ la.inv(V)
                resid = float(np.abs(recon - W).max())
                diag = resid <= RESIDUAL_TOL
        except la.LinAlgError:
            pass
    return SpectralAnalysis(W, modes, counts, zero_alg, diag, resid, V if diag else None, boundary_vals)


def propagate(W, p0, K: int) -> np.ndarray:
    """``W^K p0`` by ``K`` matrix-vector products."""
    if K < 0:
        raise ValueError("K must be >= 0")
    p = np.array(p0, dtype=float)
    for _ in range(K):
        p = W @ p
    return p


def modal_coordinates(analysis: SpectralAnalysis, p0) -> np.ndarray:
    """Coordinates ``c`` with ``V c = p0`` in the analysis' mode basis."""
    if not analysis.diagonalizable:
        raise ModalExpansionUnavailable("modal expansion unavailable; use propagate")
    p0 = np.asarray(p0, dtype=float)
    c = la.solve(analysis.V, p0.astype(complex))
    if np.abs(analysis.V @ c - p0).max() > 1e-9:
        raise ModalExpansionUnavailable("modal expansion unavailable; use propagate")
    return c


def modal_expansion(analysis: SpectralAnalysis, c, K: int) -> np.ndarray:
    """``sum_i c_i lambda_i^K v_i`` (complex; the imaginary part cancels)."""
    lam = analysis.eigenvalues
    return analysis.V @ (np.asarray(c) * lam**K)


def pair_influence(mode: Mode, c, K: int) -> np.ndarray:
    """Joint contribution of a conjugate pair at generation ``K``.

    ``2 |c| |lambda|^K |v_n| cos(K angle(lambda) + angle(v_n) + angle(c))``,
    which equals ``c lambda^K v + conj(c lambda^K v)``.
    """
    lam = complex(mode.eigenvalue)
    ang = np.angle(lam)
    if lam.imag == 0 or not 0 < ang < np.pi:
        raise ValueError("not a conjugate-pair mode")
    v = np.asarray(mode.vector)
    theta = K * ang + np.angle(v) + np.angle(c)
    return 2 * abs(c) * abs(lam) ** K * np.abs(v) * np.cos(theta)


class Participant(NamedTuple):
    vertex: int
    modulus: float
    angle_deg: float


def participation(mode: Mode, eps: float = 0.5) -> list:
    """Vertices with ``|v_j| >= eps``, largest first (ties by vertex id)."""
    if not 0 < eps <= 1:
        raise ValueError("eps must be in (0, 1]")
    v = np.asarray(mode.vector)
    mod = np.abs(v)
    idx = np.flatnonzero(mod >= eps - 1e-12)
    idx = sorted(idx, key=lambda j: (-round(float(mod[j]), 12), j))
    return [Participant(int(j), float(mod[j]), math.degrees(np.angle(v[j]))) for j in idx]


def estimated_cycle_length(angle_deg: float) -> int:
    """Generations for the phase to come round: ``round(360 / angle)``."""
    return round(360.0 / abs(angle_deg))


def mode_subgraph(graph: InteractionGraph, mode: Mode, eps: float = 0.5):
    """Induced subgraph over the participating vertices and its cycle length.

    The length is ``round(360 / angle)`` for complex modes, 2 for negative
    modes and ``None`` otherwise.
    """
    verts = [p.vertex for p in participation(mode, eps)]
    edges = induced_subgraph(graph, verts)
    if mode.kind is ModeKind.TRANSIENT_COMPLEX:
        length = estimated_cycle_length(mode.angle_deg)
    elif mode.kind is ModeKind.TRANSIENT_NEGATIVE:
        length = 2
    else:
        length = None
    return edges, length


def decay_partition(mode: Mode, graph: InteractionGraph, threshold: float = 1e-12):
    """Split non-absorbing vertices into rapidly and slowly decaying sets.

    A vertex decays rapidly when its entry in the (normalized) eigenvector has
    modulus below ``threshold``.
    """
    mod = np.abs(np.asarray(mode.vector))
    transient = [i for i in range(graph.n) if i not in graph.absorbing]
    rapid = [i for i in transient if mod[i] < threshold]
    slow = [i for i in transient if mod[i] >= threshold]
    return rapid, slow


class ConvergenceRow(NamedTuple):
    size: int
    kind: str
    eigenvalue: complex


def convergence_study(datasets: Sequence[CascadeDataset], k_complex: int = 2,
                      tol_unity: float = 1e-8, tol_zero: float = 1e-8) -> list:
    """Top transient eigenvalues for each dataset.

    For each dataset (filtered to multi-generation cascades) report the top
    positive, the top negative and the ``k_complex`` largest complex
    eigenvalues. Eigenvalues do not depend on vertex numbering, so graphs of
    different sizes are comparable without re-indexing.
    """
    rows = []
    for ds in datasets:
        ds = filter_multi_generation(ds)
        if len(ds) == 0:
            continue
        g = build_state_graph(ds)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", BoundaryModeWarning)
            an = classify_modes(stochastic_matrix(g), g, tol_unity, tol_zero)
        size = len(ds)
        top = an.top_positive()
        if top is not None:
            rows.append(ConvergenceRow(size, "positive", top.eigenvalue))
        top = an.top_negative()
        if top is not None:
            rows.append(ConvergenceRow(size, "negative", top.eigenvalue))
        for r, m in enumerate(an.top_complex(k_complex), start=1):
            rows.append(ConvergenceRow(size, f"complex{r}", m.eigenvalue))
    return rows


# -- reports -----------------------------------------------------------------


def write_modes_csv(analysis: SpectralAnalysis, out: TextIO, eps: float = 0.5) -> None:
    """One row per mode; vertex ids in ``top_vertices`` are 1-based."""
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["mode_index", "kind", "re_lambda", "im_lambda", "modulus", "angle_deg", "top_vertices"])
    for i, m in enumerate(analysis.modes, start=1):
        top = ";".join(
            f"{p.vertex + 1}:{p.modulus:.6g}:{p.angle_deg:.6g}" for p in participation(m, eps)
        )
        lam = m.eigenvalue
        w.writerow([i, m.kind.value, repr(float(lam.real)), repr(float(lam.imag)), repr(float(abs(lam))),
                    repr(float(m.angle_deg)), top])


def write_eigenvectors_csv(analysis: SpectralAnalysis, out: TextIO) -> None:
    """Matrix dump, one mode per column pair ``re_i, im_i``, one vertex per row."""
    w = csv.writer(out, lineterminator="\n")
    header = []
    for i in range(1, len(analysis.modes) + 1):
        header += [f"re_{i}", f"im_{i}"]
    w.writerow(header)
    V = np.column_stack([m.vector.astype(complex) for m in analysis.modes]) if analysis.modes else np.zeros((analysis.n, 0))
    for row in V:
        cells = []
        for z in row:
            cells += [format(z.real, ".17g"), format(z.imag, ".17g")]
        w.writerow(cells)
