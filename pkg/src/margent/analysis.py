"""Noise tolerances, marginal PPT audits, uniqueness ranges and post-measurement sweeps."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import conic
from .operators import (
    DensityOperator,
    HermitianOperator,
    OperatorError,
    QuditRegister,
    full_operator_basis,
    mix_with_white_noise,
    ptrace,
    ptranspose,
    two_body_subspace,
)
from .statesearch import TRIPLE_CUTS
from .witness import (
    MarginalPattern,
    MarginalSet,
    SolverFailure,
    min_witness_value,
    min_witness_value_unrestricted,
)

log = logging.getLogger(__name__)

MARGINAL = "marginal-restricted"
UNRESTRICTED = "unrestricted"
UNIQUE_THRESHOLD = 1e-6
INCONCLUSIVE_THRESHOLD = 1e-4


@dataclass
class ToleranceResult:
    p_star: float
    bracket: float
    mode: str
    pattern: list[list[int]] | None
    evaluations: list[tuple[float, float]] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    detected: bool = True

    @property
    def lower(self) -> float:
        return self.p_star - self.bracket

    @property
    def upper(self) -> float:
        return self.p_star + self.bracket

    def to_json(self) -> dict:
        return {
            "p_star": self.p_star,
            "bracket": self.bracket,
            "lower": self.lower,
            "upper": self.upper,
            "mode": self.mode,
            "pattern": self.pattern,
            "detected": self.detected,
            "evaluations": [{"p": p, "value": v} for p, v in self.evaluations],
            "notes": self.notes,
        }


def detection_value(rho: DensityOperator, p: float, pattern: MarginalPattern | None, mode: str = MARGINAL,
                    **solver) -> float:
    """Optimal witness value of ``rho`` mixed with a fraction ``p`` of white noise."""
    mixed = mix_with_white_noise(rho, p)
    if mode == UNRESTRICTED:
        return min_witness_value_unrestricted(mixed, **solver)[0]
    return min_witness_value(mixed, pattern, **solver)[0]


def noise_tolerance(rho: DensityOperator, pattern: MarginalPattern | None = None, mode: str = MARGINAL, *,
                    width: float = 1e-4, seed_half_width: float = 1e-4, **solver) -> ToleranceResult:
    """Largest white-noise fraction keeping the optimal witness value negative.

    Bisection on ``V(p)``. Every step is an actual witness-program solve. With
    ``tr(W) = 1`` the optimum obeys ``V(p) = (1 - p) V(0) + p / D``, so the
    first bracket is placed around that root and widened to ``[0, 1]`` if the
    solves do not confirm it.
    """
    if mode not in (MARGINAL, UNRESTRICTED):
        raise OperatorError(f"unknown mode {mode!r}")
    if mode == MARGINAL and pattern is None:
        pattern = MarginalPattern.all_pairs(rho.register)
    D = rho.register.total_dim
    pat_json = [list(p) for p in pattern.pairs] if (pattern is not None and mode == MARGINAL) else None
    evals: list[tuple[float, float]] = []

    def V(p):
        v = detection_value(rho, p, pattern, mode, **solver)
        evals.append((p, v))
        log.debug("V(%.6f) = %.3e", p, v)
        return v

    lo, hi, guess = 0.0, 1.0, None
    try:
        v0 = V(0.0)
        if v0 >= 0:
            return ToleranceResult(0.0, 0.0, mode, pat_json, evals, ["not detected at p = 0"], detected=False)
        guess = -v0 * D / (1 - v0 * D)
        a, b = max(0.0, guess - seed_half_width), min(1.0, guess + seed_half_width)
        if a > 0 and V(a) < 0:
            lo = a
        if lo < b < 1 and V(b) >= 0:
            hi = b
        if hi == 1.0:
            # the maximally mixed state has V(1) = 1/D > 0
            evals.append((1.0, 1.0 / D))
        while hi - lo > width:
            mid = (lo + hi) / 2
            if V(mid) < 0:
                lo = mid
            else:
                hi = mid
    except SolverFailure as exc:
        return ToleranceResult((lo + hi) / 2, (hi - lo) / 2, mode, pat_json, evals,
                               [f"aborted by solver failure: {exc}"], detected=bool(evals) and evals[0][1] < 0)
    return ToleranceResult((lo + hi) / 2, (hi - lo) / 2, mode, pat_json, evals,
                           [f"affine prediction {guess:.6f}"])


# ---------------------------------------------------------------------------
# PPT audits
# ---------------------------------------------------------------------------

def marginal_audit(rho: HermitianOperator, pattern: MarginalPattern | None = None, include_triples: bool = False,
                   tol: float = -1e-9) -> dict:
    """Minimum partial-transpose eigenvalues of pair (and triple) marginals."""
    reg = rho.register
    dims = reg.dims
    pairs = pattern.pairs if pattern is not None else reg.pairs()
    out_pairs = {}
    for pair in pairs:
        sub = [dims[p] for p in pair]
        m = ptrace(rho.matrix, dims, pair)
        lo = float(np.linalg.eigvalsh(ptranspose(m, sub, [0]))[0])
        verdict = "PPT" if lo >= tol else "NPT"
        if verdict == "PPT":
            verdict = "separable" if sub == [2, 2] or sorted(sub) == [2, 3] else "PPT (separability unverified)"
        out_pairs["".join(map(str, pair))] = {"min_pt_eigenvalue": lo, "ppt": lo >= tol, "verdict": verdict}
    out = {"pairs": out_pairs, "all_pairs_ppt": all(v["ppt"] for v in out_pairs.values())}
    if include_triples:
        out_triples = {}
        for t in reg.triples():
            sub = [dims[p] for p in t]
            m = ptrace(rho.matrix, dims, t)
            lo = min(float(np.linalg.eigvalsh(ptranspose(m, sub, side))[0]) for side in TRIPLE_CUTS)
            out_triples["".join(map(str, t))] = {
                "min_pt_eigenvalue": lo, "ppt": lo >= tol, "verdict": "PPT (full separability unverified)" if lo >= tol else "NPT",
            }
        out["triples"] = out_triples
        out["all_triples_ppt"] = all(v["ppt"] for v in out_triples.values())
    return out


# ---------------------------------------------------------------------------
# uniqueness of the global state given marginals
# ---------------------------------------------------------------------------

@dataclass
class UniquenessReport:
    max_range: float
    verdict: str
    direction: str | None
    ranges: dict[str, float] = field(default_factory=dict)
    n_directions: int = 0
    skipped: int = 0
    face_dim: int = 0
    hull_dim: int = 0
    notes: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "max_range": self.max_range,
            "verdict": self.verdict,
            "direction": self.direction,
            "n_directions": self.n_directions,
            "skipped": self.skipped,
            "face_dim": self.face_dim,
            "hull_dim": self.hull_dim,
            "ranges": self.ranges,
            "notes": self.notes,
        }


@dataclass
class CompatibleFace:
    """Compatible states written as ``U (S0 + sum_j c_j N_j) U^dagger``.

    ``U`` spans a subspace containing the support of every compatible state,
    ``S0`` is the reference state in that subspace and the Hermitian ``N_j``
    span the kernel of the marginal map restricted to it.
    """

    U: np.ndarray
    S0: np.ndarray
    hull: np.ndarray
    parent_gap: float | None
    notes: list[str] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.U.shape[1]

    def coordinates(self, X: np.ndarray) -> tuple[float, np.ndarray]:
        """``tr(X sigma) = offset + coeffs . c`` on the face."""
        Xr = self.U.conj().T @ X @ self.U
        offset = float(np.einsum("ij,ji->", Xr, self.S0).real)
        coeffs = np.einsum("ij,kji->k", Xr, self.hull).real if len(self.hull) else np.zeros(0)
        return offset, coeffs


def _null_space(A: np.ndarray, rtol: float = 1e-9) -> np.ndarray:
    if A.size == 0:
        return np.eye(A.shape[1])
    _, sv, vh = np.linalg.svd(A)
    tol = rtol * max(1.0, sv[0] if len(sv) else 0.0)
    rank = int(np.sum(sv > tol))
    return vh[rank:].conj().T


def _parent_operator(terms, V: np.ndarray, W: np.ndarray, **solver) -> tuple[float, np.ndarray | None]:
    """Most positive operator in the pattern span that annihilates ``V``.

    Maximizes ``t`` with ``W^dagger Y W >= t 1`` and ``tr Y = 1``. Returns
    ``(t, W^dagger Y W)``; ``(-inf, None)`` when no span element annihilates ``V``.
    """
    BV = np.array([t.operator.matrix @ V for t in terms])  # (n, D, r)
    A = np.concatenate([BV.real.reshape(len(terms), -1), BV.imag.reshape(len(terms), -1)], axis=1).T
    basis = _null_space(A)  # y = basis @ z
    if basis.shape[1] == 0:
        return float("-inf"), None
    Bw = np.array([W.conj().T @ t.operator.matrix @ W for t in terms])  # (n, m, m)
    Yw = np.einsum("nk,nij->ijk", basis, Bw)
    traces = np.array([np.trace(t.operator.matrix).real for t in terms]) @ basis
    prog = conic.ConicProgram()
    z = prog.real("z", basis.shape[1])
    t = prog.real("t", 1).apply(lambda a: a[0])
    Y = conic.Affine(np.zeros(Yw.shape[:2]), {"z": Yw})
    prog.add_psd(Y - t.times(np.eye(W.shape[1])), "gap")
    prog.add_equality(z.contract(traces), 1.0)
    prog.minimize(-t)
    # the dual of this program has no interior whenever the face is proper, which
    # stalls interior-point solvers; the first-order solver only needs to get the
    # sign right since the gap is re-evaluated exactly below
    sol = conic.solve(prog, solver.get("tolerances"), conic.get_backend("scs"))
    if not sol.optimal:
        return float("-inf"), None
    Y = Yw @ sol.values["z"]
    Y = (Y + Y.conj().T) / 2
    return float(np.linalg.eigvalsh(Y)[0]), Y


def compatible_face(marginals: MarginalSet, reference: DensityOperator, *, rank_tol: float = 1e-9,
                    **solver) -> CompatibleFace:
    """Face of the PSD cone holding every state compatible with ``marginals``.

    One facial-reduction step: a positive-semidefinite operator from the
    pattern span that annihilates the reference state confines every
    compatible state to its kernel. The affine hull inside that face is the
    kernel of the linear marginal map, found by rank computation.
    """
    reg = marginals.register
    terms = two_body_subspace(reg, marginals.pattern)
    expected = np.array([marginals.expectation(t) for t in terms])
    got = np.array([t.operator.expect(reference) for t in terms])
    if np.max(np.abs(expected - got)) > 1e-7:
        raise OperatorError("reference state is not compatible with the marginals")
    vals, vecs = np.linalg.eigh(reference.matrix)
    support = vals > rank_tol
    V, W = vecs[:, support], vecs[:, ~support]
    notes = []
    gap = None
    U = vecs
    if W.shape[1]:
        gap, Yw = _parent_operator(terms, V, W, **solver)
        if gap > 1e-6:
            U = V
            notes.append(f"parent operator separates the reference support (gap {gap:.3e})")
        elif Yw is not None:
            # keep only the directions the best parent operator cannot exclude
            yv, yvec = np.linalg.eigh((Yw + Yw.conj().T) / 2)
            keep = yv <= 1e-6 * max(1.0, yv[-1])
            U = np.concatenate([V, W @ yvec[:, keep]], axis=1)
            notes.append(f"partial face reduction to dimension {U.shape[1]} (gap {gap:.3e})")
        else:
            notes.append("no operator in the pattern span annihilates the reference")
    k = U.shape[1]
    E = conic.hermitian_parameter_basis(k)  # (k, k, k*k)
    UE = np.einsum("ai,ijp,bj->abp", U, E, U.conj())
    A = np.array([np.einsum("ab,bap->p", t.operator.matrix, UE).real for t in terms])
    N = _null_space(A)
    hull = np.einsum("ijp,pq->qij", E, N)
    S0 = U.conj().T @ reference.matrix @ U
    return CompatibleFace(U, (S0 + S0.conj().T) / 2, hull, gap, notes)


def _feasible_step(S0: np.ndarray, step: np.ndarray, iters: int = 60) -> float:
    """Largest ``theta`` in [0, 1] with ``S0 + theta * step`` positive semidefinite."""
    if np.linalg.eigvalsh(S0 + step)[0] >= 0:
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(iters):
        mid = (lo + hi) / 2
        if np.linalg.eigvalsh(S0 + mid * step)[0] >= 0:
            lo = mid
        else:
            hi = mid
    return lo


def _face_range(face: CompatibleFace, X: np.ndarray, **solver) -> tuple[float, float]:
    """Range of ``tr(X sigma)`` on the face.

    Solver points within the first-order residual of the cone are taken as
    they are; points further out are pulled back towards the reference until
    they are exactly positive semidefinite, which can only shrink the range.
    """
    tol = solver.get("tolerances") or conic.Tolerances()
    offset, coeffs = face.coordinates(X)
    if not len(coeffs) or np.linalg.norm(coeffs) < 1e-12:
        return offset, offset
    prog = conic.ConicProgram()
    c = prog.real("c", len(coeffs))
    S = conic.Affine(face.S0, {"c": np.moveaxis(face.hull, 0, -1)})
    prog.add_psd(S, "sigma")
    vals = []
    for sign in (1.0, -1.0):
        prog.minimize(c.contract(sign * coeffs))
        sol = conic.solve(prog, solver.get("tolerances"), solver.get("backend"))
        if "c" not in sol.values and sol.backend != "scs":
            log.debug("compatibility program: %s, retrying with scs", sol.message)
            sol = conic.solve(prog, solver.get("tolerances"), conic.get_backend("scs"))
        if "c" not in sol.values:
            raise SolverFailure(sol, "compatibility program")
        x = sol.values["c"]
        step = np.einsum("k,kij->ij", x, face.hull)
        step = (step + step.conj().T) / 2
        if np.linalg.eigvalsh(face.S0 + step)[0] >= -tol.first_order_residual:
            theta = 1.0
        else:
            theta = _feasible_step(face.S0, step)
        vals.append(offset + theta * float(coeffs @ x))
    return min(vals), max(vals)


def _reference(marginals: MarginalSet, reference, **solver) -> DensityOperator:
    if reference is not None:
        return reference
    # any compatible state will do; a first-order solve copes with an empty interior
    reg = marginals.register
    prog = conic.ConicProgram()
    sigma = prog.hermitian("sigma", reg.total_dim)
    prog.add_psd(sigma, "sigma")
    for t in two_body_subspace(reg, marginals.pattern):
        prog.add_equality(sigma.inner(t.operator.matrix), marginals.expectation(t))
    prog.minimize(sigma.inner(np.zeros((reg.total_dim, reg.total_dim))))
    sol = conic.solve(prog, solver.get("tolerances"), conic.get_backend("scs"))
    if not sol.optimal:
        raise SolverFailure(sol, "compatible state reconstruction")
    return DensityOperator.repaired(reg, sol.values["sigma"])


def range_along(marginals: MarginalSet, X: np.ndarray, *, reference: DensityOperator | None = None,
                face: CompatibleFace | None = None, **solver) -> tuple[float, float]:
    """``(min, max)`` of ``tr(X sigma)`` over global states with the given marginals."""
    if face is None:
        face = compatible_face(marginals, _reference(marginals, reference, **solver), **solver)
    return _face_range(face, np.asarray(X), **solver)


def complement_directions(register: QuditRegister, pattern: MarginalPattern) -> list:
    """Product basis elements outside the pattern span (trace-orthogonal to it)."""
    return [t for t in full_operator_basis(register) if not pattern.covers(t.support)]


def compatibility_range(marginals: MarginalSet, *, reference: DensityOperator | None = None, jobs: int = 1,
                        directions=None, **solver) -> UniquenessReport:
    """Largest spread of ``tr(X sigma)`` over compatible ``sigma`` across complement directions ``X``.

    ``reference`` is any compatible global state (typically the one the
    marginals came from); without it one is reconstructed. Directions
    orthogonal to the affine hull of the compatible set have zero range and
    are skipped without a solve.
    """
    reg = marginals.register
    terms = directions if directions is not None else complement_directions(reg, marginals.pattern)
    face = compatible_face(marginals, _reference(marginals, reference, **solver), **solver)
    notes = list(face.notes)
    if reference is None:
        notes.append("reference state reconstructed from the marginals")

    skipped = 0
    todo = []
    ranges: dict[str, float] = {}
    for t in terms:
        _, coeffs = face.coordinates(t.operator.matrix)
        if not len(coeffs) or np.linalg.norm(coeffs) < 1e-12:
            ranges[t.label] = 0.0
            skipped += 1
        else:
            todo.append(t)

    def one(t):
        lo, hi = _face_range(face, t.operator.matrix, **solver)
        return t.label, hi - lo

    if jobs > 1 and len(todo) > 1:
        with ThreadPoolExecutor(jobs) as ex:
            ranges.update(ex.map(one, todo))
    else:
        ranges.update(one(t) for t in todo)
    if not ranges:
        return UniquenessReport(0.0, "unique", None, {}, 0, 0, face.dim, len(face.hull), notes)
    label, worst = max(ranges.items(), key=lambda kv: kv[1])
    if worst < UNIQUE_THRESHOLD:
        verdict = "unique"
    elif worst < INCONCLUSIVE_THRESHOLD:
        verdict = "inconclusive"
    else:
        verdict = "non-unique"
    return UniquenessReport(float(worst), verdict, label if worst > 0 else None, ranges, len(terms), skipped,
                            face.dim, len(face.hull), notes)


# ---------------------------------------------------------------------------
# post-measurement sweep
# ---------------------------------------------------------------------------

def _pm_min_eigs(rho: np.ndarray, dims, party: int, theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    vecs = np.stack([np.cos(theta / 2), np.exp(1j * phi) * np.sin(theta / 2)], axis=0)  # (2, K)
    n = len(dims)
    rest = [dims[p] for p in range(n) if p != party]
    d_rest = int(np.prod(rest))
    t = rho.reshape(tuple(dims) * 2)
    # move the measured party's row/col axes to the front
    t = np.moveaxis(t, [party, n + party], [0, 1]).reshape(2, 2, d_rest, d_rest)
    cond = np.einsum("ak,abij,bk->kij", vecs.conj(), t, vecs)
    cond = np.moveaxis(cond, 0, -1)
    pt = np.moveaxis(ptranspose(cond, rest, [0]), -1, 0)
    return np.linalg.eigvalsh(pt)[:, 0]


def localizable_sweep(rho: DensityOperator, party: int, grid: tuple[int, int] = (60, 120),
                      max_evals: int = 200) -> dict:
    """Heuristic minimum over measurement directions of the post-measurement PT eigenvalue.

    Grid over ``(theta, phi)`` then Nelder-Mead from the best grid point. The
    result is a sampled minimum, not a proof.
    """
    reg = rho.register
    if reg.dims[party] != 2:
        raise OperatorError("measured party must be a qubit")
    n_t, n_p = grid
    theta = np.linspace(0, np.pi, n_t)
    phi = np.linspace(0, 2 * np.pi, n_p, endpoint=False)
    T, P = np.meshgrid(theta, phi, indexing="ij")
    vals = _pm_min_eigs(rho.matrix, reg.dims, party, T.ravel(), P.ravel())
    k = int(np.argmin(vals))
    x0 = np.array([T.ravel()[k], P.ravel()[k]])

    def f(x):
        return float(_pm_min_eigs(rho.matrix, reg.dims, party, np.array([x[0]]), np.array([x[1]]))[0])

    res = minimize(f, x0, method="Nelder-Mead",
                   options={"maxfev": max_evals, "xatol": 1e-8, "fatol": 1e-12})
    best = min((float(vals[k]), tuple(x0)), (float(res.fun), tuple(res.x)))
    return {
        "party": party,
        "minimum": best[0],
        "direction": {"theta": best[1][0], "phi": best[1][1]},
        "grid": list(grid),
        "grid_minimum": float(vals[k]),
        "evaluations": int(vals.size + res.nfev),
        "note": "sampled minimum over the Bloch sphere (heuristic, not a certificate)",
    }
