"""Named states with separable two-body marginals, plus controls.

Amplitudes are written from exact root/phase expressions. ``expected`` carries
the reported white-noise tolerances used by the regression suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import Any

import numpy as np

from .operators import DensityOperator, PureState, QuditRegister, ptrace

s = np.sqrt


def _e(x: float) -> complex:
    return np.exp(1j * np.pi * x)


class CatalogError(KeyError):
    pass


@dataclass(frozen=True, eq=False)
class CatalogEntry:
    id: str
    register: QuditRegister
    state: DensityOperator = field(repr=False)
    pure: PureState | None = field(default=None, repr=False)
    expected: dict[str, Any] = field(default_factory=dict)
    description: str = ""

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "dims": list(self.register.dims),
            "pure": self.pure is not None,
            "description": self.description,
            "expected": self.expected,
        }


def _pure(dims, terms):
    return PureState.from_terms(QuditRegister(dims), terms)


def _mixture(weights_and_states):
    reg = weights_and_states[0][1].register
    mat = sum(w * np.outer(v.amplitudes, v.amplitudes.conj()) for w, v in weights_and_states)
    return DensityOperator(reg, mat)


def _n3():
    w_phase = {"001": _e(1 / 3) / s(3), "010": _e(-1 / 3) / s(3), "100": -1 / s(3)}
    xi = {k: v * s(1 / 3) for k, v in w_phase.items()}
    xi["111"] = s(2 / 3)
    wbar = {k: 1 / s(3) for k in ("011", "101", "110")}
    return _mixture([(2 / 3, _pure((2,) * 3, xi)), (1 / 3, _pure((2,) * 3, wbar))]), None


def _n4():
    a = 1 / s(5)
    psi = _pure((2,) * 4, {"0011": a, "0101": a, "0110": a, "1001": a, "1010": -a})
    return psi.density(), psi


def dicke_ghz4(phi_sign: int = 1) -> PureState:
    """Equal superposition of a phased two-excitation Dicke state and GHZ."""
    if phi_sign not in (1, -1):
        raise ValueError("phi_sign must be +1 or -1")
    phi = phi_sign * np.arccos(-1 / 3)
    d = 1 / s(6)
    dicke = {
        "0011": d, "0101": d, "0110": d,
        "1001": d * np.exp(1j * phi), "1010": d * np.exp(1j * phi), "1100": d * np.exp(-1j * phi),
    }
    terms = {k: v / s(2) for k, v in dicke.items()}
    terms["0000"] = 0.5
    terms["1111"] = 0.5
    return _pure((2,) * 4, terms)


def _unique3():
    xi = _pure((2,) * 3, {"010": 0.5, "100": 0.5, "001": 1 / s(2)})
    one = _pure((2,) * 3, {"111": 1.0})
    return _mixture([(2 / 3, xi), (1 / 3, one)]), None


def _robust4():
    c = 1 / (2 * s(2))
    eta = {"0011": -1j * c, "0101": c, "0110": c, "1001": -s(3) * c, "1010": 1j * c, "1100": c}
    terms = {k: v / s(2) for k, v in eta.items()}
    terms["0000"] = 0.5
    terms["1111"] = 0.5
    psi = _pure((2,) * 4, terms)
    return psi.density(), psi


def _five_qubit():
    t: dict[str, complex] = {}

    def add(prefix, coef, tail):
        for k, v in tail.items():
            t[prefix + k] = t.get(prefix + k, 0) + coef * v

    add("00", 1 / s(6), {"000": 1})
    add("11", 1 / s(8), {"000": s(2 / 3), "001": -1, "010": -1, "100": -1})
    add("01", 1 / s(24), {"001": -1, "010": _e(-1 / 3), "100": _e(1 / 3)})
    add("01", 1 / s(48), {"011": _e(-2 / 3), "101": _e(2 / 3), "110": 1})
    add("10", 1 / s(24), {"001": -1, "010": _e(1 / 3), "100": _e(-1 / 3)})
    add("10", 1 / s(48), {"011": _e(-1 / 3), "101": _e(1 / 3), "110": -1})
    psi = _pure((2,) * 5, t)
    return psi.density(), psi


def _bell_pair(sign):
    v = np.zeros(4, dtype=complex)
    v[1], v[2] = 1 / s(2), sign / s(2)
    return v


def _triples4():
    ghz = np.zeros(16, dtype=complex)
    ghz[0] = ghz[15] = 1 / s(2)
    zeta1 = s(4 / 5) * ghz + s(1 / 5) * np.kron(_bell_pair(1), _bell_pair(1))
    zeta2 = np.zeros(16, dtype=complex)
    zeta2[0b0011] = zeta2[0b1100] = s(2 / 5)
    zeta2 = zeta2 + s(1 / 5) * np.kron(_bell_pair(-1), _bell_pair(-1))
    reg = QuditRegister((2,) * 4)
    return _mixture([(0.5, PureState(reg, zeta1)), (0.5, PureState(reg, zeta2))]), None


def _partial3():
    # Written with party A as the rightmost ket label; in our left-to-right
    # convention the detecting marginals {AB, AC} become {CB, CA}.
    xi1 = {"000": s(5), "011": s(4) * _e(-3 / 4), "101": _e(-3 / 4)}
    xi1 = {k: v * s(1 / 10) for k, v in xi1.items()}
    xi2 = {"001": s(3), "010": s(3) * _e(2 / 3), "100": s(3) * _e(-1 / 3), "111": 1}
    xi2 = {k: v * s(1 / 10) for k, v in xi2.items()}
    return _mixture([(0.5, _pure((2,) * 3, xi1)), (0.5, _pure((2,) * 3, xi2))]), None


def _qutrit3():
    a = s(5) / 6
    eta1 = {"000": 1 / s(12), "222": -1 / s(12)}
    for k, sign in (("012", 1), ("021", 1), ("102", -1), ("120", 1), ("201", 1), ("210", 1)):
        eta1[k] = -1j * a * sign
    eta2 = {"111": 1 / s(6)}
    for k, sign in (("012", 1), ("021", -1), ("102", 1), ("120", 1), ("201", 1), ("210", -1)):
        eta2[k] = -a * sign
    return _mixture([(0.5, _pure((3,) * 3, eta1)), (0.5, _pure((3,) * 3, eta2))]), None


def _no_localizable3():
    chi1 = {
        "001": s(5 / 21), "010": s(5 / 21) * _e(-1 / 6), "100": s(5 / 21) * _e(-3 / 4),
        "011": s(2 / 21) * _e(1 / 5), "101": s(2 / 21) * _e(1), "110": s(2 / 21) * _e(1 / 9),
    }
    chi2 = {
        "000": _e(4 / 5) / 3, "111": s(3 / 7),
        "001": s(1 / 42) * _e(5 / 6), "010": s(1 / 42) * _e(-2 / 3), "100": s(1 / 42) * _e(-3 / 5),
        "011": s(7 / 54) * _e(-3 / 5), "101": s(7 / 54) * _e(-5 / 9), "110": s(7 / 54),
    }
    chi3 = {
        "000": s(18) / 5, "111": _e(1 / 5) / 5,
        "001": s(2) / 5 * _e(1), "010": s(2) / 5 * _e(-1 / 2), "100": s(2) / 5 * _e(-2 / 5),
    }
    chi4 = {"001": 1 / s(3), "010": _e(-5 / 6) / s(3), "100": 1 / s(3)}
    d = (2,) * 3
    return _mixture([
        (1 / 3, _pure(d, chi1)), (1 / 3, _pure(d, chi2)), (1 / 6, _pure(d, chi3)), (1 / 6, _pure(d, chi4)),
    ]), None


def _ghz3():
    psi = _pure((2,) * 3, {"000": 1 / s(2), "111": 1 / s(2)})
    return psi.density(), psi


def _dicke_ghz4_entry(phi_sign=1):
    psi = dicke_ghz4(phi_sign)
    return psi.density(), psi


_REGISTRY = {
    "rho_n3": (_n3, "three-qubit rank-two state with phased W component", {
        "pattern": "all", "marginal_tolerance": 0.137, "unrestricted_tolerance": 0.286, "uniqueness": "unique"}),
    "n4": (_n4, "four-qubit Dicke-type pure state with one pi phase", {
        "pattern": "all", "marginal_tolerance": 0.212, "uniqueness": "unique"}),
    "dicke_ghz4": (_dicke_ghz4_entry, "Dicke plus GHZ with phases +-arccos(-1/3); marginals do not fix it", {
        "pattern": "AB,BC,CD", "marginal_tolerance": 0.030, "uniqueness": "non-unique"}),
    "unique3": (_unique3, "three-qubit state fixed uniquely by its pair marginals", {
        "pattern": "all", "marginal_tolerance": 0.052, "uniqueness": "unique"}),
    "robust4": (_robust4, "most noise-robust four-qubit example", {
        "pattern": "all", "marginal_tolerance": 0.224}),
    "five_qubit": (_five_qubit, "five-qubit pure example", {
        "pattern": "all", "marginal_tolerance": 0.173, "uniqueness": "unique"}),
    "rho_n4_triples": (_triples4, "four-qubit state with PPT pair and triple marginals", {
        "pattern": "all", "marginal_tolerance": 0.218, "triples_ppt": True,
        "separability_onset": 0.135, "separability_onset_verified": False}),
    "partial3": (_partial3, "three-qubit state detectable from two of its three pair marginals", {
        "pattern": "AC,BC", "pattern_rightmost_a": "AB,AC", "marginal_tolerance": 0.050}),
    "qutrit3": (_qutrit3, "three-qutrit example with PPT marginals", {
        "pattern": "all", "marginal_tolerance": 0.295,
        "separability_onset": 0.053, "separability_onset_verified": False, "reported_window_upper": 0.275}),
    "no_localizable3": (_no_localizable3, "three-qubit state with separable post-measurement marginals", {
        "pattern": "all", "marginal_tolerance": 0.020, "post_measurement_eps": 1e-4}),
    "ghz3": (_ghz3, "GHZ control: its marginals admit a biseparable completion", {
        "pattern": "all", "marginal_tolerance": 0.0}),
}


def ids() -> list[str]:
    return list(_REGISTRY)


def describe(id: str) -> str:
    if id not in _REGISTRY:
        raise CatalogError(f"unknown catalog id {id!r}")
    return _REGISTRY[id][1]


def build(id: str, **params) -> CatalogEntry:
    """Construct a catalog state. ``dicke_ghz4`` takes ``phi_sign=+1/-1``."""
    try:
        ctor, desc, expected = _REGISTRY[id]
    except KeyError:
        raise CatalogError(f"unknown catalog id {id!r}; known: {', '.join(_REGISTRY)}") from None
    rho, psi = ctor(**params)
    return CatalogEntry(id, rho.register, rho, psi, dict(expected), desc)


# ---------------------------------------------------------------------------
# many-party composition from copies of the four-qubit pure state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Composition:
    """Copies of a four-qubit pure state spread over ``n`` parties.

    Qubits are numbered ``2*party + slot``. ``factors[k]`` lists the four global
    qubit indices carrying copy ``k`` in the order of the factor's own qubits.
    Slots not covered by any copy hold ``|0>``.
    """

    n_parties: int
    factors: tuple[tuple[int, int, int, int], ...]

    @property
    def n_qubits(self) -> int:
        return 2 * self.n_parties

    @property
    def idle_qubits(self) -> tuple[int, ...]:
        used = {q for f in self.factors for q in f}
        return tuple(q for q in range(self.n_qubits) if q not in used)

    def party_windows(self) -> list[tuple[int, ...]]:
        return [tuple(q // 2 for q in f) for f in self.factors]

    def global_state(self) -> PureState:
        if self.n_parties > 5:
            raise ValueError("dense global state is only formed for n <= 5")
        psi = _factor_vector().reshape(2, 2, 2, 2)
        zero = np.array([1.0, 0.0], dtype=complex)
        parts = [psi] * len(self.factors) + [zero] * len(self.idle_qubits)
        order = [q for f in self.factors for q in f] + list(self.idle_qubits)
        tensor = reduce(np.multiply.outer, parts)
        vec = np.ascontiguousarray(tensor.transpose(np.argsort(order))).reshape(2 ** self.n_qubits)
        return PureState(QuditRegister((2,) * self.n_qubits), vec)

    def party_register(self) -> QuditRegister:
        """Each party as one four-level system."""
        return QuditRegister((4,) * self.n_parties)


def _factor_vector() -> np.ndarray:
    return _n4()[1].amplitudes


def default_windows(n: int) -> list[tuple[int, ...]]:
    if n == 5:
        return [(0, 1, 2, 3), (1, 2, 3, 4)]
    # copy k on parties 2k..2k+3 around the ring; each party lies in at most two windows
    return [tuple((2 * k + j) % n for j in range(4)) for k in range(n // 2 if n % 2 == 0 else (n - 1) // 2)]


def compose_many_party(n: int, windows: list[tuple[int, ...]] | None = None) -> Composition:
    """Spread copies of the four-qubit pure state over ``n >= 5`` parties, two qubits each."""
    if n < 5:
        raise ValueError("composition needs at least five parties")
    windows = default_windows(n) if windows is None else windows
    used = {p: 0 for p in range(n)}
    factors = []
    for w in windows:
        if len(set(w)) != 4 or not all(0 <= p < n for p in w):
            raise ValueError(f"window {w} must name four distinct parties")
        qubits = []
        for p in w:
            if used[p] >= 2:
                raise ValueError(f"party {p} would hold more than two qubits")
            qubits.append(2 * p + used[p])
            used[p] += 1
        factors.append(tuple(qubits))
    return Composition(n, tuple(factors))


def composed_pair_marginal(comp: Composition, pair: tuple[int, int]) -> DensityOperator:
    """Two-party marginal (four qubits) assembled from the factor states.

    The result lives on qubits ``(2a, 2a+1, 2b, 2b+1)`` in that order, without
    forming the global state.
    """
    a, b = sorted(pair)
    if a == b or not (0 <= a < comp.n_parties and 0 <= b < comp.n_parties):
        raise ValueError(f"invalid pair {pair}")
    targets = [2 * a, 2 * a + 1, 2 * b, 2 * b + 1]
    psi = _factor_vector()
    rho4 = np.outer(psi, psi.conj())
    pieces, owned = [], []
    for f in comp.factors:
        keep = [i for i, q in enumerate(f) if q in targets]
        if keep:
            pieces.append(ptrace(rho4, (2, 2, 2, 2), keep))
            owned.extend(f[i] for i in keep)
    for q in comp.idle_qubits:
        if q in targets:
            pieces.append(np.diag([1.0, 0.0]).astype(complex))
            owned.append(q)
    mat = reduce(np.kron, pieces)
    perm = [owned.index(q) for q in targets]
    t = mat.reshape((2,) * 8).transpose(perm + [4 + i for i in perm])
    return DensityOperator(QuditRegister((2,) * 4), t.reshape(16, 16))
