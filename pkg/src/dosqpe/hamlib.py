"""Qubit Hamiltonians: Pauli sums, Jordan-Wigner Fermi-Hubbard, dense
matrices, zero-padding, rescaling into the unit phase interval and exact
diagonalization.

Conventions
-----------
* A Pauli word is a string over ``IXYZ``; character ``q`` acts on qubit ``q``
  (leftmost character is qubit 0).
* Basis index bit ``q`` is the state of qubit ``q`` (little-endian), so the
  dense matrix of ``"XZ"`` is ``kron(Z, X)``.
* Fermi-Hubbard modes are interleaved: qubit ``2*site + spin`` with spin-up
  ``0`` and spin-down ``1``.  Occupied mode = qubit in ``|1>``.
"""
from __future__ import annotations

import ast
import math
import re
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import (
    FormatError,
    InvalidArgumentError,
    NumericalError,
    ResourceLimitError,
    ValidationError,
)

DENSE_QUBIT_LIMIT = 12
HERMITIAN_TOL = 1e-10
DEFAULT_DEGENERACY_TOL = 1e-9
DEFAULT_TOP_MARGIN = 1e-3

_PAULI_LABELS = frozenset("IXYZ")

# single-qubit products: (a, b) -> (phase, a*b)
_PAULI_PRODUCT = {
    ("I", "I"): (1, "I"), ("I", "X"): (1, "X"), ("I", "Y"): (1, "Y"), ("I", "Z"): (1, "Z"),
    ("X", "I"): (1, "X"), ("X", "X"): (1, "I"), ("X", "Y"): (1j, "Z"), ("X", "Z"): (-1j, "Y"),
    ("Y", "I"): (1, "Y"), ("Y", "X"): (-1j, "Z"), ("Y", "Y"): (1, "I"), ("Y", "Z"): (1j, "X"),
    ("Z", "I"): (1, "Z"), ("Z", "X"): (1j, "Y"), ("Z", "Y"): (-1j, "X"), ("Z", "Z"): (1, "I"),
}


@dataclass(frozen=True)
class PauliTerm:
    coefficient: float
    word: str

    def __post_init__(self):
        if not set(self.word) <= _PAULI_LABELS:
            raise InvalidArgumentError(f"invalid Pauli word {self.word!r}")
        if not math.isfinite(self.coefficient):
            raise InvalidArgumentError("Pauli coefficient must be finite")


@dataclass(frozen=True)
class PauliSum:
    """Real linear combination of Pauli words on ``qubit_count`` qubits.

    Terms are merged on construction (first occurrence fixes the order) and
    exact zeros are dropped.
    """

    qubit_count: int
    terms: tuple[PauliTerm, ...] = ()

    def __post_init__(self):
        if self.qubit_count < 1:
            raise InvalidArgumentError("qubit_count must be positive")
        merged: dict[str, float] = {}
        for term in self.terms:
            if len(term.word) != self.qubit_count:
                raise InvalidArgumentError(
                    f"word {term.word!r} does not have {self.qubit_count} qubits")
            merged[term.word] = merged.get(term.word, 0.0) + float(term.coefficient)
        terms = tuple(PauliTerm(c, w) for w, c in merged.items() if c != 0.0)
        object.__setattr__(self, "terms", terms)

    @classmethod
    def from_dict(cls, qubit_count: int, coefficients: Mapping[str, float]) -> "PauliSum":
        return cls(qubit_count, tuple(PauliTerm(float(c), w) for w, c in coefficients.items()))

    def as_dict(self) -> dict[str, float]:
        return {t.word: t.coefficient for t in self.terms}

    def merged(self) -> "PauliSum":
        return PauliSum(self.qubit_count, self.terms)

    def identity_coefficient(self) -> float:
        return self.as_dict().get("I" * self.qubit_count, 0.0)

    def __len__(self):
        return len(self.terms)

    def __add__(self, other: "PauliSum") -> "PauliSum":
        if other.qubit_count != self.qubit_count:
            raise InvalidArgumentError("qubit counts differ")
        return PauliSum(self.qubit_count, self.terms + other.terms)

    def scaled(self, factor: float) -> "PauliSum":
        return PauliSum(self.qubit_count,
                        tuple(PauliTerm(factor * t.coefficient, t.word) for t in self.terms))


@dataclass(frozen=True, eq=False)
class DenseHermitian:
    """Dense Hermitian matrix.  The stored array is symmetrized and read-only."""

    matrix: np.ndarray
    tol: float = field(default=HERMITIAN_TOL, repr=False)

    def __post_init__(self):
        a = np.array(self.matrix, dtype=complex)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise ValidationError(f"expected a non-empty square matrix, got shape {a.shape}")
        err = np.max(np.abs(a - a.conj().T))
        if err > self.tol:
            raise ValidationError(f"matrix is not Hermitian (max deviation {err:.3e})")
        a = 0.5 * (a + a.conj().T)
        a.flags.writeable = False
        object.__setattr__(self, "matrix", a)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def qubit_count(self) -> int:
        n = int(round(math.log2(self.dimension)))
        if 2 ** n != self.dimension:
            raise InvalidArgumentError(
                f"dimension {self.dimension} is not a power of two; pad first")
        return n


Hamiltonian = Union[PauliSum, DenseHermitian]


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Distinct eigenvalues (or phases) with integer degeneracies."""

    values: np.ndarray
    degeneracies: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).copy()
        d = np.asarray(self.degeneracies, dtype=np.int64).copy()
        if v.shape != d.shape or v.ndim != 1:
            raise InvalidArgumentError("values and degeneracies must be 1-D of equal length")
        if np.any(d < 1):
            raise InvalidArgumentError("degeneracies must be >= 1")
        if np.any(np.diff(v) <= 0):
            raise InvalidArgumentError("values must be strictly increasing")
        v.flags.writeable = False
        d.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "degeneracies", d)

    @classmethod
    def from_entries(cls, entries: Iterable[tuple[float, int]]) -> "Spectrum":
        entries = sorted(entries)
        return cls(np.array([e[0] for e in entries], dtype=float),
                   np.array([e[1] for e in entries], dtype=np.int64))

    @property
    def entries(self) -> list[tuple[float, int]]:
        return [(float(v), int(d)) for v, d in zip(self.values, self.degeneracies)]

    @property
    def total(self) -> int:
        return int(self.degeneracies.sum())

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class RescaleParams:
    """Affine map of ``[lambda_min, lambda_max]`` into ``[0, 1)``.

    ``shift_delta`` lifts the lowest phase away from zero (in units of the
    spectral width) and ``top_margin`` keeps ``lambda_max`` strictly below 1.
    """

    lambda_min: float
    lambda_max: float
    shift_delta: float = 0.0
    top_margin: float = DEFAULT_TOP_MARGIN

    def __post_init__(self):
        if not self.lambda_max > self.lambda_min:
            raise InvalidArgumentError("lambda_max must exceed lambda_min")
        if not 0.0 <= self.shift_delta < 1.0:
            raise InvalidArgumentError("shift_delta must lie in [0, 1)")
        if not 0.0 <= self.top_margin < 1.0:
            raise InvalidArgumentError("top_margin must lie in [0, 1)")

    @classmethod
    def for_register(cls, lambda_min: float, lambda_max: float, m: int,
                     shift_delta: float = 0.0) -> "RescaleParams":
        """Top margin of a quarter bin for an ``m``-qubit time-frequency register."""
        return cls(lambda_min, lambda_max, shift_delta, top_margin=1.0 / 2 ** (m + 2))

    @property
    def width(self) -> float:
        return self.lambda_max - self.lambda_min

    @property
    def slope(self) -> float:
        return (1.0 - self.shift_delta) * (1.0 - self.top_margin) / self.width

    @property
    def offset(self) -> float:
        return self.slope * (self.shift_delta * self.width - self.lambda_min)

    def phase_of(self, eigenvalue):
        return self.slope * np.asarray(eigenvalue) + self.offset


def wrap_phase(theta):
    """Reduce phases to [0, 1).  Plain ``% 1.0`` maps tiny negatives to 1.0."""
    y = np.mod(theta, 1.0)
    return np.where(y >= 1.0, 0.0, y)


# --------------------------------------------------------------------------
# Pauli algebra


def _word_masks(word: str) -> tuple[int, int, int]:
    xmask = zmask = 0
    ny = 0
    for q, c in enumerate(word):
        if c in "XY":
            xmask |= 1 << q
        if c in "ZY":
            zmask |= 1 << q
        if c == "Y":
            ny += 1
    return xmask, zmask, ny


def _popcount_parity(values: np.ndarray) -> np.ndarray:
    parity = np.zeros(values.shape, dtype=np.int64)
    v = values.copy()
    while np.any(v):
        parity ^= v & 1
        v >>= 1
    return parity


def pauli_action(word: str) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(target, phase)`` with ``P|x> = phase[x] |target[x]>``."""
    n = len(word)
    xmask, zmask, ny = _word_masks(word)
    x = np.arange(2 ** n, dtype=np.int64)
    sign = 1 - 2 * _popcount_parity(x & zmask)
    phase = (1j ** ny) * sign
    return x ^ xmask, phase.astype(complex)


def apply_pauli(word: str, vectors: np.ndarray) -> np.ndarray:
    """Apply a Pauli word to the rows of ``vectors`` (axis 0 is the basis)."""
    target, phase = pauli_action(word)
    out = np.empty_like(vectors, dtype=complex)
    shape = (-1,) + (1,) * (vectors.ndim - 1)
    out[target] = phase.reshape(shape) * vectors
    return out


def _multiply_words(a: str, b: str) -> tuple[complex, str]:
    phase: complex = 1
    out = []
    for ca, cb in zip(a, b):
        p, c = _PAULI_PRODUCT[(ca, cb)]
        phase *= p
        out.append(c)
    return phase, "".join(out)


def _multiply(a: Mapping[str, complex], b: Mapping[str, complex]) -> dict[str, complex]:
    out: dict[str, complex] = {}
    for wa, ca in a.items():
        for wb, cb in b.items():
            p, w = _multiply_words(wa, wb)
            out[w] = out.get(w, 0) + p * ca * cb
    return out


def _ladder(mode: int, n_modes: int, create: bool) -> dict[str, complex]:
    # a_p = Z_0 ... Z_{p-1} (X_p + i Y_p)/2 ; a_p^dagger flips the sign of iY.
    prefix = "Z" * mode
    suffix = "I" * (n_modes - mode - 1)
    sy = -0.5j if create else 0.5j
    return {prefix + "X" + suffix: 0.5, prefix + "Y" + suffix: sy}


def _real_pauli_sum(n: int, coeffs: Mapping[str, complex], tol: float = 1e-12) -> PauliSum:
    terms = []
    for w, c in coeffs.items():
        if abs(c.imag) > tol:
            raise NumericalError(f"non-Hermitian Pauli coefficient on {w}: {c}")
        if abs(c.real) > tol:
            terms.append(PauliTerm(float(c.real), w))
    return PauliSum(n, tuple(terms))


def jordan_wigner_hop(p: int, q: int, n_modes: int) -> PauliSum:
    """Pauli image of ``a_p^dagger a_q + a_q^dagger a_p``."""
    if p == q:
        raise InvalidArgumentError("p == q: use the number operator instead")
    if not (0 <= p < n_modes and 0 <= q < n_modes):
        raise InvalidArgumentError("mode index out of range")
    forward = _multiply(_ladder(p, n_modes, True), _ladder(q, n_modes, False))
    backward = _multiply(_ladder(q, n_modes, True), _ladder(p, n_modes, False))
    total = dict(forward)
    for w, c in backward.items():
        total[w] = total.get(w, 0) + c
    return _real_pauli_sum(n_modes, total)


def number_operator(p: int, n_modes: int) -> PauliSum:
    ident = "I" * n_modes
    z = ident[:p] + "Z" + ident[p + 1:]
    return PauliSum.from_dict(n_modes, {ident: 0.5, z: -0.5})


def total_number_operator(n_modes: int) -> PauliSum:
    out = PauliSum(n_modes)
    for p in range(n_modes):
        out = out + number_operator(p, n_modes)
    return out


def build_fermi_hubbard(sites: int, t: float, U: float, periodic: bool = False) -> PauliSum:
    """Jordan-Wigner image of the 1-D Fermi-Hubbard chain on ``2*sites`` qubits.

    ``H = -t sum_<ij>,s (a+_is a_js + h.c.) + U sum_i n_i,up n_i,down``.
    A periodic bond is only added for ``sites > 2`` (for two sites it would
    duplicate the open bond).
    """
    if sites < 2:
        raise InvalidArgumentError("Fermi-Hubbard chain needs at least 2 sites")
    n = 2 * sites
    bonds = [(i, i + 1) for i in range(sites - 1)]
    if periodic and sites > 2:
        bonds.append((sites - 1, 0))
    ham = PauliSum(n)
    for i, j in bonds:
        for spin in (0, 1):
            ham = ham + jordan_wigner_hop(2 * i + spin, 2 * j + spin, n).scaled(-t)
    for i in range(sites):
        up = number_operator(2 * i, n)
        down = number_operator(2 * i + 1, n)
        prod = _multiply({w: c for w, c in up.as_dict().items()},
                         {w: c for w, c in down.as_dict().items()})
        ham = ham + _real_pauli_sum(n, prod).scaled(U)
    return ham


# --------------------------------------------------------------------------
# dense forms


def to_dense(h: Hamiltonian, max_qubits: int = DENSE_QUBIT_LIMIT) -> DenseHermitian:
    if isinstance(h, DenseHermitian):
        return h
    n = h.qubit_count
    if n > max_qubits:
        raise ResourceLimitError(f"{n} qubits exceeds the dense limit of {max_qubits}")
    dim = 2 ** n
    mat = np.zeros((dim, dim), dtype=complex)
    cols = np.arange(dim)
    for term in h.terms:
        target, phase = pauli_action(term.word)
        mat[target, cols] += term.coefficient * phase
    return DenseHermitian(mat)


def pauli_decompose(h: DenseHermitian, max_qubits: int = 8) -> PauliSum:
    """Expand a ``2^n``-dimensional Hermitian matrix in the Pauli basis."""
    n = h.qubit_count
    if n > max_qubits:
        raise ResourceLimitError(f"Pauli decomposition limited to {max_qubits} qubits")
    dim = 2 ** n
    a = h.matrix
    rows = np.arange(dim)
    terms = []
    for letters in np.ndindex(*(4,) * n):
        word = "".join("IXYZ"[k] for k in letters)
        target, phase = pauli_action(word)
        # Tr(P H) = sum_y <y^xmask| P |y> <y| H |y^xmask>
        coeff = np.sum(phase * a[rows, target]) / dim
        if abs(coeff.real) > 1e-14:
            terms.append(PauliTerm(float(coeff.real), word))
    return PauliSum(n, tuple(terms))


def pad_to_qubits(h: DenseHermitian) -> DenseHermitian:
    """Embed ``h`` in the top-left block of the next power-of-two dimension."""
    d = h.dimension
    target = 1 << max(0, (d - 1).bit_length())
    if target == d:
        return h
    out = np.zeros((target, target), dtype=complex)
    out[:d, :d] = h.matrix
    return DenseHermitian(out)


def rescale(h: Hamiltonian, params: RescaleParams) -> Hamiltonian:
    """Apply ``H -> slope*H + offset*I`` so that ``[lambda_min, lambda_max]``
    lands inside ``[0, 1)``.

    With ``shift_delta = top_margin = 0`` this is ``(H - lambda_min)/width``.
    """
    a, b = params.slope, params.offset
    if isinstance(h, PauliSum):
        ident = "I" * h.qubit_count
        return PauliSum(h.qubit_count, h.scaled(a).terms + (PauliTerm(b, ident),))
    return DenseHermitian(a * h.matrix + b * np.eye(h.dimension))


def unscale_phase(params: RescaleParams, theta: float) -> float:
    if not 0.0 <= theta < 1.0:
        raise InvalidArgumentError(f"phase {theta} outside [0, 1)")
    return (theta - params.offset) / params.slope


def eigh(h: Hamiltonian) -> tuple[np.ndarray, np.ndarray]:
    mat = to_dense(h).matrix
    try:
        return np.linalg.eigh(mat)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigensolver failed: {exc}") from exc


def group_eigenvalues(eigenvalues: Sequence[float],
                      degeneracy_tol: float = DEFAULT_DEGENERACY_TOL) -> Spectrum:
    """Chain sorted eigenvalues whose consecutive gaps are ``<= degeneracy_tol``."""
    ev = np.sort(np.asarray(eigenvalues, dtype=float))
    values, degs = [], []
    start = 0
    for i in range(1, len(ev) + 1):
        if i == len(ev) or ev[i] - ev[i - 1] > degeneracy_tol:
            values.append(float(np.mean(ev[start:i])))
            degs.append(i - start)
            start = i
    return Spectrum(np.array(values), np.array(degs))


def exact_spectrum(h: Hamiltonian, degeneracy_tol: float = DEFAULT_DEGENERACY_TOL) -> Spectrum:
    """Eigenvalues of ``h`` grouped into degenerate classes."""
    evals, _ = eigh(h)
    return group_eigenvalues(evals, degeneracy_tol)


# --------------------------------------------------------------------------
# file formats

_COMPLEX_FIX = re.compile(r"(^|[+-])i$")


def parse_complex(token: str) -> complex:
    """Parse ``a+bi`` style tokens (``b`` optional, ``i`` or ``j`` suffix)."""
    t = token.strip().replace("I", "i").replace("j", "i")
    t = _COMPLEX_FIX.sub(lambda mo: mo.group(1) + "1i", t)
    value = complex(t.replace("i", "j"))
    if not (math.isfinite(value.real) and math.isfinite(value.imag)):
        raise ValueError("non-finite entry")
    return value


def _read_text(source) -> str:
    if isinstance(source, bytes):
        return source.decode("utf-8")
    if isinstance(source, str):
        return source
    data = source.read()
    return data.decode("utf-8") if isinstance(data, bytes) else data


def _strip_comment(line: str) -> str:
    return line.split("#", 1)[0].strip()


def load_matrix(source: Union[str, bytes, IO]) -> DenseHermitian:
    """Parse a matrix from text.

    Accepts the ``dim d`` format (``d`` rows of ``d`` whitespace-separated
    complex entries, ``#`` comments) or a nested-list literal such as
    ``[[0,1],[1,0]]``.
    """
    text = _read_text(source)
    lines = [(k + 1, _strip_comment(raw)) for k, raw in enumerate(text.splitlines())]
    lines = [(k, s) for k, s in lines if s]
    if not lines:
        raise FormatError("empty matrix file", 1)
    first_no, first = lines[0]
    if first.startswith("["):
        literal = " ".join(s for _, s in lines)
        literal = re.sub(r"(?<=[0-9.])i\b", "j", literal)
        try:
            mat = np.array(ast.literal_eval(literal), dtype=complex)
        except (ValueError, SyntaxError) as exc:
            raise FormatError(f"bad matrix literal: {exc}", first_no) from exc
        return _validated(mat)
    parts = first.split()
    if len(parts) != 2 or parts[0].lower() != "dim":
        raise FormatError("expected header 'dim d'", first_no)
    try:
        d = int(parts[1])
    except ValueError:
        raise FormatError(f"bad dimension {parts[1]!r}", first_no) from None
    if d < 1:
        raise FormatError("dimension must be positive", first_no)
    rows = lines[1:]
    if len(rows) != d:
        where = rows[-1][0] + 1 if rows else first_no + 1
        raise FormatError(f"expected {d} rows, found {len(rows)}", where)
    mat = np.zeros((d, d), dtype=complex)
    for r, (line_no, s) in enumerate(rows):
        tokens = s.split()
        if len(tokens) != d:
            raise FormatError(f"expected {d} entries, found {len(tokens)}", line_no)
        for c, tok in enumerate(tokens):
            try:
                mat[r, c] = parse_complex(tok)
            except ValueError:
                raise FormatError(f"bad complex entry {tok!r}", line_no) from None
    return _validated(mat)


def _validated(mat: np.ndarray) -> DenseHermitian:
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise FormatError(f"matrix must be square, got shape {mat.shape}")
    return DenseHermitian(mat, tol=HERMITIAN_TOL)


def _format_complex(z: complex) -> str:
    if z.imag == 0:
        return repr(float(z.real))
    return f"{z.real!r}{z.imag:+}i"


def dump_matrix(h: DenseHermitian) -> str:
    lines = [f"dim {h.dimension}"]
    for row in h.matrix:
        lines.append(" ".join(_format_complex(complex(z)) for z in row))
    return "\n".join(lines) + "\n"


def load_pauli_sum(source: Union[str, bytes, IO]) -> PauliSum:
    """Parse ``coeff WORD`` lines (``#`` comments, blank lines ignored)."""
    text = _read_text(source)
    terms = []
    n = None
    for k, raw in enumerate(text.splitlines(), start=1):
        s = _strip_comment(raw)
        if not s:
            continue
        parts = s.split()
        if len(parts) != 2:
            raise FormatError("expected 'coeff WORD'", k)
        try:
            coeff = float(parts[0])
        except ValueError:
            raise FormatError(f"bad coefficient {parts[0]!r}", k) from None
        word = parts[1].upper()
        if not set(word) <= _PAULI_LABELS:
            raise FormatError(f"bad Pauli word {parts[1]!r}", k)
        if n is None:
            n = len(word)
        elif len(word) != n:
            raise FormatError(f"word length {len(word)} differs from {n}", k)
        if not math.isfinite(coeff):
            raise FormatError("coefficient must be finite", k)
        terms.append(PauliTerm(coeff, word))
    if n is None:
        raise FormatError("no Pauli terms found", 1)
    return PauliSum(n, tuple(terms))


def dump_pauli_sum(h: PauliSum) -> str:
    return "".join(f"{t.coefficient!r} {t.word}\n" for t in h.terms)
