"""Exact statevector simulation of the three-register DOS-QPE circuit.

Register layout (flat amplitude index)::

    index = k + 2**m * (s + 2**n * p)

with ``k`` the time-frequency register, ``s`` the state register and ``p``
the purification register, each little-endian.  ``StateVector.tensor``
exposes the amplitudes as an array of shape ``(2**n_p, 2**n, 2**m)``.

Time evolution follows ``U = exp(+i * time_scale * H)`` with
``time_scale = 2*pi`` by default, so an eigenvalue ``theta`` of the
(rescaled) Hamiltonian is read out as phase ``theta``.
"""
from __future__ import annotations

import csv
import io
import math
import os
import struct
from dataclasses import dataclass
from functools import cached_property
from itertools import combinations
from typing import Literal

import numpy as np

from .errors import InvalidArgumentError, PreconditionError, ResourceLimitError, FormatError
from .hamlib import Hamiltonian, PauliSum, apply_pauli, eigh, pauli_decompose

DEFAULT_MAX_QUBITS = 24
NORM_TOL = 1e-10
TWO_PI = 2.0 * math.pi

# Suzuki fractal recursion S_2k(t) = S(p t)^2 S((1-4p) t) S(p t)^2, p = 1/(4 - 4^(1/(2k-1)))
SUZUKI_P4 = 0.4144907717943757
SUZUKI_P6 = 0.3730658277332728
_SUZUKI_P = {4: SUZUKI_P4, 6: SUZUKI_P6}

STATEVECTOR_MAGIC = b"DOSQPESV"


def max_total_qubits() -> int:
    value = os.environ.get("DOSQPE_MAX_QUBITS")
    return int(value) if value else DEFAULT_MAX_QUBITS


@dataclass(frozen=True)
class QubitLayout:
    m: int
    n: int
    purified: bool = True

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise InvalidArgumentError("register sizes must be positive")
        limit = max_total_qubits()
        if self.total > limit:
            raise ResourceLimitError(
                f"{self.total} qubits exceeds the guard of {limit} (set DOSQPE_MAX_QUBITS)")

    @property
    def total(self) -> int:
        return self.m + self.n * (2 if self.purified else 1)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (2 ** self.n if self.purified else 1, 2 ** self.n, 2 ** self.m)


@dataclass(frozen=True, eq=False)
class StateVector:
    layout: QubitLayout
    amplitudes: np.ndarray

    def __post_init__(self):
        amp = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if amp.size != 2 ** self.layout.total:
            raise InvalidArgumentError(
                f"expected {2 ** self.layout.total} amplitudes, got {amp.size}")
        norm = np.vdot(amp, amp).real
        if abs(norm - 1.0) > NORM_TOL:
            raise InvalidArgumentError(f"state is not normalized (|psi|^2 = {norm})")
        amp.flags.writeable = False
        object.__setattr__(self, "amplitudes", amp)

    @property
    def tensor(self) -> np.ndarray:
        return self.amplitudes.reshape(self.layout.shape)

    def _replace(self, tensor: np.ndarray) -> "StateVector":
        return StateVector(self.layout, tensor.reshape(-1))


@dataclass(frozen=True, eq=False)
class PhaseHistogram:
    """Distribution over the ``2**m`` time-frequency outcomes."""

    m: int
    values: np.ndarray
    kind: Literal["probabilities", "counts"] = "probabilities"

    def __post_init__(self):
        v = np.array(self.values, dtype=float if self.kind == "probabilities" else np.int64)
        if v.shape != (2 ** self.m,):
            raise InvalidArgumentError(f"expected {2 ** self.m} bins, got {v.shape}")
        if np.any(v < 0):
            raise InvalidArgumentError("histogram values must be nonnegative")
        if self.kind == "probabilities" and abs(v.sum() - 1.0) > 1e-9:
            raise InvalidArgumentError(f"probabilities sum to {v.sum()}")
        if self.kind not in ("probabilities", "counts"):
            raise InvalidArgumentError(f"unknown histogram kind {self.kind!r}")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def bins(self) -> int:
        return 2 ** self.m

    @property
    def phases(self) -> np.ndarray:
        return np.arange(self.bins) / self.bins

    def frequencies(self) -> np.ndarray:
        v = self.values.astype(float)
        return v / v.sum()

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin", "phase", "value"])
        for y, (ph, val) in enumerate(zip(self.phases, self.values)):
            w.writerow([y, repr(float(ph)), repr(float(val)) if self.kind == "probabilities" else int(val)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, kind: str = "probabilities") -> "PhaseHistogram":
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows or set(rows[0]) != {"bin", "phase", "value"}:
            raise FormatError("histogram CSV needs columns bin,phase,value")
        m = int(round(math.log2(len(rows))))
        if 2 ** m != len(rows):
            raise FormatError(f"{len(rows)} bins is not a power of two")
        values = np.zeros(len(rows))
        for row in rows:
            values[int(row["bin"])] = float(row["value"])
        if kind == "probabilities":
            values = values / values.sum()
        return cls(m, values, kind)


# --------------------------------------------------------------------------
# probes and fixed gates


def prepare_dicke(n: int, k: int) -> np.ndarray:
    """Amplitudes of the Dicke state ``|D^n_k>`` on an ``n``-qubit register."""
    if n < 1:
        raise InvalidArgumentError("n must be positive")
    if not 0 <= k <= n:
        raise InvalidArgumentError(f"Hamming weight {k} outside [0, {n}]")
    amp = np.zeros(2 ** n, dtype=complex)
    idx = [sum(1 << q for q in bits) for bits in combinations(range(n), k)]
    amp[idx] = 1.0 / math.sqrt(len(idx))
    return amp


def plus_state(n: int) -> np.ndarray:
    return np.full(2 ** n, 2 ** (-n / 2), dtype=complex)


def initial_state(layout: QubitLayout, probe: np.ndarray) -> StateVector:
    """Time-frequency and purification registers in ``|0>``, state register in ``probe``."""
    probe = np.asarray(probe, dtype=complex).reshape(-1)
    if probe.size != 2 ** layout.n:
        raise InvalidArgumentError(
            f"probe has {probe.size} amplitudes, state register needs {2 ** layout.n}")
    t = np.zeros(layout.shape, dtype=complex)
    t[0, :, 0] = probe
    return StateVector(layout, t)


def apply_purification_cascade(s: StateVector) -> StateVector:
    """CNOT from state qubit ``q`` onto purification qubit ``q`` for every ``q``."""
    if not s.layout.purified:
        raise PreconditionError("layout has no purification register")
    t = s.tensor
    if np.vdot(t[1:], t[1:]).real > 1e-12:
        raise PreconditionError("purification register is not in |0...0>")
    out = np.zeros_like(t)
    dim = t.shape[1]
    out[np.arange(dim), np.arange(dim), :] = t[0]
    return s._replace(out)


def _walsh_hadamard(a: np.ndarray, axis: int) -> np.ndarray:
    a = np.moveaxis(a, axis, -1).copy()
    size = a.shape[-1]
    h = 1
    while h < size:
        view = a.reshape(a.shape[:-1] + (size // (2 * h), 2, h))
        x = view[..., 0, :].copy()
        y = view[..., 1, :]
        view[..., 0, :] = x + y
        view[..., 1, :] = x - y
        h *= 2
    a /= math.sqrt(size)
    return np.moveaxis(a, -1, axis)


def apply_hadamard_layer(s: StateVector) -> StateVector:
    return s._replace(_walsh_hadamard(s.tensor, axis=2))


def apply_inverse_qft(s: StateVector) -> StateVector:
    """``|k> -> 2^{-m/2} sum_y exp(-2 pi i k y / 2^m) |y>`` on the time-frequency register."""
    return s._replace(np.fft.fft(s.tensor, axis=2, norm="ortho"))


def apply_qft(s: StateVector) -> StateVector:
    return s._replace(np.fft.ifft(s.tensor, axis=2, norm="ortho"))


# --------------------------------------------------------------------------
# time evolution


@dataclass(frozen=True, eq=False)
class EvolutionSpec:
    hamiltonian: Hamiltonian
    mode: Literal["exact", "trotter"] = "exact"
    trotter_order: int = 2
    trotter_steps: int = 1
    time_scale: float = TWO_PI

    def __post_init__(self):
        if self.mode not in ("exact", "trotter"):
            raise InvalidArgumentError(f"unknown evolution mode {self.mode!r}")
        if self.mode == "trotter":
            if self.trotter_order not in (1, 2, 4, 6):
                raise InvalidArgumentError(f"unsupported Trotter order {self.trotter_order}")
            if self.trotter_steps < 1:
                raise InvalidArgumentError("trotter_steps must be positive")

    @property
    def qubit_count(self) -> int:
        return self.hamiltonian.qubit_count

    @cached_property
    def eigensystem(self) -> tuple[np.ndarray, np.ndarray]:
        return eigh(self.hamiltonian)

    @cached_property
    def pauli_sum(self) -> PauliSum:
        if isinstance(self.hamiltonian, PauliSum):
            return self.hamiltonian
        return pauli_decompose(self.hamiltonian)

    @cached_property
    def period_unitary(self) -> np.ndarray:
        """One application of ``U``: exact, or ``trotter_steps`` Suzuki steps."""
        if self.mode == "exact":
            return exact_unitary(self.hamiltonian, self.time_scale)
        step = trotter_step_unitary(self.pauli_sum, self.time_scale / self.trotter_steps,
                                    self.trotter_order)
        return _repeat(step, self.trotter_steps)


def suzuki_sequence(terms: list[tuple[str, float]], order: int,
                    t: float = 1.0) -> list[tuple[str, float]]:
    """Ordered ``(word, angle)`` list whose exponential product approximates
    ``exp(i t sum_j c_j P_j)`` to the given order."""
    if order == 1:
        return [(w, t * c) for w, c in terms]
    if order == 2:
        half = [(w, 0.5 * t * c) for w, c in terms]
        return half + half[::-1]
    if order in _SUZUKI_P:
        p = _SUZUKI_P[order]
        outer = suzuki_sequence(terms, order - 2, p * t)
        inner = suzuki_sequence(terms, order - 2, (1.0 - 4.0 * p) * t)
        return outer + outer + inner + outer + outer
    raise InvalidArgumentError(f"unsupported Trotter order {order}")


def trotter_step_unitary(h: PauliSum, dt: float, order: int) -> np.ndarray:
    """Dense product of Pauli exponentials ``exp(i angle P)`` for one step of size ``dt``."""
    dim = 2 ** h.qubit_count
    mat = np.eye(dim, dtype=complex)
    ident = "I" * h.qubit_count
    terms = [(t.word, t.coefficient) for t in h.terms]
    for word, angle in suzuki_sequence(terms, order, dt):
        if word == ident:
            mat *= np.exp(1j * angle)
        else:
            mat = math.cos(angle) * mat + 1j * math.sin(angle) * apply_pauli(word, mat)
    return mat


def exact_unitary(h: Hamiltonian, time_scale: float = TWO_PI, power: int = 1) -> np.ndarray:
    evals, evecs = eigh(h)
    return (evecs * np.exp(1j * time_scale * power * evals)) @ evecs.conj().T


def _repeat(u: np.ndarray, times: int) -> np.ndarray:
    out = np.eye(u.shape[0], dtype=complex)
    for _ in range(times):
        out = u @ out
    return out


def evolution_unitary(spec: EvolutionSpec, power: int) -> np.ndarray:
    """Dense ``U**power`` on the state register.

    Exact mode uses the eigendecomposition; Trotter mode multiplies the
    period unitary ``power`` times.
    """
    if power < 0:
        raise InvalidArgumentError("power must be nonnegative")
    if spec.mode == "exact":
        evals, evecs = spec.eigensystem
        return (evecs * np.exp(1j * spec.time_scale * power * evals)) @ evecs.conj().T
    return _repeat(spec.period_unitary, power)


def apply_controlled_powers(s: StateVector, spec: EvolutionSpec) -> StateVector:
    """Apply ``U^(2^j)`` to the state register wherever time-frequency qubit ``j`` is 1."""
    layout = s.layout
    if spec.qubit_count != layout.n:
        raise InvalidArgumentError(
            f"Hamiltonian acts on {spec.qubit_count} qubits, state register has {layout.n}")
    t = s.tensor.copy()
    k = np.arange(2 ** layout.m)
    for j in range(layout.m):
        mask = (k >> j) & 1 == 1
        block = t[:, :, mask]
        if spec.mode == "exact":
            u = evolution_unitary(spec, 2 ** j)
            block = np.einsum("ab,pbk->pak", u, block)
        else:
            u = spec.period_unitary
            for _ in range(2 ** j):
                block = np.einsum("ab,pbk->pak", u, block)
        t[:, :, mask] = block
    return s._replace(t)


# --------------------------------------------------------------------------
# readout


def marginal_timefreq(s: StateVector) -> PhaseHistogram:
    probs = np.sum(np.abs(s.tensor) ** 2, axis=(0, 1))
    return PhaseHistogram(s.layout.m, probs / probs.sum())


def reduced_state_register(s: StateVector) -> np.ndarray:
    """Density matrix of the state register (time-frequency and purification traced out)."""
    t = s.tensor
    return np.einsum("pak,pbk->ab", t, t.conj())


def sample_histogram(p: PhaseHistogram, shots: int, seed: int) -> PhaseHistogram:
    """Multinomial draw by CDF inversion of ``shots`` uniforms from PCG64(seed)."""
    if p.kind != "probabilities":
        raise InvalidArgumentError("sampling needs a probability histogram")
    if shots < 1:
        raise InvalidArgumentError("shots must be positive")
    rng = np.random.Generator(np.random.PCG64(seed))
    cdf = np.cumsum(p.values)
    cdf /= cdf[-1]
    u = rng.random(shots)
    outcomes = np.searchsorted(cdf, u, side="right")
    outcomes = np.minimum(outcomes, p.bins - 1)
    return PhaseHistogram(p.m, np.bincount(outcomes, minlength=p.bins), "counts")


def histogram_l2_error(estimate: PhaseHistogram, reference: PhaseHistogram) -> float:
    """L2 distance on ``[0, 1)`` between the piecewise-constant densities.

    Equals ``sqrt(2**m) * ||f_hat - f||_2`` for bin frequencies ``f``; its
    sampling scale is ``sqrt(2**m / shots)``.
    """
    if estimate.m != reference.m:
        raise InvalidArgumentError("histograms have different register sizes")
    diff = estimate.frequencies() - reference.frequencies()
    return float(math.sqrt(estimate.bins) * np.linalg.norm(diff))


# --------------------------------------------------------------------------
# debug dump


def dump_statevector(s: StateVector) -> bytes:
    """16-byte header (magic, uint64 qubit count) + little-endian complex128 amplitudes."""
    header = STATEVECTOR_MAGIC + struct.pack("<Q", s.layout.total)
    return header + s.amplitudes.astype("<c16").tobytes()


def load_statevector(data: bytes, layout: QubitLayout) -> StateVector:
    if len(data) < 16 or data[:8] != STATEVECTOR_MAGIC:
        raise FormatError("not a statevector dump")
    (total,) = struct.unpack("<Q", data[8:16])
    if total != layout.total:
        raise FormatError(f"dump has {total} qubits, layout has {layout.total}")
    amp = np.frombuffer(data[16:], dtype="<c16")
    return StateVector(layout, amp.astype(complex))
