"""End-to-end DOS-QPE runs, the closed-form response oracle and shot budgets."""
from __future__ import annotations

import hashlib
import json
import math
import platform
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from . import __version__
from .errors import InvalidArgumentError
from .hamlib import (
    DEFAULT_DEGENERACY_TOL,
    DenseHermitian,
    Hamiltonian,
    PauliSum,
    RescaleParams,
    Spectrum,
    eigh,
    rescale,
)
from .simengine import (
    EvolutionSpec,
    PhaseHistogram,
    QubitLayout,
    apply_controlled_powers,
    apply_hadamard_layer,
    apply_inverse_qft,
    apply_purification_cascade,
    initial_state,
    marginal_timefreq,
    plus_state,
    prepare_dicke,
    reduced_state_register,
    sample_histogram,
)

RANK_TOL = 1e-10


# --------------------------------------------------------------------------
# probes


@dataclass(frozen=True)
class MaximallyMixed:
    kind = "maximally_mixed"


@dataclass(frozen=True)
class Dicke:
    k: int
    kind = "dicke"


@dataclass(frozen=True)
class Eigenvector:
    """Eigenvector ``index`` of the (rescaled) Hamiltonian, ascending order."""

    index: int
    kind = "eigenvector"


@dataclass(frozen=True, eq=False)
class Custom:
    """Arbitrary state-register amplitudes; purified by the CNOT cascade if the
    layout has a purification register."""

    state: np.ndarray
    kind = "custom"


Probe = Union[MaximallyMixed, Dicke, Eigenvector, Custom]


def probe_from_dict(d: dict) -> Probe:
    kind = d.get("kind", "maximally_mixed")
    if kind == "maximally_mixed":
        return MaximallyMixed()
    if kind == "dicke":
        return Dicke(int(d["k"]))
    if kind == "eigenvector":
        return Eigenvector(int(d.get("index", 0)))
    if kind == "custom":
        return Custom(np.asarray(d["state"], dtype=complex))
    raise InvalidArgumentError(f"unknown probe kind {kind!r}")


def probe_to_dict(p: Probe) -> dict:
    if isinstance(p, Dicke):
        return {"kind": "dicke", "k": p.k}
    if isinstance(p, Eigenvector):
        return {"kind": "eigenvector", "index": p.index}
    if isinstance(p, Custom):
        return {"kind": "custom", "state": [[z.real, z.imag] for z in p.state]}
    return {"kind": "maximally_mixed"}


def n_eff_of_probe(probe: Probe, n: int) -> int:
    """Dimension of the probe ensemble's support."""
    if isinstance(probe, MaximallyMixed):
        return 2 ** n
    if isinstance(probe, Dicke):
        return math.comb(n, probe.k)
    if isinstance(probe, Eigenvector):
        return 1
    if isinstance(probe, Custom):
        # purification leaves diag(|c_x|^2); its rank is the support size
        return max(1, int(np.count_nonzero(np.abs(np.asarray(probe.state)) ** 2 > RANK_TOL)))
    raise InvalidArgumentError(f"unknown probe {probe!r}")


def probe_density(probe: Probe, h: Hamiltonian, n: int, purified: bool = True) -> np.ndarray:
    """Reduced state-register density matrix the probe produces."""
    if isinstance(probe, Eigenvector):
        vec = _eigenvector(h, probe.index)
        return np.outer(vec, vec.conj())
    vec = _probe_amplitudes(probe, n, h)
    if purified:
        return np.diag(np.abs(vec) ** 2).astype(complex)
    return np.outer(vec, vec.conj())


def _eigenvector(h: Hamiltonian, index: int) -> np.ndarray:
    _, vecs = eigh(h)
    if not 0 <= index < vecs.shape[1]:
        raise InvalidArgumentError(f"eigenvector index {index} out of range")
    return vecs[:, index]


def _probe_amplitudes(probe: Probe, n: int, h: Hamiltonian) -> np.ndarray:
    if isinstance(probe, MaximallyMixed):
        return plus_state(n)
    if isinstance(probe, Dicke):
        return prepare_dicke(n, probe.k)
    if isinstance(probe, Eigenvector):
        return _eigenvector(h, probe.index)
    vec = np.asarray(probe.state, dtype=complex).reshape(-1)
    if vec.size != 2 ** n:
        raise InvalidArgumentError(f"custom probe has {vec.size} amplitudes, expected {2 ** n}")
    return vec / np.linalg.norm(vec)


def spectral_weights(h: Hamiltonian, rho: np.ndarray,
                     degeneracy_tol: float = DEFAULT_DEGENERACY_TOL) -> tuple[Spectrum, np.ndarray]:
    """Group the eigenphases of ``h`` and the probe populations ``<k|rho|k>`` on them."""
    evals, evecs = eigh(h)
    pops = np.einsum("ak,ab,bk->k", evecs.conj(), rho, evecs).real
    values, degs, weights = [], [], []
    start = 0
    for i in range(1, len(evals) + 1):
        if i == len(evals) or evals[i] - evals[i - 1] > degeneracy_tol:
            values.append(float(np.mean(evals[start:i])))
            degs.append(i - start)
            weights.append(float(pops[start:i].sum()))
            start = i
    w = np.clip(np.array(weights), 0.0, None)
    return Spectrum(np.array(values), np.array(degs)), w / w.sum()


# --------------------------------------------------------------------------
# closed-form response


def qpe_amplitude(phase_offset: np.ndarray, M: int) -> np.ndarray:
    """``c(y) = M^{-1} sum_k exp(2 pi i k d)`` summed as a geometric series.

    At integer ``d`` the series is exactly 1.
    """
    d = np.asarray(phase_offset, dtype=float)
    d = d - np.round(d)
    z = np.exp(2j * np.pi * d)
    out = np.ones(d.shape, dtype=complex)
    off = np.abs(d) > 1e-13
    out[off] = (1.0 - z[off] ** M) / (M * (1.0 - z[off]))
    return out


def analytic_response(spec: Spectrum, weights, m: int) -> PhaseHistogram:
    """``P(y) = sum_j p_j |c_j(y)|^2`` for the phases of ``spec``."""
    p = np.asarray(weights, dtype=float)
    if p.shape != (len(spec),):
        raise InvalidArgumentError("one weight per spectrum entry is required")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise InvalidArgumentError("weights must be a probability vector")
    M = 2 ** m
    y = np.arange(M) / M
    amp = qpe_amplitude(spec.values[:, None] - y[None, :], M)
    probs = p @ (np.abs(amp) ** 2)
    return PhaseHistogram(m, probs / probs.sum())


def shots_required(n_eff: int, m: int, delta: float) -> int:
    """``ceil(n_eff * 2**m / delta**2)``."""
    if delta <= 0:
        raise InvalidArgumentError("target error must be positive")
    if n_eff < 1 or m < 0:
        raise InvalidArgumentError("n_eff must be positive and m nonnegative")
    value = n_eff * 2 ** m / delta ** 2
    # absorb last-ulp noise so that e.g. 32/0.1**2 gives 3200
    return max(1, math.ceil(value * (1 - 1e-12)))


# --------------------------------------------------------------------------
# runs


@dataclass(frozen=True, eq=False)
class DosQpeConfig:
    layout: QubitLayout
    probe: Probe
    evolution: EvolutionSpec
    rescale: Optional[RescaleParams] = None
    shots: int = 0
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.probe, (Dicke, MaximallyMixed)) and not self.layout.purified:
            raise InvalidArgumentError(f"{self.probe.kind} probe needs a purification register")
        if self.shots < 0:
            raise InvalidArgumentError("shots must be nonnegative")
        if self.evolution.qubit_count != self.layout.n:
            raise InvalidArgumentError(
                f"Hamiltonian acts on {self.evolution.qubit_count} qubits, "
                f"state register has {self.layout.n}")

    def describe(self) -> dict[str, Any]:
        ev = self.evolution
        out: dict[str, Any] = {
            "layout": {"m": self.layout.m, "n": self.layout.n, "purified": self.layout.purified},
            "probe": probe_to_dict(self.probe),
            "evolution": {"mode": ev.mode, "time_scale": float(ev.time_scale)},
            "shots": self.shots,
            "seed": self.seed,
        }
        if ev.mode == "trotter":
            out["evolution"].update(order=ev.trotter_order, steps=ev.trotter_steps)
        if self.rescale is not None:
            r = self.rescale
            out["rescale"] = {"lambda_min": float(r.lambda_min), "lambda_max": float(r.lambda_max),
                              "shift_delta": float(r.shift_delta),
                              "top_margin": float(r.top_margin)}
        out["hamiltonian_sha256"] = hamiltonian_digest(ev.hamiltonian)
        return out


@dataclass(frozen=True, eq=False)
class DosQpeResult:
    exact_distribution: PhaseHistogram
    sampled: Optional[PhaseHistogram]
    n_eff: int
    provenance: dict = field(default_factory=dict)


def hamiltonian_digest(h: Hamiltonian) -> str:
    sha = hashlib.sha256()
    if isinstance(h, PauliSum):
        for t in h.terms:
            sha.update(f"{t.word}:{t.coefficient!r};".encode())
    else:
        sha.update(np.ascontiguousarray(h.matrix).astype("<c16").tobytes())
    return sha.hexdigest()


def provenance(config: DosQpeConfig) -> dict[str, Any]:
    echo = config.describe()
    digest = hashlib.sha256(json.dumps(echo, sort_keys=True).encode()).hexdigest()
    return {
        "config_sha256": digest,
        "seed": config.seed,
        "dosqpe_version": __version__,
        "numpy_version": np.__version__,
        "python_version": platform.python_version(),
        "config": echo,
    }


def evolved_hamiltonian(config: DosQpeConfig) -> Hamiltonian:
    h = config.evolution.hamiltonian
    return h if config.rescale is None else rescale(h, config.rescale)


def run(config: DosQpeConfig) -> DosQpeResult:
    """Probe prep, purification, Hadamards, controlled powers, iQFT, marginal, sampling."""
    layout = config.layout
    ev = config.evolution
    h = evolved_hamiltonian(config)
    if h is not ev.hamiltonian:
        ev = EvolutionSpec(h, ev.mode, ev.trotter_order, ev.trotter_steps, ev.time_scale)

    state = initial_state(layout, _probe_amplitudes(config.probe, layout.n, h))
    if layout.purified and not isinstance(config.probe, Eigenvector):
        state = apply_purification_cascade(state)
    if isinstance(config.probe, Custom):
        rho = reduced_state_register(state)
        n_eff = max(1, int(np.sum(np.linalg.eigvalsh(rho) > RANK_TOL)))
    else:
        n_eff = n_eff_of_probe(config.probe, layout.n)
    state = apply_hadamard_layer(state)
    state = apply_controlled_powers(state, ev)
    state = apply_inverse_qft(state)
    exact = marginal_timefreq(state)

    sampled = sample_histogram(exact, config.shots, config.seed) if config.shots > 0 else None
    return DosQpeResult(exact, sampled, n_eff, provenance(config))


def oracle_distribution(config: DosQpeConfig) -> PhaseHistogram:
    """Closed-form prediction of ``run(config).exact_distribution`` for exact evolution."""
    h = evolved_hamiltonian(config)
    rho = probe_density(config.probe, h, config.layout.n, config.layout.purified)
    spec, weights = spectral_weights(h, rho)
    # the response only depends on phases mod 1
    return analytic_response(spec, weights, config.layout.m)


def write_bundle(result: DosQpeResult, directory: Union[str, Path],
                 config_text: Optional[str] = None) -> Path:
    """Write ``config``, ``exact.csv``, optional ``counts.csv`` and ``meta``."""
    import yaml

    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    if config_text is None:
        config_text = yaml.safe_dump(result.provenance.get("config", {}), sort_keys=True)
    (out / "config").write_text(config_text)
    (out / "exact.csv").write_text(result.exact_distribution.to_csv())
    counts = out / "counts.csv"
    if result.sampled is not None:
        counts.write_text(result.sampled.to_csv())
    elif counts.exists():
        counts.unlink()
    meta = dict(result.provenance)
    meta["n_eff"] = result.n_eff
    meta["m"] = result.exact_distribution.m
    (out / "meta").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return out
