"""Command-line front end: ``dosqpe {spectrum,run,reconstruct,compare,plot}``.

Every subcommand reads one YAML experiment file (``--config``) and works in
one output directory (``--out``, default ``output`` from the config).  ``run``
writes the bundle (``config``, ``exact.csv``, ``counts.csv``, ``meta``);
``reconstruct``, ``compare`` and ``plot`` add ``estimate.csv``,
``estimate.json``, ``report.json`` and ``histogram.svg`` next to it.

Exit codes: 0 success, 2 input error, 3 resource guard, 4 solver
non-convergence.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import yaml

from . import __version__
from .errors import DosQpeError, NumericalError, ResourceLimitError
from .hamlib import (
    Hamiltonian,
    RescaleParams,
    build_fermi_hubbard,
    exact_spectrum,
    load_matrix,
    load_pauli_sum,
    pad_to_qubits,
    rescale,
    wrap_phase,
)
from .protocol import (
    DosQpeConfig,
    probe_density,
    probe_from_dict,
    run,
    spectral_weights,
    write_bundle,
)
from .reconstruct import (
    ReconstructionConfig,
    SpectralEstimate,
    build_dictionary,
    reconstruct,
    rounded_histogram,
    wasserstein1,
)
from .simengine import EvolutionSpec, PhaseHistogram, QubitLayout, TWO_PI

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_RESOURCE = 3
EXIT_NONCONVERGED = 4


class InputError(Exception):
    """Bad configuration, missing file or malformed bundle."""


class NotConverged(Exception):
    pass


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


# --------------------------------------------------------------------------
# experiment configuration


@dataclass
class Experiment:
    path: Path
    text: str
    raw: dict
    hamiltonian: Hamiltonian
    rescale: Optional[RescaleParams]
    run: DosQpeConfig
    output: Path

    def recon_config(self, total: int) -> ReconstructionConfig:
        block = dict(self.raw.get("reconstruct") or {})
        if block.get("total", "auto") == "auto":
            block["total"] = total
        try:
            return ReconstructionConfig(**block)
        except TypeError as exc:
            raise InputError(f"{self.path}: reconstruct block: {exc}") from None


def _section(raw: dict, name: str) -> dict:
    value = raw.get(name) or {}
    if not isinstance(value, dict):
        raise InputError(f"section {name!r} must be a mapping")
    return value


def _load_hamiltonian(block: dict, base: Path) -> Hamiltonian:
    sources = [k for k in ("fermi_hubbard", "matrix", "pauli") if k in block]
    if len(sources) != 1:
        raise InputError("hamiltonian needs exactly one of fermi_hubbard, matrix, pauli")
    kind = sources[0]
    if kind == "fermi_hubbard":
        fh = block[kind] or {}
        return build_fermi_hubbard(int(fh.get("sites", 2)), float(fh.get("t", 1.0)),
                                   float(fh.get("U", 4.0)), bool(fh.get("periodic", False)))
    path = base / str(block[kind])
    if not path.is_file():
        raise InputError(f"hamiltonian file not found: {path}")
    text = path.read_text()
    try:
        if kind == "pauli":
            return load_pauli_sum(text)
        h = load_matrix(text)
    except DosQpeError as exc:
        raise InputError(f"{path}: {exc}") from None
    if block.get("pad", True):
        h = pad_to_qubits(h)
    return h


def _rescale_params(block: dict, h: Hamiltonian, m: int) -> Optional[RescaleParams]:
    if block.get("enabled", True) is False:
        return None
    lo, hi = block.get("lambda_min", "auto"), block.get("lambda_max", "auto")
    if lo == "auto" or hi == "auto":
        spec = exact_spectrum(h)
        lo = spec.values[0] if lo == "auto" else lo
        hi = spec.values[-1] if hi == "auto" else hi
    margin = block.get("top_margin", "auto")
    margin = 1.0 / 2 ** (m + 2) if margin == "auto" else float(margin)
    return RescaleParams(float(lo), float(hi), float(block.get("shift_delta", 0.0)), margin)


def load_experiment(path: str | Path, shots: Optional[int] = None,
                    seed: Optional[int] = None) -> Experiment:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"config file not found: {path}")
    text = path.read_text()
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise InputError(f"{path}: {exc}") from None
    if not isinstance(raw, dict):
        raise InputError(f"{path}: top level must be a mapping")
    base = path.parent
    h = _load_hamiltonian(_section(raw, "hamiltonian"), base)
    rb = _section(raw, "run")
    m = int(rb.get("m", 4))
    layout = QubitLayout(m, h.qubit_count, bool(rb.get("purified", True)))
    probe = probe_from_dict(rb.get("probe") or {"kind": "maximally_mixed"})
    ev = rb.get("evolution") or {}
    spec = EvolutionSpec(h, ev.get("mode", "exact"), int(ev.get("order", 2)),
                         int(ev.get("steps", 1)), float(ev.get("time_scale", TWO_PI)))
    params = _rescale_params(_section(raw, "rescale"), h, m)
    config = DosQpeConfig(layout, probe, spec, params,
                          int(rb.get("shots", 0) if shots is None else shots),
                          int(rb.get("seed", 0) if seed is None else seed))
    output = base / str(raw.get("output", "output"))
    return Experiment(path, text, raw, h, params, config, output)


def reference_measure(exp: Experiment, n_eff: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact phases with the probe's weights scaled to ``n_eff`` (degeneracies
    for the maximally mixed probe)."""
    h = exp.hamiltonian if exp.rescale is None else rescale(exp.hamiltonian, exp.rescale)
    rho = probe_density(exp.run.probe, h, exp.run.layout.n, exp.run.layout.purified)
    spec, weights = spectral_weights(h, rho)
    keep = weights > 1e-12
    return wrap_phase(spec.values[keep]), n_eff * weights[keep]


# --------------------------------------------------------------------------
# bundle I/O


def _bundle_dir(args, exp: Experiment) -> Path:
    if getattr(args, "bundle", None):
        return Path(args.bundle)
    return Path(args.out) if args.out else exp.output


def _read_meta(bundle: Path) -> dict:
    meta = bundle / "meta"
    if not meta.is_file():
        raise InputError(f"no bundle at {bundle} (missing meta); run `dosqpe run` first")
    try:
        return json.loads(meta.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{meta}: {exc}") from None


def read_histogram(bundle: Path, source: str) -> PhaseHistogram:
    name = "exact.csv" if source == "exact" else "counts.csv"
    path = bundle / name
    if not path.is_file():
        raise InputError(f"{path} does not exist" +
                         (" (run with --shots > 0)" if source == "counts" else ""))
    try:
        return PhaseHistogram.from_csv(path.read_text(), "probabilities")
    except (DosQpeError, ValueError, KeyError) as exc:
        raise InputError(f"{path}: {exc}") from None


def read_estimate(path: Path) -> SpectralEstimate:
    if not path.is_file():
        raise InputError(f"{path} does not exist; run `dosqpe reconstruct` first")
    rows = path.read_text().splitlines()
    if not rows or rows[0].strip() != "theta_hat,d_hat":
        raise InputError(f"{path}: expected header theta_hat,d_hat")
    phases, degs = [], []
    for k, row in enumerate(rows[1:], start=2):
        try:
            a, b = row.split(",")
            phases.append(float(a))
            degs.append(int(b))
        except ValueError:
            raise InputError(f"{path}: line {k}: malformed row {row!r}") from None
    return SpectralEstimate(np.array(phases), np.array(degs, dtype=np.int64))


def _dump_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# subcommands


def cmd_spectrum(args) -> int:
    exp = load_experiment(args.config)
    out = Path(args.out) if args.out else exp.output
    out.mkdir(parents=True, exist_ok=True)
    spec = exact_spectrum(exp.hamiltonian)
    lines = ["phase,eigenvalue,degeneracy"]
    for value, d in spec.entries:
        phase = exp.rescale.phase_of(value) if exp.rescale is not None else float("nan")
        lines.append(f"{float(phase)!r},{float(value)!r},{d}")
    (out / "spectrum.csv").write_text("\n".join(lines) + "\n")
    print(f"{len(spec)} distinct eigenvalues, {spec.total} states -> {out / 'spectrum.csv'}")
    return EXIT_OK


def cmd_run(args) -> int:
    exp = load_experiment(args.config, args.shots, args.seed)
    out = Path(args.out) if args.out else exp.output
    result = run(exp.run)
    write_bundle(result, out, exp.text)
    sampled = "" if result.sampled is None else f", {exp.run.shots} shots"
    print(f"{exp.run.layout.total} qubits, {2 ** exp.run.layout.m} bins{sampled} -> {out}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    exp = load_experiment(args.config)
    bundle = _bundle_dir(args, exp)
    meta = _read_meta(bundle)
    hist = read_histogram(bundle, args.source)
    n_eff = int(meta.get("n_eff", 2 ** exp.run.layout.n))
    cfg = exp.recon_config(n_eff)
    dictionary = build_dictionary(hist.m, cfg.grid_factor)
    est = reconstruct(hist, cfg, dictionary)
    out = Path(args.out) if args.out else bundle
    out.mkdir(parents=True, exist_ok=True)
    (out / "estimate.csv").write_text(est.to_csv())

    diag = {k: v for k, v in est.diagnostics.items() if k != "clusters"}
    diag.update(source=args.source, total=cfg.total, clusters=len(est), sum_d_hat=est.total)
    if not est.empty:
        ref = reference_measure(exp, n_eff)
        diag["w1_estimate_exact"] = wasserstein1(est, ref)
    _dump_json(out / "estimate.json", _jsonable(diag))

    if est.empty:
        _warn("no grid weight exceeds tau; the estimate is empty")
    print(f"{len(est)} clusters, sum d_hat = {est.total} -> {out / 'estimate.csv'}")
    if not est.diagnostics.get("converged", True):
        raise NotConverged(f"solver stopped after {est.diagnostics['iterations']} iterations "
                           f"(KKT residual {est.diagnostics['kkt_residual']:.3g})")
    return EXIT_OK


def _improvement(base: float, new: float) -> Optional[float]:
    if base == 0.0:
        return 0.0 if new == 0.0 else None
    return 100.0 * (1.0 - new / base)


def compare_report(hist: PhaseHistogram, est: SpectralEstimate,
                   ref: tuple[np.ndarray, np.ndarray], total: int,
                   circular: bool = False) -> dict[str, Any]:
    if abs(est.total - total) > 0 and not est.empty:
        _warn(f"estimate carries {est.total} states, expected {total}; comparing normalized measures")
    rounded = rounded_histogram(hist, total)
    w_sampled = wasserstein1(hist, ref, circular)
    w_rounded = wasserstein1(rounded, ref, circular)
    w_est = wasserstein1(est, ref, circular) if not est.empty else None
    return {
        "w1_sampled": w_sampled,
        "w1_rounded": w_rounded,
        "w1_estimate": w_est,
        "improvement_over_sampled_pct": None if w_est is None else _improvement(w_sampled, w_est),
        "improvement_over_rounded_pct": None if w_est is None else _improvement(w_rounded, w_est),
        "total": total,
        "sum_d_hat": est.total,
        "metric": "circular" if circular else "linear",
    }


def _fmt(x: Optional[float], pct: bool = False) -> str:
    if x is None:
        return "n/a"
    return f"{x:.1f}%" if pct else f"{x:.6f}"


def cmd_compare(args) -> int:
    exp = load_experiment(args.config)
    bundle = _bundle_dir(args, exp)
    meta = _read_meta(bundle)
    hist = read_histogram(bundle, args.source)
    est = read_estimate(Path(args.estimate) if args.estimate else bundle / "estimate.csv")
    n_eff = int(meta.get("n_eff", 2 ** exp.run.layout.n))
    report = compare_report(hist, est, reference_measure(exp, n_eff), n_eff, args.circular)
    report["source"] = args.source
    out = Path(args.out) if args.out else bundle
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(out / "report.json", report)
    label = "sampled" if args.source == "counts" else "raw"
    print(f"W1({label} histogram, exact)  = {_fmt(report['w1_sampled'])}")
    print(f"W1(rounded histogram, exact) = {_fmt(report['w1_rounded'])}")
    print(f"W1(estimate, exact)          = {_fmt(report['w1_estimate'])}")
    print(f"improvement over {label} histogram: {_fmt(report['improvement_over_sampled_pct'], True)}")
    print(f"improvement over rounded histogram: {_fmt(report['improvement_over_rounded_pct'], True)}")
    return EXIT_OK


def render_svg(hist: PhaseHistogram, exact: Optional[tuple[np.ndarray, np.ndarray]] = None,
               estimate: Optional[SpectralEstimate] = None, total: Optional[int] = None,
               title: str = "") -> str:
    """Bar chart of ``total * frequency`` per bin with exact-spectrum ticks
    (grey) and estimate markers (red).  Output depends only on the inputs."""
    width, height, pad = 720, 360, 40
    plot_w, plot_h = width - 2 * pad, height - 2 * pad
    total = total or 1
    heights = total * hist.frequencies()
    ymax = float(heights.max())
    if exact is not None:
        ymax = max(ymax, float(np.max(exact[1])))
    if estimate is not None and not estimate.empty:
        ymax = max(ymax, float(np.max(estimate.degeneracies)))
    ymax = ymax * 1.05 if ymax > 0 else 1.0

    def sx(phase: float) -> float:
        return pad + plot_w * phase

    def sy(value: float) -> float:
        return pad + plot_h * (1.0 - value / ymax)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        parts.append(f'<text x="{width / 2:.2f}" y="20" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="14">{title}</text>')
    bar = plot_w / hist.bins
    for y, v in enumerate(heights):
        top = sy(v)
        parts.append(f'<rect class="bar" x="{pad + y * bar:.2f}" y="{top:.2f}" '
                     f'width="{bar * 0.9:.2f}" height="{pad + plot_h - top:.2f}" fill="#4c72b0"/>')
    if exact is not None:
        for ph, w in zip(*exact):
            x = sx(ph + 0.5 / hist.bins)
            parts.append(f'<line class="exact" x1="{x:.2f}" y1="{sy(0):.2f}" x2="{x:.2f}" '
                         f'y2="{sy(w):.2f}" stroke="#555555" stroke-width="2"/>')
    if estimate is not None:
        for ph, d in estimate.entries:
            parts.append(f'<circle class="estimate" cx="{sx(ph + 0.5 / hist.bins):.2f}" '
                         f'cy="{sy(d):.2f}" r="4" fill="#c44e52"/>')
    parts.append(f'<line x1="{pad}" y1="{pad + plot_h}" x2="{pad + plot_w}" '
                 f'y2="{pad + plot_h}" stroke="black"/>')
    parts.append(f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{pad + plot_h}" stroke="black"/>')
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        parts.append(f'<text x="{sx(tick):.2f}" y="{height - pad / 2:.2f}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="11">{tick:g}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_plot(args) -> int:
    exp = load_experiment(args.config)
    bundle = _bundle_dir(args, exp)
    meta = _read_meta(bundle)
    hist = read_histogram(bundle, args.source)
    n_eff = int(meta.get("n_eff", 2 ** exp.run.layout.n))
    est_path = Path(args.estimate) if args.estimate else bundle / "estimate.csv"
    est = read_estimate(est_path) if est_path.is_file() else None
    ref = reference_measure(exp, n_eff) if args.exact else None
    svg = render_svg(hist, ref, est, n_eff, title=exp.path.stem)
    out = Path(args.out) if args.out else bundle
    out.mkdir(parents=True, exist_ok=True)
    (out / "histogram.svg").write_text(svg)
    print(f"-> {out / 'histogram.svg'}")
    return EXIT_OK


def _jsonable(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, (np.floating, np.integer, np.bool_)):
            v = v.item()
        if isinstance(v, float) and not math.isfinite(v):
            v = None
        out[k] = v
    return out


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dosqpe", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, source=False):
        p.add_argument("--config", required=True, help="experiment YAML file")
        p.add_argument("--out", help="output directory (default: 'output' from the config)")
        if source:
            p.add_argument("--bundle", help="read the run bundle from here instead of --out")
            p.add_argument("--from", dest="source", choices=("exact", "counts"), default="exact",
                           help="histogram to use (default: exact)")
        return p

    common(sub.add_parser("spectrum", help="exact spectrum to spectrum.csv"))
    p = common(sub.add_parser("run", help="simulate the circuit and write a bundle"))
    p.add_argument("--shots", type=int, help="override run.shots")
    p.add_argument("--seed", type=int, help="override run.seed")
    common(sub.add_parser("reconstruct", help="sparse reconstruction to estimate.csv"), True)
    p = common(sub.add_parser("compare", help="W1 scores against the exact spectrum"), True)
    p.add_argument("--estimate", help="estimate CSV (default: <bundle>/estimate.csv)")
    p.add_argument("--circular", action="store_true",
                   help="measure W1 along the unit circle instead of on [0, 1)")
    p = common(sub.add_parser("plot", help="SVG histogram with overlays"), True)
    p.add_argument("--estimate", help="estimate CSV (default: <bundle>/estimate.csv if present)")
    p.add_argument("--no-exact", dest="exact", action="store_false",
                   help="omit the exact-spectrum overlay")
    return parser


COMMANDS = {
    "spectrum": cmd_spectrum,
    "run": cmd_run,
    "reconstruct": cmd_reconstruct,
    "compare": cmd_compare,
    "plot": cmd_plot,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ResourceLimitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (NotConverged, NumericalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except (InputError, DosQpeError, OSError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
