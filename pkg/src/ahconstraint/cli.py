"""Batch front end: run the selected probes from a config and write deterministic reports.

Exit status: 0 when every gate passes, 1 when a gate fails or a probe
raises, 2 on configuration or I/O errors (no reports are written for a
config that does not parse).
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import sys
import warnings
from dataclasses import asdict, dataclass, field, is_dataclass, replace
from pathlib import Path
from typing import Any, Callable

import click
import numpy as np

from . import __version__
from .config import PROBES, RunConfig, parse_config, serialize, validate
from .errors import AHError, ConfigError

OUT_ENV = "AHCONSTRAINT_OUT"
REPORT_SCHEMA = "ahconstraint-report"
REPORT_VERSION = 1
COERCIVITY_ESTIMATES = ("POINCARE_T", "KORN_S", "COERCIVE_U", "ADJ_35CG")
KORN_EXCLUDED = 1.0
LIPSCHITZ_XI = 12
EXPLORATORY_W = 1.0


# ---------------------------------------------------------------------------
# results


@dataclass
class Gate:
    name: str
    value: float
    tolerance: float
    comparison: str  # "<=", ">=", "<" or ">"

    @property
    def passed(self) -> bool:
        v, t = self.value, self.tolerance
        if not math.isfinite(v):
            return False
        return {"<=": v <= t, ">=": v >= t, "<": v < t, ">": v > t}[self.comparison]


@dataclass
class ProbeResult:
    probe: str
    gates: list[Gate] = field(default_factory=list)
    records: list[Any] = field(default_factory=list)
    scan_rows: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    error: str | None = None

    @property
    def passed(self) -> bool:
        return self.error is None and all(g.passed for g in self.gates)


# ---------------------------------------------------------------------------
# deterministic serialization


def _plain(obj):
    if hasattr(obj, "to_dict"):
        return _plain(obj.to_dict())
    if is_dataclass(obj) and not isinstance(obj, type):
        return _plain(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return format(x, ".17g")


def format_json(obj, indent: int = 0) -> str:
    """JSON with sorted keys and every float printed with 17 significant digits."""
    obj = _plain(obj)
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {format_json(obj[k], indent + 1)}" for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + f"\n{end}}}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        return "[\n" + ",\n".join(pad + format_json(v, indent + 1) for v in obj) + f"\n{end}]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _fmt_float(obj)
    return json.dumps(obj)


def _csv_text(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format(v, ".17g") if isinstance(v, float) else v for v in (row.get(c, "") for c in columns)])
    return buf.getvalue()


def config_dict(cfg: RunConfig) -> dict:
    out: dict[str, dict] = {}
    section = None
    for line in serialize(cfg).splitlines():
        if line.startswith("["):
            section = line.strip("[]")
            out[section] = {}
        elif "=" in line:
            k, _, v = line.partition("=")
            out[section][k.strip()] = v.strip()
    return out


def emit_report(results: list[ProbeResult], out_dir: str | Path, cfg: RunConfig) -> list[Path]:
    """One JSON report per probe, summary.json and summary.csv, scan.csv when a probe produced scan rows."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    summary_rows = []
    scan_rows = []
    for res in results:
        doc = {"schema": REPORT_SCHEMA, "version": REPORT_VERSION, "package_version": __version__,
               "probe": res.probe, "passed": res.passed, "error": res.error, "warnings": res.warnings,
               "gates": [{"name": g.name, "value": g.value, "tolerance": g.tolerance, "comparison": g.comparison,
                          "passed": g.passed} for g in res.gates],
               "records": res.records, "config": config_dict(cfg), "label": "consistent-with"}
        path = out / f"{res.probe}.json"
        path.write_text(format_json(doc) + "\n")
        written.append(path)
        for g in res.gates:
            summary_rows.append({"probe": res.probe, "gate": g.name, "value": float(g.value),
                                 "comparison": g.comparison, "tolerance": float(g.tolerance), "passed": g.passed})
        if res.error is not None:
            summary_rows.append({"probe": res.probe, "gate": "error", "value": "", "comparison": "",
                                 "tolerance": "", "passed": False})
        scan_rows += res.scan_rows
    summary = {"schema": REPORT_SCHEMA, "version": REPORT_VERSION, "rows": summary_rows,
               "passed": all(r.passed for r in results), "probes": [r.probe for r in results]}
    (out / "summary.json").write_text(format_json(summary) + "\n")
    cols = ["probe", "gate", "value", "comparison", "tolerance", "passed"]
    (out / "summary.csv").write_text(_csv_text(summary_rows, cols))
    written += [out / "summary.json", out / "summary.csv"]
    if scan_rows:
        scols = ["delta", "w", "R", "resolution", *COERCIVITY_ESTIMATES]
        (out / "scan.csv").write_text(_csv_text(scan_rows, scols))
        written.append(out / "scan.csv")
    return written


# ---------------------------------------------------------------------------
# probes


def _identity_config(cfg: RunConfig):
    from .verify import IdentityConfig

    c = cfg.chart
    return IdentityConfig(c.r_inner, c.r_outer, c.n_ang, c.q_radial)


def probe_evaluate(cfg: RunConfig) -> ProbeResult:
    from .constraint import background_point, phi, reference_data
    from .manifold import build_ball_chart

    c = cfg.chart
    res = ProbeResult("evaluate")
    chart = build_ball_chart(c.r_inner, c.r_outer, max(cfg.resolutions), c.n_ang, c.q_radial)
    ref = reference_data(cfg.tau)
    ps = background_point(cfg.tau, cfg.lam).sample(chart.points, 2)
    phi0, phii = phi(ps, ref)
    sup0 = float(np.max(np.abs(phi0)))
    supi = float(np.max(np.sqrt(np.einsum("pi,pi->p", phii, phii)) * chart.rho))
    res.records.append({"tau": cfg.tau, "resolution": max(cfg.resolutions), "sup_hamiltonian": sup0,
                        "sup_momentum": supi, "nodes": chart.size})
    res.gates.append(Gate("sup|Phi|", max(sup0, supi), cfg.tolerances.phi, "<="))
    return res


def probe_identities(cfg: RunConfig) -> ProbeResult:
    from .ibp import BOUNDARY_ISOLATION, IDENTITIES
    from .verify import admissible_inputs, check_identity

    res = ProbeResult("identities")
    icfg = _identity_config(cfg)
    ladder = list(cfg.resolutions)
    for d in cfg.deltas:
        w = -d
        for idn in IDENTITIES:
            for i in range(cfg.input_seeds):
                seed = cfg.seed + i
                r = check_identity(idn, admissible_inputs(idn, seed, icfg), w, fd=True, resolutions=ladder,
                                   config=icfg)
                res.records.append({"identity": idn, "seed": seed, "w": w, "rate": r.rate,
                                    "imbalance_rate": r.metadata["imbalance_rate"], "ladder": r.metadata["ladder"]})
                res.gates.append(Gate(f"{idn} seed {seed} w {w:g} rate", r.rate, cfg.tolerances.rate, ">="))
            if idn in BOUNDARY_ISOLATION:
                inputs = admissible_inputs(idn, cfg.seed, icfg, touch_inner=False)
                r = check_identity(idn, inputs, w, resolution=ladder[0], config=icfg)
                bucket = max(abs(b) for b in r.metadata["boundary"])
                res.records.append({"identity": idn, "seed": cfg.seed, "w": w, "boundary_isolated": bucket})
                res.gates.append(Gate(f"{idn} w {w:g} boundary bucket", bucket, cfg.tolerances.boundary, "<="))
    return res


def probe_inequalities(cfg: RunConfig) -> ProbeResult:
    from .verify import estimate_family, normal_direction_family, scan_constants

    res = ProbeResult("inequalities")
    tol = cfg.tolerances.stability
    for d in cfg.deltas:
        w = -d
        for R in cfg.radii:
            row = {"delta": d, "w": w, "R": R, "resolution": max(cfg.resolutions)}
            for est in COERCIVITY_ESTIMATES:
                fam = estimate_family(est, cfg.seed, cfg.family_size, R)
                values = []
                with warnings.catch_warnings(record=True) as caught:
                    warnings.simplefilter("always")
                    for n in cfg.resolutions:
                        e = scan_constants(est, fam, [w], R, resolution=n, strict_window=not cfg.warn_and_proceed)[0]
                        values.append(e.value)
                res.warnings += sorted({str(c.message) for c in caught})
                row[est] = values[-1]
                spread = (max(values) - min(values)) / min(values) if min(values) > 0 else float("inf")
                res.records.append({"estimate": est, "delta": d, "w": w, "R": R, "values": values,
                                    "resolutions": list(cfg.resolutions), "spread": spread,
                                    "argmax": e.metadata["argmax"], "family": fam.name,
                                    "in_window": e.metadata["in_window"]})
                res.gates.append(Gate(f"{est} w {w:g} R {R:g} refinement spread", spread, tol, "<="))
            res.scan_rows.append(row)
        if w != KORN_EXCLUDED:
            fam = normal_direction_family(cfg.seed, cfg.family_size)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                at_excl, at_w = scan_constants("KORN_S", fam, [KORN_EXCLUDED, w], cfg.radii[0],
                                               resolution=max(cfg.resolutions))
            margin = at_excl.value - at_w.value
            res.records.append({"estimate": "KORN_S", "witness": True, "w": w, "excluded": KORN_EXCLUDED,
                                "value_excluded": at_excl.value, "value_w": at_w.value, "margin": margin})
            res.gates.append(Gate(f"KORN_S witness margin (w=1 minus w={w:g})", margin, 0.0, ">"))
    # exploratory: the U-coercivity ratio at the endpoint weight w = (n - 1) / 2, reported without a gate
    fam = estimate_family("COERCIVE_U", cfg.seed, cfg.family_size, cfg.radii[0])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        e = scan_constants("COERCIVE_U", fam, [EXPLORATORY_W], cfg.radii[0], resolution=min(cfg.resolutions))[0]
    res.records.append({"estimate": "COERCIVE_U", "exploratory": True, "w": EXPLORATORY_W, "value": e.value,
                        "resolution": min(cfg.resolutions), "gated": False})
    return res


def probe_kernel(cfg: RunConfig) -> ProbeResult:
    from .constraint import background_point, reference_data
    from .verify import KernelConfig, kernel_probe

    res = ProbeResult("kernel")
    ref = reference_data(cfg.tau)
    kcfg = KernelConfig(variation_tol=cfg.tolerances.kernel_variation)
    for d in cfg.deltas:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            rep = kernel_probe(background_point(cfg.tau, cfg.lam), ref, d, cfg.kernel_ladder, config=kcfg,
                               seed=cfg.seed, strict_window=not cfg.warn_and_proceed)
        res.warnings += [str(c.message) for c in caught]
        res.records.append(rep)
        o = rep.outcomes
        res.gates.append(Gate(f"sigma_min delta {d:g}", min(o["sigma_min"]), 0.0, ">"))
        res.gates.append(Gate(f"sigma_min ladder variation delta {d:g}", o["variation"], kcfg.variation_tol, "<="))
        res.gates.append(Gate(f"planted cosh drop delta {d:g}", max(o["planted_drop"]), kcfg.planted_tol, "<="))
    return res


def probe_lipschitz(cfg: RunConfig) -> ProbeResult:
    from .verify import LipschitzConfig, estimate_family, lipschitz_sequence, relative_perturbation

    res = ProbeResult("lipschitz")
    fam = estimate_family("PS_EST", cfg.seed, min(cfg.family_size, LIPSCHITZ_XI))
    h, p = relative_perturbation(cfg.seed)
    lcfg = LipschitzConfig(stability_tol=cfg.tolerances.lipschitz)
    for d in cfg.deltas:
        for tau, pp, label in ((cfg.tau, p, "general"), (0.0, None, "time-symmetric")):
            rep = lipschitz_sequence(h, pp, fam, tau, min(d, 0.0), config=lcfg)
            res.records.append(rep)
            res.gates.append(Gate(f"{label} ratio spread delta {min(d, 0.0):g}", rep.outcomes["spread"],
                                  lcfg.stability_tol, "<="))
    return res


def probe_convergence(cfg: RunConfig) -> ProbeResult:
    from .constraint import LapseShift, background_point, perturbed_point, reference_data
    from .fields import ShellSupport, random_shell_mode
    from .verify import adjoint_pairing_check, convergence_study, curvature_residual

    res = ProbeResult("convergence")
    ladder = list(cfg.resolutions)
    icfg = _identity_config(cfg)
    curv = convergence_study(lambda r: curvature_residual(r, True, icfg), ladder)
    curv.metadata["op"] = "CURVATURE"
    res.records.append(curv)
    res.gates.append(Gate("curvature FD rate", curv.rate if curv.rate is not None else float("nan"),
                          cfg.tolerances.rate, ">="))
    lem6 = convergence_study("LEM6", ladder, seed=cfg.seed, delta=-cfg.deltas[0], config=icfg)
    res.records.append(lem6)
    res.gates.append(Gate("LEM6 FD rate", lem6.rate if lem6.rate is not None else float("nan"),
                          cfg.tolerances.rate, ">="))
    rng = np.random.default_rng(cfg.seed)
    sup = ShellSupport(0.3, 0.85)
    mode = lambda rank: random_shell_mode(rng, sup, rank, power=4, full=True)
    variation = (mode((0, 2)), mode((2, 0)))
    xi = LapseShift(mode((0, 0)), mode((0, 1)))
    bump = mode((0, 2)) * 0.05
    ref = reference_data(cfg.tau)
    an = adjoint_pairing_check(background_point(cfg.tau, cfg.lam), ref, variation, xi, resolution=max(ladder))
    fd = adjoint_pairing_check(perturbed_point(cfg.tau, bump, lam=cfg.lam), ref, variation, xi, fd=True,
                               resolutions=ladder)
    res.records += [an, fd]
    res.gates.append(Gate("pairing analytic relative", an.l2, cfg.tolerances.pairing, "<="))
    res.gates.append(Gate("pairing FD relative (perturbed)", fd.l2, cfg.tolerances.pairing_fd, "<="))
    res.gates.append(Gate("pairing FD rate", fd.rate if fd.rate is not None else float("nan"),
                          cfg.tolerances.rate, ">="))
    return res


PROBE_FUNCS: dict[str, Callable[[RunConfig], ProbeResult]] = {
    "evaluate": probe_evaluate, "identities": probe_identities, "inequalities": probe_inequalities,
    "kernel": probe_kernel, "lipschitz": probe_lipschitz, "convergence": probe_convergence,
}


def run(cfg: RunConfig, out_dir: str | Path | None = None) -> tuple[int, list[ProbeResult], list[Path]]:
    """Run the configured probes; a probe that raises becomes a failure record."""
    results = []
    for name in cfg.probes:
        try:
            results.append(PROBE_FUNCS[name](cfg))
        except AHError as e:
            results.append(ProbeResult(name, error=f"{type(e).__name__}: {e}"))
    paths = emit_report(results, out_dir if out_dir is not None else cfg.out, cfg)
    return (0 if all(r.passed for r in results) else 1), results, paths


# ---------------------------------------------------------------------------
# command line


def _load(config_path: str | None, seed: int | None, strict: bool, out: str | None,
          probes: tuple[str, ...] | None) -> tuple[RunConfig, str]:
    text = Path(config_path).read_text() if config_path else ""
    cfg = parse_config(text, strict=True if strict else None)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if probes is not None:
        cfg = validate(replace(cfg, probes=probes))
    out_dir = out or os.environ.get(OUT_ENV) or cfg.out
    return cfg, out_dir


def _execute(ctx: click.Context, probes: tuple[str, ...] | None) -> None:
    opts = ctx.obj
    try:
        cfg, out_dir = _load(opts["config"], opts["seed"], opts["strict"], opts["out"], probes)
    except (ConfigError, OSError) as e:
        click.echo(f"configuration error: {e}", err=True)
        ctx.exit(2)
    try:
        code, results, _ = run(cfg, out_dir)
    except OSError as e:
        click.echo(f"I/O error: {e}", err=True)
        ctx.exit(2)
    for r in results:
        click.echo(f"{r.probe}: {'pass' if r.passed else 'FAIL'}" + (f" ({r.error})" if r.error else ""))
    ctx.exit(code)


def _common(fn):
    for opt in (click.option("--config", "config", type=click.Path(dir_okay=False), default=None,
                             help="Sectioned config file; defaults apply when omitted."),
                click.option("--out", "out", default=None, help=f"Report directory (else ${OUT_ENV}, else config)."),
                click.option("--seed", "seed", type=click.IntRange(0, 2**64 - 1), default=None,
                             help="Override the config seed."),
                click.option("--strict", "strict", is_flag=True, help="Window violations are errors.")):
        fn = opt(fn)
    return fn


def _subcommand(name: str, probes: tuple[str, ...] | None, help_text: str):
    @click.command(name, help=help_text)
    @_common
    @click.pass_context
    def cmd(ctx, config, out, seed, strict):
        ctx.obj = {"config": config, "out": out, "seed": seed, "strict": strict}
        _execute(ctx, probes)

    return cmd


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__)
def main():
    """Numerical probes for the vacuum constraint operator on hyperbolic space."""


for _name, _probes, _help in (
        ("evaluate", ("evaluate",), "Constraint operator at the model data."),
        ("verify-identities", ("identities",), "Integration-by-parts identities with FD convergence rates."),
        ("probe-inequalities", ("inequalities",), "Empirical coercivity constants and the Korn witness."),
        ("kernel-probe", ("kernel",), "Smallest singular value of P* along a resolution ladder."),
        ("lipschitz", ("lipschitz",), "Lipschitz ratios of P* along a shrinking perturbation."),
        ("convergence", ("convergence",), "Curvature, identity and adjoint-pairing convergence."),
        ("all", PROBES, "Every probe."),
        ("run", None, "The probes selected in the config.")):
    main.add_command(_subcommand(_name, _probes, _help))


if __name__ == "__main__":
    sys.exit(main())
