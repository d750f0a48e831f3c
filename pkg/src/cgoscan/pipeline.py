"""Pipeline stages behind the CLI: phantom, simulate, reconstruct, verify,
report.  Every artifact carries the configuration hash in its JSON sidecar;
runs with one seed are byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import formats
from .cgo import CgoProbe, make_probe, probe_defects
from .config import RunConfig
from .errors import MissingArtifact, ValidationError
from .forward import DnMap, assemble
from .medium import build_perturbed_index, validate_placement
from .reconstruct import (
    DEFAULT_KAPPA_MODE,
    DnDifferenceData,
    FourierSamples,
    IndexContrastOracle,
    dn_difference_dataset,
    invert_and_localize,
    kgrid_nodes,
    l_sweep_extrapolate,
    recover_values,
    samples_from_dataset,
    scan_kgrid,
    theorem1_diagnostic,
)

REPORT_REQUIRED = ("phantom.vol", "samples.csv", "result.json", "image.vol")


def _ltag(l_value: float) -> str:
    return f"l{l_value:g}"


@dataclass
class RunContext:
    """Shared state across pipeline stages of one run."""

    cfg: RunConfig
    out_dir: Path
    _systems: dict = field(default_factory=dict)

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.hash = self.cfg.config_hash()

    # expensive objects, built once per run
    def medium(self):
        if "medium" not in self._systems:
            self._systems["medium"] = self.cfg.build_medium()
        return self._systems["medium"]

    def patch(self):
        if "patch" not in self._systems:
            self._systems["patch"] = self.cfg.build_patch()
        return self._systems["patch"]

    def dn_maps(self) -> tuple[DnMap, DnMap]:
        if "dn" not in self._systems:
            med = self.medium()
            omega = self.cfg.physics.omega
            sys_p = assemble(med, omega, perturbed=True)
            sys_b = assemble(med, omega, perturbed=False)
            patch = self.patch()
            self._systems["dn"] = (DnMap(sys_p, patch), DnMap(sys_b, patch))
        return self._systems["dn"]

    def base_meta(self) -> dict:
        return {
            "config_hash": self.hash,
            "grid_n": self.cfg.domain.grid_n,
            "half_side": self.cfg.domain.half_side,
            "gamma_faces": list(self.cfg.boundary.faces),
            "omega": self.cfg.physics.omega,
        }


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------
def stage_phantom(ctx: RunContext) -> dict:
    med = ctx.medium()
    n_alpha = build_perturbed_index(med)
    meta = ctx.base_meta() | {
        "kind": "perturbed_index",
        "c0": ctx.cfg.domain.c0,
        "h": med.domain.h,
        "inclusions": [
            {
                "center": list(ic.center),
                "alpha": ic.alpha,
                "shape": ic.shape,
                "index": ic.index,
            }
            for ic in ctx.cfg.inclusions
        ],
        "background_index": ctx.cfg.background.index,
    }
    formats.write_volume(ctx.out_dir / "phantom.vol", n_alpha, meta)
    return {"phantom": str(ctx.out_dir / "phantom.vol")}


def stage_simulate(ctx: RunContext) -> dict:
    cfg = ctx.cfg
    dn_pert, dn_bg = ctx.dn_maps()
    nodes, ax = kgrid_nodes(cfg.recon.kmax, cfg.recon.kgrid_n)
    written = {}
    for l_value in cfg.physics.l_values:
        tag = _ltag(l_value)
        probes = [make_probe(k, l_value) for k in nodes]
        probes_meta = ctx.base_meta() | {
            "l": l_value,
            "kaxes": ax.tolist(),
            "probes": [p.to_dict() for p in probes],
        }
        ppath = ctx.out_dir / f"probes_{tag}.json"
        ppath.write_text(formats.canonical_json(probes_meta))
        written[f"probes_{tag}"] = str(ppath)

        clean = dn_difference_dataset(dn_pert, dn_bg, probes, noise_sigma=0.0)
        mpath = ctx.out_dir / f"dndiff_{tag}_clean.bin"
        formats.write_matrix(
            mpath,
            clean.gamma_matrix,
            ctx.base_meta()
            | {"l": l_value, "noise_sigma": 0.0, "seed": cfg.data.seed,
               "rows": "probe index (C-order over kx, ky, kz)",
               "cols": "Gamma cell index"},
        )
        written[f"dndiff_{tag}_clean"] = str(mpath)
        if cfg.data.noise_sigma > 0:
            noisy = dn_difference_dataset(
                dn_pert, dn_bg, probes,
                noise_sigma=cfg.data.noise_sigma, seed=cfg.data.seed,
            )
            npath = ctx.out_dir / f"dndiff_{tag}_noisy.bin"
            formats.write_matrix(
                npath,
                noisy.gamma_matrix,
                ctx.base_meta()
                | {"l": l_value, "noise_sigma": cfg.data.noise_sigma,
                   "seed": cfg.data.seed,
                   "rows": "probe index (C-order over kx, ky, kz)",
                   "cols": "Gamma cell index"},
            )
            written[f"dndiff_{tag}_noisy"] = str(npath)
    return written


def _load_dataset(ctx: RunContext, l_value: float) -> Optional[DnDifferenceData]:
    tag = _ltag(l_value)
    suffix = "noisy" if ctx.cfg.data.noise_sigma > 0 else "clean"
    mpath = ctx.out_dir / f"dndiff_{tag}_{suffix}.bin"
    ppath = ctx.out_dir / f"probes_{tag}.json"
    if not (mpath.exists() and ppath.exists()):
        return None
    mat, meta = formats.read_matrix(mpath)
    if meta.get("config_hash") != ctx.hash:
        raise ValidationError(
            f"{mpath.name} was produced by a different configuration "
            f"({meta.get('config_hash')} != {ctx.hash})"
        )
    probes_meta = json.loads(ppath.read_text())
    probes = [CgoProbe.from_dict(d) for d in probes_meta["probes"]]
    return DnDifferenceData(
        probes=probes,
        gamma_matrix=mat,
        noise_sigma=meta.get("noise_sigma", 0.0),
        seed=meta.get("seed", 0),
        meta={"kaxes": probes_meta.get("kaxes")},
    )


def _samples_for_l(ctx: RunContext, l_value: float) -> FourierSamples:
    cfg = ctx.cfg
    data = _load_dataset(ctx, l_value)
    if cfg.physics.trace_path == "B" and data is not None:
        samples = samples_from_dataset(
            data, ctx.patch(), cfg.physics.omega, DEFAULT_KAPPA_MODE
        )
        if data.meta.get("kaxes") is not None:
            samples.meta["kaxes"] = data.meta["kaxes"]
        return samples
    dn_pert, dn_bg = ctx.dn_maps()
    samples, _ = scan_kgrid(
        dn_pert,
        dn_bg,
        cfg.recon.kmax,
        cfg.recon.kgrid_n,
        l_value,
        cfg.physics.trace_path,
        noise_sigma=cfg.data.noise_sigma,
        seed=cfg.data.seed,
        lam=cfg.recon.tikhonov_lambda,
    )
    return samples


def stage_reconstruct(ctx: RunContext) -> dict:
    cfg = ctx.cfg
    med = ctx.medium()
    dom = med.domain
    samples_by_l: dict[float, FourierSamples] = {}
    written = {}
    for l_value in cfg.physics.l_values:
        samples = _samples_for_l(ctx, l_value)
        samples_by_l[l_value] = samples
        tag = _ltag(l_value)
        cpath = ctx.out_dir / ("samples.csv" if l_value == cfg.physics.l_values[0]
                               else f"samples_{tag}.csv")
        formats.write_samples_csv(cpath, samples.kgrid, samples.values, l_value,
                                  cfg.physics.trace_path)
        formats.write_sidecar(
            cpath,
            ctx.base_meta()
            | {"l": l_value, "trace_path": cfg.physics.trace_path,
               "noise_sigma": samples.noise_sigma,
               "kappa_mode": samples.kappa_mode,
               "kaxes": samples.meta.get("kaxes")},
        )
        written[f"samples_{tag}"] = str(cpath)

    primary = samples_by_l[cfg.physics.l_values[0]]
    result = invert_and_localize(
        primary, dom, cfg.domain.c0, cfg.recon.peak_threshold
    )
    values_block = None
    if len(result.centers):
        pairing = [
            int(np.argmin([np.linalg.norm(np.array(ic.center) - c)
                           for ic in cfg.inclusions])) if cfg.inclusions else -1
            for c in result.centers
        ]
        alpha = cfg.inclusions[0].alpha if cfg.inclusions else 0.05
        vf = [
            med.inclusions[j].volume_factor if 0 <= j < len(med.inclusions) else 4.19
            for j in pairing
        ]
        vr = recover_values(
            primary, result.centers, alpha, vf, med.background_at(result.centers)
        )
        values_block = {
            "coefficients": [[c.real, c.imag] for c in vr.coefficients],
            "recovered_index": vr.values.tolist(),
            "ls_residual": vr.residual_rel,
            "condition": vr.condition,
            "paired_inclusion": pairing,
        }

    # Thm-1 style diagnostic on a few axis nodes, logged, never gated
    diag = []
    l0 = cfg.physics.l_values[0]
    for k in ([2.0, 0, 0], [0, 2.0, 0], [0, 0, -2.0]):
        p = make_probe(np.array(k), l0)
        idx = np.argmin(np.linalg.norm(primary.kgrid - np.array(k), axis=1))
        t1 = theorem1_diagnostic(ctx.patch(), p.k, p.eta, cfg.physics.omega)
        dval = complex(primary.values[idx])
        diag.append(
            {
                "k": list(map(float, k)),
                "thm1": [t1.real, t1.imag],
                "d_at_nearest_node": [dval.real, dval.imag],
                "abs_ratio": (abs(dval) / abs(t1)) if abs(t1) > 0 else None,
            }
        )

    result_meta = ctx.base_meta() | {
        "centers": result.centers.tolist(),
        "peak_indices": result.peak_indices.tolist(),
        "peak_magnitude": result.meta["peak"],
        "threshold": cfg.recon.peak_threshold,
        "c0": cfg.domain.c0,
        "l": cfg.physics.l_values[0],
        "trace_path": cfg.physics.trace_path,
        "noise_sigma": cfg.data.noise_sigma,
        "kappa_mode": primary.kappa_mode,
        "values": values_block,
        "theorem1_diagnostic": diag,
        "true_inclusions": [
            {"center": list(ic.center), "alpha": ic.alpha, "shape": ic.shape,
             "index": ic.index}
            for ic in cfg.inclusions
        ],
    }
    if len(cfg.physics.l_values) > 1:
        sweep = l_sweep_extrapolate(samples_by_l)
        result_meta["l_sweep"] = {
            "l_values": sweep["l_values"],
            "max_abs_extrapolation_shift": float(
                np.max(np.abs(sweep["slope"])) / max(np.max(np.abs(sweep["d_inf"])), 1e-300)
            ),
        }
    rpath = ctx.out_dir / "result.json"
    rpath.write_text(formats.canonical_json(result_meta))
    written["result"] = str(rpath)

    mag = np.abs(result.volume)
    formats.write_volume(
        ctx.out_dir / "image.vol", mag, ctx.base_meta() | {"kind": "synthesis_magnitude"}
    )
    written["image"] = str(ctx.out_dir / "image.vol")
    if "pgm" in cfg.output.formats and len(result.centers):
        ijk = result.peak_indices[0]
        formats.write_pgm(ctx.out_dir / "slice_x.pgm", mag[ijk[0], :, :])
        formats.write_pgm(ctx.out_dir / "slice_y.pgm", mag[:, ijk[1], :])
        formats.write_pgm(ctx.out_dir / "slice_z.pgm", mag[:, :, ijk[2]])
        written["slices"] = str(ctx.out_dir / "slice_*.pgm")
    return written


def stage_verify(ctx: RunContext) -> dict:
    """Invariant and oracle scoreboard; writes scoreboard.json."""
    cfg = ctx.cfg
    checks: dict[str, dict] = {}

    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        k = rng.normal(size=3) * 3.0
        L = float(rng.uniform(0.1, 16.0))
        worst = max(worst, max(probe_defects(make_probe(k, L)).values()))
    checks["probe_algebra"] = {"pass": worst <= 1e-12, "max_defect": worst}

    patch = ctx.patch()
    area = patch.area
    exact = 6.0 * (2 * cfg.domain.half_side) ** 2
    checks["boundary_area"] = {
        "pass": abs(area - exact) <= 1e-12 * exact,
        "area": area,
    }

    report = validate_placement(ctx.medium())
    checks["placement"] = {"pass": report.ok, "detail": str(report)}

    med = ctx.medium()
    margin_ok = all(
        float(med.domain.boundary_distance(ic.center)[0]) >= cfg.domain.c0 + ic.support_radius
        for ic in med.inclusions
    )
    if margin_ok:
        n_alpha = build_perturbed_index(med)
        pts = med.domain.voxel_centers()
        layer = med.domain.boundary_distance(pts) < cfg.domain.c0
        same = np.array_equal(
            n_alpha.ravel()[layer], med.background.ravel()[layer]
        )
        checks["boundary_layer"] = {"pass": bool(same)}
    else:
        checks["boundary_layer"] = {"pass": True, "detail": "skipped: margin < c0 + support"}

    dn_pert, dn_bg = ctx.dn_maps()
    null_med_dn = dn_bg
    nodes, _ = kgrid_nodes(min(cfg.recon.kmax, 4.0), 3)
    probes = [make_probe(k, cfg.physics.l_values[0]) for k in nodes]
    null_data = dn_difference_dataset(null_med_dn, null_med_dn, probes)
    null_samples = samples_from_dataset(null_data, patch, cfg.physics.omega)
    null_scale = max(float(np.max(np.abs(null_samples.values))), 0.0)
    checks["fourier_null"] = {"pass": null_scale <= 1e-8, "max_abs": null_scale}

    if med.inclusions:
        oracle = IndexContrastOracle(med)
        data = dn_difference_dataset(dn_pert, dn_bg, probes)
        samples = samples_from_dataset(data, patch, cfg.physics.omega)
        target = oracle.sample(samples.kgrid)
        rel = np.abs(samples.values - target) / np.maximum(np.abs(target), 1e-300)
        checks["oracle_match"] = {
            "pass": bool(np.median(rel) <= 0.5),
            "median_rel": float(np.median(rel)),
        }
        d1 = dn_difference_dataset(dn_pert, dn_bg, probes[:3],
                                   noise_sigma=0.01, seed=cfg.data.seed)
        d2 = dn_difference_dataset(dn_pert, dn_bg, probes[:3],
                                   noise_sigma=0.01, seed=cfg.data.seed)
        checks["noise_determinism"] = {
            "pass": bool(np.array_equal(d1.gamma_matrix, d2.gamma_matrix))
        }

    ok = all(c["pass"] for c in checks.values())
    board = ctx.base_meta() | {"passed": ok, "checks": checks,
                               "kappa_mode": DEFAULT_KAPPA_MODE}
    (ctx.out_dir / "scoreboard.json").write_text(formats.canonical_json(board))
    return board


def stage_report(ctx: RunContext) -> dict:
    """Human-readable summary of a completed run directory."""
    out = ctx.out_dir
    for name in REPORT_REQUIRED:
        if not (out / name).exists():
            raise MissingArtifact(name)
    hashes = set()
    for sidecar in sorted(out.glob("*.json")):
        try:
            meta = json.loads(sidecar.read_text())
        except json.JSONDecodeError:
            continue
        h = meta.get("config_hash")
        if h:
            hashes.add(h)
    if len(hashes) > 1:
        raise ValidationError(
            f"run directory mixes artifacts from different configs: {sorted(hashes)}"
        )

    result = json.loads((out / "result.json").read_text())
    truths = result.get("true_inclusions", [])
    centers = np.array(result.get("centers", []), dtype=float).reshape(-1, 3)
    h = 2.0 * ctx.cfg.domain.half_side / ctx.cfg.domain.grid_n
    values = (result.get("values") or {}).get("recovered_index")

    lines = ["run summary", "==========="]
    csv_rows = ["inclusion,true_center,loc_error,loc_error_voxels,true_index,recovered_index,value_error_pct"]
    for j, tr in enumerate(truths):
        tz = np.array(tr["center"])
        if len(centers):
            d = np.linalg.norm(centers - tz, axis=1)
            i = int(np.argmin(d))
            loc = float(d[i])
            rec_val = None
            if values is not None and i < len(values):
                rec_val = values[i]
            val_err = (
                abs(rec_val - tr["index"]) / abs(tr["index"]) * 100.0
                if rec_val is not None
                else float("nan")
            )
            lines.append(
                f"inclusion {j + 1}: center {tz.tolist()} -> nearest recovered "
                f"{centers[i].tolist()}; error {loc:.4g} ({loc / h:.2f} voxels); "
                f"index {tr['index']} -> {rec_val if rec_val is not None else 'n/a'}"
                f" ({val_err:.1f}% error)"
            )
            csv_rows.append(
                f"{j + 1},\"{tz.tolist()}\",{loc!r},{loc / h!r},{tr['index']!r},"
                f"{rec_val!r},{val_err!r}"
            )
        else:
            lines.append(f"inclusion {j + 1}: center {tz.tolist()} -> no peak recovered")
            csv_rows.append(f"{j + 1},\"{tz.tolist()}\",nan,nan,{tr['index']!r},nan,nan")

    if "l_sweep" in result:
        lines.append("")
        lines.append(
            f"|l| sweep {result['l_sweep']['l_values']}: max extrapolation shift "
            f"{result['l_sweep']['max_abs_extrapolation_shift']:.3g}"
        )
    alpha_sweep = result.get("alpha_sweep")
    lines.append("")
    if alpha_sweep:
        lines.append(
            f"alpha-scaling fit: exponent {alpha_sweep['exponent']:.3f} "
            f"(r2 {alpha_sweep['r2']:.4f}) over alpha = {alpha_sweep['alphas']}"
        )
    else:
        lines.append("alpha-scaling fit: n/a (single-alpha run)")
    lines.append("")
    lines.append("theorem-1 diagnostic (data-independent formula, logged only):")
    for row in result.get("theorem1_diagnostic", []):
        lines.append(
            f"  k={row['k']}: |thm1|={abs(complex(*row['thm1'])):.3e} "
            f"|D(k)|={abs(complex(*row['d_at_nearest_node'])):.3e} "
            f"ratio={row['abs_ratio']}"
        )
    text = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text)
    (out / "report.csv").write_text("\n".join(csv_rows) + "\n")
    return {"report": str(out / "report.txt"), "rows": len(truths)}


STAGES = {
    "phantom": (stage_phantom,),
    "simulate": (stage_simulate,),
    "reconstruct": (stage_reconstruct,),
    "verify": (stage_verify,),
    "report": (stage_report,),
    "all": (stage_phantom, stage_simulate, stage_reconstruct, stage_verify, stage_report),
}


def run_pipeline(cfg: RunConfig, command: str, out_dir=None) -> dict:
    """Execute one pipeline command; returns a summary dict.

    The summary's ``verify_passed`` key is False when the verify stage ran
    and any check failed (the CLI maps that to exit code 4).
    """
    if command not in STAGES:
        raise ValueError(f"unknown command {command!r}; valid: {sorted(STAGES)}")
    ctx = RunContext(cfg, Path(out_dir or cfg.output.directory))
    summary: dict = {"command": command, "out_dir": str(ctx.out_dir),
                     "config_hash": ctx.hash, "verify_passed": True}
    for stage in STAGES[command]:
        result = stage(ctx)
        summary[stage.__name__] = result
        if stage is stage_verify:
            summary["verify_passed"] = bool(result.get("passed", False))
    return summary
