"""Experiment orchestration and the command-line interface.

Subcommands compose into the full pipeline, each reading the shared config
file and the conventional artifact names inside the output directory:

    braggtomo build-op     --config exp.cfg        # operator.*
    braggtomo sim-analytic --config exp.cfg        # mean.*, data.*
    braggtomo sim-mc       --config exp.cfg        # tally.*, data.*
    braggtomo filter       --config exp.cfg        # filtered.*
    braggtomo recon        --config exp.cfg        # recon_<method>.*
    braggtomo score        --config exp.cfg        # results.csv
    braggtomo report       --config exp.cfg        # report/*.csv

``run_experiment`` chains the same steps in one process, sweeping the L1
weight when the config lists candidates and scoring each reconstruction
against the ground-truth phantom. Outputs are a pure function of config and
seed: rerunning writes byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from dataclasses import replace

import numpy as np

from . import arrayio
from ._accel import set_threads
from .config import ExperimentConfig, load_config
from .forward import build_library, build_operator
from .materials import GaussianMixtureParams, builtin_peaks, evaluate_F, normalized_peaks
from .metrics import edge_map, f1_score, relative_ls_error
from .recon import run_2dbsr, run_ftv, run_two_stage
from .simulate import (
    PhantomObject,
    PhantomSpec,
    analytic_data,
    analytic_mean,
    make_phantom_image,
    mc_run,
)
from .sinogram import filter_sinogram, psi


def _path(cfg: ExperimentConfig, name: str) -> str:
    return os.path.join(cfg.out_dir, name)


def ground_truth_spec(cfg: ExperimentConfig) -> PhantomSpec:
    """Interval phantom matching the configured scene on its slice.

    Sphere objects reduce to the chord the scattering line cuts through
    them: width 2 sqrt(r^2 - x2^2)."""
    x2 = cfg.phantom.slice_x2
    objs = []
    for obj in cfg.phantom.objects:
        if obj.width is not None:
            objs.append(obj)
        else:
            if obj.radius <= abs(x2):
                continue
            half = math.sqrt(obj.radius**2 - x2 * x2)
            objs.append(PhantomObject(obj.material_id, obj.center, width=2.0 * half))
    if not objs:
        raise ValueError("no phantom object intersects the scattering line")
    return PhantomSpec(tuple(objs), slice_x2=x2, clutter=None)


def _build(cfg: ExperimentConfig):
    A = build_operator(cfg.scanner, cfg.grid, cfg.phantom.slice_x2)
    library = build_library(cfg.library_centers, cfg.library_widths, cfg.grid)
    return A, library


def _load_or_build_operator(cfg: ExperimentConfig):
    prefix = _path(cfg, "operator")
    if os.path.exists(prefix + ".meta.json"):
        return arrayio.load_operator(prefix)
    return build_operator(cfg.scanner, cfg.grid, cfg.phantom.slice_x2)


def make_data(cfg: ExperimentConfig, A):
    """Generate (or load) the raw sinogram; returns (sinogram, mean_or_None)."""
    if cfg.data_kind == "analytic":
        gt_image, _ = make_phantom_image(ground_truth_spec(cfg), cfg.grid, gm=cfg.gm)
        mean = analytic_mean(A, gt_image, cfg.eta_c)
        data = analytic_data(A, gt_image, cfg.eta_c, cfg.seed)
        return data, mean
    if cfg.data_kind == "mc":
        tally = mc_run(cfg.mc, cfg.scanner, cfg.grid, gm=cfg.gm)
        arrayio.save_tally(_path(cfg, "tally"), tally)
        sino = tally.to_sinogram()
        total = sino.values.sum()
        if total <= 0:
            raise ValueError("Monte Carlo produced an empty sinogram")
        # bring relative-intensity tallies to the analytic count scale
        scale = cfg.eta_c * sino.p / total
        return replace(sino, values=sino.values * scale), None
    return arrayio.load_sinogram(cfg.data_path), None


def _score(gt_image, image, tau: float) -> float:
    return f1_score(edge_map(gt_image, tau), edge_map(image, tau))


def reconstruct_and_score(cfg: ExperimentConfig, A, library, filtered, gt_image):
    """Sweep the L1 weight per method; returns (rows, best) for results.csv."""
    methods = ["2dbsr", "ftv"] if cfg.method == "both" else [cfg.method]
    sweep = cfg.lambda_sweep or (cfg.recon.lam,)
    rows = []
    best = {}
    for method in methods:
        for lam in sweep:
            params = replace(cfg.recon, lam=lam)
            if method == "2dbsr":
                if cfg.two_stage:
                    res = run_two_stage(filtered, library, A, params)
                    staged = [(res.previous_stage, 1), (res, 2)]
                else:
                    res = run_2dbsr(filtered, library, A, params)
                    staged = [(res, 1)]
            else:
                res = run_ftv(filtered, A, params)
                staged = [(res, 1)]
            for r, stage in staged:
                rows.append({"method": method, "stage": stage, "f1": _score(gt_image, r.image, cfg.edge_tau), "lambda": lam})
            final_f1 = rows[-1]["f1"]
            if method not in best or final_f1 > best[method][0]:
                best[method] = (final_f1, lam, res)
    return rows, best


def write_results(cfg: ExperimentConfig, rows, eta_ls) -> str:
    path = _path(cfg, "results.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["experiment", "method", "stage", "f1", "eta_ls", "lambda"])
        for r in rows:
            w.writerow([cfg.name, r["method"], r["stage"], repr(r["f1"]), repr(eta_ls), repr(r["lambda"])])
    return path


def run_experiment(cfg: ExperimentConfig, threads: int | None = None) -> dict:
    """Full pipeline: operator, data, filter, sweep, reconstruct, score."""
    if threads:
        set_threads(threads)
    arrayio.ensure_dir(cfg.out_dir)
    A, library = _build(cfg)
    gt_image, _ = make_phantom_image(ground_truth_spec(cfg), cfg.grid, gm=cfg.gm)
    arrayio.write_array(_path(cfg, "gt.image.bsta"), gt_image)

    data, mean = make_data(cfg, A)
    arrayio.save_sinogram(_path(cfg, "data"), data)
    eta_ls = float("nan")
    if mean is not None:
        arrayio.write_array(_path(cfg, "mean.values.bsta"), mean)
        eta_ls = relative_ls_error(mean, data.values)

    filtered = filter_sinogram(data)
    arrayio.save_sinogram(_path(cfg, "filtered"), filtered)

    rows, best = reconstruct_and_score(cfg, A, library, filtered, gt_image)
    for method, (f1, lam, res) in best.items():
        arrayio.save_recon(_path(cfg, f"recon_{method}"), res)
        if res.previous_stage is not None:
            arrayio.save_recon(_path(cfg, f"recon_{method}_stage1"), res.previous_stage)
    results_path = write_results(cfg, rows, eta_ls)

    manifest = {
        "name": cfg.name,
        "seed": cfg.seed,
        "config": cfg.raw,
        "lattice": {
            "p": int(cfg.scanner.n_rows),
            "n": int(cfg.grid.n),
            "m": int(cfg.grid.m),
            "l": int(library.l),
        },
    }
    arrayio._write_json(_path(cfg, "manifest.json"), manifest)
    return {"rows": rows, "best": best, "eta_ls": eta_ls, "results_csv": results_path, "gt_image": gt_image}


# ---------------------------------------------------------------------------
# subcommands


def cmd_build_op(cfg: ExperimentConfig) -> None:
    arrayio.ensure_dir(cfg.out_dir)
    A, _ = _build(cfg)
    arrayio.save_operator(_path(cfg, "operator"), A)
    print(f"operator: {A.matrix.shape[0]} x {A.matrix.shape[1]}, nnz {A.matrix.nnz}")


def cmd_sim_analytic(cfg: ExperimentConfig) -> None:
    arrayio.ensure_dir(cfg.out_dir)
    if cfg.data_kind != "analytic":
        raise SystemExit("config data.kind is not 'analytic'")
    A = _load_or_build_operator(cfg)
    data, mean = make_data(cfg, A)
    arrayio.save_sinogram(_path(cfg, "data"), data)
    arrayio.write_array(_path(cfg, "mean.values.bsta"), mean)
    print(f"analytic data: p={data.p}, eta_ls={relative_ls_error(mean, data.values):.4f}")


def cmd_sim_mc(cfg: ExperimentConfig) -> None:
    arrayio.ensure_dir(cfg.out_dir)
    if cfg.data_kind != "mc":
        raise SystemExit("config data.kind is not 'mc'")
    data, _ = make_data(cfg, None)
    arrayio.save_sinogram(_path(cfg, "data"), data)
    print(f"mc data: p={data.p}, total={data.values.sum():.1f}")


def cmd_filter(cfg: ExperimentConfig) -> None:
    data = arrayio.load_sinogram(_path(cfg, "data"))
    filtered = filter_sinogram(data)
    arrayio.save_sinogram(_path(cfg, "filtered"), filtered)
    print(f"filtered {filtered.p} rows")


def cmd_recon(cfg: ExperimentConfig) -> None:
    A = _load_or_build_operator(cfg)
    library = build_library(cfg.library_centers, cfg.library_widths, cfg.grid)
    filtered = arrayio.load_sinogram(_path(cfg, "filtered"))
    gt_image, _ = make_phantom_image(ground_truth_spec(cfg), cfg.grid, gm=cfg.gm)
    rows, best = reconstruct_and_score(cfg, A, library, filtered, gt_image)
    for method, (f1, lam, res) in best.items():
        arrayio.save_recon(_path(cfg, f"recon_{method}"), res)
        if res.previous_stage is not None:
            arrayio.save_recon(_path(cfg, f"recon_{method}_stage1"), res.previous_stage)
        print(f"{method}: best f1={f1:.3f} at lambda={lam}")
    write_results(cfg, rows, float("nan"))


def cmd_score(cfg: ExperimentConfig) -> None:
    gt_image, _ = make_phantom_image(ground_truth_spec(cfg), cfg.grid, gm=cfg.gm)
    rows = []
    methods = ["2dbsr", "ftv"] if cfg.method == "both" else [cfg.method]
    for method in methods:
        prefix = _path(cfg, f"recon_{method}")
        if not os.path.exists(prefix + ".image.bsta"):
            continue
        image = arrayio.read_array(prefix + ".image.bsta")
        rows.append({"method": method, "stage": 2 if cfg.two_stage and method == "2dbsr" else 1,
                     "f1": _score(gt_image, image, cfg.edge_tau), "lambda": cfg.recon.lam})
    path = write_results(cfg, rows, float("nan"))
    for r in rows:
        print(f"{r['method']} stage {r['stage']}: f1={r['f1']:.3f}")
    print(f"wrote {path}")


def cmd_report(cfg: ExperimentConfig) -> None:
    """Per-figure CSV series: filter profile, material curves, traces, line profiles."""
    rep = arrayio.ensure_dir(os.path.join(cfg.out_dir, "report"))
    e = cfg.scanner.energies
    with open(os.path.join(rep, "psi_profile.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["E_keV", "psi"])
        for ev, pv in zip(e, psi(e, float(e[0]), float(e[-1]))):
            w.writerow([repr(float(ev)), repr(float(pv))])
    for obj in cfg.phantom.objects:
        try:
            peaks = builtin_peaks(obj.material_id)
        except KeyError:
            continue
        curve = evaluate_F(cfg.grid.q_values, normalized_peaks(peaks, cfg.gm, cfg.grid.q_values), cfg.gm)
        with open(os.path.join(rep, f"f_curve_{obj.material_id}.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["q_invA", "F"])
            for qv, fv in zip(cfg.grid.q_values, curve):
                w.writerow([repr(float(qv)), repr(float(fv))])
    methods = ["2dbsr", "ftv"] if cfg.method == "both" else [cfg.method]
    for method in methods:
        prefix = _path(cfg, f"recon_{method}")
        if not os.path.exists(prefix + ".image.bsta"):
            continue
        image = arrayio.read_array(prefix + ".image.bsta")
        for obj in cfg.phantom.objects:
            col = int(np.argmin(np.abs(cfg.grid.x1_values - obj.center)))
            with open(
                os.path.join(rep, f"line_profile_{method}_x1_{obj.center:+.1f}mm.csv"),
                "w", newline="", encoding="utf-8",
            ) as fh:
                w = csv.writer(fh)
                w.writerow(["q_invA", "f"])
                for qv, fv in zip(cfg.grid.q_values, image[:, col]):
                    w.writerow([repr(float(qv)), repr(float(fv))])
    print(f"report series in {rep}")


_COMMANDS = {
    "build-op": cmd_build_op,
    "sim-analytic": cmd_sim_analytic,
    "sim-mc": cmd_sim_mc,
    "filter": cmd_filter,
    "recon": cmd_recon,
    "score": cmd_score,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="braggtomo", description="Bragg scatter tomography toolkit")
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="experiment config file")
    parser.add_argument("--seed", type=int, default=None, help="override data.seed")
    parser.add_argument("--threads", type=int, default=None, help="worker threads for parallel kernels")
    parser.add_argument("--out", default=None, help="override output.dir")
    args = parser.parse_args(argv)

    cfg = load_config(args.config)
    if args.out:
        cfg.out_dir = args.out
    if args.seed is not None:
        cfg.seed = args.seed
        if cfg.mc is not None:
            cfg.mc = replace(cfg.mc, seed=args.seed)
    if args.threads:
        set_threads(args.threads)
    _COMMANDS[args.command](cfg)
    return 0


if __name__ == "__main__":
    sys.exit(main())
