"""Experiment configuration.

Plain-text sectioned key/value files (INI syntax) with units spelled out in
the key names. Numeric lists accept either comma-separated values or the
``start:stop:count`` shorthand for a uniform lattice, e.g.
``source_x1_mm = -300:300:31``.

Example::

    [scanner]
    n_sources = 11
    n_detectors = 120
    n_energies = 29

    [grid]
    n_q = 150
    m_x1 = 120

    [phantom]
    objects = nacl:-75:w20, c_graphite:75:w20

    [data]
    kind = analytic
    eta_c = 10
    seed = 7

    [recon]
    method = both
    lambda_sweep = 0.5, 2.0
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

import numpy as np

from .forward import ImageGrid, uniform_grid
from .geometry import ScannerConfig, paper_scanner
from .materials import GaussianMixtureParams
from .recon import ReconParams
from .simulate import ClutterBox, McConfig, PhantomObject, PhantomSpec


class ConfigError(ValueError):
    pass


def parse_values(text: str) -> np.ndarray:
    """Comma list or start:stop:count lattice."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"lattice shorthand needs start:stop:count, got {text!r}")
        start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
        if count < 1:
            raise ConfigError("lattice count must be at least 1")
        return np.linspace(start, stop, count)
    return np.array([float(v) for v in text.split(",") if v.strip() != ""])


def parse_objects(text: str) -> tuple:
    """``material:center:w<width>`` or ``material:center:r<radius>`` entries."""
    objects = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        parts = item.split(":")
        if len(parts) != 3:
            raise ConfigError(f"object spec needs material:center:size, got {item!r}")
        mat, center, size = parts[0].strip(), float(parts[1]), parts[2].strip()
        if size.startswith("w"):
            objects.append(PhantomObject(mat, center, width=float(size[1:])))
        elif size.startswith("r"):
            objects.append(PhantomObject(mat, center, radius=float(size[1:])))
        else:
            raise ConfigError(f"object size must start with 'w' or 'r': {item!r}")
    if not objects:
        raise ConfigError("phantom needs at least one object")
    return tuple(objects)


@dataclass
class ExperimentConfig:
    scanner: ScannerConfig
    grid: ImageGrid
    library_centers: np.ndarray
    library_widths: np.ndarray
    recon: ReconParams
    method: str  # 2dbsr | ftv | both
    two_stage: bool
    lambda_sweep: tuple
    edge_tau: float
    data_kind: str  # analytic | mc | file
    eta_c: float
    seed: int
    data_path: str | None
    mc: McConfig | None
    phantom: PhantomSpec
    gm: GaussianMixtureParams
    out_dir: str
    name: str
    raw: dict = field(default_factory=dict, repr=False)


def _get(cp, section, key, default=None):
    if cp.has_option(section, key):
        return cp.get(section, key)
    return default


def load_config(path) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    read = cp.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")

    def get(section, key, default=None):
        return _get(cp, section, key, default)

    # scanner
    n_src = int(get("scanner", "n_sources", 31))
    n_det = int(get("scanner", "n_detectors", 600))
    n_e = int(get("scanner", "n_energies", 29))
    base = paper_scanner(n_src, n_det, n_e)
    scanner = ScannerConfig(
        w_x1=float(get("scanner", "w_x1_mm", 300.0)),
        w_x2=float(get("scanner", "w_x2_mm", 410.0)),
        beta=np.deg2rad(float(get("scanner", "beta_deg", 120.0))),
        source_x1=parse_values(get("scanner", "source_x1_mm")) if get("scanner", "source_x1_mm") else base.source_x1,
        detector_x1=parse_values(get("scanner", "detector_x1_mm")) if get("scanner", "detector_x1_mm") else base.detector_x1,
        energies=parse_values(get("scanner", "energies_keV")) if get("scanner", "energies_keV") else base.energies,
        detector_area=float(get("scanner", "detector_area_mm2", 1.0)),
        hc=float(get("scanner", "hc_keV_A", 12.398)),
        phi_slope=float(get("scanner", "phi_slope", -75.0 / 820.0)),
        phi_intercept=float(get("scanner", "phi_intercept_mm", 37.5)),
    )

    grid = uniform_grid(
        n=int(get("grid", "n_q", 750)),
        m=int(get("grid", "m_x1", 600)),
        q_max=float(get("grid", "q_max_invA", 2.0)),
        x1_min=float(get("grid", "x1_min_mm", -300.0)),
        x1_max=float(get("grid", "x1_max_mm", 300.0)),
    )

    centers = parse_values(get("library", "centers_mm", "-200:200:81"))
    widths = parse_values(get("library", "widths_mm", "10:30:5"))

    recon = ReconParams(
        lam=float(get("recon", "lambda", 1.0)),
        alpha=float(get("recon", "alpha", 1e6)),
        gamma=float(get("recon", "gamma", 1e10)),
        n1=int(get("recon", "n1", 20)),
        n2=int(get("recon", "n2", 50)),
        log_floor=float(get("recon", "log_floor", 1e-12)),
        tv_beta=float(get("recon", "tv_beta", 1e-2)),
        memory=int(get("recon", "memory", 10)),
    )
    method = get("recon", "method", "2dbsr").strip().lower()
    if method not in ("2dbsr", "ftv", "both"):
        raise ConfigError("recon.method must be 2dbsr, ftv or both")
    sweep_text = get("recon", "lambda_sweep", "")
    lambda_sweep = tuple(float(v) for v in sweep_text.split(",") if v.strip()) if sweep_text else ()
    two_stage = get("recon", "two_stage", "false").strip().lower() in ("1", "true", "yes")

    # phantom
    objects = parse_objects(get("phantom", "objects", "nacl:-75:w20, c_graphite:75:w20"))
    clutter_on = get("phantom", "clutter", "false").strip().lower() in ("1", "true", "yes")
    phantom = PhantomSpec(
        objects,
        slice_x2=float(get("phantom", "slice_x2_mm", 0.0)),
        clutter=ClutterBox(float(get("phantom", "clutter_half_mm", 150.0))) if clutter_on else None,
    )
    gm = GaussianMixtureParams(float(get("phantom", "sigma2", 1e-6)))

    # data source (exactly one kind)
    kind = get("data", "kind", "analytic").strip().lower()
    if kind not in ("analytic", "mc", "file"):
        raise ConfigError("data.kind must be analytic, mc or file")
    seed = int(get("data", "seed", 0))
    eta_c = float(get("data", "eta_c", 10.0))
    data_path = get("data", "path")
    if kind == "file" and not data_path:
        raise ConfigError("data.kind = file needs data.path")
    mc = None
    if kind == "mc":
        mc = McConfig(
            photons_per_projection_per_energy=int(get("data", "photons", 100000)),
            seed=seed,
            scene=phantom,
            step_mm=float(get("data", "step_mm", 1.0)),
            mode=get("data", "mode", "forced").strip().lower(),
            attenuate=get("data", "attenuate", "true").strip().lower() in ("1", "true", "yes"),
        )

    raw = {s: dict(cp.items(s)) for s in cp.sections()}
    return ExperimentConfig(
        scanner=scanner,
        grid=grid,
        library_centers=centers,
        library_widths=widths,
        recon=recon,
        method=method,
        two_stage=two_stage,
        lambda_sweep=lambda_sweep,
        edge_tau=float(get("metrics", "tau", 0.2)),
        data_kind=kind,
        eta_c=eta_c,
        seed=seed,
        data_path=data_path,
        mc=mc,
        phantom=phantom,
        gm=gm,
        out_dir=get("output", "dir", "out"),
        name=get("output", "name", "experiment"),
        raw=raw,
    )
