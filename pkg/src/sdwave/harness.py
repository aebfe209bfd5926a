"""Experiment drivers: coefficient generation, the three studies, CSV/SVG output."""

import json
import logging
import math
import os
import time
from dataclasses import dataclass, field, fields, replace
from xml.etree import ElementTree

import numpy as np

from . import lod
from .assembly import CoefficientField, build_forms
from .evolution import (TimeGrid, aux_fine_solve, fine_fem_solve,
                        galerkin_wave_solve, ideal_gfem_solve,
                        localized_gfem_solve, rel_h1_final, rel_l2h1)
from .interpolation import build_interpolator
from .lod import (CorrectorConfig, build_corrector_set, cache_key,
                  load_corrector_cache, save_corrector_cache,
                  transients_for_all_nodes)
from .mesh import build_uniform_mesh, prolongation, refine, saturating_k
from .rb import rb_gfem_solve

log = logging.getLogger("sdwave")

CSV_HEADER = "param,rel_h1_final,rel_l2h1,runtime_s,method"


@dataclass
class ExperimentConfig:
    p: int = 6                    # fine mesh width h = 2^-p
    q: int = 4                    # coarse mesh width H = 2^-q (max q for exp-H)
    kmax: int = 6
    tau: float = 0.02
    T: float = 1.0
    seed: int = 1
    lo: float = 1e-1
    hi: float = 1e3
    law: str = "loguniform"
    block: int = 0                # 0: one value per fine element
    M: tuple = (1, 5, 10, 15)
    scale: str = "desk"
    out: str = "out"
    svg: bool = False
    cache: str = None
    workers: int = 1
    stop_tol: float = 1e-12
    rb_tol: float = 1e-10

    def __post_init__(self):
        if self.p < self.q or self.q < 1:
            raise ValueError("need p >= q >= 1")
        if self.lo <= 0 or self.lo >= self.hi:
            raise ValueError("coefficient range must satisfy 0 < lo < hi")
        if self.tau <= 0:
            raise ValueError("time step must be positive")

    @property
    def n_steps(self):
        return int(round(self.T / self.tau))


def scale_preset(experiment, scale):
    """Mesh presets per experiment; 'paper' uses the published problem sizes."""
    desk = {"exp-k": dict(p=6, q=4, kmax=6),
            "exp-H": dict(p=6, q=5),
            "exp-rb": dict(p=6, q=5, M=(1, 5, 10, 15, 50))}
    paper = {"exp-k": dict(p=7, q=4, kmax=7),
             "exp-H": dict(p=8, q=5),
             "exp-rb": dict(p=8, q=5, M=(1, 5, 10, 15, 50))}
    return (desk if scale == "desk" else paper)[experiment]


def config_from_sources(experiment, json_path=None, overrides=None):
    """Defaults, then scale preset, then JSON file, then explicit overrides."""
    values = {}
    file_values = {}
    if json_path:
        with open(json_path) as fh:
            file_values = json.load(fh)
    scale = (overrides or {}).get("scale") or file_values.get("scale") or "desk"
    values.update(scale_preset(experiment, scale))
    values.update(file_values)
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    values["scale"] = scale
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(values) - known
    if unknown:
        raise ValueError("unknown config keys: %s" % ", ".join(sorted(unknown)))
    if "M" in values:
        values["M"] = tuple(int(m) for m in values["M"])
    return ExperimentConfig(**values)


def random_field(mesh, lo, hi, seed, law="loguniform", block=0):
    """Seeded random coefficient, constant per fine element or per cell block."""
    if not (0 < lo < hi):
        raise ValueError("coefficient range must satisfy 0 < lo < hi")
    if law not in ("uniform", "loguniform"):
        raise ValueError("law must be 'uniform' or 'loguniform'")
    rng = np.random.default_rng(seed)

    def draw(size):
        if law == "uniform":
            return rng.uniform(lo, hi, size)
        return np.exp(rng.uniform(np.log(lo), np.log(hi), size))

    n = mesh.n
    if block <= 0:
        values = draw(mesh.n_elements)
    else:
        nb = -(-n // block)
        per_block = draw(nb * nb).reshape(nb, nb)
        cell = np.arange(n * n)
        ci = (cell % n) // block
        cj = (cell // n) // block
        per_cell = per_block[cj, ci]
        values = np.repeat(per_cell, 2)
    return CoefficientField(mesh, values)


class _Problem:
    """Shared per-experiment state: meshes, coefficients, forms, interpolation."""

    def __init__(self, cfg, q=None):
        q = cfg.q if q is None else q
        coarse = build_uniform_mesh(2 ** q)
        self.pair = refine(coarse, 2 ** (cfg.p - q))
        self.field_a = random_field(self.pair.fine, cfg.lo, cfg.hi, cfg.seed,
                                    cfg.law, cfg.block)
        self.field_b = random_field(self.pair.fine, cfg.lo, cfg.hi, cfg.seed + 1,
                                    cfg.law, cfg.block)
        self.forms = build_forms(self.pair, self.field_a, self.field_b, cfg.tau)
        self.interp = build_interpolator(self.pair)
        self.grid = TimeGrid(cfg.tau, cfg.n_steps)
        self.zeros = np.zeros(self.pair.coarse.n_dofs)


def _corrector_pipeline(cfg, problem, k, form_choice, counters, transients=True):
    """Correctors (and transient sequences) with optional disk caching."""
    config = CorrectorConfig(k=k, tau=cfg.tau, form_choice=form_choice)
    key = cache_key(problem.pair, cfg.seed, cfg.tau, k, form_choice)
    if cfg.cache:
        cached = load_corrector_cache(cfg.cache, key, problem.pair)
        if cached is not None and (cached[1] is not None or not transients):
            counters["cache_hits"] += 1
            return cached[0], cached[1]
    counters["cache_misses"] += 1
    correctors = build_corrector_set(problem.pair, problem.interp, problem.forms,
                                     config, workers=cfg.workers)
    seq = None
    if transients:
        seq = transients_for_all_nodes(problem.pair, problem.interp, problem.forms,
                                       correctors, horizon=cfg.n_steps,
                                       stop_tol=cfg.stop_tol, workers=cfg.workers)
    if cfg.cache:
        save_corrector_cache(cfg.cache, key, correctors, seq)
    return correctors, seq


def run_exp_k(cfg):
    """Localization error against the ideal method as the patch size grows."""
    started = time.perf_counter()
    counters = {"cache_hits": 0, "cache_misses": 0}
    problem = _Problem(cfg)

    sat, _ = _corrector_pipeline(cfg, problem, saturating_k(problem.pair.coarse),
                                 "a_plus_tau_b", counters, transients=False)
    reference = ideal_gfem_solve(sat, problem.interp, problem.forms, 1.0,
                                 problem.grid, problem.zeros, problem.zeros)

    rows = []
    for k in range(2, cfg.kmax + 1):
        tic = time.perf_counter()
        correctors, seq = _corrector_pipeline(cfg, problem, k, "a_plus_tau_b",
                                              counters)
        trajectory = localized_gfem_solve(correctors, seq, problem.interp,
                                          problem.forms, 1.0, problem.grid,
                                          problem.zeros, problem.zeros)
        rows.append({
            "param": k,
            "rel_h1_final": rel_h1_final(problem.forms, trajectory, reference),
            "rel_l2h1": rel_l2h1(problem.forms, trajectory, reference),
            "runtime_s": time.perf_counter() - tic,
            "method": "gfem_k",
        })
        log.info("exp-k k=%d rel_h1=%.3e", k, rows[-1]["rel_h1_final"])
    meta = dict(counters, wall_s=time.perf_counter() - started)
    return rows, meta


def run_exp_H(cfg):
    """Errors against the fine FEM reference over the coarse mesh sweep."""
    started = time.perf_counter()
    counters = {"cache_hits": 0, "cache_misses": 0}
    rows = []

    fine_problem = _Problem(cfg, q=cfg.q)
    reference = fine_fem_solve(fine_problem.forms, 1.0,
                               np.zeros(fine_problem.pair.fine.n_dofs),
                               np.zeros(fine_problem.pair.fine.n_dofs),
                               fine_problem.grid)

    for q in range(2, cfg.q + 1):
        problem = _Problem(cfg, q=q)
        k = q  # k = log2(1/H)
        param = 2 ** q

        def record(method, trajectory, tic):
            rows.append({
                "param": param,
                "rel_h1_final": rel_h1_final(problem.forms, trajectory, reference),
                "rel_l2h1": rel_l2h1(problem.forms, trajectory, reference),
                "runtime_s": time.perf_counter() - tic,
                "method": method,
            })
            log.info("exp-H 1/H=%d %s rel_h1=%.3e", param, method,
                     rows[-1]["rel_h1_final"])

        tic = time.perf_counter()
        correctors, seq = _corrector_pipeline(cfg, problem, k, "a_plus_tau_b",
                                              counters)
        record("gfem", localized_gfem_solve(correctors, seq, problem.interp,
                                            problem.forms, 1.0, problem.grid,
                                            problem.zeros, problem.zeros), tic)

        tic = time.perf_counter()
        P = prolongation(problem.pair)
        record("fem", galerkin_wave_solve(P, problem.forms, 1.0, problem.grid,
                                          problem.zeros, problem.zeros, "fem"), tic)

        for choice, method in (("a_only", "lod_a"), ("b_only", "lod_b")):
            tic = time.perf_counter()
            single, _ = _corrector_pipeline(cfg, problem, k, choice, counters,
                                            transients=False)
            record(method, galerkin_wave_solve(single.Q, problem.forms, 1.0,
                                               problem.grid, problem.zeros,
                                               problem.zeros, method), tic)
    meta = dict(counters, wall_s=time.perf_counter() - started)
    return rows, meta


def run_exp_rb(cfg):
    """Gap between the reduced-basis run and the plain localized method."""
    started = time.perf_counter()
    counters = {"cache_hits": 0, "cache_misses": 0}
    problem = _Problem(cfg, q=cfg.q)
    k = cfg.q

    correctors, seq = _corrector_pipeline(cfg, problem, k, "a_plus_tau_b", counters)
    reference = localized_gfem_solve(correctors, seq, problem.interp, problem.forms,
                                     1.0, problem.grid, problem.zeros, problem.zeros)

    rows = []
    for m in cfg.M:
        tic = time.perf_counter()
        trajectory = rb_gfem_solve(correctors, seq, problem.interp, problem.forms,
                                   1.0, problem.grid, problem.zeros, problem.zeros,
                                   m, tol_rel=cfg.rb_tol, stop_tol=cfg.stop_tol)
        rows.append({
            "param": m,
            "rel_h1_final": rel_h1_final(problem.forms, trajectory, reference),
            "rel_l2h1": rel_l2h1(problem.forms, trajectory, reference),
            "runtime_s": time.perf_counter() - tic,
            "method": "rb",
        })
        log.info("exp-rb M=%d gap=%.3e", m, rows[-1]["rel_h1_final"])
    meta = dict(counters, wall_s=time.perf_counter() - started)
    return rows, meta


def emit(rows, outdir, name, svg=False, meta=None):
    """Write the report CSV (and optionally an SVG plot); returns the paths."""
    os.makedirs(outdir, exist_ok=True)
    ordered = sorted(rows, key=lambda r: (r["method"], r["param"]))
    lines = [CSV_HEADER]
    for r in ordered:
        lines.append("%s,%.12e,%.12e,%.6f,%s" % (
            r["param"], r["rel_h1_final"], r["rel_l2h1"], r["runtime_s"], r["method"]
        ))
    csv_path = os.path.join(outdir, name + ".csv")
    tmp = csv_path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, csv_path)

    paths = [csv_path]
    if svg:
        svg_path = os.path.join(outdir, name + ".svg")
        _write_svg(ordered, svg_path, name)
        paths.append(svg_path)
    if meta:
        log.info("%s: wall=%.1fs cache hits=%d misses=%d", name,
                 meta.get("wall_s", 0.0), meta.get("cache_hits", 0),
                 meta.get("cache_misses", 0))
    return paths


_SVG_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b")


def _write_svg(rows, path, title):
    """Single-file log-scale line plot of rel_h1_final per method."""
    width, height, margin = 640, 420, 60
    methods = sorted({r["method"] for r in rows})
    xs = sorted({float(r["param"]) for r in rows})
    ys = [max(r["rel_h1_final"], 1e-300) for r in rows] or [1.0]
    ymin = math.floor(math.log10(min(ys))) if ys else -1
    ymax = math.ceil(math.log10(max(ys))) if ys else 0
    if ymax <= ymin:
        ymax = ymin + 1

    def sx(x):
        if len(xs) == 1 or xs[-1] == xs[0]:
            return margin + (width - 2 * margin) / 2
        return margin + (width - 2 * margin) * (x - xs[0]) / (xs[-1] - xs[0])

    def sy(y):
        ly = math.log10(max(y, 1e-300))
        return height - margin - (height - 2 * margin) * (ly - ymin) / (ymax - ymin)

    root = ElementTree.Element("svg", xmlns="http://www.w3.org/2000/svg",
                               width=str(width), height=str(height))
    ElementTree.SubElement(root, "rect", x="0", y="0", width=str(width),
                           height=str(height), fill="white")
    ElementTree.SubElement(root, "text", x=str(width // 2), y="24",
                           attrib={"text-anchor": "middle"}).text = title
    axes = "M %d %d L %d %d L %d %d" % (margin, margin, margin, height - margin,
                                        width - margin, height - margin)
    ElementTree.SubElement(root, "path", d=axes, stroke="black", fill="none")
    for exp in range(ymin, ymax + 1):
        y = sy(10.0 ** exp)
        ElementTree.SubElement(root, "line", x1=str(margin - 4), y1="%.1f" % y,
                               x2=str(margin), y2="%.1f" % y, stroke="black")
        ElementTree.SubElement(root, "text", x=str(margin - 8), y="%.1f" % (y + 4),
                               attrib={"text-anchor": "end",
                                       "font-size": "11"}).text = "1e%d" % exp
    for i, method in enumerate(methods):
        pts = [(float(r["param"]), max(r["rel_h1_final"], 1e-300))
               for r in rows if r["method"] == method]
        pts.sort()
        coords = " ".join("%.1f,%.1f" % (sx(x), sy(y)) for x, y in pts)
        color = _SVG_COLORS[i % len(_SVG_COLORS)]
        ElementTree.SubElement(root, "polyline", points=coords, fill="none",
                               stroke=color, attrib={"stroke-width": "1.5"})
        label = ElementTree.SubElement(root, "text", x=str(width - margin + 4),
                                       y=str(margin + 16 * i + 10),
                                       attrib={"font-size": "11", "fill": color})
        label.text = method
    for x in xs:
        ElementTree.SubElement(root, "text", x="%.1f" % sx(x),
                               y=str(height - margin + 16),
                               attrib={"text-anchor": "middle",
                                       "font-size": "11"}).text = "%g" % x
    tmp = str(path) + ".tmp"
    ElementTree.ElementTree(root).write(tmp, xml_declaration=True, encoding="utf-8")
    os.replace(tmp, path)
