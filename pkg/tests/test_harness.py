import json
import os
from xml.etree import ElementTree

import numpy as np
import pytest

from sdwave.cli import main
from sdwave.harness import (CSV_HEADER, ExperimentConfig, config_from_sources,
                            emit, random_field, run_exp_H, run_exp_k,
                            run_exp_rb)
from sdwave.mesh import build_uniform_mesh

MICRO = dict(p=3, q=2, kmax=2, tau=0.1, T=0.5, seed=1)


def test_random_field_determinism_and_bounds():
    mesh = build_uniform_mesh(8)
    f1 = random_field(mesh, 0.1, 1000.0, 7)
    f2 = random_field(mesh, 0.1, 1000.0, 7)
    np.testing.assert_array_equal(f1.values, f2.values)
    assert f1.bounds[0] >= 0.1 and f1.bounds[1] <= 1000.0
    assert f1.bounds[1] / f1.bounds[0] > 100.0  # high contrast realized
    f3 = random_field(mesh, 0.1, 1000.0, 8)
    assert not np.array_equal(f1.values, f3.values)


def test_random_field_validation():
    mesh = build_uniform_mesh(4)
    with pytest.raises(ValueError):
        random_field(mesh, 1.0, 1.0, 0)
    with pytest.raises(ValueError):
        random_field(mesh, -1.0, 1.0, 0)
    with pytest.raises(ValueError):
        random_field(mesh, 0.1, 1.0, 0, law="normal")


def test_random_field_near_constant_limit():
    mesh = build_uniform_mesh(4)
    f = random_field(mesh, 1.0, 1.0 + 1e-9, 3)
    assert f.bounds[1] - f.bounds[0] <= 1e-9


def test_random_field_blocks():
    mesh = build_uniform_mesh(8)
    f = random_field(mesh, 0.1, 1000.0, 5, block=4)
    values = f.values.reshape(-1, 2)
    assert np.all(values[:, 0] == values[:, 1])  # both triangles of a cell agree
    assert np.unique(f.values).size <= 4
    f1 = random_field(mesh, 0.1, 1000.0, 5, block=1)
    assert np.unique(f1.values).size <= 64


def test_uniform_law():
    mesh = build_uniform_mesh(8)
    f = random_field(mesh, 10.0, 20.0, 6, law="uniform")
    assert 10.0 <= f.bounds[0] and f.bounds[1] <= 20.0


def test_near_constant_field_gfem_error_matches_fem_level():
    # without coefficient variation the coarse FEM has no multiscale handicap,
    # so the two methods land at the same error level against the fine solve
    from sdwave.assembly import build_forms
    from sdwave.evolution import (TimeGrid, fine_fem_solve,
                                  galerkin_wave_solve, localized_gfem_solve,
                                  rel_l2h1)
    from sdwave.interpolation import build_interpolator
    from sdwave.lod import (CorrectorConfig, build_corrector_set,
                            transients_for_all_nodes)
    from sdwave.mesh import prolongation, refine

    pair = refine(build_uniform_mesh(4), 2)
    A = random_field(pair.fine, 1.0, 1.0 + 1e-9, 1)
    B = random_field(pair.fine, 1.0, 1.0 + 1e-9, 2)
    forms = build_forms(pair, A, B, 0.02)
    interp = build_interpolator(pair)
    cs = build_corrector_set(pair, interp, forms, CorrectorConfig(k=2, tau=0.02))
    seq = transients_for_all_nodes(pair, interp, forms, cs, horizon=10)
    grid = TimeGrid(0.02, 10)
    zc = np.zeros(pair.coarse.n_dofs)
    ref = fine_fem_solve(forms, 1.0, np.zeros(pair.fine.n_dofs),
                         np.zeros(pair.fine.n_dofs), grid)
    gfem = localized_gfem_solve(cs, seq, interp, forms, 1.0, grid, zc, zc)
    fem = galerkin_wave_solve(prolongation(pair), forms, 1.0, grid, zc, zc)
    e_gfem = rel_l2h1(forms, gfem, ref)
    e_fem = rel_l2h1(forms, fem, ref)
    assert e_gfem <= 1.2 * e_fem


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(p=2, q=4)
    with pytest.raises(ValueError):
        ExperimentConfig(lo=2.0, hi=1.0)
    cfg = ExperimentConfig(tau=0.02, T=1.0)
    assert cfg.n_steps == 50


def test_config_sources(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"p": 4, "q": 3, "seed": 9}))
    cfg = config_from_sources("exp-k", str(path), {"seed": 11})
    assert cfg.p == 4 and cfg.q == 3
    assert cfg.seed == 11  # flags override the file
    cfg2 = config_from_sources("exp-k", None, {"scale": "paper"})
    assert cfg2.p == 7
    with pytest.raises(ValueError):
        config_from_sources("exp-k", None, {"bogus": 1})


def test_emit_csv_and_svg(tmp_path):
    rows = [
        {"param": 2, "rel_h1_final": 0.5, "rel_l2h1": 0.4, "runtime_s": 0.1, "method": "gfem"},
        {"param": 4, "rel_h1_final": 0.25, "rel_l2h1": 0.2, "runtime_s": 0.1, "method": "gfem"},
        {"param": 2, "rel_h1_final": 0.8, "rel_l2h1": 0.7, "runtime_s": 0.1, "method": "fem"},
    ]
    paths = emit(rows, tmp_path, "demo", svg=True)
    lines = open(paths[0]).read().strip().splitlines()
    assert lines[0] == CSV_HEADER
    assert len(lines) == 4
    assert lines[1].startswith("2,") and lines[1].endswith(",fem")
    tree = ElementTree.parse(paths[1])  # well-formed XML
    assert tree.getroot().tag.endswith("svg")


def test_emit_empty_report(tmp_path):
    paths = emit([], tmp_path, "empty")
    assert open(paths[0]).read() == CSV_HEADER + "\n"


def _strip_runtime(path):
    lines = open(path).read().strip().splitlines()
    return [",".join(col for i, col in enumerate(line.split(",")) if i != 3)
            for line in lines]


def test_exp_k_micro_deterministic(tmp_path):
    cfg = ExperimentConfig(**MICRO)
    rows1, meta1 = run_exp_k(cfg)
    rows2, _ = run_exp_k(cfg)
    emit(rows1, tmp_path, "a")
    emit(rows2, tmp_path, "b")
    assert _strip_runtime(tmp_path / "a.csv") == _strip_runtime(tmp_path / "b.csv")
    assert meta1["cache_misses"] > 0 and meta1["cache_hits"] == 0
    assert rows1[0]["rel_h1_final"] >= 0.0


def test_exp_k_cache_hit(tmp_path):
    cfg = ExperimentConfig(cache=str(tmp_path / "cache"), **MICRO)
    rows1, meta1 = run_exp_k(cfg)
    rows2, meta2 = run_exp_k(cfg)
    assert meta1["cache_hits"] == 0
    assert meta2["cache_hits"] > 0
    for r1, r2 in zip(rows1, rows2):
        assert r1["rel_h1_final"] == r2["rel_h1_final"]


def test_exp_H_micro(tmp_path):
    cfg = ExperimentConfig(p=3, q=3, tau=0.1, T=0.5, seed=1)
    rows, _ = run_exp_H(cfg)
    methods = {r["method"] for r in rows}
    assert methods == {"gfem", "fem", "lod_a", "lod_b"}
    params = sorted({r["param"] for r in rows})
    assert params == [4, 8]
    for r in rows:
        if r["method"] == "gfem" and r["param"] < 8:
            fem_err = next(s["rel_h1_final"] for s in rows
                           if s["method"] == "fem" and s["param"] == r["param"])
            assert r["rel_h1_final"] <= fem_err
        if r["method"] == "gfem" and r["param"] == 8:  # H = h: oracle collapse
            assert r["rel_h1_final"] <= 1e-8


def test_exp_rb_micro(tmp_path):
    cfg = ExperimentConfig(p=3, q=2, tau=0.1, T=0.5, seed=1, M=(1, 5))
    rows, _ = run_exp_rb(cfg)
    gaps = {r["param"]: r["rel_h1_final"] for r in rows}
    assert gaps[5] == 0.0  # horizon reached, nothing to compress


def test_exp_k_saturated_patch_matches_ideal():
    # once the patches cover the domain the sweep hits the reference itself
    from sdwave.mesh import saturating_k, build_uniform_mesh as bum
    cfg = ExperimentConfig(p=4, q=2, kmax=saturating_k(bum(4)), tau=0.1, T=0.4,
                           seed=1)
    rows, _ = run_exp_k(cfg)
    last = max(rows, key=lambda r: r["param"])
    assert last["rel_h1_final"] <= 1e-8


def test_cli_end_to_end(tmp_path, capsys):
    out = tmp_path / "out"
    rc = main(["exp-k", "--p", "3", "--q", "2", "--kmax", "2", "--tau", "0.1",
               "--T", "0.5", "--seed", "1", "--out", str(out), "--svg"])
    assert rc == 0
    printed = capsys.readouterr().out.strip().splitlines()
    assert printed[0].endswith("exp_k.csv")
    assert os.path.exists(printed[0])
    assert os.path.exists(printed[1])
    lines = open(printed[0]).read().strip().splitlines()
    assert lines[0] == CSV_HEADER


def test_cli_config_file(tmp_path, capsys):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps(dict(MICRO, out=str(tmp_path / "o"))))
    rc = main(["exp-k", "--config", str(cfg_path), "--kmax", "2"])
    assert rc == 0
    assert os.path.exists(tmp_path / "o" / "exp_k.csv")
