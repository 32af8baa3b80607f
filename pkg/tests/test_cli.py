import hashlib
import json

import pytest

from smoothset.cli import main


def run(args):
    return main(list(args))


def test_gen_then_modulus_row_count(tmp_path):
    grid = tmp_path / "a.mgr"
    assert run(["gen", "--n", "1", "--K", "12", "--seed", "7", "--out", str(grid)]) == 0
    assert grid.exists() and grid.with_suffix(".json").exists()
    out = tmp_path / "m.csv"
    assert run(["modulus", "--in", str(grid), "--scales", "2..9", "--out", str(out)]) == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "mode,j,t,omega,pairCount"
    assert len(lines) == 1 + 8


def test_halfspace_modulus_measures_one(tmp_path):
    grid = tmp_path / "half.mgr"
    assert run(
        ["gen", "--mode", "fixture", "--fixture", "halfspace:0.5", "--n", "1", "--K", "8",
         "--out", str(grid)]
    ) == 0
    out = tmp_path / "m.csv"
    assert run(["modulus", "--in", str(grid), "--scales", "1..5", "--out", str(out)]) == 0
    rows = out.read_text().strip().splitlines()[1:]
    assert all(row.split(",")[3] == "1.0" for row in rows)


def test_scaffold_subcommand(tmp_path):
    grid = tmp_path / "s.mgr"
    assert run(
        ["gen", "--mode", "layered", "--phases", "aligned", "--eps-decay", "geom:0.0112:0.999",
         "--n", "1", "--K", "16", "--seed", "5", "--out", str(grid)]
    ) == 0
    out = tmp_path / "scaffold.json"
    rc = run(["scaffold", "--in", str(grid), "--alpha", "0.5", "--maxgen", "3",
              "--c0", "2.02", "--c-step", "0.02", "--out", str(out)])
    assert rc == 0
    doc = json.loads(out.read_text())
    assert doc["alpha"] == 0.5
    assert len(doc["generations"]) >= 1
    assert "perGenP" in doc and "dimBound" in doc


def test_eset_subcommand(tmp_path):
    grid = tmp_path / "c.mgr"
    assert run(
        ["gen", "--mode", "fixture", "--fixture", "constant:0.5", "--n", "1", "--K", "8",
         "--out", str(grid)]
    ) == 0
    out = tmp_path / "eset.json"
    assert run(["eset", "--in", str(grid), "--alpha", "0.5", "--tau", "0.05",
                "--settle", "2", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["memberVolume"] == pytest.approx(1.0)


def test_boxdim_subcommand(tmp_path):
    grid = tmp_path / "f.mgr"
    assert run(["gen", "--mode", "fixture", "--fixture", "constant:1.0", "--n", "1",
                "--K", "8", "--out", str(grid)]) == 0
    out = tmp_path / "bd.csv"
    assert run(["boxdim", "--in", str(grid), "--band", "0.5,1.0", "--scales", "1..5",
                "--out", str(out)]) == 0
    fit = json.loads(out.with_suffix(".fit.json").read_text())
    assert fit["slope"] == pytest.approx(1.0)


def test_transform_subcommand_dilation(tmp_path):
    grid = tmp_path / "t.mgr"
    assert run(["gen", "--mode", "layered", "--n", "2", "--K", "9", "--seed", "3",
                "--eps-decay", "geom:0.3:0.8", "--out", str(grid)]) == 0
    out = tmp_path / "dil.csv"
    rc = run(["transform", "--in", str(grid), "--check", "dilation", "--lambda", "1.5",
              "--scales", "3..4", "--out", str(out)])
    assert rc == 0
    rows = out.read_text().strip().splitlines()
    assert rows[0] == "check,scale,measured,bound,stderr,pass"
    assert len(rows) > 1 and all(r.endswith("True") for r in rows[1:])


def test_determinism_and_workers(tmp_path):
    grid = tmp_path / "d.mgr"
    run(["gen", "--n", "2", "--K", "9", "--seed", "11", "--mode", "layered", "--out", str(grid)])
    outs = []
    for i, workers in enumerate((1, 4)):
        out = tmp_path / f"m{i}.csv"
        assert run(["modulus", "--in", str(grid), "--scales", "2..6", "--mode", "lattice",
                    "--workers", str(workers), "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    # regenerating the grid byte-identically
    grid2 = tmp_path / "d2.mgr"
    run(["gen", "--n", "2", "--K", "9", "--seed", "11", "--mode", "layered", "--out", str(grid2)])
    assert grid.read_bytes() == grid2.read_bytes()


def test_unknown_subcommand_exit_64():
    assert run(["frobnicate"]) == 64


def test_missing_input_exit_2(tmp_path):
    assert run(["modulus", "--in", str(tmp_path / "nope.mgr")]) == 2


def test_bad_config_exit_2(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("{not json")
    grid = tmp_path / "g.mgr"
    run(["gen", "--n", "1", "--K", "6", "--out", str(grid)])
    assert run(["modulus", "--in", str(grid), "--config", str(cfg)]) == 2
    cfg.write_text(json.dumps({"unknown_key": 1}))
    assert run(["modulus", "--in", str(grid), "--config", str(cfg)]) == 2


def test_config_overrides_flags(tmp_path):
    grid = tmp_path / "g.mgr"
    run(["gen", "--n", "1", "--K", "10", "--out", str(grid)])
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"scales": "2..3"}))
    out = tmp_path / "m.csv"
    assert run(["modulus", "--in", str(grid), "--scales", "2..8", "--config", str(cfg),
                "--out", str(out)]) == 0
    assert len(out.read_text().strip().splitlines()) == 1 + 2


def test_gen_rejects_bad_fixture(tmp_path):
    assert run(["gen", "--mode", "fixture", "--fixture", "halfspace:2.0", "--n", "1",
                "--K", "5", "--out", str(tmp_path / "x.mgr")]) == 2
    assert run(["gen", "--mode", "fixture", "--n", "1", "--K", "5",
                "--out", str(tmp_path / "x.mgr")]) == 2


def test_workers_env_var_fallback(tmp_path, monkeypatch):
    grid = tmp_path / "w.mgr"
    run(["gen", "--n", "1", "--K", "9", "--seed", "4", "--out", str(grid)])
    out1, out2 = tmp_path / "w1.csv", tmp_path / "w2.csv"
    assert run(["modulus", "--in", str(grid), "--scales", "2..5", "--out", str(out1)]) == 0
    monkeypatch.setenv("SMOOTHSET_WORKERS", "3")
    assert run(["modulus", "--in", str(grid), "--scales", "2..5", "--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_transform_exit_3_on_violation(tmp_path, monkeypatch):
    import smoothset.cli as cli_mod
    from smoothset.transform import ConcentricGapRow

    grid = tmp_path / "v.mgr"
    run(["gen", "--n", "2", "--K", "7", "--seed", "1", "--mode", "layered", "--out", str(grid)])
    monkeypatch.setattr(
        cli_mod,
        "check_concentric_gap",
        lambda *a, **k: [ConcentricGapRow(3, 1.5, 0.5, 1.0, 0.1, False)],
    )
    rc = run(["transform", "--in", str(grid), "--check", "concentric", "--scales", "3..3",
              "--out", str(tmp_path / "v.csv")])
    assert rc == 3


def test_report_manifest_hashes(tmp_path):
    grid = tmp_path / "r.mgr"
    run(["gen", "--n", "1", "--K", "10", "--seed", "2", "--out", str(grid)])
    outdir = tmp_path / "report"
    assert run(["report", "--in", str(grid), "--outdir", str(outdir), "--scales", "2..5"]) == 0
    manifest = json.loads((outdir / "manifest.json").read_text())
    assert manifest["files"]
    for entry in manifest["files"]:
        path = outdir / entry["path"]
        assert path.exists()
        assert hashlib.sha256(path.read_bytes()).hexdigest() == entry["sha256"]
