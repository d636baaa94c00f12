import json
import re
from pathlib import Path

import pytest

from wiener_ot import __version__
from wiener_ot.cli import main
from wiener_ot.harness import (CITATIONS, EXIT_CONFIG, EXIT_DIM, EXIT_FAIL, EXIT_OK, EXIT_SOLVER, KINDS,
                               ConfigError, DimensionError, ExperimentConfig, ManifestError, apply_overrides,
                               default_manifest, load_manifest, run, suite)

ROOT = Path(__file__).resolve().parents[1]


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"kind": "nope"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"kind": "talagrand", "colour": "red"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"kind": "talagrand", "n": "many"})
    with pytest.raises(DimensionError):
        ExperimentConfig.from_dict({"kind": "talagrand", "dim": 65})
    cfg = ExperimentConfig.from_dict({"kind": "talagrand", "dim": 64})
    assert cfg.dim == 64


def test_hash_ignores_output_and_key_order():
    a = ExperimentConfig.from_dict({"kind": "jacobian", "preset": "scale:2", "dim": 1, "output": "/tmp/a",
                                    "params": {"x": 1, "y": 2}})
    b = ExperimentConfig.from_dict({"params": {"y": 2, "x": 1}, "dim": 1, "preset": "scale:2", "kind": "jacobian"})
    assert a.hash == b.hash
    c = ExperimentConfig.from_dict({"kind": "jacobian", "preset": "scale:2", "dim": 1, "seed": 1})
    assert c.hash != a.hash


def test_overrides():
    d = apply_overrides({"kind": "gauge", "params": {"eps": 1}}, ["params.eps=2.5", "n=100", "preset=halfspace:1,0"])
    assert d == {"kind": "gauge", "params": {"eps": 2.5}, "n": 100, "preset": "halfspace:1,0"}
    with pytest.raises(ConfigError):
        apply_overrides({}, ["novalue"])


def test_talagrand_unit_exit_zero(tmp_path):
    rec = run({"kind": "talagrand", "preset": "unit", "dim": 2, "n": 256}, root=tmp_path)
    assert rec.exit_code == EXIT_OK
    assert rec.payload["report"]["verdict"] == "holds-with-equality"


def test_jacobian_scale_exit_zero(tmp_path):
    rec = run({"kind": "jacobian", "preset": "scale:2", "dim": 1, "n": 1000}, root=tmp_path)
    assert rec.exit_code == EXIT_OK
    assert rec.payload["report"]["max_abs_residual"] <= 1e-8
    assert (Path(rec.directory) / "jacobian.csv").exists()


def test_swapped_sides_fixture_fails():
    rec = run({"kind": "talagrand", "preset": "scale:2", "dim": 1, "n": 2048, "fixture": "swap-sides"}, write=False)
    assert rec.exit_code == EXIT_FAIL
    assert rec.payload["report"]["verdict"] == "violated-beyond-3σ"


def test_distinct_error_exit_codes(tmp_path):
    assert run({"kind": "talagrand", "preset": "bogus", "dim": 2}, write=False).exit_code == EXIT_CONFIG
    assert main(["run", str(_write(tmp_path, {"kind": "talagrand", "dim": 65}))]) == EXIT_DIM
    assert main(["run", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    # a failing verdict, a bad preset and an overflowing dimension are all distinguishable
    assert len({EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DIM, EXIT_SOLVER}) == 5


def test_solver_failure_exit_code():
    # rejection sampling on a density without an envelope is a sampler failure
    rec = run({"kind": "monotone", "preset": "hermite-poly:1,0,0.5", "dim": 1, "n": 5,
               "solver": {"sampler": "rejection"}}, write=False)
    assert rec.exit_code == EXIT_SOLVER


def _write(tmp, obj, name="cfg.json"):
    p = tmp / name
    p.write_text(json.dumps(obj))
    return p


def test_payload_is_byte_stable_and_embeds_config(tmp_path):
    cfg = {"kind": "talagrand", "preset": "hermite-poly:1,0.3,0.4", "dim": 2, "n": 512, "seed": 3}
    a = run(cfg, root=tmp_path / "a")
    b = run(cfg, root=tmp_path / "b")
    pa = (Path(a.directory) / "payload.json").read_bytes()
    pb = (Path(b.directory) / "payload.json").read_bytes()
    assert pa == pb
    body = json.loads(pa)
    assert body["config"]["preset"] == cfg["preset"]
    assert body["citation"] == CITATIONS["talagrand"]
    assert body["version"] == __version__
    meta = json.loads((Path(a.directory) / "metadata.json").read_text())
    assert "wall_time_s" in meta and "wall_time_s" not in body
    assert Path(a.directory).name == a.config_hash


def test_every_kind_has_a_citation():
    assert set(CITATIONS) == set(KINDS)
    # descriptive keys, no numbering
    assert not any(re.search(r"\d+\.\d+|thm|lemma|eq\b|cor\b", key) for key in CITATIONS.values())


def test_thread_count_does_not_change_payloads(tmp_path, monkeypatch):
    manifest = {"runs": [{"kind": "talagrand", "preset": "shift:0.5", "dim": 2, "n": 256},
                         {"kind": "polar", "preset": "rotation:20", "dim": 2, "n": 512},
                         {"kind": "gauge", "preset": "halfspace:1,1", "dim": 1, "n": 5000}]}
    monkeypatch.setenv("WIENER_OT_THREADS", "1")
    s1 = suite(manifest, root=tmp_path / "one")
    monkeypatch.setenv("WIENER_OT_THREADS", "3")
    s3 = suite(manifest, root=tmp_path / "three")
    for r1, r3 in zip(s1.records, s3.records):
        assert r1.payload_bytes() == r3.payload_bytes()
        assert (Path(r1.directory) / "payload.json").read_bytes() == (Path(r3.directory) / "payload.json").read_bytes()


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("WIENER_OT_OUTPUT", str(tmp_path / "env-root"))
    rec = run({"kind": "submartingale", "preset": "zero", "dim": 2, "n": 10})
    assert Path(rec.directory).parent == tmp_path / "env-root"


def test_empty_manifest():
    with pytest.raises(ManifestError, match="empty manifest"):
        load_manifest([])
    with pytest.raises(ManifestError, match="empty manifest"):
        load_manifest({"runs": [{"kind": "gauge"}], "only": ["polar"]})
    assert main(["suite", "/dev/null"]) == EXIT_CONFIG


def test_suite_marks_exactly_one_failure(tmp_path):
    manifest = {"runs": [{"kind": "talagrand", "preset": "unit", "dim": 1, "n": 64},
                         {"kind": "talagrand", "preset": "scale:2", "dim": 1, "n": 2048, "fixture": "swap-sides"},
                         {"kind": "jacobian", "preset": "scale:2", "dim": 1, "n": 100}]}
    s = suite(manifest, write=False)
    assert s.failures == 1 and s.exit_code == EXIT_FAIL
    assert sum("FAIL" in line for line in s.table().splitlines()) == 1


def test_suite_collects_invalid_configs():
    s = suite([{"kind": "talagrand", "preset": "unit", "dim": 1, "n": 8}, {"kind": "talagrand", "dim": 99}],
              write=False)
    assert len(s.records) == 1 and len(s.errors) == 1 and s.failures == 1


def test_manifest_file_matches_default():
    on_disk = json.loads((ROOT / "manifests" / "acceptance.json").read_text())
    assert on_disk == default_manifest()


def test_cli_subcommands(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("WIENER_OT_OUTPUT", str(tmp_path))
    assert main(["version"]) == 0
    assert capsys.readouterr().out.strip() == __version__
    assert main(["presets", "list"]) == 0
    out = capsys.readouterr().out
    assert "hermite-poly" in out and "halfspace" in out
    cfg = _write(tmp_path, {"kind": "gauge", "preset": "halfspace:1,0", "dim": 1, "n": 2000})
    assert main(["run", str(cfg), "--set", "params.eps=1.5"]) == 0
    out = capsys.readouterr().out
    assert "gauge: pass" in out and "report:" in out
    man = _write(tmp_path, [{"kind": "jacobian", "preset": "scale:2", "dim": 1, "n": 50}], "m.json")
    assert main(["suite", str(man)]) == 0
    assert (tmp_path / "suite_summary.txt").exists()
