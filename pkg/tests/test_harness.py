import hashlib
import json
import os

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fraclyap.harness import cli, config as cf, manifest as mf, runner, suites
from fraclyap.harness.config import ConfigError


def _cfg(**kw):
    raw = {"kind": "fbm", "H": "0.3", "T": "1", "dt": "0.015625", "seeds": "0"}
    raw.update({k: str(v) for k, v in kw.items()})
    return cf.build_config(raw)


def test_parse_text_handles_comments_and_blank_lines():
    raw = cf.parse_text("# header\nkind = fbm\n\nH = 0.3   # Hurst\n")
    assert raw == {"kind": "fbm", "H": "0.3"}


@pytest.mark.parametrize("text,key", [
    ("kind = fbm\nbogus = 1\n", "bogus"),
    ("kind = fbm\nkind = flow\n", "kind"),
    ("kind fbm\n", "line 1"),
])
def test_parse_errors_name_the_offending_key(text, key):
    with pytest.raises(ConfigError) as info:
        cf.parse_text(text)
    assert info.value.key == key


@pytest.mark.parametrize("override,key", [
    ({"H": "1.2"}, "H"),
    ({"H": "abc"}, "H"),
    ({"dt": "2"}, "dt"),
    ({"T": "0.001", "dt": "0.01"}, "dt"),
    ({"kind": "nope"}, "kind"),
    ({"drift": "nope"}, "drift"),
    ({"T": "1.003"}, "T"),
    ({"seeds": "1,1"}, "seeds"),
    ({"sigma": "inf"}, "sigma"),
])
def test_invalid_values_name_their_key(override, key):
    raw = {"kind": "fbm", "H": "0.3", "T": "1", "dt": "0.01", "seeds": "0"}
    raw.update(override)
    with pytest.raises(ConfigError) as info:
        cf.build_config(raw)
    assert info.value.key == key


def test_missing_hurst_reported():
    with pytest.raises(ConfigError) as info:
        cf.build_config({"kind": "fbm", "T": "1", "dt": "0.01"})
    assert info.value.key == "H"


@given(master=st.integers(0, 2**31), count=st.integers(1, 30))
def test_derived_seeds_are_deterministic_and_distinct(master, count):
    a = cf.derive_seeds(master, count)
    assert a == cf.derive_seeds(master, count)
    assert len(set(a)) == count
    assert a[: count - 1] == cf.derive_seeds(master, count - 1)


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("kind = density\nH = 0.7\nsigma = 2\nT = 300\ndt = 0.01\nburn_in = 20\n")
    cfg = cf.load_config(str(path), {"sigma": "3"})
    assert cfg.kind == "density" and cfg.sigma == [[3.0]]
    assert cfg.to_dict()["T"] == 300.0


def test_atomic_write_and_inventory_hashes(tmp_path):
    mf.atomic_write(tmp_path / "a.txt", "alpha\n")
    inv = mf.inventory(tmp_path, ["a.txt"])
    assert inv == [{"path": "a.txt", "sha256": hashlib.sha256(b"alpha\n").hexdigest(), "bytes": 6}]
    assert not [p for p in os.listdir(tmp_path) if p.endswith(".tmp")]


def test_check_result_coerces_numpy_types():
    c = mf.CheckResult("x", np.bool_(True), np.float32(1.5))
    assert type(c.passed) is bool and type(c.value) is float
    json.dumps(c.__dict__)


def test_fbm_run_writes_files_and_manifest(tmp_path):
    out = tmp_path / "fbm"
    man = runner.run(_cfg(seeds="3,4"), out=str(out))
    stored = mf.read_manifest(out)
    assert stored["passed"] and man.passed
    names = sorted(f["path"] for f in stored["files"])
    assert names == ["fbm_seed3.csv", "fbm_seed3.json", "fbm_seed4.csv", "fbm_seed4.json"]
    for f in stored["files"]:
        assert f["sha256"] == mf.sha256_file(out / f["path"])


def test_non_empty_output_directory_refused(tmp_path):
    (tmp_path / "stale.txt").write_text("x")
    with pytest.raises(ConfigError) as info:
        runner.run(_cfg(), out=str(tmp_path))
    assert info.value.key == "out"


def test_failed_run_leaves_no_output(tmp_path):
    out = tmp_path / "never"
    cfg = cf.build_config({"kind": "density", "H": "0.3", "drift": "constant", "drift_c": "1",
                           "T": "10", "dt": "0.01"})
    with pytest.raises(ConfigError):
        runner.run(cfg, out=str(out))
    assert not out.exists()


@pytest.mark.parametrize("kind,extra", [
    ("fbm", {"n_seeds": "3", "T": "1", "dt": "0.01"}),
    ("lyapunov", {"drift": "contraction", "drift_a": "2", "T": "110", "dt": "0.01", "burn_in": "10",
                  "seeds": "1,2,3"}),
])
def test_outputs_independent_of_thread_count(tmp_path, kind, extra):
    raw = {"kind": kind, "H": "0.3", **extra}
    a = runner.run(cf.build_config(raw), out=str(tmp_path / "one"), threads=1)
    b = runner.run(cf.build_config(raw), out=str(tmp_path / "three"), threads=3)
    assert [f["sha256"] for f in a.files] == [f["sha256"] for f in b.files]


def test_thread_count_from_environment(monkeypatch):
    monkeypatch.setenv(runner.THREADS_ENV, "4")
    assert runner.resolve_threads() == 4
    monkeypatch.setenv(runner.THREADS_ENV, "many")
    with pytest.raises(ConfigError):
        runner.resolve_threads()


def test_flow_run_checks_integral_form_convergence(tmp_path):
    cfg = cf.build_config({"kind": "flow", "H": "0.3", "T": "2", "dt": "0.01", "n_seeds": "2", "x0": "1.5"})
    man = runner.run(cfg, out=str(tmp_path / "flow"))
    assert man.passed
    assert all(c["name"].startswith("integral form converges") for c in man.checks)


def test_bridge_run_density_integrates_to_one(tmp_path):
    cfg = cf.build_config({"kind": "bridge", "H": "0.3", "drift": "contraction", "T": "0.25", "t0": "0.25",
                           "dt": "0.0078125", "x0": "0.5", "n_samples": "1000", "seeds": "7"})
    man = runner.run(cfg, out=str(tmp_path / "br"))
    assert man.passed
    assert (tmp_path / "br" / "bridge_density.csv").exists()


def test_cli_exit_codes(tmp_path, capsys):
    assert cli.main(["fbm", "--set", "H=0.3", "--set", "T=1", "--set", "dt=0.01", "--out", str(tmp_path / "ok")]) == 0
    assert cli.main(["fbm", "--set", "H=0.3", "--set", "T=0.001", "--set", "dt=0.01",
                     "--out", str(tmp_path / "bad")]) == 2
    assert not (tmp_path / "bad").exists()
    assert cli.main(["fbm", "--set", "bogus=1"]) == 2
    assert cli.main(["verify", "no-such-suite"]) == 2
    with pytest.raises(SystemExit) as info:
        cli.main(["frobnicate"])
    assert info.value.code == 2
    err = capsys.readouterr().err
    assert "bogus: unknown key" in err


def test_cli_config_kind_must_match_subcommand(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("kind = flow\nH = 0.3\nT = 1\ndt = 0.01\n")
    assert cli.main(["fbm", "--config", str(path), "--out", str(tmp_path / "o")]) == 2


def test_trivial_suite_passes_and_reports_json(tmp_path):
    assert cli.main(["verify", "trivial", "--out", str(tmp_path)]) == 0
    body = json.loads((tmp_path / "verify_trivial.json").read_text())
    assert body["passed"] and body["suite"] == "trivial"
    assert all(r["passed"] for r in body["results"])


def test_noise_identity_suite_passes():
    assert suites.verify("noise-identities").passed
