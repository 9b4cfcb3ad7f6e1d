import json
import os
import subprocess
import sys

import numpy as np
import pytest

from dwlab.cli import main
from dwlab.config import RunConfig
from dwlab.grid import Grid, WeightField, write_weight_field
from dwlab.harness import WeightGenerator, generate


@pytest.fixture
def const_field(tmp_path):
    path = tmp_path / "const.wf"
    w = WeightField(Grid(1, 2), np.broadcast_to(np.eye(2), (4, 2, 2)).copy())
    write_weight_field(path, w)
    return str(path)


@pytest.fixture
def random_field(tmp_path):
    path = tmp_path / "rand.wf"
    w = generate(WeightGenerator("log-gaussian", amplitude=0.4, seed=3), 1, 2, 3)
    write_weight_field(path, w)
    return str(path)


def test_check_weight_constant(const_field, tmp_path):
    rep = tmp_path / "r.json"
    assert main(["check-weight", "--field", const_field, "--report", str(rep)]) == 0
    d = json.loads(rep.read_text())
    assert set(d) >= {
        "b2_i", "b2_ii", "b2_iii", "b2_iv",
        "ainf_i", "ainf_ii", "a2", "thewest", "doubling", "worst_cubes",
    }
    for key in ("b2_i", "b2_ii", "b2_iii", "b2_iv", "ainf_i", "ainf_ii", "a2", "thewest"):
        assert abs(d[key] - 1.0) < 1e-9
    assert {"config_hash", "seed"} <= set(d["meta"])


def test_tb_run_zero_gamma(const_field, tmp_path):
    rep = tmp_path / "r.json"
    assert main(["tb-run", "--field", const_field, "--gamma", "zero", "--report", str(rep)]) == 0
    d = json.loads(rep.read_text())
    assert d["carleson_norm"] == 0.0
    assert d["violations"] == []
    assert set(d["constants"]) == {"C1", "C2", "C3", "C4"}
    assert set(d) >= {
        "carleson_norm", "assembled_bound", "violations",
        "per_sector", "partition_residual", "constants",
    }


def test_tb_run_violation_exit_code(tmp_path):
    path = tmp_path / "steep.wf"
    w = WeightField(Grid(1, 2), np.array([1.0, 1.0, 1.0, 0.3]).reshape(4, 1, 1))
    write_weight_field(path, w)
    rep = tmp_path / "r.json"
    rc = main([
        "tb-run", "--field", str(path), "--gamma", "constant",
        "--eps1", "0.45", "--eps2", "0.3", "--eps3", "0.7", "--report", str(rep),
    ])
    assert rc == 2
    d = json.loads(rep.read_text())  # report still written
    assert d["violations"]


def test_corona_subcommand(random_field, tmp_path):
    rep = tmp_path / "r.json"
    rc = main([
        "corona", "--field", random_field, "--criterion", "corona",
        "--param", "0.2", "--report", str(rep),
    ])
    assert rc == 0
    d = json.loads(rep.read_text())
    assert d["packing"] >= 1.0
    assert d["partition_residual"] <= 1e-9
    assert d["generations"][0] == ["level=0 coords=0"]
    for crit, param in (("volberg", 4.0), ("kato", 0.2)):
        assert main([
            "corona", "--field", random_field, "--criterion", crit,
            "--param", str(param), "--report", str(rep),
        ]) == 0
    rc = main([
        "corona", "--field", random_field, "--criterion", "corona",
        "--param", "0.2", "--root", "1,1", "--report", str(rep),
    ])
    assert rc == 0
    assert json.loads(rep.read_text())["root"] == "level=1 coords=1"


def test_cone_net_subcommand(tmp_path):
    rep = tmp_path / "r.json"
    rc = main(["cone-net", "--N", "2", "--eps1", "0.5", "--trials", "300", "--report", str(rep)])
    assert rc == 0
    d = json.loads(rep.read_text())
    assert d["size"] >= 51 and d["failures"] == 0
    assert d["certificate_cos"] >= d["required_cos"]


def test_rrt_search_subcommand(tmp_path):
    rep = tmp_path / "r.json"
    rc = main([
        "rrt-search", "--m", "2", "--delta", "0.1",
        "--budget", "400", "--report", str(rep),
    ])
    assert rc == 0
    d = json.loads(rep.read_text())
    assert d["instance"]["epsilon_measured"] >= 0.1 - 1e-9
    rc = main([
        "rrt-search", "--m", "1", "--eps-grid", "0.1,0.2",
        "--budget", "100", "--report", str(rep),
    ])
    assert rc == 0
    assert [r["delta"] for r in json.loads(rep.read_text())["rows"]] == [0.1, 0.2]
    # exactly one mode must be given
    assert main(["rrt-search", "--m", "2"]) == 1


def test_inclusion_search_subcommand(tmp_path):
    out = tmp_path / "incl"
    rc = main([
        "inclusion-search", "--N", "2", "--L", "3", "--b2-cap", "1.5",
        "--budget", "30", "--out", str(out),
    ])
    assert rc == 0
    assert sorted(p.name for p in out.iterdir()) == ["best_field.wf", "report.json", "trend.csv"]
    d = json.loads((out / "report.json").read_text())
    assert d["report"]["b2_iv"] <= 1.5 + 1e-9
    assert d["label"] == "empirical"
    assert [row["L"] for row in d["trend"]] == [2, 3]
    trend_lines = (out / "trend.csv").read_text().strip().splitlines()
    assert trend_lines[0] == "L,ainf_ii,b2_iv,objective" and len(trend_lines) == 3
    assert main(["inclusion-search", "--N", "1", "--b2-cap", "2.0", "--out", str(out)]) == 1


def test_paraproduct_demo(tmp_path):
    rep = tmp_path / "r.json"
    assert main(["paraproduct-demo", "--depth", "6", "--report", str(rep)]) == 0
    d = json.loads(rep.read_text())
    assert d["product_identity_residual"] <= 1e-10


def test_malformed_field_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.wf"
    bad.write_text("1 1 1\n1.0 2.0\nbroken\n")
    assert main(["check-weight", "--field", str(bad)]) == 1
    assert "line 3" in capsys.readouterr().err


def test_usage_errors():
    assert main(["check-weight", "--no-such-flag"]) == 1
    assert main(["corona", "--field", "x.wf", "--criterion", "corona", "--param", "0.2",
                 "--root", "zero"]) == 1


def test_config_roundtrip(tmp_path):
    cfg = RunConfig(n=2, N=3, L=3, shifts=4, eps2=0.25, lam=8.0, seed=9)
    path = tmp_path / "run.cfg"
    cfg.to_file(path)
    back = RunConfig.from_file(path)
    assert back == cfg
    assert back.hash() == cfg.hash()
    annotated = "[epsilons]\neps2 = 0.125   ; inline note\n"
    assert RunConfig.from_text(annotated).eps2 == 0.125
    with pytest.raises(ValueError):
        RunConfig(eps2=1.5).validate()
    with pytest.raises(ValueError):
        RunConfig(lam=0.5).validate()
    with pytest.raises(ValueError):
        RunConfig(eps2=0.2, eps3=0.02).validate()  # 0.02 >= 0.2^2/4


def test_config_file_feeds_tb_run(tmp_path, const_field):
    cfg = RunConfig(eps2=0.2, shifts=1)
    cfg_path = tmp_path / "run.cfg"
    cfg.to_file(cfg_path)
    rep = tmp_path / "r.json"
    rc = main([
        "--config", str(cfg_path),
        "tb-run", "--field", const_field, "--gamma", "zero", "--report", str(rep),
    ])
    assert rc == 0
    d = json.loads(rep.read_text())
    assert d["eps"]["eps2"] == 0.2
    assert d["eps"]["eps3"] == pytest.approx(0.2**2 / 8.0)
    # an explicit flag still wins
    rc = main([
        "--config", str(cfg_path),
        "tb-run", "--field", const_field, "--gamma", "zero",
        "--eps2", "0.4", "--report", str(rep),
    ])
    assert rc == 0
    assert json.loads(rep.read_text())["eps"]["eps2"] == 0.4


def test_jobs_env_override(monkeypatch, tmp_path):
    rep = tmp_path / "r.json"
    monkeypatch.setenv("DWLAB_JOBS", "1")
    assert main(["rrt-search", "--m", "2", "--delta", "0.05", "--budget", "200",
                 "--report", str(rep)]) == 0
    monkeypatch.setenv("DWLAB_JOBS", "banana")
    assert main(["rrt-search", "--m", "2", "--delta", "0.05", "--budget", "200",
                 "--report", str(rep)]) == 1


def test_reports_are_deterministic(random_field, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for target in (a, b):
        main(["tb-run", "--field", random_field, "--gamma", "random",
              "--seed", "5", "--report", str(target)])
    assert a.read_bytes() == b.read_bytes()


def test_module_entrypoint(const_field):
    env = dict(os.environ)
    proc = subprocess.run(
        [sys.executable, "-m", "dwlab", "check-weight", "--field", const_field],
        capture_output=True, text=True, env=env,
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["b2_ii"] == pytest.approx(1.0, abs=1e-9)


def test_cross_process_determinism(random_field, tmp_path):
    # fresh interpreters with randomized hash seeds must agree byte for byte
    outs = []
    for seed_env, name in (("1234", "x.json"), ("987654", "y.json")):
        target = tmp_path / name
        env = dict(os.environ, PYTHONHASHSEED=seed_env, DWLAB_JOBS="1")
        proc = subprocess.run(
            [sys.executable, "-m", "dwlab", "tb-run", "--field", random_field,
             "--gamma", "random", "--seed", "11", "--report", str(target)],
            capture_output=True, text=True, env=env,
        )
        assert proc.returncode == 0, proc.stderr
        outs.append(target.read_bytes())
    assert outs[0] == outs[1]


def test_tb_run_refuses_non_doubling_measure(tmp_path, capsys):
    side = 16
    mu = np.ones(side)
    mu[: side // 2] = 1e7  # violent half-step in the density
    w = WeightField(Grid(1, 4, mu), np.ones((side, 1, 1)))
    path = tmp_path / "wild.wf"
    write_weight_field(path, w)
    rc = main(["tb-run", "--field", str(path), "--gamma", "zero"])
    assert rc == 1
    assert "doubling cap" in capsys.readouterr().err
