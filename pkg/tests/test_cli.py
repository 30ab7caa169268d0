from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from foliated_averaging import __version__
from foliated_averaging.cli import build_system, main
from foliated_averaging.config import load_config, parse_config
from foliated_averaging.errors import ParseError, ValidationError
from foliated_averaging.io import read_csv

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _cfg(body, experiment="coupled-error"):
    return f'experiment = "{experiment}"\nseed = 1\n' + body


def test_shipped_linear_config_parses():
    cfg = load_config(CONFIGS / "cylinder_linear.cfg")
    assert cfg.experiment == "theorem"
    assert cfg.system["name"] == "cylinder" and cfg.system["perturbation"] == "linear"
    assert cfg.run["epsilon"] == (0.2, 0.1, 0.05)
    system = build_system(cfg)
    assert system.name == "cylinder-linear"
    assert system.chart.vertical_domain.upper[0] == 3.0


def test_every_shipped_config_is_valid():
    files = sorted(CONFIGS.glob("*.cfg"))
    assert len(files) >= 10
    for f in files:
        build_system(load_config(f))


def test_negative_epsilon_names_field():
    with pytest.raises(ValidationError) as info:
        parse_config(_cfg("[run]\nepsilon = [0.2, -0.1]\n"))
    assert any(e.startswith("run.epsilon") for e in info.value.errors)


def test_single_replica_rejected():
    with pytest.raises(ValidationError) as info:
        parse_config(_cfg("[run]\nreplicas = 1\n"))
    assert any("run.replicas" in e and ">= 2" in e for e in info.value.errors)


def test_errors_are_aggregated():
    text = _cfg('typo = 3\n[run]\nreplicas = 1\np = 0.5\nepsilon = "x"\n[nonsense]\na = 1\n[chart]\nr_min = 2.0\nr_max = 1.0\n')
    with pytest.raises(ValidationError) as info:
        parse_config(text)
    errs = "\n".join(info.value.errors)
    for needle in ("typo: unknown key", "run.replicas", "run.p", "run.epsilon", "[nonsense]", "chart.r_min"):
        assert needle in errs
    assert len(info.value.errors) >= 6


def test_parse_error_has_position():
    with pytest.raises(ParseError) as info:
        parse_config('experiment = "theorem"\n[run\n')
    assert info.value.line == 2
    assert info.value.column is not None


def test_type_and_choice_errors():
    with pytest.raises(ValidationError) as info:
        parse_config(_cfg('[system]\nname = "torus"\n[run]\nreplicas = 2.5\nscheme = "rk4"\n'))
    errs = "\n".join(info.value.errors)
    assert "system.name" in errs and "run.replicas" in errs and "run.scheme" in errs
    with pytest.raises(ValidationError):
        parse_config(_cfg('[system]\nperturbation = "radial"\n'))
    with pytest.raises(ValidationError):
        parse_config(_cfg("[system]\nk = [1.0, 2.0]\n"))
    with pytest.raises(ValidationError):
        parse_config(_cfg('[coupled]\nobservable = "q1"\n'))
    with pytest.raises(ValidationError):
        parse_config("seed = 1\n")


@settings(max_examples=30)
@given(st.floats(-100, -1e-6))
def test_any_negative_epsilon_rejected(eps):
    with pytest.raises(ValidationError):
        parse_config(_cfg(f"[run]\nepsilon = [{eps!r}]\n"))


def test_seed_precedence():
    assert parse_config('experiment = "theorem"\n', seed_fallback=77).seed == 77
    assert parse_config('experiment = "theorem"\nseed = 3\n', seed_fallback=77).seed == 3
    assert parse_config('experiment = "theorem"\n').seed == 0
    with pytest.raises(ValidationError):
        parse_config('experiment = "theorem"\nseed = -1\n')


def test_hash_ignores_output_and_threads():
    a = parse_config(_cfg('out = "a"\nthreads = 1\n'))
    b = parse_config(_cfg('out = "b"\nthreads = "auto"\n'))
    c = parse_config(_cfg("[run]\nreplicas = 50\n"))
    assert a.config_hash() == b.config_hash() != c.config_hash()
    assert a.tag == a.config_hash()[:12]
    assert b.threads >= 1


def _only_dir(root):
    dirs = [p for p in root.rglob("table.csv")]
    assert len(dirs) == 1
    return dirs[0].parent


def test_run_vertical_config(tmp_path, capsys):
    code = main(["run", str(CONFIGS / "cylinder_vertical.cfg"), "--out", str(tmp_path), "--replicas", "20"])
    assert code == 0
    out_dir = _only_dir(tmp_path / "theorem")
    header, data, _ = read_csv(out_dir / "table.csv")
    assert header == ["epsilon", "t", "p", "estimate", "ci_low", "ci_high", "replicas"]
    assert np.all(data[:, 3] <= 1e-10)
    manifest = (out_dir / "manifest").read_text()
    assert manifest.startswith("config_hash=") and f"version={__version__}" in manifest
    assert "master_seed=11" in manifest
    assert (out_dir / "summary.txt").read_text().lstrip().startswith("{")
    assert "[PASS]" in capsys.readouterr().out


def test_rerun_is_byte_identical_across_threads(tmp_path):
    args = ["run", str(CONFIGS / "cylinder_linear.cfg"), "--replicas", "40", "--eps", "0.2,0.1,0.05"]
    assert main(args + ["--out", str(tmp_path / "a"), "--threads", "1"]) in (0, 2)
    assert main(args + ["--out", str(tmp_path / "b"), "--threads", "3"]) in (0, 2)
    a, b = _only_dir(tmp_path / "a"), _only_dir(tmp_path / "b")
    assert a.name == b.name
    for name in ("table.csv", "summary.txt", "manifest"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_run_constant_exit_config(tmp_path):
    code = main(["run", str(CONFIGS / "cylinder_constant_exit.cfg"), "--out", str(tmp_path)])
    assert code == 0
    header, data, _ = read_csv(_only_dir(tmp_path) / "table.csv")
    col = {h: i for i, h in enumerate(header)}
    below = data[:, col["bound"]] < 1
    assert np.all(data[below, col["probability"]] <= data[below, col["bound"]])


def test_subcommand_and_flag_overrides(tmp_path, monkeypatch):
    monkeypatch.setenv("FOLIATED_SEED", "123")
    code = main(["coupled-error", "--out", str(tmp_path), "--replicas", "8", "--eps", "0.1,0.05", "--t", "0.5",
                 "--set", "system.perturbation=\"vertical\"", "--set", "system.k=[0.0, 0.0, 1.0]",
                 "--set", "coupled.observable=\"pi2\"", "--set", "run.scheme=\"exact_leaf\""])
    assert code == 0
    out_dir = _only_dir(tmp_path / "coupled-error")
    assert "master_seed=123" in (out_dir / "manifest").read_text()
    _, data, _ = read_csv(out_dir / "table.csv")
    np.testing.assert_allclose(data[:, 3], data[:, 0] * 0.5, atol=1e-12)


def test_failed_property_exit_code(tmp_path, capsys):
    code = main(["run", str(CONFIGS / "line_counterexample.cfg"), "--out", str(tmp_path),
                 "--set", 'coupled.expect="accept"'])
    assert code == 2
    assert "[FAIL]" in capsys.readouterr().out


def test_runtime_error_exit_code(tmp_path, capsys):
    code = main(["theorem", "--out", str(tmp_path), "--replicas", "4", "--set", 'system.perturbation="linear"',
                 "--set", "theorem.eta_replicas=2", "--set", "theorem.eta_horizon=20.0"])
    assert code == 1
    assert "HorizonError" in capsys.readouterr().err


def test_invalid_config_never_simulates(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text('experiment = "theorem"\n[run]\nreplicas = 1\nepsilon = [-0.1]\n')
    code = main(["run", str(bad), "--out", str(tmp_path / "out")])
    assert code == 1
    assert not (tmp_path / "out").exists()
    err = capsys.readouterr().err
    assert "run.replicas" in err and "run.epsilon" in err
    assert main(["run", str(tmp_path / "missing.cfg")]) == 1
    monkey = tmp_path / "parse.cfg"
    monkey.write_text("experiment = \n")
    assert main(["run", str(monkey)]) == 1


def test_other_experiments_run(tmp_path):
    for name, extra in (("sphere_linear_average.cfg", []), ("cylinder_simulate.cfg", []),
                        ("cylinder_constant_lyapunov.cfg", ["--set", "lyapunov.horizon=100.0"]),
                        ("cylinder_linear_delta.cfg", ["--replicas", "50"])):
        assert main(["run", str(CONFIGS / name), "--out", str(tmp_path)] + extra) == 0
    header, data, _ = read_csv(next((tmp_path / "simulate").rglob("table.csv")))
    assert header == ["epsilon", "t", "x1", "x2", "x3", "pi1", "pi2"]
    assert set(data[:, 0]) == {0.0, 0.1}
