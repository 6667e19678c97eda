import json

import pytest
from hypothesis import given, settings, strategies as st

from perfhom.cli import EXIT_OK, EXIT_VALIDATION, main
from perfhom.config import KEYS, ConfigError, RunConfig, field_names, parse_config, print_config


def test_defaults_roundtrip():
    text = print_config(RunConfig())
    assert parse_config(text) == RunConfig()
    assert len(text.splitlines()) == len(KEYS)
    assert {name for name, _ in KEYS.values()} == set(field_names())


@settings(max_examples=40, deadline=None)
@given(regime=st.sampled_from(["M_pos", "M_zero", "M_neg"]), m=st.sampled_from([8, 16, 24]),
       count=st.integers(1, 4), ns=st.lists(st.integers(1, 6), min_size=1, max_size=3, unique=True),
       formats=st.lists(st.sampled_from(["csv", "json", "svg"]), min_size=1, max_size=3, unique=True),
       seed=st.integers(0, 2 ** 31))
def test_print_parse_roundtrip(regime, m, count, ns, formats, seed):
    cfg = RunConfig(regime=regime, m=m, count=count, ns=tuple(sorted(ns)), formats=tuple(formats),
                    limit_grid=8 * 60, seed=seed)
    assert parse_config(print_config(cfg)) == cfg


def test_density_must_match_regime():
    with pytest.raises(ConfigError, match="does not match"):
        parse_config("regime=M_zero\ndensity.case=positive_avg\n")
    assert parse_config("regime=M_neg\ndensity.case=negative_avg\n").density_case == "negative_avg"


def test_duplicate_and_unknown_keys():
    with pytest.raises(ConfigError) as info:
        parse_config("geometry.m=8\ngeometry.m=16\nfoo.bar=1\n")
    probs = info.value.problems
    assert any("duplicate key 'geometry.m'" in p for p in probs)
    assert any("unknown key 'foo.bar'" in p for p in probs)


def test_all_violations_reported():
    text = "regime=M_what\ngeometry.m=12\nsweep.n=4,2\nsolve.count=0\noutput.formats=csv,pdf\nlimit.grid=x\n"
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    joined = "\n".join(info.value.problems)
    for key in ("regime", "geometry.m", "sweep.n", "solve.count", "output.formats", "limit.grid"):
        assert key in joined, key


def test_comments_and_blank_lines():
    cfg = parse_config("# run\n\nregime = M_zero   # zero average\nsweep.n = 2, 4\n")
    assert cfg.regime == "M_zero" and cfg.ns == (2, 4) and cfg.density_case == "zero_avg"


def test_print_defaults(capsys):
    assert main(["--print-defaults"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "regime=M_pos" in out and "limit.grid=128" in out


def test_missing_command_and_bad_config(tmp_path, capsys):
    assert main([]) == EXIT_VALIDATION
    bad = tmp_path / "bad.cfg"
    bad.write_text("regime=M_zero\ndensity.case=positive_avg\nsweep.n=3,1\n")
    assert main(["cell", "-c", str(bad)]) == EXIT_VALIDATION
    err = capsys.readouterr().err
    assert err.count("config error") == 3   # density, ordering, and 128 not divisible by 3*8
    assert main(["cell", "-c", str(tmp_path / "missing.cfg")]) == EXIT_VALIDATION


def test_cell_command(tmp_path):
    assert main(["cell", "-o", str(tmp_path)]) == EXIT_OK
    doc = json.loads((tmp_path / "model.json").read_text())
    assert doc["regime"] == "M_pos" and abs(doc["q"][0][0] - 0.8913675662979409) < 1e-12


def test_limit_command(tmp_path):
    cfg = tmp_path / "z.cfg"
    cfg.write_text("regime=M_zero\nlimit.grid=32\nsweep.n=1,2\nsolve.count=1\n")
    assert main(["limit", "-c", str(cfg), "-o", str(tmp_path)]) == EXIT_OK
    doc = json.loads((tmp_path / "limit.json").read_text())
    assert doc["pencil"]["eigenvalues_neg"][0] == -doc["pencil"]["eigenvalues"][0]


def test_solve_eps_command(tmp_path):
    cfg = tmp_path / "e.cfg"
    cfg.write_text("solve.n=2\nsolve.count=1\n")
    assert main(["solve-eps", "-c", str(cfg), "-o", str(tmp_path)]) == EXIT_OK
    doc = json.loads((tmp_path / "eps_n2.json").read_text())
    assert doc["lambda_pos"][0] > 0 > doc["lambda_neg"][0]
    assert "field u+1" in (tmp_path / "eps_n2_mesh.txt").read_text()


def test_sweep_command(tmp_path):
    cfg = tmp_path / "s.cfg"
    cfg.write_text("regime=M_zero\nsweep.n=1,2\nlimit.grid=32\n")
    assert main(["sweep", "-c", str(cfg), "-o", str(tmp_path), "--formats", "csv,json"]) == EXIT_OK
    assert sorted(p.name for p in tmp_path.iterdir()) == [
        "M_zero_eigenvalues.csv", "M_zero_report.json", "M_zero_timing.json", "s.cfg"]


def test_budget_override_is_validated(tmp_path):
    assert main(["sweep", "-o", str(tmp_path), "--budget", "100"]) == EXIT_VALIDATION
