"""Command-line entry point: config handling, artifacts, exit codes."""

import json
import shutil
import subprocess

import pytest

from atomlink.cli import (
    FIGURES,
    ConfigError,
    RunConfig,
    main,
    read_config_sections,
    resolve_config,
)
from atomlink.model import fig3_params


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def run_cli(argv, capsys):
    rc = main(argv)
    captured = capsys.readouterr()
    return rc, captured.err


TINY_STEADY = """
[truncation]
excitation_cap = 1
per_mode_cap = 1
[run]
emit = json
"""


# -- config parsing and validation ----------------------------------------------


def test_missing_or_unreadable_config_is_exit_2(tmp_path, capsys):
    rc, err = run_cli(["steady"], capsys)
    assert rc == 2
    assert "--config" in err

    rc, err = run_cli(["steady", "--config", str(tmp_path / "nope.ini")], capsys)
    assert rc == 2
    assert "cannot read config file" in err


def test_malformed_config_text_is_exit_2(tmp_path, capsys):
    bad_ini = write(tmp_path, "bad.ini", "no section header here\nkey = 1\n")
    rc, err = run_cli(["steady", "--config", bad_ini], capsys)
    assert rc == 2
    assert "not valid INI" in err

    bad_json = write(tmp_path, "bad.json", "{ this is not json")
    rc, err = run_cli(["steady", "--config", bad_json], capsys)
    assert rc == 2
    assert "not valid JSON" in err

    flat_json = write(tmp_path, "flat.json", '{"params": 3}')
    rc, err = run_cli(["steady", "--config", flat_json], capsys)
    assert rc == 2
    assert "section" in err


def test_unknown_sections_and_keys_are_named(tmp_path, capsys):
    cfg = write(tmp_path, "sec.ini", "[bogus]\nx = 1\n")
    rc, err = run_cli(["steady", "--config", cfg], capsys)
    assert rc == 2
    assert "bogus" in err

    cfg = write(tmp_path, "key.ini", "[params]\nomeg = 0.06\n")
    rc, err = run_cli(["steady", "--config", cfg], capsys)
    assert rc == 2
    assert "omeg" in err


def test_bad_values_are_exit_2_with_key_named(tmp_path, capsys):
    cases = [
        ("[params]\nomega = -1\n", "omega"),
        ("[params]\nkappa = lots\n", "kappa"),
        ("[params]\nn_mediating = 2\n", "delta_x"),
        ("[params]\nn_mediating = 2\ndelta_x = 0.5\nmediating_detunings = 0, 0.5\n", "not both"),
        ("[params]\nn_mediating = 2\nmediating_detunings = 0, 0.1, 0.2\n", "2"),
        ("[truncation]\nexcitation_cap = 0\n", "excitation_cap"),
        ("[truncation]\nper_mode_cap = 0\n", "per_mode_cap"),
        ("[integrator]\nmethod = euler\n", "method"),
        ("[integrator]\ndt = 0\n", "dt"),
        ("[integrator]\nt_final = -5\n", "t_final"),
        ("[run]\nemit = csv, png\n", "png"),
        ("[run]\ninitial_state = basis\n", "initial_state"),
        ("[run]\ninitial_state = random(x)\n", "integer"),
    ]
    for body, needle in cases:
        cfg = write(tmp_path, "case.ini", body)
        rc, err = run_cli(["steady", "--config", cfg], capsys)
        assert rc == 2, body
        assert err.startswith("config error:"), body
        assert needle in err, (body, err)


def test_resolve_config_defaults_and_overrides(tmp_path):
    cfg = resolve_config({})
    base = fig3_params()
    assert cfg.params == base
    assert (cfg.excitation_cap, cfg.per_mode_cap) == (2, 2)
    assert cfg.method == "rk4"
    assert cfg.t_final == 9000.0
    assert cfg.record_stride is None
    assert cfg.emit == ("csv", "json", "svg")
    assert (cfg.initial_state, cfg.seed) == ("ket00", 0)
    assert cfg.output_dir == "atomlink-out"

    sections = {
        "params": {"n_mediating": "3", "delta_x": "0.5"},
        "integrator": {"record_stride": "25"},
        "run": {"initial_state": "random(11)", "output_dir": "somewhere"},
    }
    cfg = resolve_config(sections)
    assert cfg.params.n_mediating == 3
    assert 0.0 in cfg.params.mediating_detunings
    assert cfg.record_stride == 25.0
    assert (cfg.initial_state, cfg.seed) == ("random", 11)

    cfg = resolve_config(sections, seed_override=3, out_override="elsewhere")
    assert cfg.seed == 3
    assert cfg.output_dir == "elsewhere"

    # the resolved form reparses to the same configuration
    ini = write(tmp_path, "roundtrip.ini", cfg.to_ini())
    again = resolve_config(read_config_sections(ini))
    assert again.params == cfg.params
    assert again.to_sections() == cfg.to_sections()


def test_delta_x_defaults_to_one_mode():
    cfg = resolve_config({"params": {"delta_x": "0.7"}})
    assert cfg.params.n_mediating == 1
    assert cfg.params.mediating_detunings == (0.0,)


# -- artifacts and determinism ---------------------------------------------------


EVOLVE_INI = """
[truncation]
excitation_cap = 1
per_mode_cap = 1
[integrator]
method = rk4
dt = 0.02
t_final = 40
record_stride = 10
[run]
emit = csv, json, svg
"""


def test_evolve_artifacts_are_byte_stable(tmp_path, capsys, monkeypatch):
    cfg = write(tmp_path, "evolve.ini", EVOLVE_INI)
    outs = []
    # same relative output dir from two working directories, so the resolved
    # config (which records where it wrote) is itself part of the comparison
    for name in ("a", "b"):
        work = tmp_path / name
        work.mkdir()
        monkeypatch.chdir(work)
        rc, err = run_cli(["evolve", "--config", cfg, "--out", "out"], capsys)
        assert rc == 0, err
        outs.append(work / "out")
    a, b = outs

    for artifact in ("trajectory.csv", "evolve.json", "trajectory.svg", "resolved.ini"):
        assert (a / artifact).read_bytes() == (b / artifact).read_bytes(), artifact

    # run.json carries the wall time; everything else in it must agree
    ra = json.loads((a / "run.json").read_text())
    rb = json.loads((b / "run.json").read_text())
    ra.pop("wall_time_s"), rb.pop("wall_time_s")
    assert ra == rb
    assert ra["subcommand"] == "evolve"

    header = (a / "trajectory.csv").read_text().splitlines()[0]
    assert header == "t,P00,PS,PT,P11,leak,trace_err"
    payload = json.loads((a / "evolve.json").read_text())
    assert 0.0 <= payload["F_S"] <= 1.0
    assert set(payload["populations"]) == {"P00", "PS", "PT", "P11", "leak"}


def test_flag_order_and_config_encoding_do_not_matter(tmp_path, capsys):
    ini = write(tmp_path, "steady.ini", TINY_STEADY)
    doc = {"truncation": {"excitation_cap": 1, "per_mode_cap": 1}, "run": {"emit": "json"}}
    jsn = write(tmp_path, "steady.json", json.dumps(doc))

    runs = [
        ("flag_first", ["--config", ini, "steady"]),
        ("flag_last", ["steady", "--config", ini]),
        ("json_config", ["steady", "--config", jsn]),
    ]
    results = {}
    for name, argv in runs:
        out = tmp_path / name
        rc, err = run_cli(argv + ["--out", str(out)], capsys)
        assert rc == 0, err
        results[name] = out

    def resolved_without_outdir(out):
        lines = (out / "resolved.ini").read_text().splitlines()
        return [ln for ln in lines if not ln.startswith("output_dir")]

    ref = (results["flag_first"] / "steady.json").read_bytes()
    ref_ini = resolved_without_outdir(results["flag_first"])
    for name in ("flag_last", "json_config"):
        assert (results[name] / "steady.json").read_bytes() == ref, name
        assert resolved_without_outdir(results[name]) == ref_ini, name

    payload = json.loads(ref)
    assert payload["dim"] == 20
    assert payload["method"] == "null_space"
    assert 0.9 < payload["F_S"] < 0.95


def test_seed_override_reaches_the_initial_state(tmp_path, capsys):
    body = """
[truncation]
excitation_cap = 1
per_mode_cap = 1
[integrator]
method = rk4
dt = 0.02
t_final = 10
record_stride = 5
[run]
emit = csv
initial_state = random({seed})
"""
    cfg7 = write(tmp_path, "r7.ini", body.format(seed=7))
    cfg3 = write(tmp_path, "r3.ini", body.format(seed=3))

    rc, _ = run_cli(["evolve", "--config", cfg7, "--out", str(tmp_path / "s7")], capsys)
    assert rc == 0
    rc, _ = run_cli(["evolve", "--config", cfg3, "--out", str(tmp_path / "s3")], capsys)
    assert rc == 0
    rc, _ = run_cli(
        ["evolve", "--config", cfg7, "--seed", "3", "--out", str(tmp_path / "s7o3")], capsys
    )
    assert rc == 0

    t7 = (tmp_path / "s7" / "trajectory.csv").read_bytes()
    t3 = (tmp_path / "s3" / "trajectory.csv").read_bytes()
    t7o3 = (tmp_path / "s7o3" / "trajectory.csv").read_bytes()
    assert t7 != t3
    assert t7o3 == t3
    assert json.loads((tmp_path / "s7o3" / "run.json").read_text())["seed"] == 3


# -- rate and effective-model payloads -------------------------------------------


def test_rates_payload_wires_variants_and_assembly(tmp_path, capsys):
    cfg = write(tmp_path, "rates.ini", "[run]\nemit = json\n")
    out = tmp_path / "out"
    rc, err = run_cli(["rates", "--config", cfg, "--out", str(out)], capsys)
    assert rc == 0, err
    payload = json.loads((out / "rates.json").read_text())
    assert payload["variant"] == "corrected"
    assert payload["estimate_variant"] == "b_corrected"
    for key in ("kappa_c1_1", "kappa_c1_2", "kappa_c2_1", "kappa_c3_1", "gamma_e"):
        assert payload[key] > 0.0
    assert payload["pump_rate_S"] == payload["kappa_c1_1"]
    assert payload["loss_rate_T"] > 0.0
    assert 0.05 < payload["estimated_infidelity_S"] < 0.09
    assert 0.10 < payload["estimated_infidelity_T"] < 0.18


def test_rates_rejects_unsupported_mode_layouts(tmp_path, capsys):
    cfg = write(tmp_path, "multi.ini", "[params]\nn_mediating = 2\ndelta_x = 0.5\n[run]\nemit = json\n")
    rc, err = run_cli(["rates", "--config", cfg, "--out", str(tmp_path / "o")], capsys)
    assert rc == 2
    assert "one resonant mediating mode" in err


def test_effective_payload_structure(tmp_path, capsys):
    cfg = write(tmp_path, "eff.ini", "[run]\nemit = json\n")
    out = tmp_path / "out"
    rc, err = run_cli(["effective", "--config", cfg, "--out", str(out)], capsys)
    assert rc == 0, err
    payload = json.loads((out / "effective.json").read_text())
    assert len(payload["hamiltonian"]["re"]) == 4
    assert len(payload["hamiltonian"]["im"][0]) == 4
    assert set(payload["channels"]) == {
        "kappa_c1", "kappa_c2", "kappa_c3",
        "gamma0_atom1", "gamma0_atom2", "gamma1_atom1", "gamma1_atom2",
    }
    devs = payload["deviations"]
    assert set(devs) == {
        "kappa_c1_1", "kappa_c1_2", "kappa_c2_1", "kappa_c2_2",
        "kappa_c3_1", "kappa_c3_2", "gamma_e",
    }
    for entry in devs.values():
        assert set(entry) == {"analytic", "numeric", "rel_dev"}
        assert entry["rel_dev"] < 0.10


# -- sweeps and fits through the CLI ----------------------------------------------


def test_sweep_axis_parsing_and_artifacts(tmp_path, capsys):
    body = """
[sweep]
method = analytic
axis.omega_frac = -0.2:0.2:3
"""
    cfg = write(tmp_path, "sweep.ini", body)
    out = tmp_path / "out"
    rc, err = run_cli(["sweep", "--config", cfg, "--out", str(out)], capsys)
    assert rc == 0, err
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0] == "omega_frac,F_S,F_T,method"
    assert len(lines) == 4
    payload = json.loads((out / "sweep.json").read_text())
    assert payload["axis_order"] == ["omega_frac"]
    assert len(payload["cells"]) == 3
    assert (out / "sweep.svg").exists()


def test_sweep_config_errors(tmp_path, capsys):
    cases = [
        ("[params]\nomega = 0.06\n", "sweep"),                       # no [sweep] section
        ("[sweep]\nmethod = steady\n", "axis"),                      # no axes
        ("[sweep]\naxis.omega_frac = 1:2\n", "start:stop:count"),
        ("[sweep]\naxis.omega_frac = 0:1:0\n", "count"),
        ("[sweep]\naxis.omega_frac = a, b\n", "number list"),
        ("[sweep]\nmethod = magic\naxis.omega_frac = 0:1:3\n", "magic"),
    ]
    for body, needle in cases:
        cfg = write(tmp_path, "case.ini", body)
        rc, err = run_cli(["sweep", "--config", cfg, "--out", str(tmp_path / "o")], capsys)
        assert rc == 2, body
        assert needle in err, (body, err)


def test_sweep_cell_failures_are_numerical_errors(tmp_path, capsys):
    # omega_frac = -2 drives omega negative inside the evaluator; the cell
    # failure is recorded in the table and the run exits 3, artifacts intact
    body = """
[sweep]
method = analytic
axis.omega_frac = -2, 0
"""
    cfg = write(tmp_path, "bad_cell.ini", body)
    out = tmp_path / "out"
    rc, err = run_cli(["sweep", "--config", cfg, "--out", str(out)], capsys)
    assert rc == 3
    assert "numerical failure" in err
    payload = json.loads((out / "sweep.json").read_text())
    flags = {cell["coords"]["omega_frac"]: cell["ok"] for cell in payload["cells"]}
    assert flags[-2.0] is False and flags[0.0] is True


def test_fit_study_artifacts(tmp_path, capsys):
    body = """
[fit]
c_values = 100, 200
target = both
free =
objective = analytic
point_source = analytic
"""
    cfg = write(tmp_path, "fit.ini", body)
    out = tmp_path / "out"
    rc, err = run_cli(["fit", "--config", cfg, "--out", str(out)], capsys)
    assert rc == 0, err
    for target in ("S", "T"):
        study = json.loads((out / f"fit_{target}.json").read_text())
        assert study["target"] == target
        assert study["slope"] > 0.0
        assert len(study["points"]) == 2
    lines = (out / "fit_points.csv").read_text().splitlines()
    assert lines[0].startswith("target,C,")
    assert len(lines) == 5
    assert (out / "scaling.svg").exists()


def test_fit_config_errors(tmp_path, capsys):
    cases = [
        ("[params]\nomega = 0.06\n", "fit"),
        ("[fit]\ntarget = Q\n", "target"),
        ("[fit]\nrestarts = many\n", "restarts"),
        ("[fit]\nobjective = bogus\n", "objective"),
        ("[fit]\npoint_source = bogus\n", "point_source"),
        ("[fit]\nc_values = a, b\n", "number list"),
    ]
    for body, needle in cases:
        cfg = write(tmp_path, "case.ini", body)
        rc, err = run_cli(["fit", "--config", cfg, "--out", str(tmp_path / "o")], capsys)
        assert rc == 2, body
        assert needle in err, (body, err)


# -- failure exit codes ------------------------------------------------------------


def test_unstable_integration_exits_4(tmp_path, capsys):
    body = """
[truncation]
excitation_cap = 1
per_mode_cap = 1
[integrator]
method = rk4
dt = 5.0
t_final = 100
"""
    cfg = write(tmp_path, "unstable.ini", body)
    rc, err = run_cli(["evolve", "--config", cfg, "--out", str(tmp_path / "o")], capsys)
    assert rc == 4
    assert "physics invariant violated" in err
    assert "trace" in err


def test_degenerate_model_exits_3(tmp_path, capsys):
    body = """
[params]
kappa = 0
gamma0 = 0
gamma1 = 0
[truncation]
excitation_cap = 1
per_mode_cap = 1
[run]
emit = json
"""
    cfg = write(tmp_path, "degenerate.ini", body)
    rc, err = run_cli(["steady", "--config", cfg, "--out", str(tmp_path / "o")], capsys)
    assert rc == 3
    assert "numerical failure" in err


# -- argument parser and entry point ------------------------------------------------


def test_parser_level_failures_raise_system_exit():
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    with pytest.raises(SystemExit):
        main([])
    with pytest.raises(SystemExit):
        main(["reproduce", "nope"])


def test_figure_preset_names_are_stable():
    assert FIGURES == ("fig3a", "fig3b", "fig4", "fig5a", "fig5b", "fig6a", "fig6b", "fig6c")


def test_console_script_entry_point(tmp_path):
    exe = shutil.which("atomlink")
    assert exe, "the atomlink console script should be on PATH"
    cfg = write(tmp_path, "rates.ini", "[run]\nemit = json\n")
    out = tmp_path / "out"
    proc = subprocess.run(
        [exe, "rates", "--config", cfg, "--out", str(out)],
        capture_output=True, text=True, timeout=300,
    )
    assert proc.returncode == 0, proc.stderr
    assert (out / "rates.json").exists()
    assert (out / "run.json").exists()
