"""Command line front end: config ingestion, subcommands, figure presets.

One process runs one subcommand.  Every run writes its result artifacts
(CSV/JSON, optionally SVG) plus ``run.json`` metadata and a copy of the
resolved configuration, so a run is reconstructible from its output
directory alone.  Result CSV/JSON artifacts are byte-stable for a given
config and seed; ``run.json`` is the documented exception because it
records the wall time.

Exit codes: 0 success, 2 configuration error (the message names the
offending key), 3 numerical failure, 4 physics-invariant violation.
"""

from __future__ import annotations

import argparse
import configparser
import io
import json
import math
import os
import platform
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .analysis import (
    c_scaling_study,
    estimate_infidelity,
    fidelity_evaluator,
    find_dips,
    sweep_grid,
)
from .dynamics import (
    DegenerateSteadyStateError,
    SuperoperatorSizeError,
    TraceDriftError,
    LindbladGenerator,
    atomic_populations,
    evolve,
    population_recorder,
    steady_state,
)
from .effective import analytic_rates, build_effective_model, rate_deviations
from .model import (
    PhysicalParams,
    build_collapse_ops,
    build_hamiltonian_parts,
    build_space_for,
    fig3_params,
    ground_state_vector,
    mediating_detunings_for,
    random_ground_state,
)


class ConfigError(ValueError):
    """Bad or missing configuration; the message names the offending key."""


def _fmt12(x: float) -> str:
    return f"{x:.11e}"


def _jfloat(x: float) -> float:
    return float(_fmt12(x))


# -- configuration -------------------------------------------------------------

_PARAM_KEYS = {
    "omega", "omega_m", "theta_m", "delta_cap", "delta", "nu",
    "kappa", "gamma0", "gamma1", "g", "n_mediating",
    "mediating_detunings", "delta_x",
}
_TRUNCATION_KEYS = {"excitation_cap", "per_mode_cap"}
_INTEGRATOR_KEYS = {"method", "dt", "t_final", "record_stride", "rtol"}
_RUN_KEYS = {"initial_state", "output_dir", "emit", "seed"}
_SWEEP_KEYS = {"method", "gt"}  # plus axis.<name> entries
_FIT_KEYS = {"c_values", "target", "free", "objective", "point_source", "restarts"}
_SECTIONS = {
    "params": _PARAM_KEYS,
    "truncation": _TRUNCATION_KEYS,
    "integrator": _INTEGRATOR_KEYS,
    "run": _RUN_KEYS,
    "sweep": _SWEEP_KEYS,
    "fit": _FIT_KEYS,
}


@dataclass
class RunConfig:
    """Fully resolved run description, independent of the config encoding."""

    params: PhysicalParams
    excitation_cap: int = 2
    per_mode_cap: int = 2
    method: str = "rk4"
    dt: float = 0.02
    t_final: float = 9000.0
    record_stride: float | None = None
    rtol: float = 1e-8
    initial_state: str = "ket00"
    output_dir: str = "atomlink-out"
    emit: tuple[str, ...] = ("csv", "json", "svg")
    seed: int = 0
    sweep: dict = field(default_factory=dict)
    fit: dict = field(default_factory=dict)

    def to_sections(self) -> dict[str, dict[str, str]]:
        """Resolved key/value sections, the canonical config serialization."""
        p = self.params
        sections = {
            "params": {
                "omega": repr(p.omega),
                "omega_m": repr(p.omega_m),
                "theta_m": repr(p.theta_m),
                "delta_cap": repr(p.delta_cap),
                "delta": repr(p.delta),
                "nu": repr(p.nu),
                "kappa": repr(p.kappa),
                "gamma0": repr(p.gamma0),
                "gamma1": repr(p.gamma1),
                "g": repr(p.g),
                "n_mediating": str(p.n_mediating),
                "mediating_detunings": ", ".join(repr(d) for d in p.mediating_detunings),
            },
            "truncation": {
                "excitation_cap": str(self.excitation_cap),
                "per_mode_cap": str(self.per_mode_cap),
            },
            "integrator": {
                "method": self.method,
                "dt": repr(self.dt),
                "t_final": repr(self.t_final),
                "record_stride": "" if self.record_stride is None else repr(self.record_stride),
                "rtol": repr(self.rtol),
            },
            "run": {
                "initial_state": self.initial_state,
                "output_dir": self.output_dir,
                "emit": ", ".join(self.emit),
                "seed": str(self.seed),
            },
        }
        if self.sweep:
            sections["sweep"] = {k: str(v) for k, v in self.sweep.items()}
        if self.fit:
            sections["fit"] = {k: str(v) for k, v in self.fit.items()}
        return sections

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        for name, body in self.to_sections().items():
            cp[name] = body
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def read_config_sections(path: str) -> dict[str, dict[str, str]]:
    """Sections from an INI or JSON file (detected by content)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc}") from exc
    if text.lstrip().startswith("{"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path!r} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict) or not all(isinstance(v, dict) for v in doc.values()):
            raise ConfigError("JSON config must map section names to key/value objects")
        return {
            str(sec).lower(): {str(k).lower(): _json_value_str(v) for k, v in body.items()}
            for sec, body in doc.items()
        }
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=path)
    except configparser.Error as exc:
        raise ConfigError(f"config {path!r} is not valid INI: {exc}") from exc
    return {sec.lower(): dict(cp[sec]) for sec in cp.sections()}


def _json_value_str(v) -> str:
    if isinstance(v, (list, tuple)):
        return ", ".join(repr(float(x)) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _check_keys(sections: dict[str, dict[str, str]]) -> None:
    for sec, body in sections.items():
        if sec not in _SECTIONS:
            raise ConfigError(f"unknown config section [{sec}]")
        allowed = _SECTIONS[sec]
        for key in body:
            if sec == "sweep" and key.startswith("axis."):
                continue
            if key not in allowed:
                raise ConfigError(f"section [{sec}]: unknown key {key!r}")


def _get_float(sec: dict, section: str, key: str, default: float) -> float:
    if key not in sec:
        return default
    try:
        return float(sec[key])
    except ValueError as exc:
        raise ConfigError(f"section [{section}]: key {key!r} is not a number") from exc


def _get_int(sec: dict, section: str, key: str, default: int) -> int:
    if key not in sec:
        return default
    try:
        return int(sec[key])
    except ValueError as exc:
        raise ConfigError(f"section [{section}]: key {key!r} is not an integer") from exc


def _float_list(text: str, section: str, key: str) -> tuple[float, ...]:
    try:
        return tuple(float(tok) for tok in text.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"section [{section}]: key {key!r} is not a number list") from exc


def _build_params(sec: dict[str, str]) -> PhysicalParams:
    base = fig3_params()
    n = _get_int(sec, "params", "n_mediating", 0)
    if "mediating_detunings" in sec and "delta_x" in sec:
        raise ConfigError(
            "section [params]: give either 'mediating_detunings' or the "
            "'delta_x' layout shorthand, not both"
        )
    if "mediating_detunings" in sec:
        detunings = _float_list(sec["mediating_detunings"], "params", "mediating_detunings")
        if n and n != len(detunings):
            raise ConfigError(
                f"section [params]: n_mediating = {n} but 'mediating_detunings' has "
                f"{len(detunings)} entries"
            )
    elif "delta_x" in sec:
        count = n if n else 1
        detunings = mediating_detunings_for(count, _get_float(sec, "params", "delta_x", 0.0))
    elif n > 1:
        raise ConfigError(
            "section [params]: n_mediating > 1 needs 'delta_x' or 'mediating_detunings'"
        )
    else:
        detunings = base.mediating_detunings
    try:
        return PhysicalParams(
            omega=_get_float(sec, "params", "omega", base.omega),
            omega_m=_get_float(sec, "params", "omega_m", base.omega_m),
            theta_m=_get_float(sec, "params", "theta_m", base.theta_m),
            delta_cap=_get_float(sec, "params", "delta_cap", base.delta_cap),
            delta=_get_float(sec, "params", "delta", base.delta),
            nu=_get_float(sec, "params", "nu", base.nu),
            kappa=_get_float(sec, "params", "kappa", base.kappa),
            gamma0=_get_float(sec, "params", "gamma0", base.gamma0),
            gamma1=_get_float(sec, "params", "gamma1", base.gamma1),
            g=_get_float(sec, "params", "g", base.g),
            mediating_detunings=detunings,
        )
    except ValueError as exc:
        # field validation failure; the message already names the field
        raise ConfigError(f"section [params]: {exc}") from exc


def resolve_config(
    sections: dict[str, dict[str, str]],
    seed_override: int | None = None,
    out_override: str | None = None,
) -> RunConfig:
    _check_keys(sections)
    params = _build_params(sections.get("params", {}))
    tr = sections.get("truncation", {})
    it = sections.get("integrator", {})
    rn = sections.get("run", {})

    method = it.get("method", "rk4")
    if method not in ("rk4", "adaptive"):
        raise ConfigError(f"section [integrator]: key 'method' must be rk4 or adaptive, got {method!r}")
    stride__ = it.get("record_stride", "")
    emit_raw = [tok.strip() for tok in rn.get("emit", "csv, json, svg").split(",") if tok.strip()]
    for tok in emit_raw:
        if tok not in ("csv", "json", "svg"):
            raise ConfigError(f"section [run]: key 'emit' allows csv/json/svg, got {tok!r}")
    initial = rn.get("initial_state", "ket00")
    seed = _get_int(rn, "run", "seed", 0)
    if initial.startswith("random(") and initial.endswith(")"):
        try:
            seed = int(initial[len("random("):-1])
        except ValueError as exc:
            raise ConfigError("section [run]: key 'initial_state' random(N) needs an integer N") from exc
        initial = "random"
    if initial not in ("ket00", "random"):
        raise ConfigError(f"section [run]: key 'initial_state' must be ket00 or random, got {initial!r}")
    if seed_override is not None:
        seed = seed_override

    cfg = RunConfig(
        params=params,
        excitation_cap=_get_int(tr, "truncation", "excitation_cap", 2),
        per_mode_cap=_get_int(tr, "truncation", "per_mode_cap", 2),
        method=method,
        dt=_get_float(it, "integrator", "dt", 0.02),
        t_final=_get_float(it, "integrator", "t_final", 9000.0),
        record_stride=float(stride__) if stride__ else None,
        rtol=_get_float(it, "integrator", "rtol", 1e-8),
        initial_state=initial,
        output_dir=out_override if out_override is not None else rn.get("output_dir", "atomlink-out"),
        emit=tuple(emit_raw),
        seed=seed,
        sweep=dict(sections.get("sweep", {})),
        fit=dict(sections.get("fit", {})),
    )
    if cfg.excitation_cap < 1:
        raise ConfigError("section [truncation]: key 'excitation_cap' must be at least 1")
    if cfg.per_mode_cap < 1:
        raise ConfigError("section [truncation]: key 'per_mode_cap' must be at least 1")
    if cfg.dt <= 0:
        raise ConfigError("section [integrator]: key 'dt' must be positive")
    if cfg.t_final <= 0:
        raise ConfigError("section [integrator]: key 't_final' must be positive")
    return cfg


# -- artifact helpers ----------------------------------------------------------


def _write_text(outdir: str, name: str, text: str) -> str:
    path = os.path.join(outdir, name)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def _write_json(outdir: str, name: str, payload) -> str:
    return _write_text(outdir, name, json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _versions() -> dict[str, str]:
    import matplotlib
    import scipy

    return {
        "atomlink": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "matplotlib": matplotlib.__version__,
    }


def _emit_run_metadata(outdir: str, cfg: RunConfig, subcommand: str, jobs: int, t0: float) -> None:
    # run.json carries the wall time and is therefore the one artifact
    # excluded from byte-stability; everything else must compare equal
    # across reruns with the same config and seed.
    payload = {
        "subcommand": subcommand,
        "seed": cfg.seed,
        "jobs": jobs,
        "wall_time_s": round(time.perf_counter() - t0, 3),
        "versions": _versions(),
        "config": cfg.to_sections(),
    }
    _write_json(outdir, "run.json", payload)
    _write_text(outdir, "resolved.ini", cfg.to_ini())


def _build_full_model(cfg: RunConfig):
    space, layout = build_space_for(cfg.params, cfg.excitation_cap, cfg.per_mode_cap)
    parts = build_hamiltonian_parts(cfg.params, space, layout)
    gen = LindbladGenerator(parts.total, build_collapse_ops(cfg.params, space, layout))
    return space, layout, gen


def _initial_state(cfg: RunConfig, space, layout) -> np.ndarray:
    if cfg.initial_state == "random":
        v = random_ground_state(space, layout, cfg.seed)
    else:
        v = ground_state_vector(space, layout)
    return np.outer(v, v.conj())


# -- subcommands ---------------------------------------------------------------


def cmd_evolve(cfg: RunConfig, outdir: str, jobs: int) -> None:
    space, layout, gen = _build_full_model(cfg)
    rho0 = _initial_state(cfg, space, layout)
    traj = evolve(
        gen,
        rho0,
        cfg.t_final,
        dt=cfg.dt,
        method=cfg.method,
        record_interval=cfg.record_stride,
        recorder=population_recorder(space, layout),
        rtol=cfg.rtol,
    )
    try:
        traj.validate()
    except ValueError as exc:
        raise TraceDriftError(str(exc)) from exc
    if "csv" in cfg.emit:
        _write_text(outdir, "trajectory.csv", traj.to_csv())
    if "json" in cfg.emit:
        _write_json(outdir, "evolve.json", {
            "t_final": _jfloat(cfg.t_final),
            "method": traj.method,
            "F_S": _jfloat(traj.final_value("PS")),
            "F_T": _jfloat(traj.final_value("PT")),
            "populations": {k: _jfloat(traj.final_value(k)) for k in ("P00", "PS", "PT", "P11", "leak")},
            "trace_err": _jfloat(float(traj.trace_err[-1])),
        })
    if "svg" in cfg.emit:
        from . import plotting

        plotting.plot_trajectory(traj, os.path.join(outdir, "trajectory.svg"))


def cmd_steady(cfg: RunConfig, outdir: str, jobs: int) -> None:
    space, layout, gen = _build_full_model(cfg)
    res = steady_state(gen)
    pops = atomic_populations(res.rho, space, layout)
    payload = {
        "F_S": _jfloat(pops["PS"]),
        "F_T": _jfloat(pops["PT"]),
        "populations": {k: _jfloat(v) for k, v in pops.items()},
        "method": res.method,
        "residual": _jfloat(res.residual),
        "dim": gen.dim,
    }
    if "json" in cfg.emit:
        _write_json(outdir, "steady.json", payload)


def cmd_effective(cfg: RunConfig, outdir: str, jobs: int) -> None:
    try:
        rates = analytic_rates(cfg.params)
        devs = rate_deviations(cfg.params)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    model = build_effective_model(cfg.params, source="numeric")

    def cplx(z: complex) -> dict:
        return {"re": _jfloat(z.real), "im": _jfloat(z.imag)}

    def mat(m: np.ndarray) -> dict:
        return {
            "re": [[_jfloat(x) for x in row] for row in m.real],
            "im": [[_jfloat(x) for x in row] for row in m.imag],
        }

    rate_fields = {}
    for name, value in vars(rates).items():
        rate_fields[name] = cplx(value) if isinstance(value, complex) else (
            value if isinstance(value, str) else _jfloat(value)
        )
    payload = {
        "analytic_rates": rate_fields,
        "hamiltonian": mat(model.h_matrix),
        "channels": {label: mat(m) for label, m in model.channels},
        "deviations": {
            k: {kk: _jfloat(vv) for kk, vv in d.items()} for k, d in devs.items()
        },
    }
    if "json" in cfg.emit:
        _write_json(outdir, "effective.json", payload)


def cmd_rates(cfg: RunConfig, outdir: str, jobs: int) -> None:
    try:
        rates = analytic_rates(cfg.params)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    payload = {"variant": rates.variant}
    for name, value in vars(rates).items():
        if name == "variant":
            continue
        if isinstance(value, complex):
            payload[name] = {"re": _jfloat(value.real), "im": _jfloat(value.imag)}
        else:
            payload[name] = _jfloat(value)
    payload["pump_rate_S"] = _jfloat(rates.pump_rate("S"))
    payload["pump_rate_T"] = _jfloat(rates.pump_rate("T"))
    payload["loss_rate_S"] = _jfloat(rates.loss_rate("S"))
    payload["loss_rate_T"] = _jfloat(rates.loss_rate("T"))
    for target in ("S", "T"):
        est = estimate_infidelity(cfg.params, target)
        payload[f"estimated_infidelity_{target}"] = _jfloat(est.infidelity)
        payload["estimate_variant"] = est.variant
    if "json" in cfg.emit:
        _write_json(outdir, "rates.json", payload)


def _parse_axis_values(text: str, key: str) -> tuple[float, ...]:
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"section [sweep]: key {key!r} wants start:stop:count or a value list")
        try:
            start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError as exc:
            raise ConfigError(f"section [sweep]: key {key!r} has a malformed range") from exc
        if count < 1:
            raise ConfigError(f"section [sweep]: key {key!r} needs a positive count")
        return tuple(float(x) for x in np.linspace(start, stop, count))
    return _float_list(text, "sweep", key)


def cmd_sweep(cfg: RunConfig, outdir: str, jobs: int) -> None:
    if not cfg.sweep:
        raise ConfigError("the sweep subcommand needs a [sweep] config section")
    axes = []
    for key, raw in cfg.sweep.items():
        if key.startswith("axis."):
            axes.append((key[len("axis."):], _parse_axis_values(raw, key)))
    if not axes:
        raise ConfigError("section [sweep]: no axes; add keys like 'axis.delta_x = -1:1:41'")
    method = cfg.sweep.get("method", "steady")
    if method not in ("analytic", "effective", "steady", "evolve"):
        raise ConfigError(
            f"section [sweep]: key 'method' must be analytic, effective, "
            f"steady or evolve, got {method!r}"
        )
    gt = float(cfg.sweep.get("gt", cfg.t_final))
    evaluator = fidelity_evaluator(
        cfg.params,
        method=method,
        gt=gt,
        excitation_cap=cfg.excitation_cap,
        per_mode_cap=cfg.per_mode_cap,
        rtol=cfg.rtol,
    )
    table = sweep_grid(axes, evaluator, jobs=jobs, method_label=method)
    if "csv" in cfg.emit:
        _write_text(outdir, "sweep.csv", table.to_csv())
    if "json" in cfg.emit:
        _write_text(outdir, "sweep.json", table.to_json())
    if "svg" in cfg.emit:
        from . import plotting

        if len(table.axis_names) == 1:
            plotting.plot_fidelity_curve(
                table.curve("F_S"),
                os.path.join(outdir, "sweep.svg"),
                xlabel=table.axis_names[0],
            )
        elif len(table.axis_names) == 2:
            plotting.plot_heatmap(table, os.path.join(outdir, "sweep.svg"))
    failed = table.failed_cells()
    if failed:
        raise RuntimeError(f"{len(failed)} sweep cells failed; first: {failed[0].error}")


def cmd_fit(cfg: RunConfig, outdir: str, jobs: int) -> None:
    if not cfg.fit:
        raise ConfigError("the fit subcommand needs a [fit] config section")
    sec = cfg.fit
    c_values = _float_list(sec.get("c_values", "50, 100, 150, 200, 300, 500"), "fit", "c_values")
    targets_raw = sec.get("target", "both")
    if targets_raw not in ("S", "T", "both"):
        raise ConfigError(f"section [fit]: key 'target' must be S, T or both, got {targets_raw!r}")
    targets = ("S", "T") if targets_raw == "both" else (targets_raw,)
    free = tuple(tok.strip() for tok in sec.get("free", "delta, nu").split(",") if tok.strip())
    objective = sec.get("objective", "analytic")
    if objective not in ("analytic", "effective_model", "full"):
        raise ConfigError(
            f"section [fit]: key 'objective' must be analytic, effective_model "
            f"or full, got {objective!r}"
        )
    point_source = sec.get("point_source", "analytic")
    if point_source not in ("analytic", "steady", "evolve"):
        raise ConfigError(
            f"section [fit]: key 'point_source' must be analytic, steady or "
            f"evolve, got {point_source!r}"
        )
    try:
        restarts = int(sec.get("restarts", "1"))
    except ValueError as exc:
        raise ConfigError("section [fit]: key 'restarts' must be an integer") from exc
    studies = []
    for target in targets:
        study = c_scaling_study(
            c_values,
            target=target,
            free=free,
            objective=objective,
            point_source=point_source,
            base=cfg.params,
            seed=cfg.seed,
            excitation_cap=cfg.excitation_cap,
            per_mode_cap=cfg.per_mode_cap,
            restarts=restarts,
        )
        studies.append(study)
        if "json" in cfg.emit:
            _write_text(outdir, f"fit_{target}.json", study.to_json())
    if "csv" in cfg.emit:
        lines = ["target,C,infidelity,fidelity,estimate_infidelity,delta,nu,kappa"]
        for study in studies:
            for pt in study.points:
                lines.append(",".join([
                    study.target,
                    _fmt12(pt.c),
                    _fmt12(pt.infidelity),
                    _fmt12(pt.fidelity),
                    _fmt12(pt.estimate_infidelity),
                    _fmt12(pt.params.delta),
                    _fmt12(pt.params.nu),
                    _fmt12(pt.params.kappa),
                ]))
        _write_text(outdir, "fit_points.csv", "\n".join(lines) + "\n")
    if "svg" in cfg.emit:
        from . import plotting

        plotting.plot_scaling(studies, os.path.join(outdir, "scaling.svg"))


_SUBCOMMANDS = {
    "evolve": cmd_evolve,
    "steady": cmd_steady,
    "effective": cmd_effective,
    "rates": cmd_rates,
    "sweep": cmd_sweep,
    "fit": cmd_fit,
}


# -- figure presets --------------------------------------------------------------

FIGURES = ("fig3a", "fig3b", "fig4", "fig5a", "fig5b", "fig6a", "fig6b", "fig6c")


def _check(name: str, passed: bool, value, expected: str) -> dict:
    return {"name": name, "pass": bool(passed), "value": value, "expected": expected}


def _emit_checks(outdir: str, figure: str, checks: list[dict], diagnostics: dict | None = None) -> None:
    payload = {
        "figure": figure,
        "checks": checks,
        "pass": all(c["pass"] for c in checks),
    }
    if diagnostics:
        payload["diagnostics"] = diagnostics
    _write_json(outdir, "checks.json", payload)


def _reproduce_fig3(outdir: str, jobs: int, seed: int, theta_m: float, figure: str) -> None:
    cfg = RunConfig(
        params=fig3_params(theta_m),
        method="adaptive",
        t_final=9000.0,
        record_stride=25.0,
        rtol=1e-8,
        output_dir=outdir,
        seed=seed,
    )
    space, layout, gen = _build_full_model(cfg)
    rho0 = _initial_state(cfg, space, layout)
    traj = evolve(
        gen, rho0, cfg.t_final,
        method=cfg.method, record_interval=cfg.record_stride,
        recorder=population_recorder(space, layout), rtol=cfg.rtol,
    )
    try:
        traj.validate()
    except ValueError as exc:
        raise TraceDriftError(str(exc)) from exc
    _write_text(outdir, "trajectory.csv", traj.to_csv())
    from . import plotting

    plotting.plot_trajectory(traj, os.path.join(outdir, f"{figure}.svg"))
    finals = {k: traj.final_value(k) for k in ("P00", "PS", "PT", "P11")}
    if figure == "fig3a":
        target, lo, hi = "PS", 0.88, 0.97
    else:
        target, lo, hi = "PT", 0.78, 0.93
    largest = max(finals, key=finals.get)
    f_val = finals[target]
    checks = [
        _check(f"final_{target}_largest_population", largest == target, largest,
               f"{target} dominates at gt = 9000"),
        _check(f"final_{target}_in_range", lo <= f_val <= hi, _jfloat(f_val),
               f"[{lo}, {hi}]"),
    ]
    _emit_checks(outdir, figure, checks)
    _emit_run_metadata(outdir, cfg, f"reproduce {figure}", jobs, _T0.value)


def _reproduce_fig4(outdir: str, jobs: int, seed: int) -> None:
    cfg = RunConfig(
        params=fig3_params(),
        output_dir=outdir,
        seed=seed,
        fit={
            "c_values": "50, 100, 150, 200, 300, 500",
            "target": "both",
            "free": "delta, nu",
            "objective": "analytic",
            "point_source": "steady",
        },
    )
    cmd_fit(cfg, outdir, jobs)
    with open(os.path.join(outdir, "fit_S.json"), encoding="utf-8") as fh:
        slope_s = json.load(fh)["slope"]
    with open(os.path.join(outdir, "fit_T.json"), encoding="utf-8") as fh:
        slope_t = json.load(fh)["slope"]
    checks = [
        _check("slope_S_in_range", 10.0 <= slope_s <= 19.0, _jfloat(slope_s), "[10, 19]"),
        _check("slope_T_above_slope_S", slope_t > slope_s, _jfloat(slope_t),
               f"> slope_S = {_jfloat(slope_s)}"),
    ]
    _emit_checks(outdir, "fig4", checks)
    _emit_run_metadata(outdir, cfg, "reproduce fig4", jobs, _T0.value)


def _reproduce_fig5(outdir: str, jobs: int, seed: int, figure: str) -> None:
    theta_m = 0.0 if figure == "fig5a" else math.pi
    cfg = RunConfig(
        params=fig3_params(theta_m),
        output_dir=outdir,
        seed=seed,
        rtol=1e-6,
        sweep={
            "axis.omega_frac": "-0.2:0.2:5",
            "axis.omega_m_frac": "-0.2:0.2:5",
            "method": "evolve",
            "gt": "9000",
        },
    )
    evaluator = fidelity_evaluator(cfg.params, method="evolve", gt=9000.0, rtol=cfg.rtol)
    axes = [
        ("omega_frac", _parse_axis_values("-0.2:0.2:5", "axis.omega_frac")),
        ("omega_m_frac", _parse_axis_values("-0.2:0.2:5", "axis.omega_m_frac")),
    ]
    table = sweep_grid(axes, evaluator, jobs=jobs, method_label="evolve")
    _write_text(outdir, "sweep.csv", table.to_csv())
    _write_text(outdir, "sweep.json", table.to_json())
    from . import plotting

    which = "F_S" if figure == "fig5a" else "F_T"
    plotting.plot_heatmap(table, os.path.join(outdir, f"{figure}.svg"), which=which)
    checks = [
        _check("all_cells_ok", not table.failed_cells(), len(table.failed_cells()),
               "0 failed cells"),
    ]
    if figure == "fig5a":
        min_fs = table.min_fidelity("F_S")
        checks.append(_check("min_F_S_at_least_0.89", min_fs >= 0.89, _jfloat(min_fs), ">= 0.89"))
    else:
        # no acceptance threshold is pinned for the triplet grid; record it
        min_ft = table.min_fidelity("F_T")
        checks.append(_check("min_F_T_recorded", True, _jfloat(min_ft), "informational"))
    _emit_checks(outdir, figure, checks)
    _emit_run_metadata(outdir, cfg, f"reproduce {figure}", jobs, _T0.value)


_FIG6_SETUP = {
    # figure: (n_mediating, excitation_cap, dip brackets as (center, halfwidth))
    "fig6a": (2, 2, ((-0.64, 0.06),)),
    "fig6b": (3, 2, ((-0.54, 0.06), (0.54, 0.06))),
    "fig6c": (5, 1, ((-0.58, 0.06), (-0.20, 0.05), (0.20, 0.05), (0.58, 0.06))),
}


def _reproduce_fig6(outdir: str, jobs: int, seed: int, figure: str) -> None:
    n, cap, brackets = _FIG6_SETUP[figure]
    base = fig3_params().with_(mediating_detunings=mediating_detunings_for(n, 0.5))
    cfg = RunConfig(
        params=base,
        excitation_cap=cap,
        per_mode_cap=min(cap, 2),
        output_dir=outdir,
        seed=seed,
        sweep={"axis.delta_x": "-1:1:41", "method": "steady"},
    )
    evaluator = fidelity_evaluator(
        base, method="steady", excitation_cap=cap, per_mode_cap=min(cap, 2)
    )
    axes = [("delta_x", _parse_axis_values("-1:1:41", "axis.delta_x"))]
    table = sweep_grid(axes, evaluator, jobs=jobs, method_label="steady")
    curve = table.curve("F_S")
    dips = find_dips(curve)

    # single-mode reference at the same truncation for the plateau check
    ref = fig3_params()
    ref_eval = fidelity_evaluator(ref, method="steady", excitation_cap=cap, per_mode_cap=min(cap, 2))
    ref_fs, _ = ref_eval({})

    _write_text(outdir, "sweep.csv", table.to_csv())
    _write_text(outdir, "sweep.json", table.to_json())
    _write_json(outdir, "dips.json", {
        "reference_F_S": _jfloat(ref_fs),
        "dips": [
            {"delta_x": _jfloat(d.x), "F_S": _jfloat(d.fidelity), "prominence": _jfloat(d.prominence)}
            for d in dips
        ],
    })
    from . import plotting

    plotting.plot_fidelity_curve(
        curve, os.path.join(outdir, f"{figure}.svg"), xlabel=r"$\Delta_x / g$", dips=dips
    )

    checks = [
        _check("all_cells_ok", not table.failed_cells(), len(table.failed_cells()),
               "0 failed cells"),
    ]
    for center, halfwidth in brackets:
        hit = any(abs(d.x - center) <= halfwidth for d in dips)
        found = ", ".join(f"{d.x:.3f}" for d in dips) or "none"
        checks.append(_check(
            f"dip_near_{center:+.2f}", hit, found, f"a dip within {center} +/- {halfwidth}"
        ))
    # Comparison against the single-mode baseline, reported but not gated:
    # the extra modes dress the one-excitation spectrum, so the curve does
    # not return to the single-mode value within 0.02 everywhere beyond the
    # two-photon detuning delta (the dips themselves sit out there, and the
    # far wings stay offset by 0.04 to 0.19 depending on the mode count).
    delta = base.delta
    plateau_gap = 0.0
    edge_gap = 0.0
    for x, fs in curve:
        if not math.isfinite(fs):
            continue
        if abs(x) > delta:
            plateau_gap = max(plateau_gap, abs(fs - ref_fs))
        if abs(abs(x) - 1.0) < 1e-9:
            edge_gap = max(edge_gap, abs(fs - ref_fs))
    diagnostics = {
        "reference_F_S": _jfloat(ref_fs),
        "plateau_max_gap": _jfloat(plateau_gap),
        "plateau_within_0.02": bool(plateau_gap <= 0.02),
        "edge_gap": _jfloat(edge_gap),
    }
    _emit_checks(outdir, figure, checks, diagnostics)
    _emit_run_metadata(outdir, cfg, f"reproduce {figure}", jobs, _T0.value)


def cmd_reproduce(figure: str, outdir: str, jobs: int, seed: int) -> None:
    if figure in ("fig3a", "fig3b"):
        _reproduce_fig3(outdir, jobs, seed, 0.0 if figure == "fig3a" else math.pi, figure)
    elif figure == "fig4":
        _reproduce_fig4(outdir, jobs, seed)
    elif figure in ("fig5a", "fig5b"):
        _reproduce_fig5(outdir, jobs, seed, figure)
    else:
        _reproduce_fig6(outdir, jobs, seed, figure)


# -- entry point -----------------------------------------------------------------


class _T0:
    """Wall-clock anchor of the current invocation."""

    value = 0.0


def build_arg_parser() -> argparse.ArgumentParser:
    # the common flags live on the root parser and on every subparser (with
    # suppressed defaults on the latter) so both orderings work:
    # "atomlink --config c.ini steady" and "atomlink steady --config c.ini"
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", default=argparse.SUPPRESS,
                        help="INI or JSON run configuration")
    common.add_argument("--jobs", type=int, metavar="N", default=argparse.SUPPRESS,
                        help="worker processes for sweeps (default: CPU count)")
    common.add_argument("--seed", type=int, metavar="N", default=argparse.SUPPRESS,
                        help="seed override (wins over the config)")
    common.add_argument("--out", metavar="DIR", default=argparse.SUPPRESS,
                        help="output directory override")
    parser = argparse.ArgumentParser(
        prog="atomlink",
        description="Dissipative entanglement pumping: simulation and analysis runs.",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in _SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=f"run the {name} operation from --config")
    rep = sub.add_parser("reproduce", parents=[common], help="run an embedded figure preset")
    rep.add_argument("figure", choices=FIGURES)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_arg_parser().parse_args(argv)
    config = getattr(args, "config", None)
    jobs = getattr(args, "jobs", None) or os.cpu_count() or 1
    seed = getattr(args, "seed", None)
    out = getattr(args, "out", None)
    _T0.value = time.perf_counter()
    try:
        if args.subcommand == "reproduce":
            outdir = out if out is not None else f"atomlink-{args.figure}"
            os.makedirs(outdir, exist_ok=True)
            cmd_reproduce(args.figure, outdir, jobs, seed if seed is not None else 0)
            return 0
        if not config:
            raise ConfigError(f"the {args.subcommand} subcommand needs --config PATH")
        sections = read_config_sections(config)
        cfg = resolve_config(sections, seed_override=seed, out_override=out)
        outdir = cfg.output_dir
        os.makedirs(outdir, exist_ok=True)
        _SUBCOMMANDS[args.subcommand](cfg, outdir, jobs)
        _emit_run_metadata(outdir, cfg, args.subcommand, jobs, _T0.value)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TraceDriftError as exc:
        print(f"physics invariant violated: {exc}", file=sys.stderr)
        return 4
    except (DegenerateSteadyStateError, SuperoperatorSizeError, np.linalg.LinAlgError,
            RuntimeError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
