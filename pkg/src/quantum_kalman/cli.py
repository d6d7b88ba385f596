"""Command-line front end: ``qkf run``, ``qkf analyze`` and ``qkf verify``.

Exit codes: 0 success, 1 a verification check failed, 2 bad config or
system file, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from .errors import ConfigError, IndefiniteBlock, QuantumKalmanError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

_COMMON = {"dt": 1e-3, "steps": 20000, "seed": 0, "paths": 100, "record_every": 100}

SCHEMAS = {
    "cavity": {"K": 1.0, "F": 0.0, **_COMMON},
    "driven-cavity": {"K": 1.0, "F": 0.0, "hx": 0.0, "hy": 0.0, **_COMMON},
    "inefficient-cavity": {"K": 1.0, "delta": 0.0, **_COMMON},
    "spin-qnd-local": {"S": 10.0, "K": 1.0, **_COMMON},
    "spin-entangle": {"S": 10.0, "K": 1.0, "k_gain": None, "dt": 1e-3, "T": 2.0,
                      "paths": 100, "seed": 0, "threshold_frac": 0.05, "h_max": None,
                      "k_local": 1.0, "record_every": 10},
}
_INTS = {"steps", "seed", "paths", "record_every"}
_POSITIVE = {"dt", "steps", "paths", "record_every", "K", "S", "T"}


def version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


@dataclass
class RunManifest:
    scenario: str
    config: dict
    seed: int
    dt: float
    versions: str = field(default_factory=version)
    outputs: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({"scenario": self.scenario, "config": self.config, "seed": self.seed,
                           "dt": self.dt, "versions": self.versions,
                           "outputs": self.outputs}, indent=2)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)] if obj.imag else float(obj.real)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2)


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------

def load_config(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return validate_config(raw)


def validate_config(raw: dict) -> dict:
    scenario = raw.get("scenario")
    if scenario not in SCHEMAS:
        raise ConfigError(f"field 'scenario': expected one of {sorted(SCHEMAS)}, got {scenario!r}")
    schema = SCHEMAS[scenario]
    cfg = {"scenario": scenario}
    for key, value in raw.items():
        if key == "scenario":
            continue
        if key not in schema:
            raise ConfigError(f"field '{key}': unknown for scenario '{scenario}'")
        default = schema[key]
        if value is None and default is None:
            cfg[key] = None
            continue
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"field '{key}': expected a number, got {value!r}")
        if key in _INTS:
            if float(value) != int(value):
                raise ConfigError(f"field '{key}': expected an integer, got {value!r}")
            value = int(value)
        else:
            value = float(value)
        if not math.isfinite(value):
            raise ConfigError(f"field '{key}': must be finite")
        if key in _POSITIVE and value <= 0:
            raise ConfigError(f"field '{key}': must be positive, got {value!r}")
        if key in ("seed", "delta", "threshold_frac", "k_gain", "h_max", "k_local") and value < 0:
            raise ConfigError(f"field '{key}': must be non-negative, got {value!r}")
        cfg[key] = value
    for key, default in schema.items():
        cfg.setdefault(key, default)
    if scenario in ("cavity", "driven-cavity") and cfg["F"] <= -cfg["K"] ** 2 / 2:
        raise ConfigError(f"field 'F': must exceed -K^2/2 = {-cfg['K'] ** 2 / 2}")
    if scenario in ("spin-qnd-local", "spin-entangle") and 1 / (2 * cfg["S"] + 1) > 0.05:
        raise ConfigError("field 'S': needs 1/(2S+1) <= 0.05, i.e. S >= 9.5")
    if scenario in ("spin-qnd-local", "spin-entangle") and float(2 * cfg["S"]) != int(2 * cfg["S"]):
        raise ConfigError("field 'S': must be an integer or half-integer")
    return cfg


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------

def _linear_run(cfg: dict, workers: int, traces: int):
    from . import quantum_linear as ql
    from .filtering import run_filtered_experiment
    from .riccati import RiccatiSeries

    sc = cfg["scenario"]
    if sc == "cavity":
        msys = ql.measured_system(ql.canonical_system(cfg["K"], cfg["F"]))
    elif sc == "driven-cavity":
        base = ql.measured_system(ql.canonical_system(cfg["K"], cfg["F"]))
        msys = ql.MeasuredQuantumSystem(base.model, np.array([cfg["hx"], cfg["hy"]]),
                                        qsys=base.qsys)
    elif sc == "inefficient-cavity":
        msys = ql.scenario_inefficient(cfg["K"], cfg["delta"])
    else:
        from .spin_control import local_qnd_filter
        msys = ql.MeasuredQuantumSystem(local_qnd_filter(cfg["S"], cfg["K"]))
    model = msys.model
    if sc == "spin-qnd-local":
        P0 = np.diag([cfg["S"] / 2, cfg["S"] / 2]) * (2 / (2 * cfg["S"] + 1))
    else:
        P0 = ql.stationary_from_riccati(msys) if sc != "inefficient-cavity" else np.eye(2)
    x0 = np.zeros(model.n)
    res = run_filtered_experiment(
        model, None, x0, P0, cfg["dt"], cfg["steps"], cfg["seed"], n_paths=cfg["paths"],
        drive=msys.drive, record_every=cfg["record_every"], workers=workers)
    files = {f"trajectory_{i:04d}.csv": res.to_csv(i) for i in range(min(traces, cfg["paths"]))}
    files["covariance.csv"] = RiccatiSeries(res.times, res.P).to_csv()
    summary = {
        "scenario": sc,
        "P_final": res.P[-1],
        "error_covariance": res.error_moment,
        "error_samples": res.error_samples,
        "innovation_autocorrelation": res.whiteness.autocorrelation()[0],
        "innovation_band": res.whiteness.band(),
        "innovation_white": res.whiteness.white(),
    }
    if sc in ("cavity", "driven-cavity"):
        Ps = ql.stationary_covariance(cfg["K"], cfg["F"])
        summary["P_stationary"] = Ps
        summary["relative_error"] = float(np.linalg.norm(res.error_moment - Ps) / np.linalg.norm(Ps))
    if sc == "inefficient-cavity":
        summary["update_coefficient"] = ql.update_coefficient(msys)
    return files, summary


def _spin_entangle(cfg: dict, traces: int):
    from .spin_control import entanglement_experiment
    rep = entanglement_experiment(
        cfg["S"], cfg["K"], cfg["k_gain"], cfg["dt"], cfg["T"], cfg["seed"], cfg["paths"],
        cfg["threshold_frac"], cfg["h_max"], cfg["k_local"], cfg["record_every"])
    files = {f"trace_{i:04d}.csv": rep.trace_csv(i) for i in range(min(traces, cfg["paths"]))}
    return files, rep.summary()


def run(config_path: str, out_dir: str | None = None, workers: int = 1,
        traces: int = 1, verbose: bool = False) -> int:
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(out_dir) if out_dir else Path(config_path).with_suffix("").parent / (
        Path(config_path).stem + "_out")
    t0 = time.perf_counter()
    try:
        if cfg["scenario"] == "spin-entangle":
            files, summary = _spin_entangle(cfg, traces)
        else:
            files, summary = _linear_run(cfg, workers, traces)
    except (QuantumKalmanError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure in scenario '{cfg['scenario']}' "
              f"({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    summary["elapsed_s"] = time.perf_counter() - t0
    files["summary.json"] = dumps(summary)
    manifest = RunManifest(cfg["scenario"], cfg, cfg["seed"], cfg["dt"],
                           outputs=sorted(files) + ["manifest.json"])
    files["manifest.json"] = manifest.to_json()
    out.mkdir(parents=True, exist_ok=True)
    for name in sorted(files):
        (out / name).write_text(files[name])
    if verbose:
        print(files["summary.json"])
    print(f"wrote {len(files)} files to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

def analyze_systems(obj: dict) -> dict:
    """Report for one system or a ``{"Gx": ..., "Gy": ...}`` phase pair."""
    from . import statespace as ss
    from .filtering import LinearFilterModel
    from .quantum_linear import verify_duality
    from .riccati import detectability_condition, filter_hamiltonian, ric_shift_check

    def one(sys):
        rep = ss.structural_tests(sys)
        d = {"poles": ss.poles(sys), "stable": rep.stable, "controllable": rep.controllable,
             "observable": rep.observable, "stabilizable": rep.stabilizable,
             "detectable": rep.detectable}
        if sys.is_siso:
            d["zeros"] = ss.zeros(sys)
        return d

    if set(obj) == {"Gx", "Gy"}:
        gx, gy = ss.StateSpaceSystem.from_dict(obj["Gx"]), ss.StateSpaceSystem.from_dict(obj["Gy"])
        if not (gx.is_siso and gy.is_siso):
            raise ConfigError("analyze: Gx and Gy must both be SISO")
        dual = verify_duality(gx, gy)
        nx, ny = gx.nstates, gy.nstates
        A = np.block([[gx.A, np.zeros((nx, ny))], [np.zeros((ny, nx)), gy.A]])
        B = np.block([[gx.B, np.zeros((nx, 1))], [np.zeros((ny, 1)), gy.B]])
        C = np.block([[gx.C, np.zeros((1, ny))], [np.zeros((1, nx + ny))]])
        D = np.array([[gx.D[0, 0], 0.0], [0.0, 0.0]])
        if np.iscomplexobj(A) or np.iscomplexobj(B) or np.iscomplexobj(C) or np.iscomplexobj(D):
            raise ConfigError("analyze: pair analysis needs real matrices")
        model = LinearFilterModel(A, B, C, D, np.eye(2))
        H = filter_hamiltonian(model.A, model.B, model.C, model.D, model.S_corr)
        shift = ric_shift_check(H)
        try:
            det = detectability_condition(shift.shifted)
            detect = {"detectable": det.detectable,
                      "no_imaginary_uncontrollable": det.no_imaginary_uncontrollable}
        except IndefiniteBlock as exc:
            detect = {"error": str(exc)}
        return {"kind": "pair", "Gx": one(gx), "Gy": one(gy),
                "duality": {"max_residual": dual.max_residual,
                            "pole_zero_symmetric": dual.pole_zero_symmetric,
                            "norm_tradeoff_ok": dual.norm_tradeoff_ok,
                            "holds": dual.holds},
                "uncertainty": {"X": shift.X, "X_shifted": shift.X_shifted,
                                "shift_error": shift.shift_error,
                                "min_eigenvalue": shift.min_eig, "holds": shift.holds},
                "detectability": detect}
    sys = ss.StateSpaceSystem.from_dict(obj)
    return {"kind": "system", **one(sys)}


def analyze(system_path: str, out_path: str | None = None) -> int:
    try:
        obj = json.loads(Path(system_path).read_text())
        if not isinstance(obj, dict):
            raise ConfigError("top level must be a JSON object")
        report = analyze_systems(obj)
    except OSError as exc:
        print(f"config error: {system_path}: {exc.strerror}", file=sys.stderr)
        return EXIT_CONFIG
    except json.JSONDecodeError as exc:
        print(f"config error: {system_path}:{exc.lineno}:{exc.colno}: {exc.msg}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, TypeError, KeyError, ValueError) as exc:
        print(f"config error: {system_path}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (QuantumKalmanError, ArithmeticError) as exc:
        print(f"numerical failure in analyze ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    text = dumps(report)
    if out_path:
        Path(out_path).write_text(text)
    print(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def _check_duality():
    from .quantum_linear import canonical_system, verify_duality
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        Cx = rng.uniform(0.1, 10)
        F = rng.uniform(-Cx**2 / 2 + 0.01, 10)
        q = canonical_system(Cx, F)
        worst = max(worst, verify_duality(q.Gx, q.Gy, seed=int(rng.integers(1 << 31))).max_residual)
    return worst < 1e-9, f"max residual {worst:.2e}"


def _stationary_grid():
    Cs = [0.5, 1.0, 2.0, 3.0, 5.0]
    return [(Cx, -Cx**2 / 2 + f * Cx**2) for Cx in Cs for f in (0.05, 0.3, 0.5, 1.0, 3.0)]


def _check_stationary():
    from .quantum_linear import canonical_system, measured_system, stationary_covariance
    from .quantum_linear import stationary_from_riccati
    worst = max(float(np.abs(stationary_from_riccati(measured_system(canonical_system(c, f)))
                             - stationary_covariance(c, f)).max())
                for c, f in _stationary_grid())
    return worst < 1e-8, f"max deviation {worst:.2e}"


def _check_shift():
    from .quantum_linear import canonical_system, measured_system
    from .riccati import filter_hamiltonian, ric_shift_check
    worst, ok = 0.0, True
    for c, f in _stationary_grid():
        m = measured_system(canonical_system(c, f)).model
        chk = ric_shift_check(filter_hamiltonian(m.A, m.B, m.C, m.D, m.S_corr))
        worst = max(worst, chk.shift_error)
        ok &= chk.holds
    return ok and worst < 1e-8, f"shift residual {worst:.2e}, all PSD: {ok}"


def _check_identities():
    from .spin import SpinAlgebra, verify_appendix_identities
    worst = max(max(r.commutator_y, r.commutator_z) for r in
                (verify_appendix_identities(SpinAlgebra(t), with_anticommutator=False)
                 for t in (2, 3, 4)))
    return worst < 1e-8, f"max residual {worst:.2e}"


def _check_a3():
    from .spin import anticommutator_convergence
    r = anticommutator_convergence((40, 80)).ratio
    return 6 <= r <= 10, f"S=20->40 ratio {r:.3f}"


def _check_sgar():
    from .spin import correspondence_convergence
    r = correspondence_convergence((20, 40)).ratio
    rp = correspondence_convergence((20, 40), state="profile").ratio
    return 2.5 <= r <= 6, f"S=10->20 ratio {r:.3f} (fixed profile {rp:.3f})"


def _check_spin_stationary():
    from .spin_control import (integrate_moments, relative_error, stationary_moments,
                               stationary_riccati)
    P, V = integrate_moments(10, 1)
    st = stationary_moments(10, 1)
    eP, eV = relative_error(P, st.P_s), relative_error(V, st.V_s)
    eR = relative_error(stationary_riccati(10, 1).X.real, st.P_s)
    return max(eP, eV, eR) < 1e-6, f"P {eP:.1e}, V {eV:.1e}, ric {eR:.1e}"


CHECKS = [
    ("duality sweep", _check_duality),
    ("stationary closed form", _check_stationary),
    ("uncertainty shift identity", _check_shift),
    ("kernel commutator identities", _check_identities),
    ("anticommutator eps^3 law", _check_a3),
    ("correspondence eps^2 law", _check_sgar),
    ("spin stationary moments", _check_spin_stationary),
]


def verify() -> int:
    failed = 0
    width = max(len(n) for n, _ in CHECKS)
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failed check, reported in the table
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        failed += not ok
        print(f"{name:<{width}}  {'PASS' if ok else 'FAIL'}  {detail}")
    return EXIT_FAIL if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qkf", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario from a JSON config")
    r.add_argument("config")
    r.add_argument("-o", "--out", help="output directory (default: <config>_out)")
    r.add_argument("-j", "--workers", type=int, default=1, help="threads for path batches")
    r.add_argument("--traces", type=int, default=1, help="number of per-path CSV traces")
    r.add_argument("-v", "--verbose", action="store_true")
    a = sub.add_parser("analyze", help="report on a system or a phase pair")
    a.add_argument("system")
    a.add_argument("-o", "--out", help="also write the JSON report here")
    sub.add_parser("verify", help="run the built-in identity checks")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return run(args.config, args.out, args.workers, args.traces, args.verbose)
    if args.command == "analyze":
        return analyze(args.system, args.out)
    return verify()


if __name__ == "__main__":
    sys.exit(main())
