"""Scenario runner for the chain toolkit.

Verbs: counterexample, reduce, spectrum, stabilize, crossvalidate, decouple.
Configs are JSON files (the schema is validated with per-field messages);
outputs are a resolved-parameter manifest, deterministic CSVs and, when
matplotlib cooperates, SVG plots.  Exit codes: 0 success, 2 config error,
3 assumption violated, 4 numeric failure.
"""

import argparse
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .chainspec import (BoundaryQ, BoundaryRho, ChainSpec, Config,
                        SpatialProfile, counterexample_spec, seeded_spec)
from .control import (closed_loop_ide, closed_loop_pde, design_feedback,
                      estimate_decay, gains_to_csv)
from .errors import (AssumptionError, HypchainError, SpecValidationError)
from .ide import series_to_csv
from .pde import bump, make_state, simulate
from .reduction import (decouple_u1u4, make_decoupling_controller, reduce,
                        validate_reduction)
from .spectral import (Rect, build_characteristic_triple, check_common_zeros,
                       default_rect, zeros_to_csv)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ASSUMPTION = 3
EXIT_NUMERIC = 4


# ---------------------------------------------------------------------------
# Config schema
# ---------------------------------------------------------------------------

_TOP_KEYS = {"scenario", "spec", "counterexample", "h", "h_id", "T",
             "h_design", "target_margin", "rect", "tol", "seed", "out",
             "run_pde"}
_SPEC_KEYS = {"config", "seed", "lambdas", "mus", "sigma_plus", "sigma_minus",
              "q", "rho"}
_CE_KEYS = {"lambdas", "mus", "rho33"}
_Q_KEYS = {"q11", "q21", "q22", "q32", "q33"}
_RHO_KEYS = {"rho11", "rho12", "rho22", "rho23", "rho33"}
_RECT_KEYS = {"re_min", "re_max", "im_min", "im_max"}


class ConfigError(Exception):
    """Carries the per-field error list of a rejected config file."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


def _line_of(text, key):
    """Best-effort 1-based line number of a key in the raw config text."""
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return i
    return None


def _fmt(path, msg, line):
    loc = f" (line {line})" if line else ""
    return f"{path}: {msg}{loc}"


def _check_keys(block, allowed, path, text, errors):
    if not isinstance(block, dict):
        errors.append(_fmt(path, "expected an object", None))
        return False
    for k in block:
        if k not in allowed:
            errors.append(_fmt(f"{path}.{k}", "unknown key", _line_of(text, k)))
    return True


def _check_speeds(vals, path, text, errors):
    if not (isinstance(vals, (list, tuple)) and len(vals) == 3):
        errors.append(_fmt(path, "expected a list of 3 speeds",
                           _line_of(text, path.split(".")[-1])))
        return None
    for i, v in enumerate(vals):
        if not isinstance(v, (int, float)) or v <= 0.0:
            errors.append(_fmt(f"{path}[{i}]", "speed must be positive",
                               _line_of(text, path.split(".")[-1])))
            return None
    return tuple(float(v) for v in vals)


def _profile(entry, path, text, errors):
    if entry is None:
        return SpatialProfile.constant(0.0)
    if isinstance(entry, (int, float)):
        return SpatialProfile.constant(float(entry))
    if isinstance(entry, list) and len(entry) >= 2 and \
            all(isinstance(v, (int, float)) for v in entry):
        return SpatialProfile([float(v) for v in entry])
    errors.append(_fmt(path, "expected a number or a list of >= 2 samples",
                       None))
    return SpatialProfile.constant(0.0)


def _build_spec(block, scenario, text, errors):
    if not _check_keys(block, _SPEC_KEYS, "spec", text, errors):
        return None
    if "seed" in block:
        extra = set(block) - {"config", "seed"}
        if extra:
            errors.append(_fmt("spec", "seeded spec takes only config and "
                               f"seed (got {sorted(extra)})", None))
            return None
        try:
            cfg = Config(block.get("config", "U1U3"))
        except ValueError:
            errors.append(_fmt("spec.config",
                               f"unknown configuration {block.get('config')!r}",
                               _line_of(text, "config")))
            return None
        return seeded_spec(cfg, int(block["seed"]))
    try:
        cfg = Config(block.get("config", "U1U3"))
    except ValueError:
        errors.append(_fmt("spec.config",
                           f"unknown configuration {block.get('config')!r}",
                           _line_of(text, "config")))
        return None
    lambdas = _check_speeds(block.get("lambdas", (1.0, 1.0, 1.0)),
                            "spec.lambdas", text, errors)
    mus = _check_speeds(block.get("mus", (1.0, 1.0, 1.0)),
                        "spec.mus", text, errors)
    if lambdas is None or mus is None:
        return None
    qd, rd = block.get("q", {}), block.get("rho", {})
    if not _check_keys(qd, _Q_KEYS, "spec.q", text, errors):
        return None
    if not _check_keys(rd, _RHO_KEYS, "spec.rho", text, errors):
        return None
    sp = block.get("sigma_plus", [0.0, 0.0, 0.0])
    sm = block.get("sigma_minus", [0.0, 0.0, 0.0])
    if not (isinstance(sp, list) and len(sp) == 3):
        errors.append(_fmt("spec.sigma_plus", "expected 3 entries", None))
        return None
    if not (isinstance(sm, list) and len(sm) == 3):
        errors.append(_fmt("spec.sigma_minus", "expected 3 entries", None))
        return None
    try:
        spec = ChainSpec(
            lambdas=lambdas, mus=mus,
            sigma_plus=tuple(_profile(e, f"spec.sigma_plus[{i}]", text, errors)
                             for i, e in enumerate(sp)),
            sigma_minus=tuple(_profile(e, f"spec.sigma_minus[{i}]", text,
                                       errors) for i, e in enumerate(sm)),
            q=BoundaryQ(**{k: float(qd.get(k, 0.0)) for k in _Q_KEYS}),
            rho=BoundaryRho(**{k: float(rd.get(k, 0.0)) for k in _RHO_KEYS}),
            config=cfg,
        )
    except (SpecValidationError, TypeError, ValueError) as e:
        errors.append(_fmt("spec", str(e), None))
        return None
    if scenario == "stabilize" and cfg is Config.U4U2 and spec.q.q32 == 0.0:
        errors.append(_fmt(
            "spec.q.q32", "must be non-zero: the (U4, U2) input chain "
            "propagates the designed input through the 2-3 boundary, and a "
            "zero coupling breaks the full-actuation assumption",
            _line_of(text, "q32")))
        return None
    return spec


def validate_config(path, scenario=None):
    """Load, schema-check and normalize a JSON scenario config.

    Returns the normalized dict (with defaults resolved and the built
    ChainSpec under "spec_obj"); raises ConfigError with per-field
    messages otherwise.
    """
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError([f"invalid JSON: {e.msg} (line {e.lineno})"])
    errors = []
    if not _check_keys(raw, _TOP_KEYS, "config", text, errors):
        raise ConfigError(errors)
    if scenario is None:
        scenario = raw.get("scenario")
    elif "scenario" in raw and raw["scenario"] != scenario:
        errors.append(_fmt("scenario",
                           f"config says {raw['scenario']!r} but the verb "
                           f"is {scenario!r}", _line_of(text, "scenario")))
    cfg = {
        "scenario": scenario,
        "h": float(raw.get("h", 1e-3)),
        "h_id": float(raw.get("h_id", 1e-3)),
        "T": raw.get("T"),
        "h_design": raw.get("h_design"),
        "target_margin": float(raw.get("target_margin", 1e-3)),
        "tol": float(raw.get("tol", 5e-3)),
        "seed": int(raw.get("seed", 0)),
        "out": raw.get("out"),
        "run_pde": bool(raw.get("run_pde", False)),
        "rect": None,
    }
    if cfg["h"] <= 0:
        errors.append(_fmt("h", "step must be positive", _line_of(text, "h")))
    if "rect" in raw:
        if _check_keys(raw["rect"], _RECT_KEYS, "rect", text, errors) and \
                _RECT_KEYS <= set(raw["rect"]):
            cfg["rect"] = Rect(*(float(raw["rect"][k])
                                 for k in ("re_min", "re_max",
                                           "im_min", "im_max")))
        elif not errors:
            errors.append(_fmt("rect", "needs re_min, re_max, im_min, im_max",
                               _line_of(text, "rect")))
    if "counterexample" in raw:
        _check_keys(raw["counterexample"], _CE_KEYS, "counterexample",
                    text, errors)
    if "spec" in raw:
        spec = _build_spec(raw["spec"], scenario, text, errors)
    else:
        ce = raw.get("counterexample", {})
        spec = counterexample_spec(
            lambdas=ce.get("lambdas", (1.0, 1.0, 1.0)),
            mus=ce.get("mus", (1.0, 1.0, 1.0)),
            rho33=float(ce.get("rho33", 1.0)))
    if errors:
        raise ConfigError(errors)
    cfg["spec_obj"] = spec
    cfg["raw"] = raw
    return cfg


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def _write(out, name, text):
    p = Path(out) / name
    p.write_text(text)
    return str(p)


def _kernel_csv(ker):
    buf = io.StringIO()
    buf.write("nu,value\n")
    for nu, val in zip(ker.nodes, ker.values):
        buf.write(f"{nu:.17e},{val:.17e}\n")
    return buf.getvalue()


def _norms_csv(times, norms):
    buf = io.StringIO()
    buf.write("t,norm\n")
    for t, n in zip(times, norms):
        buf.write(f"{t:.17e},{n:.17e}\n")
    return buf.getvalue()


def _try_plot(out, name, draw):
    """Render an SVG; plotting failures never affect the numeric results."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        draw(ax)
        fig.tight_layout()
        fig.savefig(Path(out) / name)
        plt.close(fig)
        return name
    except Exception as e:                              # noqa: BLE001
        print(f"plot {name} skipped: {e}", file=sys.stderr)
        return None


def _manifest(out, cfg, scenario_data):
    spec = cfg["spec_obj"]
    man = {
        "version": __version__,
        "scenario": cfg["scenario"],
        "parameters": {k: v for k, v in cfg.items()
                       if k not in ("spec_obj", "raw", "rect", "out")},
        "rect": ([cfg["rect"].re_min, cfg["rect"].re_max,
                  cfg["rect"].im_min, cfg["rect"].im_max]
                 if cfg["rect"] else None),
        "spec": spec.summary(),
        **scenario_data,
    }
    _write(out, "manifest.json", json.dumps(man, indent=2, default=str) + "\n")
    return man


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------


def _scenario_counterexample(cfg, out):
    spec = cfg["spec_obj"]
    res = reduce(spec)
    F0, F1, F2 = build_characteristic_triple(res.model)
    vals = {f.label: abs(complex(f(0.0))) for f in (F0, F1, F2)}
    rect = cfg["rect"] or default_rect(min(spec.transport_times()))
    verdict = check_common_zeros(F0, F1, F2, rect)
    report = ["characteristic values at s = 0:"]
    report += [f"  |{k}(0)| = {v:.3e}" for k, v in vals.items()]
    report += ["", verdict.report()]
    _write(out, "report.txt", "\n".join(report) + "\n")
    _write(out, "zeros_f0.csv", zeros_to_csv(verdict.zeros_f0, F0))
    _try_plot(out, "zeros.svg", lambda ax: (
        ax.plot([z.real for z, _ in verdict.zeros_f0],
                [z.imag for z, _ in verdict.zeros_f0], "x"),
        ax.set_xlabel("Re s"), ax.set_ylabel("Im s")))
    return {"values_at_zero": vals,
            "common_zeros": [[z.real, z.imag] for z, _ in verdict.common],
            "stabilizable": verdict.ok}


def _scenario_reduce(cfg, out):
    spec = cfg["spec_obj"]
    res = reduce(spec, h_id=cfg["h_id"])
    files = {}
    if res.model.N is not None:
        files["N"] = _write(out, "kernel_N.csv", _kernel_csv(res.model.N))
    for i, inp in enumerate(res.model.inputs, start=1):
        if inp.M is not None:
            files[f"M{i}"] = _write(out, f"kernel_M{i}.csv",
                                    _kernel_csv(inp.M))
    _try_plot(out, "kernels.svg", lambda ax: (
        [ax.plot(k.nodes, k.values, label=lbl) for lbl, k in
         ([("N", res.model.N)] if res.model.N is not None else []) +
         [(f"M{i}", inp.M) for i, inp in enumerate(res.model.inputs, 1)
          if inp.M is not None]],
        ax.set_xlabel("nu"), ax.legend()))
    return {"reduction": res.manifest(), "kernel_files": files}


def _scenario_spectrum(cfg, out):
    spec = cfg["spec_obj"]
    res = reduce(spec, h_id=cfg["h_id"])
    F0, F1, F2 = build_characteristic_triple(res.model)
    rect = cfg["rect"] or default_rect(min(spec.transport_times()))
    verdict = check_common_zeros(F0, F1, F2, rect)
    _write(out, "zeros_f0.csv", zeros_to_csv(verdict.zeros_f0, F0))
    _write(out, "report.txt", verdict.report() + "\n")
    _try_plot(out, "spectrum.svg", lambda ax: (
        ax.plot([z.real for z, _ in verdict.zeros_f0],
                [z.imag for z, _ in verdict.zeros_f0], "x"),
        ax.axvline(0.0, color="k", lw=0.5),
        ax.set_xlabel("Re s"), ax.set_ylabel("Im s")))
    return {"n_zeros_f0": len(verdict.zeros_f0),
            "common_zeros": [[z.real, z.imag] for z, _ in verdict.common],
            "note": "bounded-region certificate: the no-common-zero verdict "
                    "holds on the reported rectangle only"}


def _scenario_stabilize(cfg, out):
    spec = cfg["spec_obj"]
    if spec.config is Config.U1U4:
        return _stabilize_u1u4(cfg, out)
    res = reduce(spec, h_id=cfg["h_id"])
    law = design_feedback(res, rect=cfg["rect"],
                          target_margin=cfg["target_margin"],
                          h_design=cfg["h_design"], rng_seed=cfg["seed"])
    g_csv, f_csv = gains_to_csv(law)
    _write(out, "gain_g.csv", g_csv)
    _write(out, "gain_f.csv", f_csv)
    taumax = max(spec.transport_times())
    T = cfg["T"] or res.warm_up + res.model.history_span + 45.0 * taumax
    times, xs, vs, decay = closed_loop_ide(
        res, law, T=float(T), fit_window=(float(T) - 40.0 * taumax, float(T)))
    _write(out, "ide_series.csv",
           series_to_csv(times, xs, {"V1": vs[0], "V2": vs[1]}))
    _try_plot(out, "closed_loop.svg", lambda ax: (
        ax.plot(times, xs), ax.set_xlabel("t"), ax.set_ylabel("x")))
    data = {"law": law.manifest(), "ide_decay": decay.manifest()}
    if cfg["run_pde"]:
        traj, pdecay = closed_loop_pde(spec, res.kernels, res, law,
                                       h=cfg["h"])
        _write(out, "pde_norms.csv", _norms_csv(traj.times, traj.norms))
        _try_plot(out, "pde_norms.svg", lambda ax: (
            ax.semilogy(traj.times, np.maximum(traj.norms, 1e-300)),
            ax.set_xlabel("t"), ax.set_ylabel("L2 norm")))
        data["pde_decay"] = pdecay.manifest()
        data["pde_norm_ratio"] = float(traj.norms[-1] / traj.norms[0])
    return data


def _stabilize_u1u4(cfg, out):
    """(U1, U4) branch: static decoupling feedback, zero dynamic gains; the
    closed loop decays at the open-loop rate of the decoupled parts."""
    spec = cfg["spec_obj"]
    dec = decouple_u1u4(spec)
    h = cfg["h"]
    controller = make_decoupling_controller(spec)
    prof = bump()
    state0 = make_state(spec, h, u_profiles=[prof] * 3, v_profiles=[prof] * 3)
    T = cfg["T"] or 10.0 * sum(spec.transport_times())
    traj, _ = simulate(spec, state0, T=float(T), h=h, controller=controller,
                       record_norms=True, check=False)
    fit_lo = min(0.5 * float(T), float(T) - 3.0)
    decay = estimate_decay(traj.times, traj.norms, (fit_lo, float(T)))
    _write(out, "pde_norms.csv", _norms_csv(traj.times, traj.norms))
    _try_plot(out, "pde_norms.svg", lambda ax: (
        ax.semilogy(traj.times, np.maximum(traj.norms, 1e-300)),
        ax.set_xlabel("t"), ax.set_ylabel("L2 norm")))
    return {"decoupling": dec.manifest(), "gains": "zero",
            "pde_decay": decay.manifest(),
            "pde_norm_ratio": float(traj.norms[-1] / traj.norms[0])}


def _scenario_crossvalidate(cfg, out):
    spec = cfg["spec_obj"]
    res = reduce(spec, h_id=cfg["h_id"])
    rel = validate_reduction(res, h=cfg["h"], seed=cfg["seed"],
                             tol=cfg["tol"])
    _write(out, "report.txt",
           f"relative sup trace mismatch: {rel:.6e} (tolerance {cfg['tol']:g})\n")
    return {"trace_mismatch": rel, "tolerance": cfg["tol"]}


def _scenario_decouple(cfg, out):
    spec = cfg["spec_obj"]
    if spec.config is not Config.U1U4:
        raise SpecValidationError(
            "the decouple scenario requires configuration U1U4")
    dec = decouple_u1u4(spec)
    h = cfg["h"]
    controller = make_decoupling_controller(spec)
    prof = bump()
    T = cfg["T"] or 2.0 * sum(spec.transport_times())
    runs = []
    for perturb in (0.0, 1.0):
        pert = bump(center=0.4, width=0.25, amplitude=perturb)
        state0 = make_state(
            spec, h, u_profiles=[prof, pert, pert],
            v_profiles=[prof, pert, pert])
        traj, _ = simulate(spec, state0, T=float(T), h=h,
                           controller=controller, check=False)
        runs.append(traj)
    diff = max(float(np.max(np.abs(runs[0].trace(c) - runs[1].trace(c))))
               for c in ("u1_0", "u1_1", "v1_0", "v1_1"))
    _write(out, "traces_base.csv", runs[0].to_csv())
    _write(out, "traces_perturbed.csv", runs[1].to_csv())
    _write(out, "report.txt",
           f"subsystem-1 trace invariance residual: {diff:.6e}\n")
    return {"decoupling": dec.manifest(), "trace_invariance": diff}


_SCENARIOS = {
    "counterexample": _scenario_counterexample,
    "reduce": _scenario_reduce,
    "spectrum": _scenario_spectrum,
    "stabilize": _scenario_stabilize,
    "crossvalidate": _scenario_crossvalidate,
    "decouple": _scenario_decouple,
}


def run_scenario(cfg, out):
    """Dispatch a validated config; returns the manifest dict."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    data = _SCENARIOS[cfg["scenario"]](cfg, out)
    return _manifest(out, cfg, data)


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="hypchain",
        description="Simulation, spectral analysis and feedback design for "
                    "chains of three boundary-coupled 2x2 hyperbolic systems.")
    parser.add_argument("scenario", choices=sorted(_SCENARIOS))
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="overrides the config seed")
    args = parser.parse_args(argv)
    try:
        cfg = validate_config(args.config, scenario=args.scenario)
    except ConfigError as e:
        for msg in e.errors:
            print(f"config error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        cfg["seed"] = args.seed
    out = args.out or cfg["out"] or f"out_{args.scenario}"
    try:
        man = run_scenario(cfg, out)
    except AssumptionError as e:
        print(f"assumption violated: {e}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except SpecValidationError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except HypchainError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    print(json.dumps({k: man[k] for k in ("version", "scenario")}
                     | {"out": str(out)}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
