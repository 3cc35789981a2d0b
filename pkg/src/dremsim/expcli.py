"""Experiment runner: scenario config files, trace/report persistence, CLI.

Scenario files are strict TOML: unknown keys are rejected so a typo cannot
silently fall back to a default. One trace CSV is written per (scenario,
law) pair; the summary JSON carries every headline number so downstream
checks never have to parse CSVs. Outputs contain no timestamps: the same
config produces byte-identical files.
"""

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

import numpy as np

from . import diagnostics
from .integrator import StepError, Trace, integrate
from .observer import ConstantMap, InputLinearMap, PlantScenario, PlantSpec
from .signals import (
    AveragingLaw,
    Constant,
    ExpDecay,
    FeDecay,
    GradientLaw,
    Kreisselmeier,
    ScenarioSpec,
    Scale,
    SignalExpr,
    Sin,
    Sum,
)


class ConfigError(ValueError):
    """Scenario file failed to parse or validate."""


@dataclass
class RunConfig:
    scenario: str
    law: str = "both"
    gamma: float | None = None
    l: float | None = None
    mu: float | None = None
    k: float | None = None
    step: float | None = None
    horizon: float | None = None
    sample_every: float | None = None
    out_dir: str = "runs"


# ---------------------------------------------------------------------------
# strict TOML -> spec

def _take(table, key, where, required=True, default=None):
    if key not in table:
        if required:
            raise ConfigError(f"{where}: missing required key '{key}'")
        return default
    return table.pop(key)

def _done(table, where):
    if table:
        raise ConfigError(f"{where}: unknown key(s): {', '.join(sorted(table))}")


def _parse_term(term, where):
    term = dict(term)
    kind = _take(term, "kind", where)
    if kind == "constant":
        expr = Constant(float(_take(term, "value", where)))
    elif kind == "sin":
        expr = Sin(
            amplitude=float(_take(term, "amplitude", where)),
            frequency=float(_take(term, "frequency", where)),
            phase=float(_take(term, "phase", where, required=False, default=0.0)),
        )
    elif kind == "exp_decay":
        expr = ExpDecay(rate=float(_take(term, "rate", where)))
        amp = _take(term, "amplitude", where, required=False)
        if amp is not None:
            expr = Scale(float(amp), expr)
    else:
        raise ConfigError(f"{where}: unknown term kind '{kind}'")
    _done(term, where)
    return expr


def _parse_signal(terms, where):
    if not isinstance(terms, list):
        raise ConfigError(f"{where}: expected a list of terms")
    exprs = [_parse_term(t, f"{where}[{i}]") for i, t in enumerate(terms)]
    if not exprs:
        return Constant(0.0)
    if len(exprs) == 1:
        return exprs[0]
    return Sum(exprs)


def _parse_extension(table):
    table = dict(table)
    scheme = _take(table, "scheme", "extension")
    try:
        if scheme == "kreisselmeier":
            ext = Kreisselmeier(l=float(_take(table, "l", "extension")))
        elif scheme == "fe_decay":
            ext = FeDecay(mu=float(_take(table, "mu", "extension")))
        else:
            raise ConfigError(f"extension: unknown scheme '{scheme}'")
    except ValueError as exc:
        raise ConfigError(f"extension: {exc}") from exc
    _done(table, "extension")
    return ext


def _parse_laws(table):
    table = dict(table)
    laws = {}
    try:
        if "gradient" in table:
            g = dict(table.pop("gradient"))
            laws["gradient"] = GradientLaw(
                gamma=float(_take(g, "gamma", "laws.gradient")),
                theta0=_take(g, "theta0", "laws.gradient", required=False),
            )
            _done(g, "laws.gradient")
        if "averaging" in table:
            a = dict(table.pop("averaging"))
            laws["averaging"] = AveragingLaw(
                gamma=float(_take(a, "gamma", "laws.averaging")),
                k=np.asarray(_take(a, "k", "laws.averaging"), dtype=float),
                kappa0=float(_take(a, "kappa0", "laws.averaging", required=False, default=0.0)),
                theta0=_take(a, "theta0", "laws.averaging", required=False),
            )
            _done(a, "laws.averaging")
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"laws: {exc}") from exc
    _done(table, "laws")
    if not laws:
        raise ConfigError("laws: at least one of 'gradient' or 'averaging' is required")
    return laws


@dataclass
class ScenarioFile:
    """Parsed scenario config holding the setups for every law it defines."""

    name: str
    kind: str
    horizon: float
    step: float
    sample_every: float
    extension: object
    laws: dict
    regression: dict | None = None
    plant: PlantSpec | None = None

    def law_names(self):
        return list(self.laws)

    def select(self, law_name):
        """Concrete run plan for one law."""
        if law_name not in self.laws:
            raise ConfigError(f"scenario '{self.name}' defines no '{law_name}' law")
        law = self.laws[law_name]
        if self.kind == "regression":
            return ScenarioSpec(
                name=self.name,
                regressor=self.regression["regressor"],
                theta=self.regression["theta"],
                disturbance=self.regression["disturbance"],
                extension=self.extension,
                law=law,
                horizon=self.horizon,
                step=self.step,
                sample_every=self.sample_every,
            )
        return PlantScenario(
            name=self.name,
            plant=self.plant,
            extension=self.extension,
            law=law,
            horizon=self.horizon,
            step=self.step,
            sample_every=self.sample_every,
        )


def bundled_scenario_path(name):
    """Path of a scenario file shipped with the package (scenario_a/_b/_c)."""
    from importlib.resources import files

    return Path(str(files("dremsim") / "scenarios" / f"{name}.toml"))


def resolve_scenario(ref):
    p = Path(ref)
    if p.exists():
        return p
    bundled = bundled_scenario_path(ref)
    if bundled.exists():
        return bundled
    raise ConfigError(f"scenario '{ref}' is neither a file nor a bundled scenario")


def load_scenario_file(path):
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: TOML parse error: {exc}") from exc

    raw = dict(raw)
    meta = dict(_take(raw, "scenario", str(path)))
    name = _take(meta, "name", "scenario")
    kind = _take(meta, "kind", "scenario")
    horizon = float(_take(meta, "horizon", "scenario"))
    step = float(_take(meta, "step", "scenario"))
    sample_every = float(_take(meta, "sample_every", "scenario", required=False, default=step))
    _done(meta, "scenario")

    extension = _parse_extension(_take(raw, "extension", str(path)))
    laws = _parse_laws(_take(raw, "laws", str(path)))

    if kind == "regression":
        reg = dict(_take(raw, "regression", str(path)))
        theta = np.asarray(_take(reg, "theta", "regression"), dtype=float)
        comps = _take(reg, "regressor", "regression")
        if not isinstance(comps, list) or not comps:
            raise ConfigError("regression.regressor: expected a nonempty list of components")
        regressor = [_parse_signal(c, f"regression.regressor[{i}]") for i, c in enumerate(comps)]
        disturbance = _parse_signal(
            _take(reg, "disturbance", "regression", required=False, default=[]),
            "regression.disturbance",
        )
        _done(reg, "regression")
        _done(raw, str(path))
        return ScenarioFile(
            name=name, kind=kind, horizon=horizon, step=step, sample_every=sample_every,
            extension=extension, laws=laws,
            regression={"theta": theta, "regressor": regressor, "disturbance": disturbance},
        )

    if kind == "plant":
        pl = dict(_take(raw, "plant", str(path)))
        A = _take(pl, "A", "plant")
        C = _take(pl, "C", "plant")
        K = _take(pl, "K", "plant")
        theta = _take(pl, "theta", "plant")
        x0 = _take(pl, "x0", "plant")
        chi0 = _take(pl, "chi0", "plant", required=False)
        G = _take(pl, "G", "plant")
        input_gain = _take(pl, "input_gain", "plant", required=False)
        phi_const = _take(pl, "phi_const", "plant", required=False)
        delta_sig = _take(pl, "delta", "plant")
        u_sig = _take(pl, "u", "plant", required=False, default=[[{"kind": "constant", "value": 0.0}]])
        _done(pl, "plant")
        _done(raw, str(path))
        if input_gain is not None:
            phi_map = InputLinearMap(np.asarray(input_gain, dtype=float))
        elif phi_const is not None:
            phi_map = ConstantMap(np.asarray(phi_const, dtype=float))
        else:
            phi_map = ConstantMap(np.zeros(len(A)))
        delta = [_parse_signal(ch, f"plant.delta[{i}]") for i, ch in enumerate(delta_sig)]
        u = [_parse_signal(ch, f"plant.u[{i}]") for i, ch in enumerate(u_sig)]
        try:
            plant = PlantSpec(
                A=A, C=C, K=K, phi_map=phi_map, G_map=ConstantMap(np.asarray(G, dtype=float)),
                theta=theta, delta=delta, u=u, x0=x0, chi0=chi0,
            )
        except ValueError as exc:
            raise ConfigError(f"plant: {exc}") from exc
        return ScenarioFile(
            name=name, kind=kind, horizon=horizon, step=step, sample_every=sample_every,
            extension=extension, laws=laws, plant=plant,
        )

    raise ConfigError(f"scenario.kind must be 'regression' or 'plant', got '{kind}'")


def load_config(config):
    """RunConfig -> (ScenarioFile, list of (law_name, run plan)) with overrides applied."""
    path = resolve_scenario(config.scenario)
    sf = load_scenario_file(path)
    try:
        if config.l is not None:
            if not isinstance(sf.extension, Kreisselmeier):
                raise ConfigError("--l applies only to the kreisselmeier scheme")
            sf.extension = Kreisselmeier(l=config.l)
        if config.mu is not None:
            if not isinstance(sf.extension, FeDecay):
                raise ConfigError("--mu applies only to the fe_decay scheme")
            sf.extension = FeDecay(mu=config.mu)
        if config.gamma is not None and config.gamma <= 0:
            raise ConfigError(f"gamma must be > 0, got {config.gamma}")
        if config.k is not None and config.k <= 0:
            raise ConfigError(f"k_i must be > 0, got {config.k}")
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if config.step is not None:
        sf.step = config.step
    if config.horizon is not None:
        sf.horizon = config.horizon
    if config.sample_every is not None:
        sf.sample_every = config.sample_every
    if config.law == "both":
        names = sf.law_names()
    elif config.law in ("gradient", "averaging"):
        names = [config.law]
    else:
        raise ConfigError(f"law must be gradient, averaging or both, got '{config.law}'")
    plans = []
    for name in names:
        if config.gamma is not None:
            sf.laws[name].gamma = config.gamma
        if config.k is not None and isinstance(sf.laws[name], AveragingLaw):
            sf.laws[name].k = np.full_like(sf.laws[name].k, config.k)
        try:
            plans.append((name, sf.select(name)))
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    return sf, plans


# ---------------------------------------------------------------------------
# trace persistence

def write_csv(trace, path):
    """Canonical trace format: header row, one sample per row, 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(trace.columns) + "\n")
        for row in trace.data:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def read_trace(path):
    import io

    with open(path) as fh:
        header = fh.readline().strip()
        if not header:
            raise ValueError(f"{path}: empty trace file")
        columns = header.split(",")
        body = fh.read()
    if body.strip():
        data = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2)
    else:
        data = np.empty((0, len(columns)))
    return Trace(columns, data)


# ---------------------------------------------------------------------------
# experiment driver

def _phi_row_samples(sim):
    """Samples of the scalar-regression regressor for diagnostics."""
    spec = sim.spec
    if isinstance(spec, ScenarioSpec):
        return np.column_stack([np.broadcast_to(e.at(sim.ts), sim.ts.shape) for e in spec.regressor])
    omega = sim.block("Omega")
    ell_c = np.ones(spec.plant.p) @ spec.plant.C
    return np.einsum("i,rij->rj", ell_c, omega)


def _scalw_matrix(trace, n):
    return np.column_stack([trace.column(f"scalW_{i + 1}") for i in range(n)])


def _diagnose_sim(sim, law):
    trace = sim.trace
    n = sum(1 for c in trace.columns if c.startswith("scalW_"))
    kwargs = {}
    if isinstance(law, AveragingLaw):
        kwargs = dict(gamma=law.gamma, delta_dot=trace.column("delta_dot"),
                      kappa_hat=trace.column("kappa_hat"))
    return diagnostics.excitation_report(
        sim.ts, trace.column("delta"), _scalw_matrix(trace, n),
        phi_samples=_phi_row_samples(sim), **kwargs)


def _summary(sim, law_name, report):
    spec = sim.spec
    trace = sim.trace
    ts = sim.ts
    is_plant = isinstance(spec, PlantScenario)
    theta = spec.plant.theta if is_plant else spec.theta
    n = theta.size
    tt = np.column_stack([trace.column(f"theta_tilde_{i + 1}") for i in range(n)])
    law = spec.law
    out = {
        "scenario": spec.name,
        "law": law_name,
        "gamma": law.gamma,
        "horizon": spec.horizon,
        "step": spec.step,
        "sample_every": spec.sample_every,
        "terminal_theta_tilde": [float(v) for v in tt[-1]],
        "sup_abs_theta_tilde": [float(v) for v in np.abs(tt).max(axis=0)],
        "delta_jacobi_max_dev": float(
            np.abs(trace.column("delta") - trace.column("delta_jacobi")).max()),
    }
    if report is not None:
        after = ts >= report.t_detect
        out.update({
            "sup_abs_theta_tilde_after_t_detect": [float(v) for v in np.abs(tt[after]).max(axis=0)],
            "t_detect": report.t_detect,
            "delta_lb": report.delta_lb,
            "delta_ub": report.delta_ub,
            "eta_max": report.eta_max if isinstance(law, AveragingLaw) else None,
            "w_max": report.c1_bound,
            "c2_sup": report.c2_sup,
            "excitation_alpha": report.alpha,
        })
        if isinstance(law, AveragingLaw):
            i_det = int(np.searchsorted(ts, report.t_detect))
            out["kappa_tilde_at_t_detect"] = float(trace.column("kappa_tilde")[i_det])
    if spec.horizon >= 10.0:
        i10 = int(np.searchsorted(ts, 10.0))
        out["theta_tilde_at_10s"] = [float(v) for v in tt[i10]]
    if is_plant:
        out["terminal_xtilde_norm"] = float(trace.column("xtilde_norm")[-1])
        from .observer import epsilon_x_bound

        out["epsilon_x"] = epsilon_x_bound(spec.plant, spec.plant.delta_max())
    return out


def run_experiment(config):
    """Run every selected law of a scenario; write trace, report and summary.

    Returns {law_name: {"trace": path, "report": path, "summary": dict}}.
    On an integration failure the partial trace and a failure record are
    written before the StepError propagates.
    """
    sf, plans = load_config(config)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = {}
    for law_name, plan in plans:
        stem = f"{sf.name}_{law_name}"
        trace_path = out_dir / f"{stem}_trace.csv"
        try:
            sim = integrate(plan)
        except StepError as exc:
            if exc.partial is not None:
                write_csv(exc.partial.trace, trace_path)
            failure = {"scenario": sf.name, "law": law_name, "error": str(exc),
                       "t": exc.t, "block": exc.block}
            with open(out_dir / f"{stem}_failure.json", "w") as fh:
                json.dump(failure, fh, indent=2, sort_keys=True)
            raise
        try:
            report = _diagnose_sim(sim, plan.law)
        except ValueError as exc:
            report = None
            report_note = str(exc)
        trace = sim.trace
        if report is not None and trace.has_column("ineq_lhs"):
            trace = trace.with_column("ineq_rhs", report.eta_max * trace.column("delta"),
                                      after="ineq_lhs")
        write_csv(trace, trace_path)
        report_path = out_dir / f"{stem}_report.json"
        with open(report_path, "w") as fh:
            if report is not None:
                fh.write(report.to_json() + "\n")
            else:
                json.dump({"error": report_note}, fh, indent=2, sort_keys=True)
                fh.write("\n")
        summary = _summary(sim, law_name, report)
        summary_path = out_dir / f"{stem}_summary.json"
        with open(summary_path, "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        results[law_name] = {"trace": trace_path, "report": report_path,
                             "summary": summary, "sim": sim}
    return results


def diagnose_trace(path):
    """Re-run the delta-based diagnostics on an existing trace CSV."""
    trace = read_trace(path)
    n = sum(1 for c in trace.columns if c.startswith("scalW_"))
    if n == 0:
        raise ValueError(f"{path}: no scalW columns; not a simulation trace")
    ts = trace.t
    kwargs = {}
    if trace.has_column("kappa_hat") and trace.has_column("ineq_lhs"):
        # gamma is recoverable only through the stored inequality columns;
        # eta_max = inf(lhs / delta) needs no gamma at all
        t_detect, delta_lb, delta_ub = diagnostics.detect_activation(ts, trace.column("delta"))
        mask = ts >= t_detect
        lhs = trace.column("ineq_lhs")[mask]
        d = trace.column("delta")[mask]
        eta_max = float((lhs / d).min()) if np.all(d > 0) else 0.0
    else:
        t_detect, delta_lb, delta_ub = diagnostics.detect_activation(ts, trace.column("delta"))
        eta_max = 0.0
    scalw = _scalw_matrix(trace, n)
    c2 = diagnostics.c2_integral(ts, trace.column("delta"), scalw, t_detect)
    return diagnostics.ExcitationReport(
        alpha=None, window=None, t_detect=t_detect, delta_lb=delta_lb,
        delta_ub=delta_ub, eta_max=eta_max,
        c1_bound=[float(v) for v in np.abs(scalw).max(axis=0)],
        c2_sup=[float(v) for v in c2.max(axis=0)],
    )


# ---------------------------------------------------------------------------
# CLI

def _build_parser():
    parser = argparse.ArgumentParser(prog="dremsim",
                                     description="DREM identification experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and write trace/report/summary files")
    run.add_argument("config", help="scenario file path or bundled name (scenario_a/_b/_c)")
    run.add_argument("--law", choices=["gradient", "averaging", "both"], default="both")
    run.add_argument("--gamma", type=float)
    run.add_argument("--l", type=float, dest="l")
    run.add_argument("--mu", type=float)
    run.add_argument("--k", type=float)
    run.add_argument("--step", type=float)
    run.add_argument("--horizon", type=float)
    run.add_argument("--sample-every", type=float, dest="sample_every")
    run.add_argument("--out", default="runs")

    diag = sub.add_parser("diagnose", help="re-run diagnostics on an existing trace CSV")
    diag.add_argument("trace")

    bound = sub.add_parser("bound", help="print the reconstruction error bound for a plant scenario")
    bound.add_argument("config")
    bound.add_argument("--delta-max", type=float, dest="delta_max")
    bound.add_argument("--c", type=float)

    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            config = RunConfig(
                scenario=args.config, law=args.law, gamma=args.gamma, l=args.l,
                mu=args.mu, k=args.k, step=args.step, horizon=args.horizon,
                sample_every=args.sample_every, out_dir=args.out)
            results = run_experiment(config)
            for law_name, res in results.items():
                print(f"{law_name}: trace -> {res['trace']}")
                print(f"{law_name}: report -> {res['report']}")
            return 0
        if args.command == "diagnose":
            report = diagnose_trace(args.trace)
            print(report.to_json())
            return 0
        if args.command == "bound":
            sf = load_scenario_file(resolve_scenario(args.config))
            if sf.kind != "plant":
                raise ConfigError(f"'{args.config}' is not a plant scenario")
            from .observer import epsilon_x_bound

            dmax = args.delta_max if args.delta_max is not None else sf.plant.delta_max()
            eps = epsilon_x_bound(sf.plant, dmax, c=args.c)
            print(json.dumps({"delta_max": dmax, "epsilon_x": eps}, indent=2, sort_keys=True))
            return 0
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except StepError as exc:
        print(f"error: integration failed: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
