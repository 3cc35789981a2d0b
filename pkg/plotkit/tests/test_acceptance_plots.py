"""Acceptance: render every figure kind from the bundled-scenario traces."""

import numpy as np

from plotkit.figures import inequality_holds_from, plot_estimates, plot_excitation, plot_observer
from plotkit.traces import TraceData


def _assert_inequality_on_series(trace_path, eta):
    """The numeric check behind the overlay: lhs >= eta*delta from some T on."""
    tr = TraceData.read(trace_path)
    ts = tr.t
    t_from = inequality_holds_from(ts, tr.column("ineq_lhs"), eta * tr.column("delta"))
    assert t_from is not None, f"inequality never settles for eta={eta}"
    assert t_from <= 0.5 * ts[-1]
    return t_from


def test_criterion_12_all_figures_render(full_traces, tmp_path):
    figures = []

    # excitation overlays at the published inequality levels, with the
    # numeric inequality asserted on the plotted series before rendering
    for scenario, eta in (("scenario_a", 50.0), ("scenario_b", 10.0), ("scenario_c", 100.0)):
        trace = full_traces / f"{scenario}_averaging_trace.csv"
        t_from = _assert_inequality_on_series(trace, eta)
        out = tmp_path / f"{scenario}_excitation.png"
        plot_excitation([trace], eta=eta, out=out)
        figures.append((out, f"{scenario} excitation (holds from t={t_from:.2f})"))

    for scenario in ("scenario_a", "scenario_b"):
        out = tmp_path / f"{scenario}_estimates.png"
        plot_estimates([full_traces / f"{scenario}_gradient_trace.csv",
                        full_traces / f"{scenario}_averaging_trace.csv"], out)
        figures.append((out, f"{scenario} estimates"))

    out = tmp_path / "scenario_c_observer.png"
    plot_observer([full_traces / "scenario_c_gradient_trace.csv",
                   full_traces / "scenario_c_averaging_trace.csv"], out)
    figures.append((out, "scenario_c observer"))

    ok = all(path.stat().st_size > 0 for path, _ in figures)
    names = ", ".join(label for _, label in figures)
    print(f"criterion 12: {'PASS' if ok else 'FAIL'} - rendered {len(figures)} figures: {names}")
    assert ok
    assert len(figures) == 6
