"""Figure rendering for simulation traces: excitation, estimates, observer.

Pure read-render: nothing here recomputes dynamics, and deleting this
package leaves the simulation library fully testable. Inputs are trace CSVs
via their column-name contract only.
"""

from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .traces import MissingColumn, TraceData

KINDS = ("excitation", "estimates", "observer")


@dataclass
class FigureSpec:
    traces: list
    kind: str
    out: str
    eta: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got '{self.kind}'")
        if not self.traces:
            raise ValueError("at least one trace file is required")


def inequality_holds_from(ts, lhs, rhs):
    """Earliest sampled time after which lhs >= rhs and rhs > 0 hold onward.

    Returns None when no such time exists in the trace.
    """
    good = (lhs >= rhs) & (rhs > 0.0)
    if not good.size or not good[-1]:
        return None
    bad = np.flatnonzero(~good)
    idx = bad[-1] + 1 if bad.size else 0
    if idx >= ts.size:
        return None
    return float(ts[idx])


def _label_for(trace, idx):
    if trace.path is None:
        return f"trace {idx + 1}"
    stem = str(trace.path).rsplit("/", 1)[-1]
    return stem.removesuffix("_trace.csv").removesuffix(".csv")


def plot_excitation(traces, eta, out):
    """Three panels: delta(t), the mixed disturbance channels, and the
    inequality left-hand side against eta * delta(t)."""
    traces = [t if isinstance(t, TraceData) else TraceData.read(t) for t in traces]
    for tr in traces:
        tr.require("delta", "ineq_lhs")
        if not tr.channels("scalW"):
            raise MissingColumn("scalW_1", tr.path)
    fig, axes = plt.subplots(3, 1, figsize=(8, 9), sharex=True)
    t_from = None
    for idx, tr in enumerate(traces):
        label = _label_for(tr, idx)
        ts = tr.t if tr.n_samples else np.empty(0)
        delta = tr.column("delta")
        axes[0].plot(ts, delta, label=label)
        for name in tr.channels("scalW"):
            axes[1].plot(ts, tr.column(name), label=f"{label} {name}")
        lhs = tr.column("ineq_lhs")
        if eta is not None:
            rhs = eta * delta
            rhs_label = f"eta*delta (eta={eta:g})"
        elif tr.has("ineq_rhs"):
            rhs = tr.column("ineq_rhs")
            rhs_label = "stored eta*delta"
        else:
            raise MissingColumn("ineq_rhs", tr.path)
        axes[2].plot(ts, lhs, label=f"{label} lhs")
        axes[2].plot(ts, rhs, "--", label=f"{label} {rhs_label}")
        if tr.n_samples:
            t_from = inequality_holds_from(ts, lhs, rhs)
            if t_from is not None:
                axes[2].axvline(t_from, color="gray", lw=0.8, ls=":")
    axes[0].set_ylabel("delta")
    axes[1].set_ylabel("mixed disturbance")
    axes[2].set_ylabel("gain inequality")
    axes[2].set_xlabel("t [s]")
    for ax in axes:
        ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return t_from


def plot_estimates(traces, out):
    """Per-channel overlay of the estimates across laws, with the true value
    (recovered as theta_hat - theta_tilde) as a reference line."""
    traces = [t if isinstance(t, TraceData) else TraceData.read(t) for t in traces]
    channels = None
    for tr in traces:
        names = tr.channels("theta_hat")
        if not names:
            raise MissingColumn("theta_hat_1", tr.path)
        if channels is None or len(names) < len(channels):
            channels = names
    n = len(channels)
    fig, axes = plt.subplots(n, 1, figsize=(8, 3 * n), sharex=True, squeeze=False)
    axes = axes[:, 0]
    for i in range(n):
        ax = axes[i]
        truth_drawn = False
        for idx, tr in enumerate(traces):
            ts = tr.t if tr.n_samples else np.empty(0)
            est = tr.column(f"theta_hat_{i + 1}")
            ax.plot(ts, est, label=_label_for(tr, idx))
            if not truth_drawn and tr.n_samples and tr.has(f"theta_tilde_{i + 1}"):
                truth = est[-1] - tr.column(f"theta_tilde_{i + 1}")[-1]
                ax.axhline(truth, color="k", lw=0.8, ls="--", label="true value")
                truth_drawn = True
        ax.set_ylabel(f"theta_hat_{i + 1}")
        ax.legend(loc="best", fontsize=8)
    axes[-1].set_xlabel("t [s]")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)


def plot_observer(traces, out):
    """Parameter estimates above, true state against reconstruction below."""
    traces = [t if isinstance(t, TraceData) else TraceData.read(t) for t in traces]
    for tr in traces:
        if not tr.channels("x"):
            raise MissingColumn("x_1", tr.path)
        if not tr.channels("xhat"):
            raise MissingColumn("xhat_1", tr.path)
    n_x = len(traces[0].channels("x"))
    n_th = len(traces[0].channels("theta_hat"))
    fig, axes = plt.subplots(n_th + n_x, 1, figsize=(8, 3 * (n_th + n_x)),
                             sharex=True, squeeze=False)
    axes = axes[:, 0]
    for i in range(n_th):
        ax = axes[i]
        for idx, tr in enumerate(traces):
            ts = tr.t if tr.n_samples else np.empty(0)
            ax.plot(ts, tr.column(f"theta_hat_{i + 1}"), label=_label_for(tr, idx))
        ax.set_ylabel(f"theta_hat_{i + 1}")
        ax.legend(loc="best", fontsize=8)
    for j in range(n_x):
        ax = axes[n_th + j]
        first = traces[0]
        if first.n_samples:
            ax.plot(first.t, first.column(f"x_{j + 1}"), "k", lw=1.0, label="plant state")
        for idx, tr in enumerate(traces):
            ts = tr.t if tr.n_samples else np.empty(0)
            ax.plot(ts, tr.column(f"xhat_{j + 1}"), "--",
                    label=f"{_label_for(tr, idx)} estimate")
        ax.set_ylabel(f"x_{j + 1}")
        ax.legend(loc="best", fontsize=8)
    axes[-1].set_xlabel("t [s]")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)


def render(spec):
    """Dispatch a FigureSpec to its renderer."""
    if spec.kind == "excitation":
        return plot_excitation(spec.traces, spec.eta, spec.out)
    if spec.kind == "estimates":
        return plot_estimates(spec.traces, spec.out)
    return plot_observer(spec.traces, spec.out)
