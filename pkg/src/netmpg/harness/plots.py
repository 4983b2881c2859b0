"""Figures rendered from the CSV artifacts."""
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .runner import read_csv  # noqa: E402

# fixed metadata keeps repeated renders byte-identical
_PNG_META = {"Software": None}


def _column(rows, key):
    vals = [r[key] for r in rows]
    if not vals or any(v == "" for v in vals):
        return None
    return [float(v) for v in vals]


def plot_convergence(csv_path, png_path):
    rows = read_csv(csv_path)
    if not rows:
        raise ValueError(f"{csv_path} has no rows")
    it = [int(r["iteration"]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4), dpi=100)
    ax.plot(it, _column(rows, "mean_return_per_agent"), label="mean return per agent")
    pot = _column(rows, "potential_estimate")
    if pot is not None:
        ax.plot(it, pot, "--", label="potential estimate")
    ax.set_xlabel("iteration")
    ax.set_ylabel("discounted return")
    gap = _column(rows, "nash_gap")
    if gap is not None:
        ax2 = ax.twinx()
        ax2.plot(it, gap, color="tab:red", label="Nash gap")
        ax2.set_ylabel("Nash gap")
        ax2.legend(loc="lower right")
    ax.legend(loc="upper left")
    fig.tight_layout()
    fig.savefig(png_path, format="png", metadata=_PNG_META)
    plt.close(fig)
    return png_path


def plot_epsilon(csv_path, png_path):
    rows = read_csv(csv_path)
    if not rows:
        raise ValueError(f"{csv_path} has no rows")
    k = [int(r["kappa"]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4), dpi=100)
    ax.plot(k, _column(rows, "relative_error_pct"), "o-", label="relative error (%)")
    ax.plot(k, _column(rows, "theoretical_bound"), "s--", label="theoretical bound ε(κ)")
    ax.set_xlabel("κ")
    ax.set_xticks(k)
    ax.legend()
    fig.tight_layout()
    fig.savefig(png_path, format="png", metadata=_PNG_META)
    plt.close(fig)
    return png_path


def emit_plots(artifact_dir):
    """PNG next to every convergence*.csv and epsilon_vs_kappa.csv under ``artifact_dir``."""
    root = Path(artifact_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"artifact directory {root} does not exist")
    conv = sorted(root.glob("convergence*.csv")) + sorted(root.glob("runs/convergence*.csv"))
    eps = root / "epsilon_vs_kappa.csv"
    if not conv and not eps.exists():
        raise FileNotFoundError(f"no convergence or epsilon_vs_kappa CSV in {root}")
    out = [plot_convergence(p, p.with_suffix(".png")) for p in conv]
    if eps.exists():
        out.append(plot_epsilon(eps, eps.with_suffix(".png")))
    return out
