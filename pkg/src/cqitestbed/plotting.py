"""Figure rendering for the report paths of ``stats`` and ``eval``."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

FIGSIZE = (6.4, 4.0)


def _finish(fig, ax, path):
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_delta_cdf(cdfs: dict, path, signed: bool = False, n_points: int = 2000):
    """One step curve per named :class:`~cqitestbed.gridio.EmpiricalCdf`."""
    fig, ax = plt.subplots(figsize=FIGSIZE)
    for name, cdf in cdfs.items():
        x, p = cdf.curve(n_points)
        ax.step(x, p, where="post", label=name)
    ax.set_xlabel("SINR change per subframe (dB)" if signed else "|SINR change| per subframe (dB)")
    ax.set_ylabel("CDF")
    ax.set_ylim(0, 1)
    if not signed:
        ax.set_xlim(left=0)
    ax.legend()
    _finish(fig, ax, path)


def plot_prediction_trace(t, truth, pred, path, baseline=None, rb: int = 0, max_points: int = 2000):
    """Predicted vs measured CQI over time for one resource block."""
    t = np.asarray(t)[:max_points]
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.step(t, np.asarray(truth)[:max_points], where="post", label="measured", lw=1.2)
    ax.plot(t, np.asarray(pred)[:max_points], label="CRNN", lw=1.0)
    if baseline is not None:
        ax.step(t, np.asarray(baseline)[:max_points], where="post", label="persistence",
                lw=0.8, alpha=0.6)
    ax.set_xlabel("subframe (ms)")
    ax.set_ylabel(f"CQI, RB {rb}")
    ax.legend()
    _finish(fig, ax, path)


def plot_loss_history(history, path):
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.plot(np.arange(1, len(history) + 1), history, marker="o")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean training loss")
    _finish(fig, ax, path)
