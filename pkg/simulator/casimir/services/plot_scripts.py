"""
Standalone matplotlib scripts written next to the CSVs.

Each script only reads the CSV files in its own directory; running it
regenerates the figure without touching the simulator.
"""

from __future__ import annotations

from casimir.services.run_store import RunWriter

_HEADER = '''"""Generated by casimir {command}; reads {sources} and writes {target}."""
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

HERE = Path(__file__).resolve().parent


def load(name):
    return np.genfromtxt(HERE / name, delimiter=",", names=True)

'''

CHI_SCRIPT = '''
data = load("chi.csv")
fig, ax = plt.subplots(figsize=(6, 3.5))
ax.bar(data["ion_index"], data["chi_over_kbar"], color="tab:blue")
ax.axhline(0.0, color="black", linewidth=0.6)
ax.set_xlabel("ion number")
ax.set_ylabel(r"$\\chi_i / \\bar{{k}}$")
ax.set_xticks(data["ion_index"])
fig.tight_layout()
fig.savefig(HERE / "chi.png", dpi=200)
'''

SWEEP_SCRIPT = '''
data = load("sweep.csv")
fig, axes = plt.subplots(2, 1, sharex=True, figsize=(6, 5))
for ax, mode in zip(axes, (1, 2)):
    ax.plot(data["omega_d_over_omega1"], data[f"n{{mode}}_ion"], label="ion chain")
    ax.plot(data["omega_d_over_omega1"], data[f"n{{mode}}_moore"], "--", label="moving mirror")
    ax.set_ylabel(rf"$\\langle n_{{{{{{mode}}}}}} \\rangle$")
    ax.legend()
axes[-1].set_xlabel(r"$\\omega_D / \\omega_1$")
fig.tight_layout()
fig.savefig(HERE / "sweep.png", dpi=200)
'''

TIMESERIES_SCRIPT = '''
data = load("timeseries.csv")
fig, ax = plt.subplots(figsize=(6, 3.5))
x = data["drive_periods"]
ax.plot(x, data["n1_ion"], label="ion chain")
ax.plot(x, data["n1_moore"], "--", label="moving mirror")
ax.plot(x, data["n1_analytic"], ":", label="resonance law")
if not np.all(np.isnan(data["n1_optimized"])):
    ax.plot(x, data["n1_optimized"], label="optimized drive")
ax.set_xlabel("drive periods")
ax.set_ylabel(r"$\\langle n_1 \\rangle$")
ax.legend()
fig.tight_layout()
fig.savefig(HERE / "timeseries.png", dpi=200)
'''

SCRIPTS = {
    "chi": ("chi-profile", "chi.csv", "chi.png", CHI_SCRIPT),
    "sweep": ("sweep", "sweep.csv", "sweep.png", SWEEP_SCRIPT),
    "timeseries": ("timeseries", "timeseries.csv", "timeseries.png", TIMESERIES_SCRIPT),
}


def render(kind: str) -> str:
    command, source, target, body = SCRIPTS[kind]
    return _HEADER.format(command=command, sources=source, target=target) + body.format()


def emit(writer: RunWriter, kind: str) -> None:
    writer.write_text(f"plot_{kind}.py", render(kind))
