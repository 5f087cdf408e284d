"""Static SVG figures from the CSV artifacts of a run directory.

File kinds are recognised by prefix: ``trace_*`` (Weiss traces),
``lambda_*`` (projection parameters), ``hcurve_*`` (H_u against r) and
``spectrum_table.csv`` (eigenvalue convergence).
"""
from __future__ import annotations

import csv
import json
import logging
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

log = logging.getLogger(__name__)

REQUIRED = {
    "trace": ("tau", "W", "norm2"),
    "lambda": ("tau",),
    "hcurve": ("r", "H"),
    "spectrum": ("cells",),
}


class PlotError(ValueError):
    pass


def read_columns(path: Path, required=()) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing trace file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise PlotError(f"{path.name} is empty")
    header = rows[0]
    missing = [c for c in required if c not in header]
    if missing:
        raise PlotError(f"{path.name} is missing columns {missing}")
    body = np.array(rows[1:], dtype=float).reshape(-1, len(header))
    return {k: body[:, i] for i, k in enumerate(header)}


def _save(fig, out: Path, deterministic: bool) -> Path:
    meta = {"Date": None} if deterministic else {}
    with plt.rc_context({"svg.hashsalt": "signorini-lab" if deterministic else None}):
        fig.savefig(out, format="svg", metadata=meta)
    plt.close(fig)
    return out


def _degenerate(cols: dict, name: str) -> bool:
    n = len(next(iter(cols.values())))
    if n == 0:
        raise PlotError(f"{name} has a header but no rows")
    if n == 1:
        log.warning("%s has a single row; plotting a degenerate figure", name)
        return True
    return False


def plot_trace(path: Path, out_dir: Path, fit: dict | None = None, deterministic: bool = False) -> list:
    cols = read_columns(path, REQUIRED["trace"])
    style = "o" if _degenerate(cols, path.name) else "-"
    tau, W, N = cols["tau"], cols["W"], cols["norm2"]
    stem = path.stem
    outs = []
    fig, ax = plt.subplots(1, 2, figsize=(9, 3.5))
    ax[0].plot(tau, W, style, lw=1)
    ax[0].set_xlabel("tau")
    ax[0].set_ylabel("W")
    ax[0].set_title("Weiss energy")
    pos = np.abs(W) > 0
    ax[1].semilogy(tau[pos], np.abs(W[pos]), style, lw=1, label="|W|")
    if fit and fit.get("model") == "exponential":
        lo, hi = fit["window"]
        t = np.linspace(lo, hi, 50)
        ax[1].semilogy(t, fit["A"] * np.exp(-fit["gamma"] * t), "--", lw=1,
                       label=f"fit gamma={fit['gamma']:.3f}")
    ax[1].set_xlabel("tau")
    ax[1].legend(loc="best", fontsize=8)
    ax[1].set_title("semilog")
    fig.tight_layout()
    outs.append(_save(fig, out_dir / f"{stem}_W.svg", deterministic))
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.plot(tau, N, style, lw=1)
    ax.set_xlabel("tau")
    ax.set_ylabel("|u|^2")
    fig.tight_layout()
    outs.append(_save(fig, out_dir / f"{stem}_norm2.svg", deterministic))
    return outs


def plot_lambda(path: Path, out_dir: Path, deterministic: bool = False) -> list:
    cols = read_columns(path, REQUIRED["lambda"])
    style = "o" if _degenerate(cols, path.name) else "-"
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for k, v in cols.items():
        if k != "tau":
            ax.plot(cols["tau"], v, style, lw=1, label=k)
    ax.set_xlabel("tau")
    ax.legend(loc="best", fontsize=7)
    fig.tight_layout()
    return [_save(fig, out_dir / f"{path.stem}.svg", deterministic)]


def plot_hcurve(path: Path, out_dir: Path, deterministic: bool = False) -> list:
    cols = read_columns(path, REQUIRED["hcurve"])
    style = "o" if _degenerate(cols, path.name) else "-o"
    r, H = cols["r"], cols["H"]
    pos = H > 0
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.loglog(r[pos], H[pos], style, ms=3, lw=1)
    ax.set_xlabel("r")
    ax.set_ylabel("H(r)")
    fig.tight_layout()
    return [_save(fig, out_dir / f"{path.stem}.svg", deterministic)]


def plot_spectrum(path: Path, out_dir: Path, deterministic: bool = False) -> list:
    cols = read_columns(path, REQUIRED["spectrum"])
    _degenerate(cols, path.name)
    targets = {"lambda_1": 0.5, "lambda_2": 1.5}
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    for k, exact in targets.items():
        if k in cols:
            err = np.abs(cols[k] - exact)
            ok = err > 0
            ax.loglog(cols["cells"][ok], err[ok], "o-", ms=3, lw=1, label=k)
    ax.set_xlabel("cells")
    ax.set_ylabel("|error|")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    return [_save(fig, out_dir / f"{path.stem}.svg", deterministic)]


def plot_dir(run_dir, deterministic: bool | None = None) -> list:
    """Plot every recognised CSV in ``run_dir``; returns the SVG paths."""
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise FileNotFoundError(f"no such run directory: {run_dir}")
    fits = {}
    if (run_dir / "fits.json").exists():
        fits = json.loads((run_dir / "fits.json").read_text())
    report = run_dir / "report.json"
    if deterministic is None and report.exists():
        meta = json.loads(report.read_text())
        deterministic = bool(meta.get("config", {}).get("deterministic", False))
    deterministic = bool(deterministic)
    csvs = sorted(run_dir.glob("*.csv"))
    if not csvs:
        raise FileNotFoundError(f"no trace CSVs in {run_dir} (expected trace_*.csv, hcurve_*.csv, ...)")
    outs = []
    for p in csvs:
        if p.name.startswith("trace_"):
            fit = fits.get(p.stem[len("trace_"):])
            if fit and not all(math.isfinite(fit.get(k, float("nan"))) for k in ("A", "gamma")):
                fit = None
            outs += plot_trace(p, run_dir, fit, deterministic)
        elif p.name.startswith("lambda_"):
            outs += plot_lambda(p, run_dir, deterministic)
        elif p.name.startswith("hcurve_"):
            outs += plot_hcurve(p, run_dir, deterministic)
        elif p.name == "spectrum_table.csv":
            outs += plot_spectrum(p, run_dir, deterministic)
    return outs
