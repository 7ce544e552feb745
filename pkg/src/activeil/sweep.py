"""Budget x classical AF x balancing AF sweeps and their summary table."""
from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .config import ExperimentConfig
from .pipeline import _write_atomic, run_experiment

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Cell:
    budget: float
    classical_af: str
    balancing_af: str

    @property
    def pair(self) -> str:
        second = self.classical_af if self.balancing_af == "same" else self.balancing_af
        return f"{self.classical_af}-{second}"

    @property
    def dirname(self) -> str:
        return f"B{self.budget:g}_{self.pair}"


def sweep_cells(budgets, classical, balancing) -> list[Cell]:
    if not budgets or not classical or not balancing:
        raise ValueError("every sweep axis needs at least one value")
    return [Cell(b, c, s) for b, c, s in itertools.product(budgets, classical, balancing)]


def _run_cell(args) -> dict:
    cfg, cell, out_dir = args
    try:
        cell_cfg = cfg.with_overrides(**{
            "budget": cell.budget,
            "plan.classical_af": cell.classical_af,
            "plan.balancing_af": cell.balancing_af,
        })
        summary = run_experiment(cell_cfg, Path(out_dir) / cell.dirname)
        acc = summary["average_incremental_accuracy"]
        cv = summary["mean_cv_labeled"]
        return {"cell": cell, "ok": True, "acc_mean": acc["mean"], "acc_std": acc["std"],
                "cv_mean": cv["mean"], "cv_std": cv["std"]}
    except Exception as exc:  # a failed cell must not stop the sweep
        log.error("cell %s failed: %s", cell.dirname, exc)
        return {"cell": cell, "ok": False, "error": f"{type(exc).__name__}: {exc}",
                "trace": traceback.format_exc()}


def run_sweep(cfg: ExperimentConfig, cells: list[Cell], out_dir: str | Path, jobs: int = 1,
              dataset: str = "synthetic") -> list[dict]:
    """Run each cell into its own directory and write ``table.csv`` (rows =
    dataset/budget, columns = AF pairs, cells = mean +- std accuracy in %) plus
    ``results.csv`` in long form. Cell order never affects cell results."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    args = [(cfg, c, str(out)) for c in cells]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(args))) as pool:
            results = list(pool.map(_run_cell, args))
    else:
        results = [_run_cell(a) for a in args]
    _write_atomic(out / "table.csv", format_table(results, dataset))
    _write_atomic(out / "results.csv", format_long(results))
    failures = {r["cell"].dirname: r["error"] for r in results if not r["ok"]}
    _write_atomic(out / "failures.json", json.dumps(failures, indent=2, sort_keys=True) + "\n")
    return results


def format_table(results: list[dict], dataset: str = "synthetic") -> str:
    pairs = list(dict.fromkeys(r["cell"].pair for r in results))
    budgets = list(dict.fromkeys(r["cell"].budget for r in results))
    by_key = {(r["cell"].budget, r["cell"].pair): r for r in results}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dataset", "budget"] + pairs)
    for b in budgets:
        row = [dataset, f"{b:g}"]
        for p in pairs:
            r = by_key.get((b, p))
            if r is None:
                row.append("")
            elif not r["ok"]:
                row.append("FAILED")
            else:
                row.append(f"{100 * r['acc_mean']:.2f} ± {100 * r['acc_std']:.2f}")
        w.writerow(row)
    return buf.getvalue()


def format_long(results: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["budget", "classical_af", "balancing_af", "status", "acc_mean", "acc_std", "cv_mean", "cv_std"])
    for r in results:
        c = r["cell"]
        if r["ok"]:
            w.writerow([f"{c.budget:g}", c.classical_af, c.balancing_af, "ok",
                        f"{r['acc_mean']:.6f}", f"{r['acc_std']:.6f}",
                        f"{r['cv_mean']:.6f}", f"{r['cv_std']:.6f}"])
        else:
            w.writerow([f"{c.budget:g}", c.classical_af, c.balancing_af, "failed", "", "", "", ""])
    return buf.getvalue()
