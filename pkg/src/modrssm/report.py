"""Plot-data emission: CSV tables aggregated across runs.

Reads the JSONL metrics streams of one or more run directories and
writes long-format CSVs: per-seed series, mean/std aggregates per metric
and step (population std, matching the multi-seed shaded-band figure
convention), and a final-performance comparison grouped by variant.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import MetricsError


def read_metrics(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise MetricsError(f"metrics file not found: {path}")
    records = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise MetricsError(f"{path}:{lineno}: malformed metrics line: {e}") from None
    return records


def _run_label(run_dir: Path) -> tuple[str, str]:
    summary = run_dir / "summary.json"
    if summary.exists():
        with open(summary) as f:
            info = json.load(f)
        return str(info.get("variant", "unknown")), f"{info.get('variant', 'run')}-seed{info.get('seed', '?')}"
    return "unknown", run_dir.name


def emit_report(run_dirs, out_dir) -> dict[str, Path]:
    """Aggregates metrics from run directories into CSV plot data."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs = []
    for run_dir in run_dirs:
        run_dir = Path(run_dir)
        metrics_path = run_dir / "metrics.jsonl" if run_dir.is_dir() else run_dir
        records = [r for r in read_metrics(metrics_path) if "event" not in r]
        variant, label = _run_label(metrics_path.parent)
        runs.append((variant, label, records))
    if not runs:
        raise MetricsError("no runs given")

    numeric_keys = sorted({
        k for _, _, records in runs for r in records for k, v in r.items()
        if isinstance(v, (int, float)) and v is not None and k not in ("schema", "step", "update")
    })

    per_seed = out / "per_seed.csv"
    with open(per_seed, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["run", "variant", "step", "update", "metric", "value"])
        for variant, label, records in runs:
            for r in records:
                for key in numeric_keys:
                    if r.get(key) is not None:
                        writer.writerow([label, variant, r["step"], r["update"], key, repr(float(r[key]))])

    curves = out / "curves.csv"
    with open(curves, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["metric", "update", "mean", "std", "n"])
        for key in numeric_keys:
            by_update: dict[int, list[float]] = {}
            for _, _, records in runs:
                for r in records:
                    if r.get(key) is not None:
                        by_update.setdefault(r["update"], []).append(float(r[key]))
            for update in sorted(by_update):
                values = np.asarray(by_update[update])
                writer.writerow([key, update, repr(float(values.mean())), repr(float(values.std())), len(values)])

    ablation = out / "ablation.csv"
    final_key = "episode_return_mean"
    with open(ablation, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["variant", "n_runs", "final_return_mean", "final_return_std"])
        by_variant: dict[str, list[float]] = {}
        for variant, _, records in runs:
            tail = [float(r[final_key]) for r in records if r.get(final_key) is not None]
            if tail:
                k = max(1, len(tail) // 10)
                by_variant.setdefault(variant, []).append(float(np.mean(tail[-k:])))
        for variant in sorted(by_variant):
            values = np.asarray(by_variant[variant])
            writer.writerow([variant, len(values), repr(float(values.mean())), repr(float(values.std()))])

    return {"per_seed": per_seed, "curves": curves, "ablation": ablation}
