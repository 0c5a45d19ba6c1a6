#!/usr/bin/env python3
"""Generate data/telemetry_sample.jsonl, a synthetic-reconstructed telemetry
dataset.

The records are drawn to reproduce the published fleet marginals exactly:

  by tiled:         full-volume 217 Fail / 930 OK, sub-volume 24 / 165
  full-volume only, by cropped:   no-crop 213 / 759, cropped 4 / 171
  full-volume only, by model:     5598-class 135/644, 23290-class 78/115,
                                  27132-class (cropped) 3/168, 86372-class
                                  (cropped) 1/3
  full-volume only, by texture:   1 GiB budget class 216 / 872,
                                  4 GiB budget class 1 / 57 (plus one 256 MiB run)

Texture size is modeled abstractly: peak_bytes carries the budget class
(edge^2 * 4 bytes).  Every record is synthetic; no real telemetry is
included.  Timings are drawn from normal distributions around per-model
means.  Deterministic under the fixed seed.
"""

import json
import sys
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

TEX_8192 = 8192 * 8192 * 4
TEX_16384 = 16384 * 16384 * 4
TEX_32768 = 32768 * 32768 * 4

# model, tiled, cropped, fails, oks, mean inference seconds
GROUPS = [
    ("gwm_light", False, False, 135, 644, 9.9),
    ("gwm_large", False, False, 78, 115, 14.0),
    ("atlas_cortical_50", False, True, 3, 168, 8.5),
    ("atlas_aparc_104", False, True, 1, 3, 13.7),
    ("gwm_failsafe", True, False, 7, 148, 39.8),
    ("atlas_aparc_104_failsafe", True, True, 17, 17, 37.8),
]

START = datetime(2022, 5, 1, tzinfo=timezone.utc)
SPAN_DAYS = 395


def _positive_normal(rng, mean, sd):
    return float(max(0.05, rng.normal(mean, sd)))


def build_records(seed=20230531):
    rng = np.random.default_rng(seed)
    records = []
    for model, tiled, cropped, fails, oks, inf_mean in GROUPS:
        for ok in [False] * fails + [True] * oks:
            phases = {k: 0.0 for k in
                      ("preprocessing", "cropping", "inference", "merging", "postprocessing")}
            phases["preprocessing"] = _positive_normal(rng, 2.0, 0.5)
            if cropped:
                phases["cropping"] = _positive_normal(rng, 26.0, 3.0)
            if ok:
                phases["inference"] = _positive_normal(rng, inf_mean, inf_mean * 0.15)
                if tiled:
                    phases["merging"] = _positive_normal(rng, 2.0 if "gwm" in model else 16.6, 0.4)
                phases["postprocessing"] = _positive_normal(rng, 14.0, 2.0)
            else:
                phases["inference"] = _positive_normal(rng, inf_mean * 0.4, 1.0)
            when = START + timedelta(seconds=float(rng.uniform(0, SPAN_DAYS * 86400)))
            records.append({
                "timestamp": when.isoformat(timespec="seconds"),
                "model_name": model,
                "input_shape": [256, 256, 256],
                "cropped": cropped,
                "tiled": tiled,
                "cube": 64 if tiled else None,
                "halo": 0 if tiled else None,
                "phase_seconds": {k: round(v, 6) for k, v in phases.items()},
                "peak_bytes": TEX_8192 if tiled else TEX_16384,
                "status": "OK" if ok else "Fail",
                "error_kind": "" if ok else "BudgetExceeded",
            })

    # texture-class assignment among full-volume records (see module docstring)
    full = [r for r in records if not r["tiled"]]
    big_ok = [r for r in full if r["status"] == "OK" and r["model_name"] == "gwm_large"][:54]
    for r in big_ok:
        r["peak_bytes"] = TEX_32768
    for r in full:
        if r["model_name"] == "atlas_aparc_104":
            r["peak_bytes"] = TEX_32768
    small = next(r for r in full
                 if r["status"] == "OK" and r["model_name"] == "gwm_light")
    small["peak_bytes"] = TEX_8192

    records.sort(key=lambda r: r["timestamp"])
    return records


def main(out_path):
    records = build_records()
    with open(out_path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, separators=(",", ":")) + "\n")
    print(f"wrote {len(records)} records to {out_path}")


if __name__ == "__main__":
    target = sys.argv[1] if len(sys.argv) > 1 else \
        Path(__file__).resolve().parent.parent / "data" / "telemetry_sample.jsonl"
    main(target)
