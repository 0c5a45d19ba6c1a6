#!/usr/bin/env python3
"""Generate the frontend's static assets and parity fixtures.

Writes a small synthetic T1-like volume with an anisotropic affine, runs the
native pipeline on it (crop enabled, gwm_tiny model, uncompressed output),
and stores the inputs plus the golden label bytes under frontend/.  The
frontend test suite re-runs the same pipeline in TypeScript and asserts the
downloaded label file matches byte for byte.
"""

import json
import shutil
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from meshseg import nifti  # noqa: E402
from meshseg.pipeline import PipelineConfig, run_pipeline  # noqa: E402
from meshseg.volume import Volume3D  # noqa: E402

SPACING = (1.5, 1.7, 1.4)
ORIGIN = (-70.0, -80.0, -62.0)
EXTENT = 96


def make_sample_volume(seed=424242) -> Volume3D:
    rng = np.random.default_rng(seed)
    half = (EXTENT - 1) / 2.0
    center = half + rng.uniform(-2.0, 2.0, size=3)
    outer = np.array([14.0, 12.5, 13.5]) + rng.uniform(-1, 1, size=3)
    inner = outer * 0.62
    idx = np.arange(EXTENT, dtype=np.float64)
    r2 = lambda radii: (
        ((idx[:, None, None] - center[0]) / radii[0]) ** 2
        + ((idx[None, :, None] - center[1]) / radii[1]) ** 2
        + ((idx[None, None, :] - center[2]) / radii[2]) ** 2)
    labels = np.zeros((EXTENT,) * 3, dtype=np.int32)
    labels[r2(outer) <= 1.0] = 1
    labels[r2(inner) <= 1.0] = 2
    # zero background (skull-stripped look) keeps the foreground crop tight
    means = np.array([0.0, 120.0, 205.0])
    sigmas = np.array([0.0, 7.0, 7.0])
    image = np.clip(rng.normal(means[labels], sigmas[labels]), 0, 255)
    affine = np.eye(4)
    affine[0, 0], affine[1, 1], affine[2, 2] = SPACING
    affine[:3, 3] = ORIGIN
    return Volume3D(np.rint(image).astype(np.float32), SPACING, affine)


def main():
    fixtures = ROOT / "frontend" / "test" / "fixtures"
    public = ROOT / "frontend" / "public"
    fixtures.mkdir(parents=True, exist_ok=True)
    (public / "sample").mkdir(parents=True, exist_ok=True)
    (public / "models").mkdir(parents=True, exist_ok=True)

    vol = make_sample_volume()
    sample_path = fixtures / "sample_t1.nii.gz"
    nifti.write_volume(vol, 2, sample_path)
    shutil.copy(sample_path, public / "sample" / "sample_t1.nii.gz")

    model_src = ROOT / "models" / "gwm_tiny"
    model_dst = public / "models" / "gwm_tiny"
    if model_dst.exists():
        shutil.rmtree(model_dst)
    shutil.copytree(model_src, model_dst)

    options = {"model": "gwm_tiny", "crop": True, "crop_margin": 8,
               "tile": False, "cube": 64, "halo": 0, "connectivity": 26}
    golden = fixtures / "golden_labels.nii.gz"
    labels, record = run_pipeline(PipelineConfig(
        input_path=sample_path,
        model_dir=model_src,
        output_path=golden,
        crop=options["crop"],
        crop_margin=options["crop_margin"],
        connectivity=options["connectivity"],
    ))
    assert record.status == "OK", record.error_kind
    fg = int((labels.data != 0).sum())
    assert fg > 0, "golden labels are empty; fixture model/volume need retuning"
    (fixtures / "options.json").write_text(json.dumps(options, indent=2) + "\n")
    print(f"sample {vol.extents} @ {SPACING} mm; golden labels: {fg} foreground voxels")
    print(f"phases: { {k: round(v, 3) for k, v in record.phase_seconds.items()} }")


if __name__ == "__main__":
    main()
