import json
import multiprocessing
import sys
from pathlib import Path

import numpy as np
import pytest

from meshseg import nifti
from meshseg.cli import main as cli_main
from meshseg.model import GWM_LABELS, init_model, meshnet_layers, save_model_dir
from meshseg.pipeline import (
    PHASES,
    PipelineConfig,
    TelemetryRecord,
    append_telemetry,
    run_pipeline,
)
from meshseg.stats import load_telemetry
from meshseg.volume import Volume3D, identity_affine

THRESHOLD = 0.3


def threshold_model(name="thresh", dilations=(1, 2)):
    """Identity feature stack + a final conv that scores value > THRESHOLD.

    Weights are hand-set so the pipeline's output labels are predictable:
    label 1 exactly where the normalized conformed intensity exceeds the
    threshold.
    """
    m = init_model(name, meshnet_layers(dilations, 1, 2), ["background", "bright"], seed=0)
    for layer in m.conv_layers()[:-1]:
        w = m.conv_weight(layer)
        w[...] = 0.0
        w[0, 0, 1, 1, 1] = 1.0
        m.conv_bias(layer)[...] = 0.0
    final = m.conv_layers()[-1]
    m.conv_weight(final)[...] = np.array([[-1.0], [1.0]], np.float32).reshape(2, 1, 1, 1, 1)
    m.conv_bias(final)[...] = np.array([THRESHOLD, -THRESHOLD], np.float32)
    return m


def phantom_input(tmp_path, with_island=True):
    """64^3 @ 4 mm phantom: bright ellipsoid + optional spurious island."""
    extent = 64
    data = np.full((extent,) * 3, 8.0, np.float32)
    idx = np.arange(extent, dtype=np.float64)
    half = (extent - 1) / 2.0
    r = ((idx[:, None, None] - half) / 14) ** 2 + \
        ((idx[None, :, None] - half) / 12) ** 2 + \
        ((idx[None, None, :] - half) / 10) ** 2
    data[r <= 1.0] = 200.0
    if with_island:
        data[2:4, 2:4, 2:4] = 220.0
    vol = Volume3D(data, (4.0, 4.0, 4.0), identity_affine((4.0, 4.0, 4.0)))
    path = tmp_path / "input.nii.gz"
    nifti.write_volume(vol, 16, path)
    return path


@pytest.fixture(scope="module")
def model_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("models") / "thresh"
    save_model_dir(threshold_model(), path)
    return path


@pytest.fixture(scope="module")
def input_path(tmp_path_factory):
    return phantom_input(tmp_path_factory.mktemp("inputs"))


def test_full_volume_run(tmp_path, model_dir, input_path):
    out = tmp_path / "labels.nii.gz"
    labels, record = run_pipeline(PipelineConfig(
        input_path=input_path, model_dir=model_dir, output_path=out))
    assert record.status == "OK"
    assert record.error_kind == ""
    assert set(record.phase_seconds) == set(PHASES)
    assert record.phase_seconds["merging"] == 0.0
    assert record.phase_seconds["cropping"] == 0.0
    assert record.phase_seconds["inference"] > 0.0
    assert not record.tiled and not record.cropped
    assert record.cube is None and record.halo is None
    assert record.input_shape == (64, 64, 64)
    assert record.peak_bytes > 0

    assert labels.extents == (256, 256, 256)
    assert labels.data[128, 128, 128] == 1  # ellipsoid center
    assert labels.data[1, 1, 1] == 0
    # the island conformed to the region around 4*[2..4) mm; filtered out
    assert np.all(labels.data[4:20, 4:20, 4:20] == 0)
    disk = nifti.read_volume(out)
    np.testing.assert_array_equal(disk.data, labels.data)


def test_gz_output_is_actually_compressed(tmp_path, model_dir, input_path):
    out = tmp_path / "labels.nii.gz"
    _, record = run_pipeline(PipelineConfig(
        input_path=input_path, model_dir=model_dir, output_path=out))
    assert record.status == "OK"
    head = out.read_bytes()[:2]
    assert head == b"\x1f\x8b"
    assert not any(p.name.startswith(".tmp-") for p in tmp_path.iterdir())


def test_runs_are_byte_identical(tmp_path, model_dir, input_path):
    outs = []
    for name in ("a.nii.gz", "b.nii.gz"):
        out = tmp_path / name
        _, record = run_pipeline(PipelineConfig(
            input_path=input_path, model_dir=model_dir, output_path=out))
        assert record.status == "OK"
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_failsafe_fallback(tmp_path, model_dir, input_path):
    out = tmp_path / "labels.nii.gz"
    budget = 80 * 1024 * 1024  # holds one 256^3 float32 buffer, not two
    labels, record = run_pipeline(PipelineConfig(
        input_path=input_path, model_dir=model_dir, output_path=out,
        budget_bytes=budget, failsafe=True, cube=64))
    assert record.status == "OK"
    assert record.tiled
    assert record.cube == 64 and record.halo == 0
    assert record.phase_seconds["merging"] > 0.0
    assert record.peak_bytes <= budget
    assert labels is not None and out.exists()


def test_budget_failure_without_failsafe(tmp_path, model_dir, input_path):
    out = tmp_path / "labels.nii.gz"
    labels, record = run_pipeline(PipelineConfig(
        input_path=input_path, model_dir=model_dir, output_path=out,
        budget_bytes=80 * 1024 * 1024, failsafe=False))
    assert record.status == "Fail"
    assert record.error_kind == "BudgetExceeded"
    assert labels is None
    assert not out.exists()


def test_explicit_tiled_run_with_exact_halo(tmp_path, model_dir, input_path):
    full, _ = run_pipeline(PipelineConfig(
        input_path=input_path, model_dir=model_dir))
    tiled, record = run_pipeline(PipelineConfig(
        input_path=input_path, model_dir=model_dir,
        tile=True, cube=128, halo=3))  # receptive field 7 -> halo 3 is exact
    assert record.tiled
    np.testing.assert_array_equal(tiled.data, full.data)


def test_crop_path_matches_full(tmp_path, model_dir, input_path):
    out = tmp_path / "labels.nii.gz"
    full, _ = run_pipeline(PipelineConfig(input_path=input_path, model_dir=model_dir))
    cropped, record = run_pipeline(PipelineConfig(
        input_path=input_path, model_dir=model_dir, output_path=out, crop=True))
    assert record.status == "OK"
    assert record.cropped
    assert record.phase_seconds["cropping"] > 0.0
    assert cropped.extents == (256, 256, 256)
    np.testing.assert_array_equal(cropped.data, full.data)


def test_malformed_input_fails_cleanly(tmp_path, model_dir):
    bad = tmp_path / "bad.nii"
    bad.write_bytes(b"\x13\x37" * 400)
    out = tmp_path / "labels.nii.gz"
    labels, record = run_pipeline(PipelineConfig(
        input_path=bad, model_dir=model_dir, output_path=out))
    assert record.status == "Fail"
    assert record.error_kind == "BadMagic"
    assert labels is None
    assert not out.exists()


def test_missing_input_is_io_error(tmp_path, model_dir):
    labels, record = run_pipeline(PipelineConfig(
        input_path=tmp_path / "nope.nii", model_dir=model_dir))
    assert record.status == "Fail"
    assert record.error_kind == "IoError"


def test_telemetry_appended(tmp_path, model_dir, input_path):
    tel = tmp_path / "runs.jsonl"
    run_pipeline(PipelineConfig(input_path=input_path, model_dir=model_dir,
                                telemetry_path=tel))
    run_pipeline(PipelineConfig(input_path=tmp_path / "nope.nii", model_dir=model_dir,
                                telemetry_path=tel))
    records = load_telemetry(tel)
    assert len(records) == 2
    assert records[0]["status"] == "OK"
    assert records[1]["status"] == "Fail"
    assert records[1]["error_kind"] == "IoError"
    for r in records:
        assert set(r["phase_seconds"]) == set(PHASES)


def test_append_telemetry_empty_is_noop(tmp_path):
    target = tmp_path / "t.jsonl"
    append_telemetry([], target)
    assert not target.exists()


def _writer(path, start):
    from meshseg.pipeline import TelemetryRecord, append_telemetry
    for i in range(50):
        rec = TelemetryRecord(
            timestamp=f"t{start + i}", model_name="m", input_shape=(1, 1, 1),
            cropped=False, tiled=False, cube=None, halo=None,
            phase_seconds={k: 0.0 for k in PHASES}, peak_bytes=start + i,
            status="OK", error_kind="")
        append_telemetry(rec, path)


def test_concurrent_appends_stay_line_atomic(tmp_path):
    target = tmp_path / "t.jsonl"
    procs = [multiprocessing.Process(target=_writer, args=(str(target), s))
             for s in (0, 1000)]
    for p in procs:
        p.start()
    for p in procs:
        p.join()
    records = load_telemetry(target)
    assert len(records) == 100
    assert {r["peak_bytes"] for r in records} == set(range(50)) | set(range(1000, 1050))


# --- CLI ---------------------------------------------------------------------------

def test_cli_conform_and_dice(tmp_path, input_path):
    conformed = tmp_path / "conf.nii.gz"
    assert cli_main(["conform", str(input_path), str(conformed)]) == 0
    vol = nifti.read_volume(conformed)
    assert vol.extents == (256, 256, 256)
    assert cli_main(["dice", str(conformed), str(conformed)]) == 0


def test_cli_segment_and_stats(tmp_path, model_dir, input_path, capsys):
    out = tmp_path / "labels.nii.gz"
    tel = tmp_path / "runs.jsonl"
    rc = cli_main(["segment", "--model", str(model_dir), "--input", str(input_path),
                   "--output", str(out), "--telemetry", str(tel)])
    assert rc == 0
    assert out.exists()
    rc = cli_main(["stats", str(tel), "--by", "tiled"])
    assert rc == 0
    captured = capsys.readouterr().out
    assert "overall" in captured


def test_cli_segment_failure_exit_code(tmp_path, model_dir):
    bad = tmp_path / "bad.nii"
    bad.write_bytes(b"junk")
    rc = cli_main(["segment", "--model", str(model_dir), "--input", str(bad),
                   "--output", str(tmp_path / "x.nii.gz")])
    assert rc == 1


def test_cli_info(model_dir, capsys):
    assert cli_main(["info", "--model", str(model_dir)]) == 0
    out = capsys.readouterr().out
    assert "receptive field" in out
    assert "parameters" in out


def test_cli_stats_on_sample_dataset(capsys):
    data = Path(__file__).resolve().parent.parent / "data" / "telemetry_sample.jsonl"
    assert cli_main(["stats", str(data), "--by", "tiled"]) == 0
    out = capsys.readouterr().out
    assert "81.08%" in out
    assert "87.30%" in out
    assert "81.96%" in out
