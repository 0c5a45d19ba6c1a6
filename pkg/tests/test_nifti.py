import gzip
import io

import numpy as np
import pytest

from meshseg import nifti
from meshseg.errors import (
    BadDims,
    BadMagic,
    InvalidHeader,
    TooShort,
    TruncatedData,
    UnsupportedDatatype,
    UnsupportedFormat,
    ValueOutOfRange,
)
from meshseg.volume import Volume3D, identity_affine

from conftest import make_volume


def _patched(payload: bytes, **fields) -> bytes:
    """Return payload with header fields overwritten."""
    buf = bytearray(payload)
    hdr = np.frombuffer(buf, dtype=nifti.HEADER_DTYPE, count=1)
    for name, value in fields.items():
        hdr[0][name] = value
    return bytes(buf)


def _tiny_volume(dtype=np.float32):
    data = np.arange(8, dtype=dtype).reshape(2, 2, 2, order="F")
    return make_volume(data, spacing=(1.0, 2.0, 3.0))


def test_parse_header_valid_and_extents():
    payload = nifti.serialize_volume(_tiny_volume(), 16)
    header = nifti.parse_header(payload)
    assert header.extents == (2, 2, 2)
    assert header.datatype_code == 16
    assert header.endianness == "little"
    assert header.magic == b"n+1\x00"
    assert header.vox_offset == 352


def test_parse_header_too_short():
    with pytest.raises(TooShort):
        nifti.parse_header(b"\x00" * 100)


def test_parse_header_garbage_is_bad_magic():
    with pytest.raises(BadMagic):
        nifti.parse_header(b"\xde\xad\xbe\xef" * 100)


def test_parse_header_bad_magic_field():
    payload = _patched(nifti.serialize_volume(_tiny_volume(), 2), magic=b"abc\x00")
    with pytest.raises(BadMagic):
        nifti.parse_header(payload)


def test_parse_header_unsupported_datatype():
    payload = _patched(nifti.serialize_volume(_tiny_volume(), 2), datatype=128)
    with pytest.raises(UnsupportedDatatype):
        nifti.parse_header(payload)


def test_parse_header_bad_dims():
    payload = _patched(nifti.serialize_volume(_tiny_volume(), 2),
                       dim=[3, 0, 2, 2, 1, 1, 1, 1])
    with pytest.raises(BadDims):
        nifti.parse_header(payload)


def test_parse_header_multiframe_rejected():
    payload = _patched(nifti.serialize_volume(_tiny_volume(), 2),
                       dim=[4, 2, 2, 2, 5, 1, 1, 1])
    with pytest.raises(BadDims):
        nifti.parse_header(payload)


def test_four_d_single_frame_accepted():
    payload = _patched(nifti.serialize_volume(_tiny_volume(), 2),
                       dim=[4, 2, 2, 2, 1, 1, 1, 1])
    vol = nifti.read_volume(payload)
    assert vol.extents == (2, 2, 2)


def test_low_vox_offset_rejected():
    payload = _patched(nifti.serialize_volume(_tiny_volume(), 2), vox_offset=200.0)
    with pytest.raises(InvalidHeader):
        nifti.parse_header(payload)


def test_paired_format_rejected():
    payload = _patched(nifti.serialize_volume(_tiny_volume(), 2), magic=b"ni1\x00")
    with pytest.raises(UnsupportedFormat):
        nifti.read_volume(payload)


def test_read_x_fastest_order():
    # data bytes 0..7 with extents (2,2,2): value at (1,0,0) must be 1
    vol = nifti.read_volume(nifti.serialize_volume(_tiny_volume(np.uint8), 2))
    assert vol.data[1, 0, 0] == 1.0
    assert vol.data[0, 1, 0] == 2.0
    assert vol.data[0, 0, 1] == 4.0
    assert list(vol.data.flatten(order="F")) == list(range(8))


def test_scl_slope_inter_applied():
    payload = _patched(nifti.serialize_volume(_tiny_volume(np.uint8), 2),
                       scl_slope=2.0, scl_inter=1.0)
    vol = nifti.read_volume(payload)
    assert list(vol.data.flatten(order="F")) == [1, 3, 5, 7, 9, 11, 13, 15]


def test_scl_slope_zero_means_no_scaling():
    payload = _patched(nifti.serialize_volume(_tiny_volume(np.uint8), 2),
                       scl_slope=0.0, scl_inter=5.0)
    vol = nifti.read_volume(payload)
    assert vol.data.max() == 7.0


@pytest.mark.parametrize("code,maker", [
    (2, lambda rng: rng.integers(0, 256, (3, 4, 5)).astype(np.float32)),
    (4, lambda rng: rng.integers(-30000, 30000, (3, 4, 5)).astype(np.float32)),
    (8, lambda rng: rng.integers(-2**30, 2**30, (3, 4, 5)).astype(np.float32)),
    (16, lambda rng: rng.standard_normal((3, 4, 5)).astype(np.float32)),
    (64, lambda rng: rng.standard_normal((3, 4, 5)).astype(np.float32)),
])
def test_round_trip_every_datatype(code, maker, rng):
    vol = make_volume(maker(rng), spacing=(0.5, 1.0, 2.0), origin=(-3.0, 4.5, 9.0))
    back = nifti.read_volume(nifti.serialize_volume(vol, code))
    np.testing.assert_array_equal(back.data, vol.data)
    np.testing.assert_allclose(back.affine, vol.affine, atol=1e-6)
    assert back.spacing == vol.spacing


def test_float32_round_trip_bit_exact(rng):
    vol = make_volume(rng.standard_normal((4, 4, 4)).astype(np.float32))
    back = nifti.read_volume(nifti.serialize_volume(vol, 16))
    assert back.data.tobytes() == vol.data.astype(np.float32).tobytes()


def test_label_volume_uint8_round_trip():
    labels = np.zeros((4, 4, 4), dtype=np.float32)
    labels[1:3, 1:3, 1:3] = 1
    labels[2, 2, 2] = 2
    vol = make_volume(labels)
    back = nifti.read_volume(nifti.serialize_volume(vol, 2))
    np.testing.assert_array_equal(back.data, labels)


def test_value_out_of_range():
    vol = make_volume(np.full((2, 2, 2), 300.0, dtype=np.float32))
    with pytest.raises(ValueOutOfRange):
        nifti.serialize_volume(vol, 2)


def test_gzip_transparency(rng):
    vol = make_volume(rng.standard_normal((5, 4, 3)).astype(np.float32))
    payload = nifti.serialize_volume(vol, 16)
    plain = nifti.read_volume(payload)
    zipped = nifti.read_volume(gzip.compress(payload))
    assert zipped.data.tobytes() == plain.data.tobytes()
    np.testing.assert_array_equal(zipped.affine, plain.affine)


def _byteswapped(payload: bytes) -> bytes:
    """Big-endian rendition of a little-endian single-file volume."""
    hdr = np.frombuffer(payload[:348], dtype=nifti.HEADER_DTYPE, count=1)
    be_hdr = hdr.astype(nifti.HEADER_DTYPE.newbyteorder(">"))
    code = int(hdr[0]["datatype"])
    dtype = nifti.DTYPES[code]
    voxels = np.frombuffer(payload, dtype=dtype, offset=352)
    return be_hdr.tobytes() + payload[348:352] + voxels.astype(dtype.newbyteorder(">")).tobytes()


@pytest.mark.parametrize("code", [2, 4, 16, 64])
def test_endianness_invariance(code, rng):
    if code == 2:
        data = rng.integers(0, 256, (3, 3, 3)).astype(np.float32)
    elif code == 4:
        data = rng.integers(-100, 100, (3, 3, 3)).astype(np.float32)
    else:
        data = rng.standard_normal((3, 3, 3)).astype(np.float32)
    payload = nifti.serialize_volume(make_volume(data), code)
    le = nifti.read_volume(payload)
    be = nifti.read_volume(_byteswapped(payload))
    assert nifti.parse_header(_byteswapped(payload)).endianness == "big"
    assert be.data.tobytes() == le.data.tobytes()
    np.testing.assert_allclose(be.affine, le.affine, atol=1e-6)


def test_truncated_data():
    payload = nifti.serialize_volume(_tiny_volume(), 16)
    with pytest.raises(TruncatedData):
        nifti.read_volume(payload[:-5])


def test_write_to_paths(tmp_path, rng):
    vol = make_volume(rng.standard_normal((3, 3, 3)).astype(np.float32))
    plain = tmp_path / "vol.nii"
    zipped = tmp_path / "vol.nii.gz"
    nifti.write_volume(vol, 16, plain)
    nifti.write_volume(vol, 16, zipped)
    assert zipped.read_bytes()[:2] == b"\x1f\x8b"
    a = nifti.read_volume(plain)
    b = nifti.read_volume(zipped)
    assert a.data.tobytes() == b.data.tobytes()


def test_gzip_write_deterministic(tmp_path, rng):
    vol = make_volume(rng.standard_normal((3, 3, 3)).astype(np.float32))
    p1, p2 = tmp_path / "a.nii.gz", tmp_path / "b.nii.gz"
    nifti.write_volume(vol, 16, p1)
    nifti.write_volume(vol, 16, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_write_to_stream(rng):
    vol = make_volume(rng.standard_normal((3, 3, 3)).astype(np.float32))
    buf = io.BytesIO()
    nifti.write_volume(vol, 16, buf)
    back = nifti.read_volume(buf.getvalue())
    assert back.data.tobytes() == vol.data.astype(np.float32).tobytes()


def test_qform_fallback_affine():
    # sform off, qform identity rotation with offsets
    payload = _patched(nifti.serialize_volume(_tiny_volume(), 16),
                       sform_code=0, qform_code=1,
                       quatern_b=0.0, quatern_c=0.0, quatern_d=0.0,
                       qoffset_x=10.0, qoffset_y=-4.0, qoffset_z=2.5)
    vol = nifti.read_volume(payload)
    expected = identity_affine((1.0, 2.0, 3.0), (10.0, -4.0, 2.5))
    np.testing.assert_allclose(vol.affine, expected, atol=1e-6)


def test_pixdim_fallback_affine():
    payload = _patched(nifti.serialize_volume(_tiny_volume(), 16),
                       sform_code=0, qform_code=0)
    vol = nifti.read_volume(payload)
    np.testing.assert_allclose(vol.affine, identity_affine((1.0, 2.0, 3.0)), atol=1e-6)
