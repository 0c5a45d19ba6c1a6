"""Exception hierarchy.

Every failure the pipeline can report carries the class name as its error
kind in telemetry, so class names are part of the stable interface.
"""


class MeshsegError(Exception):
    """Base class for all errors raised by this package."""


# --- NIfTI parsing / serialization ---------------------------------------

class TooShort(MeshsegError):
    """Input ends before a complete 348-byte header."""


class BadMagic(MeshsegError):
    """Header magic is neither 'n+1\\0' nor 'ni1\\0'."""


class UnsupportedDatatype(MeshsegError):
    """Datatype code outside the supported set {2, 4, 8, 16, 64}."""


class BadDims(MeshsegError):
    """Spatial extent < 1, or a 4th dimension larger than 1."""


class InvalidHeader(MeshsegError):
    """Structurally valid header with an illegal field value (e.g. vox_offset < 352)."""


class UnsupportedFormat(MeshsegError):
    """Paired .hdr/.img or NIfTI-2 input; only single-file NIfTI-1 is read."""


class TruncatedData(MeshsegError):
    """Voxel block holds fewer values than the header promises."""


class ValueOutOfRange(MeshsegError):
    """Narrowing write would lose values (e.g. 300.0 into uint8)."""


# --- Volume operations -----------------------------------------------------

class DegenerateAffine(MeshsegError):
    """Voxel-to-world affine is not invertible."""


class EmptyMask(MeshsegError):
    """Mask or label volume has no nonzero voxel."""


class BoxOutOfRange(MeshsegError):
    """Bounding box does not fit inside the host extents."""


# --- Model loading ---------------------------------------------------------

class SchemaError(MeshsegError):
    """Manifest malformed, missing fields, or checksum mismatch."""


class ChannelMismatch(MeshsegError):
    """Layer input channels disagree with the previous layer's output."""


class OffsetOutOfRange(MeshsegError):
    """Parameter offset points outside the weight blob."""


class BlobSizeMismatch(MeshsegError):
    """Weight blob length disagrees with the summed parameter extents."""


# --- Engine ----------------------------------------------------------------

class ShapeMismatch(MeshsegError):
    """Feature map shape incompatible with the layer."""


class NegativeVariance(MeshsegError):
    """Batchnorm running variance below zero."""


class BudgetExceeded(MeshsegError):
    """An allocation would push live bytes over the peak budget."""


# --- Tiling ------------------------------------------------------------------

class BadCubeSize(MeshsegError):
    """Subvolume edge length < 1."""


class OverlapDetected(MeshsegError):
    """Two tiles claim the same core voxel during merge."""


class GapDetected(MeshsegError):
    """Merged cores do not cover the target extents."""


# --- Training ----------------------------------------------------------------

class LabelOutOfRange(MeshsegError):
    """Label volume contains a value outside 0..classes-1."""


class NonFiniteLoss(MeshsegError):
    """Training loss became NaN or infinite."""


# --- Statistics ----------------------------------------------------------------

class ZeroMarginal(MeshsegError):
    """Contingency table has an all-zero row or column."""


class UnknownField(MeshsegError):
    """Telemetry grouping field not present in the records."""
