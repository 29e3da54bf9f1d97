"""Minimal single-file NIfTI-1 reader/writer.

Covers exactly what this toolkit needs: little-endian .nii files holding a
3D or 4D scalar image as float32, float64, int16 (with scl_slope /
scl_inter applied on read), or uint8. Data on disk is in the standard
x-fastest order, which maps to our in-memory C-ordered (t, z, y, x) /
(z, y, x) arrays without copying.
"""

import struct

import numpy as np

HEADER_SIZE = 348
VOX_OFFSET = 352

DT_UINT8 = 2
DT_INT16 = 4
DT_FLOAT32 = 16
DT_FLOAT64 = 64

_DTYPES = {
    DT_UINT8: np.dtype("<u1"),
    DT_INT16: np.dtype("<i2"),
    DT_FLOAT32: np.dtype("<f4"),
    DT_FLOAT64: np.dtype("<f8"),
}
_CODES = {v: k for k, v in _DTYPES.items()}


def write_nifti(path, array, spacing, frame_times=None, scl_slope=1.0,
                scl_inter=0.0):
    """Write a (z, y, x) or (t, z, y, x) array as a .nii file.

    ``spacing`` is (sx, sy, sz) in mm. For 4D data the time step stored in
    pixdim[4] is the first frame interval (informational only; real frame
    times live in the sidecar).
    """
    array = np.asarray(array)
    if array.ndim not in (3, 4):
        raise ValueError("bad volume file: need a 3D or 4D array")
    if array.dtype not in _CODES:
        array = array.astype("<f4")
    dtype = array.dtype.newbyteorder("<")
    array = np.ascontiguousarray(array, dtype=dtype)

    if array.ndim == 3:
        nz, ny, nx = array.shape
        dim = [3, nx, ny, nz, 1, 1, 1, 1]
    else:
        nt, nz, ny, nx = array.shape
        dim = [4, nx, ny, nz, nt, 1, 1, 1]

    dt = 0.0
    if frame_times is not None and len(frame_times) > 1:
        dt = float(frame_times[1] - frame_times[0])
    pixdim = [1.0, float(spacing[0]), float(spacing[1]), float(spacing[2]),
              dt, 0.0, 0.0, 0.0]

    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, *dim)
    struct.pack_into("<h", hdr, 70, _CODES[dtype])
    struct.pack_into("<h", hdr, 72, dtype.itemsize * 8)
    struct.pack_into("<8f", hdr, 76, *pixdim)
    struct.pack_into("<f", hdr, 108, float(VOX_OFFSET))
    struct.pack_into("<f", hdr, 112, float(scl_slope))
    struct.pack_into("<f", hdr, 116, float(scl_inter))
    struct.pack_into("<B", hdr, 123, 2 | 8)  # mm + seconds
    struct.pack_into("<4s", hdr, 344, b"n+1\x00")

    with open(path, "wb") as fh:
        fh.write(bytes(hdr))
        fh.write(b"\x00" * (VOX_OFFSET - HEADER_SIZE))
        fh.write(array.tobytes())


def read_nifti(path):
    """Read a .nii file; returns (array, spacing).

    The array comes back float64, shaped (z, y, x) or (t, z, y, x), with
    int16 payloads mapped through scl_slope / scl_inter (slope 0 treated
    as 1, per the NIfTI convention).
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < HEADER_SIZE:
        raise ValueError("bad volume file: truncated header")
    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    if sizeof_hdr != HEADER_SIZE:
        raise ValueError("bad volume file: not a little-endian NIfTI-1 file")
    (magic,) = struct.unpack_from("<4s", raw, 344)
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise ValueError("bad volume file: bad magic")

    dim = struct.unpack_from("<8h", raw, 40)
    ndim = dim[0]
    if ndim not in (3, 4):
        raise ValueError("bad volume file: only 3D/4D images supported")
    nx, ny, nz = dim[1], dim[2], dim[3]
    nt = dim[4] if ndim == 4 else 1

    (datatype,) = struct.unpack_from("<h", raw, 70)
    if datatype not in _DTYPES:
        raise ValueError(f"bad volume file: unsupported datatype {datatype}")
    dtype = _DTYPES[datatype]

    pixdim = struct.unpack_from("<8f", raw, 76)
    spacing = (float(pixdim[1]), float(pixdim[2]), float(pixdim[3]))
    (vox_offset,) = struct.unpack_from("<f", raw, 108)
    (scl_slope,) = struct.unpack_from("<f", raw, 112)
    (scl_inter,) = struct.unpack_from("<f", raw, 116)

    count = nx * ny * nz * nt
    offset = int(vox_offset)
    if offset < HEADER_SIZE or len(raw) < offset + count * dtype.itemsize:
        raise ValueError("bad volume file: payload does not match header dims")
    flat = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)

    shape = (nt, nz, ny, nx) if ndim == 4 else (nz, ny, nx)
    array = flat.reshape(shape).astype(np.float64)
    if datatype == DT_INT16:
        slope = float(scl_slope) if scl_slope != 0.0 else 1.0
        array = array * slope + float(scl_inter)
    return array, spacing
