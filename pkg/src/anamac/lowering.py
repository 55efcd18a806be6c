"""Convolutions expressed as matrix multiplications.

The kernel is unrolled into the vertical (row) dimension with all output
channels placed horizontally aside each other; traversing the input yields one
overlapping input vector per output position, multiplied by a weight matrix
that is constant across positions. Small 1-d kernels can additionally be
packed multiple times diagonally into one array, shifted by stride * C_in rows
per copy, so several output positions compute in a single run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chip import COLS, ROWS


class ShapeMismatch(ValueError):
    pass


class EmptyOutput(ValueError):
    pass


class KernelTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class ConvSpec:
    """Plain strided valid convolution; no padding, dilation or bias."""

    dims: int
    in_channels: int
    out_channels: int
    kernel: tuple  # (k,) or (k1, k2)
    stride: tuple  # per spatial dim, >= 1
    extent: tuple  # input spatial extent(s)

    def __post_init__(self):
        if self.dims not in (1, 2):
            raise ShapeMismatch("only conv1d and conv2d are supported")
        if len(self.kernel) != self.dims or len(self.stride) != self.dims or len(self.extent) != self.dims:
            raise ShapeMismatch("kernel/stride/extent must have one entry per spatial dim")
        if any(s < 1 for s in self.stride):
            raise ShapeMismatch("stride must be >= 1")
        if any(o < 1 for o in self.out_extent):
            raise EmptyOutput(f"output extent {self.out_extent} < 1")

    @property
    def out_extent(self) -> tuple:
        return tuple((l - k) // s + 1 for l, k, s in zip(self.extent, self.kernel, self.stride))

    @property
    def taps(self) -> int:
        return int(np.prod(self.kernel))

    @property
    def matrix_rows(self) -> int:
        return self.taps * self.in_channels

    @property
    def positions(self) -> int:
        return int(np.prod(self.out_extent))


def conv1d_spec(in_channels, out_channels, k, stride, extent) -> ConvSpec:
    return ConvSpec(1, in_channels, out_channels, (k,), (stride,), (extent,))


def conv2d_spec(in_channels, out_channels, kernel, stride, extent) -> ConvSpec:
    return ConvSpec(2, in_channels, out_channels, tuple(kernel), tuple(stride), tuple(extent))


def unroll_kernel(spec: ConvSpec, kernel: np.ndarray) -> np.ndarray:
    """(C_out, C_in, *k) kernel -> (taps * C_in, C_out) weight matrix.

    Row index = flattened tap index major, input channel minor, so shifting a
    packed copy by stride positions moves it by stride * C_in rows.
    """
    kernel = np.asarray(kernel)
    expected = (spec.out_channels, spec.in_channels) + spec.kernel
    if kernel.shape != expected:
        raise ShapeMismatch(f"kernel shape {kernel.shape}, expected {expected}")
    # -> (taps, C_in, C_out) -> (taps * C_in, C_out)
    flat = kernel.reshape(spec.out_channels, spec.in_channels, spec.taps)
    return np.ascontiguousarray(flat.transpose(2, 1, 0).reshape(spec.matrix_rows, spec.out_channels))


def gather_input_vectors(spec: ConvSpec, x: np.ndarray) -> np.ndarray:
    """(B, C_in, *L) input -> (B * positions, taps * C_in) matmul inputs."""
    x = np.asarray(x)
    single = x.ndim == spec.dims + 1
    if single:
        x = x[None]
    if x.shape[1:] != (spec.in_channels,) + spec.extent:
        raise ShapeMismatch(
            f"input shape {x.shape[1:]}, expected {(spec.in_channels,) + spec.extent}"
        )
    batch = x.shape[0]
    vectors = np.empty((batch, spec.positions, spec.matrix_rows), dtype=x.dtype)
    if spec.dims == 1:
        (k,), (s,) = spec.kernel, spec.stride
        for p in range(spec.positions):
            # window (C_in, k) -> rows ordered tap-major, channel-minor
            window = x[:, :, p * s : p * s + k]
            vectors[:, p] = window.transpose(0, 2, 1).reshape(batch, -1)
    else:
        (k1, k2), (s1, s2) = spec.kernel, spec.stride
        p1, p2 = spec.out_extent
        for i in range(p1):
            for j in range(p2):
                window = x[:, :, i * s1 : i * s1 + k1, j * s2 : j * s2 + k2]
                # (B, C_in, k1, k2) -> tap-major (k1, k2), channel-minor
                vec = window.transpose(0, 2, 3, 1).reshape(batch, -1)
                vectors[:, i * p2 + j] = vec
    return vectors.reshape(batch * spec.positions, spec.matrix_rows)


@dataclass(frozen=True)
class OutputDescriptor:
    """Maps flat matmul outputs back to (batch, C_out, *spatial)."""

    batch: int
    out_channels: int
    out_extent: tuple

    def fold(self, y_flat: np.ndarray) -> np.ndarray:
        y = np.asarray(y_flat).reshape(self.batch, *self.out_extent, self.out_channels)
        axes = (0, self.ndim + 1) + tuple(range(1, self.ndim + 1))
        return np.ascontiguousarray(y.transpose(axes))

    @property
    def ndim(self) -> int:
        return len(self.out_extent)


def lower_conv(spec: ConvSpec, kernel, x):
    """(weight_matrix, input_vectors, output_descriptor) for one conv."""
    x = np.asarray(x)
    single = x.ndim == spec.dims + 1
    batch = 1 if single else x.shape[0]
    matrix = unroll_kernel(spec, kernel)
    vectors = gather_input_vectors(spec, x)
    return matrix, vectors, OutputDescriptor(batch, spec.out_channels, spec.out_extent)


@dataclass(frozen=True)
class ExpansionPlan:
    """Diagonal packing of P shifted kernel copies into one array."""

    spec: ConvSpec
    copies: int
    row_offset_per_copy: int  # stride * C_in
    col_offset_per_copy: int  # C_out
    packed_rows: int
    packed_cols: int


def plan_expansion(spec: ConvSpec, cap_rows: int, cap_cols: int = COLS) -> ExpansionPlan:
    if spec.dims != 1:
        raise ShapeMismatch("expansion is defined for conv1d only")
    (k,), (s,) = spec.kernel, spec.stride
    rows_one = k * spec.in_channels
    if rows_one > cap_rows or spec.out_channels > cap_cols:
        raise KernelTooLarge(
            f"unrolled kernel needs {rows_one} rows x {spec.out_channels} cols, "
            f"array caps are {cap_rows} x {cap_cols} (partition first)"
        )
    row_step = s * spec.in_channels
    copies = min(
        (cap_rows - rows_one) // row_step + 1,
        cap_cols // spec.out_channels,
    )
    return ExpansionPlan(
        spec=spec,
        copies=copies,
        row_offset_per_copy=row_step,
        col_offset_per_copy=spec.out_channels,
        packed_rows=(copies - 1) * row_step + rows_one,
        packed_cols=copies * spec.out_channels,
    )


def pack_expanded_matrix(plan: ExpansionPlan, per_copy_matrices) -> np.ndarray:
    """Place each copy's (rows_one, C_out) matrix at its diagonal offset.

    Copies are stored independently (learned individually on hardware) even
    when initialized identically.
    """
    rows_one = plan.spec.matrix_rows
    matrices = list(per_copy_matrices)
    if len(matrices) != plan.copies:
        raise ShapeMismatch(f"expected {plan.copies} copy matrices, got {len(matrices)}")
    packed = np.zeros((plan.packed_rows, plan.packed_cols), dtype=np.asarray(matrices[0]).dtype)
    for c, mat in enumerate(matrices):
        mat = np.asarray(mat)
        if mat.shape != (rows_one, plan.spec.out_channels):
            raise ShapeMismatch(f"copy matrix shape {mat.shape}, expected {(rows_one, plan.spec.out_channels)}")
        r0 = c * plan.row_offset_per_copy
        c0 = c * plan.col_offset_per_copy
        packed[r0 : r0 + rows_one, c0 : c0 + plan.spec.out_channels] = mat
    return packed


def _default_mac(vectors: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    return vectors.astype(np.int64) @ matrix.astype(np.int64)


def execute_expanded(plan: ExpansionPlan, per_copy_matrices, x, mac_fn=_default_mac) -> np.ndarray:
    """Evaluate a conv1d with P positions per chip run.

    One run covers P consecutive output positions; the last run may be partial
    (excess columns are discarded, missing input taps are zero-padded).
    ``mac_fn(vectors, matrix)`` performs the actual multiply; the default is
    the exact integer product.
    """
    spec = plan.spec
    x = np.asarray(x)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.shape[1:] != (spec.in_channels,) + spec.extent:
        raise ShapeMismatch(f"input shape {x.shape[1:]}, expected {(spec.in_channels,) + spec.extent}")
    batch = x.shape[0]
    (s,) = spec.stride
    packed = pack_expanded_matrix(plan, per_copy_matrices)
    positions = spec.positions
    n_runs = -(-positions // plan.copies)

    out = np.empty((batch, spec.out_channels, positions), dtype=np.int64)
    taps_span = plan.packed_rows // spec.in_channels  # taps covered per run
    for run in range(n_runs):
        p0 = run * plan.copies
        t0 = p0 * s
        window = np.zeros((batch, spec.in_channels, taps_span), dtype=x.dtype)
        avail = min(taps_span, spec.extent[0] - t0)
        window[:, :, :avail] = x[:, :, t0 : t0 + avail]
        vectors = window.transpose(0, 2, 1).reshape(batch, -1)
        result = np.asarray(mac_fn(vectors, packed))
        live = min(plan.copies, positions - p0)
        for c in range(live):
            cols = slice(c * spec.out_channels, (c + 1) * spec.out_channels)
            out[:, :, p0 + c] = result[:, cols]
    return out[0] if single else out


def expanded_run_count(plan: ExpansionPlan) -> int:
    return -(-plan.spec.positions // plan.copies)


def direct_conv(spec: ConvSpec, kernel, x) -> np.ndarray:
    """Reference convolution by explicit summation (integer-exact)."""
    kernel = np.asarray(kernel, dtype=np.int64)
    x = np.asarray(x, dtype=np.int64)
    single = x.ndim == spec.dims + 1
    if single:
        x = x[None]
    batch = x.shape[0]
    if spec.dims == 1:
        (k,), (s,) = spec.kernel, spec.stride
        (p,) = spec.out_extent
        out = np.zeros((batch, spec.out_channels, p), dtype=np.int64)
        for pos in range(p):
            window = x[:, :, pos * s : pos * s + k]
            out[:, :, pos] = np.einsum("bci,oci->bo", window, kernel)
    else:
        (k1, k2), (s1, s2) = spec.kernel, spec.stride
        p1, p2 = spec.out_extent
        out = np.zeros((batch, spec.out_channels, p1, p2), dtype=np.int64)
        for i in range(p1):
            for j in range(p2):
                window = x[:, :, i * s1 : i * s1 + k1, j * s2 : j * s2 + k2]
                out[:, :, i, j] = np.einsum("bcij,ocij->bo", window, kernel)
    return out[0] if single else out


def layout_to_json(spec: ConvSpec) -> dict:
    """CLI --explain payload: the unrolled matrix layout."""
    doc = {
        "matrix_rows": spec.matrix_rows,
        "matrix_cols": spec.out_channels,
        "positions": spec.positions,
        "out_extent": list(spec.out_extent),
        "row_layout": "tap-major, input-channel-minor",
    }
    if spec.dims == 1:
        try:
            plan = plan_expansion(spec, ROWS)
            doc["expansion"] = {
                "copies": plan.copies,
                "row_offset_per_copy": plan.row_offset_per_copy,
                "col_offset_per_copy": plan.col_offset_per_copy,
                "packed_rows": plan.packed_rows,
                "packed_cols": plan.packed_cols,
            }
        except KernelTooLarge as e:
            doc["expansion"] = {"error": str(e)}
    return doc
