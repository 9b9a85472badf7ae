"""Toy convolutional model exported in the ONNX exchange format.

The graph is Conv(1x1x1, 4 -> 3 channels) followed by Sigmoid, so the
analytic response at every voxel is

    y[k] = sigmoid( sum_c W[k, c] * x[c] + B[k] )

with the fixed weights below. An all-zero patch therefore yields the
constant outputs sigmoid(B) = (0.5, 0.47502081, 0.549834) per channel, and
outputs are always inside (0, 1).

The file is assembled with a minimal protobuf wire encoder (standard ONNX
field numbering, opset 13); no ONNX tooling is needed to produce it.
"""

from pathlib import Path

import numpy as np

from .errors import IoFailure

TOY_WEIGHTS = np.array(
    [
        [0.25, 0.25, 0.25, 0.25],
        [0.40, 0.30, 0.20, 0.10],
        [0.50, -0.25, 0.50, -0.25],
    ],
    dtype=np.float32,
)
TOY_BIAS = np.array([0.0, -0.1, 0.2], dtype=np.float32)


def toy_response(patch: np.ndarray) -> np.ndarray:
    """The documented analytic response for a (4, X, Y, Z) patch."""
    lin = np.einsum("kc,c...->k...", TOY_WEIGHTS.astype(np.float64), patch.astype(np.float64))
    lin += TOY_BIAS.reshape(3, 1, 1, 1)
    out = np.empty_like(lin)
    pos = lin >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-lin[pos]))
    exp = np.exp(lin[~pos])
    out[~pos] = exp / (1.0 + exp)
    return out


# --- protobuf wire encoding -------------------------------------------------

def _varint(n: int) -> bytes:
    out = bytearray()
    while True:
        bits = n & 0x7F
        n >>= 7
        if n:
            out.append(bits | 0x80)
        else:
            out.append(bits)
            return bytes(out)


def _key(field: int, wire: int) -> bytes:
    return _varint((field << 3) | wire)


def _len_field(field: int, payload: bytes) -> bytes:
    return _key(field, 2) + _varint(len(payload)) + payload


def _varint_field(field: int, value: int) -> bytes:
    return _key(field, 0) + _varint(value)


def _string(field: int, text: str) -> bytes:
    return _len_field(field, text.encode())


def _tensor(name: str, array: np.ndarray) -> bytes:
    array = np.asarray(array, dtype="<f4")
    body = b"".join(_varint_field(1, d) for d in array.shape)
    body += _varint_field(2, 1)  # FLOAT
    body += _string(8, name)
    body += _len_field(9, array.tobytes())
    return body


def _ints_attribute(name: str, values) -> bytes:
    packed = b"".join(_varint(v) for v in values)
    return _string(1, name) + _len_field(8, packed) + _varint_field(20, 7)  # type INTS


def _node(op_type: str, inputs, outputs, attributes=()) -> bytes:
    body = b"".join(_string(1, i) for i in inputs)
    body += b"".join(_string(2, o) for o in outputs)
    body += _string(4, op_type)
    body += b"".join(_len_field(5, a) for a in attributes)
    return body


def _tensor_type(dims) -> bytes:
    # TypeProto { tensor_type { elem_type=1 shape { dim ... } } }
    shape_body = b""
    for d in dims:
        if isinstance(d, int):
            shape_body += _len_field(1, _varint_field(1, d))
        else:
            shape_body += _len_field(1, _string(2, d))
    tensor_body = _varint_field(1, 1) + _len_field(2, shape_body)
    return _len_field(1, tensor_body)


def _value_info(name: str, dims) -> bytes:
    return _string(1, name) + _len_field(2, _tensor_type(dims))


def toy_model_bytes() -> bytes:
    conv = _node(
        "Conv",
        ["patch", "conv_weight", "conv_bias"],
        ["logits"],
        attributes=[
            _ints_attribute("kernel_shape", [1, 1, 1]),
            _ints_attribute("strides", [1, 1, 1]),
            _ints_attribute("pads", [0, 0, 0, 0, 0, 0]),
            _ints_attribute("dilations", [1, 1, 1]),
        ],
    )
    sigmoid = _node("Sigmoid", ["logits"], ["probs"])
    graph = b"".join(
        [
            _len_field(1, conv),
            _len_field(1, sigmoid),
            _string(2, "toy_tumor_probabilities"),
            _len_field(5, _tensor("conv_weight", TOY_WEIGHTS.reshape(3, 4, 1, 1, 1))),
            _len_field(5, _tensor("conv_bias", TOY_BIAS)),
            _len_field(11, _value_info("patch", [1, 4, "d0", "d1", "d2"])),
            _len_field(12, _value_info("probs", [1, 3, "d0", "d1", "d2"])),
        ]
    )
    opset = _string(1, "") + _varint_field(2, 13)
    model = b"".join(
        [
            _varint_field(1, 8),  # ir_version
            _string(2, "fixture-forge"),
            _string(3, "0.1.0"),
            _len_field(7, graph),
            _len_field(8, opset),
        ]
    )
    return model


def export_toy_model(out_path) -> Path:
    """Write the toy model; byte-identical on every call."""
    out_path = Path(out_path)
    try:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_bytes(toy_model_bytes())
    except OSError as exc:
        raise IoFailure(f"{out_path}: {exc}") from exc
    return out_path
