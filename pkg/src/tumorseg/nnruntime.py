"""Embedded runtime for serialized neural networks in the ONNX exchange format.

Optional backend feature: the core pipeline never needs it. The runtime
implements just enough of the format to execute small verification models —
protobuf wire decoding of the model/graph messages plus an interpreter for a
narrow op set (Conv with 1x1x1 kernels, Add, Mul, Sigmoid, Relu, Clip).
Anything outside that subset fails loudly at load or run time; full models
belong in a real inference engine, not here.

Tensors flow as numpy float32/float64/int64 arrays shaped like the file
declares; our patches enter as (1, 4, nx, ny, nz) and leave as (1, 3, ...).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import BackendFailure, ModelLoadFailure
from .predictor import PatchSpec, PredictorBackend

# --- protobuf wire decoding (subset: varint + length-delimited + 32/64-bit) ---

_WIRE_VARINT = 0
_WIRE_I64 = 1
_WIRE_LEN = 2
_WIRE_I32 = 5


def _read_varint(buf: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise ModelLoadFailure("truncated varint in model file")
        byte = buf[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return result, pos
        shift += 7
        if shift > 70:
            raise ModelLoadFailure("malformed varint in model file")


def _iter_fields(buf: bytes):
    pos = 0
    while pos < len(buf):
        key, pos = _read_varint(buf, pos)
        field_no, wire = key >> 3, key & 7
        if wire == _WIRE_VARINT:
            value, pos = _read_varint(buf, pos)
        elif wire == _WIRE_LEN:
            length, pos = _read_varint(buf, pos)
            value = buf[pos:pos + length]
            if len(value) < length:
                raise ModelLoadFailure("truncated field in model file")
            pos += length
        elif wire == _WIRE_I64:
            value = buf[pos:pos + 8]
            pos += 8
        elif wire == _WIRE_I32:
            value = buf[pos:pos + 4]
            pos += 4
        else:
            raise ModelLoadFailure(f"unsupported protobuf wire type {wire}")
        yield field_no, wire, value


def _packed_varints(value) -> list[int]:
    if isinstance(value, int):
        return [value]
    out = []
    pos = 0
    while pos < len(value):
        v, pos = _read_varint(value, pos)
        out.append(v)
    return out


_TENSOR_DTYPES = {1: np.float32, 6: np.int32, 7: np.int64, 11: np.float64}


def _parse_tensor(buf: bytes) -> tuple[str, np.ndarray]:
    dims: list[int] = []
    data_type = 1
    raw = b""
    floats: list[bytes] = []
    int64s: list[int] = []
    name = ""
    for field_no, wire, value in _iter_fields(buf):
        if field_no == 1:
            dims.extend(_packed_varints(value))
        elif field_no == 2:
            data_type = value
        elif field_no == 4:
            floats.append(value if wire == _WIRE_LEN else value.to_bytes(4, "little"))
        elif field_no == 7:
            int64s.extend(_packed_varints(value))
        elif field_no == 8:
            name = value.decode()
        elif field_no == 9:
            raw = value
    if data_type not in _TENSOR_DTYPES:
        raise ModelLoadFailure(f"initializer {name!r}: unsupported tensor dtype {data_type}")
    dtype = np.dtype(_TENSOR_DTYPES[data_type]).newbyteorder("<")
    if raw:
        arr = np.frombuffer(raw, dtype=dtype)
    elif floats:
        arr = np.frombuffer(b"".join(floats), dtype="<f4").astype(dtype)
    elif int64s:
        arr = np.asarray(int64s, dtype=dtype)
    else:
        arr = np.zeros(0, dtype=dtype)
    shape = tuple(dims) if dims else (arr.size,)
    return name, arr.reshape(shape).astype(dtype.newbyteorder("="))


@dataclass
class _Node:
    op_type: str = ""
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    attrs: dict = field(default_factory=dict)


def _parse_attribute(buf: bytes) -> tuple[str, object]:
    name = ""
    value: object = None
    for field_no, wire, val in _iter_fields(buf):
        if field_no == 1:
            name = val.decode()
        elif field_no == 2:
            value = np.frombuffer(val, dtype="<f4")[0] if wire == _WIRE_I32 else value
        elif field_no == 3:
            value = val
        elif field_no == 4:
            value = val.decode() if isinstance(val, bytes) else val
        elif field_no == 5:
            value = _parse_tensor(val)[1]
        elif field_no == 7:
            value = np.frombuffer(val, dtype="<f4").tolist() if wire == _WIRE_LEN else [value]
        elif field_no == 8:
            value = _packed_varints(val)
    return name, value


def _parse_node(buf: bytes) -> _Node:
    node = _Node()
    for field_no, _wire, value in _iter_fields(buf):
        if field_no == 1:
            node.inputs.append(value.decode())
        elif field_no == 2:
            node.outputs.append(value.decode())
        elif field_no == 4:
            node.op_type = value.decode()
        elif field_no == 5:
            k, v = _parse_attribute(value)
            node.attrs[k] = v
    return node


def _value_info_name(buf: bytes) -> str:
    for field_no, _wire, value in _iter_fields(buf):
        if field_no == 1:
            return value.decode()
    return ""


@dataclass
class ExchangeGraph:
    nodes: list[_Node]
    initializers: dict[str, np.ndarray]
    inputs: list[str]
    outputs: list[str]


def parse_model(path) -> ExchangeGraph:
    """Decode the model file down to its graph; raises ModelLoadFailure on any gap."""
    path = Path(path)
    if not path.exists():
        raise ModelLoadFailure(f"model file does not exist: {path}")
    buf = path.read_bytes()
    graph_buf = None
    for field_no, _wire, value in _iter_fields(buf):
        if field_no == 7:
            graph_buf = value
    if graph_buf is None:
        raise ModelLoadFailure(f"{path}: no graph found (not an ONNX model?)")

    nodes: list[_Node] = []
    initializers: dict[str, np.ndarray] = {}
    inputs: list[str] = []
    outputs: list[str] = []
    for field_no, _wire, value in _iter_fields(graph_buf):
        if field_no == 1:
            nodes.append(_parse_node(value))
        elif field_no == 5:
            name, arr = _parse_tensor(value)
            initializers[name] = arr
        elif field_no == 11:
            inputs.append(_value_info_name(value))
        elif field_no == 12:
            outputs.append(_value_info_name(value))
    graph_inputs = [n for n in inputs if n not in initializers]
    if len(graph_inputs) != 1 or len(outputs) != 1:
        raise ModelLoadFailure(
            f"{path}: expected exactly one graph input and output, "
            f"got {len(graph_inputs)} and {len(outputs)}"
        )
    return ExchangeGraph(nodes, initializers, graph_inputs, outputs)


# --- interpreter ---


def _op_conv(node: _Node, inputs: list[np.ndarray]) -> np.ndarray:
    x, w = inputs[0], inputs[1]
    if w.ndim != 5 or w.shape[2:] != (1, 1, 1):
        raise BackendFailure(f"Conv kernels other than 1x1x1 unsupported, got {w.shape}")
    if node.attrs.get("group", 1) != 1:
        raise BackendFailure("grouped Conv unsupported")
    for key in ("strides", "dilations"):
        if any(v != 1 for v in node.attrs.get(key, [])):
            raise BackendFailure(f"Conv {key} other than 1 unsupported")
    if any(v != 0 for v in node.attrs.get("pads", [])):
        raise BackendFailure("Conv padding unsupported")
    out = np.einsum("oi,bidhw->bodhw", w.reshape(w.shape[0], w.shape[1]), x)
    if len(inputs) > 2:
        out = out + inputs[2].reshape(1, -1, 1, 1, 1)
    return out


def _run_node(node: _Node, inputs: list[np.ndarray]) -> np.ndarray:
    op = node.op_type
    if op == "Conv":
        return _op_conv(node, inputs)
    if op == "Add":
        return inputs[0] + inputs[1]
    if op == "Mul":
        return inputs[0] * inputs[1]
    if op == "Sigmoid":
        return expit(inputs[0])
    if op == "Relu":
        return np.maximum(inputs[0], 0)
    if op == "Clip":
        lo = inputs[1] if len(inputs) > 1 else node.attrs.get("min", -np.inf)
        hi = inputs[2] if len(inputs) > 2 else node.attrs.get("max", np.inf)
        return np.clip(inputs[0], lo, hi)
    raise BackendFailure(f"unsupported op {op!r} in exchange model")


def run_graph(graph: ExchangeGraph, x: np.ndarray) -> np.ndarray:
    env: dict[str, np.ndarray] = dict(graph.initializers)
    env[graph.inputs[0]] = x
    for node in graph.nodes:
        missing = [n for n in node.inputs if n and n not in env]
        if missing:
            raise BackendFailure(f"node {node.op_type} missing inputs {missing}")
        result = _run_node(node, [env[n] for n in node.inputs if n])
        env[node.outputs[0]] = result
    if graph.outputs[0] not in env:
        raise BackendFailure(f"graph output {graph.outputs[0]!r} was never produced")
    return env[graph.outputs[0]]


class OnnxBackend(PredictorBackend):
    """Backend executing an exchange-format model through the embedded runtime."""

    def __init__(self, model_path, spec: PatchSpec = PatchSpec(), identity: str | None = None,
                 max_concurrency: int = 8):
        self.graph = parse_model(model_path)
        name = identity or f"nn-runtime[{Path(model_path).name}]"
        super().__init__(spec, name, max_concurrency)

    def _predict(self, patch: np.ndarray) -> np.ndarray:
        out = run_graph(self.graph, patch[None].astype(np.float32))
        if out.ndim != 5 or out.shape[0] != 1:
            raise BackendFailure(f"model output shape {out.shape} is not (1, C, ...)")
        return np.asarray(out[0], dtype=np.float32)
