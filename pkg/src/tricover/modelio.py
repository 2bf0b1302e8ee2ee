"""Model exchange format, version 1.

A model is a JSON document describing the layer stack plus a flat
binary payload holding every weight tensor as little-endian float32 in
row-major order. The payload is either embedded in the JSON as base64
or kept in a sibling binary file referenced by relative path. Dense
weights are stored as (out_dim, in_dim); conv2d weights as
(out_channels, in_channels, kernel_h, kernel_w); biases as flat
vectors. The ``tensors`` table maps each tensor name used by a layer to
its byte offset and length within the payload.
"""

from __future__ import annotations

import base64
import json
import os
from typing import Optional

import numpy as np

from .errors import ModelFileError
from .network import LayerSpec, NetworkModel

FORMAT_VERSION = 1

_LAYER_FIELDS = {
    "dense": {"required": ("in_dim", "out_dim", "weights", "bias"),
              "optional": ("activation",)},
    "conv2d": {"required": ("in_channels", "out_channels", "kernel_h", "kernel_w",
                            "weights", "bias"),
               "optional": ("activation", "stride", "padding")},
    "maxpool2d": {"required": ("window",), "optional": ("stride",)},
    "avgpool2d": {"required": ("window",), "optional": ("stride",)},
    "flatten": {"required": (), "optional": ()},
    "activation": {"required": ("activation",), "optional": ()},
}


class _Doc:
    """Cursor over the parsed JSON with path-aware error messages."""

    def __init__(self, path: str, obj: dict):
        self.path = path
        self.obj = obj

    def fail(self, ctx: str, msg: str):
        raise ModelFileError(f"{self.path}: {ctx}: {msg}")

    def need(self, obj: dict, key: str, types, ctx: str):
        if key not in obj:
            self.fail(ctx, f"missing field {key!r}")
        val = obj[key]
        if not isinstance(val, types):
            self.fail(ctx, f"field {key!r} has type {type(val).__name__}")
        return val

    def opt(self, obj: dict, key: str, types, ctx: str, default):
        if key not in obj:
            return default
        val = obj[key]
        if not isinstance(val, types):
            self.fail(ctx, f"field {key!r} has type {type(val).__name__}")
        return val


def _read_payload(doc: _Doc) -> bytes:
    payload = doc.need(doc.obj, "payload", dict, "payload")
    encoding = doc.need(payload, "encoding", str, "payload")
    if encoding == "base64":
        data = doc.need(payload, "data", str, "payload")
        try:
            return base64.b64decode(data, validate=True)
        except (ValueError, TypeError) as exc:
            doc.fail("payload", f"invalid base64 data: {exc}")
    if encoding == "file":
        rel = doc.need(payload, "path", str, "payload")
        bin_path = os.path.join(os.path.dirname(os.path.abspath(doc.path)), rel)
        try:
            with open(bin_path, "rb") as fh:
                raw = fh.read()
        except OSError as exc:
            doc.fail("payload", f"cannot read binary file {rel!r}: {exc}")
        declared = doc.opt(payload, "length", int, "payload", None)
        if declared is not None and declared != len(raw):
            doc.fail("payload", f"binary file {rel!r} is {len(raw)} bytes, "
                                f"header declares {declared}")
        return raw
    doc.fail("payload", f"unknown payload encoding {encoding!r}")


def _parse_layer(doc: _Doc, entry: dict, ctx: str) -> tuple[LayerSpec, Optional[str], Optional[str]]:
    kind = doc.need(entry, "kind", str, ctx)
    if kind not in _LAYER_FIELDS:
        doc.fail(ctx, f"unsupported layer kind {kind!r}")
    fields = _LAYER_FIELDS[kind]
    allowed = set(fields["required"]) | set(fields["optional"]) | {"kind"}
    for key in entry:
        if key not in allowed:
            doc.fail(ctx, f"unexpected field {key!r} for kind {kind!r}")

    def geti(key, default=None):
        if default is None:
            return int(doc.need(entry, key, int, ctx))
        return int(doc.opt(entry, key, int, ctx, default))

    activation = doc.opt(entry, "activation", str, ctx, "identity")
    w_name = b_name = None
    try:
        if kind == "dense":
            w_name = doc.need(entry, "weights", str, ctx)
            b_name = doc.need(entry, "bias", str, ctx)
            spec = LayerSpec.dense(geti("in_dim"), geti("out_dim"), activation)
        elif kind == "conv2d":
            w_name = doc.need(entry, "weights", str, ctx)
            b_name = doc.need(entry, "bias", str, ctx)
            spec = LayerSpec.conv2d(geti("in_channels"), geti("out_channels"),
                                    geti("kernel_h"), geti("kernel_w"),
                                    stride=geti("stride", 1),
                                    padding=geti("padding", 0),
                                    activation=activation)
        elif kind == "maxpool2d":
            window = geti("window")
            spec = LayerSpec.maxpool2d(window, geti("stride", window))
        elif kind == "avgpool2d":
            window = geti("window")
            spec = LayerSpec.avgpool2d(window, geti("stride", window))
        elif kind == "flatten":
            spec = LayerSpec.flatten()
        else:
            spec = LayerSpec.act(doc.need(entry, "activation", str, ctx))
    except ValueError as exc:
        doc.fail(ctx, str(exc))
    return spec, w_name, b_name


def _tensor(doc: _Doc, manifest: dict, payload: bytes, name: str,
            shape: tuple[int, ...], ctx: str) -> np.ndarray:
    if name not in manifest:
        doc.fail(ctx, f"tensor {name!r} missing from the tensors table")
    entry = manifest[name]
    if not isinstance(entry, dict):
        doc.fail(f"tensors[{name!r}]", "entry must be an object")
    offset = doc.need(entry, "offset", int, f"tensors[{name!r}]")
    length = doc.need(entry, "length", int, f"tensors[{name!r}]")
    expected = int(np.prod(shape)) * 4
    if length != expected:
        doc.fail(f"tensors[{name!r}]",
                 f"length {length} != {expected} bytes for shape {shape}")
    if offset < 0 or offset + length > len(payload):
        doc.fail(f"tensors[{name!r}]",
                 f"range [{offset}, {offset + length}) outside payload "
                 f"of {len(payload)} bytes")
    flat = np.frombuffer(payload, dtype="<f4", count=expected // 4, offset=offset)
    return flat.astype(np.float64).reshape(shape)


def load_model(path) -> NetworkModel:
    """Read a version-1 model file and build a validated network."""
    path = os.fspath(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise ModelFileError(f"{path}: cannot read model file: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: invalid JSON at line {exc.lineno}, "
                             f"column {exc.colno}: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise ModelFileError(f"{path}: top-level value must be an object")
    doc = _Doc(path, obj)

    version = doc.need(obj, "format_version", int, "header")
    if version != FORMAT_VERSION:
        doc.fail("header", f"unsupported format_version {version} "
                           f"(this reader handles {FORMAT_VERSION})")
    name = doc.need(obj, "name", str, "header")
    input_shape = doc.need(obj, "input_shape", list, "header")
    if not all(isinstance(d, int) and d > 0 for d in input_shape):
        doc.fail("header", f"input_shape must be positive integers, got {input_shape}")
    layer_list = doc.need(obj, "layers", list, "header")
    if not layer_list:
        doc.fail("header", "model has no layers")
    manifest = doc.need(obj, "tensors", dict, "header")
    payload = _read_payload(doc)
    coverage_layers = doc.opt(obj, "coverage_layers", list, "header", None)
    if coverage_layers is not None and not all(isinstance(i, int) for i in coverage_layers):
        doc.fail("header", "coverage_layers must be integers")

    specs, weights, biases = [], [], []
    for idx, entry in enumerate(layer_list):
        ctx = f"layers[{idx}]"
        if not isinstance(entry, dict):
            doc.fail(ctx, "layer must be an object")
        spec, w_name, b_name = _parse_layer(doc, entry, ctx)
        specs.append(spec)
        if w_name is None:
            weights.append(None)
            biases.append(None)
        elif spec.kind == "dense":
            weights.append(_tensor(doc, manifest, payload, w_name,
                                   (spec.out_dim, spec.in_dim), ctx))
            biases.append(_tensor(doc, manifest, payload, b_name,
                                  (spec.out_dim,), ctx))
        else:
            weights.append(_tensor(doc, manifest, payload, w_name,
                                   (spec.out_channels, spec.in_channels,
                                    spec.kernel_h, spec.kernel_w), ctx))
            biases.append(_tensor(doc, manifest, payload, b_name,
                                  (spec.out_channels,), ctx))

    try:
        return NetworkModel.build(name=name, input_shape=tuple(input_shape),
                                  layers=specs, weights=weights, biases=biases,
                                  coverage_layers=coverage_layers)
    except Exception as exc:
        raise ModelFileError(f"{path}: {exc}") from None


def _layer_entry(spec: LayerSpec, w_name: Optional[str], b_name: Optional[str]) -> dict:
    entry: dict = {"kind": spec.kind}
    if spec.kind == "dense":
        entry.update(in_dim=spec.in_dim, out_dim=spec.out_dim,
                     activation=spec.activation, weights=w_name, bias=b_name)
    elif spec.kind == "conv2d":
        entry.update(in_channels=spec.in_channels, out_channels=spec.out_channels,
                     kernel_h=spec.kernel_h, kernel_w=spec.kernel_w,
                     stride=spec.stride, padding=spec.padding,
                     activation=spec.activation, weights=w_name, bias=b_name)
    elif spec.kind in ("maxpool2d", "avgpool2d"):
        entry.update(window=spec.window, stride=spec.stride)
    elif spec.kind == "activation":
        entry["activation"] = spec.activation
    return entry


def save_model(model: NetworkModel, path, payload_file: Optional[str] = None) -> None:
    """Write a model in exchange format v1.

    Weights are stored as float32, so values that are not exactly
    representable in single precision are rounded. With ``payload_file``
    the binary payload goes to that sibling file (named relative to the
    model path); otherwise it is embedded as base64.
    """
    path = os.fspath(path)
    chunks: list[bytes] = []
    manifest: dict = {}
    offset = 0
    layers_json = []
    for idx, spec in enumerate(model.layers):
        w, b = model.weights[idx], model.biases[idx]
        if w is None:
            layers_json.append(_layer_entry(spec, None, None))
            continue
        w_name, b_name = f"layer{idx}.w", f"layer{idx}.b"
        for name, arr in ((w_name, w), (b_name, b)):
            raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            manifest[name] = {"offset": offset, "length": len(raw)}
            chunks.append(raw)
            offset += len(raw)
        layers_json.append(_layer_entry(spec, w_name, b_name))

    payload = b"".join(chunks)
    if payload_file is not None:
        bin_path = os.path.join(os.path.dirname(os.path.abspath(path)), payload_file)
        with open(bin_path, "wb") as fh:
            fh.write(payload)
        payload_json = {"encoding": "file", "path": payload_file, "length": len(payload)}
    else:
        payload_json = {"encoding": "base64",
                        "data": base64.b64encode(payload).decode("ascii")}

    obj = {
        "format_version": FORMAT_VERSION,
        "name": model.name,
        "input_shape": list(model.input_shape),
        "layers": layers_json,
        "coverage_layers": list(model.coverage_layers),
        "tensors": manifest,
        "payload": payload_json,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")
