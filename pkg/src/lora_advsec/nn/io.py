"""Checkpoint file format.

Layout:
    8 bytes   magic "LANN0001"
    4 bytes   u32 little-endian header length
    N bytes   UTF-8 JSON header (layer specs, input shape, seed, extra)
    rest      every parameter as little-endian float64, in layer order with
              weights before biases; two-head networks store three blocks in
              trunk, head-1, head-2 order as listed in the header.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from lora_advsec.errors import FormatError
from lora_advsec.nn.layers import layer_from_dict, layer_to_dict
from lora_advsec.nn.network import MultiTaskNetwork, Network

MAGIC = b"LANN0001"


def _header_for(net, extra):
    header = {
        "input_shape": list(net.input_shape),
        "seed": net.seed,
        "extra": extra or {},
    }
    if isinstance(net, MultiTaskNetwork):
        header["format"] = "multitask"
        header["blocks"] = ["shared", "head1", "head2"]
        header["shared"] = [layer_to_dict(l) for l in net.shared_layers]
        header["head1"] = [layer_to_dict(l) for l in net.head_layers[0]]
        header["head2"] = [layer_to_dict(l) for l in net.head_layers[1]]
    elif isinstance(net, Network):
        header["format"] = "single"
        header["layers"] = [layer_to_dict(l) for l in net.layers]
    else:
        raise FormatError(f"cannot checkpoint object of type {type(net).__name__}")
    return header


def save_network(net, path, extra: dict | None = None) -> None:
    header = json.dumps(_header_for(net, extra), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(net.flat_parameters().astype("<f8").tobytes())


def load_network(path):
    """Rebuild a network from a checkpoint; returns ``(net, header)``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 4:
        raise FormatError(f"{path}: truncated checkpoint")
    if blob[:len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic, not a checkpoint file")
    (hlen,) = struct.unpack_from("<I", blob, len(MAGIC))
    start = len(MAGIC) + 4
    if len(blob) < start + hlen:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(blob[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header ({exc})") from exc

    fmt = header.get("format")
    input_shape = tuple(header.get("input_shape", ()))
    seed = header.get("seed", 0)
    try:
        if fmt == "single":
            net = Network([layer_from_dict(d) for d in header["layers"]], input_shape, seed)
        elif fmt == "multitask":
            net = MultiTaskNetwork(
                [layer_from_dict(d) for d in header["shared"]],
                [layer_from_dict(d) for d in header["head1"]],
                [layer_from_dict(d) for d in header["head2"]],
                input_shape,
                seed,
            )
        else:
            raise FormatError(f"{path}: unknown checkpoint format {fmt!r}")
    except KeyError as exc:
        raise FormatError(f"{path}: header missing field {exc}") from exc

    body = blob[start + hlen:]
    expected = net.count_parameters() * 8
    if len(body) != expected:
        raise FormatError(f"{path}: expected {expected} parameter bytes, found {len(body)}")
    net.set_flat_parameters(np.frombuffer(body, dtype="<f8"))
    return net, header
