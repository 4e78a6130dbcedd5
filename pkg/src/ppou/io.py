"""Model file: a magic line, one JSON header line, then raw little-endian doubles.

The header records the format version, the run configuration snapshot,
scalar model fields and, for every named array, its shape and byte offset
into the payload.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .basis import PolyBasis
from .mixture import PPOUModel
from .nn import DenseNet

MAGIC = b"PPOU-MODEL\n"
FORMAT_VERSION = 1


class ModelFileError(ValueError):
    pass


def _net_meta(net: DenseNet) -> dict:
    return {
        "activation": net.activation,
        "residual": net.residual,
        "output_transform": net.output_transform,
        "n_layers": len(net.weights),
    }


def save_model(path, model: PPOUModel, config: dict | None = None) -> None:
    arrays = {
        "coeffs": model.coeffs,
        "sigma2": model.sigma2,
        "input_shift": model.input_shift,
        "input_scale": model.input_scale,
    }
    arrays.update(model.named_parameters())
    manifest, offset = [], 0
    for name, arr in arrays.items():
        nbytes = arr.size * 8
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": "<f8", "offset": offset, "nbytes": nbytes})
        offset += nbytes
    header = {
        "format_version": FORMAT_VERSION,
        "config": config or {},
        "model": {
            "architecture": model.architecture,
            "sigma0_2": model.sigma0_2,
            "sigma_floor2": model.sigma_floor2,
            "basis": model.basis.to_dict(),
            "exponent_table": model.basis.exponent_table.tolist(),
            "nets": {name: _net_meta(net) for name, net in model.nets().items()},
        },
        "arrays": manifest,
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_header(path) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise ModelFileError(f"{path}: not a model file")
    end = raw.index(b"\n", len(MAGIC))
    header = json.loads(raw[len(MAGIC):end])
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFileError(f"{path}: format version {version} unsupported (expected {FORMAT_VERSION})")
    return header, raw[end + 1:]


def load_model(path) -> tuple[PPOUModel, dict]:
    """Return the model and the configuration snapshot stored with it."""
    header, payload = read_header(path)
    arrays = {}
    for entry in header["arrays"]:
        buf = payload[entry["offset"]: entry["offset"] + entry["nbytes"]]
        if len(buf) != entry["nbytes"]:
            raise ModelFileError(f"{path}: truncated payload for {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(entry["shape"]).astype(np.float64)
    meta = header["model"]
    nets = {}
    for name, nm in meta["nets"].items():
        weights = [arrays[f"{name}.layers.{i}.weight"] for i in range(nm["n_layers"])]
        biases = [arrays[f"{name}.layers.{i}.bias"] for i in range(nm["n_layers"])]
        nets[name] = DenseNet(weights, biases, nm["activation"], nm["residual"], nm["output_transform"])
    basis = PolyBasis(**meta["basis"])
    if basis.exponent_table.tolist() != meta["exponent_table"]:
        raise ModelFileError(f"{path}: stored exponent table does not match the basis ordering")
    model = PPOUModel(
        architecture=meta["architecture"],
        classifier=nets["classifier"],
        basis=basis,
        coeffs=arrays["coeffs"],
        sigma2=arrays["sigma2"],
        encoder=nets.get("encoder"),
        sigma0_2=meta["sigma0_2"],
        sigma_floor2=meta["sigma_floor2"],
        input_shift=arrays["input_shift"],
        input_scale=arrays["input_scale"],
    )
    return model, header["config"]
