"""Raw stream files: interleaved little-endian float32 I/Q plus a JSON sidecar."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .signal_core import ComplexBaseband


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_stream(path, stream: ComplexBaseband) -> Path:
    path = Path(path)
    iq = np.empty(2 * len(stream), dtype="<f4")
    iq[0::2] = stream.samples.real
    iq[1::2] = stream.samples.imag
    path.write_bytes(iq.tobytes())
    meta = {"sample_rate_hz": stream.sample_rate_hz, "carrier_hz": stream.carrier_hz,
            "epoch_s": stream.epoch_s}
    sidecar_path(path).write_text(json.dumps(meta, indent=2) + "\n")
    return path


def read_stream(path) -> ComplexBaseband:
    path = Path(path)
    side = sidecar_path(path)
    if not side.exists():
        raise ValidationError(f"missing sidecar {side.name}", str(path))
    meta = json.loads(side.read_text())
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    if raw.size % 2:
        raise ValidationError("odd number of float32 values in I/Q file", str(path))
    samples = raw[0::2].astype(np.float64) + 1j * raw[1::2].astype(np.float64)
    try:
        return ComplexBaseband(samples, meta["sample_rate_hz"], meta["carrier_hz"],
                               meta.get("epoch_s", 0.0))
    except KeyError as exc:
        raise ValidationError(f"sidecar lacks {exc.args[0]}", str(side)) from exc
