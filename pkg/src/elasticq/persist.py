"""On-disk format for quantized models.

Per precision: a JSON manifest (``manifest_{bits}b.json``) plus one binary
blob (``blob_{bits}b.bin``). Blob layout, per module in layer-major order:
packed codes (little-endian bytes, LSB-first within a byte, groups
contiguous), then scales as float16 LE, then zeros as float16 LE. The
manifest records byte offsets for all three sections of every module.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import kernels
from .model import Model, ModuleId, list_modules
from .quantize import QuantizedModel, QuantizedModule


def manifest_name(bits: int) -> str:
    return f"manifest_{bits}b.json"


def blob_name(bits: int) -> str:
    return f"blob_{bits}b.bin"


def save_quantized_model(qm: QuantizedModel, outdir) -> Path:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    blob = bytearray()
    entries = []
    for mid, qmod in sorted(qm.modules.items()):
        codes_off = len(blob)
        packed = kernels.pack_codes(qmod.codes, qm.bits)
        blob += bytes(np.asarray(packed, dtype=np.uint8))
        scales_off = len(blob)
        blob += qmod.scales.astype("<f2").tobytes()
        zeros_off = len(blob)
        blob += qmod.zeros.astype("<f2").tobytes()
        entries.append(
            {
                "layer": mid.layer,
                "kind": mid.kind,
                "param_count": qmod.param_count,
                "group_count": int(qmod.scales.size),
                "codes_offset": codes_off,
                "codes_nbytes": scales_off - codes_off,
                "scales_offset": scales_off,
                "zeros_offset": zeros_off,
                "footprint_bytes": qmod.footprint_bytes,
            }
        )
    manifest = {
        "bits": qm.bits,
        "group_size": qm.group_size,
        "total_footprint_bytes": qm.footprint_bytes,
        "blob": blob_name(qm.bits),
        "modules": entries,
    }
    (outdir / blob_name(qm.bits)).write_bytes(bytes(blob))
    path = outdir / manifest_name(qm.bits)
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def load_quantized_model(outdir, bits: int) -> QuantizedModel:
    outdir = Path(outdir)
    manifest = json.loads((outdir / manifest_name(bits)).read_text())
    if manifest["bits"] != bits:
        raise ValueError(f"manifest bits {manifest['bits']} != requested {bits}")
    blob = (outdir / manifest["blob"]).read_bytes()
    group_size = manifest["group_size"]
    modules = {}
    for e in manifest["modules"]:
        mid = ModuleId(e["layer"], e["kind"])
        n = e["param_count"]
        packed = np.frombuffer(
            blob, dtype=np.uint8, count=e["codes_nbytes"], offset=e["codes_offset"]
        )
        codes = kernels.unpack_codes(packed, bits, n)
        gc = e["group_count"]
        scales = np.frombuffer(blob, dtype="<f2", count=gc, offset=e["scales_offset"])
        zeros = np.frombuffer(blob, dtype="<f2", count=gc, offset=e["zeros_offset"])
        modules[mid] = QuantizedModule(
            module_id=mid,
            bits=bits,
            group_size=group_size,
            codes=codes,
            scales=scales.astype(np.float16),
            zeros=zeros.astype(np.float16),
        )
    return QuantizedModel(bits=bits, group_size=group_size, modules=modules)
