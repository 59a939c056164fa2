"""Single-file model container.

Layout: magic ``TCRFMODL``, u32 format version, u32 section count, then per
section a u16-prefixed UTF-8 name, a one-byte kind (0 = ``.npy`` array,
1 = YAML text) and a u64-prefixed payload. All integers are little-endian.
Writing the same model twice gives identical bytes.
"""

import io
import logging
import struct

import numpy as np
import yaml

from crf.potentials import CooccurrenceTable, ThetaParams
from forest.random_forest import DecisionForest
from labeling.domain import LabelDomain
from training.pipeline import TcrfModel
from utils.errors import DataError
from vision.feature_cube import FeatureSpec
from vision.scene_io import atomic_write_bytes

logger = logging.getLogger(__name__)

MAGIC = b"TCRFMODL"
FORMAT_VERSION = 1
KIND_ARRAY = 0
KIND_TEXT = 1
FORESTS = ("base_forest", "occlusion_forest", "product_forest")
TABLES = ("base_table", "occlusion_table")


def _array_bytes(array):
    buffer = io.BytesIO()
    np.lib.format.write_array(buffer, np.ascontiguousarray(array), allow_pickle=False)
    return buffer.getvalue()


def _text_bytes(data):
    return yaml.safe_dump(data, sort_keys=True, allow_unicode=True).encode("utf-8")


def model_sections(model):
    """Ordered (name, kind, payload bytes) sections of a model."""
    header = {
        "domain": model.domain.to_dict(),
        "spec": model.spec.to_dict(),
        "theta": list(model.theta.as_vector()),
        "mode": model.mode,
        "metadata": model.metadata,
        "forests": [name for name in FORESTS if getattr(model, name) is not None],
        "smoothing": {name: float(getattr(model, name).smoothing) for name in TABLES},
    }
    sections = [("model", KIND_TEXT, _text_bytes(header))]
    for name in header["forests"]:
        for key, array in getattr(model, name).to_arrays().items():
            sections.append((f"{name}/{key}", KIND_ARRAY, _array_bytes(array)))
    for name in TABLES:
        table = getattr(model, name)
        sections.append((f"{name}/counts", KIND_ARRAY, _array_bytes(np.asarray(table.counts, dtype=np.int64))))
        sections.append((f"{name}/scaled", KIND_ARRAY, _array_bytes(np.asarray(table.scaled, dtype=np.float64))))
    return sections


def encode_model(model):
    sections = model_sections(model)
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<II", FORMAT_VERSION, len(sections)))
    for name, kind, payload in sections:
        encoded = name.encode("utf-8")
        out.write(struct.pack("<H", len(encoded)))
        out.write(encoded)
        out.write(struct.pack("<BQ", kind, len(payload)))
        out.write(payload)
    return out.getvalue()


def save_model(model, path):
    data = encode_model(model)
    atomic_write_bytes(path, data)
    logger.info("Model written to %s (%d bytes)", path, len(data))
    return path


def _read_exact(stream, n, what):
    chunk = stream.read(n)
    if len(chunk) != n:
        raise DataError(f"Model container truncated while reading {what}")
    return chunk


def decode_sections(data):
    stream = io.BytesIO(data)
    if _read_exact(stream, len(MAGIC), "magic") != MAGIC:
        raise DataError("Not a model container (bad magic bytes)")
    version, count = struct.unpack("<II", _read_exact(stream, 8, "header"))
    if version != FORMAT_VERSION:
        raise DataError(f"Unsupported model format version {version}, expected {FORMAT_VERSION}")
    sections = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", _read_exact(stream, 2, "section name length"))
        name = _read_exact(stream, name_len, "section name").decode("utf-8")
        kind, length = struct.unpack("<BQ", _read_exact(stream, 9, f"section '{name}' header"))
        payload = _read_exact(stream, length, f"section '{name}'")
        if kind == KIND_ARRAY:
            sections[name] = np.lib.format.read_array(io.BytesIO(payload), allow_pickle=False)
        elif kind == KIND_TEXT:
            sections[name] = yaml.safe_load(payload.decode("utf-8"))
        else:
            raise DataError(f"Unknown kind {kind} of section '{name}'")
    return sections


def decode_model(data):
    sections = decode_sections(data)
    if "model" not in sections:
        raise DataError("Model container has no 'model' section")
    header = sections["model"]

    def grouped(prefix):
        return {key.split("/", 1)[1]: value for key, value in sections.items() if key.startswith(prefix + "/")}

    forests = {name: None for name in FORESTS}
    for name in header["forests"]:
        forests[name] = DecisionForest.from_arrays(grouped(name))
    tables = {}
    for name in TABLES:
        arrays = grouped(name)
        tables[name] = CooccurrenceTable(
            layer=name.split("_")[0], counts=arrays["counts"], scaled=arrays["scaled"],
            smoothing=header["smoothing"][name],
        )
    return TcrfModel(
        domain=LabelDomain.from_dict(header["domain"]),
        spec=FeatureSpec.from_dict(header["spec"]),
        theta=ThetaParams.from_vector(header["theta"]),
        mode=header["mode"],
        metadata=header.get("metadata") or {},
        **forests,
        **tables,
    )


def load_model(path):
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise DataError(f"Cannot read model file {path}: {e}")
    return decode_model(data)
