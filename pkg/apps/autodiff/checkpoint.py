"""
Parameter checkpoints

Layout of a checkpoint directory:
    params.bin     concatenated little-endian float64 records, one per parameter
    manifest.json  {"format_version", "sha256", "params": [{name, shape, offset, nbytes}]}
"""

import logging
from pathlib import Path

import numpy as np

from apps.core.blobs import LITTLE_F64, read_manifest, sha256, to_bytes, write_json
from apps.core.exceptions import ChecksumError, DimensionError, MissingArtifactError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def save_parameters(named_params, directory):
    """
    Write parameters to a checkpoint directory

    Args:
        named_params (list[tuple[str, Tensor]]): Ordered (name, parameter) pairs
        directory (str | Path): Target directory, created if needed

    Returns:
        Path: The checkpoint directory
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    records = []
    chunks = []
    offset = 0
    for name, param in named_params:
        payload = to_bytes(param.data)
        records.append(
            {"name": name, "shape": list(param.shape), "offset": offset, "nbytes": len(payload)}
        )
        chunks.append(payload)
        offset += len(payload)

    blob = b"".join(chunks)
    (directory / "params.bin").write_bytes(blob)
    write_json(
        directory / "manifest.json",
        {"format_version": FORMAT_VERSION, "sha256": sha256(blob), "params": records},
    )
    logger.debug(f"Saved {len(records)} parameters to {directory}")
    return directory


def load_parameters(directory):
    """
    Read a checkpoint directory

    Returns:
        dict[str, np.ndarray]: Arrays keyed by parameter name, in file order

    Raises:
        MissingArtifactError, FormatVersionError, ChecksumError
    """
    directory = Path(directory)
    manifest = read_manifest(directory / "manifest.json", FORMAT_VERSION)
    blob_path = directory / "params.bin"
    if not blob_path.exists():
        raise MissingArtifactError(f"missing artifact: {blob_path}", {"path": str(blob_path)})
    blob = blob_path.read_bytes()
    if sha256(blob) != manifest["sha256"]:
        raise ChecksumError(f"checksum mismatch for {blob_path}", {"path": str(blob_path)})

    arrays = {}
    for record in manifest["params"]:
        start = record["offset"]
        chunk = blob[start : start + record["nbytes"]]
        arrays[record["name"]] = (
            np.frombuffer(chunk, dtype=LITTLE_F64).astype(np.float64).reshape(record["shape"])
        )
    return arrays


def restore_parameters(named_params, arrays):
    """
    Copy loaded arrays into live parameters

    Raises:
        MissingArtifactError: If a parameter is absent from the checkpoint
        DimensionError: If a stored shape differs from the live one
    """
    for name, param in named_params:
        if name not in arrays:
            raise MissingArtifactError(f"checkpoint has no parameter {name}", {"name": name})
        if tuple(arrays[name].shape) != param.shape:
            raise DimensionError(
                f"checkpoint shape {arrays[name].shape} for {name} != {param.shape}"
            )
        param.data = np.ascontiguousarray(arrays[name].copy())
