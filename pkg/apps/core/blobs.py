"""
Raw float64 blob and JSON manifest helpers

All binary artifacts (checkpoints, dataset images, masks, region maps) are
little-endian float64 byte strings whose SHA-256 is recorded in a JSON
manifest next to them.
"""

import hashlib
import json
from pathlib import Path

import numpy as np

from apps.core.exceptions import ChecksumError, FormatVersionError, MissingArtifactError

LITTLE_F64 = np.dtype("<f8")


def to_bytes(array):
    """Serialize an array as little-endian float64 bytes"""
    return np.ascontiguousarray(array, dtype=LITTLE_F64).tobytes()


def sha256(payload):
    return hashlib.sha256(payload).hexdigest()


def write_blob(path, array):
    """
    Write an array as a raw .f64 blob

    Returns:
        dict: {"shape": [...], "sha256": "..."} for the manifest
    """
    payload = to_bytes(array)
    Path(path).write_bytes(payload)
    return {"shape": list(np.shape(array)), "sha256": sha256(payload)}


def read_blob(path, shape, checksum):
    """
    Read a raw .f64 blob and verify its checksum

    Raises:
        MissingArtifactError: If the file does not exist
        ChecksumError: If the bytes do not match the recorded SHA-256
    """
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"missing artifact: {path}", {"path": str(path)})
    payload = path.read_bytes()
    if sha256(payload) != checksum:
        raise ChecksumError(f"checksum mismatch for {path}", {"path": str(path)})
    return np.frombuffer(payload, dtype=LITTLE_F64).astype(np.float64).reshape(shape)


def write_json(path, document):
    Path(path).write_text(json.dumps(document, indent=2, sort_keys=True))


def read_manifest(path, expected_version):
    """
    Load a JSON manifest and check its format version

    Raises:
        MissingArtifactError: If the manifest is absent
        FormatVersionError: If format_version differs from expected_version
    """
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"missing artifact: {path}", {"path": str(path)})
    manifest = json.loads(path.read_text())
    version = manifest.get("format_version")
    if version != expected_version:
        raise FormatVersionError(
            f"{path} has format version {version}, expected {expected_version}",
            {"path": str(path), "found": version, "expected": expected_version},
        )
    return manifest
