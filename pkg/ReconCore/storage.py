"""
On-disk persistence: raw little-endian arrays with JSON sidecars, validated
JSON documents, provenance records and 16-bit PGM images.

An array ``foo.c16`` is described by ``foo.c16.json``
(``{"dtype": "<c16", "shape": [...], "meta": {...}}``).
"""

import hashlib
import json
import logging
import subprocess
from pathlib import Path

import numpy as np
from rest_framework import serializers as drf_serializers

from . import __version__
from .exceptions import DataError
from .serializers import ArraySidecarSerializer, MapsMetaSerializer, TrajectoryMetaSerializer

logger = logging.getLogger(__name__)

RNG_ALGORITHM = 'numpy.random.PCG64'


def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.name + '.json')


def write_json(path, payload, serializer_class=None, context=None):
    """
    Validate ``payload`` with ``serializer_class`` (if given) and write it as JSON.

    Returns:
        dict: The validated payload.
    """
    if serializer_class is not None:
        payload = validate(serializer_class, payload, context=context, source=path)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    return payload


def read_json(path, serializer_class=None, context=None):
    """
    Load a JSON document and validate it.

    Raises:
        DataError: If the file is missing, not JSON, or fails validation.
    """
    path = Path(path)
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except FileNotFoundError as exc:
        raise DataError(f"{path} does not exist") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} is not valid JSON: {exc}") from exc
    if serializer_class is None:
        return payload
    return validate(serializer_class, payload, context=context, source=path)


def validate(serializer_class, payload, context=None, source=None):
    serializer = serializer_class(data=payload, context=context or {})
    try:
        serializer.is_valid(raise_exception=True)
    except drf_serializers.ValidationError as exc:
        where = f" in {source}" if source else ''
        raise DataError(f"Invalid document{where}: {exc.detail}") from exc
    return _plain(serializer.validated_data)


def _plain(value):
    """Turn validated DRF data (OrderedDicts, ReturnLists) into plain JSON types."""
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def write_array(path, array, dtype, meta=None):
    """Write ``array`` as raw little-endian ``dtype`` bytes plus its JSON sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    array = np.ascontiguousarray(array, dtype=np.dtype(dtype))
    array.tofile(path)
    write_json(
        sidecar_path(path),
        {'dtype': dtype, 'shape': list(array.shape), 'meta': meta or {}},
        ArraySidecarSerializer,
    )
    return path


def read_array(path, with_meta=False):
    """
    Read an array written by ``write_array``.

    Raises:
        DataError: If the sidecar is invalid or the payload size does not match it.
    """
    path = Path(path)
    header = read_json(sidecar_path(path), ArraySidecarSerializer)
    try:
        flat = np.fromfile(path, dtype=np.dtype(header['dtype']))
    except FileNotFoundError as exc:
        raise DataError(f"{path} does not exist") from exc
    shape = tuple(header['shape'])
    if flat.size != int(np.prod(shape)):
        raise DataError(f"{path} holds {flat.size} values, sidecar declares shape {shape}")
    array = flat.reshape(shape)
    return (array, header['meta']) if with_meta else array


def save_trajectory(path, traj):
    return write_array(path, traj.points, '<f8', meta=traj.sidecar())


def load_trajectory(path):
    from .trajectory import Trajectory

    points, meta = read_array(path, with_meta=True)
    meta = validate(TrajectoryMetaSerializer, meta, source=path)
    return Trajectory(points, meta['n_spokes'], meta['points_per_spoke'], meta['start_index'], meta['kind'])


def save_maps(path, maps):
    return write_array(path, maps.maps, '<c16', meta=maps.sidecar())


def load_maps(path):
    from .coil import SensitivityMaps

    arr, meta = read_array(path, with_meta=True)
    meta = validate(MapsMetaSerializer, meta, source=path)
    return SensitivityMaps(arr, meta['seed'], meta['recipe_version'])


def canonical_hash(payload):
    """sha256 of the canonical JSON encoding of ``payload``."""
    blob = json.dumps(payload, sort_keys=True, separators=(',', ':')).encode()
    return hashlib.sha256(blob).hexdigest()


def file_hash(path):
    digest = hashlib.sha256()
    with open(path, 'rb') as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


def describe_version():
    """``git describe`` of the working tree when available, else the package version."""
    try:
        out = subprocess.run(
            ['git', 'describe', '--always', '--dirty', '--tags'],
            cwd=Path(__file__).resolve().parent,
            capture_output=True, text=True, timeout=5,
        )
    except (OSError, subprocess.SubprocessError):
        return __version__
    return out.stdout.strip() or __version__


def provenance(config, seeds=None, command=None):
    return {
        'version': describe_version(),
        'command': command,
        'config_hash': canonical_hash(config),
        'seeds': seeds or {},
        'rng': RNG_ALGORITHM,
    }


def write_pgm(path, magnitude):
    """
    Write a magnitude image as a 16-bit binary PGM, max-normalized to 65535.

    Returns:
        float: The scale (image maximum) that maps to 65535.
    """
    magnitude = np.asarray(magnitude, dtype=np.float64)
    peak = float(magnitude.max()) if magnitude.size else 0.0
    scaled = magnitude / peak if peak > 0 else np.zeros_like(magnitude)
    pixels = np.round(np.clip(scaled, 0.0, 1.0) * 65535).astype('>u2')
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    height, width = magnitude.shape
    with open(path, 'wb') as fh:
        fh.write(f"P5\n{width} {height}\n65535\n".encode('ascii'))
        fh.write(pixels.tobytes())
    return peak


def read_pgm(path):
    """Read a 16-bit binary PGM written by ``write_pgm``; values scaled to [0, 1]."""
    with open(path, 'rb') as fh:
        data = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos].decode('ascii'))
    pos += 1
    if fields[0] != 'P5' or fields[3] != '65535':
        raise DataError(f"{path} is not a 16-bit binary PGM")
    width, height = int(fields[1]), int(fields[2])
    pixels = np.frombuffer(data, dtype='>u2', count=width * height, offset=pos)
    return pixels.reshape(height, width).astype(np.float64) / 65535
