"""
Checkpoint files: a validated JSON header plus named raw tensors, stored as
an uncompressed ``.npz`` archive so a save/load roundtrip is bit-exact.
"""

import json
import logging
import zipfile
from pathlib import Path

import numpy as np

from ..exceptions import DataError
from ..serializers import CheckpointHeaderSerializer
from ..storage import validate
from .networks import Architecture, ModuleParams, receptive_field

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
HEADER_KEY = '__header__'


def save_checkpoint(path, params):
    """Write ``params`` to ``path`` (a ``.npz`` file); returns the path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = validate(CheckpointHeaderSerializer, {
        'format_version': FORMAT_VERSION,
        'architecture': params.architecture.to_dict(),
        'precision': params.precision,
        'receptive_field': receptive_field(params.architecture),
        'tensors': sorted(params.tensors),
    })
    with open(path, 'wb') as fh:
        np.savez(fh, **{HEADER_KEY: np.array(json.dumps(header, sort_keys=True))}, **params.tensors)
    logger.debug("Saved %s checkpoint to %s", params.arch, path)
    return path


def load_checkpoint(path):
    """
    Read a checkpoint written by ``save_checkpoint``.

    Raises:
        DataError: If the file is missing or corrupt, the header is invalid, or
            the tensors are inconsistent with the declared architecture.
    """
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as archive:
            if HEADER_KEY not in archive.files:
                raise DataError(f"{path} has no checkpoint header")
            header = json.loads(str(archive[HEADER_KEY]))
            tensors = {name: archive[name] for name in archive.files if name != HEADER_KEY}
    except FileNotFoundError as exc:
        raise DataError(f"{path} does not exist") from exc
    except (OSError, ValueError, zipfile.BadZipFile) as exc:
        raise DataError(f"{path} is not a readable checkpoint: {exc}") from exc

    header = validate(CheckpointHeaderSerializer, header, source=path)
    if header['format_version'] != FORMAT_VERSION:
        raise DataError(f"{path} has checkpoint format {header['format_version']}, expected {FORMAT_VERSION}")
    if sorted(tensors) != header['tensors']:
        raise DataError(f"{path} tensors do not match its header")
    for name, tensor in tensors.items():
        if tensor.dtype != np.dtype(header['precision']):
            raise DataError(f"{path}: tensor {name} is {tensor.dtype}, header declares {header['precision']}")
    try:
        architecture = Architecture(**header['architecture'])
    except (TypeError, ValueError) as exc:
        raise DataError(f"{path} declares an invalid architecture: {exc}") from exc
    return ModuleParams(architecture, tensors, header['precision'])
