"""
Binäres Checkpoint-Format für ``ModelParams``.

Layout (alle Ganzzahlen und Reals little-endian):

    Offset  Typ        Inhalt
    0       4 Byte     Magic b"GTWD"
    4       uint16     Formatversion (aktuell 1)
    6       uint16     Flags: Bit 0 deep, Bit 1 wide, Bit 2 wide_sigmoid
    8       uint32     Anzahl Dimensionseinträge D (aktuell 6)
    12      D × uint32 input_dim, hidden_dim, seq_len, dense1_breite, dense2_breite, n_tabular
    ...     uint32     Anzahl float64-Werte P
    ...     P × f8     Normalisierer (seq_mean, seq_std falls deep; tab_mean, tab_std falls wide),
                       danach alle trainierbaren Arrays in der Reihenfolge aus ``src.net``
    Ende    uint32     CRC32 (zlib) über alle vorangehenden Bytes

Ist das Modell ohne Deep-Zweig, sind input_dim, hidden_dim und seq_len trotzdem
eingetragen, aber ohne zugehörige Arrays.
"""

import logging
import struct
import zlib
from pathlib import Path

import numpy as np

from src.errors import ValidationError
from src.net import (
    DENSE1_WIDTH,
    DENSE2_WIDTH,
    N_TABULAR,
    FeatureNormalizers,
    NetConfig,
    init_params,
)

logger = logging.getLogger(__name__)

MAGIC = b"GTWD"
FORMAT_VERSION = 1
FLAG_DEEP = 1
FLAG_WIDE = 2
FLAG_WIDE_SIGMOID = 4

_PREAMBLE = struct.Struct("<4sHHI")
_U32 = struct.Struct("<I")
_N_DIMS = 6


class CheckpointError(ValidationError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


def _normalizer_arrays(params):
    norm = params.normalizers
    arrays = []
    if params.config.use_deep:
        arrays += [norm.seq_mean, norm.seq_std]
    if params.config.use_wide:
        arrays += [norm.tab_mean, norm.tab_std]
    return arrays


def checkpoint_bytes(params):
    """Serialisiert ``params`` in das oben beschriebene Layout."""
    cfg = params.config
    flags = (FLAG_DEEP if cfg.use_deep else 0) | (FLAG_WIDE if cfg.use_wide else 0)
    if cfg.wide_sigmoid:
        flags |= FLAG_WIDE_SIGMOID
    dims = (cfg.input_dim, cfg.hidden_dim, cfg.seq_len, DENSE1_WIDTH, DENSE2_WIDTH, N_TABULAR)
    values = np.concatenate(
        [np.asarray(a, dtype=np.float64).ravel() for a in _normalizer_arrays(params) + params.arrays()]
    )

    body = bytearray(_PREAMBLE.pack(MAGIC, FORMAT_VERSION, flags, _N_DIMS))
    body += struct.pack(f"<{_N_DIMS}I", *dims)
    body += _U32.pack(values.size)
    body += values.astype("<f8").tobytes()
    body += _U32.pack(zlib.crc32(bytes(body)))
    return bytes(body)


def checkpoint_save(params, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(params))
    logger.debug(f"Checkpoint geschrieben: {path} ({params.size} Parameter)")


def _take(data, offset, size, path):
    if offset + size > len(data):
        raise CorruptCheckpointError(f"Checkpoint '{path}' ist abgeschnitten (Offset {offset})")
    return data[offset:offset + size], offset + size


def checkpoint_from_bytes(data, path="<bytes>"):
    """
    Rekonstruiert ``ModelParams`` aus einem Checkpoint-Puffer.

    Die Version wird vor der Prüfsumme geprüft.

    Raises:
        CorruptCheckpointError: falsches Magic, abgeschnittene Datei, Prüfsummenfehler.
        VersionMismatchError: unbekannte Formatversion.
    """
    raw, offset = _take(data, 0, _PREAMBLE.size, path)
    magic, version, flags, n_dims = _PREAMBLE.unpack(raw)
    if magic != MAGIC:
        raise CorruptCheckpointError(f"Checkpoint '{path}': unbekanntes Magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"Checkpoint '{path}' hat Version {version}, unterstützt wird {FORMAT_VERSION}"
        )
    if n_dims != _N_DIMS:
        raise CorruptCheckpointError(f"Checkpoint '{path}': {n_dims} Dimensionseinträge, erwartet {_N_DIMS}")
    raw, offset = _take(data, offset, 4 * n_dims, path)
    input_dim, hidden_dim, seq_len, dense1, dense2, n_tab = struct.unpack(f"<{n_dims}I", raw)
    if (dense1, dense2, n_tab) != (DENSE1_WIDTH, DENSE2_WIDTH, N_TABULAR):
        raise CorruptCheckpointError(f"Checkpoint '{path}': Kopfbreiten {(dense1, dense2, n_tab)} nicht unterstützt")
    raw, offset = _take(data, offset, _U32.size, path)
    (n_values,) = _U32.unpack(raw)
    raw, offset = _take(data, offset, 8 * n_values, path)
    values = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    raw, end = _take(data, offset, _U32.size, path)
    if end != len(data):
        raise CorruptCheckpointError(f"Checkpoint '{path}': {len(data) - end} überzählige Bytes")
    (crc,) = _U32.unpack(raw)
    if crc != zlib.crc32(bytes(data[:offset])):
        raise CorruptCheckpointError(f"Checkpoint '{path}': Prüfsumme stimmt nicht")

    config = NetConfig(
        input_dim=input_dim,
        hidden_dim=hidden_dim,
        seq_len=seq_len,
        use_deep=bool(flags & FLAG_DEEP),
        use_wide=bool(flags & FLAG_WIDE),
        wide_sigmoid=bool(flags & FLAG_WIDE_SIGMOID),
    )
    seq_width = input_dim if config.use_deep else 0
    tab_width = N_TABULAR if config.use_wide else 0
    params = init_params(config, np.random.default_rng(0), FeatureNormalizers.identity(seq_width, tab_width))
    targets = _normalizer_arrays(params) + params.arrays()
    expected = sum(a.size for a in targets)
    if expected != n_values:
        raise CorruptCheckpointError(f"Checkpoint '{path}': {n_values} Werte, erwartet {expected}")

    pos = 0
    for array in targets:
        array.reshape(-1)[:] = values[pos:pos + array.size]
        pos += array.size
    # Invarianten (std > 0) erneut prüfen
    try:
        FeatureNormalizers(*(a for _, a in params.normalizers.named_arrays()))
    except ValidationError as exc:
        raise CorruptCheckpointError(f"Checkpoint '{path}': {exc}") from exc
    return params


def checkpoint_load(path):
    path = Path(path)
    if not path.exists():
        logger.error(f"Checkpoint nicht gefunden: {path}")
        raise FileNotFoundError(f"Checkpoint nicht gefunden: {path}")
    return checkpoint_from_bytes(path.read_bytes(), path)
