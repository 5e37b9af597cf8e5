# cvae_beam/io.py
"""
io.py
-----
File formats.

  channels  "BGCH" v1: <4s magic><u32 version><u32 N_A><u32 L><u32 T>, then
            complex128 little-endian (re, im) pairs, UE-major, time-major.
  models    "BGVM" v1: <4s magic><u32 version><u32 variant><u32 latent_dim>
            <u32 N_A><u32 hidden><u32 n_entries>, a manifest of
            (u16 name length, utf-8 name, u8 ndim, u32 dims...) entries,
            then every state tensor as little-endian float64 in manifest order.
  CSV       one comment line "# config_hash=<h> seed=<s>", then header + rows.

Loaders validate everything before building objects.
"""
import logging
import struct
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
import pandas as pd
import torch

from cvae_beam.channel import ChannelDataset
from cvae_beam.cvae import CvaeModel, Variant, build_cvae
from cvae_beam.errors import FormatError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

CHANNEL_MAGIC = b"BGCH"
MODEL_MAGIC = b"BGVM"
FORMAT_VERSION = 1
_CHANNEL_HEADER = struct.Struct("<4sIIII")
_MODEL_HEADER = struct.Struct("<4sIIIIII")
_VARIANT_CODES = {Variant.OFFLINE: 0, Variant.ONLINE: 1}
CSV_FLOAT_FORMAT = "%.10g"


# ---- Channels ----------------------------------------------------------------
def save_channels(dataset: Union[ChannelDataset, np.ndarray], path: PathLike) -> Path:
    h = dataset.h if isinstance(dataset, ChannelDataset) else np.asarray(dataset)
    if h.ndim != 3:
        raise FormatError(f"expected (ues, snapshots, antennas) channels, got shape {h.shape}")
    L, T, n = h.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_CHANNEL_HEADER.pack(CHANNEL_MAGIC, FORMAT_VERSION, n, L, T))
        f.write(np.ascontiguousarray(h, dtype="<c16").tobytes())
    logger.debug("wrote %s (%d x %d x %d)", path, L, T, n)
    return path


def load_channels(path: PathLike) -> ChannelDataset:
    raw = Path(path).read_bytes()
    if len(raw) < _CHANNEL_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, n, L, T = _CHANNEL_HEADER.unpack_from(raw)
    if magic != CHANNEL_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = _CHANNEL_HEADER.size + 16 * n * L * T
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    h = np.frombuffer(raw, dtype="<c16", offset=_CHANNEL_HEADER.size).reshape(L, T, n)
    return ChannelDataset(h=h.astype(np.complex128))


def channels_frame(dataset: Union[ChannelDataset, np.ndarray]) -> pd.DataFrame:
    h = dataset.h if isinstance(dataset, ChannelDataset) else np.asarray(dataset)
    L, T, n = h.shape
    ue, t, ant = np.meshgrid(np.arange(L), np.arange(T), np.arange(n), indexing="ij")
    return pd.DataFrame({"ue": ue.ravel(), "t": t.ravel(), "antenna": ant.ravel(),
                         "re": h.real.ravel(), "im": h.imag.ravel()})


def export_channels_csv(dataset: Union[ChannelDataset, np.ndarray], path: PathLike,
                        config_hash: str = "", seed: int = 0) -> Path:
    return write_csv(channels_frame(dataset), path, config_hash, seed)


# ---- CSV -----------------------------------------------------------------------
def write_csv(frame: pd.DataFrame, path: PathLike, config_hash: str, seed: int) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(f"# config_hash={config_hash} seed={seed}\n")
        frame.to_csv(f, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    logger.info("wrote %s (%d rows)", path, len(frame))
    return path


def read_csv(path: PathLike) -> pd.DataFrame:
    try:
        return pd.read_csv(path, comment="#")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise FormatError(f"{path}: {e}") from e


def csv_stamp(path: PathLike) -> Tuple[str, int]:
    """(config_hash, seed) from a CSV's comment line."""
    with open(path, encoding="utf-8") as f:
        first = f.readline().strip()
    if not first.startswith("# "):
        raise FormatError(f"{path}: missing comment line")
    fields = dict(item.split("=", 1) for item in first[2:].split())
    try:
        return fields["config_hash"], int(fields["seed"])
    except (KeyError, ValueError) as e:
        raise FormatError(f"{path}: malformed comment line {first!r}") from e


# ---- Models ----------------------------------------------------------------------
def save_model(model: CvaeModel, path: PathLike) -> Path:
    state = model.state_dict()
    names = list(state.keys())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_MODEL_HEADER.pack(MODEL_MAGIC, FORMAT_VERSION, _VARIANT_CODES[model.variant],
                                   model.latent_dim, model.n_antennas, model.hidden, len(names)))
        for name in names:
            encoded = name.encode("utf-8")
            shape = tuple(state[name].shape)
            f.write(struct.pack("<H", len(encoded)) + encoded)
            f.write(struct.pack(f"<B{len(shape)}I", len(shape), *shape))
        for name in names:
            f.write(state[name].detach().cpu().numpy().astype("<f8").tobytes())
    logger.debug("wrote model %s (%d tensors)", path, len(names))
    return path


def _read_manifest(raw: bytes, offset: int, count: int, path) -> Tuple[List[Tuple[str, Tuple[int, ...]]], int]:
    manifest = []
    try:
        for _ in range(count):
            (length,) = struct.unpack_from("<H", raw, offset)
            offset += 2
            name = raw[offset:offset + length].decode("utf-8")
            if len(name.encode("utf-8")) != length:
                raise FormatError(f"{path}: truncated manifest")
            offset += length
            (ndim,) = struct.unpack_from("<B", raw, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", raw, offset)
            offset += 4 * ndim
            manifest.append((name, tuple(shape)))
    except (struct.error, UnicodeDecodeError) as e:
        raise FormatError(f"{path}: truncated or corrupt manifest") from e
    return manifest, offset


def load_model(path: PathLike, dtype: torch.dtype = torch.float64) -> CvaeModel:
    raw = Path(path).read_bytes()
    if len(raw) < _MODEL_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, variant_code, latent_dim, n_antennas, hidden, count = _MODEL_HEADER.unpack_from(raw)
    if magic != MODEL_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    variants = {code: v for v, code in _VARIANT_CODES.items()}
    if variant_code not in variants:
        raise FormatError(f"{path}: unknown variant code {variant_code}")

    manifest, offset = _read_manifest(raw, _MODEL_HEADER.size, count, path)
    sizes = [int(np.prod(shape)) for _, shape in manifest]
    if len(raw) != offset + 8 * sum(sizes):
        raise FormatError(f"{path}: expected {offset + 8 * sum(sizes)} bytes, found {len(raw)}")

    model = build_cvae(variants[variant_code], n_antennas, latent_dim, hidden, dtype=dtype)
    target = model.state_dict()
    if [n for n, _ in manifest] != list(target.keys()):
        raise FormatError(f"{path}: layer manifest does not match the {variants[variant_code].value} architecture")
    state = {}
    for (name, shape), size in zip(manifest, sizes):
        if tuple(target[name].shape) != shape:
            raise FormatError(f"{path}: {name} has shape {shape}, architecture expects {tuple(target[name].shape)}")
        values = np.frombuffer(raw, dtype="<f8", count=size, offset=offset).reshape(shape)
        state[name] = torch.as_tensor(values.copy()).to(target[name].dtype)
        offset += 8 * size
    model.load_state_dict(state)
    for name, tensor in state.items():
        if name.endswith("running_var") and torch.any(tensor <= 0):
            raise FormatError(f"{path}: non-positive running variance in {name}")
    model.eval()
    return model
