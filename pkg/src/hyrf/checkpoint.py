"""Binary checkpoint container.

Layout (little-endian throughout)::

    magic "HYRC" | version u16 | reserved u16
    header blob (u64 length + UTF-8 JSON: iteration, aabb, s_max, model config)
    gaussians: N u32, positions f32[N,3], colors f32[N,3], scales f32[N], opacities f32[N]
    geometry field, radiance field:
        n_levels u32, features u32, log2_max_entries u32, base_res u32, finest_res u32,
        per level (resolution u32, entries u32), then every level's table f32[entries, features]
    geometry decoder, color decoder:
        n_dims u32, dims u32[n_dims], weights f32 row-major per layer, biases f32 per layer
    if flags bit 0: R-VQ codebooks + indices the explicit attributes were decoded from

Parameters are stored as 32-bit floats, so float32 models round-trip
bitwise.
"""

import json
from pathlib import Path

import numpy as np

from .binio import Reader, Writer
from .codec.attributes import read_source, reusable_source, write_source
from .errors import CorruptStreamError
from .gaussians import ExplicitGaussianSet
from .geometry import Aabb
from .hashgrid import HashField, HashFieldConfig
from .mlp import DecoderNet
from .model import HybridModel, ModelConfig

MAGIC = b"HYRC"
VERSION = 1
FLAG_RVQ_SOURCE = 1


def write_field(w: Writer, fld: HashField):
    cfg = fld.config
    w.pack("5I", cfg.n_levels, cfg.features_per_entry, cfg.log2_max_entries,
           cfg.base_resolution, cfg.finest_resolution)
    for res, size in zip(cfg.resolutions, cfg.table_sizes):
        w.pack("2I", res, size)
    for t in fld.tables:
        w.array(t, np.float32)


def read_field(r: Reader) -> HashField:
    start = r.offset
    n_levels, feats, log2, base, finest = r.unpack("5I")
    try:
        cfg = HashFieldConfig(n_levels, feats, log2, base, finest)
    except ValueError as exc:
        raise CorruptStreamError(f"invalid hash field config: {exc}", start) from None
    for level, (res, size) in enumerate(zip(cfg.resolutions, cfg.table_sizes)):
        at = r.offset
        got = r.unpack("2I")
        if got != (res, size):
            raise CorruptStreamError(f"hash level {level} geometry {got} disagrees with config {(res, size)}", at)
    tables = [r.array(np.float32, size * feats, (size, feats)) for size in cfg.table_sizes]
    return HashField(cfg, tables)


def write_decoder(w: Writer, net: DecoderNet):
    w.pack("I", len(net.dims))
    w.pack(f"{len(net.dims)}I", *net.dims)
    for wt in net.weights:
        w.array(wt, np.float32)
    for b in net.biases:
        w.array(b, np.float32)


def read_decoder(r: Reader) -> DecoderNet:
    at = r.offset
    n = r.unpack("I")
    if not 2 <= n <= 64:
        raise CorruptStreamError(f"implausible decoder depth {n}", at)
    dims = r.unpack(f"{n}I")
    dims = [dims] if isinstance(dims, int) else list(dims)
    weights = [r.array(np.float32, o * i, (o, i)) for i, o in zip(dims[:-1], dims[1:])]
    biases = [r.array(np.float32, o) for o in dims[1:]]
    return DecoderNet(dims, weights, biases)


def write_gaussians(w: Writer, g: ExplicitGaussianSet):
    w.pack("I", len(g))
    w.array(g.positions, np.float32)
    w.array(g.colors, np.float32)
    w.array(g.scales, np.float32)
    w.array(g.opacities, np.float32)


def read_gaussians(r: Reader) -> ExplicitGaussianSet:
    n = r.unpack("I")
    return ExplicitGaussianSet.create(
        r.array(np.float32, 3 * n, (n, 3)),
        r.array(np.float32, 3 * n, (n, 3)),
        r.array(np.float32, n),
        r.array(np.float32, n),
    )


def model_header(model: HybridModel, iteration=0, extra=None):
    header = {
        "iteration": int(iteration),
        "aabb": [model.aabb.min_corner.tolist(), model.aabb.max_corner.tolist()],
        "s_max": model.s_max,
        "model_config": model.config.to_dict(),
    }
    if extra:
        header.update(extra)
    return header


def model_from_parts(header, gaussians, geo_field, rad_field, geo_dec, col_dec) -> HybridModel:
    aabb = Aabb(*header["aabb"])
    return HybridModel(gaussians, geo_field, rad_field, geo_dec, col_dec, aabb,
                       ModelConfig.from_dict(header["model_config"]), header["s_max"])


def checkpoint_bytes(model: HybridModel, iteration=0, extra=None) -> bytes:
    src = reusable_source(model)
    w = Writer()
    w.parts.append(MAGIC)
    w.pack("HH", VERSION, FLAG_RVQ_SOURCE if src else 0)
    w.blob(json.dumps(model_header(model, iteration, extra), sort_keys=True).encode())
    write_gaussians(w, model.gaussians)
    write_field(w, model.geo_field)
    write_field(w, model.rad_field)
    write_decoder(w, model.geo_decoder)
    write_decoder(w, model.color_decoder)
    if src:
        write_source(w, src)
    return w.getvalue()


def parse_checkpoint(data: bytes):
    """Returns ``(model, header)``."""
    r = Reader(data, "checkpoint")
    if bytes(r.data[:4]) != MAGIC:
        raise CorruptStreamError("not a hyrf checkpoint (bad magic)", 0)
    r.offset = 4
    version, flags = r.unpack("HH")
    if version > VERSION:
        raise CorruptStreamError(f"checkpoint version {version} is newer than supported {VERSION}", 4)
    at = r.offset
    try:
        header = json.loads(r.blob().decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptStreamError(f"unreadable checkpoint header: {exc}", at) from None
    gaussians = read_gaussians(r)
    geo_field = read_field(r)
    rad_field = read_field(r)
    geo_dec = read_decoder(r)
    col_dec = read_decoder(r)
    src = read_source(r) if flags & FLAG_RVQ_SOURCE else None
    r.expect_end()
    model = model_from_parts(header, gaussians, geo_field, rad_field, geo_dec, col_dec)
    model.rvq_source = src
    return model, header


def save_checkpoint(path, model: HybridModel, iteration=0, extra=None):
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(checkpoint_bytes(model, iteration, extra))
    tmp.replace(path)
    return path


def load_checkpoint(path):
    """Returns ``(model, header)``."""
    return parse_checkpoint(Path(path).read_bytes())
