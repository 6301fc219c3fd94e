"""Compressed model bundle.

Layout (little-endian throughout)::

    magic "HYRF" | version u16 | reserved u16
    header blob (u64 length + UTF-8 JSON: iteration, aabb, s_max, model config, R-VQ settings)
    positions: N u32, f16[N, 3]
    per attribute group (color, scale_opacity):
        codebook (stages u32, K u32, D u32, f64[stages, K, D]), Huffman stream of indices (stage-major)
    per hash field (geometry, radiance):
        field config as in checkpoints, per level (min f64, max f64), Huffman stream of 8-bit codes
    geometry decoder, color decoder: raw f32 as in checkpoints

Huffman stream: n_symbols u64, n_bits u64, block_size u32, alphabet u32,
symbols u32[alphabet], lengths u8[alphabet], block bit offsets u64[], payload blob.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..binio import Reader, Writer
from ..checkpoint import (
    load_checkpoint,
    model_from_parts,
    model_header,
    read_decoder,
    save_checkpoint,
    write_decoder,
)
from ..errors import CorruptStreamError, InvalidInputError
from ..gaussians import ExplicitGaussianSet
from ..hashgrid import HashField, HashFieldConfig
from .attributes import GROUPS, group_vectors, read_codebook, reusable_source, set_group_vectors, write_codebook
from .huffman import huffman_decode, huffman_encode, read_stream, write_stream
from .quant import dequantize_8bit, minmax_quantize_8bit
from .rvq import rvq_decode, rvq_fit_encode

MAGIC = b"HYRF"
VERSION = 1


@dataclass(frozen=True)
class CompressionConfig:
    n_stages: int = 6
    codebook_size: int = 64
    lloyd_iters: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.n_stages < 1 or not 1 <= self.codebook_size <= 65535 or self.lloyd_iters < 0:
            raise InvalidInputError("R-VQ needs >= 1 stage, 1..65535 codewords, >= 0 iterations")


def _decode_stream(r: Reader):
    at = r.offset
    stream = read_stream(r)
    try:
        return huffman_decode(stream), at
    except CorruptStreamError as exc:
        raise CorruptStreamError(exc.reason, at) from None


def _write_field(w: Writer, fld: HashField):
    cfg = fld.config
    w.pack("5I", cfg.n_levels, cfg.features_per_entry, cfg.log2_max_entries,
           cfg.base_resolution, cfg.finest_resolution)
    codes = []
    for t in fld.tables:
        c, lo, hi = minmax_quantize_8bit(t)
        w.pack("2d", lo, hi)
        codes.append(c.ravel())
    write_stream(w, huffman_encode(np.concatenate(codes)))


def _read_field(r: Reader, dtype=np.float32) -> HashField:
    at = r.offset
    n_levels, feats, log2, base, finest = r.unpack("5I")
    try:
        cfg = HashFieldConfig(n_levels, feats, log2, base, finest)
    except ValueError as exc:
        raise CorruptStreamError(f"invalid hash field config: {exc}", at) from None
    ranges = [r.unpack("2d") for _ in range(n_levels)]
    codes, at = _decode_stream(r)
    sizes = [s * feats for s in cfg.table_sizes]
    if len(codes) != sum(sizes) or codes.max() > 255:
        raise CorruptStreamError("hash code stream does not match the field layout", at)
    tables = []
    start = 0
    for (lo, hi), n, entries in zip(ranges, sizes, cfg.table_sizes):
        deq = dequantize_8bit(codes[start:start + n], lo, hi)
        tables.append(deq.reshape(entries, feats).astype(dtype))
        start += n
    return HashField(cfg, tables)


def compress_model(model, config: CompressionConfig = CompressionConfig(), iteration=0) -> bytes:
    """Serialize ``model`` into a self-describing compressed bundle."""
    g = model.gaussians
    n = len(g)
    k = min(config.codebook_size, n)
    header = model_header(model, iteration)
    header["rvq"] = {"n_stages": config.n_stages, "codebook_size": k,
                     "lloyd_iters": config.lloyd_iters, "seed": config.seed}
    w = Writer()
    w.parts.append(MAGIC)
    w.pack("HH", VERSION, 0)
    w.blob(json.dumps(header, sort_keys=True).encode())
    w.pack("I", n)
    w.array(g.positions, np.float16)

    source = reusable_source(model)
    for name in GROUPS:
        if source is not None:
            codebook, indices = source[name]
        else:
            codebook, indices = rvq_fit_encode(group_vectors(g, name), config.n_stages, k,
                                               config.lloyd_iters, config.seed)
        write_codebook(w, codebook)
        write_stream(w, huffman_encode(indices.T.ravel()))

    _write_field(w, model.geo_field)
    _write_field(w, model.rad_field)
    write_decoder(w, model.geo_decoder)
    write_decoder(w, model.color_decoder)
    return w.getvalue()


def decompress_model(data: bytes):
    """Returns ``(model, header)``; the model is ready to render."""
    r = Reader(data, "bundle")
    if len(data) < 4 or bytes(r.data[:4]) != MAGIC:
        raise CorruptStreamError("not a hyrf bundle (bad magic)", 0)
    r.offset = 4
    version, _ = r.unpack("HH")
    if version != VERSION:
        raise CorruptStreamError(f"bundle version {version} is not supported (expected {VERSION})", 4)
    at = r.offset
    try:
        header = json.loads(r.blob().decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptStreamError(f"unreadable bundle header: {exc}", at) from None
    n = r.unpack("I")
    positions = r.array(np.float16, 3 * n, (n, 3)).astype(np.float32)
    gaussians = ExplicitGaussianSet.create(positions)

    source = {}
    for name in GROUPS:
        codebook = read_codebook(r)
        flat, at = _decode_stream(r)
        if len(flat) != n * codebook.n_stages:
            raise CorruptStreamError(f"{name} index stream holds {len(flat)} symbols, expected "
                                     f"{n * codebook.n_stages}", at)
        indices = flat.reshape(codebook.n_stages, n).T.copy()
        try:
            values = rvq_decode(codebook, indices)
        except CorruptStreamError as exc:
            raise CorruptStreamError(exc.reason, at) from None
        set_group_vectors(gaussians, name, values)
        source[name] = (codebook, indices)

    geo_field = _read_field(r)
    rad_field = _read_field(r)
    geo_dec = read_decoder(r)
    col_dec = read_decoder(r)
    r.expect_end()
    model = model_from_parts(header, gaussians, geo_field, rad_field, geo_dec, col_dec)
    model.rvq_source = source
    return model, header


def compress_file(checkpoint_path, bundle_path, config: CompressionConfig = CompressionConfig()):
    model, header = load_checkpoint(checkpoint_path)
    data = compress_model(model, config, header.get("iteration", 0))
    Path(bundle_path).write_bytes(data)
    return len(data)


def decompress_file(bundle_path, checkpoint_path):
    model, header = decompress_model(Path(bundle_path).read_bytes())
    save_checkpoint(checkpoint_path, model, iteration=header.get("iteration", 0))
    return model
