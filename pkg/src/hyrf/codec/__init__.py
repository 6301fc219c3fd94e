"""Post-training compression: f16 positions, R-VQ + Huffman attributes, 8-bit hash tables.

The bundle container lives in :mod:`hyrf.codec.bundle`.
"""

from .huffman import HuffmanStream, HuffmanTable, huffman_decode, huffman_encode
from .quant import dequantize_8bit, minmax_quantize_8bit
from .rvq import RvqCodebook, rvq_decode, rvq_fit_encode

__all__ = [
    "HuffmanStream",
    "HuffmanTable",
    "RvqCodebook",
    "dequantize_8bit",
    "huffman_decode",
    "huffman_encode",
    "minmax_quantize_8bit",
    "rvq_decode",
    "rvq_fit_encode",
]
