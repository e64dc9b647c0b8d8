from .synthetic import (GLYPH_COLORS, SyntheticSplit, decode_cue, draw_glyph, glyph_mask, split_by_frame,
                        synth_generate)

__all__ = [
    "GLYPH_COLORS",
    "SyntheticSplit",
    "decode_cue",
    "draw_glyph",
    "glyph_mask",
    "split_by_frame",
    "synth_generate",
]
