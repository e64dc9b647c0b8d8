from .overlap import (augment_primaries, candidate_set, clip_region, greedy_restrict, iou,
                      whole_image_region)

__all__ = [
    "augment_primaries",
    "candidate_set",
    "clip_region",
    "greedy_restrict",
    "iou",
    "whole_image_region",
]
