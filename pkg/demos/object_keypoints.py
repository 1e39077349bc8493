"""
Nine keypoints from an object mask
==================================

Gravity, four extremes and four contour points on an L-shaped mask,
then an SVG overlay you can open in a browser.
"""

import numpy as np

from hokem.geometry import KEYPOINT_NAMES, RasterMask, extract_object_keypoints
from hokem.pipeline import render_svg

# an L: a horizontal bar on top and a vertical bar on the left
bits = np.zeros((40, 40), dtype=bool)
bits[5:11, 5:35] = True
bits[11:35, 5:11] = True
mask = RasterMask(bits)

kps = extract_object_keypoints(mask)
for name, (x, y) in zip(KEYPOINT_NAMES, kps.points):
    print(f"{name:13s} {x:7.2f} {y:7.2f}")

# gravity falls outside the L, so the lower-right ray finds nothing
# and that point stays at the midpoint of its two extremes
print("gravity occupied:", mask.occupied(*kps.points[0]))

# a made-up person standing to the right, just to fill the overlay
human = np.column_stack([np.linspace(22, 34, 17), np.linspace(14, 38, 17)])
with open("object_keypoints.svg", "w") as fh:
    fh.write(render_svg(40, 40, mask, human, kps, "L-shaped mask"))
print("wrote object_keypoints.svg")
