"""Frozen benchmark data for the symmetric 5x5 linear-solve suite.

The entries are transcribed verbatim from the published benchmark tables,
including the handful of entries printed with seven digits or truncated
trailing zeros (which makes A10 and A15 very slightly asymmetric as
printed). A4-A7 are spectrum-shifted copies of A1 and are built on demand.

Matrices fall into three recipe families:
  A1-A3    Gaussian factor, A = G^T G + diag(1, 0.75, 0.5, 0.1, 0.1)
  A8-A11   uniform factor, A = U U^T (no diagonal boost)
  A12-A19  Gaussian factor at spread 0.3/0.5/0.7/1.0, two matrices each
"""

from __future__ import annotations

import numpy as np

__all__ = ["BUILTIN_MATRIX_IDS", "builtin_matrix_raw", "B_TILDE", "SPECTRUM_SHIFT"]

B_TILDE = (2.483570, -0.691321, 3.238442, 7.615149, -1.170766)

# Diagonal shift used to derive A4-A7 from A1.
SPECTRUM_SHIFT = (0.5, 0.4, 0.3, 0.2, 0.1)

_A1 = (
    (1.392232, 0.152829, 0.088680, 0.185377, 0.156244),
    (0.152829, 1.070883, 0.020994, 0.068940, 0.141251),
    (0.088680, 0.020994, 0.910692, -0.222769, 0.060267),
    (0.185377, 0.068940, -0.222769, 0.833275, 0.058072),
    (0.156244, 0.141251, 0.060267, 0.058072, 0.735495),
)

_A2 = (
    (1.122760, -0.040031, 0.113992, 0.068578, 0.089329),
    (-0.040031, 0.920757, 0.085742, 0.089300, 0.158474),
    (0.113992, 0.085742, 0.896851, 0.150485, 0.044783),
    (0.068578, 0.089300, 0.150485, 0.729516, 0.070168),
    (0.089329, 0.158474, 0.044783, 0.070168, 1.163038),
)

_A3 = (
    (1.037577, 0.120230, -0.149775, 0.099841, 0.169390),
    (0.120230, 1.095856, 0.180211, 0.120029, 0.133797),
    (-0.149775, 0.180211, 0.781548, 0.241405, 0.320369),
    (0.099841, 0.120029, 0.241405, 0.877185, 0.040910),
    (0.169390, 0.133797, 0.320369, 0.040910, 0.602205),
)

_A8 = (
    (9.801337, -4.563474, 2.196806, -5.154676, 5.063176),
    (-4.563474, 48.751049, -26.335994, -3.910831, 17.380485),
    (2.196806, -26.335994, 31.887071, 1.215492, -12.532923),
    (-5.154676, -3.910831, 1.215492, 4.0743960, -5.876128),
    (5.063176, 17.380485, -12.532923, -5.876128, 25.900849),
)

_A9 = (
    (19.582102, -1.721533, 5.067191, 20.194875, 1.561468),
    (-1.721533, 38.090555, -11.445662, -22.832142, -0.152421),
    (5.067191, -11.445662, 17.191893, 14.784228, -3.889048),
    (20.194875, -22.832142, 14.784228, 49.221081, 22.059518),
    (1.561468, -0.152421, -3.889048, 22.059518, 31.461613),
)

_A10 = (
    (1.543741, -1.708336, -0.855255, 1.180115, -0.606022),
    (-1.708336, 7.993454, 1.813288, -0.855154, -0.375811),
    (-0.855255, 1.813288, 2.131294, -2.223852, -0.808170),
    (1.180115, -0.855154, -2.223852, 3.296235, 1.148258),
    (-0.606022, -0.375811, -0.8081702, 1.148258, 2.018821),
)

_A11 = (
    (0.554750, 0.192700, -0.030087, -0.173792, 0.078237),
    (0.192700, 0.134709, 0.005420, 0.156018, -0.081507),
    (-0.030087, 0.005420, 0.491319, -0.087115, -0.068497),
    (-0.173792, 0.156018, -0.087115, 0.923782, -0.356224),
    (0.078237, -0.081507, -0.068497, -0.356224, 0.197102),
)

_A12 = (
    (1.803328, 0.200759, -0.355809, -0.098682, -0.037251),
    (0.200759, 1.243347, 0.088843, 0.263899, 0.195536),
    (-0.355809, 0.088843, 1.495596, 0.093483, 0.383077),
    (-0.098682, 0.263899, 0.093483, 1.295673, 0.091526),
    (-0.037251, 0.195536, 0.383077, 0.091526, 1.171966),
)

_A13 = (
    (1.373797, 0.029822, 0.291240, -0.06804, -0.122712),
    (0.029822, 1.352286, 0.213403, 0.259224, 0.113595),
    (0.291240, 0.213403, 1.145153, 0.260138, -0.256945),
    (-0.068040, 0.259224, 0.260138, 1.044292, 0.023357),
    (-0.122712, 0.113595, -0.256945, 0.023357, 1.493027),
)

_A14 = (
    (1.875641, 0.369074, -0.254450, 0.011282, 0.086120),
    (0.369074, 1.438546, 0.165303, 0.330450, 0.326974),
    (-0.254450, 0.165303, 1.578616, 0.135095, 0.435910),
    (0.011282, 0.330450, 0.135095, 1.407443, 0.175663),
    (0.086120, 0.326974, 0.435910, 0.175663, 1.302648),
)

_A15 = (
    (1.496302, 0.069012, 0.466847, -0.023807, -0.07450),
    (0.069012, 1.356091, 0.304412, 0.368689, 0.278316),
    (0.466847, 0.304412, 1.273936, 0.359224, -0.193665),
    (-0.023807, 0.368689, 0.359224, 1.096486, 0.099104),
    (-0.0745018, 0.278316, -0.193665, 0.099104, 1.661732),
)

_A16 = (
    (1.947954, 0.537389, -0.153091, 0.121248, 0.209492),
    (0.537389, 1.633745, 0.241763, 0.397001, 0.458412),
    (-0.153091, 0.241763, 1.661637, 0.176707, 0.488742),
    (0.121248, 0.397001, 0.176707, 1.519214, 0.259799),
    (0.209492, 0.458412, 0.488742, 0.259799, 1.433331),
)

_A17 = (
    (1.618807, 0.108202, 0.642453, 0.020426, -0.026291),
    (0.108202, 1.359896, 0.395421, 0.478153, 0.443036),
    (0.642453, 0.395421, 1.402719, 0.458310, -0.130384),
    (0.020426, 0.478153, 0.458310, 1.148681, 0.174850),
    (-0.026291, 0.443036, -0.130384, 0.174850, 1.830438),
)

_A18 = (
    (2.056424, 0.789862, -0.001053, 0.286197, 0.394551),
    (0.789862, 1.926544, 0.356453, 0.496827, 0.655569),
    (-0.001053, 0.356453, 1.786167, 0.239125, 0.567990),
    (0.286197, 0.496827, 0.239125, 1.686871, 0.386004),
    (0.394551, 0.655569, 0.567990, 0.386004, 1.629354),
)

_A19 = (
    (1.802565, 0.166987, 0.905863, 0.086776, 0.046025),
    (0.166987, 1.365604, 0.531934, 0.642350, 0.690117),
    (0.905863, 0.531934, 1.595893, 0.606940, -0.035464),
    (0.086776, 0.642350, 0.606940, 1.226972, 0.288470),
    (0.046025, 0.690117, -0.035464, 0.288470, 2.083496),
)

_PRINTED = {
    "A1": _A1,
    "A2": _A2,
    "A3": _A3,
    "A8": _A8,
    "A9": _A9,
    "A10": _A10,
    "A11": _A11,
    "A12": _A12,
    "A13": _A13,
    "A14": _A14,
    "A15": _A15,
    "A16": _A16,
    "A17": _A17,
    "A18": _A18,
    "A19": _A19,
}

BUILTIN_MATRIX_IDS = tuple(f"A{i}" for i in range(1, 20))


def builtin_matrix_raw(matrix_id: str) -> np.ndarray:
    """Fresh copy of a builtin matrix; A4-A7 are derived from A1."""
    if matrix_id in _PRINTED:
        return np.array(_PRINTED[matrix_id], dtype=float)
    shift = np.diag(SPECTRUM_SHIFT)
    base = np.array(_A1, dtype=float)
    if matrix_id == "A4":
        return base - shift
    if matrix_id == "A5":
        return base + 0.5 * shift
    if matrix_id == "A6":
        return base + 1.3 * shift
    if matrix_id == "A7":
        return base + 2.5 * shift
    raise KeyError(f"unknown builtin matrix id {matrix_id!r} (expected A1..A19)")
