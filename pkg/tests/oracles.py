"""Independent reference values and brute-force oracles shared by the tests."""
import math

import numpy as np

# Layer-by-layer output sizes of the five steering heads at a 320x1216 target
# resolution, row for row. The 1/4-scale flatten row is 896 (64*1*14), the
# only value consistent with the (64, 1, 14) row before it.
STEERING_TABLES = {
    "full": ((4, 320, 1216), [
        ("conv", (64, 158, 606)), ("bn", (64, 158, 606)), ("relu", (64, 158, 606)),
        ("maxpool", (64, 52, 202)),
        ("conv", (64, 24, 99)), ("bn", (64, 24, 99)), ("relu", (64, 24, 99)),
        ("maxpool", (64, 12, 49)),
        ("conv", (64, 10, 47)), ("bn", (64, 10, 47)), ("relu", (64, 10, 47)),
        ("maxpool", (64, 5, 23)),
        ("conv", (64, 3, 21)), ("bn", (64, 3, 21)), ("relu", (64, 3, 21)),
        ("conv", (64, 1, 19)), ("bn", (64, 1, 19)), ("relu", (64, 1, 19)),
        ("flatten", (1216,)), ("linear", (25,)), ("relu", (25,)), ("linear", (1,)),
    ]),
    "s4": ((4, 80, 304), [
        ("conv", (64, 38, 150)), ("bn", (64, 38, 150)), ("relu", (64, 38, 150)),
        ("maxpool", (64, 19, 75)),
        ("conv", (64, 8, 36)), ("bn", (64, 8, 36)), ("relu", (64, 8, 36)),
        ("maxpool", (64, 4, 18)),
        ("conv", (64, 2, 16)), ("bn", (64, 2, 16)), ("relu", (64, 2, 16)),
        ("conv", (64, 1, 14)), ("bn", (64, 1, 14)), ("relu", (64, 1, 14)),
        ("flatten", (896,)), ("linear", (25,)), ("relu", (25,)), ("linear", (1,)),
    ]),
    "s8": ((4, 40, 152), [
        ("conv", (64, 18, 74)), ("bn", (64, 18, 74)), ("relu", (64, 18, 74)),
        ("maxpool", (64, 9, 24)),
        ("conv", (64, 7, 22)), ("bn", (64, 7, 22)), ("relu", (64, 7, 22)),
        ("conv", (64, 5, 20)), ("bn", (64, 5, 20)), ("relu", (64, 5, 20)),
        ("conv", (64, 3, 18)), ("bn", (64, 3, 18)), ("relu", (64, 3, 18)),
        ("conv", (64, 1, 16)), ("bn", (64, 1, 16)), ("relu", (64, 1, 16)),
        ("flatten", (1024,)), ("linear", (25,)), ("relu", (25,)), ("linear", (1,)),
    ]),
    "s16": ((4, 20, 76), [
        ("conv", (64, 8, 36)), ("bn", (64, 8, 36)), ("relu", (64, 8, 36)),
        ("conv", (64, 6, 34)), ("bn", (64, 6, 34)), ("relu", (64, 6, 34)),
        ("conv", (64, 4, 32)), ("bn", (64, 4, 32)), ("relu", (64, 4, 32)),
        ("conv", (64, 2, 30)), ("bn", (64, 2, 30)), ("relu", (64, 2, 30)),
        ("conv", (64, 1, 28)), ("bn", (64, 1, 28)), ("relu", (64, 1, 28)),
        ("flatten", (1792,)), ("linear", (25,)), ("relu", (25,)), ("linear", (1,)),
    ]),
    "s32": ((4, 10, 38), [
        ("conv", (64, 8, 36)), ("bn", (64, 8, 36)), ("relu", (64, 8, 36)),
        ("conv", (64, 6, 34)), ("bn", (64, 6, 34)), ("relu", (64, 6, 34)),
        ("conv", (64, 4, 32)), ("bn", (64, 4, 32)), ("relu", (64, 4, 32)),
        ("conv", (64, 2, 30)), ("bn", (64, 2, 30)), ("relu", (64, 2, 30)),
        ("conv", (64, 1, 28)), ("bn", (64, 1, 28)), ("relu", (64, 1, 28)),
        ("flatten", (1792,)), ("linear", (25,)), ("relu", (25,)), ("linear", (1,)),
    ]),
}

# (kind, kernel, stride) per spatial layer, used to recompute the tables.
STEERING_KERNELS = {
    "full": [("conv", (5, 5), (2, 2)), ("pool", (3, 3), (3, 3)), ("conv", (5, 5), (2, 2)),
             ("pool", (2, 2), (2, 2)), ("conv", (3, 3), (1, 1)), ("pool", (2, 2), (2, 2)),
             ("conv", (3, 3), (1, 1)), ("conv", (3, 3), (1, 1))],
    "s4": [("conv", (5, 5), (2, 2)), ("pool", (2, 2), (2, 2)), ("conv", (5, 5), (2, 2)),
           ("pool", (2, 2), (2, 2)), ("conv", (3, 3), (1, 1)), ("conv", (2, 3), (1, 1))],
    "s8": [("conv", (5, 5), (2, 2)), ("pool", (2, 3), (2, 3)), ("conv", (3, 3), (1, 1)),
           ("conv", (3, 3), (1, 1)), ("conv", (3, 3), (1, 1)), ("conv", (3, 3), (1, 1))],
    "s16": [("conv", (5, 5), (2, 2)), ("conv", (3, 3), (1, 1)), ("conv", (3, 3), (1, 1)),
            ("conv", (3, 3), (1, 1)), ("conv", (2, 3), (1, 1))],
    "s32": [("conv", (3, 3), (1, 1)), ("conv", (3, 3), (1, 1)), ("conv", (3, 3), (1, 1)),
            ("conv", (3, 3), (1, 1)), ("conv", (2, 3), (1, 1))],
}


def arithmetic_trace(tag):
    """Recompute a head's shape rows with floor((n - k) / s) + 1 and no padding."""
    (c, h, w), layers = STEERING_TABLES[tag][0], STEERING_KERNELS[tag]
    rows = []
    for kind, (kh, kw), (sh, sw) in layers:
        h, w = (h - kh) // sh + 1, (w - kw) // sw + 1
        if kind == "conv":
            c = 64
            rows += [("conv", (c, h, w)), ("bn", (c, h, w)), ("relu", (c, h, w))]
        else:
            rows.append(("maxpool", (c, h, w)))
    rows += [("flatten", (c * h * w,)), ("linear", (25,)), ("relu", (25,)), ("linear", (1,))]
    return rows


def count_iou_precision_recall(pred, gt):
    """Pixel-by-pixel loop over two binary masks; empty cases count as perfect."""
    tp = fp = fn = 0
    for p, g in zip(np.asarray(pred).ravel().tolist(), np.asarray(gt).ravel().tolist()):
        if p and g:
            tp += 1
        elif p:
            fp += 1
        elif g:
            fn += 1
    iou = 1.0 if tp + fp + fn == 0 else tp / (tp + fp + fn)
    precision = 1.0 if tp + fp == 0 else tp / (tp + fp)
    recall = 1.0 if tp + fn == 0 else tp / (tp + fn)
    return iou, precision, recall


LN2 = math.log(2.0)
ROAD_WEIGHT = 2.287
