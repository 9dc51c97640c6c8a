"""Independent brute-force reference implementations.

Deliberately written as plain Python loops, sharing no code with the
fast paths they check.
"""

import math

import numpy as np


def bev_oracle(points, resolution, width, height, depth_size, threshold):
    """Full pipeline oracle: per-voxel scan, column max, min-max rescale,
    strict threshold.  points: iterable of (x, y, z, ...) records."""
    grid = {}
    for p in points:
        vx = math.floor(p[0] / resolution + width / 2)
        vy = math.floor(p[1] / resolution + height / 2)
        vz = math.floor(p[2] / resolution + depth_size / 2)
        if 0 <= vx < width and 0 <= vy < height and 0 <= vz < depth_size:
            key = (vx, vy, vz)
            if key not in grid or p[2] > grid[key]:
                grid[key] = p[2]
    heights = {}
    for (vx, vy, _), z in grid.items():
        key = (vx, vy)
        if key not in heights or z > heights[key]:
            heights[key] = z
    out = np.zeros((width, height), dtype=np.uint8)
    if heights:
        lo = min(heights.values())
        hi = max(heights.values())
        for (vx, vy), z in heights.items():
            scaled = 1.0 if hi == lo else (z - lo) / (hi - lo)
            out[vx, vy] = 1 if scaled > threshold else 0
    return out


def voxel_oracle(points, resolution, width, height, depth_size):
    """Elevation grid oracle: loops over voxels, scanning all points per voxel."""
    values = np.full((width, height, depth_size), -np.inf)
    occupied = np.zeros((width, height, depth_size), dtype=bool)
    idx = []
    for p in points:
        vx = math.floor(p[0] / resolution + width / 2)
        vy = math.floor(p[1] / resolution + height / 2)
        vz = math.floor(p[2] / resolution + depth_size / 2)
        idx.append((vx, vy, vz, p[2]))
    for vx in range(width):
        for vy in range(height):
            for vz in range(depth_size):
                zmax, hit = -np.inf, False
                for px, py, pz, z in idx:
                    if (px, py, pz) == (vx, vy, vz):
                        hit = True
                        if z > zmax:
                            zmax = z
                if hit:
                    values[vx, vy, vz] = zmax
                    occupied[vx, vy, vz] = True
    return values, occupied


def conv2d_oracle(x, w, b, stride=1, padding=0):
    """Naive quadruple-loop cross-correlation; x (C,H,W), w (O,C,kh,kw)."""
    c_out, c_in, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    oh = (xp.shape[1] - kh) // stride + 1
    ow = (xp.shape[2] - kw) // stride + 1
    out = np.zeros((c_out, oh, ow))
    for o in range(c_out):
        for i in range(oh):
            for j in range(ow):
                acc = 0.0
                for c in range(c_in):
                    for a in range(kh):
                        for bb in range(kw):
                            acc += w[o, c, a, bb] * xp[c, i * stride + a, j * stride + bb]
                out[o, i, j] = acc + b[o]
    return out


def maxpool_oracle(x, window=2, stride=2):
    c, h, w = x.shape
    out = np.zeros((c, h // stride, w // stride))
    for ch in range(c):
        for i in range(0, h, stride):
            for j in range(0, w, stride):
                out[ch, i // stride, j // stride] = x[ch, i:i + window, j:j + window].max()
    return out


def adam_scalar_oracle(p0, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Hand-rolled scalar Adam trace; returns parameter after each step."""
    p, m, v = p0, 0.0, 0.0
    history = []
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        p = p - lr * mhat / (math.sqrt(vhat) + eps)
        history.append(p)
    return history
