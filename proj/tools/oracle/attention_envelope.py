#!/usr/bin/env python3
# Copyright 2026 The qlab Authors
# SPDX-License-Identifier: Apache-2.0
"""Independent numpy model of the default attention precision policy.

FP16 score accumulation and softmax, FP8 E4M3 P, FP32 running sum, rescale
and output accumulator, BF16 output, 64 x 64 tiles, causal. Prints the
relative Frobenius error against a float64 reference over many Gaussian
draws; the acceptance bound is pinned from this distribution.
"""

import argparse

import numpy as np


def e4m3_table():
    vals = []
    for code in range(0x7F):
        e, m = code >> 3, code & 7
        vals.append(m / 8 * 2.0**-6 if e == 0 else (1 + m / 8) * 2.0 ** (e - 7))
    return np.array(vals)


E4M3 = e4m3_table()


def to_e4m3(x):
    mag = np.abs(x)
    idx = np.clip(np.searchsorted(E4M3, mag), 1, len(E4M3) - 1)
    lo, hi = E4M3[idx - 1], E4M3[idx]
    pick_hi = (hi - mag < mag - lo) | ((hi - mag == mag - lo) & (idx % 2 == 0))
    out = np.where(pick_hi, hi, lo)
    out = np.where(mag >= E4M3[-1], E4M3[-1], out)
    out = np.where(mag == 0, 0.0, out)
    return np.copysign(out, x)


def to_bf16(x):
    b = np.asarray(x, dtype=np.float32).view(np.uint32).astype(np.uint64)
    b = (b + 0x7FFF + ((b >> 16) & 1)) & 0xFFFF0000
    return b.astype(np.uint32).view(np.float32).astype(np.float64)


f16 = lambda x: np.asarray(x, dtype=np.float64).astype(np.float16).astype(np.float64)
f32 = lambda x: np.asarray(x, dtype=np.float64).astype(np.float32).astype(np.float64)


def tiled(q, k, v, br=64, bc=64):
    n, d = q.shape
    tau = 1.0 / np.sqrt(d)
    out = np.zeros_like(v)
    masked = -65504.0
    for r0 in range(0, n, br):
        rows = np.arange(r0, min(n, r0 + br))
        tiles = min((n + bc - 1) // bc, (rows[-1]) // bc + 1)

        def scores(j):
            cols = np.arange(j * bc, (j + 1) * bc)
            acc = np.zeros((len(rows), bc))
            for t in range(d):
                acc = f16(acc + np.outer(q[rows, t], k[cols, t]))
            s = f16(f16(tau * acc))
            return np.where(cols[None, :] > rows[:, None], masked, s)

        l = np.zeros(len(rows))

        def softmax(s, m, l):
            p = np.zeros_like(s)
            for c in range(s.shape[1]):
                e = f16(np.exp(f16(s[:, c] - m)))
                l = f32(l + e)
                p[:, c] = to_e4m3(e)
            return p, l

        def pv(p, j):
            t = np.zeros((len(rows), v.shape[1]))
            for x in range(bc):
                t = f32(t + f32(np.outer(p[:, x], v[j * bc + x])))
            return t

        o = np.zeros((len(rows), v.shape[1]))
        s0 = scores(0)
        m = f16(s0.max(axis=1))
        p_prev, l = softmax(s0, m, l)
        for j in range(2, tiles + 1):
            o = f32(o + pv(p_prev, j - 2))
            s = scores(j - 1)
            m_new = f16(np.maximum(m, s.max(axis=1)))
            sc = f32(np.exp(f16(m - m_new)))
            m = m_new
            l = f32(sc * l)
            p_prev, l = softmax(s, m, l)
            o = f32(sc[:, None] * o)
        o = f32(o + pv(p_prev, tiles - 1))
        inv = f32(1.0 / l)
        out[rows] = to_bf16(f32(o * inv[:, None]))
    return out


def reference(q, k, v):
    n, d = q.shape
    s = q @ k.T / np.sqrt(d)
    s = np.where(np.triu(np.ones((n, n), bool), 1), -np.inf, s)
    e = np.exp(s - s.max(axis=1, keepdims=True))
    return (e / e.sum(axis=1, keepdims=True)) @ v


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--trials", type=int, default=50)
    ap.add_argument("--n", type=int, default=256)
    ap.add_argument("--d", type=int, default=64)
    args = ap.parse_args()
    rng = np.random.default_rng(2026)
    errs = []
    for _ in range(args.trials):
        q, k, v = (f32(rng.standard_normal((args.n, args.d))) for _ in range(3))
        ref = reference(q, k, v)
        errs.append(np.linalg.norm(tiled(q, k, v) - ref) / np.linalg.norm(ref))
    errs = np.array(errs)
    print(f"trials={args.trials} min={errs.min():.6f} median={np.median(errs):.6f} max={errs.max():.6f}")


if __name__ == "__main__":
    main()
