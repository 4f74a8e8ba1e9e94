"""Serial numba kernels for tile-based alpha blending.

Kernels are deliberately single-threaded with fixed traversal order so that
renders and gradients are bit-reproducible across runs. Splat arrays arrive
depth-sorted; tile lists index into the sorted arrays.
"""

from __future__ import annotations

import numpy as np
from numba import njit

ALPHA_CLAMP = 0.99
ALPHA_SKIP = 1.0 / 255.0
EARLY_STOP_T = 1e-4


@njit(cache=True)
def fill_tile_pairs(tx0, tx1, ty0, ty1, active, tiles_x, tile_ids, splat_ids):
    """Expand per-splat tile rectangles into (tile, splat) pairs, splat-major."""
    k = 0
    for j in range(tx0.shape[0]):
        if not active[j]:
            continue
        for ty in range(ty0[j], ty1[j] + 1):
            base = ty * tiles_x
            for tx in range(tx0[j], tx1[j] + 1):
                tile_ids[k] = base + tx
                splat_ids[k] = j
                k += 1
    return k


@njit(cache=True)
def blend_forward(
    height,
    width,
    tile,
    offsets,
    tile_splats,
    centers,
    conics,
    depths,
    rgbs,
    alphas,
    feats,
    bg_color,
    bg_feat,
    bg_depth,
    out_color,
    out_depth,
    out_feat,
    out_accum,
):
    d = feats.shape[1]
    tiles_x = (width + tile - 1) // tile
    tiles_y = (height + tile - 1) // tile
    for ty in range(tiles_y):
        for tx in range(tiles_x):
            tid = ty * tiles_x + tx
            s = offsets[tid]
            e = offsets[tid + 1]
            y_end = min((ty + 1) * tile, height)
            x_end = min((tx + 1) * tile, width)
            for py in range(ty * tile, y_end):
                for px in range(tx * tile, x_end):
                    t_run = 1.0
                    c0 = 0.0
                    c1 = 0.0
                    c2 = 0.0
                    dep = 0.0
                    for k in range(d):
                        out_feat[py, px, k] = 0.0
                    for idx in range(s, e):
                        j = tile_splats[idx]
                        dx = centers[j, 0] - px
                        dy = centers[j, 1] - py
                        power = (
                            -0.5 * (conics[j, 0] * dx * dx + conics[j, 2] * dy * dy)
                            - conics[j, 1] * dx * dy
                        )
                        if power > 0.0:
                            continue
                        alpha = alphas[j] * np.exp(power)
                        if alpha > ALPHA_CLAMP:
                            alpha = ALPHA_CLAMP
                        if alpha < ALPHA_SKIP:
                            continue
                        w = alpha * t_run
                        c0 += w * rgbs[j, 0]
                        c1 += w * rgbs[j, 1]
                        c2 += w * rgbs[j, 2]
                        dep += w * depths[j]
                        for k in range(d):
                            out_feat[py, px, k] += w * feats[j, k]
                        t_run *= 1.0 - alpha
                        if t_run < EARLY_STOP_T:
                            break
                    out_color[py, px, 0] = c0 + t_run * bg_color[0]
                    out_color[py, px, 1] = c1 + t_run * bg_color[1]
                    out_color[py, px, 2] = c2 + t_run * bg_color[2]
                    out_depth[py, px] = dep + t_run * bg_depth
                    for k in range(d):
                        out_feat[py, px, k] += t_run * bg_feat[k]
                    out_accum[py, px] = 1.0 - t_run


@njit(cache=True)
def blend_backward(
    height,
    width,
    tile,
    offsets,
    tile_splats,
    centers,
    conics,
    depths,
    rgbs,
    alphas,
    feats,
    bg_color,
    bg_feat,
    bg_depth,
    d_color,
    d_depth,
    d_feat,
    d_accum,
    g_center,
    g_conic,
    g_alpha_base,
    g_rgb,
    g_depth,
    g_feat,
):
    """Replays the forward blend per pixel, then walks it back to front.

    Gradients accumulate into the per-splat arrays in a fixed pixel order,
    so results are deterministic.
    """
    d = feats.shape[1]
    tiles_x = (width + tile - 1) // tile
    tiles_y = (height + tile - 1) // tile
    max_len = 0
    for tid in range(offsets.shape[0] - 1):
        ln = offsets[tid + 1] - offsets[tid]
        if ln > max_len:
            max_len = ln
    idx_buf = np.empty(max_len, dtype=np.int64)
    alpha_buf = np.empty(max_len, dtype=np.float64)
    accum_f = np.empty(d, dtype=np.float64)

    for ty in range(tiles_y):
        for tx in range(tiles_x):
            tid = ty * tiles_x + tx
            s = offsets[tid]
            e = offsets[tid + 1]
            if s == e:
                continue
            y_end = min((ty + 1) * tile, height)
            x_end = min((tx + 1) * tile, width)
            for py in range(ty * tile, y_end):
                for px in range(tx * tile, x_end):
                    # pass 1: replay forward, recording contributors
                    n_contrib = 0
                    t_run = 1.0
                    for idx in range(s, e):
                        j = tile_splats[idx]
                        dx = centers[j, 0] - px
                        dy = centers[j, 1] - py
                        power = (
                            -0.5 * (conics[j, 0] * dx * dx + conics[j, 2] * dy * dy)
                            - conics[j, 1] * dx * dy
                        )
                        if power > 0.0:
                            continue
                        alpha = alphas[j] * np.exp(power)
                        if alpha > ALPHA_CLAMP:
                            alpha = ALPHA_CLAMP
                        if alpha < ALPHA_SKIP:
                            continue
                        idx_buf[n_contrib] = j
                        alpha_buf[n_contrib] = alpha
                        n_contrib += 1
                        t_run *= 1.0 - alpha
                        if t_run < EARLY_STOP_T:
                            break
                    if n_contrib == 0:
                        continue
                    t_final = t_run

                    dc0 = d_color[py, px, 0]
                    dc1 = d_color[py, px, 1]
                    dc2 = d_color[py, px, 2]
                    dd = d_depth[py, px]
                    dacc = d_accum[py, px]

                    # pass 2: back to front
                    ac0 = 0.0
                    ac1 = 0.0
                    ac2 = 0.0
                    adep = 0.0
                    for k in range(d):
                        accum_f[k] = 0.0
                    t_after = t_final
                    for ii in range(n_contrib - 1, -1, -1):
                        j = idx_buf[ii]
                        a = alpha_buf[ii]
                        t_before = t_after / (1.0 - a)
                        w = a * t_before

                        g_rgb[j, 0] += w * dc0
                        g_rgb[j, 1] += w * dc1
                        g_rgb[j, 2] += w * dc2
                        g_depth[j] += w * dd
                        for k in range(d):
                            g_feat[j, k] += w * d_feat[py, px, k]

                        inv1ma = 1.0 / (1.0 - a)
                        d_alpha = (
                            dc0 * (t_before * rgbs[j, 0] - (ac0 + t_final * bg_color[0]) * inv1ma)
                            + dc1 * (t_before * rgbs[j, 1] - (ac1 + t_final * bg_color[1]) * inv1ma)
                            + dc2 * (t_before * rgbs[j, 2] - (ac2 + t_final * bg_color[2]) * inv1ma)
                            + dd * (t_before * depths[j] - (adep + t_final * bg_depth) * inv1ma)
                        )
                        for k in range(d):
                            d_alpha += d_feat[py, px, k] * (
                                t_before * feats[j, k]
                                - (accum_f[k] + t_final * bg_feat[k]) * inv1ma
                            )
                        # accum = 1 - T_final, dT_final/da_j = -T_final/(1-a_j)
                        d_alpha += dacc * t_final * inv1ma

                        ac0 += w * rgbs[j, 0]
                        ac1 += w * rgbs[j, 1]
                        ac2 += w * rgbs[j, 2]
                        adep += w * depths[j]
                        for k in range(d):
                            accum_f[k] += w * feats[j, k]

                        # alpha = min(0.99, base * exp(power)); clamp gates grads
                        dx = centers[j, 0] - px
                        dy = centers[j, 1] - py
                        power = (
                            -0.5 * (conics[j, 0] * dx * dx + conics[j, 2] * dy * dy)
                            - conics[j, 1] * dx * dy
                        )
                        gexp = np.exp(power)
                        if alphas[j] * gexp <= ALPHA_CLAMP:
                            g_alpha_base[j] += gexp * d_alpha
                            d_power = a * d_alpha
                            g_conic[j, 0] += -0.5 * dx * dx * d_power
                            g_conic[j, 1] += -dx * dy * d_power
                            g_conic[j, 2] += -0.5 * dy * dy * d_power
                            g_center[j, 0] += -(conics[j, 0] * dx + conics[j, 1] * dy) * d_power
                            g_center[j, 1] += -(conics[j, 1] * dx + conics[j, 2] * dy) * d_power

                        t_after = t_before
