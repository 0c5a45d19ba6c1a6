"""Compiled inner loops (numba) for convolution, its gradients, and labeling.

All kernels are sequential and accumulate per output element in a fixed tap
order (ci, kz, ky, kx), so results are bit-reproducible across runs and
identical between the direct and tap-sliced convolution paths.  fastmath
stays off: no FMA contraction or reassociation, strict IEEE float32.

Axis convention: feature arrays are (batch, channel, z, y, x); weights are
(out, in, kz, ky, kx); dilation/padding arguments arrive in (z, y, x) order.
The tap at storage index k reads input coordinate  i = o + d*(K-1-k) - p.
"""

import numpy as np
from numba import njit


@njit(cache=True, fastmath=False)
def conv3d_direct(x, w, bias, dz, dy, dx, pz, py, px, out):
    """Direct nested-loop evaluation; one ordered scalar sum per output voxel."""
    B, Cin, Z, Y, X = x.shape
    Cout = w.shape[0]
    KZ, KY, KX = w.shape[2], w.shape[3], w.shape[4]
    OZ, OY, OX = out.shape[2], out.shape[3], out.shape[4]
    for b in range(B):
        for co in range(Cout):
            for z in range(OZ):
                for y in range(OY):
                    for xx in range(OX):
                        acc = bias[co]
                        for ci in range(Cin):
                            for kz in range(KZ):
                                iz = z + dz * (KZ - 1 - kz) - pz
                                if iz < 0 or iz >= Z:
                                    continue
                                for ky in range(KY):
                                    iy = y + dy * (KY - 1 - ky) - py
                                    if iy < 0 or iy >= Y:
                                        continue
                                    for kx in range(KX):
                                        ix = xx + dx * (KX - 1 - kx) - px
                                        if ix < 0 or ix >= X:
                                            continue
                                        acc += w[co, ci, kz, ky, kx] * x[b, ci, iz, iy, ix]
                        out[b, co, z, y, xx] = acc


@njit(cache=True, fastmath=False)
def conv3d_taps(x, w, bias, dz, dy, dx, pz, py, px, out):
    """Row-accumulator evaluation: per output row, taps accumulate into a
    local buffer (one store per voxel instead of one per tap).  The per-voxel
    tap order (ci, kz, ky, kx) matches conv3d_direct, so results are
    bit-identical; the contiguous inner x loop vectorizes."""
    B, Cin, Z, Y, X = x.shape
    Cout = w.shape[0]
    KZ, KY, KX = w.shape[2], w.shape[3], w.shape[4]
    OZ, OY, OX = out.shape[2], out.shape[3], out.shape[4]
    row = np.empty(OX, dtype=x.dtype)
    for b in range(B):
        for co in range(Cout):
            for z in range(OZ):
                for y in range(OY):
                    for xx in range(OX):
                        row[xx] = bias[co]
                    for ci in range(Cin):
                        for kz in range(KZ):
                            iz = z + dz * (KZ - 1 - kz) - pz
                            if iz < 0 or iz >= Z:
                                continue
                            for ky in range(KY):
                                iy = y + dy * (KY - 1 - ky) - py
                                if iy < 0 or iy >= Y:
                                    continue
                                for kx in range(KX):
                                    sx = dx * (KX - 1 - kx) - px
                                    x0 = max(0, -sx)
                                    x1 = min(OX, X - sx)
                                    wv = w[co, ci, kz, ky, kx]
                                    for xx in range(x0, x1):
                                        row[xx] += wv * x[b, ci, iz, iy, xx + sx]
                    for xx in range(OX):
                        out[b, co, z, y, xx] = row[xx]


@njit(cache=True, fastmath=False)
def conv3d_grad_input(gout, w, dz, dy, dx, pz, py, px, gin):
    """d(loss)/d(input); gin must arrive zero-filled."""
    B, Cout, OZ, OY, OX = gout.shape
    Cin = w.shape[1]
    KZ, KY, KX = w.shape[2], w.shape[3], w.shape[4]
    Z, Y, X = gin.shape[2], gin.shape[3], gin.shape[4]
    for b in range(B):
        for ci in range(Cin):
            for co in range(Cout):
                for kz in range(KZ):
                    sz = dz * (KZ - 1 - kz) - pz
                    z0 = max(0, sz)
                    z1 = min(Z, OZ + sz)
                    for ky in range(KY):
                        sy = dy * (KY - 1 - ky) - py
                        y0 = max(0, sy)
                        y1 = min(Y, OY + sy)
                        for kx in range(KX):
                            sx = dx * (KX - 1 - kx) - px
                            x0 = max(0, sx)
                            x1 = min(X, OX + sx)
                            wv = w[co, ci, kz, ky, kx]
                            for iz in range(z0, z1):
                                for iy in range(y0, y1):
                                    for ix in range(x0, x1):
                                        gin[b, ci, iz, iy, ix] += wv * gout[b, co, iz - sz, iy - sy, ix - sx]


@njit(cache=True, fastmath=False)
def conv3d_grad_params(x, gout, dz, dy, dx, pz, py, px, gw, gb):
    """d(loss)/d(weight) and d(loss)/d(bias); gw, gb must arrive zero-filled."""
    B, Cin, Z, Y, X = x.shape
    Cout, OZ, OY, OX = gout.shape[1], gout.shape[2], gout.shape[3], gout.shape[4]
    KZ, KY, KX = gw.shape[2], gw.shape[3], gw.shape[4]
    for co in range(Cout):
        acc = gb[co]
        for b in range(B):
            for z in range(OZ):
                for y in range(OY):
                    for xx in range(OX):
                        acc += gout[b, co, z, y, xx]
        gb[co] = acc
    for co in range(Cout):
        for ci in range(Cin):
            for kz in range(KZ):
                sz = dz * (KZ - 1 - kz) - pz
                z0 = max(0, -sz)
                z1 = min(OZ, Z - sz)
                for ky in range(KY):
                    sy = dy * (KY - 1 - ky) - py
                    y0 = max(0, -sy)
                    y1 = min(OY, Y - sy)
                    for kx in range(KX):
                        sx = dx * (KX - 1 - kx) - px
                        x0 = max(0, -sx)
                        x1 = min(OX, X - sx)
                        acc = gw[co, ci, kz, ky, kx]
                        for b in range(B):
                            for z in range(z0, z1):
                                for y in range(y0, y1):
                                    for xx in range(x0, x1):
                                        acc += gout[b, co, z, y, xx] * x[b, ci, z + sz, y + sy, xx + sx]
                        gw[co, ci, kz, ky, kx] = acc


@njit(cache=True, fastmath=False)
def trilinear_resample(data, rinv, off, spacing, out):
    """Axis-aligned grid resample with the pinned lerp order (x, then y,
    then z); samples outside the closed input index box are 0.  Matches the
    vectorized volume._trilinear bit for bit."""
    nx, ny, nz = data.shape
    extent = out.shape[0]
    for ox in range(extent):
        vx = ox * spacing
        for oy in range(extent):
            vy = oy * spacing
            for oz in range(extent):
                vz = oz * spacing
                cx = rinv[0, 0] * vx + rinv[0, 1] * vy + rinv[0, 2] * vz + off[0]
                cy = rinv[1, 0] * vx + rinv[1, 1] * vy + rinv[1, 2] * vz + off[1]
                cz = rinv[2, 0] * vx + rinv[2, 1] * vy + rinv[2, 2] * vz + off[2]
                if (cx < 0.0 or cx > nx - 1 or cy < 0.0 or cy > ny - 1
                        or cz < 0.0 or cz > nz - 1):
                    out[ox, oy, oz] = 0.0
                    continue
                x0 = int(np.floor(cx))
                y0 = int(np.floor(cy))
                z0 = int(np.floor(cz))
                fx = cx - x0
                fy = cy - y0
                fz = cz - z0
                x1 = min(x0 + 1, nx - 1)
                y1 = min(y0 + 1, ny - 1)
                z1 = min(z0 + 1, nz - 1)
                c000 = np.float64(data[x0, y0, z0])
                c100 = np.float64(data[x1, y0, z0])
                c010 = np.float64(data[x0, y1, z0])
                c110 = np.float64(data[x1, y1, z0])
                c001 = np.float64(data[x0, y0, z1])
                c101 = np.float64(data[x1, y0, z1])
                c011 = np.float64(data[x0, y1, z1])
                c111 = np.float64(data[x1, y1, z1])
                gx = 1.0 - fx
                cx00 = c000 * gx + c100 * fx
                cx10 = c010 * gx + c110 * fx
                cx01 = c001 * gx + c101 * fx
                cx11 = c011 * gx + c111 * fx
                gy = 1.0 - fy
                cxy0 = cx00 * gy + cx10 * fy
                cxy1 = cx01 * gy + cx11 * fy
                out[ox, oy, oz] = cxy0 * (1.0 - fz) + cxy1 * fz


@njit(cache=True, fastmath=False)
def nearest_resample(data, rinv, off, spacing, out):
    """Nearest-neighbor variant of trilinear_resample (label volumes)."""
    nx, ny, nz = data.shape
    extent = out.shape[0]
    for ox in range(extent):
        vx = ox * spacing
        for oy in range(extent):
            vy = oy * spacing
            for oz in range(extent):
                vz = oz * spacing
                cx = rinv[0, 0] * vx + rinv[0, 1] * vy + rinv[0, 2] * vz + off[0]
                cy = rinv[1, 0] * vx + rinv[1, 1] * vy + rinv[1, 2] * vz + off[1]
                cz = rinv[2, 0] * vx + rinv[2, 1] * vy + rinv[2, 2] * vz + off[2]
                if (cx < 0.0 or cx > nx - 1 or cy < 0.0 or cy > ny - 1
                        or cz < 0.0 or cz > nz - 1):
                    out[ox, oy, oz] = 0
                    continue
                xi = min(max(int(np.floor(cx + 0.5)), 0), nx - 1)
                yi = min(max(int(np.floor(cy + 0.5)), 0), ny - 1)
                zi = min(max(int(np.floor(cz + 0.5)), 0), nz - 1)
                out[ox, oy, oz] = data[xi, yi, zi]


@njit(cache=True)
def _uf_find(parent, i):
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        nxt = parent[i]
        parent[i] = root
        i = nxt
    return root


@njit(cache=True)
def cc_label_pass(fg, offsets, parent, lab):
    """First labeling pass: raster scan (x fastest), union with already-seen
    neighbors.  Returns the number of provisional labels."""
    nz, ny, nx = fg.shape
    n_off = offsets.shape[0]
    next_label = 1
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                if fg[z, y, x] == 0:
                    continue
                best = 0
                for k in range(n_off):
                    zz = z + offsets[k, 0]
                    yy = y + offsets[k, 1]
                    xx = x + offsets[k, 2]
                    if zz < 0 or yy < 0 or yy >= ny or xx < 0 or xx >= nx:
                        continue
                    l = lab[zz, yy, xx]
                    if l != 0:
                        r = _uf_find(parent, l)
                        if best == 0 or r < best:
                            best = r
                if best == 0:
                    parent[next_label] = next_label
                    lab[z, y, x] = next_label
                    next_label += 1
                else:
                    lab[z, y, x] = best
                    for k in range(n_off):
                        zz = z + offsets[k, 0]
                        yy = y + offsets[k, 1]
                        xx = x + offsets[k, 2]
                        if zz < 0 or yy < 0 or yy >= ny or xx < 0 or xx >= nx:
                            continue
                        l = lab[zz, yy, xx]
                        if l != 0:
                            r = _uf_find(parent, l)
                            parent[r] = best
    return next_label - 1


@njit(cache=True)
def cc_resolve_pass(lab, parent, remap, sizes):
    """Second pass: compress to final ids 1..count in first-encounter order
    and tally component sizes.  Returns the component count."""
    nz, ny, nx = lab.shape
    count = 0
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                l = lab[z, y, x]
                if l == 0:
                    continue
                r = _uf_find(parent, l)
                if remap[r] == 0:
                    count += 1
                    remap[r] = count
                lab[z, y, x] = remap[r]
                sizes[remap[r]] += 1
    return count
