"""Numba kernels for interpolation, ray integration and back-projection.

Everything here works on plain arrays and scalars; the dataclass-facing
wrappers live in :mod:`cyltomo.grid` and :mod:`cyltomo.projector`.  The
cylindrical kernels operate entirely in the grid-aligned frame: callers
pre-transform the per-view source/detector basis once, so the per-sample
cost is one cylindrical transform plus one interpolation, and results do
not depend on the number of worker threads (each output element is
written by exactly one thread).

Index convention for cylindrical volumes: mu[h, theta, r] with cell
centers at h = (k+0.5)*dh - height/2, theta = (j+0.5)*dtheta,
r = (m+0.5)*dr.  Cartesian volumes: mu[z, y, x], centers at
origin + (index+0.5)*voxel_size.
"""

import math

import numba
import numpy as np
from numba import njit, prange

# The default layer probe warns about an old TBB on some systems; omp is
# always available here and is what we want for prange anyway.
if numba.config.THREADING_LAYER == "default":
    numba.config.THREADING_LAYER = "omp"

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# point interpolation
# ---------------------------------------------------------------------------

@njit(cache=True)
def _snap(f):
    """Round an index within 1e-9 of an integer onto it.

    Index recovery ((k+0.5)*d)/d can land one ulp off an integer, which
    would make sampling at exact voxel centers blend in a neighbour.
    """
    r = round(f)
    if abs(f - r) < 1e-9:
        return r
    return f

@njit(cache=True)
def interp_cyl(mu, radius, height, r, th, h, nearest):
    """Sample a cylindrical volume at grid coordinates (r, theta, h).

    Trilinear in index space; theta wraps, r and h clamp to the boundary
    rings/slices, points outside the physical support return 0.
    """
    nh, nt, nr = mu.shape
    half_h = 0.5 * height
    if r > radius or h < -half_h or h > half_h:
        return 0.0
    dr = radius / nr
    dth = TWO_PI / nt
    dh = height / nh

    fr = _snap(r / dr - 0.5)
    if fr < 0.0:
        fr = 0.0
    elif fr > nr - 1.0:
        fr = nr - 1.0
    fh = _snap((h + half_h) / dh - 0.5)
    if fh < 0.0:
        fh = 0.0
    elif fh > nh - 1.0:
        fh = nh - 1.0
    ft = _snap(th / dth - 0.5)

    if nearest:
        ir = int(round(fr))
        ih = int(round(fh))
        it = int(round(ft)) % nt
        if it < 0:
            it += nt
        return mu[ih, it, ir]

    i0 = int(math.floor(fr))
    wr = fr - i0
    i1 = i0 + 1
    if i1 > nr - 1:
        i1 = nr - 1
    k0 = int(math.floor(fh))
    wh = fh - k0
    k1 = k0 + 1
    if k1 > nh - 1:
        k1 = nh - 1
    j0 = int(math.floor(ft))
    wt = ft - j0
    j0 = j0 % nt
    if j0 < 0:
        j0 += nt
    j1 = j0 + 1
    if j1 == nt:
        j1 = 0

    c00 = mu[k0, j0, i0] * (1.0 - wr) + mu[k0, j0, i1] * wr
    c01 = mu[k0, j1, i0] * (1.0 - wr) + mu[k0, j1, i1] * wr
    c10 = mu[k1, j0, i0] * (1.0 - wr) + mu[k1, j0, i1] * wr
    c11 = mu[k1, j1, i0] * (1.0 - wr) + mu[k1, j1, i1] * wr
    c0 = c00 * (1.0 - wt) + c01 * wt
    c1 = c10 * (1.0 - wt) + c11 * wt
    return c0 * (1.0 - wh) + c1 * wh


@njit(cache=True)
def interp_cart(mu, voxel_size, ox, oy, oz, x, y, z, nearest):
    """Sample a Cartesian volume at world coordinates; outside returns 0."""
    nz, ny, nx = mu.shape
    fx = _snap((x - ox) / voxel_size - 0.5)
    fy = _snap((y - oy) / voxel_size - 0.5)
    fz = _snap((z - oz) / voxel_size - 0.5)
    if fx < -0.5 or fx > nx - 0.5 or fy < -0.5 or fy > ny - 0.5 or fz < -0.5 or fz > nz - 0.5:
        return 0.0
    if fx < 0.0:
        fx = 0.0
    elif fx > nx - 1.0:
        fx = nx - 1.0
    if fy < 0.0:
        fy = 0.0
    elif fy > ny - 1.0:
        fy = ny - 1.0
    if fz < 0.0:
        fz = 0.0
    elif fz > nz - 1.0:
        fz = nz - 1.0

    if nearest:
        return mu[int(round(fz)), int(round(fy)), int(round(fx))]

    i0 = int(math.floor(fx))
    wx = fx - i0
    i1 = min(i0 + 1, nx - 1)
    j0 = int(math.floor(fy))
    wy = fy - j0
    j1 = min(j0 + 1, ny - 1)
    k0 = int(math.floor(fz))
    wz = fz - k0
    k1 = min(k0 + 1, nz - 1)

    c00 = mu[k0, j0, i0] * (1.0 - wx) + mu[k0, j0, i1] * wx
    c01 = mu[k0, j1, i0] * (1.0 - wx) + mu[k0, j1, i1] * wx
    c10 = mu[k1, j0, i0] * (1.0 - wx) + mu[k1, j0, i1] * wx
    c11 = mu[k1, j1, i0] * (1.0 - wx) + mu[k1, j1, i1] * wx
    c0 = c00 * (1.0 - wy) + c01 * wy
    c1 = c10 * (1.0 - wy) + c11 * wy
    return c0 * (1.0 - wz) + c1 * wz


@njit(parallel=True, cache=True)
def sample_cyl_many(mu, radius, height, rs, ths, hs, nearest, out):
    for i in prange(rs.size):
        out[i] = interp_cyl(mu, radius, height, rs[i], ths[i], hs[i], nearest)


@njit(parallel=True, cache=True)
def sample_cart_many(mu, voxel_size, ox, oy, oz, xs, ys, zs, nearest, out):
    for i in prange(xs.size):
        out[i] = interp_cart(mu, voxel_size, ox, oy, oz, xs[i], ys[i], zs[i], nearest)


# ---------------------------------------------------------------------------
# ray / support intersection helpers
# ---------------------------------------------------------------------------

@njit(cache=True)
def _cylinder_interval(sx, sy, sz, dx, dy, dz, radius, half_h):
    """Parameter interval where s + t*d lies inside the finite cylinder.

    Returns (t0, t1); empty when t0 >= t1.  t is clamped to >= 0 so the
    march never steps behind the ray origin.
    """
    a = dx * dx + dy * dy
    if a < 1e-18:
        if sx * sx + sy * sy > radius * radius:
            return 0.0, -1.0
        tr0, tr1 = -1e30, 1e30
    else:
        b = sx * dx + sy * dy
        c = sx * sx + sy * sy - radius * radius
        disc = b * b - a * c
        if disc <= 0.0:
            return 0.0, -1.0
        sq = math.sqrt(disc)
        tr0 = (-b - sq) / a
        tr1 = (-b + sq) / a

    if abs(dz) < 1e-18:
        if abs(sz) > half_h:
            return 0.0, -1.0
        tz0, tz1 = -1e30, 1e30
    else:
        tz0 = (-half_h - sz) / dz
        tz1 = (half_h - sz) / dz
        if tz0 > tz1:
            tz0, tz1 = tz1, tz0

    t0 = max(tr0, tz0, 0.0)
    t1 = min(tr1, tz1)
    return t0, t1


@njit(cache=True)
def _box_interval(sx, sy, sz, dx, dy, dz, x0, y0, z0, x1, y1, z1):
    """Slab intersection of a ray with an axis-aligned box, t clamped >= 0."""
    t0 = 0.0
    t1 = 1e30
    for axis in range(3):
        if axis == 0:
            s, d, lo, hi = sx, dx, x0, x1
        elif axis == 1:
            s, d, lo, hi = sy, dy, y0, y1
        else:
            s, d, lo, hi = sz, dz, z0, z1
        if abs(d) < 1e-18:
            if s < lo or s > hi:
                return 0.0, -1.0
        else:
            ta = (lo - s) / d
            tb = (hi - s) / d
            if ta > tb:
                ta, tb = tb, ta
            if ta > t0:
                t0 = ta
            if tb < t1:
                t1 = tb
    return t0, t1


# ---------------------------------------------------------------------------
# forward projection (pixel driven, equidistant sampling)
# ---------------------------------------------------------------------------

@njit(parallel=True, cache=True)
def forward_cyl(mu, radius, height, a_src, a_origin, a_du, a_dv,
                n_rows, n_cols, step, supersample, nearest, out_p, out_w):
    """Line integrals and per-pixel sampled path lengths, aligned frame.

    a_src / a_origin / a_du / a_dv are the view's source, pixel-(0,0)
    center and per-column/row steps already mapped into the grid-aligned
    frame.  out_p gets sum(mu)*step per ray, out_w gets
    (in-support sample count)*step; both are averaged over
    supersample**2 sub-rays.
    """
    half_h = 0.5 * height
    ss = supersample
    inv_ss2 = 1.0 / (ss * ss)
    for pix in prange(n_rows * n_cols):
        row = pix // n_cols
        col = pix % n_cols
        acc = 0.0
        wacc = 0.0
        for sv in range(ss):
            off_v = (sv + 0.5) / ss - 0.5
            for su in range(ss):
                off_u = (su + 0.5) / ss - 0.5
                cu = col + off_u
                cv = row + off_v
                px = a_origin[0] + cu * a_du[0] + cv * a_dv[0]
                py = a_origin[1] + cu * a_du[1] + cv * a_dv[1]
                pz = a_origin[2] + cu * a_du[2] + cv * a_dv[2]
                dx = px - a_src[0]
                dy = py - a_src[1]
                dz = pz - a_src[2]
                norm = math.sqrt(dx * dx + dy * dy + dz * dz)
                dx /= norm
                dy /= norm
                dz /= norm
                t0, t1 = _cylinder_interval(
                    a_src[0], a_src[1], a_src[2], dx, dy, dz, radius, half_h
                )
                if t1 <= t0:
                    continue
                n = int(math.ceil((t1 - t0) / step))
                for k in range(n):
                    t = t0 + (k + 0.5) * step
                    x = a_src[0] + t * dx
                    y = a_src[1] + t * dy
                    z = a_src[2] + t * dz
                    r = math.sqrt(x * x + y * y)
                    if r > radius or z < -half_h or z > half_h:
                        continue
                    th = math.atan2(y, x)
                    if th < 0.0:
                        th += TWO_PI
                    acc += interp_cyl(mu, radius, height, r, th, z, nearest)
                    wacc += 1.0
        out_p[row, col] = acc * step * inv_ss2
        out_w[row, col] = wacc * step * inv_ss2


@njit(parallel=True, cache=True)
def forward_cart(mu, voxel_size, ox, oy, oz, src, origin, du, dv,
                 n_rows, n_cols, step, supersample, nearest, out_p, out_w):
    """Cartesian-volume counterpart of :func:`forward_cyl` (world frame)."""
    nz, ny, nx = mu.shape
    x1 = ox + nx * voxel_size
    y1 = oy + ny * voxel_size
    z1 = oz + nz * voxel_size
    ss = supersample
    inv_ss2 = 1.0 / (ss * ss)
    for pix in prange(n_rows * n_cols):
        row = pix // n_cols
        col = pix % n_cols
        acc = 0.0
        wacc = 0.0
        for sv in range(ss):
            off_v = (sv + 0.5) / ss - 0.5
            for su in range(ss):
                off_u = (su + 0.5) / ss - 0.5
                cu = col + off_u
                cv = row + off_v
                px = origin[0] + cu * du[0] + cv * dv[0]
                py = origin[1] + cu * du[1] + cv * dv[1]
                pz = origin[2] + cu * du[2] + cv * dv[2]
                dx = px - src[0]
                dy = py - src[1]
                dz = pz - src[2]
                norm = math.sqrt(dx * dx + dy * dy + dz * dz)
                dx /= norm
                dy /= norm
                dz /= norm
                t0, t1 = _box_interval(
                    src[0], src[1], src[2], dx, dy, dz, ox, oy, oz, x1, y1, z1
                )
                if t1 <= t0:
                    continue
                n = int(math.ceil((t1 - t0) / step))
                for k in range(n):
                    t = t0 + (k + 0.5) * step
                    x = src[0] + t * dx
                    y = src[1] + t * dy
                    z = src[2] + t * dz
                    if x < ox or x > x1 or y < oy or y > y1 or z < oz or z > z1:
                        continue
                    acc += interp_cart(mu, voxel_size, ox, oy, oz, x, y, z, nearest)
                    wacc += 1.0
        out_p[row, col] = acc * step * inv_ss2
        out_w[row, col] = wacc * step * inv_ss2


# ---------------------------------------------------------------------------
# back-projection (voxel driven, bilinear detector footprint)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _bilinear_gather(img, u, v):
    """Accumulate the bilinear footprint of (u, v) over in-bounds pixels.

    Returns (sum of weight*value, sum of weights); weights of the four
    neighbours sum to 1 when the footprint lies fully on the image.
    """
    n_rows, n_cols = img.shape
    iu = int(math.floor(u))
    iv = int(math.floor(v))
    fu = u - iu
    fv = v - iv
    num = 0.0
    den = 0.0
    for dv_ in range(2):
        rr = iv + dv_
        if rr < 0 or rr >= n_rows:
            continue
        wv = fv if dv_ == 1 else 1.0 - fv
        for du_ in range(2):
            cc = iu + du_
            if cc < 0 or cc >= n_cols:
                continue
            wu = fu if du_ == 1 else 1.0 - fu
            w = wu * wv
            num += w * img[rr, cc]
            den += w
    return num, den


@njit(parallel=True, cache=True)
def backproject_cyl(corr, u0, v0, pitch, sdd, sod, cphi, sphi,
                    rot, tvec, radius, height, num, den):
    """Accumulate correction-image footprints onto cylindrical voxels.

    rot/tvec map grid-aligned to world coordinates; cphi/sphi encode the
    stage rotation of the view.  num/den have the volume shape and are
    accumulated into (callers zero them for per-view results).
    """
    nh, nt, nr = num.shape
    dr = radius / nr
    dth = TWO_PI / nt
    dh = height / nh
    half_h = 0.5 * height
    depth_floor = 1e-6 * sod
    for m in prange(nh * nt * nr):
        k = m // (nt * nr)
        j = (m // nr) % nt
        ir = m % nr
        r = (ir + 0.5) * dr
        th = (j + 0.5) * dth
        h = (k + 0.5) * dh - half_h
        xo = r * math.cos(th)
        yo = r * math.sin(th)
        xw = rot[0, 0] * xo + rot[0, 1] * yo + rot[0, 2] * h + tvec[0]
        yw = rot[1, 0] * xo + rot[1, 1] * yo + rot[1, 2] * h + tvec[1]
        zw = rot[2, 0] * xo + rot[2, 1] * yo + rot[2, 2] * h + tvec[2]
        xi = cphi * xw - sphi * yw
        yi = sphi * xw + cphi * yw
        depth = sod + yi
        if depth <= depth_floor:
            continue
        scale = sdd / (depth * pitch)
        u = u0 + xi * scale
        v = v0 + zw * scale
        a, b = _bilinear_gather(corr, u, v)
        num[k, j, ir] += a
        den[k, j, ir] += b


@njit(parallel=True, cache=True)
def backproject_cart(corr, u0, v0, pitch, sdd, sod, cphi, sphi,
                     voxel_size, ox, oy, oz, num, den):
    """Cartesian-volume counterpart of :func:`backproject_cyl`."""
    nz, ny, nx = num.shape
    depth_floor = 1e-6 * sod
    for m in prange(nz * ny * nx):
        k = m // (ny * nx)
        j = (m // nx) % ny
        i = m % nx
        xw = ox + (i + 0.5) * voxel_size
        yw = oy + (j + 0.5) * voxel_size
        zw = oz + (k + 0.5) * voxel_size
        xi = cphi * xw - sphi * yw
        yi = sphi * xw + cphi * yw
        depth = sod + yi
        if depth <= depth_floor:
            continue
        scale = sdd / (depth * pitch)
        u = u0 + xi * scale
        v = v0 + zw * scale
        a, b = _bilinear_gather(corr, u, v)
        num[k, j, i] += a
        den[k, j, i] += b
