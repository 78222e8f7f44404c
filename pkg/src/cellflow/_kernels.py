"""Jitted per-node and per-element kernels.

Everything here is written as plain sequential loops compiled with
``nogil=True`` so the engine's thread pool can run disjoint blocks of the
domain concurrently while arithmetic stays identical (and therefore bitwise
reproducible) for any block layout. No kernel performs a cross-block
reduction; reductions happen in the coordinator in a fixed order.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .lattice import EX, EY, EZ, OPPOSITE, WEIGHTS

# node flags
FLUID = 0
WALL = 1
MOVING_WALL = 2
INACTIVE = 3

_EX = EX
_EY = EY
_EZ = EZ
_W = WEIGHTS
_OPP = OPPOSITE


@njit(cache=True, nogil=True)
def collide_block(f, f_out, force, flags, tau, x0, x1):
    """BGK collision with second-order forcing on x-slab [x0, x1).

    The equilibrium velocity carries the half-force shift; the source term
    carries the (1 - 1/(2 tau)) prefactor. Returns the smallest population
    written (NaN-poisoned), used by the instability monitor.
    """
    nx, ny, nz, q = f.shape
    omega = 1.0 / tau
    pref = 1.0 - 0.5 * omega
    minv = 1.0e300
    for x in range(x0, x1):
        for y in range(ny):
            for z in range(nz):
                if flags[x, y, z] != FLUID:
                    continue
                rho = 0.0
                mx = 0.0
                my = 0.0
                mz = 0.0
                for i in range(q):
                    fi = f[x, y, z, i]
                    rho += fi
                    mx += fi * _EX[i]
                    my += fi * _EY[i]
                    mz += fi * _EZ[i]
                inv_rho = 1.0 / rho
                gx = force[x, y, z, 0]
                gy = force[x, y, z, 1]
                gz = force[x, y, z, 2]
                ux = (mx + 0.5 * gx) * inv_rho
                uy = (my + 0.5 * gy) * inv_rho
                uz = (mz + 0.5 * gz) * inv_rho
                usq = ux * ux + uy * uy + uz * uz
                uf = ux * gx + uy * gy + uz * gz
                for i in range(q):
                    eu = _EX[i] * ux + _EY[i] * uy + _EZ[i] * uz
                    ef = _EX[i] * gx + _EY[i] * gy + _EZ[i] * gz
                    feq = _W[i] * rho * (1.0 + 3.0 * eu + 4.5 * eu * eu - 1.5 * usq)
                    src = pref * _W[i] * (3.0 * (ef - uf) + 9.0 * eu * ef)
                    val = f[x, y, z, i] - omega * (f[x, y, z, i] - feq) + src
                    f_out[x, y, z, i] = val
                    if not (val >= minv):
                        minv = val
    return minv


@njit(cache=True, nogil=True)
def advect_block(f_src, f_dst, x0, x1):
    """Pull-form streaming with periodic wrap on every axis.

    Non-periodic faces must be covered by solid layers (validated at setup),
    so a wrapped pull never feeds a fluid node from across a wall.
    """
    nx, ny, nz, q = f_src.shape
    for x in range(x0, x1):
        for y in range(ny):
            for z in range(nz):
                for i in range(q):
                    sx = x - _EX[i]
                    sy = y - _EY[i]
                    sz = z - _EZ[i]
                    if sx < 0:
                        sx += nx
                    elif sx >= nx:
                        sx -= nx
                    if sy < 0:
                        sy += ny
                    elif sy >= ny:
                        sy -= ny
                    if sz < 0:
                        sz += nz
                    elif sz >= nz:
                        sz -= nz
                    f_dst[x, y, z, i] = f_src[sx, sy, sz, i]


@njit(cache=True, nogil=True)
def wall_fixup_block(f, flags, wall_vel, rho0, x0, x1):
    """Half-way bounce-back applied after streaming.

    Populations that streamed into a solid node are reflected back onto the
    fluid node they came from; moving walls add the Ladd momentum term
    2 w_i rho0 (e_i . u_wall) / c_s^2. Solid node storage is then cleared.
    Each (solid node, direction) pair writes one unique fluid slot, so blocks
    never race.
    """
    nx, ny, nz, q = f.shape
    for x in range(x0, x1):
        for y in range(ny):
            for z in range(nz):
                fl = flags[x, y, z]
                if fl == FLUID:
                    continue
                if fl == WALL or fl == MOVING_WALL:
                    for i in range(1, q):
                        sx = x - _EX[i]
                        sy = y - _EY[i]
                        sz = z - _EZ[i]
                        if sx < 0:
                            sx += nx
                        elif sx >= nx:
                            sx -= nx
                        if sy < 0:
                            sy += ny
                        elif sy >= ny:
                            sy -= ny
                        if sz < 0:
                            sz += nz
                        elif sz >= nz:
                            sz -= nz
                        if flags[sx, sy, sz] != FLUID:
                            continue
                        val = f[x, y, z, i]
                        if fl == MOVING_WALL:
                            euw = (
                                _EX[i] * wall_vel[x, y, z, 0]
                                + _EY[i] * wall_vel[x, y, z, 1]
                                + _EZ[i] * wall_vel[x, y, z, 2]
                            )
                            val -= 6.0 * _W[i] * rho0 * euw
                        f[sx, sy, sz, _OPP[i]] = val
                for i in range(q):
                    f[x, y, z, i] = 0.0


@njit(cache=True, nogil=True)
def moments_block(f, force, flags, rho_out, u_out, x0, x1):
    """Density and half-force-corrected velocity; solids report rho=1, u=0."""
    nx, ny, nz, q = f.shape
    for x in range(x0, x1):
        for y in range(ny):
            for z in range(nz):
                if flags[x, y, z] != FLUID:
                    rho_out[x, y, z] = 1.0
                    u_out[x, y, z, 0] = 0.0
                    u_out[x, y, z, 1] = 0.0
                    u_out[x, y, z, 2] = 0.0
                    continue
                rho = 0.0
                mx = 0.0
                my = 0.0
                mz = 0.0
                for i in range(q):
                    fi = f[x, y, z, i]
                    rho += fi
                    mx += fi * _EX[i]
                    my += fi * _EY[i]
                    mz += fi * _EZ[i]
                inv_rho = 1.0 / rho
                rho_out[x, y, z] = rho
                u_out[x, y, z, 0] = (mx + 0.5 * force[x, y, z, 0]) * inv_rho
                u_out[x, y, z, 1] = (my + 0.5 * force[x, y, z, 1]) * inv_rho
                u_out[x, y, z, 2] = (mz + 0.5 * force[x, y, z, 2]) * inv_rho


@njit(cache=True, nogil=True)
def trilinear_gather(field, positions, out):
    """Trilinear interpolation of a 3-component node field at off-grid points.

    Positions must already be wrapped into [0, n) on each axis.
    """
    nx, ny, nz, _ = field.shape
    n = positions.shape[0]
    for k in range(n):
        px = positions[k, 0]
        py = positions[k, 1]
        pz = positions[k, 2]
        ix = int(np.floor(px))
        iy = int(np.floor(py))
        iz = int(np.floor(pz))
        fx = px - ix
        fy = py - iy
        fz = pz - iz
        ix %= nx
        iy %= ny
        iz %= nz
        jx = ix + 1
        if jx == nx:
            jx = 0
        jy = iy + 1
        if jy == ny:
            jy = 0
        jz = iz + 1
        if jz == nz:
            jz = 0
        ax = 0.0
        ay = 0.0
        az = 0.0
        for cx in range(2):
            wx = fx if cx == 1 else 1.0 - fx
            gx = jx if cx == 1 else ix
            for cy in range(2):
                wy = fy if cy == 1 else 1.0 - fy
                gy = jy if cy == 1 else iy
                for cz in range(2):
                    wz = fz if cz == 1 else 1.0 - fz
                    gz = jz if cz == 1 else iz
                    w = wx * wy * wz
                    ax += w * field[gx, gy, gz, 0]
                    ay += w * field[gx, gy, gz, 1]
                    az += w * field[gx, gy, gz, 2]
        out[k, 0] = ax
        out[k, 1] = ay
        out[k, 2] = az


@njit(cache=True, nogil=True)
def trilinear_gather_le(field, positions, delta, boost, out):
    """Shear-box gather: stencils crossing the top y seam read the image row.

    Axis 1 is the sheared axis. Positions are wrapped into [0, ny), so the
    only crossing stencil is the one whose upper corners sit at y = ny; those
    corners belong to the upper image, which is the bottom row sampled at
    x - delta with the x component raised by ``boost``.
    """
    nx, ny, nz, _ = field.shape
    n = positions.shape[0]
    for k in range(n):
        px = positions[k, 0]
        py = positions[k, 1]
        pz = positions[k, 2]
        ix = int(np.floor(px))
        iy = int(np.floor(py))
        iz = int(np.floor(pz))
        fx = px - ix
        fy = py - iy
        fz = pz - iz
        ix %= nx
        iy %= ny
        iz %= nz
        jx = ix + 1
        if jx == nx:
            jx = 0
        jy = iy + 1
        crossing = jy == ny
        if crossing:
            jy = 0
        jz = iz + 1
        if jz == nz:
            jz = 0
        ax = 0.0
        ay = 0.0
        az = 0.0
        for cy in range(2):
            wy = fy if cy == 1 else 1.0 - fy
            gy = jy if cy == 1 else iy
            if crossing and cy == 1:
                for cx in range(2):
                    wx = fx if cx == 1 else 1.0 - fx
                    gx = jx if cx == 1 else ix
                    xs = gx - delta
                    b = int(np.floor(xs))
                    f0 = xs - b
                    i0 = b % nx
                    i1 = i0 + 1
                    if i1 == nx:
                        i1 = 0
                    for cz in range(2):
                        wz = fz if cz == 1 else 1.0 - fz
                        gz = jz if cz == 1 else iz
                        w = wx * wy * wz
                        ax += w * ((1.0 - f0) * field[i0, 0, gz, 0]
                                   + f0 * field[i1, 0, gz, 0] + boost)
                        ay += w * ((1.0 - f0) * field[i0, 0, gz, 1]
                                   + f0 * field[i1, 0, gz, 1])
                        az += w * ((1.0 - f0) * field[i0, 0, gz, 2]
                                   + f0 * field[i1, 0, gz, 2])
            else:
                for cx in range(2):
                    wx = fx if cx == 1 else 1.0 - fx
                    gx = jx if cx == 1 else ix
                    for cz in range(2):
                        wz = fz if cz == 1 else 1.0 - fz
                        gz = jz if cz == 1 else iz
                        w = wx * wy * wz
                        ax += w * field[gx, gy, gz, 0]
                        ay += w * field[gx, gy, gz, 1]
                        az += w * field[gx, gy, gz, 2]
        out[k, 0] = ax
        out[k, 1] = ay
        out[k, 2] = az


@njit(cache=True, nogil=True)
def trilinear_scatter_le(field, positions, values, active, delta):
    """Shear-box scatter: weight crossing the top y seam lands shifted.

    The transpose of ``trilinear_gather_le``: a corner at y = ny deposits
    into the bottom row, linearly split between the two nodes bracketing
    x - delta. Forces carry no velocity boost. Sequential for bitwise
    reproducibility, like ``trilinear_scatter``.
    """
    nx, ny, nz, _ = field.shape
    n = positions.shape[0]
    for k in range(n):
        if not active[k]:
            continue
        px = positions[k, 0]
        py = positions[k, 1]
        pz = positions[k, 2]
        ix = int(np.floor(px))
        iy = int(np.floor(py))
        iz = int(np.floor(pz))
        fx = px - ix
        fy = py - iy
        fz = pz - iz
        ix %= nx
        iy %= ny
        iz %= nz
        jx = ix + 1
        if jx == nx:
            jx = 0
        jy = iy + 1
        crossing = jy == ny
        if crossing:
            jy = 0
        jz = iz + 1
        if jz == nz:
            jz = 0
        vx = values[k, 0]
        vy = values[k, 1]
        vz = values[k, 2]
        for cy in range(2):
            wy = fy if cy == 1 else 1.0 - fy
            gy = jy if cy == 1 else iy
            if crossing and cy == 1:
                for cx in range(2):
                    wx = fx if cx == 1 else 1.0 - fx
                    gx = jx if cx == 1 else ix
                    xs = gx - delta
                    b = int(np.floor(xs))
                    f0 = xs - b
                    i0 = b % nx
                    i1 = i0 + 1
                    if i1 == nx:
                        i1 = 0
                    for cz in range(2):
                        wz = fz if cz == 1 else 1.0 - fz
                        gz = jz if cz == 1 else iz
                        w = wx * wy * wz
                        field[i0, 0, gz, 0] += (1.0 - f0) * w * vx
                        field[i0, 0, gz, 1] += (1.0 - f0) * w * vy
                        field[i0, 0, gz, 2] += (1.0 - f0) * w * vz
                        field[i1, 0, gz, 0] += f0 * w * vx
                        field[i1, 0, gz, 1] += f0 * w * vy
                        field[i1, 0, gz, 2] += f0 * w * vz
            else:
                for cx in range(2):
                    wx = fx if cx == 1 else 1.0 - fx
                    gx = jx if cx == 1 else ix
                    for cz in range(2):
                        wz = fz if cz == 1 else 1.0 - fz
                        gz = jz if cz == 1 else iz
                        w = wx * wy * wz
                        field[gx, gy, gz, 0] += w * vx
                        field[gx, gy, gz, 1] += w * vy
                        field[gx, gy, gz, 2] += w * vz


@njit(cache=True, nogil=True)
def trilinear_scatter(field, positions, values, active):
    """Scatter-add point values into a 3-component node field (trilinear).

    Sequential by design: call order fixes the accumulation order, which is
    what makes spreading bitwise reproducible. ``active`` masks vertices out
    (used for duplicates still upstream of a coupling plane).
    """
    nx, ny, nz, _ = field.shape
    n = positions.shape[0]
    for k in range(n):
        if not active[k]:
            continue
        px = positions[k, 0]
        py = positions[k, 1]
        pz = positions[k, 2]
        ix = int(np.floor(px))
        iy = int(np.floor(py))
        iz = int(np.floor(pz))
        fx = px - ix
        fy = py - iy
        fz = pz - iz
        ix %= nx
        iy %= ny
        iz %= nz
        jx = ix + 1
        if jx == nx:
            jx = 0
        jy = iy + 1
        if jy == ny:
            jy = 0
        jz = iz + 1
        if jz == nz:
            jz = 0
        vx = values[k, 0]
        vy = values[k, 1]
        vz = values[k, 2]
        for cx in range(2):
            wx = fx if cx == 1 else 1.0 - fx
            gx = jx if cx == 1 else ix
            for cy in range(2):
                wy = fy if cy == 1 else 1.0 - fy
                gy = jy if cy == 1 else iy
                for cz in range(2):
                    wz = fz if cz == 1 else 1.0 - fz
                    gz = jz if cz == 1 else iz
                    w = wx * wy * wz
                    field[gx, gy, gz, 0] += w * vx
                    field[gx, gy, gz, 1] += w * vy
                    field[gx, gy, gz, 2] += w * vz


@njit(cache=True, nogil=True)
def link_forces_kernel(pos, edges, rest_length, kappa, tau, out):
    """Nonlinear spring force on every edge; returns first over-strained edge.

    Magnitude kappa*(s + s/(tau^2 - s^2)) with s the relative extension,
    applied along the edge axis as an equal-and-opposite pair.
    """
    ne = edges.shape[0]
    for e in range(ne):
        a = edges[e, 0]
        b = edges[e, 1]
        dx = pos[b, 0] - pos[a, 0]
        dy = pos[b, 1] - pos[a, 1]
        dz = pos[b, 2] - pos[a, 2]
        length = np.sqrt(dx * dx + dy * dy + dz * dz)
        s = (length - rest_length[e]) / rest_length[e]
        if s >= tau or s <= -tau:
            return e
        mag = kappa * (s + s / (tau * tau - s * s))
        inv = mag / length
        fx = inv * dx
        fy = inv * dy
        fz = inv * dz
        out[a, 0] += fx
        out[a, 1] += fy
        out[a, 2] += fz
        out[b, 0] -= fx
        out[b, 1] -= fy
        out[b, 2] -= fz
    return -1


@njit(cache=True, nogil=True)
def bend_forces_kernel(pos, stencils, rest_angle, kappa, tau, out):
    """Dihedral restoring force on every interior edge stencil.

    Stencil rows are (a, b, c, d): edge a-b, flap c from triangle (a,b,c),
    flap d from triangle (b,a,d). Flap forces act along the outward triangle
    normals, scaled so the edge-axis torques cancel; the edge vertices carry
    the compensating force and the torque-closing correction, making every
    stencil momentum- and torque-free to roundoff.
    """
    ns = stencils.shape[0]
    for s in range(ns):
        a = stencils[s, 0]
        b = stencils[s, 1]
        c = stencils[s, 2]
        d = stencils[s, 3]
        ex = pos[b, 0] - pos[a, 0]
        ey = pos[b, 1] - pos[a, 1]
        ez = pos[b, 2] - pos[a, 2]
        le = np.sqrt(ex * ex + ey * ey + ez * ez)
        cax = pos[c, 0] - pos[a, 0]
        cay = pos[c, 1] - pos[a, 1]
        caz = pos[c, 2] - pos[a, 2]
        # n1 = e x (c - a)
        n1x = ey * caz - ez * cay
        n1y = ez * cax - ex * caz
        n1z = ex * cay - ey * cax
        dbx = pos[d, 0] - pos[b, 0]
        dby = pos[d, 1] - pos[b, 1]
        dbz = pos[d, 2] - pos[b, 2]
        # n2 = (-e) x (d - b)
        n2x = -(ey * dbz - ez * dby)
        n2y = -(ez * dbx - ex * dbz)
        n2z = -(ex * dby - ey * dbx)
        l1 = np.sqrt(n1x * n1x + n1y * n1y + n1z * n1z)
        l2 = np.sqrt(n2x * n2x + n2y * n2y + n2z * n2z)
        u1x = n1x / l1
        u1y = n1y / l1
        u1z = n1z / l1
        u2x = n2x / l2
        u2y = n2y / l2
        u2z = n2z / l2
        cosq = u1x * u2x + u1y * u2y + u1z * u2z
        crx = u1y * u2z - u1z * u2y
        cry = u1z * u2x - u1x * u2z
        crz = u1x * u2y - u1y * u2x
        sinq = (crx * ex + cry * ey + crz * ez) / le
        theta = np.arctan2(sinq, cosq)
        dth = theta - rest_angle[s]
        if dth >= tau or dth <= -tau:
            return s
        g = kappa * (dth + dth / (tau * tau - dth * dth))
        h3 = l1 / le
        h4 = l2 / le
        s3 = 2.0 * h4 / (h3 + h4)
        s4 = 2.0 * h3 / (h3 + h4)
        f3x = g * s3 * u1x
        f3y = g * s3 * u1y
        f3z = g * s3 * u1z
        f4x = g * s4 * u2x
        f4y = g * s4 * u2y
        f4z = g * s4 * u2z
        gx = -(f3x + f4x)
        gy = -(f3y + f4y)
        gz = -(f3z + f4z)
        mx = 0.5 * (pos[a, 0] + pos[b, 0])
        my = 0.5 * (pos[a, 1] + pos[b, 1])
        mz = 0.5 * (pos[a, 2] + pos[b, 2])
        r3x = pos[c, 0] - mx
        r3y = pos[c, 1] - my
        r3z = pos[c, 2] - mz
        r4x = pos[d, 0] - mx
        r4y = pos[d, 1] - my
        r4z = pos[d, 2] - mz
        # W = -(r3 x F3 + r4 x F4)
        wx = -(r3y * f3z - r3z * f3y) - (r4y * f4z - r4z * f4y)
        wy = -(r3z * f3x - r3x * f3z) - (r4z * f4x - r4x * f4z)
        wz = -(r3x * f3y - r3y * f3x) - (r4x * f4y - r4y * f4x)
        # eps = a - b = -e; delta = (W x eps) / |eps|^2
        il2 = 1.0 / (le * le)
        dxv = (wy * (-ez) - wz * (-ey)) * il2
        dyv = (wz * (-ex) - wx * (-ez)) * il2
        dzv = (wx * (-ey) - wy * (-ex)) * il2
        out[c, 0] += f3x
        out[c, 1] += f3y
        out[c, 2] += f3z
        out[d, 0] += f4x
        out[d, 1] += f4y
        out[d, 2] += f4z
        out[a, 0] += 0.5 * gx + dxv
        out[a, 1] += 0.5 * gy + dyv
        out[a, 2] += 0.5 * gz + dzv
        out[b, 0] += 0.5 * gx - dxv
        out[b, 1] += 0.5 * gy - dyv
        out[b, 2] += 0.5 * gz - dzv
    return -1


@njit(cache=True, nogil=True)
def area_volume_kernel(pos, tris, rest_area, ka, tau_a, rest_volume, kv, out):
    """Per-triangle area restoring force plus global volume restoring force.

    Area: magnitude kappa_area*(s + s/(tau^2 - s^2))/3 per vertex, directed
    along (centroid - vertex) normalized by the mean centroid distance so the
    per-triangle net force and torque vanish identically.
    Volume: kappa_volume * dV * (A_t/A_total) along the inward normal for
    positive dV, split evenly over the triangle's vertices.
    Returns (volume, total_area, first_bad_triangle).
    """
    nt = tris.shape[0]
    areas = np.empty(nt)
    nxs = np.empty(nt)
    nys = np.empty(nt)
    nzs = np.empty(nt)
    volume = 0.0
    total_area = 0.0
    for t in range(nt):
        a = tris[t, 0]
        b = tris[t, 1]
        c = tris[t, 2]
        abx = pos[b, 0] - pos[a, 0]
        aby = pos[b, 1] - pos[a, 1]
        abz = pos[b, 2] - pos[a, 2]
        acx = pos[c, 0] - pos[a, 0]
        acy = pos[c, 1] - pos[a, 1]
        acz = pos[c, 2] - pos[a, 2]
        cx = aby * acz - abz * acy
        cy = abz * acx - abx * acz
        cz = abx * acy - aby * acx
        dbl = np.sqrt(cx * cx + cy * cy + cz * cz)
        areas[t] = 0.5 * dbl
        nxs[t] = cx / dbl
        nys[t] = cy / dbl
        nzs[t] = cz / dbl
        total_area += areas[t]
        volume += (
            pos[a, 0] * (pos[b, 1] * pos[c, 2] - pos[b, 2] * pos[c, 1])
            + pos[a, 1] * (pos[b, 2] * pos[c, 0] - pos[b, 0] * pos[c, 2])
            + pos[a, 2] * (pos[b, 0] * pos[c, 1] - pos[b, 1] * pos[c, 0])
        ) / 6.0
    dv = (volume - rest_volume) / rest_volume
    bad = -1
    for t in range(nt):
        a = tris[t, 0]
        b = tris[t, 1]
        c = tris[t, 2]
        s = (areas[t] - rest_area[t]) / rest_area[t]
        if s >= tau_a or s <= -tau_a:
            bad = t
            break
        mag = ka * (s + s / (tau_a * tau_a - s * s)) / 3.0
        gx = (pos[a, 0] + pos[b, 0] + pos[c, 0]) / 3.0
        gy = (pos[a, 1] + pos[b, 1] + pos[c, 1]) / 3.0
        gz = (pos[a, 2] + pos[b, 2] + pos[c, 2]) / 3.0
        dax = gx - pos[a, 0]
        day = gy - pos[a, 1]
        daz = gz - pos[a, 2]
        dbx = gx - pos[b, 0]
        dby = gy - pos[b, 1]
        dbz = gz - pos[b, 2]
        dcx = gx - pos[c, 0]
        dcy = gy - pos[c, 1]
        dcz = gz - pos[c, 2]
        la = np.sqrt(dax * dax + day * day + daz * daz)
        lb = np.sqrt(dbx * dbx + dby * dby + dbz * dbz)
        lc = np.sqrt(dcx * dcx + dcy * dcy + dcz * dcz)
        lbar = (la + lb + lc) / 3.0
        w = mag / lbar
        fvol = -kv * dv * (areas[t] / total_area) / 3.0
        fvx = fvol * nxs[t]
        fvy = fvol * nys[t]
        fvz = fvol * nzs[t]
        out[a, 0] += w * dax + fvx
        out[a, 1] += w * day + fvy
        out[a, 2] += w * daz + fvz
        out[b, 0] += w * dbx + fvx
        out[b, 1] += w * dby + fvy
        out[b, 2] += w * dbz + fvz
        out[c, 0] += w * dcx + fvx
        out[c, 1] += w * dcy + fvy
        out[c, 2] += w * dcz + fvz
    return volume, total_area, bad


@njit(cache=True, nogil=True)
def mesh_geometry_kernel(pos, tris):
    """Signed volume (divergence theorem) and total area of a closed mesh."""
    nt = tris.shape[0]
    volume = 0.0
    area = 0.0
    for t in range(nt):
        a = tris[t, 0]
        b = tris[t, 1]
        c = tris[t, 2]
        abx = pos[b, 0] - pos[a, 0]
        aby = pos[b, 1] - pos[a, 1]
        abz = pos[b, 2] - pos[a, 2]
        acx = pos[c, 0] - pos[a, 0]
        acy = pos[c, 1] - pos[a, 1]
        acz = pos[c, 2] - pos[a, 2]
        cx = aby * acz - abz * acy
        cy = abz * acx - abx * acz
        cz = abx * acy - aby * acx
        area += 0.5 * np.sqrt(cx * cx + cy * cy + cz * cz)
        volume += (
            pos[a, 0] * (pos[b, 1] * pos[c, 2] - pos[b, 2] * pos[c, 1])
            + pos[a, 1] * (pos[b, 2] * pos[c, 0] - pos[b, 0] * pos[c, 2])
            + pos[a, 2] * (pos[b, 0] * pos[c, 1] - pos[b, 1] * pos[c, 0])
        ) / 6.0
    return volume, area


@njit(cache=True, nogil=True)
def repulsion_kernel(
    pos,
    cell_id,
    order,
    bin_start,
    bin_count,
    bin_of,
    nbx,
    nby,
    nbz,
    box,
    le_shift,
    cutoff,
    strength,
    out,
):
    """Short-range inter-cell vertex repulsion, linear in penetration.

    ``order`` lists vertex indices sorted by bin; ``bin_start``/``bin_count``
    index into it. Pairs are visited in a fixed order (sorted indices, lower
    first), so accumulation is deterministic. ``le_shift`` is the tangential
    image offset of the sheared pair of faces (0 when unused); the shear
    normal is axis 1 and the shift axis is axis 0.
    """
    n = pos.shape[0]
    lx = box[0]
    ly = box[1]
    lz = box[2]
    for oi in range(n):
        k = order[oi]
        bx = bin_of[k, 0]
        by = bin_of[k, 1]
        bz = bin_of[k, 2]
        for dx in range(-1, 2):
            cbx = (bx + dx) % nbx
            for dy in range(-1, 2):
                cby = (by + dy) % nby
                for dz in range(-1, 2):
                    cbz = (bz + dz) % nbz
                    b = (cbx * nby + cby) * nbz + cbz
                    start = bin_start[b]
                    for jj in range(bin_count[b]):
                        oj = start + jj
                        if oj <= oi:
                            continue
                        j = order[oj]
                        if cell_id[j] == cell_id[k]:
                            continue
                        ddx = pos[j, 0] - pos[k, 0]
                        ddy = pos[j, 1] - pos[k, 1]
                        ddz = pos[j, 2] - pos[k, 2]
                        if ddy > 0.5 * ly:
                            ddy -= ly
                            ddx -= le_shift
                        elif ddy < -0.5 * ly:
                            ddy += ly
                            ddx += le_shift
                        if ddx > 0.5 * lx:
                            ddx -= lx
                        elif ddx < -0.5 * lx:
                            ddx += lx
                        if ddz > 0.5 * lz:
                            ddz -= lz
                        elif ddz < -0.5 * lz:
                            ddz += lz
                        d2 = ddx * ddx + ddy * ddy + ddz * ddz
                        if d2 >= cutoff * cutoff or d2 == 0.0:
                            continue
                        d = np.sqrt(d2)
                        mag = strength * (1.0 - d / cutoff) / d
                        fx = mag * ddx
                        fy = mag * ddy
                        fz = mag * ddz
                        out[k, 0] -= fx
                        out[k, 1] -= fy
                        out[k, 2] -= fz
                        out[j, 0] += fx
                        out[j, 1] += fy
                        out[j, 2] += fz


@njit(cache=True, nogil=True)
def ellipsoid_overlap_fraction(points, rel_center, rot, semi_axes):
    """Fraction of unit-ball sample points (pre-scaled) inside another ellipsoid.

    ``points`` are sample points in the first ellipsoid's world frame relative
    to its own center; ``rel_center`` is other.center - self.center; ``rot``
    maps world vectors into the other ellipsoid's body frame (rows are body
    axes); ``semi_axes`` are the other's semi-axes.
    """
    n = points.shape[0]
    inside = 0
    ia = 1.0 / semi_axes[0]
    ib = 1.0 / semi_axes[1]
    ic = 1.0 / semi_axes[2]
    for k in range(n):
        wx = points[k, 0] - rel_center[0]
        wy = points[k, 1] - rel_center[1]
        wz = points[k, 2] - rel_center[2]
        bx = (rot[0, 0] * wx + rot[0, 1] * wy + rot[0, 2] * wz) * ia
        by = (rot[1, 0] * wx + rot[1, 1] * wy + rot[1, 2] * wz) * ib
        bz = (rot[2, 0] * wx + rot[2, 1] * wy + rot[2, 2] * wz) * ic
        if bx * bx + by * by + bz * bz <= 1.0:
            inside += 1
    return inside / n


@njit(cache=True, nogil=True)
def packing_sweep(centers, rots, axes, vols, radii, clouds, n_points,
                  bounds, periodic, disp, want_disp, floor_scale):
    """Pairwise overlap sweep over all surrogate ellipsoids.

    For every pair whose bounding spheres meet (minimum image on periodic
    axes), counts the pre-rotated sample points of the smaller body that
    fall inside the larger and accumulates equal-and-opposite displacements
    proportional to the sampled overlap volume. ``floor_scale`` > 0 keeps
    each push at least that multiple of the sample spacing, so terminal
    slivers thinner than one sample quantum still separate decisively.
    Returns (total, worst) overlap volume; fills ``disp`` when
    ``want_disp``.
    """
    n = centers.shape[0]
    total = 0.0
    worst = 0.0
    if want_disp:
        for i in range(n):
            disp[i, 0] = 0.0
            disp[i, 1] = 0.0
            disp[i, 2] = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            rx = centers[j, 0] - centers[i, 0]
            ry = centers[j, 1] - centers[i, 1]
            rz = centers[j, 2] - centers[i, 2]
            if periodic[0]:
                rx -= bounds[0] * np.round(rx / bounds[0])
            if periodic[1]:
                ry -= bounds[1] * np.round(ry / bounds[1])
            if periodic[2]:
                rz -= bounds[2] * np.round(rz / bounds[2])
            d2 = rx * rx + ry * ry + rz * rz
            rsum = radii[i] + radii[j]
            if d2 >= rsum * rsum:
                continue
            if vols[j] < vols[i]:
                a, b = j, i
                tx0, ty0, tz0 = -rx, -ry, -rz
            else:
                a, b = i, j
                tx0, ty0, tz0 = rx, ry, rz
            ia = 1.0 / axes[b, 0]
            ib = 1.0 / axes[b, 1]
            ic = 1.0 / axes[b, 2]
            inside = 0
            for k in range(n_points):
                wx = clouds[a, k, 0] - tx0
                wy = clouds[a, k, 1] - ty0
                wz = clouds[a, k, 2] - tz0
                bx = (rots[b, 0, 0] * wx + rots[b, 1, 0] * wy
                      + rots[b, 2, 0] * wz) * ia
                by = (rots[b, 0, 1] * wx + rots[b, 1, 1] * wy
                      + rots[b, 2, 1] * wz) * ib
                bz = (rots[b, 0, 2] * wx + rots[b, 1, 2] * wy
                      + rots[b, 2, 2] * wz) * ic
                if bx * bx + by * by + bz * bz <= 1.0:
                    inside += 1
            if inside == 0:
                continue
            p = inside / n_points * vols[a]
            total += p
            if p > worst:
                worst = p
            if want_disp:
                magnitude = p
                if floor_scale > 0.0:
                    floor = floor_scale * (vols[a] / n_points) ** (1.0 / 3.0)
                    if magnitude < floor:
                        magnitude = floor
                dist = np.sqrt(d2)
                if dist < 1e-9:
                    # deterministic pair-seeded jitter direction
                    s = np.uint64(1000003 * i + j + 12345)
                    s = (s * np.uint64(6364136223846793005)
                         + np.uint64(1442695040888963407))
                    rx = ((s >> np.uint64(33)) % np.uint64(2001)) / 1000.0 - 1.0
                    s = (s * np.uint64(6364136223846793005)
                         + np.uint64(1442695040888963407))
                    ry = ((s >> np.uint64(33)) % np.uint64(2001)) / 1000.0 - 1.0
                    s = (s * np.uint64(6364136223846793005)
                         + np.uint64(1442695040888963407))
                    rz = ((s >> np.uint64(33)) % np.uint64(2001)) / 1000.0 - 1.0
                    dist = np.sqrt(rx * rx + ry * ry + rz * rz)
                    if dist < 1e-9:
                        rx, ry, rz = 1.0, 0.0, 0.0
                        dist = 1.0
                ux = rx / dist
                uy = ry / dist
                uz = rz / dist
                disp[i, 0] -= magnitude * ux
                disp[i, 1] -= magnitude * uy
                disp[i, 2] -= magnitude * uz
                disp[j, 0] += magnitude * ux
                disp[j, 1] += magnitude * uy
                disp[j, 2] += magnitude * uz
    return total, worst
