"""Numba kernels for one MLS-MPM substep (quadratic B-splines, fixed corotated).

Status codes returned by :func:`substep_kernel`:
0 ok, 1 particle outside the grid stencil range, 2 det(F) <= 0, 3 CFL violation.

Hot loops work on 3x3 matrices held as 9-tuples (row-major) so no heap
allocation happens per particle or per node.
"""
import numba
import numpy as np

OK, OUT_OF_DOMAIN, INVERTED, CFL = 0, 1, 2, 3

POLAR_MAX_ITERS = 40
POLAR_TOL = 1e-14


@numba.njit(cache=True, inline="always")
def _det9(a, b, c, d, e, f, g, h, i):
    return a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)


@numba.njit(cache=True)
def _polar9(a, b, c, d, e, f, g, h, i):
    """Rotation factor of ``F = R S`` (det F > 0) by scaled Newton iteration."""
    for _ in range(POLAR_MAX_ITERS):
        # cofactor matrix; the inverse transpose is cof / det
        c00 = e * i - f * h
        c01 = f * g - d * i
        c02 = d * h - e * g
        c10 = c * h - b * i
        c11 = a * i - c * g
        c12 = b * g - a * h
        c20 = b * f - c * e
        c21 = c * d - a * f
        c22 = a * e - b * d
        inv_det = 1.0 / (a * c00 + b * c01 + c * c02)
        nx = a * a + b * b + c * c + d * d + e * e + f * f + g * g + h * h + i * i
        ncof = c00 * c00 + c01 * c01 + c02 * c02 + c10 * c10 + c11 * c11 + c12 * c12 + c20 * c20 + c21 * c21 + c22 * c22
        s = (ncof * inv_det * inv_det / nx) ** 0.25
        ka = 0.5 * s
        kb = 0.5 * inv_det / s
        na = ka * a + kb * c00
        nb = ka * b + kb * c01
        nc = ka * c + kb * c02
        nd = ka * d + kb * c10
        ne = ka * e + kb * c11
        nf = ka * f + kb * c12
        ng = ka * g + kb * c20
        nh = ka * h + kb * c21
        nk = ka * i + kb * c22
        diff = max(
            abs(na - a), abs(nb - b), abs(nc - c), abs(nd - d), abs(ne - e),
            abs(nf - f), abs(ng - g), abs(nh - h), abs(nk - i),
        )  # fmt: skip
        a, b, c, d, e, f, g, h, i = na, nb, nc, nd, ne, nf, ng, nh, nk
        if diff < POLAR_TOL:
            break
    return a, b, c, d, e, f, g, h, i


@numba.njit(cache=True)
def _tau9(a, b, c, d, e, f, g, h, i, mu, lam):
    """Kirchhoff stress ``2 mu (F - R) F^T + lam J (J - 1) I`` as a 9-tuple."""
    r0, r1, r2, r3, r4, r5, r6, r7, r8 = _polar9(a, b, c, d, e, f, g, h, i)
    J = _det9(a, b, c, d, e, f, g, h, i)
    m0, m1, m2 = a - r0, b - r1, c - r2
    m3, m4, m5 = d - r3, e - r4, f - r5
    m6, m7, m8 = g - r6, h - r7, i - r8
    k = 2.0 * mu
    p = lam * J * (J - 1.0)
    # (F - R) F^T: row x of (F - R) dotted with row y of F
    t00 = k * (m0 * a + m1 * b + m2 * c) + p
    t01 = k * (m0 * d + m1 * e + m2 * f)
    t02 = k * (m0 * g + m1 * h + m2 * i)
    t10 = k * (m3 * a + m4 * b + m5 * c)
    t11 = k * (m3 * d + m4 * e + m5 * f) + p
    t12 = k * (m3 * g + m4 * h + m5 * i)
    t20 = k * (m6 * a + m7 * b + m8 * c)
    t21 = k * (m6 * d + m7 * e + m8 * f)
    t22 = k * (m6 * g + m7 * h + m8 * i) + p
    return t00, t01, t02, t10, t11, t12, t20, t21, t22


@numba.njit(cache=True)
def polar_rotation(F):
    """Rotation factor of a 3x3 ``F`` with positive determinant."""
    r = _polar9(F[0, 0], F[0, 1], F[0, 2], F[1, 0], F[1, 1], F[1, 2], F[2, 0], F[2, 1], F[2, 2])
    out = np.empty((3, 3))
    for q in range(9):
        out[q // 3, q % 3] = r[q]
    return out


@numba.njit(cache=True)
def kirchhoff_stress(F, mu, lam):
    """Fixed-corotated Kirchhoff stress ``2 mu (F - R) F^T + lam J (J - 1) I``."""
    t = _tau9(F[0, 0], F[0, 1], F[0, 2], F[1, 0], F[1, 1], F[1, 2], F[2, 0], F[2, 1], F[2, 2], mu, lam)
    out = np.empty((3, 3))
    for q in range(9):
        out[q // 3, q % 3] = t[q]
    return out


@numba.njit(cache=True)
def corotated_energy_density(F, mu, lam):
    """``mu |F - R|^2 + lam/2 (J - 1)^2``."""
    R = polar_rotation(F)
    J = _det9(F[0, 0], F[0, 1], F[0, 2], F[1, 0], F[1, 1], F[1, 2], F[2, 0], F[2, 1], F[2, 2])
    D = F - R
    return mu * (D * D).sum() + 0.5 * lam * (J - 1.0) ** 2


@numba.njit(cache=True, inline="always")
def _axis(xg):
    """Stencil base, fractional offset and the three quadratic B-spline weights."""
    b = int(np.floor(xg - 0.5))
    f = xg - b
    return b, f, 0.5 * (1.5 - f) ** 2, 0.75 - (f - 1.0) ** 2, 0.5 * (f - 0.5) ** 2


@numba.njit(cache=True)
def bspline(r):
    """1D quadratic B-spline at distance ``r`` (in units of its spacing)."""
    r = abs(r)
    if r < 0.5:
        return 0.75 - r * r
    if r < 1.5:
        return 0.5 * (1.5 - r) ** 2
    return 0.0


@numba.njit(cache=True)
def _clear(grid_mass, grid_mom, touched, active, n_active):
    for q in range(n_active):
        node = active[q]
        grid_mass[node] = 0.0
        grid_mom[node, 0] = 0.0
        grid_mom[node, 1] = 0.0
        grid_mom[node, 2] = 0.0
        touched[node] = False


@numba.njit(cache=True)
def _p2g(x, v, F, C, mass, vol0, mu, lam, grid_mass, grid_mom, touched, active, n, dx, origin, dt):
    """Serial scatter (fixed accumulation order). Returns ``(n_active, bad_particle)``."""
    inv_dx = 1.0 / dx
    coeff = -dt * 4.0 * inv_dx * inv_dx
    wx = np.empty(3)
    wy = np.empty(3)
    wz = np.empty(3)
    n_active = 0
    for p in range(x.shape[0]):
        bx, fx, wx[0], wx[1], wx[2] = _axis((x[p, 0] - origin[0]) * inv_dx)
        by, fy, wy[0], wy[1], wy[2] = _axis((x[p, 1] - origin[1]) * inv_dx)
        bz, fz, wz[0], wz[1], wz[2] = _axis((x[p, 2] - origin[2]) * inv_dx)
        if bx < 0 or by < 0 or bz < 0 or bx + 2 >= n or by + 2 >= n or bz + 2 >= n:
            return n_active, p
        t = _tau9(F[p, 0, 0], F[p, 0, 1], F[p, 0, 2], F[p, 1, 0], F[p, 1, 1], F[p, 1, 2],
                  F[p, 2, 0], F[p, 2, 1], F[p, 2, 2], mu[p], lam[p])  # fmt: skip
        m = mass[p]
        s = coeff * vol0[p]
        a00 = s * t[0] + m * C[p, 0, 0]
        a01 = s * t[1] + m * C[p, 0, 1]
        a02 = s * t[2] + m * C[p, 0, 2]
        a10 = s * t[3] + m * C[p, 1, 0]
        a11 = s * t[4] + m * C[p, 1, 1]
        a12 = s * t[5] + m * C[p, 1, 2]
        a20 = s * t[6] + m * C[p, 2, 0]
        a21 = s * t[7] + m * C[p, 2, 1]
        a22 = s * t[8] + m * C[p, 2, 2]
        mv0 = m * v[p, 0]
        mv1 = m * v[p, 1]
        mv2 = m * v[p, 2]
        for i in range(3):
            d0 = (i - fx) * dx
            for j in range(3):
                d1 = (j - fy) * dx
                wij = wx[i] * wy[j]
                row = ((bx + i) * n + (by + j)) * n + bz
                for k in range(3):
                    d2 = (k - fz) * dx
                    weight = wij * wz[k]
                    node = row + k
                    if not touched[node]:
                        touched[node] = True
                        active[n_active] = node
                        n_active += 1
                    grid_mass[node] += weight * m
                    grid_mom[node, 0] += weight * (mv0 + a00 * d0 + a01 * d1 + a02 * d2)
                    grid_mom[node, 1] += weight * (mv1 + a10 * d0 + a11 * d1 + a12 * d2)
                    grid_mom[node, 2] += weight * (mv2 + a20 * d0 + a21 * d1 + a22 * d2)
    return n_active, -1


@numba.njit(cache=True)
def _apply_forces(grid_mass, grid_mom, n, dx, origin, force_points, force_impulses, force_radii):
    """Spread momentum increments over massive nodes with a B-spline matching each radius."""
    inv_dx = 1.0 / dx
    for f in range(force_points.shape[0]):
        rad = force_radii[f]
        h = rad / 1.5
        lo0 = max(0, int(np.ceil((force_points[f, 0] - origin[0] - rad) * inv_dx)))
        lo1 = max(0, int(np.ceil((force_points[f, 1] - origin[1] - rad) * inv_dx)))
        lo2 = max(0, int(np.ceil((force_points[f, 2] - origin[2] - rad) * inv_dx)))
        hi0 = min(n - 1, int(np.floor((force_points[f, 0] - origin[0] + rad) * inv_dx)))
        hi1 = min(n - 1, int(np.floor((force_points[f, 1] - origin[1] + rad) * inv_dx)))
        hi2 = min(n - 1, int(np.floor((force_points[f, 2] - origin[2] + rad) * inv_dx)))
        total = 0.0
        for pass_ in range(2):
            for i in range(lo0, hi0 + 1):
                for j in range(lo1, hi1 + 1):
                    for k in range(lo2, hi2 + 1):
                        node = (i * n + j) * n + k
                        if grid_mass[node] <= 0.0:
                            continue
                        r0 = origin[0] + i * dx - force_points[f, 0]
                        r1 = origin[1] + j * dx - force_points[f, 1]
                        r2 = origin[2] + k * dx - force_points[f, 2]
                        if r0 * r0 + r1 * r1 + r2 * r2 > rad * rad:
                            continue
                        wf = bspline(r0 / h) * bspline(r1 / h) * bspline(r2 / h)
                        if pass_ == 0:
                            total += wf
                        elif total > 0.0:
                            grid_mom[node, 0] += force_impulses[f, 0] * wf / total
                            grid_mom[node, 1] += force_impulses[f, 1] * wf / total
                            grid_mom[node, 2] += force_impulses[f, 2] * wf / total


@numba.njit(cache=True, parallel=True)
def _grid_update(grid_mass, grid_mom, active, n_active, n, dx, origin, dt, gravity,
                 bc_cells, slip, has_ground, up, ground_height, collider):  # fmt: skip
    """Momentum -> velocity with gravity and boundary conditions (stored back in ``grid_mom``)."""
    for q in numba.prange(n_active):
        node = active[q]
        m = grid_mass[node]
        if m <= 0.0:
            continue
        v0 = grid_mom[node, 0] / m + dt * gravity[0]
        v1 = grid_mom[node, 1] / m + dt * gravity[1]
        v2 = grid_mom[node, 2] / m + dt * gravity[2]
        i = node // (n * n)
        j = (node // n) % n
        k = node % n
        fixed = collider[node]
        lo = bc_cells
        hi = n - bc_cells
        if i < lo or i >= hi:
            if slip:
                v0 = 0.0
            else:
                fixed = True
        if j < lo or j >= hi:
            if slip:
                v1 = 0.0
            else:
                fixed = True
        if k < lo or k >= hi:
            if slip:
                v2 = 0.0
            else:
                fixed = True
        if has_ground:
            height = (origin[0] + i * dx) * up[0] + (origin[1] + j * dx) * up[1] + (origin[2] + k * dx) * up[2]
            if height < ground_height:
                if slip:
                    vn = v0 * up[0] + v1 * up[1] + v2 * up[2]
                    v0 -= vn * up[0]
                    v1 -= vn * up[1]
                    v2 -= vn * up[2]
                else:
                    fixed = True
        if fixed:
            v0 = 0.0
            v1 = 0.0
            v2 = 0.0
        grid_mom[node, 0] = v0
        grid_mom[node, 1] = v1
        grid_mom[node, 2] = v2


@numba.njit(cache=True, parallel=True)
def _g2p(x, v, F, C, grid_vel, n, dx, origin, dt, bad):
    inv_dx = 1.0 / dx
    c_scale = 4.0 * inv_dx * inv_dx
    for p in numba.prange(x.shape[0]):
        bx, fx, wx0, wx1, wx2 = _axis((x[p, 0] - origin[0]) * inv_dx)
        by, fy, wy0, wy1, wy2 = _axis((x[p, 1] - origin[1]) * inv_dx)
        bz, fz, wz0, wz1, wz2 = _axis((x[p, 2] - origin[2]) * inv_dx)
        nv0 = nv1 = nv2 = 0.0
        c00 = c01 = c02 = c10 = c11 = c12 = c20 = c21 = c22 = 0.0
        for i in range(3):
            wi = wx0 if i == 0 else (wx1 if i == 1 else wx2)
            d0 = (i - fx) * dx
            for j in range(3):
                wj = wy0 if j == 0 else (wy1 if j == 1 else wy2)
                d1 = (j - fy) * dx
                row = ((bx + i) * n + (by + j)) * n + bz
                for k in range(3):
                    wk = wz0 if k == 0 else (wz1 if k == 1 else wz2)
                    d2 = (k - fz) * dx
                    weight = wi * wj * wk
                    node = row + k
                    g0 = grid_vel[node, 0]
                    g1 = grid_vel[node, 1]
                    g2 = grid_vel[node, 2]
                    nv0 += weight * g0
                    nv1 += weight * g1
                    nv2 += weight * g2
                    w0 = c_scale * weight * g0
                    w1 = c_scale * weight * g1
                    w2 = c_scale * weight * g2
                    c00 += w0 * d0
                    c01 += w0 * d1
                    c02 += w0 * d2
                    c10 += w1 * d0
                    c11 += w1 * d1
                    c12 += w1 * d2
                    c20 += w2 * d0
                    c21 += w2 * d1
                    c22 += w2 * d2
        v[p, 0] = nv0
        v[p, 1] = nv1
        v[p, 2] = nv2
        x[p, 0] += dt * nv0
        x[p, 1] += dt * nv1
        x[p, 2] += dt * nv2
        C[p, 0, 0] = c00
        C[p, 0, 1] = c01
        C[p, 0, 2] = c02
        C[p, 1, 0] = c10
        C[p, 1, 1] = c11
        C[p, 1, 2] = c12
        C[p, 2, 0] = c20
        C[p, 2, 1] = c21
        C[p, 2, 2] = c22
        # F <- (I + dt C) F, one column at a time
        for col in range(3):
            f0 = F[p, 0, col]
            f1 = F[p, 1, col]
            f2 = F[p, 2, col]
            F[p, 0, col] = f0 + dt * (c00 * f0 + c01 * f1 + c02 * f2)
            F[p, 1, col] = f1 + dt * (c10 * f0 + c11 * f1 + c12 * f2)
            F[p, 2, col] = f2 + dt * (c20 * f0 + c21 * f1 + c22 * f2)
        J = _det9(F[p, 0, 0], F[p, 0, 1], F[p, 0, 2], F[p, 1, 0], F[p, 1, 1], F[p, 1, 2],
                  F[p, 2, 0], F[p, 2, 1], F[p, 2, 2])  # fmt: skip
        bad[p] = not J > 0.0


@numba.njit(cache=True)
def _damp(v, mass, obj, n_obj, damping):
    """Scale velocities relative to each object's mass-weighted mean velocity."""
    msum = np.zeros(n_obj)
    psum = np.zeros((n_obj, 3))
    for p in range(v.shape[0]):
        o = obj[p]
        msum[o] += mass[p]
        psum[o, 0] += mass[p] * v[p, 0]
        psum[o, 1] += mass[p] * v[p, 1]
        psum[o, 2] += mass[p] * v[p, 2]
    for p in range(v.shape[0]):
        o = obj[p]
        for a in range(3):
            mean = psum[o, a] / msum[o]
            v[p, a] = mean + damping * (v[p, a] - mean)


@numba.njit(cache=True)
def substep_kernel(
    x, v, F, C, mass, vol0, mu, lam, obj, n_obj, damping,
    grid_mass, grid_mom, touched, active,
    n, dx, origin, dt, gravity,
    bc_cells, slip, has_ground, up, ground_height, collider,
    force_points, force_impulses, force_radii, bad,
):  # fmt: skip
    """Advance particles by one substep in place. Returns ``(status, index)``."""
    N = x.shape[0]
    for p in range(N):
        speed = np.sqrt(v[p, 0] ** 2 + v[p, 1] ** 2 + v[p, 2] ** 2)
        if not speed * dt < dx:
            return CFL, p
    n_active, out = _p2g(x, v, F, C, mass, vol0, mu, lam, grid_mass, grid_mom, touched, active, n, dx, origin, dt)
    if out >= 0:
        _clear(grid_mass, grid_mom, touched, active, n_active)
        return OUT_OF_DOMAIN, out
    _apply_forces(grid_mass, grid_mom, n, dx, origin, force_points, force_impulses, force_radii)
    _grid_update(grid_mass, grid_mom, active, n_active, n, dx, origin, dt, gravity,
                 bc_cells, slip, has_ground, up, ground_height, collider)  # fmt: skip
    _g2p(x, v, F, C, grid_mom, n, dx, origin, dt, bad)
    _clear(grid_mass, grid_mom, touched, active, n_active)
    for p in range(N):
        if bad[p]:
            return INVERTED, p
    if damping < 1.0:
        _damp(v, mass, obj, n_obj, damping)
    return OK, -1


@numba.njit(cache=True)
def p2g_mass(x, mass, n, dx, origin):
    """Grid mass after the particle-to-grid transfer (dense ``n**3`` array)."""
    grid = np.zeros(n * n * n)
    inv_dx = 1.0 / dx
    for p in range(x.shape[0]):
        bx, fx, wx0, wx1, wx2 = _axis((x[p, 0] - origin[0]) * inv_dx)
        by, fy, wy0, wy1, wy2 = _axis((x[p, 1] - origin[1]) * inv_dx)
        bz, fz, wz0, wz1, wz2 = _axis((x[p, 2] - origin[2]) * inv_dx)
        wx = (wx0, wx1, wx2)
        wy = (wy0, wy1, wy2)
        wz = (wz0, wz1, wz2)
        for i in range(3):
            for j in range(3):
                for k in range(3):
                    node = ((bx + i) * n + (by + j)) * n + (bz + k)
                    grid[node] += wx[i] * wy[j] * wz[k] * mass[p]
    return grid


@numba.njit(cache=True)
def elastic_energy(F, vol0, mu, lam):
    total = 0.0
    for p in range(F.shape[0]):
        total += vol0[p] * corotated_energy_density(F[p], mu[p], lam[p])
    return total


@numba.njit(cache=True)
def kirchhoff_batch(F, mu, lam):
    out = np.empty_like(F)
    for p in range(F.shape[0]):
        out[p] = kirchhoff_stress(F[p], mu[p], lam[p])
    return out


@numba.njit(cache=True)
def polar_batch(F):
    out = np.empty_like(F)
    for p in range(F.shape[0]):
        out[p] = polar_rotation(F[p])
    return out
