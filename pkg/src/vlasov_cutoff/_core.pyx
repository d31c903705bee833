# distutils: language = c++
"""Compiled kernels: Plummer-softened Coulomb sums, octree build/traversal and
mollified neighbourhood sums.

Every routine has a NumPy twin in :mod:`vlasov_cutoff._fallback` with the same
signature; :mod:`vlasov_cutoff._backend` picks one at import.
"""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport sqrt, floor
from libcpp.vector cimport vector
cimport openmp

cnp.import_array()

ctypedef cnp.int64_t i64



cdef inline double _mollifier(double s) noexcept nogil:
    cdef double u
    if s <= 1.0:
        return 1.0
    if s >= 2.0:
        return 0.0
    u = s - 1.0
    return 1.0 - u * u * u * (10.0 + u * (-15.0 + 6.0 * u))


def direct_sum(const double[:, ::1] src, const double[::1] w,
               const double[:, ::1] qry, const i64[::1] self_idx,
               double soft2, bint want_pot, int threads,
               double[:, ::1] out_e, double[::1] out_phi, i64[::1] bad):
    """Accumulate the softened field (and potential) of ``src`` at ``qry``.

    Sources are visited in index order, so a prefix of the source list is
    summed exactly as it would be on its own. ``bad[q]`` receives the index of
    a source coinciding with query ``q`` when ``soft2 == 0``.
    """
    cdef Py_ssize_t n = src.shape[0], m = qry.shape[0]
    cdef Py_ssize_t q, j
    cdef double ex, ey, ez, ph, dx, dy, dz, r2, inv, rinv
    if threads < 1:
        threads = 1
    for q in prange(m, nogil=True, num_threads=threads, schedule="static"):
        ex = 0.0
        ey = 0.0
        ez = 0.0
        ph = 0.0
        for j in range(n):
            if j == self_idx[q]:
                continue
            dx = qry[q, 0] - src[j, 0]
            dy = qry[q, 1] - src[j, 1]
            dz = qry[q, 2] - src[j, 2]
            r2 = dx * dx + dy * dy + dz * dz + soft2
            if r2 == 0.0:
                bad[q] = j
                continue
            rinv = 1.0 / sqrt(r2)
            inv = w[j] * rinv * rinv * rinv
            ex = ex + inv * dx
            ey = ey + inv * dy
            ez = ez + inv * dz
            if want_pot:
                ph = ph + w[j] * rinv
        out_e[q, 0] = ex
        out_e[q, 1] = ey
        out_e[q, 2] = ez
        if want_pot:
            out_phi[q] = ph


def build_octree(const double[:, ::1] pos, int leaf_size, int max_depth):
    """Build an octree over ``pos``.

    Returns ``(center, half, pstart, pend, child_first, nchild, perm)``. Nodes
    are numbered in creation order, so every child has a larger index than its
    parent. Particles of a node occupy ``perm[pstart:pend]``.
    """
    cdef Py_ssize_t n = pos.shape[0]
    cdef vector[double] cx, cy, cz, hh
    cdef vector[i64] ps, pe, cf, nc, dep
    cdef vector[i64] stack
    cdef i64[::1] perm = np.arange(n, dtype=np.int64)
    cdef i64[::1] tmp = np.empty(n, dtype=np.int64)
    cdef i64[::1] octant = np.empty(n, dtype=np.int64)
    cdef i64 counts[8]
    cdef i64 offs[8]
    cdef double lo[3]
    cdef double hi[3]
    cdef double h, ccx, ccy, ccz, chh
    cdef i64 k, a, b, i, o, d, first
    cdef int c

    if n == 0:
        return (np.zeros((0, 3)), np.zeros(0), np.zeros(0, np.int64),
                np.zeros(0, np.int64), np.zeros(0, np.int64),
                np.zeros(0, np.int64), np.zeros(0, np.int64))
    for c in range(3):
        lo[c] = pos[0, c]
        hi[c] = pos[0, c]
    for i in range(n):
        for c in range(3):
            if pos[i, c] < lo[c]:
                lo[c] = pos[i, c]
            if pos[i, c] > hi[c]:
                hi[c] = pos[i, c]
    h = 0.0
    for c in range(3):
        if 0.5 * (hi[c] - lo[c]) > h:
            h = 0.5 * (hi[c] - lo[c])
    h = h * (1.0 + 1e-12) + 1e-12
    cx.push_back(0.5 * (lo[0] + hi[0]))
    cy.push_back(0.5 * (lo[1] + hi[1]))
    cz.push_back(0.5 * (lo[2] + hi[2]))
    hh.push_back(h)
    ps.push_back(0)
    pe.push_back(n)
    cf.push_back(-1)
    nc.push_back(0)
    dep.push_back(0)
    stack.push_back(0)

    while stack.size() > 0:
        k = stack.back()
        stack.pop_back()
        a = ps[k]
        b = pe[k]
        if b - a <= leaf_size or dep[k] >= max_depth:
            continue
        ccx = cx[k]
        ccy = cy[k]
        ccz = cz[k]
        for o in range(8):
            counts[o] = 0
        for i in range(a, b):
            o = 0
            if pos[perm[i], 0] > ccx:
                o = o | 1
            if pos[perm[i], 1] > ccy:
                o = o | 2
            if pos[perm[i], 2] > ccz:
                o = o | 4
            octant[i] = o
            counts[o] += 1
        offs[0] = a
        for o in range(1, 8):
            offs[o] = offs[o - 1] + counts[o - 1]
        for i in range(a, b):
            o = octant[i]
            tmp[offs[o]] = perm[i]
            offs[o] += 1
        for i in range(a, b):
            perm[i] = tmp[i]
        first = <i64>cx.size()
        d = a
        chh = 0.5 * hh[k]
        for o in range(8):
            if counts[o] == 0:
                continue
            cx.push_back(ccx + (chh if (o & 1) else -chh))
            cy.push_back(ccy + (chh if (o & 2) else -chh))
            cz.push_back(ccz + (chh if (o & 4) else -chh))
            hh.push_back(chh)
            ps.push_back(d)
            pe.push_back(d + counts[o])
            cf.push_back(-1)
            nc.push_back(0)
            dep.push_back(dep[k] + 1)
            d += counts[o]
        cf[k] = first
        nc[k] = <i64>cx.size() - first
        # push in reverse so children are processed in octant order
        for i in range(<i64>cx.size() - 1, first - 1, -1):
            stack.push_back(i)

    cdef Py_ssize_t K = cx.size()
    center = np.empty((K, 3))
    half = np.empty(K)
    pstart = np.empty(K, np.int64)
    pend = np.empty(K, np.int64)
    child_first = np.empty(K, np.int64)
    nchild = np.empty(K, np.int64)
    cdef double[:, ::1] cv = center
    cdef double[::1] hv = half
    cdef i64[::1] psv = pstart, pev = pend, cfv = child_first, ncv = nchild
    for i in range(K):
        cv[i, 0] = cx[i]
        cv[i, 1] = cy[i]
        cv[i, 2] = cz[i]
        hv[i] = hh[i]
        psv[i] = ps[i]
        pev[i] = pe[i]
        cfv[i] = cf[i]
        ncv[i] = nc[i]
    return center, half, pstart, pend, child_first, nchild, np.asarray(perm)


def tree_moments(const double[:, ::1] center, const i64[::1] pstart,
                 const i64[::1] pend, const i64[::1] child_first,
                 const i64[::1] nchild, const i64[::1] perm,
                 const double[:, :, ::1] pos, const double[:, ::1] w,
                 double[:, ::1] mass, double[:, :, ::1] com,
                 double[:, :, ::1] quad):
    """Monopole and quadrupole moments of every node for each leg ``l``.

    ``quad[l, k]`` holds the second moments ``sum w d d^T`` about the leg's
    centre of mass in the order ``xx, yy, zz, xy, xz, yz``.
    """
    cdef Py_ssize_t K = center.shape[0], L = pos.shape[0]
    cdef Py_ssize_t k, l, i, j, c, a
    cdef double m, sx, sy, sz, dx, dy, dz, wj
    cdef double qq[6]
    for l in range(L):
        for k in range(K - 1, -1, -1):
            m = 0.0
            sx = 0.0
            sy = 0.0
            sz = 0.0
            for a in range(6):
                qq[a] = 0.0
            if nchild[k] == 0:
                for i in range(pstart[k], pend[k]):
                    j = perm[i]
                    m += w[l, j]
                    sx += w[l, j] * pos[l, j, 0]
                    sy += w[l, j] * pos[l, j, 1]
                    sz += w[l, j] * pos[l, j, 2]
            else:
                for c in range(child_first[k], child_first[k] + nchild[k]):
                    m += mass[l, c]
                    sx += mass[l, c] * com[l, c, 0]
                    sy += mass[l, c] * com[l, c, 1]
                    sz += mass[l, c] * com[l, c, 2]
            mass[l, k] = m
            if m > 0.0:
                com[l, k, 0] = sx / m
                com[l, k, 1] = sy / m
                com[l, k, 2] = sz / m
            else:
                com[l, k, 0] = center[k, 0]
                com[l, k, 1] = center[k, 1]
                com[l, k, 2] = center[k, 2]
            if m != 0.0:
                if nchild[k] == 0:
                    for i in range(pstart[k], pend[k]):
                        j = perm[i]
                        wj = w[l, j]
                        dx = pos[l, j, 0] - com[l, k, 0]
                        dy = pos[l, j, 1] - com[l, k, 1]
                        dz = pos[l, j, 2] - com[l, k, 2]
                        qq[0] += wj * dx * dx
                        qq[1] += wj * dy * dy
                        qq[2] += wj * dz * dz
                        qq[3] += wj * dx * dy
                        qq[4] += wj * dx * dz
                        qq[5] += wj * dy * dz
                else:
                    for c in range(child_first[k], child_first[k] + nchild[k]):
                        wj = mass[l, c]
                        dx = com[l, c, 0] - com[l, k, 0]
                        dy = com[l, c, 1] - com[l, k, 1]
                        dz = com[l, c, 2] - com[l, k, 2]
                        qq[0] += quad[l, c, 0] + wj * dx * dx
                        qq[1] += quad[l, c, 1] + wj * dy * dy
                        qq[2] += quad[l, c, 2] + wj * dz * dz
                        qq[3] += quad[l, c, 3] + wj * dx * dy
                        qq[4] += quad[l, c, 4] + wj * dx * dz
                        qq[5] += quad[l, c, 5] + wj * dy * dz
            for a in range(6):
                quad[l, k, a] = qq[a]


def tree_eval(const double[:, ::1] center, const double[::1] half,
              const i64[::1] pstart, const i64[::1] pend,
              const i64[::1] child_first, const i64[::1] nchild,
              const i64[::1] perm,
              const double[:, ::1] mass, const double[:, :, ::1] com,
              const double[:, :, ::1] quad, const double[:, :, ::1] pos, const double[:, ::1] w,
              const double[:, ::1] qdec, const double[:, :, ::1] qleg,
              const i64[::1] self_idx, const i64[::1] qcount,
              double theta, double soft2, bint want_pot, int max_depth, int threads,
              double[:, :, ::1] out_e, double[:, ::1] out_phi, i64[::1] bad):
    """Barnes-Hut traversal shared by all legs.

    A node is accepted when the query lies outside it and its distance to
    the centre of mass exceeds ``side / theta + |com - centre|`` (the offset
    form of ``side / distance < theta``, which also bounds the spread of
    the sources about the centre of mass); accepted nodes contribute the
    softened monopole plus quadrupole terms (the exact second-order Taylor
    expansion of the Plummer kernel about the centre of mass). Opening
    decisions use leg 0 (``qdec`` against leg-0 centres of mass); each leg then
    sums its own multipoles and leaf particles at its own query positions
    ``qleg[l]``. Leg ``l`` is evaluated only for queries ``q < qcount[l]``
    (outputs of skipped legs are zero). With one leg this is the ordinary
    tree code.
    """
    cdef Py_ssize_t m = qdec.shape[0], L = pos.shape[0]
    cdef Py_ssize_t q, l, i, j, c, k, top
    cdef double dx, dy, dz, d2, r2, rinv, inv, mk
    cdef double r3, r5, r7, qx, qy, qz, rqr, tr
    cdef bint inside
    cdef int tid
    if threads < 1:
        threads = 1
    cdef Py_ssize_t cap = 8 * (max_depth + 2) + 8
    cdef i64[:, ::1] stacks = np.empty((threads, cap), dtype=np.int64)
    if center.shape[0] == 0:
        return
    off = np.asarray(com[0]) - np.asarray(center)
    lim = 2.0 * np.asarray(half) / theta + np.sqrt(np.einsum("ij,ij->i", off, off))
    cdef double[::1] lim2 = np.ascontiguousarray(lim * lim)
    for q in prange(m, nogil=True, num_threads=threads, schedule="dynamic"):
        tid = openmp.omp_get_thread_num()
        for l in range(L):
            out_e[l, q, 0] = 0.0
            out_e[l, q, 1] = 0.0
            out_e[l, q, 2] = 0.0
            if want_pot:
                out_phi[l, q] = 0.0
        stacks[tid, 0] = 0
        top = 1
        while top > 0:
            top = top - 1
            k = stacks[tid, top]
            dx = qdec[q, 0] - com[0, k, 0]
            dy = qdec[q, 1] - com[0, k, 1]
            dz = qdec[q, 2] - com[0, k, 2]
            d2 = dx * dx + dy * dy + dz * dz
            inside = (qdec[q, 0] - center[k, 0] <= half[k]
                      and center[k, 0] - qdec[q, 0] <= half[k]
                      and qdec[q, 1] - center[k, 1] <= half[k]
                      and center[k, 1] - qdec[q, 1] <= half[k]
                      and qdec[q, 2] - center[k, 2] <= half[k]
                      and center[k, 2] - qdec[q, 2] <= half[k])
            if (not inside) and d2 > lim2[k]:
                for l in range(L):
                    if q >= qcount[l]:
                        continue
                    mk = mass[l, k]
                    if mk == 0.0:
                        continue
                    dx = qleg[l, q, 0] - com[l, k, 0]
                    dy = qleg[l, q, 1] - com[l, k, 1]
                    dz = qleg[l, q, 2] - com[l, k, 2]
                    r2 = dx * dx + dy * dy + dz * dz + soft2
                    if r2 == 0.0:
                        bad[q] = -2
                        continue
                    rinv = 1.0 / sqrt(r2)
                    r3 = rinv * rinv * rinv
                    r5 = r3 / r2
                    r7 = r5 / r2
                    qx = quad[l, k, 0] * dx + quad[l, k, 3] * dy + quad[l, k, 4] * dz
                    qy = quad[l, k, 3] * dx + quad[l, k, 1] * dy + quad[l, k, 5] * dz
                    qz = quad[l, k, 4] * dx + quad[l, k, 5] * dy + quad[l, k, 2] * dz
                    rqr = dx * qx + dy * qy + dz * qz
                    tr = quad[l, k, 0] + quad[l, k, 1] + quad[l, k, 2]
                    inv = mk * r3 + 7.5 * rqr * r7 - 1.5 * tr * r5
                    out_e[l, q, 0] += inv * dx - 3.0 * qx * r5
                    out_e[l, q, 1] += inv * dy - 3.0 * qy * r5
                    out_e[l, q, 2] += inv * dz - 3.0 * qz * r5
                    if want_pot:
                        out_phi[l, q] += mk * rinv + 1.5 * rqr * r5 - 0.5 * tr * r3
            elif nchild[k] == 0:
                for i in range(pstart[k], pend[k]):
                    j = perm[i]
                    if j == self_idx[q]:
                        continue
                    for l in range(L):
                        if w[l, j] == 0.0 or q >= qcount[l]:
                            continue
                        dx = qleg[l, q, 0] - pos[l, j, 0]
                        dy = qleg[l, q, 1] - pos[l, j, 1]
                        dz = qleg[l, q, 2] - pos[l, j, 2]
                        r2 = dx * dx + dy * dy + dz * dz + soft2
                        if r2 == 0.0:
                            bad[q] = j
                            continue
                        rinv = 1.0 / sqrt(r2)
                        inv = w[l, j] * rinv * rinv * rinv
                        out_e[l, q, 0] += inv * dx
                        out_e[l, q, 1] += inv * dy
                        out_e[l, q, 2] += inv * dz
                        if want_pot:
                            out_phi[l, q] += w[l, j] * rinv
            else:
                for c in range(child_first[k] + nchild[k] - 1, child_first[k] - 1, -1):
                    stacks[tid, top] = c
                    top = top + 1


def mollified_sums(const double[:, ::1] pts, const double[:, ::1] vals,
                   const double[:, ::1] centers, double radius, int threads,
                   double[:, ::1] out):
    """``out[c] = sum_i phi(|pts_i - centers_c| / radius) * vals[i]``.

    Uses a uniform cell list of side ``2 * radius`` (the mollifier support).
    """
    cdef Py_ssize_t n = pts.shape[0], m = centers.shape[0], K = vals.shape[1]
    cdef Py_ssize_t c, i, j, kk, a, b
    cdef double cell = 2.0 * radius
    if n == 0:
        return
    lo = np.min(np.asarray(pts), axis=0)
    hi = np.max(np.asarray(pts), axis=0)
    dims = np.maximum(np.floor((hi - lo) / cell).astype(np.int64) + 1, 1)
    cdef i64 nx = dims[0], ny = dims[1], nz = dims[2]
    cdef double lx = lo[0], ly = lo[1], lz = lo[2]
    ijk = np.floor((np.asarray(pts) - lo) / cell).astype(np.int64)
    ijk = np.minimum(ijk, dims - 1)
    key = (ijk[:, 0] * ny + ijk[:, 1]) * nz + ijk[:, 2]
    order = np.argsort(key, kind="stable").astype(np.int64)
    counts = np.bincount(key, minlength=nx * ny * nz)
    start_np = np.zeros(nx * ny * nz + 1, dtype=np.int64)
    np.cumsum(counts, out=start_np[1:])
    cdef i64[::1] start = start_np
    cdef i64[::1] ordv = order
    cdef i64 ci, cj, ck, ii, jj, kz
    cdef double dx, dy, dz, r, ph
    if threads < 1:
        threads = 1
    for c in prange(m, nogil=True, num_threads=threads, schedule="dynamic"):
        for kk in range(K):
            out[c, kk] = 0.0
        ci = <i64>floor((centers[c, 0] - lx) / cell)
        cj = <i64>floor((centers[c, 1] - ly) / cell)
        ck = <i64>floor((centers[c, 2] - lz) / cell)
        for ii in range(ci - 1, ci + 2):
            if ii < 0 or ii >= nx:
                continue
            for jj in range(cj - 1, cj + 2):
                if jj < 0 or jj >= ny:
                    continue
                for kz in range(ck - 1, ck + 2):
                    if kz < 0 or kz >= nz:
                        continue
                    a = start[(ii * ny + jj) * nz + kz]
                    b = start[(ii * ny + jj) * nz + kz + 1]
                    for i in range(a, b):
                        j = ordv[i]
                        dx = pts[j, 0] - centers[c, 0]
                        dy = pts[j, 1] - centers[c, 1]
                        dz = pts[j, 2] - centers[c, 2]
                        r = sqrt(dx * dx + dy * dy + dz * dz)
                        ph = _mollifier(r / radius)
                        if ph == 0.0:
                            continue
                        for kk in range(K):
                            out[c, kk] += ph * vals[j, kk]
