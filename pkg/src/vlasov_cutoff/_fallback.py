"""Pure NumPy versions of the kernels in ``_core.pyx``.

Signatures and output conventions match the compiled module exactly, so the
backend switch in :mod:`vlasov_cutoff._backend` is transparent. The tree
traversal is vectorised level by level over (query, node) pairs instead of
walking one query at a time.
"""

import numpy as np

_CHUNK = 256


def _mollifier(s):
    s = np.asarray(s, dtype=float)
    u = np.clip(s - 1.0, 0.0, 1.0)
    return 1.0 - u * u * u * (10.0 + u * (-15.0 + 6.0 * u))


def direct_sum(src, w, qry, self_idx, soft2, want_pot, threads, out_e, out_phi, bad):
    n = src.shape[0]
    m = qry.shape[0]
    if n == 0:
        out_e[:] = 0.0
        if want_pot:
            out_phi[:] = 0.0
        return
    cols = np.arange(n)
    for a in range(0, m, _CHUNK):
        b = min(a + _CHUNK, m)
        d = qry[a:b, None, :] - src[None, :, :]
        r2 = np.einsum("qjc,qjc->qj", d, d) + soft2
        mask = cols[None, :] != self_idx[a:b, None]
        sing = (r2 == 0.0) & mask
        if sing.any():
            qs, js = np.nonzero(sing)
            bad[a + qs] = js
        ok = mask & ~sing
        r2 = np.where(ok, r2, 1.0)
        rinv = np.where(ok, 1.0 / np.sqrt(r2), 0.0)
        coef = w[None, :] * rinv ** 3
        out_e[a:b] = np.einsum("qj,qjc->qc", coef, d)
        if want_pot:
            out_phi[a:b] = (w[None, :] * rinv).sum(axis=1)


def build_octree(pos, leaf_size, max_depth):
    n = pos.shape[0]
    if n == 0:
        z = np.zeros(0, np.int64)
        return np.zeros((0, 3)), np.zeros(0), z, z.copy(), z.copy(), z.copy(), z.copy()
    lo = pos.min(axis=0)
    hi = pos.max(axis=0)
    h = float(np.max(0.5 * (hi - lo))) * (1.0 + 1e-12) + 1e-12
    perm = np.arange(n, dtype=np.int64)
    center = [0.5 * (lo + hi)]
    half = [h]
    ps, pe, cf, nc, dep = [0], [n], [-1], [0], [0]
    stack = [0]
    while stack:
        k = stack.pop()
        a, b = ps[k], pe[k]
        if b - a <= leaf_size or dep[k] >= max_depth:
            continue
        c = center[k]
        idx = perm[a:b]
        p = pos[idx]
        octant = ((p[:, 0] > c[0]).astype(np.int64)
                  | ((p[:, 1] > c[1]).astype(np.int64) << 1)
                  | ((p[:, 2] > c[2]).astype(np.int64) << 2))
        order = np.argsort(octant, kind="stable")
        perm[a:b] = idx[order]
        counts = np.bincount(octant, minlength=8)
        first = len(center)
        d = a
        chh = 0.5 * half[k]
        for o in range(8):
            if counts[o] == 0:
                continue
            off = np.array([chh if o & 1 else -chh, chh if o & 2 else -chh,
                            chh if o & 4 else -chh])
            center.append(c + off)
            half.append(chh)
            ps.append(d)
            pe.append(d + int(counts[o]))
            cf.append(-1)
            nc.append(0)
            dep.append(dep[k] + 1)
            d += int(counts[o])
        cf[k] = first
        nc[k] = len(center) - first
        stack.extend(range(len(center) - 1, first - 1, -1))
    return (np.array(center, dtype=float).reshape(-1, 3), np.array(half, dtype=float),
            np.array(ps, np.int64), np.array(pe, np.int64), np.array(cf, np.int64),
            np.array(nc, np.int64), perm)


def tree_moments(center, pstart, pend, child_first, nchild, perm, pos, w, mass, com, quad):
    K = center.shape[0]
    L = pos.shape[0]
    iu = np.array([0, 1, 2, 0, 0, 1])
    ju = np.array([0, 1, 2, 1, 2, 2])
    for l in range(L):
        for k in range(K - 1, -1, -1):
            if nchild[k] == 0:
                j = perm[pstart[k]:pend[k]]
                m = w[l, j].sum()
                s = (w[l, j, None] * pos[l, j]).sum(axis=0)
            else:
                c = slice(child_first[k], child_first[k] + nchild[k])
                m = mass[l, c].sum()
                s = (mass[l, c, None] * com[l, c]).sum(axis=0)
            mass[l, k] = m
            com[l, k] = s / m if m > 0.0 else center[k]
            if m == 0.0:
                quad[l, k] = 0.0
            elif nchild[k] == 0:
                d = pos[l, j] - com[l, k]
                quad[l, k] = (w[l, j, None] * d[:, iu] * d[:, ju]).sum(axis=0)
            else:
                d = com[l, c] - com[l, k]
                quad[l, k] = (quad[l, c] + mass[l, c, None] * d[:, iu] * d[:, ju]).sum(axis=0)


def tree_eval(center, half, pstart, pend, child_first, nchild, perm, mass, com,
              quad, pos, w, qdec, qleg, self_idx, qcount, theta, soft2, want_pot, max_depth,
              threads, out_e, out_phi, bad):
    L = pos.shape[0]
    m = qdec.shape[0]
    out_e[:] = 0.0
    if want_pot:
        out_phi[:] = 0.0
    if center.shape[0] == 0 or m == 0:
        return
    qi = np.arange(m, dtype=np.int64)
    nk = np.zeros(m, dtype=np.int64)
    while qi.size:
        d = qdec[qi] - com[0, nk]
        d2 = np.einsum("ij,ij->i", d, d)
        s = 2.0 * half[nk]
        inside = np.all(np.abs(qdec[qi] - center[nk]) <= half[nk, None], axis=1)
        off = com[0, nk] - center[nk]
        lim = s / theta + np.sqrt(np.einsum("ij,ij->i", off, off))
        accept = (~inside) & (d2 > lim * lim)
        leaf = (~accept) & (nchild[nk] == 0)
        split = ~(accept | leaf)
        if accept.any():
            aq_all, ak_all = qi[accept], nk[accept]
            for l in range(L):
                act = aq_all < qcount[l]
                aq, ak = aq_all[act], ak_all[act]
                mk = mass[l, ak]
                r = qleg[l, aq] - com[l, ak]
                r2 = np.einsum("ij,ij->i", r, r) + soft2
                live = mk != 0.0
                sing = live & (r2 == 0.0)
                if sing.any():
                    bad[aq[sing]] = -2
                live &= ~sing
                rinv = np.where(live, 1.0 / np.sqrt(np.where(live, r2, 1.0)), 0.0)
                r3 = rinv ** 3
                r5 = r3 * rinv * rinv
                r7 = r5 * rinv * rinv
                qd = quad[l, ak]
                qr = np.stack([qd[:, 0] * r[:, 0] + qd[:, 3] * r[:, 1] + qd[:, 4] * r[:, 2],
                               qd[:, 3] * r[:, 0] + qd[:, 1] * r[:, 1] + qd[:, 5] * r[:, 2],
                               qd[:, 4] * r[:, 0] + qd[:, 5] * r[:, 1] + qd[:, 2] * r[:, 2]],
                              axis=1)
                rqr = np.einsum("ij,ij->i", r, qr)
                tr = qd[:, 0] + qd[:, 1] + qd[:, 2]
                coef = mk * r3 + 7.5 * rqr * r7 - 1.5 * tr * r5
                np.add.at(out_e[l], aq, coef[:, None] * r - 3.0 * r5[:, None] * qr)
                if want_pot:
                    np.add.at(out_phi[l], aq, mk * rinv + 1.5 * rqr * r5 - 0.5 * tr * r3)
        if leaf.any():
            lq, lk = qi[leaf], nk[leaf]
            cnt = pend[lk] - pstart[lk]
            rq = np.repeat(lq, cnt)
            base = np.repeat(pstart[lk] - np.cumsum(cnt) + cnt, cnt)
            src = perm[np.arange(cnt.sum()) + base]
            keep = src != self_idx[rq]
            rq_all, src_all = rq[keep], src[keep]
            for l in range(L):
                act = (rq_all < qcount[l]) & (w[l, src_all] != 0.0)
                rq, src = rq_all[act], src_all[act]
                r = qleg[l, rq] - pos[l, src]
                r2 = np.einsum("ij,ij->i", r, r) + soft2
                sing = r2 == 0.0
                if sing.any():
                    bad[rq[sing]] = src[sing]
                ok = ~sing
                rinv = np.where(ok, 1.0 / np.sqrt(np.where(ok, r2, 1.0)), 0.0)
                wl = w[l, src]
                np.add.at(out_e[l], rq, (wl * rinv ** 3)[:, None] * r)
                if want_pot:
                    np.add.at(out_phi[l], rq, wl * rinv)
        sq, sk = qi[split], nk[split]
        cnt = nchild[sk]
        qi = np.repeat(sq, cnt)
        base = np.repeat(child_first[sk] - np.cumsum(cnt) + cnt, cnt)
        nk = np.arange(cnt.sum(), dtype=np.int64) + base


def mollified_sums(pts, vals, centers, radius, threads, out):
    n = pts.shape[0]
    out[:] = 0.0
    if n == 0:
        return
    for a in range(0, centers.shape[0], _CHUNK):
        b = min(a + _CHUNK, centers.shape[0])
        d = centers[a:b, None, :] - pts[None, :, :]
        r = np.sqrt(np.einsum("cjk,cjk->cj", d, d))
        out[a:b] = _mollifier(r / radius) @ vals
