# Compiled twins of the kernels in _pykernels.py. Same algorithm, same
# iteration counts; only the loops move to C.
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

cnp.import_array()

cdef enum:
    NBISECT = 60
    DYKSTRA_MAX_ITER = 200

cdef double DYKSTRA_TOL = 1e-9
cdef double MIN_STEP = 1e-16
cdef double MAX_STEP = 1e8


cdef inline double _clip01(double v) noexcept nogil:
    if v < 0.0:
        return 0.0
    if v > 1.0:
        return 1.0
    return v


def lloyd(points, centroids, Py_ssize_t max_iters, double tol):
    cdef double[:, ::1] X = np.ascontiguousarray(points, dtype=np.float64)
    C_arr = np.array(centroids, dtype=np.float64, copy=True, order="C")
    cdef double[:, ::1] C = C_arr
    cdef Py_ssize_t n = X.shape[0], k = C.shape[0], M = X.shape[1]
    labels_arr = np.zeros(n, dtype=np.int64)
    cdef cnp.int64_t[::1] labels = labels_arr
    cdef cnp.int64_t[::1] counts = np.zeros(k, dtype=np.int64)
    cdef double[::1] own = np.zeros(n, dtype=np.float64)
    new_arr = np.zeros((k, M), dtype=np.float64)
    cdef double[:, ::1] newc = new_arr
    cdef Py_ssize_t i, c, m, it, best, far, e
    cdef double d, diff, bestd, shift, s, farv
    cdef Py_ssize_t n_iter = 0
    with nogil:
        for it in range(1, max_iters + 1):
            n_iter = it
            for c in range(k):
                counts[c] = 0
            for i in range(n):
                best = 0
                bestd = 0.0
                for c in range(k):
                    d = 0.0
                    for m in range(M):
                        diff = X[i, m] - C[c, m]
                        d += diff * diff
                    if c == 0 or d < bestd:
                        bestd = d
                        best = c
                labels[i] = best
                own[i] = bestd
                counts[best] += 1
            for e in range(k):
                if counts[e] != 0:
                    continue
                far = -1
                farv = -1.0
                for i in range(n):
                    if counts[labels[i]] > 1 and own[i] > farv:
                        farv = own[i]
                        far = i
                counts[labels[far]] -= 1
                labels[far] = e
                counts[e] += 1
                own[far] = 0.0
            for c in range(k):
                for m in range(M):
                    newc[c, m] = 0.0
            for i in range(n):
                for m in range(M):
                    newc[labels[i], m] += X[i, m]
            shift = 0.0
            for c in range(k):
                s = 0.0
                for m in range(M):
                    newc[c, m] = newc[c, m] / counts[c]
                    diff = newc[c, m] - C[c, m]
                    s += diff * diff
                    C[c, m] = newc[c, m]
                s = sqrt(s)
                if s > shift:
                    shift = s
            if shift < tol:
                break
    return C_arr, labels_arr, n_iter


cdef void _proj_family(const double* z, const double* coef,
                       const Py_ssize_t* ptr, const Py_ssize_t* idx,
                       const double* rhs, Py_ssize_t ngroups, Py_ssize_t nvar,
                       double* out) noexcept nogil:
    cdef Py_ssize_t g, q, j, it
    cdef double s, hi, lo, mid, v, r
    for j in range(nvar):
        out[j] = _clip01(z[j])
    for g in range(ngroups):
        s = 0.0
        for q in range(ptr[g], ptr[g + 1]):
            j = idx[q]
            s += coef[j] * out[j]
        r = rhs[g]
        if not (s > r):
            continue
        hi = 0.0
        for q in range(ptr[g], ptr[g + 1]):
            j = idx[q]
            if coef[j] > 0.0:
                v = z[j] / coef[j]
                if v > hi:
                    hi = v
        lo = 0.0
        for it in range(NBISECT):
            mid = 0.5 * (lo + hi)
            s = 0.0
            for q in range(ptr[g], ptr[g + 1]):
                j = idx[q]
                s += coef[j] * _clip01(z[j] - mid * coef[j])
            if s > r:
                lo = mid
            else:
                hi = mid
        for q in range(ptr[g], ptr[g + 1]):
            j = idx[q]
            out[j] = _clip01(z[j] - hi * coef[j])


cdef class _Problem:
    cdef Py_ssize_t nvar, nrecv, nsend
    cdef double[::1] a, e, d0, pcost, cap, budget
    cdef Py_ssize_t[::1] recv, send
    cdef Py_ssize_t[::1] rptr, ridx, sptr, sidx
    cdef double alpha, beta_e, gamma_e, kappa, grad, d_uns, n_samp
    # scratch
    cdef double[::1] w1, w2, w3, w4, w5, D

    def __init__(self, a, e, recv, send, d0, pcost, cap, budget,
                 alpha=0.0, beta_e=0.0, gamma_e=0.0, kappa=0.0, grad=0.0,
                 d_unsampled=0.0, n_sampled=1.0):
        self.a = np.ascontiguousarray(a, dtype=np.float64)
        self.e = np.ascontiguousarray(e, dtype=np.float64)
        recv_np = np.ascontiguousarray(recv, dtype=np.intp)
        send_np = np.ascontiguousarray(send, dtype=np.intp)
        self.recv = recv_np
        self.send = send_np
        self.d0 = np.ascontiguousarray(d0, dtype=np.float64)
        self.pcost = np.ascontiguousarray(pcost, dtype=np.float64)
        self.cap = np.ascontiguousarray(cap, dtype=np.float64)
        self.budget = np.ascontiguousarray(budget, dtype=np.float64)
        self.nvar = self.a.shape[0]
        self.nrecv = self.cap.shape[0]
        self.nsend = self.budget.shape[0]
        self.alpha = alpha
        self.beta_e = beta_e
        self.gamma_e = gamma_e
        self.kappa = kappa
        self.grad = grad
        self.d_uns = d_unsampled
        self.n_samp = n_sampled
        self.ridx = np.argsort(recv_np, kind="stable").astype(np.intp)
        self.rptr = np.concatenate(
            [[0], np.cumsum(np.bincount(recv_np, minlength=self.nrecv))]).astype(np.intp)
        self.sidx = np.argsort(send_np, kind="stable").astype(np.intp)
        self.sptr = np.concatenate(
            [[0], np.cumsum(np.bincount(send_np, minlength=self.nsend))]).astype(np.intp)
        self.w1 = np.zeros(self.nvar)
        self.w2 = np.zeros(self.nvar)
        self.w3 = np.zeros(self.nvar)
        self.w4 = np.zeros(self.nvar)
        self.w5 = np.zeros(self.nvar)
        self.D = np.zeros(max(self.d0.shape[0], 1))

    cdef bint _sender_ok(self, const double* x) noexcept nogil:
        cdef Py_ssize_t g, q, j
        cdef double s
        for g in range(self.nsend):
            s = 0.0
            for q in range(self.sptr[g], self.sptr[g + 1]):
                j = self.sidx[q]
                s += self.e[j] * x[j]
            if s > self.budget[g]:
                return False
        return True

    cdef void project(self, const double* z, double* out) noexcept nogil:
        # uses w1..w5 as scratch; out must not alias them
        cdef Py_ssize_t n = self.nvar, j, it, g, q
        cdef double *x
        cdef double *p
        cdef double *qv
        cdef double *y
        cdef double *t
        cdef double m1, m2, s, f
        if n == 0:
            return
        x = &self.w1[0]
        p = &self.w2[0]
        qv = &self.w3[0]
        y = &self.w4[0]
        t = &self.w5[0]
        _proj_family(z, &self.a[0], &self.rptr[0], &self.ridx[0],
                     &self.cap[0], self.nrecv, n, out)
        if self.nsend == 0 or self._sender_ok(out):
            return
        for j in range(n):
            x[j] = z[j]
            p[j] = 0.0
            qv[j] = 0.0
        for it in range(DYKSTRA_MAX_ITER):
            for j in range(n):
                t[j] = x[j] + p[j]
            _proj_family(t, &self.a[0], &self.rptr[0], &self.ridx[0],
                         &self.cap[0], self.nrecv, n, y)
            for j in range(n):
                p[j] = x[j] + p[j] - y[j]
                t[j] = y[j] + qv[j]
            _proj_family(t, &self.e[0], &self.sptr[0], &self.sidx[0],
                         &self.budget[0], self.nsend, n, out)
            m1 = 0.0
            m2 = 0.0
            for j in range(n):
                qv[j] = y[j] + qv[j] - out[j]
                if fabs(out[j] - x[j]) > m1:
                    m1 = fabs(out[j] - x[j])
                if fabs(out[j] - y[j]) > m2:
                    m2 = fabs(out[j] - y[j])
                x[j] = out[j]
            if m1 <= DYKSTRA_TOL and m2 <= 1e-8:
                break
        _proj_family(x, &self.a[0], &self.rptr[0], &self.ridx[0],
                     &self.cap[0], self.nrecv, n, out)
        for g in range(self.nsend):
            s = 0.0
            for q in range(self.sptr[g], self.sptr[g + 1]):
                j = self.sidx[q]
                s += self.e[j] * out[j]
            if s > self.budget[g]:
                f = self.budget[g] / s if s > 0.0 else 1.0
                for q in range(self.sptr[g], self.sptr[g + 1]):
                    j = self.sidx[q]
                    out[j] = out[j] * f

    cdef double _fill_D(self, const double* x) noexcept nogil:
        cdef Py_ssize_t i, j
        cdef double tot = 0.0
        for i in range(self.d0.shape[0]):
            self.D[i] = self.d0[i]
        for j in range(self.nvar):
            self.D[self.recv[j]] += self.a[j] * x[j]
        for i in range(self.d0.shape[0]):
            tot += self.D[i]
        return tot

    cdef double objective(self, const double* x) noexcept nogil:
        cdef Py_ssize_t i, j
        cdef double dn = self._fill_D(x) + self.d_uns
        cdef double s = 0.0, ep = 0.0, et = 0.0
        for i in range(self.d0.shape[0]):
            s += 1.0 / sqrt(self.D[i])
            ep += self.pcost[i] * self.D[i]
        for j in range(self.nvar):
            et += self.e[j] * x[j]
        return (self.alpha * (self.d_uns * self.grad / dn + self.kappa / self.n_samp * s)
                + self.beta_e * ep + self.gamma_e * et)

    cdef void gradient(self, const double* x, double* g) noexcept nogil:
        cdef Py_ssize_t j, r
        cdef double dn = self._fill_D(x) + self.d_uns
        cdef double base = -self.d_uns * self.grad / (dn * dn)
        cdef double dr
        for j in range(self.nvar):
            r = self.recv[j]
            dr = self.D[r]
            g[j] = (self.a[j] * (self.alpha * (base - 0.5 * self.kappa / self.n_samp
                                               / (dr * sqrt(dr)))
                                 + self.beta_e * self.pcost[r])
                    + self.gamma_e * self.e[j])


def project(z, a, recv, cap, e, send, budget):
    prob = _Problem(a, e, recv, send, np.zeros(len(cap)), np.zeros(len(cap)), cap, budget)
    cdef double[::1] zz = np.ascontiguousarray(z, dtype=np.float64).copy()
    out = np.zeros(zz.shape[0])
    cdef double[::1] o = out
    if zz.shape[0] > 0:
        (<_Problem>prob).project(&zz[0], &o[0])
    return out


def objective(x, a, e, recv, d0, pcost, alpha, beta_e, gamma_e, kappa, grad,
              d_unsampled, n_sampled):
    prob = _Problem(a, e, recv, np.zeros(len(a), dtype=np.intp), d0, pcost,
                    np.zeros(len(d0)), np.zeros(1), alpha, beta_e, gamma_e,
                    kappa, grad, d_unsampled, n_sampled)
    cdef double[::1] xx = np.ascontiguousarray(x, dtype=np.float64)
    cdef double dummy = 0.0
    return (<_Problem>prob).objective(&xx[0] if xx.shape[0] > 0 else &dummy)


def pgd_solve(a, e, recv, send, d0, pcost, cap, budget, double alpha, double beta_e,
              double gamma_e, double kappa, double grad, double d_unsampled,
              double n_sampled, x0, Py_ssize_t max_iter, double tol,
              record_history=False):
    cdef _Problem prob = _Problem(a, e, recv, send, d0, pcost, cap, budget, alpha,
                                  beta_e, gamma_e, kappa, grad, d_unsampled, n_sampled)
    cdef Py_ssize_t n = prob.nvar, j, n_iter = 0, it
    x_arr = np.zeros(n)
    cdef double[::1] x = x_arr
    cdef double[::1] z = np.ascontiguousarray(x0, dtype=np.float64).copy()
    cdef double[::1] xn = np.zeros(n)
    cdef double[::1] g = np.zeros(n)
    cdef double[::1] tmp = np.zeros(n)
    cdef double f, fn = 0.0, step = 1.0, dd, gd, dj, change
    cdef bint accepted, rec = bool(record_history)
    history = []
    cdef double dummy = 0.0
    if n == 0:
        f = prob.objective(&dummy)
        if rec:
            history.append(f)
        return x_arr, f, 0, history
    prob.project(&z[0], &x[0])
    f = prob.objective(&x[0])
    prob.gradient(&x[0], &g[0])
    if rec:
        history.append(f)
    # first trial step moves the largest coordinate across the whole box
    dd = 0.0
    for j in range(n):
        if fabs(g[j]) > dd:
            dd = fabs(g[j])
    if dd > 0.0:
        step = 1.0 / dd
        if step > MAX_STEP:
            step = MAX_STEP
    for it in range(1, max_iter + 1):
        n_iter = it
        accepted = False
        while step > MIN_STEP:
            for j in range(n):
                tmp[j] = x[j] - step * g[j]
            prob.project(&tmp[0], &xn[0])
            dd = 0.0
            gd = 0.0
            for j in range(n):
                dj = xn[j] - x[j]
                dd += dj * dj
                gd += g[j] * dj
            if dd == 0.0:
                break
            fn = prob.objective(&xn[0])
            if fn <= f and fn <= f + gd + dd / (2.0 * step):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        change = f - fn
        for j in range(n):
            x[j] = xn[j]
        f = fn
        prob.gradient(&x[0], &g[0])
        if rec:
            history.append(f)
        if change < tol:
            break
        step = step * 2.0
        if step > MAX_STEP:
            step = MAX_STEP
    return x_arr, f, n_iter, history
