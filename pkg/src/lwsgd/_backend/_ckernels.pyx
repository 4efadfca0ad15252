# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled conv/pool kernels.

One im2col buffer per sample feeds a single BLAS GEMM, so the heavy lifting
stays inside sgemm/dgemm while the gather/scatter loops run as plain C.
All loops are sequential over samples: outputs are bit-reproducible.
"""

import numpy as np

from scipy.linalg.cython_blas cimport dgemm, sgemm

NAME = "compiled"

ctypedef fused floating:
    float
    double


cdef inline void _gemm(char ta, char tb, int m, int n, int k,
                       const floating* a, int lda, const floating* b, int ldb,
                       floating beta, floating* c, int ldc) noexcept nogil:
    cdef float onef = 1
    cdef double oned = 1
    if floating is float:
        sgemm(&ta, &tb, &m, &n, &k, &onef, <float*> a, &lda, <float*> b, &ldb,
              <float*> &beta, c, &ldc)
    else:
        dgemm(&ta, &tb, &m, &n, &k, &oned, <double*> a, &lda, <double*> b, &ldb,
              <double*> &beta, c, &ldc)


cdef void _im2col(const floating* x, floating* cols, int ci, int h, int w) noexcept nogil:
    # cols is (ci*9, h*w) row-major; tap (ky,kx) of channel c lands in row
    # c*9 + ky*3 + kx.  Padding = 1, so tap offsets are ky-1, kx-1.
    cdef int hw = h * w
    cdef int c, ky, kx, y, xq, iy, lo, hi
    cdef const floating* xc
    cdef floating* row
    for c in range(ci):
        xc = x + c * hw
        for ky in range(3):
            for kx in range(3):
                row = cols + (c * 9 + ky * 3 + kx) * hw
                lo = 1 - kx if kx < 1 else 0          # first valid xq
                hi = w if kx < 2 else w - 1           # one past last valid xq
                for y in range(h):
                    iy = y + ky - 1
                    if iy < 0 or iy >= h:
                        for xq in range(w):
                            row[y * w + xq] = 0
                        continue
                    for xq in range(lo):
                        row[y * w + xq] = 0
                    for xq in range(lo, hi):
                        row[y * w + xq] = xc[iy * w + xq + kx - 1]
                    for xq in range(hi, w):
                        row[y * w + xq] = 0


cdef void _col2im_add(const floating* cols, floating* gx, int ci, int h, int w) noexcept nogil:
    # Transpose of _im2col: scatter-add each tap row back into the image.
    cdef int hw = h * w
    cdef int c, ky, kx, y, xq, iy, lo, hi
    cdef floating* xc
    cdef const floating* row
    for c in range(ci):
        xc = gx + c * hw
        for ky in range(3):
            for kx in range(3):
                row = cols + (c * 9 + ky * 3 + kx) * hw
                lo = 1 - kx if kx < 1 else 0
                hi = w if kx < 2 else w - 1
                for y in range(h):
                    iy = y + ky - 1
                    if iy < 0 or iy >= h:
                        continue
                    for xq in range(lo, hi):
                        xc[iy * w + xq + kx - 1] += row[y * w + xq]


cdef void _conv_fwd(const floating* x, const floating* k, const floating* b,
                    floating* y, floating* cols,
                    int nb, int ci, int co, int h, int w) noexcept nogil:
    cdef int hw = h * w
    cdef int ckk = ci * 9
    cdef int n, c, i
    cdef floating zero = 0
    cdef floating* yn
    for n in range(nb):
        _im2col(x + n * ci * hw, cols, ci, h, w)
        yn = y + n * co * hw
        # row-major y_n(co,hw) = k(co,ckk) @ cols(ckk,hw); BLAS is column-major,
        # so compute y_n^T = cols^T @ k^T, which is the same buffers untransposed.
        _gemm(c'N', c'N', hw, co, ckk, cols, hw, k, ckk, zero, yn, hw)
        for c in range(co):
            for i in range(hw):
                yn[c * hw + i] += b[c]


cdef void _conv_bwd(const floating* x, const floating* k, const floating* gy,
                    floating* gx, floating* gk, floating* gb,
                    floating* cols, floating* gcols,
                    int nb, int ci, int co, int h, int w,
                    bint need_gx) noexcept nogil:
    cdef int hw = h * w
    cdef int ckk = ci * 9
    cdef int n, c, i
    cdef floating zero = 0
    cdef floating one = 1
    cdef const floating* gyn
    for n in range(nb):
        gyn = gy + n * co * hw
        _im2col(x + n * ci * hw, cols, ci, h, w)
        # gk(co,ckk) += gy_n(co,hw) @ cols^T ; column-major: gk^T += cols @ gy_n^T
        _gemm(c'T', c'N', ckk, co, hw, cols, hw, gyn, hw, one, gk, ckk)
        if need_gx:
            # gcols(ckk,hw) = k^T @ gy_n ; column-major: gcols^T = gy_n^T @ k
            _gemm(c'N', c'T', hw, ckk, co, gyn, hw, k, ckk, zero, gcols, hw)
            _col2im_add(gcols, gx + n * ci * hw, ci, h, w)
        for c in range(co):
            for i in range(hw):
                gb[c] += gyn[c * hw + i]


cdef void _pool_fwd(const floating* x, floating* y, unsigned char* idx,
                    int nbc, int h, int w) noexcept nogil:
    cdef int h2 = h // 2
    cdef int w2 = w // 2
    cdef int m, i, j, base, t
    cdef floating v, best
    cdef unsigned char arg
    for m in range(nbc):
        for i in range(h2):
            for j in range(w2):
                base = m * h * w + 2 * i * w + 2 * j
                best = x[base]
                arg = 0
                v = x[base + 1]
                if v > best:
                    best = v
                    arg = 1
                v = x[base + w]
                if v > best:
                    best = v
                    arg = 2
                v = x[base + w + 1]
                if v > best:
                    best = v
                    arg = 3
                t = m * h2 * w2 + i * w2 + j
                y[t] = best
                idx[t] = arg


cdef void _pool_bwd(const unsigned char* idx, const floating* gy, floating* gx,
                    int nbc, int h, int w) noexcept nogil:
    cdef int h2 = h // 2
    cdef int w2 = w // 2
    cdef int m, i, j, t, base
    cdef unsigned char a
    for m in range(nbc):
        for i in range(h2):
            for j in range(w2):
                t = m * h2 * w2 + i * w2 + j
                a = idx[t]
                base = m * h * w + 2 * i * w + 2 * j
                if a == 1:
                    base += 1
                elif a == 2:
                    base += w
                elif a == 3:
                    base += w + 1
                gx[base] = gy[t]


def conv2d_forward(x, kernels, bias):
    x = np.ascontiguousarray(x)
    kernels = np.ascontiguousarray(kernels)
    bias = np.ascontiguousarray(bias)
    cdef int b = x.shape[0]
    cdef int ci = x.shape[1]
    cdef int h = x.shape[2]
    cdef int w = x.shape[3]
    cdef int co = kernels.shape[0]
    y = np.empty((b, co, h, w), dtype=x.dtype)
    cols = np.empty(ci * 9 * h * w, dtype=x.dtype)
    cdef float[::1] xf, kf, bf, yf, cf
    cdef double[::1] xd, kd, bd, yd, cd
    if x.dtype == np.float32:
        xf = x.reshape(-1); kf = kernels.reshape(-1); bf = bias
        yf = y.reshape(-1); cf = cols
        with nogil:
            _conv_fwd(&xf[0], &kf[0], &bf[0], &yf[0], &cf[0], b, ci, co, h, w)
    else:
        xd = x.reshape(-1); kd = kernels.reshape(-1); bd = bias
        yd = y.reshape(-1); cd = cols
        with nogil:
            _conv_fwd(&xd[0], &kd[0], &bd[0], &yd[0], &cd[0], b, ci, co, h, w)
    return y


def conv2d_backward(x, kernels, grad_out, need_input_grad=True):
    x = np.ascontiguousarray(x)
    kernels = np.ascontiguousarray(kernels)
    grad_out = np.ascontiguousarray(grad_out)
    cdef int b = x.shape[0]
    cdef int ci = x.shape[1]
    cdef int h = x.shape[2]
    cdef int w = x.shape[3]
    cdef int co = kernels.shape[0]
    cdef bint need_gx = need_input_grad
    gx = np.zeros((b, ci, h, w), dtype=x.dtype) if need_gx else None
    gk = np.zeros_like(kernels)
    gb = np.zeros(co, dtype=x.dtype)
    cols = np.empty(ci * 9 * h * w, dtype=x.dtype)
    gcols = np.empty(ci * 9 * h * w, dtype=x.dtype) if need_gx else cols
    cdef float[::1] xf, kf, gyf, gkf, gbf, cf, gcf, gxf
    cdef double[::1] xd, kd, gyd, gkd, gbd, cd, gcd, gxd
    cdef float* gxf_p = NULL
    cdef double* gxd_p = NULL
    if x.dtype == np.float32:
        xf = x.reshape(-1); kf = kernels.reshape(-1); gyf = grad_out.reshape(-1)
        gkf = gk.reshape(-1); gbf = gb; cf = cols; gcf = gcols
        if need_gx:
            gxf = gx.reshape(-1)
            gxf_p = &gxf[0]
        with nogil:
            _conv_bwd(&xf[0], &kf[0], &gyf[0], gxf_p, &gkf[0], &gbf[0],
                      &cf[0], &gcf[0], b, ci, co, h, w, need_gx)
    else:
        xd = x.reshape(-1); kd = kernels.reshape(-1); gyd = grad_out.reshape(-1)
        gkd = gk.reshape(-1); gbd = gb; cd = cols; gcd = gcols
        if need_gx:
            gxd = gx.reshape(-1)
            gxd_p = &gxd[0]
        with nogil:
            _conv_bwd(&xd[0], &kd[0], &gyd[0], gxd_p, &gkd[0], &gbd[0],
                      &cd[0], &gcd[0], b, ci, co, h, w, need_gx)
    return gx, gk, gb


def maxpool2_forward(x):
    x = np.ascontiguousarray(x)
    cdef int b = x.shape[0]
    cdef int c = x.shape[1]
    cdef int h = x.shape[2]
    cdef int w = x.shape[3]
    y = np.empty((b, c, h // 2, w // 2), dtype=x.dtype)
    idx = np.empty((b, c, h // 2, w // 2), dtype=np.uint8)
    cdef unsigned char[::1] iv = idx.reshape(-1)
    cdef float[::1] xf, yf
    cdef double[::1] xd, yd
    if x.dtype == np.float32:
        xf = x.reshape(-1); yf = y.reshape(-1)
        with nogil:
            _pool_fwd(&xf[0], &yf[0], &iv[0], b * c, h, w)
    else:
        xd = x.reshape(-1); yd = y.reshape(-1)
        with nogil:
            _pool_fwd(&xd[0], &yd[0], &iv[0], b * c, h, w)
    return y, idx


def maxpool2_backward(idx, grad_out):
    idx = np.ascontiguousarray(idx)
    grad_out = np.ascontiguousarray(grad_out)
    cdef int b = grad_out.shape[0]
    cdef int c = grad_out.shape[1]
    cdef int h = grad_out.shape[2] * 2
    cdef int w = grad_out.shape[3] * 2
    gx = np.zeros((b, c, h, w), dtype=grad_out.dtype)
    cdef unsigned char[::1] iv = idx.reshape(-1)
    cdef float[::1] gyf, gxf
    cdef double[::1] gyd, gxd
    if grad_out.dtype == np.float32:
        gyf = grad_out.reshape(-1); gxf = gx.reshape(-1)
        with nogil:
            _pool_bwd(&iv[0], &gyf[0], &gxf[0], b * c, h, w)
    else:
        gyd = grad_out.reshape(-1); gxd = gx.reshape(-1)
        with nogil:
            _pool_bwd(&iv[0], &gyd[0], &gxd[0], b * c, h, w)
    return gx
