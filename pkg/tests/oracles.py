"""Independent reference implementations used as test oracles.

Everything here recomputes results from the written formulas using loops or
scipy.signal, never through the library's own fast paths.  Oracles for the
deeper context modules cast stage outputs to float32 to mirror the library's
storage precision while keeping the arithmetic route independent.
"""

import numpy as np
from scipy import signal, special


def conv2d_loops(x, w, b, stride=1, pad=0, groups=1):
    """Naive per-position convolution oracle (float64, explicit loops)."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    b_arr = np.asarray(b, dtype=np.float64)
    bn, c_in, h, ww = x.shape
    c_out, cpg, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (ww + 2 * pad - kw) // stride + 1
    out = np.zeros((bn, c_out, oh, ow))
    in_per_group = c_in // groups
    out_per_group = c_out // groups
    for bi in range(bn):
        for oc in range(c_out):
            g = oc // out_per_group
            for oy in range(oh):
                for ox in range(ow):
                    acc = 0.0
                    for ic in range(in_per_group):
                        for ky in range(kh):
                            for kx in range(kw):
                                acc += (
                                    xp[bi, g * in_per_group + ic, oy * stride + ky, ox * stride + kx]
                                    * w[oc, ic, ky, kx]
                                )
                    out[bi, oc, oy, ox] = acc + b_arr[oc]
    return out


def conv2d_transposed_loops(x, w, b, stride, pad):
    """Scatter-based transposed convolution oracle (implicit output pad stride-1)."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    bn, c_in, h, ww = x.shape
    _, c_out, kh, kw = w.shape
    oh = h * stride - 2 * pad + kh - 1
    ow = ww * stride - 2 * pad + kw - 1
    full = np.zeros((bn, c_out, oh + 2 * pad, ow + 2 * pad))
    for bi in range(bn):
        for ic in range(c_in):
            for iy in range(h):
                for ix in range(ww):
                    v = x[bi, ic, iy, ix]
                    for oc in range(c_out):
                        for ky in range(kh):
                            for kx in range(kw):
                                full[bi, oc, iy * stride + ky, ix * stride + kx] += v * w[ic, oc, ky, kx]
    out = full[:, :, pad:pad + oh, pad:pad + ow]
    return out + np.asarray(b, dtype=np.float64)[None, :, None, None]


def conv3x3_ref(x, w, b, depthwise=False):
    """3x3 stride-1 pad-1 convolution via scipy.signal.correlate2d."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    bn, c_in, h, ww = x.shape
    c_out = w.shape[0]
    out = np.zeros((bn, c_out, h, ww))
    for bi in range(bn):
        for oc in range(c_out):
            if depthwise:
                out[bi, oc] = signal.correlate2d(x[bi, oc], w[oc, 0], mode="same")
            else:
                for ic in range(c_in):
                    out[bi, oc] += signal.correlate2d(x[bi, ic], w[oc, ic], mode="same")
    return out + np.asarray(b, dtype=np.float64)[None, :, None, None]


def pointwise_ref(x, w, b):
    """1x1 convolution as a channel matmul."""
    x = np.asarray(x, dtype=np.float64)
    w2 = np.asarray(w, dtype=np.float64)[:, :, 0, 0]
    return np.einsum("oc,bchw->bohw", w2, x) + np.asarray(b, dtype=np.float64)[None, :, None, None]


def sigmoid_ref(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def gelu_ref(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + special.erf(x / np.sqrt(2.0)))


def softmax_ref(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def bilinear_point_ref(plane, gx, gy):
    """Sample one (H, W) plane at clamped absolute coordinates (gx, gy)."""
    h, w = plane.shape
    gx = min(max(gx, 0.0), w - 1)
    gy = min(max(gy, 0.0), h - 1)
    x0, y0 = int(np.floor(gx)), int(np.floor(gy))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    fx, fy = gx - x0, gy - y0
    return (
        plane[y0, x0] * (1 - fy) * (1 - fx)
        + plane[y0, x1] * (1 - fy) * fx
        + plane[y1, x0] * fy * (1 - fx)
        + plane[y1, x1] * fy * fx
    )


def adaptive_maps_ref(x, maps):
    """Direct transcription: S = sig(W2 G(W1 x)); C = sig(W2 G(W1 pool(x)))."""
    s_hidden = gelu_ref(pointwise_ref(x, maps.s_w1.weight, maps.s_w1.bias)).astype(np.float32)
    s_map = sigmoid_ref(pointwise_ref(s_hidden, maps.s_w2.weight, maps.s_w2.bias)).astype(np.float32)
    pooled = np.asarray(x, dtype=np.float64).mean(axis=(2, 3), keepdims=True).astype(np.float32)
    c_hidden = gelu_ref(pointwise_ref(pooled, maps.c_w1.weight, maps.c_w1.bias)).astype(np.float32)
    c_map = sigmoid_ref(pointwise_ref(c_hidden, maps.c_w2.weight, maps.c_w2.bias)).astype(np.float32)
    return s_map, c_map


def deformable_ref(query, context, params):
    """Staged transcription: offsets -> bilinear samples -> softmax -> output."""
    b, c, h, w = query.shape
    hd, npts, s_off = params.heads, params.points, params.offset_scale
    d = c // hd
    raw = conv3x3_ref(query, params.offset.weight, params.offset.bias).astype(np.float32)
    offsets = (np.tanh(raw.astype(np.float64)) * s_off).reshape(b, hd, npts, 2, h, w)
    q = pointwise_ref(query, params.q.weight, params.q.bias).astype(np.float32)
    k = pointwise_ref(context, params.k.weight, params.k.bias).astype(np.float32)
    v = pointwise_ref(context, params.v.weight, params.v.bias).astype(np.float32)
    merged = np.zeros((b, c, h, w))
    for bi in range(b):
        for hi in range(hd):
            kh = k[bi, hi * d:(hi + 1) * d].astype(np.float64)
            vh = v[bi, hi * d:(hi + 1) * d].astype(np.float64)
            qh = q[bi, hi * d:(hi + 1) * d].astype(np.float64)
            for iy in range(h):
                for ix in range(w):
                    ks = np.zeros((npts, d))
                    vs = np.zeros((npts, d))
                    for p in range(npts):
                        gx = ix + offsets[bi, hi, p, 0, iy, ix]
                        gy = iy + offsets[bi, hi, p, 1, iy, ix]
                        for ci in range(d):
                            # float32 sampling to mirror storage precision
                            ks[p, ci] = np.float32(bilinear_point_ref(kh[ci], gx, gy))
                            vs[p, ci] = np.float32(bilinear_point_ref(vh[ci], gx, gy))
                    logits = ks @ qh[:, iy, ix] / np.sqrt(d)
                    weights = softmax_ref(logits)
                    merged[bi, hi * d:(hi + 1) * d, iy, ix] = weights @ vs
    merged = merged.astype(np.float32)
    return pointwise_ref(merged, params.out.weight, params.out.bias).astype(np.float32)


def ag_ref(x, params):
    """AG(G, D) = C_map * G + S_map * D with G deformable, D depthwise."""
    g = deformable_ref(x, x, params.deform)
    d = conv3x3_ref(x, params.dw.weight, params.dw.bias, depthwise=True).astype(np.float32)
    s_map, c_map = adaptive_maps_ref(x, params.maps)
    return c_map * g + s_map * d


def ac_ref(x, params):
    """AC(C, D) = C_map * D + S_map * C with C the gated channel branch."""
    d = conv3x3_ref(x, params.dw.weight, params.dw.bias, depthwise=True).astype(np.float32)
    cw = gelu_ref(pointwise_ref(x, params.cw1.weight, params.cw1.bias)).astype(np.float32)
    cw = pointwise_ref(cw, params.cw2.weight, params.cw2.bias).astype(np.float32)
    pooled = np.asarray(x, dtype=np.float64).mean(axis=(2, 3), keepdims=True).astype(np.float32)
    gate = sigmoid_ref(pointwise_ref(pooled, params.gate.weight, params.gate.bias)).astype(np.float32)
    cw = cw * gate
    s_map, c_map = adaptive_maps_ref(x, params.maps)
    return c_map * d + s_map * cw
