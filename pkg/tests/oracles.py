"""Brute-force numpy reference implementations.

Deliberately written with explicit Python loops and no torch, so they share
nothing with the code under test except the conventions they encode.
"""
import math

import numpy as np


def conv2d(x, w, b=None, stride=1, pad=0, groups=1):
    B, C, H, W = x.shape
    O, Cg, KH, KW = w.shape
    Ho = (H + 2 * pad - KH) // stride + 1
    Wo = (W + 2 * pad - KW) // stride + 1
    xp = np.zeros((B, C, H + 2 * pad, W + 2 * pad), dtype=np.float64)
    xp[:, :, pad:pad + H, pad:pad + W] = x
    out = np.zeros((B, O, Ho, Wo))
    opg = O // groups
    for n in range(B):
        for o in range(O):
            g = o // opg
            for i in range(Ho):
                for j in range(Wo):
                    s = 0.0 if b is None else float(b[o])
                    for c in range(Cg):
                        for ki in range(KH):
                            for kj in range(KW):
                                s += w[o, c, ki, kj] * xp[n, g * Cg + c, i * stride + ki, j * stride + kj]
                    out[n, o, i, j] = s
    return out


def max_pool2d(x, k=3, stride=2, pad=1):
    B, C, H, W = x.shape
    Ho = (H + 2 * pad - k) // stride + 1
    Wo = (W + 2 * pad - k) // stride + 1
    out = np.full((B, C, Ho, Wo), -np.inf)
    for n in range(B):
        for c in range(C):
            for i in range(Ho):
                for j in range(Wo):
                    for ki in range(k):
                        for kj in range(k):
                            r, q = i * stride + ki - pad, j * stride + kj - pad
                            if 0 <= r < H and 0 <= q < W:
                                out[n, c, i, j] = max(out[n, c, i, j], x[n, c, r, q])
    return out


def batch_norm(x, gamma, beta, mean=None, var=None, eps=1e-5):
    """Eval mode when mean/var given, otherwise biased batch statistics."""
    B, C, H, W = x.shape
    out = np.zeros_like(x, dtype=np.float64)
    for c in range(C):
        if mean is None:
            vals = [x[n, c, i, j] for n in range(B) for i in range(H) for j in range(W)]
            mu = sum(vals) / len(vals)
            v = sum((a - mu) ** 2 for a in vals) / len(vals)
        else:
            mu, v = mean[c], var[c]
        for n in range(B):
            for i in range(H):
                for j in range(W):
                    out[n, c, i, j] = gamma[c] * (x[n, c, i, j] - mu) / math.sqrt(v + eps) + beta[c]
    return out


def relu(x):
    out = np.empty_like(x, dtype=np.float64)
    for idx, v in np.ndenumerate(x):
        out[idx] = v if v > 0 else 0.0
    return out


def sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    for idx, v in np.ndenumerate(x):
        out[idx] = 1.0 / (1.0 + math.exp(-v))
    return out


def directional_pool(x, axis, mode):
    B, C, H, W = x.shape
    if axis == "horizontal":
        out = np.zeros((B, C, H, 1))
        for n in range(B):
            for c in range(C):
                for i in range(H):
                    row = [x[n, c, i, j] for j in range(W)]
                    out[n, c, i, 0] = sum(row) / W if mode == "avg" else max(row)
    else:
        out = np.zeros((B, C, 1, W))
        for n in range(B):
            for c in range(C):
                for j in range(W):
                    col = [x[n, c, i, j] for i in range(H)]
                    out[n, c, 0, j] = sum(col) / H if mode == "avg" else max(col)
    return out


def bilinear_resize(x, Ho, Wo):
    """Corner-aligned bilinear interpolation."""
    B, C, H, W = x.shape
    out = np.zeros((B, C, Ho, Wo))
    for i in range(Ho):
        u = 0.0 if Ho == 1 else i * (H - 1) / (Ho - 1)
        i0 = min(int(math.floor(u)), H - 1)
        i1 = min(i0 + 1, H - 1)
        di = u - i0
        for j in range(Wo):
            v = 0.0 if Wo == 1 else j * (W - 1) / (Wo - 1)
            j0 = min(int(math.floor(v)), W - 1)
            j1 = min(j0 + 1, W - 1)
            dj = v - j0
            for n in range(B):
                for c in range(C):
                    out[n, c, i, j] = ((1 - di) * (1 - dj) * x[n, c, i0, j0]
                                       + (1 - di) * dj * x[n, c, i0, j1]
                                       + di * (1 - dj) * x[n, c, i1, j0]
                                       + di * dj * x[n, c, i1, j1])
    return out


def nearest_resize_mask(mask, Ho, Wo):
    H, W = mask.shape
    out = np.zeros((Ho, Wo), dtype=mask.dtype)
    for i in range(Ho):
        for j in range(Wo):
            out[i, j] = mask[int(math.floor(i * H / Ho)), int(math.floor(j * W / Wo))]
    return out


def gca(x, reduce_w, expand_w, gamma, beta, running_mean=None, running_var=None, eps=1e-5):
    """Grouped coordinate attention with explicit loops.

    reduce_w: (G, h, Cg), expand_w: (G, Cg, h), gamma/beta: (h,),
    running_mean/var: (G*h,) or None for batch statistics (computed per group,
    hidden unit and direction over the batch and that direction's positions).
    """
    B, C, H, W = x.shape
    G, hid, Cg = reduce_w.shape
    out = np.zeros((B, C, H, W))
    for g in range(G):
        xg = x[:, g * Cg:(g + 1) * Cg]
        # fused directional descriptors: avg + max
        fh = directional_pool(xg, "horizontal", "avg") + directional_pool(xg, "horizontal", "max")
        fw = directional_pool(xg, "vertical", "avg") + directional_pool(xg, "vertical", "max")
        # positions: H rows of fh then W columns of fw
        desc = np.zeros((B, Cg, H + W))
        for n in range(B):
            for c in range(Cg):
                for i in range(H):
                    desc[n, c, i] = fh[n, c, i, 0]
                for j in range(W):
                    desc[n, c, H + j] = fw[n, c, 0, j]
        z = np.zeros((B, hid, H + W))
        for n in range(B):
            for k in range(hid):
                for p in range(H + W):
                    z[n, k, p] = sum(reduce_w[g, k, c] * desc[n, c, p] for c in range(Cg))
        normed = np.zeros_like(z)
        for seg in (range(H), range(H, H + W)):
            for k in range(hid):
                if running_mean is None:
                    vals = [z[n, k, p] for n in range(B) for p in seg]
                    mu = sum(vals) / len(vals)
                    var = sum((v - mu) ** 2 for v in vals) / len(vals)
                else:
                    mu, var = running_mean[g * hid + k], running_var[g * hid + k]
                for n in range(B):
                    for p in seg:
                        t = gamma[k] * (z[n, k, p] - mu) / math.sqrt(var + eps) + beta[k]
                        normed[n, k, p] = t if t > 0 else 0.0
        z = normed
        a = np.zeros((B, Cg, H + W))
        for n in range(B):
            for c in range(Cg):
                for p in range(H + W):
                    s = sum(expand_w[g, c, k] * z[n, k, p] for k in range(hid))
                    a[n, c, p] = 1.0 / (1.0 + math.exp(-s))
        for n in range(B):
            for c in range(Cg):
                for i in range(H):
                    for j in range(W):
                        out[n, g * Cg + c, i, j] = xg[n, c, i, j] * a[n, c, i] * a[n, c, H + j]
    return out


def se(x, w1, w2):
    B, C, H, W = x.shape
    out = np.zeros_like(x, dtype=np.float64)
    for n in range(B):
        s = [sum(x[n, c, i, j] for i in range(H) for j in range(W)) / (H * W) for c in range(C)]
        hidden = [max(0.0, sum(w1[k, c] * s[c] for c in range(C))) for k in range(w1.shape[0])]
        for c in range(C):
            e = sum(w2[c, k] * hidden[k] for k in range(w1.shape[0]))
            scale = 1.0 / (1.0 + math.exp(-e))
            out[n, c] = x[n, c] * scale
    return out


def cbam(x, w1, w2, spatial_w):
    B, C, H, W = x.shape
    hid = w1.shape[0]

    def mlp(v):
        hdn = [max(0.0, sum(w1[k, c] * v[c] for c in range(C))) for k in range(hid)]
        return [sum(w2[c, k] * hdn[k] for k in range(hid)) for c in range(C)]

    out = np.zeros_like(x, dtype=np.float64)
    for n in range(B):
        avg = [x[n, c].sum() / (H * W) for c in range(C)]
        mx = [x[n, c].max() for c in range(C)]
        a, m = mlp(avg), mlp(mx)
        y = np.zeros((C, H, W))
        for c in range(C):
            y[c] = x[n, c] / (1.0 + math.exp(-(a[c] + m[c])))
        pooled = np.zeros((1, 2, H, W))
        for i in range(H):
            for j in range(W):
                col = [y[c, i, j] for c in range(C)]
                pooled[0, 0, i, j] = sum(col) / C
                pooled[0, 1, i, j] = max(col)
        k = spatial_w.shape[-1]
        sa = conv2d(pooled, spatial_w, None, 1, k // 2)[0, 0]
        for c in range(C):
            for i in range(H):
                for j in range(W):
                    out[n, c, i, j] = y[c, i, j] / (1.0 + math.exp(-sa[i, j]))
    return out


def coordatt(x, w1, gamma, beta, mean, var, wh, ww, eps=1e-5):
    """Eval-mode coordinate attention (BN with given running statistics)."""
    B, C, H, W = x.shape
    hid = w1.shape[0]
    ph = directional_pool(x, "horizontal", "avg")[:, :, :, 0]  # (B, C, H)
    pw = directional_pool(x, "vertical", "avg")[:, :, 0, :]    # (B, C, W)
    desc = np.concatenate([ph, pw], axis=2)
    out = np.zeros_like(x, dtype=np.float64)
    for n in range(B):
        y = np.zeros((hid, H + W))
        for k in range(hid):
            for p in range(H + W):
                s = sum(w1[k, c] * desc[n, c, p] for c in range(C))
                t = gamma[k] * (s - mean[k]) / math.sqrt(var[k] + eps) + beta[k]
                y[k, p] = max(0.0, t)
        for c in range(C):
            ah = [1 / (1 + math.exp(-sum(wh[c, k] * y[k, i] for k in range(hid)))) for i in range(H)]
            aw = [1 / (1 + math.exp(-sum(ww[c, k] * y[k, H + j] for k in range(hid)))) for j in range(W)]
            for i in range(H):
                for j in range(W):
                    out[n, c, i, j] = x[n, c, i, j] * ah[i] * aw[j]
    return out


def ce_loss(logits, target):
    B, K, H, W = logits.shape
    total = 0.0
    for n in range(B):
        for i in range(H):
            for j in range(W):
                zs = [logits[n, k, i, j] for k in range(K)]
                m = max(zs)
                lse = m + math.log(sum(math.exp(z - m) for z in zs))
                total += lse - zs[target[n, i, j]]
    return total / (B * H * W)


def dsc_counts(pred, target, k):
    """Per-class hard Dice by set intersection over flat pixel indices."""
    p = pred.ravel().tolist()
    g = target.ravel().tolist()
    out = []
    for c in range(k):
        P = {i for i, v in enumerate(p) if v == c}
        G = {i for i, v in enumerate(g) if v == c}
        out.append(1.0 if not P and not G else 2 * len(P & G) / (len(P) + len(G)))
    return out


def adam(x0, grad_fn, steps, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar-parameter Adam trajectory; returns list of iterates after each step."""
    x = np.array(x0, dtype=np.float64)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    traj = []
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        x = x - lr * mh / (np.sqrt(vh) + eps)
        traj.append(x.copy())
    return traj


def central_diff(f, x, h=1e-4):
    """Central finite-difference gradient of scalar f at numpy array x."""
    g = np.zeros_like(x, dtype=np.float64)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = f(x)
        x[idx] = old - h
        fm = f(x)
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g
