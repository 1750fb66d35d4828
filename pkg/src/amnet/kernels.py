"""Whole-video forward and reverse-mode kernels.

A video is packed into flat per-appearance arrays (one row per object per
frame, frame-major, ascending track id inside a frame):

``bbox``      (S, 4) bounding-box features
``flow_in``   (S, 2D) concatenated object/frame flow after ablation masking
``prev``      (S,) row index holding this track's previous weighted state, or -1
``frame_ptr`` (T+1,) row offsets of each frame

The same source runs either as plain numpy (vectorised over the objects of a
frame) or compiled with numba, as chosen by :mod:`amnet._backend`.
"""

from __future__ import annotations

import numpy as np

from ._backend import BACKEND, jit

LOG_CLAMP = 1e-7

# Order of gradient arrays returned by ``forward_backward``.
GRAD_ORDER = ("W0", "b0", "Wb", "Ub", "bb", "Wf", "Uf", "bf", "wb", "wf", "W3", "b3", "W4", "b4")



@jit
def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.minimum(np.maximum(x, -700.0), 700.0)))


@jit
def gru_step(x, hp, W, U, b):
    z = sigmoid(x @ W[0].T + hp @ U[0].T + b[0])
    r = sigmoid(x @ W[1].T + hp @ U[1].T + b[1])
    c = np.tanh(x @ W[2].T + (r * hp) @ U[2].T + b[2])
    h = (1.0 - z) * hp + z * c
    return z, r, c, h


@jit
def attend(H, w):
    e = np.tanh(H) @ w
    e = np.exp(e - np.max(e))
    return e / np.sum(e)


@jit
def forward_cached(bbox, flow_in, prev, frame_ptr,
                   W0, b0, Wb, Ub, bb, Wf, Uf, bf, wb, wf, W3, b3, W4, b4,
                   use_bbox, use_flow, use_attention):
    S = bbox.shape[0]
    n = Ub.shape[1]
    N = Uf.shape[1]
    T = frame_ptr.shape[0] - 1

    f_pre = flow_in @ W0.T + b0
    f = np.maximum(f_pre, 0.0)

    hp_b = np.zeros((S, n))
    z_b = np.zeros((S, n))
    r_b = np.zeros((S, n))
    c_b = np.zeros((S, n))
    h_b = np.zeros((S, n))
    hp_f = np.zeros((S, N))
    z_f = np.zeros((S, N))
    r_f = np.zeros((S, N))
    c_f = np.zeros((S, N))
    h_f = np.zeros((S, N))
    al_b = np.ones(S)
    al_f = np.ones(S)
    hh = np.zeros((S, n + N))

    for t in range(T):
        a = frame_ptr[t]
        e = frame_ptr[t + 1]
        if e == a:
            continue
        for j in range(a, e):
            p = prev[j]
            if p >= 0:
                hp_b[j] = hh[p, :n]
                hp_f[j] = hh[p, n:]
        if use_bbox:
            z, r, c, h = gru_step(bbox[a:e], hp_b[a:e], Wb, Ub, bb)
            z_b[a:e] = z
            r_b[a:e] = r
            c_b[a:e] = c
            h_b[a:e] = h
        if use_flow:
            z, r, c, h = gru_step(f[a:e], hp_f[a:e], Wf, Uf, bf)
            z_f[a:e] = z
            r_f[a:e] = r
            c_f[a:e] = c
            h_f[a:e] = h
        if use_attention:
            al_b[a:e] = attend(h_b[a:e], wb)
            al_f[a:e] = attend(h_f[a:e], wf)
        for j in range(a, e):
            hh[j, :n] = al_b[j] * h_b[j]
            hh[j, n:] = al_f[j] * h_f[j]

    u_pre = hh @ W3.T + b3
    u = np.maximum(u_pre, 0.0)
    logits = u @ W4.T + b4
    # two-class softmax, positive class at index 1
    m = np.maximum(logits[:, 0], logits[:, 1])
    e0 = np.exp(logits[:, 0] - m)
    e1 = np.exp(logits[:, 1] - m)
    s = e1 / (e0 + e1)
    return (s, al_b, al_f, f_pre, f, hp_b, z_b, r_b, c_b, h_b,
            hp_f, z_f, r_f, c_f, h_f, hh, u_pre, u)


@jit
def forward(bbox, flow_in, prev, frame_ptr,
            W0, b0, Wb, Ub, bb, Wf, Uf, bf, wb, wf, W3, b3, W4, b4,
            use_bbox, use_flow, use_attention):
    out = forward_cached(bbox, flow_in, prev, frame_ptr,
                         W0, b0, Wb, Ub, bb, Wf, Uf, bf, wb, wf, W3, b3, W4, b4,
                         use_bbox, use_flow, use_attention)
    return out[0], out[1], out[2]


@jit
def gru_back(d, x, hp, z, r, c, W, U):
    dz = d * (c - hp)
    dc = d * z
    dhp = d * (1.0 - z)
    dac = dc * (1.0 - c * c)
    drh = dac @ U[2]
    dhp = dhp + drh * r
    dar = (drh * hp) * r * (1.0 - r)
    daz = dz * z * (1.0 - z)
    dhp = dhp + daz @ U[0] + dar @ U[1]
    dx = daz @ W[0] + dar @ W[1] + dac @ W[2]
    return daz, dar, dac, dhp, dx


@jit
def attend_back(dhh, H, al, w):
    # returns (dH, dw) for hh = al * H with al = softmax(tanh(H) w)
    dH = dhh * al[:, None]
    dal = np.sum(dhh * H, axis=1)
    de = al * (dal - np.sum(al * dal))
    th = np.tanh(H)
    dw = th.T @ de
    dH = dH + de[:, None] * (1.0 - th * th) * w[None, :]
    return dH, dw


@jit
def forward_backward(bbox, flow_in, prev, frame_ptr, labels, sample_w, w_p, w_n,
                     W0, b0, Wb, Ub, bb, Wf, Uf, bf, wb, wf, W3, b3, W4, b4,
                     use_bbox, use_flow, use_attention):
    (s, al_b, al_f, f_pre, f, hp_b, z_b, r_b, c_b, h_b,
     hp_f, z_f, r_f, c_f, h_f, hh, u_pre, u) = forward_cached(
        bbox, flow_in, prev, frame_ptr,
        W0, b0, Wb, Ub, bb, Wf, Uf, bf, wb, wf, W3, b3, W4, b4,
        use_bbox, use_flow, use_attention)
    S = bbox.shape[0]
    n = Ub.shape[1]
    N = Uf.shape[1]
    T = frame_ptr.shape[0] - 1

    loss = 0.0
    ds = np.zeros(S)
    for j in range(S):
        sc = min(max(s[j], LOG_CLAMP), 1.0 - LOG_CLAMP)
        lab = labels[j]
        wj = sample_w[j]
        loss -= wj * (w_p * lab * np.log(sc) + w_n * (1.0 - lab) * np.log(1.0 - sc))
        if LOG_CLAMP < s[j] < 1.0 - LOG_CLAMP:
            ds[j] = wj * (-(w_p * lab / sc) + w_n * (1.0 - lab) / (1.0 - sc))

    g = ds * s * (1.0 - s)
    dlogits = np.empty((S, 2))
    dlogits[:, 0] = -g
    dlogits[:, 1] = g
    dW4 = dlogits.T @ u
    db4 = np.sum(dlogits, axis=0)
    du_pre = (dlogits @ W4) * (u_pre > 0.0)
    dW3 = du_pre.T @ hh
    db3 = np.sum(du_pre, axis=0)
    dhh = du_pre @ W3

    dwb = np.zeros(n)
    dwf = np.zeros(N)
    daz_b = np.zeros((S, n))
    dar_b = np.zeros((S, n))
    dac_b = np.zeros((S, n))
    daz_f = np.zeros((S, N))
    dar_f = np.zeros((S, N))
    dac_f = np.zeros((S, N))
    df = np.zeros((S, f.shape[1]))

    for t in range(T - 1, -1, -1):
        a = frame_ptr[t]
        e = frame_ptr[t + 1]
        if e == a:
            continue
        M = e - a
        if use_attention:
            dHb, dw = attend_back(dhh[a:e, :n], h_b[a:e], al_b[a:e], wb)
            dwb += dw
            dHf, dw = attend_back(dhh[a:e, n:], h_f[a:e], al_f[a:e], wf)
            dwf += dw
        else:
            dHb = dhh[a:e, :n].copy()
            dHf = dhh[a:e, n:].copy()
        dhp = np.zeros((M, n + N))
        if use_bbox:
            daz, dar, dac, dhpb, dx = gru_back(dHb, bbox[a:e], hp_b[a:e], z_b[a:e],
                                               r_b[a:e], c_b[a:e], Wb, Ub)
            daz_b[a:e] = daz
            dar_b[a:e] = dar
            dac_b[a:e] = dac
            dhp[:, :n] = dhpb
        if use_flow:
            daz, dar, dac, dhpf, dx = gru_back(dHf, f[a:e], hp_f[a:e], z_f[a:e],
                                               r_f[a:e], c_f[a:e], Wf, Uf)
            daz_f[a:e] = daz
            dar_f[a:e] = dar
            dac_f[a:e] = dac
            dhp[:, n:] = dhpf
            df[a:e] = dx
        for j in range(M):
            p = prev[a + j]
            if p >= 0:
                dhh[p] += dhp[j]

    dWb = np.zeros(Wb.shape)
    dUb = np.zeros(Ub.shape)
    dbb = np.zeros(bb.shape)
    if use_bbox:
        dWb[0] = daz_b.T @ bbox
        dWb[1] = dar_b.T @ bbox
        dWb[2] = dac_b.T @ bbox
        dUb[0] = daz_b.T @ hp_b
        dUb[1] = dar_b.T @ hp_b
        dUb[2] = dac_b.T @ (r_b * hp_b)
        dbb[0] = np.sum(daz_b, axis=0)
        dbb[1] = np.sum(dar_b, axis=0)
        dbb[2] = np.sum(dac_b, axis=0)
    dWf = np.zeros(Wf.shape)
    dUf = np.zeros(Uf.shape)
    dbf = np.zeros(bf.shape)
    if use_flow:
        dWf[0] = daz_f.T @ f
        dWf[1] = dar_f.T @ f
        dWf[2] = dac_f.T @ f
        dUf[0] = daz_f.T @ hp_f
        dUf[1] = dar_f.T @ hp_f
        dUf[2] = dac_f.T @ (r_f * hp_f)
        dbf[0] = np.sum(daz_f, axis=0)
        dbf[1] = np.sum(dar_f, axis=0)
        dbf[2] = np.sum(dac_f, axis=0)
    df_pre = df * (f_pre > 0.0)
    dW0 = df_pre.T @ flow_in
    db0 = np.sum(df_pre, axis=0)
    return loss, s, (dW0, db0, dWb, dUb, dbb, dWf, dUf, dbf, dwb, dwf, dW3, db3, dW4, db4)
