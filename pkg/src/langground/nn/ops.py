"""The fixed set of differentiable operations used by the agent.

Every op accepts Tensors (see tensor.py), runs on the input dtype, and
registers a hand-derived backward.  Raw ndarray helpers (suffix _raw) are
shared with the no-gradient acting path so both paths compute identical
numbers.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class OpError(ValueError):
    pass


def stable_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _fast_sigmoid(x):
    # exp overflow saturates to the correct limit; cheaper than masking
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


# ---------------------------------------------------------------------------
# Convolution helpers (valid padding, square kernels)


def conv_out_size(n: int, k: int, stride: int) -> int:
    if (n - k) % stride != 0:
        raise OpError(f"non-integral conv output: input {n}, kernel {k}, stride {stride}")
    return (n - k) // stride + 1


def im2col(x, k: int, stride: int):
    """x [B,C,H,W] -> columns (C*k*k, B*oh*ow), one big C-contiguous matrix
    so every conv pass is a single GEMM."""
    b, c, h, w = x.shape
    oh = conv_out_size(h, k, stride)
    ow = conv_out_size(w, k, stride)
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]             # (b, c, oh, ow, k, k)
    cols = np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3))
    return cols.reshape(c * k * k, b * oh * ow), (oh, ow)


def col2im(cols2d, xshape, k: int, stride: int):
    """Adjoint of im2col: scatter-add (C*k*k, B*L) columns back to
    [B,C,H,W]."""
    b, c, h, w = xshape
    oh = conv_out_size(h, k, stride)
    ow = conv_out_size(w, k, stride)
    dxt = np.zeros((c, b, h, w), dtype=cols2d.dtype)
    dc = cols2d.reshape(c, k, k, b, oh, ow)
    for i in range(k):
        for j in range(k):
            dxt[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += dc[:, i, j]
    return np.ascontiguousarray(dxt.transpose(1, 0, 2, 3))


def _to_2d(y):
    """(B,C,h,w) -> (C, B*h*w) via one transpose copy."""
    b, c, h, w = y.shape
    return np.ascontiguousarray(y.transpose(1, 0, 2, 3)).reshape(c, b * h * w)


def _from_2d(y2d, b, h, w):
    """(C, B*h*w) -> (B,C,h,w)."""
    c = y2d.shape[0]
    return np.ascontiguousarray(y2d.reshape(c, b, h, w).transpose(1, 0, 2, 3))


def conv2d_raw(x, weight, bias, stride: int):
    """x [B,Cin,H,W], weight [Cout,Cin,k,k] -> out [B,Cout,oh,ow]."""
    cout, cin, k, _ = weight.shape
    cols, (oh, ow) = im2col(x, k, stride)
    wmat = weight.reshape(cout, cin * k * k)
    out2d = wmat @ cols                             # (Cout, B*L)
    out = _from_2d(out2d, x.shape[0], oh, ow)
    if bias is not None:
        out += bias.reshape(1, cout, 1, 1)
    return out, cols


def deconv2d_raw(y, weight, bias, stride: int, out_hw=None):
    """Exact adjoint of conv2d_raw: y [B,Cout,h,w] -> [B,Cin,H,W]."""
    cout, cin, k, _ = weight.shape
    b, cy, h, w = y.shape
    if cy != cout:
        raise OpError(f"deconv channel mismatch: y has {cy}, kernels expect {cout}")
    if out_hw is None:
        out_hw = ((h - 1) * stride + k, (w - 1) * stride + k)
    wmat = weight.reshape(cout, cin * k * k)
    cols = wmat.T @ _to_2d(y)                       # (Cin*k*k, B*h*w)
    out = col2im(cols, (b, cin) + tuple(out_hw), k, stride)
    if bias is not None:
        out += bias.reshape(1, cin, 1, 1)
    return out


def _maybe_batch(x):
    if x.ndim == 3:
        return x[None], True
    return x, False


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int) -> Tensor:
    xd, squeezed = _maybe_batch(x.data)
    out, cols = conv2d_raw(xd, weight.data, None if bias is None else bias.data,
                           stride)
    parents = [x, weight] + ([bias] if bias is not None else [])
    result = Tensor(out[0] if squeezed else out,
                    requires_grad=any(p.requires_grad for p in parents),
                    parents=[p for p in parents if p.requires_grad])

    def backward():
        g = result.grad
        gb = g[None] if squeezed else g
        cout = gb.shape[1]
        g2d = _to_2d(gb)
        if weight.requires_grad:
            dw = g2d @ cols.T
            weight.accum(dw.reshape(weight.data.shape))
        if bias is not None and bias.requires_grad:
            bias.accum(gb.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            wmat = weight.data.reshape(cout, -1)
            dcols = wmat.T @ g2d
            k = weight.data.shape[2]
            dx = col2im(dcols, xd.shape, k, stride)
            x.accum(dx[0] if squeezed else dx)

    if result.requires_grad:
        result._backward_fn = backward
    return result


def deconv2d(y: Tensor, weight: Tensor, bias: Tensor | None, stride: int,
             out_hw=None) -> Tensor:
    yd, squeezed = _maybe_batch(y.data)
    out = deconv2d_raw(yd, weight.data, None if bias is None else bias.data,
                       stride, out_hw)
    parents = [y, weight] + ([bias] if bias is not None else [])
    result = Tensor(out[0] if squeezed else out,
                    requires_grad=any(p.requires_grad for p in parents),
                    parents=[p for p in parents if p.requires_grad])

    def backward():
        g = result.grad
        gb = g[None] if squeezed else g
        cout, cin, k, _ = weight.data.shape
        gcols, _ = im2col(gb, k, stride)
        b, cy, h, w = yd.shape
        if y.requires_grad:
            wmat = weight.data.reshape(cout, -1)
            dy = _from_2d(wmat @ gcols, b, h, w)
            y.accum(dy[0] if squeezed else dy)
        if weight.requires_grad:
            dw = _to_2d(yd) @ gcols.T
            weight.accum(dw.reshape(weight.data.shape))
        if bias is not None and bias.requires_grad:
            bias.accum(gb.sum(axis=(0, 2, 3)))

    if result.requires_grad:
        result._backward_fn = backward
    return result


# ---------------------------------------------------------------------------
# Dense / elementwise


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x [B,in] (or [in]) with weight [out,in] -> [B,out]."""
    xd = x.data if x.data.ndim == 2 else x.data[None]
    squeezed = x.data.ndim == 1
    out = xd @ weight.data.T
    if bias is not None:
        out = out + bias.data
    parents = [x, weight] + ([bias] if bias is not None else [])
    result = Tensor(out[0] if squeezed else out,
                    requires_grad=any(p.requires_grad for p in parents),
                    parents=[p for p in parents if p.requires_grad])

    def backward():
        g = result.grad if not squeezed else result.grad[None]
        if weight.requires_grad:
            weight.accum(g.T @ xd)
        if bias is not None and bias.requires_grad:
            bias.accum(g.sum(axis=0))
        if x.requires_grad:
            dx = g @ weight.data
            x.accum(dx[0] if squeezed else dx)

    if result.requires_grad:
        result._backward_fn = backward
    return result


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)
    result = Tensor(out, requires_grad=x.requires_grad,
                    parents=[x] if x.requires_grad else ())

    def backward():
        x.accum(result.grad * (x.data > 0))

    if result.requires_grad:
        result._backward_fn = backward
    return result


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise OpError("add requires matching shapes")
    parents = [p for p in (a, b) if p.requires_grad]
    result = Tensor(a.data + b.data, requires_grad=bool(parents), parents=parents)

    def backward():
        if a.requires_grad:
            a.accum(result.grad.copy())
        if b.requires_grad:
            b.accum(result.grad.copy())

    if result.requires_grad:
        result._backward_fn = backward
    return result


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise OpError("mul requires matching shapes")
    parents = [p for p in (a, b) if p.requires_grad]
    result = Tensor(a.data * b.data, requires_grad=bool(parents), parents=parents)

    def backward():
        if a.requires_grad:
            a.accum(result.grad * b.data)
        if b.requires_grad:
            b.accum(result.grad * a.data)

    if result.requires_grad:
        result._backward_fn = backward
    return result


def scale(x: Tensor, factor: float) -> Tensor:
    result = Tensor(x.data * factor, requires_grad=x.requires_grad,
                    parents=[x] if x.requires_grad else ())

    def backward():
        x.accum(result.grad * factor)

    if result.requires_grad:
        result._backward_fn = backward
    return result


def reshape(x: Tensor, shape) -> Tensor:
    result = Tensor(x.data.reshape(shape), requires_grad=x.requires_grad,
                    parents=[x] if x.requires_grad else ())

    def backward():
        x.accum(result.grad.reshape(x.data.shape))

    if result.requires_grad:
        result._backward_fn = backward
    return result


def concat(tensors, axis: int = -1) -> Tensor:
    datas = [t.data for t in tensors]
    parents = [t for t in tensors if t.requires_grad]
    result = Tensor(np.concatenate(datas, axis=axis),
                    requires_grad=bool(parents), parents=parents)

    def backward():
        sizes = [d.shape[axis] for d in datas]
        splits = np.cumsum(sizes[:-1])
        parts = np.split(result.grad, splits, axis=axis)
        for t, g in zip(tensors, parts):
            if t.requires_grad:
                t.accum(g.copy())

    if result.requires_grad:
        result._backward_fn = backward
    return result


def sum_all(x: Tensor) -> Tensor:
    result = Tensor(np.asarray(x.data.sum(), dtype=x.data.dtype),
                    requires_grad=x.requires_grad,
                    parents=[x] if x.requires_grad else ())

    def backward():
        x.accum(np.full_like(x.data, result.grad))

    if result.requires_grad:
        result._backward_fn = backward
    return result


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    result = Tensor(np.asarray(x.data.mean(), dtype=x.data.dtype),
                    requires_grad=x.requires_grad,
                    parents=[x] if x.requires_grad else ())

    def backward():
        x.accum(np.full_like(x.data, result.grad / n))

    if result.requires_grad:
        result._backward_fn = backward
    return result


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean squared error against a constant target (mean over elements)."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    diff = pred.data - t
    n = diff.size
    result = Tensor(np.asarray((diff * diff).mean(), dtype=pred.data.dtype),
                    requires_grad=pred.requires_grad,
                    parents=[pred] if pred.requires_grad else ())

    def backward():
        pred.accum((2.0 / n) * diff * result.grad)

    if result.requires_grad:
        result._backward_fn = backward
    return result


# ---------------------------------------------------------------------------
# Softmax family


def softmax_raw(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_raw(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(x: Tensor) -> Tensor:
    p = softmax_raw(x.data)
    result = Tensor(p, requires_grad=x.requires_grad,
                    parents=[x] if x.requires_grad else ())

    def backward():
        g = result.grad
        dot = (g * p).sum(axis=-1, keepdims=True)
        x.accum(p * (g - dot))

    if result.requires_grad:
        result._backward_fn = backward
    return result


def log_softmax(x: Tensor) -> Tensor:
    lp = log_softmax_raw(x.data)
    result = Tensor(lp, requires_grad=x.requires_grad,
                    parents=[x] if x.requires_grad else ())

    def backward():
        g = result.grad
        p = np.exp(lp)
        x.accum(g - p * g.sum(axis=-1, keepdims=True))

    if result.requires_grad:
        result._backward_fn = backward
    return result


def nll_loss(logits: Tensor, targets) -> Tensor:
    """Softmax + mean negative log likelihood of integer targets [B]."""
    targets = np.asarray(targets, dtype=np.int64)
    zd = logits.data if logits.data.ndim == 2 else logits.data[None]
    squeezed = logits.data.ndim == 1
    if squeezed:
        targets = targets.reshape(1)
    lp = log_softmax_raw(zd)
    b = zd.shape[0]
    picked = lp[np.arange(b), targets]
    result = Tensor(np.asarray(-picked.mean(), dtype=zd.dtype),
                    requires_grad=logits.requires_grad,
                    parents=[logits] if logits.requires_grad else ())

    def backward():
        p = np.exp(lp)
        p[np.arange(b), targets] -= 1.0
        dz = p * (result.grad / b)
        logits.accum(dz[0] if squeezed else dz)

    if result.requires_grad:
        result._backward_fn = backward
    return result


def take_rows_at(mat: Tensor, idx) -> Tensor:
    """out[t] = mat[t, idx[t]]."""
    idx = np.asarray(idx, dtype=np.int64)
    t = np.arange(mat.data.shape[0])
    result = Tensor(mat.data[t, idx], requires_grad=mat.requires_grad,
                    parents=[mat] if mat.requires_grad else ())

    def backward():
        dm = np.zeros_like(mat.data)
        dm[t, idx] = result.grad
        mat.accum(dm)

    if result.requires_grad:
        result._backward_fn = backward
    return result


# ---------------------------------------------------------------------------
# Embeddings and weight-tied output


def embedding_lookup(ids, table: Tensor) -> Tensor:
    """Row gather [L] -> [L,D]; backward scatter-adds into table rows."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise OpError("embedding id out of range")
    result = Tensor(table.data[ids], requires_grad=table.requires_grad,
                    parents=[table] if table.requires_grad else ())

    def backward():
        dt = np.zeros_like(table.data)
        np.add.at(dt, ids, result.grad)
        table.accum(dt)

    if result.requires_grad:
        result._backward_fn = backward
    return result


def bow_encode(ids, table: Tensor, pad_id: int) -> Tensor:
    """Sum of embeddings of the non-pad ids: [D]."""
    ids = np.asarray(ids, dtype=np.int64)
    keep = ids[ids != pad_id]
    if keep.size and keep.max() >= table.data.shape[0]:
        raise OpError("embedding id out of range")
    data = (table.data[keep].sum(axis=0) if keep.size
            else np.zeros(table.data.shape[1], dtype=table.data.dtype))
    result = Tensor(data, requires_grad=table.requires_grad,
                    parents=[table] if table.requires_grad else ())

    def backward():
        if keep.size:
            dt = np.zeros_like(table.data)
            np.add.at(dt, keep, result.grad[None].repeat(keep.size, axis=0))
            table.accum(dt)

    if result.requires_grad:
        result._backward_fn = backward
    return result


def tied_output(h: Tensor, table: Tensor, n_rows: int) -> Tensor:
    """Logits over the first n_rows embedding rows: h [B,D] -> [B,n_rows].
    The output weights ARE the embedding rows (same storage)."""
    hd = h.data if h.data.ndim == 2 else h.data[None]
    squeezed = h.data.ndim == 1
    rows = table.data[:n_rows]
    out = hd @ rows.T
    parents = [p for p in (h, table) if p.requires_grad]
    result = Tensor(out[0] if squeezed else out, requires_grad=bool(parents),
                    parents=parents)

    def backward():
        g = result.grad if not squeezed else result.grad[None]
        if h.requires_grad:
            dh = g @ rows
            h.accum(dh[0] if squeezed else dh)
        if table.requires_grad:
            dt = np.zeros_like(table.data)
            dt[:n_rows] = g.T @ hd
            table.accum(dt)

    if result.requires_grad:
        result._backward_fn = backward
    return result


# ---------------------------------------------------------------------------
# LSTM


def lstm_init(input_dim: int, hidden: int, dtype=np.float32):
    return (np.zeros((input_dim + hidden, 4 * hidden), dtype=dtype),
            np.zeros(4 * hidden, dtype=dtype))


def lstm_step_raw(x, h, c, W, b):
    """Single step on raw arrays; gate order (i, f, o, g)."""
    hid = h.shape[-1]
    z = x @ W[:x.shape[-1]] + h @ W[x.shape[-1]:] + b
    s = _fast_sigmoid(z[..., :3 * hid])
    g = np.tanh(z[..., 3 * hid:])
    c_new = s[..., hid:2 * hid] * c + s[..., :hid] * g
    h_new = s[..., 2 * hid:3 * hid] * np.tanh(c_new)
    return h_new, c_new


def matmul(x: Tensor, W: Tensor) -> Tensor:
    """x [..,in] @ W [in,out]."""
    out = x.data @ W.data
    parents = [p for p in (x, W) if p.requires_grad]
    result = Tensor(out, requires_grad=bool(parents), parents=parents)

    def backward():
        g = result.grad
        if x.requires_grad:
            x.accum(g @ W.data.T)
        if W.requires_grad:
            xa = x.data if x.data.ndim == 2 else x.data[None]
            ga = g if g.ndim == 2 else g[None]
            W.accum(xa.T @ ga)

    if result.requires_grad:
        result._backward_fn = backward
    return result


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """x [..,n] + b [n] (broadcast over leading axes)."""
    parents = [p for p in (x, b) if p.requires_grad]
    result = Tensor(x.data + b.data, requires_grad=bool(parents), parents=parents)

    def backward():
        g = result.grad
        if x.requires_grad:
            x.accum(g.copy())
        if b.requires_grad:
            b.accum(g.sum(axis=0) if g.ndim == 2 else g.copy())

    if result.requires_grad:
        result._backward_fn = backward
    return result


def sigmoid(x: Tensor) -> Tensor:
    s = stable_sigmoid(x.data)
    result = Tensor(s, requires_grad=x.requires_grad,
                    parents=[x] if x.requires_grad else ())

    def backward():
        x.accum(result.grad * s * (1 - s))

    if result.requires_grad:
        result._backward_fn = backward
    return result


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    result = Tensor(t, requires_grad=x.requires_grad,
                    parents=[x] if x.requires_grad else ())

    def backward():
        x.accum(result.grad * (1 - t * t))

    if result.requires_grad:
        result._backward_fn = backward
    return result


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    result = Tensor(x.data[..., start:stop].copy(),
                    requires_grad=x.requires_grad,
                    parents=[x] if x.requires_grad else ())

    def backward():
        dx = np.zeros_like(x.data)
        dx[..., start:stop] = result.grad
        x.accum(dx)

    if result.requires_grad:
        result._backward_fn = backward
    return result


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor, W: Tensor,
              b: Tensor):
    """One differentiable LSTM step built from primitive ops; gate order
    (input, forget, output, candidate).  Returns (h, c) tensors exposing
    both the output and the cell state for stacking."""
    din = x.data.shape[-1]
    hid = h_prev.data.shape[-1]
    if W.data.shape != (din + hid, 4 * hid):
        raise OpError(f"lstm weight shape {W.data.shape} does not match "
                      f"input {din} + hidden {hid}")
    xh = concat([x, h_prev], axis=-1)
    z = add_bias(matmul(xh, W), b)
    i = sigmoid(slice_last(z, 0, hid))
    f = sigmoid(slice_last(z, hid, 2 * hid))
    o = sigmoid(slice_last(z, 2 * hid, 3 * hid))
    g = tanh(slice_last(z, 3 * hid, 4 * hid))
    c = add(mul(f, c_prev), mul(i, g))
    h = mul(o, tanh(c))
    return h, c


def lstm_sequence(X: Tensor, h0, c0, W: Tensor, b: Tensor):
    """Unrolled LSTM over X [T,Din] from constant initial state (truncated
    backprop).  Gate order (i, f, o, g).  Returns (Hs [T,H] tensor,
    (hT, cT) arrays).

    The input projection is batched over time; only the recurrent matvec
    and the gate nonlinearities run per step.  The backward pass
    precomputes every product that does not depend on the reverse
    recurrence, so the sequential loop touches few arrays.
    """
    T, din = X.data.shape
    hid = h0.shape[-1]
    if W.data.shape != (din + hid, 4 * hid):
        raise OpError(f"lstm weight shape {W.data.shape} does not match "
                      f"input {din} + hidden {hid}")
    dtype = X.data.dtype
    pre = X.data @ W.data[:din]
    pre += b.data
    Wh = W.data[din:]
    S = np.empty((T, 3 * hid), dtype)       # sigmoid gates: i, f, o
    G = np.empty((T, hid), dtype)           # tanh candidate
    C = np.empty((T, hid), dtype)
    TC = np.empty((T, hid), dtype)
    Hprev = np.empty((T, hid), dtype)
    Hs = np.empty((T, hid), dtype)
    h = h0.astype(dtype, copy=True)
    c = c0.astype(dtype, copy=True)
    for t in range(T):
        Hprev[t] = h
        z = pre[t] + h @ Wh
        s = _fast_sigmoid(z[:3 * hid])
        g = np.tanh(z[3 * hid:])
        c = s[hid:2 * hid] * c + s[:hid] * g
        tc = np.tanh(c)
        h = s[2 * hid:3 * hid] * tc
        S[t], G[t], C[t], TC[t], Hs[t] = s, g, c, tc, h

    parents = [p for p in (X, W, b) if p.requires_grad]
    result = Tensor(Hs, requires_grad=bool(parents), parents=parents)

    def backward():
        dHs = result.grad
        I = S[:, :hid]
        F = S[:, hid:2 * hid]
        O = S[:, 2 * hid:3 * hid]
        c_prev = np.vstack([c0[None].astype(dtype), C[:-1]])
        # everything not touched by the reverse recurrence, batched over T
        A = O * (1 - TC * TC)               # dh -> dc
        Pi = G * I * (1 - I)                # dc -> dz_i
        Pf = c_prev * F * (1 - F)           # dc -> dz_f
        Po = TC * O * (1 - O)               # dh -> dz_o
        Pg = I * (1 - G * G)                # dc -> dz_g
        dZ = np.empty((T, 4 * hid), dtype)
        WhT = np.ascontiguousarray(Wh.T)
        dh_rec = np.zeros(hid, dtype)
        dc = np.zeros(hid, dtype)
        for t in range(T - 1, -1, -1):
            dh = dHs[t] + dh_rec
            dc = dc * F[t + 1] if t + 1 < T else dc
            dc = dc + dh * A[t]
            dz = dZ[t]
            dz[:hid] = dc * Pi[t]
            dz[hid:2 * hid] = dc * Pf[t]
            dz[2 * hid:3 * hid] = dh * Po[t]
            dz[3 * hid:] = dc * Pg[t]
            dh_rec = dz @ WhT
        if X.requires_grad:
            X.accum(dZ @ W.data[:din].T)
        if W.requires_grad:
            dW = np.empty_like(W.data)
            np.matmul(X.data.T, dZ, out=dW[:din])
            np.matmul(Hprev.T, dZ, out=dW[din:])
            W.accum(dW)
        if b.requires_grad:
            b.accum(dZ.sum(axis=0))

    if result.requires_grad:
        result._backward_fn = backward
    return result, (h, c)
