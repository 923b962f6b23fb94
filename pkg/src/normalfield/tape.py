"""Minimal reverse-mode tape over numpy float64 arrays.

Every differentiable quantity in the renderer is a Var recorded on a
Tape.  The primitive vocabulary is deliberately small: elementwise
arithmetic, the activations used by the density/appearance models, a
trilinear gather (plus its spatial-gradient twin), one compositing
primitive, and a handful of structural ops (sum, reshape, where,
exclusive prefix sum, stop_gradient).  Each node stores a closure
mapping the output adjoint to input adjoints.  Tapes are cheap, hold no
global state, and are rebuilt per ray batch.

Constants (python scalars, ndarrays) are wrapped automatically and do
not accumulate adjoints; whole subgraphs that cannot reach a leaf are
skipped during backward.
"""

import numpy as np


def _sigmoid_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _unbroadcast(g, shape):
    """Sum-reduce adjoint g back to `shape` (inverse of broadcasting)."""
    if g.shape == shape:
        return g
    if g.ndim > len(shape):
        g = g.sum(axis=tuple(range(g.ndim - len(shape))))
    keep = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if keep:
        g = g.sum(axis=keep, keepdims=True)
    return g.reshape(shape)


class Var:
    """Handle to a tape node; holds the forward value as float64 ndarray."""

    __slots__ = ("tape", "idx", "data", "needs_grad")

    def __init__(self, tape, idx, data, needs_grad):
        self.tape = tape
        self.idx = idx
        self.data = data
        self.needs_grad = needs_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def grad(self):
        return self.tape.grad_of(self)

    def __add__(self, other):
        return self.tape.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return self.tape.sub(self, other)

    def __rsub__(self, other):
        return self.tape.sub(other, self)

    def __mul__(self, other):
        return self.tape.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self.tape.div(self, other)

    def __rtruediv__(self, other):
        return self.tape.div(other, self)

    def __neg__(self):
        return self.tape.mul(self, -1.0)

    def __pow__(self, p):
        return self.tape.power(self, p)

    def sum(self, axis=None, keepdims=False):
        return self.tape.sum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return self.tape.reshape(self, *shape)


class Tape:
    """Records primitives in creation order; backward walks them reversed."""

    def __init__(self):
        self._parents = []
        self._vjps = []
        self._grads = None

    def __len__(self):
        return len(self._parents)

    def record(self, data, parents=(), vjp=None, needs_grad=None):
        """Append one node.  vjp(adjoint) yields one array (or None) per parent."""
        data = np.asarray(data, dtype=np.float64)
        if needs_grad is None:
            needs_grad = any(p.needs_grad for p in parents)
        if not needs_grad:
            parents, vjp = (), None
        v = Var(self, len(self._parents), data, needs_grad)
        self._parents.append(tuple(parents))
        self._vjps.append(vjp)
        return v

    def leaf(self, data):
        """A differentiable input (parameter block view)."""
        return self.record(data, needs_grad=True)

    def constant(self, data):
        return self.record(data, needs_grad=False)

    def _wrap(self, x):
        if isinstance(x, Var):
            if x.tape is not self:
                raise ValueError("mixing Vars from different tapes")
            return x
        return self.constant(x)

    # ------------------------------------------------------------------
    # backward

    def backward(self, loss):
        if loss.data.size != 1:
            raise ValueError("backward expects a scalar loss")
        grads = [None] * len(self._parents)
        grads[loss.idx] = np.ones_like(loss.data)
        for idx in range(loss.idx, -1, -1):
            g = grads[idx]
            vjp = self._vjps[idx]
            if g is None or vjp is None:
                continue
            for parent, pg in zip(self._parents[idx], vjp(g)):
                if pg is None or not parent.needs_grad:
                    continue
                pg = _unbroadcast(np.asarray(pg, dtype=np.float64), parent.data.shape)
                if grads[parent.idx] is None:
                    grads[parent.idx] = pg
                else:
                    grads[parent.idx] = grads[parent.idx] + pg
        self._grads = grads

    def grad_of(self, v):
        if self._grads is None:
            raise RuntimeError("backward has not been run on this tape")
        g = self._grads[v.idx]
        if g is None:
            return np.zeros_like(v.data)
        return g

    def release(self):
        """Drop the recorded graph once its gradients have been consumed.

        A tape and its Vars reference each other, so a spent per-batch
        graph only frees on a full cycle-collector pass; at hundreds of
        MB per batch that lag adds up to an OOM kill over a long run.
        Releasing cuts the tape->Var edges and lets plain refcounting
        reclaim everything as soon as the caller drops its handles.
        """
        self._parents = []
        self._vjps = []
        self._grads = None

    # ------------------------------------------------------------------
    # elementwise primitives (broadcasting, reduced in _unbroadcast)

    def add(self, a, b):
        a, b = self._wrap(a), self._wrap(b)
        return self.record(a.data + b.data, (a, b), lambda g: (g, g))

    def sub(self, a, b):
        a, b = self._wrap(a), self._wrap(b)
        return self.record(a.data - b.data, (a, b), lambda g: (g, -g))

    def mul(self, a, b):
        a, b = self._wrap(a), self._wrap(b)
        da, db = a.data, b.data
        return self.record(da * db, (a, b), lambda g: (g * db, g * da))

    def div(self, a, b):
        a, b = self._wrap(a), self._wrap(b)
        db = b.data
        out = a.data / db
        return self.record(out, (a, b), lambda g: (g / db, -g * out / db))

    def exp(self, a):
        a = self._wrap(a)
        out = np.exp(a.data)
        return self.record(out, (a,), lambda g: (g * out,))

    def ln1p_exp(self, a):
        """Stable softplus ln(1 + exp(a)); derivative is sigmoid(a)."""
        a = self._wrap(a)
        x = a.data
        out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
        return self.record(out, (a,), lambda g: (g * _sigmoid_np(x),))

    def sigmoid(self, a):
        a = self._wrap(a)
        out = _sigmoid_np(a.data)
        return self.record(out, (a,), lambda g: (g * out * (1.0 - out),))

    def power(self, a, p):
        """a ** p for a constant exponent p (caller keeps the base positive)."""
        a = self._wrap(a)
        p = float(p)
        x = a.data
        return self.record(x**p, (a,), lambda g: (g * p * x ** (p - 1.0),))

    def clamp(self, a, lo, hi):
        """np.clip; adjoint passes only strictly inside (lo, hi)."""
        a = self._wrap(a)
        x = a.data
        mask = (x > lo) & (x < hi)
        return self.record(np.clip(x, lo, hi), (a,), lambda g: (g * mask,))

    def where(self, cond, a, b):
        cond = np.asarray(cond, dtype=bool)
        a, b = self._wrap(a), self._wrap(b)
        out = np.where(cond, a.data, b.data)
        return self.record(out, (a, b), lambda g: (g * cond, g * ~cond))

    # ------------------------------------------------------------------
    # reductions / structure

    def sum(self, a, axis=None, keepdims=False):
        a = self._wrap(a)
        out = a.data.sum(axis=axis, keepdims=keepdims)
        shape = a.data.shape

        def vjp(g):
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            return (np.broadcast_to(gg, shape),)

        return self.record(out, (a,), vjp)

    def reshape(self, a, *shape):
        a = self._wrap(a)
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        orig = a.data.shape
        return self.record(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))

    def dot(self, a, b):
        """Inner product along the last axis, keepdims so results broadcast back."""
        a, b = self._wrap(a), self._wrap(b)
        da, db = a.data, b.data
        out = (da * db).sum(axis=-1, keepdims=True)
        return self.record(out, (a, b), lambda g: (g * db, g * da))

    def normalize_eps(self, v, eps=1e-12):
        """v / sqrt(|v|^2 + eps) along the last axis; finite gradient at v = 0."""
        v = self._wrap(v)
        x = v.data
        r = 1.0 / np.sqrt((x * x).sum(axis=-1, keepdims=True) + eps)
        out = x * r

        def vjp(g):
            gv = (g * x).sum(axis=-1, keepdims=True)
            return (g * r - x * (r**3) * gv,)

        return self.record(out, (v,), vjp)

    def cumsum_exclusive(self, a, axis):
        """y_k = sum_{j<k} x_j along `axis` (y_0 = 0)."""
        a = self._wrap(a)
        x = np.moveaxis(a.data, axis, -1)
        out = np.zeros_like(x)
        np.cumsum(x[..., :-1], axis=-1, out=out[..., 1:])

        def vjp(g):
            gm = np.moveaxis(g, axis, -1)
            # adjoint of an exclusive prefix sum is an exclusive suffix sum
            tail = gm.sum(axis=-1, keepdims=True) - np.cumsum(gm, axis=-1)
            return (np.moveaxis(tail, -1, axis),)

        return self.record(np.moveaxis(out, -1, axis), (a,), vjp)

    def stop_gradient(self, a):
        """Identity forward; backward contributes nothing to the input."""
        a = self._wrap(a)
        return self.record(a.data, (), None, needs_grad=False)

    # ------------------------------------------------------------------
    # renderer-specific primitives

    def composite(self, s):
        """Rendering weights from per-segment optical thickness s = sigma * delta.

        Along the last axis: w_k = T_k (1 - exp(-s_k)) with the exclusive
        accumulation T_k = exp(-sum_{j<k} s_j).  The adjoint is
        s_bar_i = g_i T_i exp(-s_i) - sum_{k>i} g_k w_k, evaluated with one
        reversed cumulative sum.
        """
        s = self._wrap(s)
        x = s.data
        prefix = np.zeros_like(x)
        np.cumsum(x[..., :-1], axis=-1, out=prefix[..., 1:])
        trans = np.exp(-prefix)
        occ = np.exp(-x)
        w = trans * (1.0 - occ)

        def vjp(g):
            gw = g * w
            suffix = np.cumsum(gw[..., ::-1], axis=-1)[..., ::-1]  # sum_{k>=i}
            return (g * (trans * occ) - (suffix - gw),)

        return self.record(w, (s,), vjp)

    def gather(self, grid, co):
        """Trilinear interpolation of grid (V, C) at a precomputed stencil.

        co carries (M, 8) corner indices and weights (see grids.interp_coeffs);
        the adjoint scatter-adds into the grid with bincount per channel.
        """
        grid = self._wrap(grid)
        vals = grid.data[co.idx]  # (M, 8, C)
        out = np.einsum("mkc,mk->mc", vals, co.weights)
        nvert = grid.data.shape[0]

        def vjp(g):
            nch = g.shape[1]
            contrib = (g[:, None, :] * co.weights[:, :, None]).reshape(-1, nch)
            flat = co.idx.ravel()
            acc = np.empty((nvert, nch))
            for c in range(nch):
                acc[:, c] = np.bincount(flat, weights=contrib[:, c], minlength=nvert)
            return (acc,)

        return self.record(out, (grid,), vjp)

    def gather_grad(self, grid, co):
        """Spatial gradient of the trilinear interpolant: (M, C, 3)."""
        grid = self._wrap(grid)
        vals = grid.data[co.idx]  # (M, 8, C)
        out = np.einsum("mkc,mak->mca", vals, co.dweights)
        nvert = grid.data.shape[0]

        def vjp(g):
            nch = g.shape[1]
            contrib = np.einsum("mca,mak->mkc", g, co.dweights).reshape(-1, nch)
            flat = co.idx.ravel()
            acc = np.empty((nvert, nch))
            for c in range(nch):
                acc[:, c] = np.bincount(flat, weights=contrib[:, c], minlength=nvert)
            return (acc,)

        return self.record(out, (grid,), vjp)


# ----------------------------------------------------------------------
# functional sugar so rendering code reads like math


def exp(x):
    return x.tape.exp(x)


def ln1p_exp(x):
    return x.tape.ln1p_exp(x)


def sigmoid(x):
    return x.tape.sigmoid(x)


def power(x, p):
    return x.tape.power(x, p)


def dot(a, b):
    return a.tape.dot(a, b)


def normalize_eps(v, eps=1e-12):
    return v.tape.normalize_eps(v, eps=eps)


def clamp(x, lo, hi):
    return x.tape.clamp(x, lo, hi)


def where(cond, a, b):
    tape = a.tape if isinstance(a, Var) else b.tape
    return tape.where(cond, a, b)


def cumsum_exclusive(x, axis):
    return x.tape.cumsum_exclusive(x, axis)


def stop_gradient(x):
    return x.tape.stop_gradient(x)


def composite(s):
    return s.tape.composite(s)


# ----------------------------------------------------------------------
# finite-difference verification


def fd_check(f, params, grads, rel_h=1e-4, max_coords=200, seed=0):
    """Max relative error between analytic gradients and central differences.

    f(params) -> float must be a pure function of the arrays in `params`
    (it is re-evaluated at perturbed points; entries are mutated in place
    and restored).  grads maps the same names to analytic gradients.
    Blocks larger than max_coords are subsampled; coordinates where the
    analytic gradient magnitude is <= 1e-8 are skipped.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, x in params.items():
        g = grads.get(name)
        if g is None:
            continue
        n = x.size
        if n <= max_coords:
            coords = np.arange(n)
        else:
            coords = np.sort(rng.choice(n, size=max_coords, replace=False))
        for i in coords:
            a = float(g.flat[i])
            if abs(a) <= 1e-8:
                continue
            x0 = float(x.flat[i])
            h = rel_h * max(1.0, abs(x0))
            x.flat[i] = x0 + h
            fp = f(params)
            x.flat[i] = x0 - h
            fm = f(params)
            x.flat[i] = x0
            fd = (fp - fm) / (2.0 * h)
            err = abs(fd - a) / max(abs(a), abs(fd))
            worst = max(worst, err)
    return worst
