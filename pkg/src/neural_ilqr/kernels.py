"""Hot numeric kernels, numba-compiled or pure numpy (see :mod:`.backend`).

Everything here works on plain float64 arrays so the same source compiles
under ``numba.njit`` and runs unchanged without it. Network parameters are
packed into flat vectors; weight matrices are stored (fan_in, fan_out) so
batch products are ``Z @ W``.
"""

import numpy as np

from .backend import jit_kernel

CARTPOLE_CODE = 0
BICYCLE_CODE = 1

ACT_RELU = 0
ACT_TANH = 1

BN_EPS = 1e-5


# ---------------------------------------------------------------------------
# plants
# ---------------------------------------------------------------------------

@jit_kernel
def plant_step(code, par, x, u):
    """One dt step of the plant identified by ``code``.

    par packs the physical parameters:
      cartpole: [cart_mass, pole_mass, pole_half_length, gravity, dt],
                state [theta, omega, pos, vel], action [force];
                semi-implicit Euler (velocities first).
      bicycle:  [wheelbase, dt], state [px, py, heading, speed],
                action [steer, accel]; forward Euler.
    """
    out = np.empty(4)
    if code == CARTPOLE_CODE:
        big_m = par[0]
        small_m = par[1]
        half_l = par[2]
        grav = par[3]
        dt = par[4]
        theta = x[0]
        omega = x[1]
        pos = x[2]
        vel = x[3]
        force = u[0]
        total = big_m + small_m
        sin_t = np.sin(theta)
        cos_t = np.cos(theta)
        # frictionless cart-pole, theta = 0 is the upright position
        omega_dot = (grav * sin_t + cos_t * (-force - small_m * half_l * omega * omega * sin_t) / total) / (
            half_l * (4.0 / 3.0 - small_m * cos_t * cos_t / total)
        )
        vel_dot = (force + small_m * half_l * (omega * omega * sin_t - omega_dot * cos_t)) / total
        omega_new = omega + dt * omega_dot
        vel_new = vel + dt * vel_dot
        out[0] = theta + dt * omega_new
        out[1] = omega_new
        out[2] = pos + dt * vel_new
        out[3] = vel_new
    else:
        wheelbase = par[0]
        dt = par[1]
        heading = x[2]
        speed = x[3]
        out[0] = x[0] + dt * speed * np.cos(heading)
        out[1] = x[1] + dt * speed * np.sin(heading)
        out[2] = heading + dt * speed * np.tan(u[0]) / wheelbase
        out[3] = speed + dt * u[1]
    return out


@jit_kernel
def open_loop_rollout(code, par, x0, us):
    """Roll actions through the plant. Returns (states, bad_t); bad_t is the
    first timestep producing a non-finite state, -1 when clean."""
    horizon = us.shape[0]
    n = x0.shape[0]
    xs = np.zeros((horizon + 1, n))
    xs[0] = x0
    for t in range(horizon):
        nxt = plant_step(code, par, xs[t], us[t])
        if not np.isfinite(nxt).all():
            return xs, t
        xs[t + 1] = nxt
    return xs, -1


@jit_kernel
def closed_loop_rollout(code, par, xs_nom, us_nom, ks, big_ks, alpha):
    """Gain-perturbed rollout u = u_nom + alpha*k + K (x - x_nom) through the
    plant. Returns (states, actions, bad_t)."""
    horizon = us_nom.shape[0]
    n = xs_nom.shape[1]
    m = us_nom.shape[1]
    xs = np.zeros((horizon + 1, n))
    us = np.zeros((horizon, m))
    xs[0] = xs_nom[0]
    for t in range(horizon):
        dx = xs[t] - xs_nom[t]
        u = us_nom[t] + alpha * ks[t] + np.dot(big_ks[t], dx)
        if not np.isfinite(u).all():
            return xs, us, t
        us[t] = u
        nxt = plant_step(code, par, xs[t], u)
        if not np.isfinite(nxt).all():
            return xs, us, t
        xs[t + 1] = nxt
    return xs, us, -1


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

@jit_kernel
def _cholesky_lower(a):
    """Cholesky of a symmetric matrix; returns (L, ok). Hand-rolled so a
    non-PD pivot reports failure instead of raising inside compiled code."""
    m = a.shape[0]
    lower = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1):
            acc = a[i, j]
            for p in range(j):
                acc -= lower[i, p] * lower[j, p]
            if i == j:
                if acc <= 0.0:
                    return lower, False
                lower[i, i] = np.sqrt(acc)
            else:
                lower[i, j] = acc / lower[j, j]
    return lower, True


@jit_kernel
def _cholesky_solve(lower, rhs):
    """Solve (L L^T) X = rhs for a 2-d rhs."""
    m = lower.shape[0]
    cols = rhs.shape[1]
    x = np.zeros((m, cols))
    for c in range(cols):
        for i in range(m):
            acc = rhs[i, c]
            for p in range(i):
                acc -= lower[i, p] * x[p, c]
            x[i, c] = acc / lower[i, i]
        for i in range(m - 1, -1, -1):
            acc = x[i, c]
            for p in range(i + 1, m):
                acc -= lower[p, i] * x[p, c]
            x[i, c] = acc / lower[i, i]
    return x


@jit_kernel
def lqr_backward(fx, fu, jx, ju, jxx, juu, jux, vx_term, vxx_term, mu):
    """Time-reversed gain recursion over a linearization schedule.

    Second-order dynamics terms are structurally absent: the recursion only
    consumes per-step Jacobians (fx, fu). Gains come from the mu-regularized
    control Hessian; the value recursion uses the unregularized one.

    Returns (ks, Ks, dv1, dv2, fail_t) with dv1 = sum k'Q_u and
    dv2 = 0.5 sum k'Q_uu k, so the predicted decrease at step size a is
    -(a*dv1 + a^2*dv2). fail_t >= 0 flags the timestep where the regularized
    control Hessian lost positive definiteness.
    """
    horizon = fx.shape[0]
    n = fx.shape[1]
    m = fu.shape[2]
    ks = np.zeros((horizon, m))
    big_ks = np.zeros((horizon, m, n))
    vx = vx_term.copy()
    vxx = vxx_term.copy()
    dv1 = 0.0
    dv2 = 0.0
    eye_m = np.eye(m)
    for t in range(horizon - 1, -1, -1):
        a = fx[t]
        b = fu[t]
        qx = jx[t] + np.dot(a.T, vx)
        qu = ju[t] + np.dot(b.T, vx)
        vxx_a = np.dot(vxx, a)
        qxx = jxx[t] + np.dot(a.T, vxx_a)
        qux = jux[t] + np.dot(b.T, vxx_a)
        quu = juu[t] + np.dot(b.T, np.dot(vxx, b))
        qxx = 0.5 * (qxx + qxx.T)
        quu = 0.5 * (quu + quu.T)
        lower, ok = _cholesky_lower(quu + mu * eye_m)
        if not ok:
            return ks, big_ks, 0.0, 0.0, t
        rhs = np.zeros((m, n + 1))
        rhs[:, 0] = qu
        rhs[:, 1:] = qux
        sol = _cholesky_solve(lower, rhs)
        k = -sol[:, 0]
        big_k = -sol[:, 1:]
        ks[t] = k
        big_ks[t] = big_k
        quu_k = np.dot(quu, k)
        vx = qx + np.dot(big_k.T, quu_k) + np.dot(big_k.T, qu) + np.dot(qux.T, k)
        vxx = qxx + np.dot(big_k.T, np.dot(quu, big_k)) + np.dot(big_k.T, qux) + np.dot(qux.T, big_k)
        vxx = 0.5 * (vxx + vxx.T)
        dv1 += np.dot(k, qu)
        dv2 += 0.5 * np.dot(k, quu_k)
    return ks, big_ks, dv1, dv2, -1


# ---------------------------------------------------------------------------
# fully connected networks (exactly three linear layers)
# ---------------------------------------------------------------------------

@jit_kernel
def _act_apply(act, a):
    if act == ACT_RELU:
        return np.maximum(a, 0.0)
    return np.tanh(a)


@jit_kernel
def mlp3_forward_batch(theta, widths, act, z):
    """Batch forward through linear-act-linear-act-linear."""
    d0 = widths[0]
    h1 = widths[1]
    h2 = widths[2]
    d3 = widths[3]
    o = 0
    w1 = theta[o:o + d0 * h1].reshape(d0, h1)
    o += d0 * h1
    b1 = theta[o:o + h1]
    o += h1
    w2 = theta[o:o + h1 * h2].reshape(h1, h2)
    o += h1 * h2
    b2 = theta[o:o + h2]
    o += h2
    w3 = theta[o:o + h2 * d3].reshape(h2, d3)
    o += h2 * d3
    b3 = theta[o:o + d3]
    hid1 = _act_apply(act, np.dot(z, w1) + b1)
    hid2 = _act_apply(act, np.dot(hid1, w2) + b2)
    return np.dot(hid2, w3) + b3


@jit_kernel
def mlp3_jacobian_batch(theta, widths, act, z):
    """Input Jacobians of the batch forward map, one (d_out, d_in) matrix per
    row of z, by forward accumulation."""
    d0 = widths[0]
    h1 = widths[1]
    h2 = widths[2]
    d3 = widths[3]
    o = 0
    w1 = theta[o:o + d0 * h1].reshape(d0, h1)
    o += d0 * h1
    b1 = theta[o:o + h1]
    o += h1
    w2 = theta[o:o + h1 * h2].reshape(h1, h2)
    o += h1 * h2
    b2 = theta[o:o + h2]
    o += h2
    w3 = theta[o:o + h2 * d3].reshape(h2, d3)
    o += h2 * d3
    batch = z.shape[0]
    jac = np.empty((batch, d3, d0))
    for s in range(batch):
        a1 = np.dot(z[s], w1) + b1
        jcur = w1.T.copy()
        for i in range(h1):
            if act == ACT_RELU:
                g = 1.0 if a1[i] > 0.0 else 0.0
            else:
                th = np.tanh(a1[i])
                g = 1.0 - th * th
            for c in range(d0):
                jcur[i, c] *= g
        hid1 = _act_apply(act, a1)
        a2 = np.dot(hid1, w2) + b2
        jnext = np.dot(w2.T, jcur)
        for i in range(h2):
            if act == ACT_RELU:
                g = 1.0 if a2[i] > 0.0 else 0.0
            else:
                th = np.tanh(a2[i])
                g = 1.0 - th * th
            for c in range(d0):
                jnext[i, c] *= g
        jac[s] = np.dot(w3.T, jnext)
    return jac


@jit_kernel
def _adam_update(theta, grad, adam_m, adam_v, step, lr, beta1, beta2, eps):
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    for i in range(theta.size):
        g = grad[i]
        adam_m[i] = beta1 * adam_m[i] + (1.0 - beta1) * g
        adam_v[i] = beta2 * adam_v[i] + (1.0 - beta2) * g * g
        theta[i] -= lr * (adam_m[i] / c1) / (np.sqrt(adam_v[i] / c2) + eps)


@jit_kernel
def mlp3_train_epoch(theta, adam_m, adam_v, step0, widths, act, x, y, order,
                     batch_size, lr, beta1, beta2, eps):
    """One epoch of minibatch Adam on mean-squared error, parameters updated
    in place. Returns (epoch mse over the pass, new adam step count)."""
    d0 = widths[0]
    h1 = widths[1]
    h2 = widths[2]
    d3 = widths[3]
    o_w1 = 0
    o_b1 = o_w1 + d0 * h1
    o_w2 = o_b1 + h1
    o_b2 = o_w2 + h1 * h2
    o_w3 = o_b2 + h2
    o_b3 = o_w3 + h2 * d3
    total = x.shape[0]
    grad = np.zeros_like(theta)
    sq_sum = 0.0
    step = step0
    nb = (total + batch_size - 1) // batch_size
    for ib in range(nb):
        lo = ib * batch_size
        hi = min(total, lo + batch_size)
        idx = order[lo:hi]
        zb = x[idx]
        yb = y[idx]
        b = zb.shape[0]
        w1 = theta[o_w1:o_w1 + d0 * h1].reshape(d0, h1)
        b1 = theta[o_b1:o_b1 + h1]
        w2 = theta[o_w2:o_w2 + h1 * h2].reshape(h1, h2)
        b2 = theta[o_b2:o_b2 + h2]
        w3 = theta[o_w3:o_w3 + h2 * d3].reshape(h2, d3)
        b3 = theta[o_b3:o_b3 + d3]
        a1 = np.dot(zb, w1) + b1
        hid1 = _act_apply(act, a1)
        a2 = np.dot(hid1, w2) + b2
        hid2 = _act_apply(act, a2)
        pred = np.dot(hid2, w3) + b3
        resid = pred - yb
        sq_sum += np.sum(resid * resid)
        dpred = resid * (2.0 / (b * d3))
        dw3 = np.dot(hid2.T, dpred)
        db3 = np.sum(dpred, axis=0)
        dhid2 = np.dot(dpred, w3.T)
        if act == ACT_RELU:
            da2 = np.where(a2 > 0.0, dhid2, 0.0)
        else:
            da2 = dhid2 * (1.0 - hid2 * hid2)
        dw2 = np.dot(hid1.T, da2)
        db2 = np.sum(da2, axis=0)
        dhid1 = np.dot(da2, w2.T)
        if act == ACT_RELU:
            da1 = np.where(a1 > 0.0, dhid1, 0.0)
        else:
            da1 = dhid1 * (1.0 - hid1 * hid1)
        dw1 = np.dot(zb.T, da1)
        db1 = np.sum(da1, axis=0)
        grad[o_w1:o_b1] = dw1.ravel()
        grad[o_b1:o_w2] = db1
        grad[o_w2:o_b2] = dw2.ravel()
        grad[o_b2:o_w3] = db2
        grad[o_w3:o_b3] = dw3.ravel()
        grad[o_b3:o_b3 + d3] = db3
        step += 1
        _adam_update(theta, grad, adam_m, adam_v, step, lr, beta1, beta2, eps)
    return sq_sum / (total * d3), step


# ---------------------------------------------------------------------------
# residual network: projected block + 3 identity blocks + linear head,
# batch norm + relu ahead of every linear layer
# ---------------------------------------------------------------------------

@jit_kernel
def _bn_infer(z, gamma, beta, rmean, rvar):
    scale = gamma / np.sqrt(rvar + BN_EPS)
    return (z - rmean) * scale + beta


@jit_kernel
def _bn_train(z, gamma, beta):
    b = z.shape[0]
    mean = np.sum(z, axis=0) / b
    centered = z - mean
    var = np.sum(centered * centered, axis=0) / b
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = centered * inv_std
    return xhat * gamma + beta, xhat, inv_std, mean, var


@jit_kernel
def _bn_backward(da, xhat, inv_std, gamma):
    b = da.shape[0]
    dgamma = np.sum(da * xhat, axis=0)
    dbeta = np.sum(da, axis=0)
    dxhat = da * gamma
    sum_dxhat = np.sum(dxhat, axis=0)
    sum_dxhat_xhat = np.sum(dxhat * xhat, axis=0)
    dz = (inv_std / b) * (b * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
    return dz, dgamma, dbeta


@jit_kernel
def res_forward_batch(theta, stats, offs, soffs, d_in, width, d_out, z):
    """Inference-mode batch forward (running batch-norm statistics)."""
    proj = theta[offs[0]:offs[0] + d_in * width].reshape(d_in, width)
    cur = z
    skip = np.dot(cur, proj)
    for blk in range(4):
        d = d_in if blk == 0 else width
        g = theta[offs[1 + 4 * blk]:offs[1 + 4 * blk] + d]
        be = theta[offs[2 + 4 * blk]:offs[2 + 4 * blk] + d]
        w = theta[offs[3 + 4 * blk]:offs[3 + 4 * blk] + d * width].reshape(d, width)
        bb = theta[offs[4 + 4 * blk]:offs[4 + 4 * blk] + width]
        rm = stats[soffs[2 * blk]:soffs[2 * blk] + d]
        rv = stats[soffs[2 * blk + 1]:soffs[2 * blk + 1] + d]
        h = np.maximum(_bn_infer(cur, g, be, rm, rv), 0.0)
        cur = skip + np.dot(h, w) + bb
        skip = cur
    gh = theta[offs[17]:offs[17] + width]
    beh = theta[offs[18]:offs[18] + width]
    wo = theta[offs[19]:offs[19] + width * d_out].reshape(width, d_out)
    bo = theta[offs[20]:offs[20] + d_out]
    rmh = stats[soffs[8]:soffs[8] + width]
    rvh = stats[soffs[9]:soffs[9] + width]
    hh = np.maximum(_bn_infer(cur, gh, beh, rmh, rvh), 0.0)
    return np.dot(hh, wo) + bo


@jit_kernel
def res_jacobian_batch(theta, stats, offs, soffs, d_in, width, d_out, z):
    """Inference-mode input Jacobians, (d_out, d_in) per sample; frozen batch
    norm enters as a constant per-feature scale."""
    proj = theta[offs[0]:offs[0] + d_in * width].reshape(d_in, width)
    batch = z.shape[0]
    jac = np.empty((batch, d_out, d_in))
    for s in range(batch):
        cur = z[s]
        jcur = np.eye(d_in)
        skip = np.dot(cur, proj)
        jskip = proj.T.copy()
        for blk in range(4):
            d = d_in if blk == 0 else width
            g = theta[offs[1 + 4 * blk]:offs[1 + 4 * blk] + d]
            be = theta[offs[2 + 4 * blk]:offs[2 + 4 * blk] + d]
            w = theta[offs[3 + 4 * blk]:offs[3 + 4 * blk] + d * width].reshape(d, width)
            bb = theta[offs[4 + 4 * blk]:offs[4 + 4 * blk] + width]
            rm = stats[soffs[2 * blk]:soffs[2 * blk] + d]
            rv = stats[soffs[2 * blk + 1]:soffs[2 * blk + 1] + d]
            scale = g / np.sqrt(rv + BN_EPS)
            a = (cur - rm) * scale + be
            jmasked = np.empty((d, d_in))
            for i in range(d):
                gate = scale[i] if a[i] > 0.0 else 0.0
                for c in range(d_in):
                    jmasked[i, c] = gate * jcur[i, c]
            jcur = jskip + np.dot(w.T, jmasked)
            h = np.maximum(a, 0.0)
            cur = skip + np.dot(h, w) + bb
            skip = cur
            jskip = jcur
        gh = theta[offs[17]:offs[17] + width]
        beh = theta[offs[18]:offs[18] + width]
        wo = theta[offs[19]:offs[19] + width * d_out].reshape(width, d_out)
        rmh = stats[soffs[8]:soffs[8] + width]
        rvh = stats[soffs[9]:soffs[9] + width]
        scale_h = gh / np.sqrt(rvh + BN_EPS)
        ah = (cur - rmh) * scale_h + beh
        jmasked = np.empty((width, d_in))
        for i in range(width):
            gate = scale_h[i] if ah[i] > 0.0 else 0.0
            for c in range(d_in):
                jmasked[i, c] = gate * jcur[i, c]
        jac[s] = np.dot(wo.T, jmasked)
    return jac


@jit_kernel
def res_train_epoch(theta, stats, adam_m, adam_v, step0, offs, soffs,
                    d_in, width, d_out, x, y, order, batch_size,
                    lr, beta1, beta2, eps, bn_momentum):
    """One epoch of minibatch Adam for the residual net. Batch-norm layers use
    minibatch statistics and update the running statistics in place."""
    total = x.shape[0]
    grad = np.zeros_like(theta)
    sq_sum = 0.0
    step = step0
    nb = (total + batch_size - 1) // batch_size
    for ib in range(nb):
        lo = ib * batch_size
        hi = min(total, lo + batch_size)
        idx = order[lo:hi]
        zb = x[idx]
        yb = y[idx]
        b = zb.shape[0]

        proj = theta[offs[0]:offs[0] + d_in * width].reshape(d_in, width)
        # forward, stashing per-block tensors for the backward sweep
        ins = [zb]
        xhats = []
        istds = []
        acts = []
        hids = []
        cur = zb
        skip = np.dot(cur, proj)
        for blk in range(4):
            d = d_in if blk == 0 else width
            g = theta[offs[1 + 4 * blk]:offs[1 + 4 * blk] + d]
            be = theta[offs[2 + 4 * blk]:offs[2 + 4 * blk] + d]
            w = theta[offs[3 + 4 * blk]:offs[3 + 4 * blk] + d * width].reshape(d, width)
            bb = theta[offs[4 + 4 * blk]:offs[4 + 4 * blk] + width]
            a, xhat, inv_std, mean, var = _bn_train(cur, g, be)
            stats[soffs[2 * blk]:soffs[2 * blk] + d] = (
                (1.0 - bn_momentum) * stats[soffs[2 * blk]:soffs[2 * blk] + d] + bn_momentum * mean
            )
            stats[soffs[2 * blk + 1]:soffs[2 * blk + 1] + d] = (
                (1.0 - bn_momentum) * stats[soffs[2 * blk + 1]:soffs[2 * blk + 1] + d] + bn_momentum * var
            )
            h = np.maximum(a, 0.0)
            nxt = skip + np.dot(h, w) + bb
            xhats.append(xhat)
            istds.append(inv_std)
            acts.append(a)
            hids.append(h)
            ins.append(nxt)
            cur = nxt
            skip = nxt
        gh = theta[offs[17]:offs[17] + width]
        beh = theta[offs[18]:offs[18] + width]
        wo = theta[offs[19]:offs[19] + width * d_out].reshape(width, d_out)
        bo = theta[offs[20]:offs[20] + d_out]
        ah, xhat_h, inv_std_h, mean_h, var_h = _bn_train(cur, gh, beh)
        stats[soffs[8]:soffs[8] + width] = (
            (1.0 - bn_momentum) * stats[soffs[8]:soffs[8] + width] + bn_momentum * mean_h
        )
        stats[soffs[9]:soffs[9] + width] = (
            (1.0 - bn_momentum) * stats[soffs[9]:soffs[9] + width] + bn_momentum * var_h
        )
        hh = np.maximum(ah, 0.0)
        pred = np.dot(hh, wo) + bo

        resid = pred - yb
        sq_sum += np.sum(resid * resid)
        dpred = resid * (2.0 / (b * d_out))
        dwo = np.dot(hh.T, dpred)
        dbo = np.sum(dpred, axis=0)
        dhh = np.dot(dpred, wo.T)
        dah = np.where(ah > 0.0, dhh, 0.0)
        dcur, dgh, dbeh = _bn_backward(dah, xhat_h, inv_std_h, gh)
        grad[offs[17]:offs[17] + width] = dgh
        grad[offs[18]:offs[18] + width] = dbeh
        grad[offs[19]:offs[19] + width * d_out] = dwo.ravel()
        grad[offs[20]:offs[20] + d_out] = dbo

        for blk in range(3, -1, -1):
            d = d_in if blk == 0 else width
            g = theta[offs[1 + 4 * blk]:offs[1 + 4 * blk] + d]
            w = theta[offs[3 + 4 * blk]:offs[3 + 4 * blk] + d * width].reshape(d, width)
            dz = dcur
            dw = np.dot(hids[blk].T, dz)
            db = np.sum(dz, axis=0)
            dh = np.dot(dz, w.T)
            da = np.where(acts[blk] > 0.0, dh, 0.0)
            dbn, dg, dbe = _bn_backward(da, xhats[blk], istds[blk], g)
            grad[offs[1 + 4 * blk]:offs[1 + 4 * blk] + d] = dg
            grad[offs[2 + 4 * blk]:offs[2 + 4 * blk] + d] = dbe
            grad[offs[3 + 4 * blk]:offs[3 + 4 * blk] + d * width] = dw.ravel()
            grad[offs[4 + 4 * blk]:offs[4 + 4 * blk] + width] = db
            if blk == 0:
                dproj = np.dot(ins[0].T, dcur)
                grad[offs[0]:offs[0] + d_in * width] = dproj.ravel()
            else:
                dcur = dcur + dbn

        step += 1
        _adam_update(theta, grad, adam_m, adam_v, step, lr, beta1, beta2, eps)
    return sq_sum / (total * d_out), step
