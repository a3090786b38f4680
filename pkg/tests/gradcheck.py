"""Central-difference checks of the end-to-end loss against tape gradients."""
import numpy as np

from gisnet.autodiff import Tape, backward, relative_error
from gisnet.model import bind, forward_batch
from gisnet.train import mse_loss


def model_loss(params, samples, train=True):
    truth = np.stack([s.future for s in samples])
    return mse_loss(forward_batch(samples, params, train=train, rng=np.random.default_rng(0)), truth)


def tape_gradients(params, samples, train=True):
    with Tape() as tape:
        weights, tracked = bind(params, tape)
        truth = np.stack([s.future for s in samples])
        loss = mse_loss(forward_batch(samples, params, weights, train=train, rng=np.random.default_rng(0)), truth)
    g = backward(tape, loss)
    return {k: g[t] for k, t in tracked.items()}


def check_params(params, samples, per_tensor=None, seed=0, step=1e-5, train=True):
    """Max relative error per parameter tensor; ``per_tensor`` coordinates sampled (None = all)."""
    rng = np.random.default_rng(seed)
    grads = tape_gradients(params, samples, train)
    errors = {}
    for name, arr in params.arrays.items():
        flat = arr.reshape(-1)
        idx = np.arange(flat.size) if per_tensor is None or flat.size <= per_tensor else rng.choice(flat.size, per_tensor, replace=False)
        numeric = np.empty(len(idx))
        for n, i in enumerate(idx):
            keep = flat[i]
            flat[i] = keep + step
            fp = model_loss(params, samples, train).item()
            flat[i] = keep - step
            fm = model_loss(params, samples, train).item()
            flat[i] = keep
            numeric[n] = (fp - fm) / (2 * step)
        errors[name] = relative_error(grads[name].reshape(-1)[idx], numeric)
    return errors


def random_point(cfg, samples, seed):
    """Parameters moved off their initialisation so no ReLU sits on its kink."""
    from gisnet.model import fit_normalizer, init_params

    rng = np.random.default_rng(seed)
    p = init_params(cfg, rng)
    fit_normalizer(p, samples)
    for k in p.arrays:
        p.arrays[k] = p.arrays[k] + rng.normal(0, 0.1, p.arrays[k].shape)
    p.bn.mean = rng.normal(0, 0.1, p.bn.mean.shape)
    p.bn.var = rng.uniform(0.5, 1.5, p.bn.var.shape)
    return p


def primitive_cases(seed):
    """(name, scalar function, input) for every differentiable primitive."""
    from gisnet import autodiff as ad

    T = ad.Tensor
    rng = np.random.default_rng(seed)

    def weighted(y, k=0):
        w = np.random.default_rng(seed * 7 + k).normal(size=y.shape)
        return ad.sum_all(ad.mul(y, T(w)))

    x = rng.normal(size=(3, 4))
    x[np.abs(x) < 1e-3] += 2e-3  # keep relu and |x| off their kinks
    other, bias = T(rng.normal(size=(3, 4))), T(rng.normal(size=4))
    a, b, v = rng.normal(size=(4, 3)), rng.normal(size=(3, 2)), rng.normal(size=3)
    img, ker, kb = rng.normal(size=(2, 5, 5)), rng.normal(size=(4, 2, 3, 3)), rng.normal(size=4)
    d_in, d_h = 3, 4
    # fan-in scaled so the gates are not saturated; saturated entries have gradients near 1e-8
    # whose central differences are pure roundoff
    wx = rng.normal(0, d_in**-0.5, (d_in, 4 * d_h))
    wh = rng.normal(0, d_h**-0.5, (d_h, 4 * d_h))
    lb = rng.normal(0, 0.5, 4 * d_h)
    h0, c0 = rng.normal(size=d_h), rng.normal(size=d_h)
    bx, gamma, beta = rng.normal(size=(6, 3)), rng.normal(size=3), rng.normal(size=3)
    bn = ad.BatchNormState.fresh(3)

    def lstm(wx_=wx, wh_=wh, b_=lb, x_=v, h_=h0, c_=c0):
        w = ad.LSTMWeights(T(wx_) if not isinstance(wx_, T) else wx_, T(wh_) if not isinstance(wh_, T) else wh_,
                           T(b_) if not isinstance(b_, T) else b_)
        x_, h_, c_ = (t if isinstance(t, T) else T(t) for t in (x_, h_, c_))
        h1, c1 = ad.lstm_step(x_, (h_, c_), w)
        h2, c2 = ad.lstm_step(x_, (h1, c1), w)
        return ad.add(weighted(h2), weighted(c2, 1))

    return [
        ("add", lambda t: weighted(ad.add(t, other)), x),
        ("sub", lambda t: weighted(ad.sub(other, t)), x),
        ("mul", lambda t: weighted(ad.mul(t, other)), x),
        ("scale", lambda t: weighted(ad.scale(t, -1.7)), x),
        ("bias_add", lambda t: weighted(ad.bias_add(t, bias)), x),
        ("relu", lambda t: weighted(ad.relu(t)), x),
        ("sigmoid", lambda t: weighted(ad.sigmoid(t)), x),
        ("tanh", lambda t: weighted(ad.tanh(t)), x),
        ("square", lambda t: weighted(ad.square(t)), x),
        ("sqrt", lambda t: weighted(ad.sqrt(ad.square(t))), x),
        ("mean_all", lambda t: ad.mean_all(ad.square(t)), x),
        ("sum_axis", lambda t: weighted(ad.sum_axis(t, 1)), x),
        ("cumsum", lambda t: weighted(ad.cumsum(t, 1)), x),
        ("reshape", lambda t: weighted(ad.reshape(t, (2, 6))), x),
        ("transpose", lambda t: weighted(ad.transpose(t, (1, 0))), x),
        ("take_rows", lambda t: weighted(ad.take_rows(t, [2, 0, 2])), x),
        ("scatter_rows", lambda t: weighted(ad.scatter_rows(t, [4, 0, 2], 6)), x),
        ("stack", lambda t: weighted(ad.stack([t, ad.scale(t, 2.0)], axis=1)), x),
        ("concat", lambda t: weighted(ad.concat([t, other], axis=0)), x),
        ("matmul.left", lambda t: weighted(ad.matmul(t, T(b))), a),
        ("matmul.right", lambda t: weighted(ad.matmul(T(a), t)), b),
        ("dense.weight", lambda t: weighted(ad.dense(T(v), t, T(b[0]))), b),
        ("conv2d.input", lambda t: weighted(ad.conv2d(t, T(ker), T(kb))), img),
        ("conv2d.kernel", lambda t: weighted(ad.conv2d(T(img), t, T(kb))), ker),
        ("conv2d.bias", lambda t: weighted(ad.conv2d(T(img), T(ker), t)), kb),
        ("maxpool2d", lambda t: weighted(ad.maxpool2d(t, (2, 2))), rng.normal(size=(3, 6, 4))),
        ("lstm.w_x", lambda t: lstm(wx_=t), wx),
        ("lstm.w_h", lambda t: lstm(wh_=t), wh),
        ("lstm.bias", lambda t: lstm(b_=t), lb),
        ("lstm.x", lambda t: lstm(x_=t), v),
        ("lstm.h", lambda t: lstm(h_=t), h0),
        ("lstm.c", lambda t: lstm(c_=t), c0),
        ("dropout", lambda t: weighted(ad.dropout(t, 0.3, True, np.random.default_rng(seed))), x),
        ("batchnorm.input", lambda t: weighted(ad.batchnorm(t, T(gamma), T(beta), bn, True)), bx),
        ("batchnorm.gamma", lambda t: weighted(ad.batchnorm(T(bx), t, T(beta), bn, True)), gamma),
        ("batchnorm.beta", lambda t: weighted(ad.batchnorm(T(bx), T(gamma), t, bn, False)), beta),
    ]
