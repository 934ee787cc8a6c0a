"""Plain-numpy forward passes and the original two-generator objective.

Written against the architecture description only, with no use of the
package's tape, im2col path or loss helpers, so that agreement with the
package is evidence rather than tautology.
"""
import numpy as np

EPS = 1e-5


def conv(x, w, b, stride=1, pad=1):
    bsz, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.zeros((bsz, cin, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((bsz, cout, ho, wo))
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]
            out += np.einsum("oc,bchw->bohw", w[:, :, i, j], patch)
    return out + b[None, :, None, None]


def inorm(x, gain, shift):
    m = x.mean(axis=(2, 3), keepdims=True)
    v = ((x - m) ** 2).mean(axis=(2, 3), keepdims=True)
    return (x - m) / np.sqrt(v + EPS) * gain[None, :, None, None] + shift[None, :, None, None]


def relu(x):
    return np.maximum(x, 0.0)


def lrelu(x):
    return np.where(x > 0, x, 0.2 * x)


def generator(p, x):
    def block(name, h, stride=1):
        return relu(inorm(conv(h, p[f"{name}.weight"], p[f"{name}.bias"], stride),
                          p[f"{name}.norm.gain"], p[f"{name}.norm.shift"]))

    h = block("enc2", block("enc1", x), stride=2)
    for r in ("res1", "res2"):
        y = relu(inorm(conv(h, p[f"{r}.conv1.weight"], p[f"{r}.conv1.bias"]), p[f"{r}.norm1.gain"], p[f"{r}.norm1.shift"]))
        y = inorm(conv(y, p[f"{r}.conv2.weight"], p[f"{r}.conv2.bias"]), p[f"{r}.norm2.gain"], p[f"{r}.norm2.shift"])
        h = h + y
    h = h.repeat(2, axis=2).repeat(2, axis=3)
    return np.tanh(conv(block("dec1", h), p["out.weight"], p["out.bias"]))


def discriminator(p, x):
    h = lrelu(conv(x, p["c1.weight"], p["c1.bias"], 2))
    h = lrelu(inorm(conv(h, p["c2.weight"], p["c2.bias"], 2), p["c2.norm.gain"], p["c2.norm.shift"]))
    feats = lrelu(inorm(conv(h, p["c3.weight"], p["c3.bias"], 2), p["c3.norm.gain"], p["c3.norm.shift"]))
    return conv(feats, p["score.weight"], p["score.bias"]), feats


def lsgan_gen(scores):
    return np.mean((scores - 1.0) ** 2)


def lsgan_disc(real, fake):
    return 0.5 * (np.mean((real - 1.0) ** 2) + np.mean(fake ** 2))


def cyclegan_generator_loss(pg, pf, pdx, pdy, x, y, lam):
    """LSGAN(G, DY) + LSGAN(F, DX) + lam * (|F(G(x)) - x| + |G(F(y)) - y|), L1 mean-reduced."""
    gx, fy = generator(pg, x), generator(pf, y)
    adv = lsgan_gen(discriminator(pdy, gx)[0]) + lsgan_gen(discriminator(pdx, fy)[0])
    cyc_x = np.mean(np.abs(generator(pf, gx) - x))
    cyc_y = np.mean(np.abs(generator(pg, fy) - y))
    return adv + lam * (cyc_x + cyc_y), {"adv": adv, "cyc_x": cyc_x, "cyc_y": cyc_y}


def cyclegan_critic_losses(pg, pf, pdx, pdy, x, y):
    gx, fy = generator(pg, x), generator(pf, y)
    dx = lsgan_disc(discriminator(pdx, x)[0], discriminator(pdx, fy)[0])
    dy = lsgan_disc(discriminator(pdy, y)[0], discriminator(pdy, gx)[0])
    return dx, dy


def arrays(net):
    return {k: v.data.copy() for k, v in net.params.items()}
