"""Finite-difference verification of every backward rule, net and objective.

Relative error is ``|a - n| / max(|a|, |n|, floor)``; the floor keeps
round-off on near-zero gradients (e.g. conv biases feeding instance norm,
whose true gradient is 0) from reading as large relative errors.

Small tensors are checked element by element.  Large parameter tensors are
checked along seeded random directions spanning all their elements plus a
seeded sample of individual elements; ``exhaustive=True`` checks every element.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import losses as L
from . import nets as N
from . import tensor as T
from .rng import SplitMix64, derive_seed

TOLERANCE = 1e-4
STEP = 1e-5
H_MIN = 1e-8
FLOOR = 1e-7
EPS = float(np.finfo(np.float64).eps)
ROUNDOFF_SLACK = 100.0
TOY_SIZE = 16  # smallest size whose last critic stage still has a 2x2 plane
SCOPES = ("ops", "nets", "losses", "full")


@dataclass
class CheckResult:
    scope: str
    component: str
    max_rel_err: float
    worst_index: int
    checked: int
    skipped: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_err < TOLERANCE

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.scope:<6} {self.component:<40} max_rel_err={self.max_rel_err:.3e} "
                f"worst_index={self.worst_index} checked={self.checked} kink_skipped={self.skipped}")


def _rel(a: float, n: float, floor: float) -> float:
    err = abs(a - n) / max(abs(a), abs(n), floor)
    return err if np.isfinite(err) else np.inf


def _floor(fval: float, h: float) -> float:
    # central-difference round-off is eps*|f|/h times the cancellation in f
    # (measured ~13 on the toy nets); allow ROUNDOFF_SLACK of it at TOLERANCE
    return max(FLOOR, ROUNDOFF_SLACK * EPS * abs(fval) / h / TOLERANCE)


def _central(f: Callable[[], T.Tensor], apply: Callable[[float], None], h: float):
    """(derivative, step used, |f| scale) or None when every step straddles a kink."""
    while True:
        apply(h)
        with T.record_kinks() as kp:
            fp = f().item()
        apply(-h)
        with T.record_kinks() as km:
            fm = f().item()
        apply(0.0)
        if kp == km:
            return (fp - fm) / (2.0 * h), h, max(abs(fp), abs(fm))
        if h / 10.0 < H_MIN:
            return None
        h /= 10.0


def _weighted(out: T.Tensor, weights: np.ndarray) -> T.Tensor:
    return T.sum_(T.mul(out, T.Tensor(weights)))


def check_tensor(f: Callable[[], T.Tensor], x: T.Tensor, *, rng: SplitMix64, samples: int | None = None,
                 directions: int = 2, h: float = STEP) -> tuple[float, int, int, int]:
    """Compare backward() with central differences for one leaf.

    ``f`` must rebuild the scalar loss from current leaf values.  Returns
    (max relative error, worst flat index or -1 for a direction, #checks,
    #probes skipped because no step down to H_MIN avoided a kink).
    """
    x.zero_grad()
    T.backward(f())
    analytic = x.grad.reshape(-1).copy()
    x.zero_grad()

    flat = x.data.reshape(-1)
    if samples is None or samples >= flat.size:
        idx = np.arange(flat.size)
        directions = 0
    else:
        idx = np.sort(rng.permutation(flat.size)[:samples])

    worst, worst_i, checks, skipped = 0.0, -1, 0, 0

    def record(a, probe, where):
        nonlocal worst, worst_i, checks, skipped
        if probe is None:
            skipped += 1
            return
        num, step, scale = probe
        err = _rel(a, num, _floor(scale, step))
        checks += 1
        if err >= worst:
            worst, worst_i = err, where

    for i in idx:
        orig = flat[i]

        def apply(s, i=i, orig=orig):
            flat[i] = orig + s

        record(analytic[i], _central(f, apply, h), int(i))
    for _ in range(directions):
        d = rng.normal(flat.shape)
        d /= np.linalg.norm(d)
        base = flat.copy()

        def apply(s, d=d, base=base):
            flat[:] = base + s * d

        record(float(analytic @ d), _central(f, apply, h), -1)
    return worst, worst_i, checks, skipped


def _away_from_zero(rng: SplitMix64, shape, margin: float = 0.05) -> np.ndarray:
    v = rng.uniform(int(np.prod(shape))).reshape(shape) * 2 - 1
    return np.where(np.abs(v) < margin, np.sign(v + 1e-12) * margin, v)


# ------------------------------------------------------------------------ ops


def _op_cases(rng: SplitMix64):
    """(component name, loss builder, leaves) for every differentiable op."""
    def leaf(shape, scale=1.0, away=False):
        data = _away_from_zero(rng, shape) if away else rng.normal(shape)
        return T.Tensor(data * scale, requires_grad=True)

    cases = []
    for stride in (1, 2):
        x, k, b = leaf((2, 2, 6, 6)), leaf((3, 2, 3, 3)), leaf((3,))
        ho = (6 + 2 - 3) // stride + 1
        w = rng.normal((2, 3, ho, ho))
        cases.append((f"conv2d[stride={stride}]",
                      (lambda x=x, k=k, b=b, s=stride, w=w: _weighted(T.conv2d(x, k, b, stride=s, pad=1), w)),
                      [x, k, b]))
    x = leaf((2, 2, 2, 3))
    w = rng.normal((2, 2, 4, 6))
    cases.append(("upsample_nearest", lambda x=x, w=w: _weighted(T.upsample_nearest(x, 2), w), [x]))
    for name in ("relu", "leaky_relu", "tanh", "sigmoid", "softplus"):
        x = leaf((3, 4), away=True)
        w = rng.normal((3, 4))
        fn = (lambda x=x, w=w, name=name: _weighted(getattr(T, name)(x), w))
        cases.append((name, fn, [x]))
    x, g, s = leaf((2, 3, 3, 4)), leaf((3,)), leaf((3,))
    w = rng.normal((2, 3, 3, 4))
    cases.append(("instance_norm", lambda x=x, g=g, s=s, w=w: _weighted(T.instance_norm(x, g, s, 1e-5), w), [x, g, s]))
    a, b = leaf((3, 5)), leaf((3, 5))
    cases.append(("mean_abs_diff", lambda a=a, b=b: T.mean_abs_diff(a, b), [a, b]))
    a = leaf((4, 3))
    cases.append(("mean_square_to", lambda a=a: T.mean_square_to(a, 0.7), [a]))
    p, q = leaf(()), leaf(())
    cases.append(("weighted_sum", lambda p=p, q=q: T.weighted_sum([(2.5, p), (-1.5, q), (0.5, T.mul(p, q))]), [p, q]))
    a, b = leaf((2, 3)), leaf((2, 3))
    w = rng.normal((2, 3))
    cases.append(("add", lambda a=a, b=b, w=w: _weighted(T.add(a, b), w), [a, b]))
    cases.append(("mul", lambda a=a, b=b, w=w: _weighted(T.mul(a, b), w), [a, b]))
    cases.append(("scale", lambda a=a, w=w: _weighted(T.scale(a, -3.0), w), [a]))
    cases.append(("mean", lambda a=a: T.mean(T.mul(a, a)), [a]))
    return cases


def check_ops(seed: int = 0) -> list[CheckResult]:
    rng = SplitMix64(derive_seed(seed, 1))
    out = []
    for name, fn, leaves in _op_cases(rng):
        out.append(CheckResult("ops", name, *_merge(check_tensor(fn, lf, rng=rng) for lf in leaves)))
    return out


# ----------------------------------------------------------------------- nets


def toy_nets(seed: int, size: int = TOY_SIZE):
    g, f = N.GeneratorNet("G", size), N.GeneratorNet("F", size)
    dx, dy = N.DiscriminatorNet("DX", size), N.DiscriminatorNet("DY", size)
    for i, net in enumerate((g, f, dx, dy)):
        N.init_params(net, derive_seed(seed, 7, i))
        # move norm affine params off their init so their gradients are generic
        prng = SplitMix64(derive_seed(seed, 8, i))
        for name, t in net.params.items():
            if name.endswith((".gain", ".shift", ".bias")):
                t.data += 0.1 * prng.normal(t.shape)
    return g, f, dx, dy


def _toy_images(rng: SplitMix64, batch: int, size: int) -> T.Tensor:
    return T.Tensor(np.tanh(rng.normal((batch, 3, size, size))))


def _check_params(scope: str, net, f: Callable[[], T.Tensor], rng: SplitMix64, samples: int | None,
                  prefix: str | None = None) -> list[CheckResult]:
    res = []
    for name, t in N.collect_params(net):
        r = check_tensor(f, t, rng=rng, samples=samples)
        res.append(CheckResult(scope, name if prefix is None else f"{prefix}:{name}", *r))
    return res


def check_nets(seed: int = 0, samples: int | None = 12) -> list[CheckResult]:
    rng = SplitMix64(derive_seed(seed, 2))
    g, _, dx, _ = toy_nets(seed)
    x = _toy_images(rng, 2, TOY_SIZE)
    wg = rng.normal((2, 3, TOY_SIZE, TOY_SIZE))
    s = TOY_SIZE // 8
    ws, wf = rng.normal((2, 1, s, s)), rng.normal((2, 64, s, s))

    def gen_loss():
        return T.mean(T.mul(N.generator_forward(g, x), T.Tensor(wg)))

    def disc_loss():
        scores, feats = N.discriminator_forward(dx, x)
        return T.add(_weighted(scores, ws), _weighted(feats, wf))

    res = _check_params("nets", g, gen_loss, rng, samples, "generator")
    res += _check_params("nets", dx, disc_loss, rng, samples, "discriminator")
    xin = T.Tensor(x.data.copy(), requires_grad=True)
    r = check_tensor(lambda: T.mean(T.mul(N.generator_forward(g, xin), T.Tensor(wg))), xin, rng=rng, samples=samples)
    res.append(CheckResult("nets", "generator:input", *r))
    return res


# --------------------------------------------------------------------- losses


def check_losses(seed: int = 0) -> list[CheckResult]:
    rng = SplitMix64(derive_seed(seed, 3))

    def leaf(shape):
        return T.Tensor(rng.normal(shape), requires_grad=True)

    res = []
    for form in L.GAN_FORMS:
        s = leaf((2, 1, 4, 4))
        r = check_tensor(lambda s=s, form=form: L.gan_loss_generator(s, form), s, rng=rng)
        res.append(CheckResult("losses", f"gan_loss_generator[{form}]", *r))
        real, fake = leaf((2, 1, 4, 4)), leaf((2, 1, 4, 4))
        fn = (lambda real=real, fake=fake, form=form: L.gan_loss_discriminator(real, fake, form))
        res.append(CheckResult("losses", f"gan_loss_discriminator[{form}]",
                               *_merge(check_tensor(fn, lf, rng=rng) for lf in (real, fake))))
    x, xr = T.Tensor(rng.normal((2, 3, 4, 4))), leaf((2, 3, 4, 4))
    fx, fr = T.Tensor(rng.normal((2, 8, 2, 2))), leaf((2, 8, 2, 2))
    r = check_tensor(lambda: L.cycle_loss_pixel(x, xr), xr, rng=rng)
    res.append(CheckResult("losses", "cycle_loss_pixel", *r))
    for gam in (0.0, 0.35, 1.0):
        fn = (lambda gam=gam: L.cycle_loss_mixed(x, xr, fx, fr, gam).combined)
        res.append(CheckResult("losses", f"cycle_loss_mixed[gamma={gam}]",
                               *_merge(check_tensor(fn, lf, rng=rng) for lf in (xr, fr))))
    fn = (lambda: L.cycle_loss_weighted(x, xr, fx, fr, 0.6, 0.3).combined)
    res.append(CheckResult("losses", "cycle_loss_weighted",
                           *_merge(check_tensor(fn, lf, rng=rng) for lf in (xr, fr))))
    return res


def _merge(results) -> tuple[float, int, int, int]:
    worst, wi, n, skipped = 0.0, -1, 0, 0
    for e, i, c, k in results:
        n += c
        skipped += k
        if e >= worst:
            worst, wi = e, i
    return worst, wi, n, skipped


# ----------------------------------------------------------------------- full


def check_full(seed: int = 0, samples: int | None = 12, cfg: L.LossConfig | None = None) -> list[CheckResult]:
    """Generator objective wrt every G/F parameter; critic objectives wrt DX/DY."""
    rng = SplitMix64(derive_seed(seed, 4))
    g, f, dx, dy = toy_nets(seed)
    x, y = _toy_images(rng, 2, TOY_SIZE), _toy_images(rng, 2, TOY_SIZE)
    cfg = cfg or L.LossConfig(gamma=0.6, lambda_=3.0, quality_mode="generated")
    _, diag = L.generator_objective(g, f, dx, dy, x, y, cfg)
    weights = (diag["cyc_x"].quality_weight, diag["cyc_y"].quality_weight)
    fake_x = T.Tensor(diag["fake_x"].data.copy())
    fake_y = T.Tensor(diag["fake_y"].data.copy())

    def gen_loss():
        return L.generator_objective(g, f, dx, dy, x, y, cfg, weights=weights)[0]

    res = _check_params("full", g, gen_loss, rng, samples)
    res += _check_params("full", f, gen_loss, rng, samples)
    res += _check_params("full", dx, lambda: L.discriminator_objective(dx, x, fake_x, cfg.gan_form)[0], rng, samples)
    res += _check_params("full", dy, lambda: L.discriminator_objective(dy, y, fake_y, cfg.gan_form)[0], rng, samples)
    return res


def run(scope: str, seed: int = 0, samples: int | None = 12) -> list[CheckResult]:
    if scope == "ops":
        return check_ops(seed)
    if scope == "nets":
        return check_nets(seed, samples)
    if scope == "losses":
        return check_losses(seed)
    if scope == "full":
        return check_full(seed, samples)
    raise ValueError(f"unknown scope {scope!r}; expected one of {SCOPES}")
