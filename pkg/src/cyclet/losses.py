"""Adversarial and cycle-consistency objectives.

Cycle terms read discriminators only through frozen (stop-gradient) parameter
copies, so backpropagating the generator objective never touches DX/DY grads.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .nets import DiscriminatorNet, GeneratorNet, discriminator_forward, frozen_copy, generator_forward
from .tensor import (
    Tensor, mean, mean_abs_diff, mean_square_to, scale, softplus, stop_gradient, weighted_sum,
)

GAN_FORMS = ("least_squares", "log")
QUALITY_MODES = ("generated", "literal", "off")


@dataclass
class LossConfig:
    gamma: float = 0.0
    lambda_: float = 10.0
    gan_form: str = "least_squares"
    quality_mode: str = "generated"

    def validate(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.lambda_ < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lambda_}")
        if self.gan_form not in GAN_FORMS:
            raise ValueError(f"gan_form must be one of {GAN_FORMS}, got {self.gan_form!r}")
        if self.quality_mode not in QUALITY_MODES:
            raise ValueError(f"quality_mode must be one of {QUALITY_MODES}, got {self.quality_mode!r}")


@dataclass
class CycleLossBreakdown:
    pixel_term: Tensor
    feature_term: Tensor
    quality_weight: float
    combined: Tensor
    gamma: float = 0.0

    def as_floats(self) -> dict[str, float]:
        return {
            "pixel": self.pixel_term.item(),
            "feature": self.feature_term.item(),
            "weight": float(self.quality_weight),
            "combined": self.combined.item(),
        }


def gan_loss_generator(scores_fake: Tensor, form: str = "least_squares") -> Tensor:
    if form == "least_squares":
        return mean_square_to(scores_fake, 1.0)
    if form == "log":
        # -log sigmoid(s) == softplus(-s)
        return mean(softplus(scale(scores_fake, -1.0)))
    raise ValueError(f"unknown gan form {form!r}")


def gan_loss_discriminator(scores_real: Tensor, scores_fake: Tensor, form: str = "least_squares") -> Tensor:
    if form == "least_squares":
        return weighted_sum([(0.5, mean_square_to(scores_real, 1.0)),
                             (0.5, mean_square_to(scores_fake, 0.0))])
    if form == "log":
        # -log(1 - sigmoid(f)) == softplus(f)
        return weighted_sum([(0.5, mean(softplus(scale(scores_real, -1.0)))),
                             (0.5, mean(softplus(scores_fake)))])
    raise ValueError(f"unknown gan form {form!r}")


def cycle_loss_pixel(x: Tensor, x_reconstructed: Tensor) -> Tensor:
    return mean_abs_diff(x_reconstructed, x)


def _check_gamma(gamma: float) -> None:
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")


def cycle_loss_mixed(x: Tensor, x_recon: Tensor, feat_x: Tensor, feat_recon: Tensor,
                     gamma: float) -> CycleLossBreakdown:
    """gamma * feature L1 + (1 - gamma) * pixel L1, both mean-reduced."""
    _check_gamma(gamma)
    pixel = cycle_loss_pixel(x, x_recon)
    feature = mean_abs_diff(feat_recon, feat_x)
    if gamma == 0.0:
        combined = pixel
    elif gamma == 1.0:
        combined = feature
    else:
        combined = weighted_sum([(gamma, feature), (1.0 - gamma, pixel)])
    return CycleLossBreakdown(pixel, feature, 1.0, combined, gamma)


def cycle_loss_weighted(x: Tensor, x_recon: Tensor, feat_x: Tensor, feat_recon: Tensor,
                        gamma: float, weight: float) -> CycleLossBreakdown:
    """Mixed cycle loss scaled by a detached quality weight in [0, 1]."""
    weight = float(weight)
    if not 0.0 <= weight <= 1.0:
        raise ValueError(f"quality weight must lie in [0, 1], got {weight}")
    b = cycle_loss_mixed(x, x_recon, feat_x, feat_recon, gamma)
    if weight != 1.0:
        b.combined = scale(b.combined, weight)
    b.quality_weight = weight
    return b


def cycle_features(d: DiscriminatorNet, img: Tensor) -> Tensor:
    """Feature tap of ``d`` on ``img`` with ``d``'s parameters stop-gradiented."""
    _, features = discriminator_forward(d, img, frozen=True)
    return features


def clamp_unit(v: float) -> float:
    return min(1.0, max(0.0, float(v)))


def quality_weight(dx: DiscriminatorNet, dy: DiscriminatorNet, x: Tensor, gx: Tensor,
                   mode: str) -> float:
    """Detached scalar weight for the x -> G(x) -> F(G(x)) cycle.

    ``literal`` scores the real source image with its own-domain critic (``dx``);
    ``generated`` scores the translation with the target-domain critic (``dy``).
    """
    if mode == "off":
        return 1.0
    if mode == "literal":
        scores, _ = discriminator_forward(dx, stop_gradient(x), frozen=True)
    elif mode == "generated":
        scores, _ = discriminator_forward(dy, stop_gradient(gx), frozen=True)
    else:
        raise ValueError(f"unknown quality mode {mode!r}")
    return clamp_unit(scores.data.mean())


@dataclass
class Objective:
    gen_loss: Tensor
    dx_loss: Tensor | None
    dy_loss: Tensor | None
    diagnostics: dict = field(default_factory=dict)


def generator_objective(g: GeneratorNet, f: GeneratorNet, dx: DiscriminatorNet, dy: DiscriminatorNet,
                        x: Tensor, y: Tensor, cfg: LossConfig,
                        weights: tuple[float, float] | None = None,
                        critic_view: str = "stop_gradient") -> tuple[Tensor, dict]:
    """Generator side of the full objective.

    ``weights`` pins the two quality weights instead of reading them from the
    critics (gradient checks hold them fixed because they are detached).
    ``critic_view="clone"`` evaluates every critic term on detached copies of
    DX/DY instead of stop-gradient views; values are identical.
    """
    cfg.validate()
    if critic_view == "clone":
        dx, dy = frozen_copy(dx), frozen_copy(dy)
    elif critic_view != "stop_gradient":
        raise ValueError(f"unknown critic_view {critic_view!r}")
    gx = generator_forward(g, x)
    fy = generator_forward(f, y)
    scores_gx, _ = discriminator_forward(dy, gx, frozen=True)
    scores_fy, _ = discriminator_forward(dx, fy, frozen=True)
    gan_g = gan_loss_generator(scores_gx, cfg.gan_form)
    gan_f = gan_loss_generator(scores_fy, cfg.gan_form)

    terms = [(1.0, gan_g), (1.0, gan_f)]
    diag = {"gan_g": gan_g.item(), "gan_f": gan_f.item(),
            "dy_fake_score": float(scores_gx.data.mean()),
            "dx_fake_score": float(scores_fy.data.mean())}

    fgx = generator_forward(f, gx)
    gfy = generator_forward(g, fy)
    if weights is None:
        wx = _weight_from_scores(cfg.quality_mode, dx, x, scores_gx)
        wy = _weight_from_scores(cfg.quality_mode, dy, y, scores_fy)
    else:
        wx, wy = weights
    fx_feat = cycle_features(dx, x)
    fgx_feat = cycle_features(dx, fgx)
    fy_feat = cycle_features(dy, y)
    gfy_feat = cycle_features(dy, gfy)
    cyc_x = cycle_loss_weighted(x, fgx, fx_feat, fgx_feat, cfg.gamma, wx)
    cyc_y = cycle_loss_weighted(y, gfy, fy_feat, gfy_feat, cfg.gamma, wy)
    if cfg.lambda_ > 0.0:
        terms += [(cfg.lambda_, cyc_x.combined), (cfg.lambda_, cyc_y.combined)]
    diag.update(cyc_x=cyc_x, cyc_y=cyc_y, fake_x=fy, fake_y=gx, rec_x=fgx, rec_y=gfy)
    return weighted_sum(terms), diag


def _weight_from_scores(mode: str, own_critic: DiscriminatorNet, real: Tensor, target_scores: Tensor) -> float:
    if mode == "off":
        return 1.0
    if mode == "generated":
        return clamp_unit(target_scores.data.mean())
    if mode == "literal":
        scores, _ = discriminator_forward(own_critic, stop_gradient(real), frozen=True)
        return clamp_unit(scores.data.mean())
    raise ValueError(f"unknown quality mode {mode!r}")


def discriminator_objective(d: DiscriminatorNet, real: Tensor, fake: Tensor,
                            form: str = "least_squares") -> tuple[Tensor, float, float]:
    """LSGAN/log critic loss on a real batch and a detached fake batch."""
    s_real, _ = discriminator_forward(d, real)
    s_fake, _ = discriminator_forward(d, stop_gradient(fake))
    return (gan_loss_discriminator(s_real, s_fake, form),
            float(s_real.data.mean()), float(s_fake.data.mean()))


def full_objective(g: GeneratorNet, f: GeneratorNet, dx: DiscriminatorNet, dy: DiscriminatorNet,
                   x: Tensor, y: Tensor, cfg: LossConfig) -> Objective:
    """Generator loss plus both critic losses on the same (detached) fakes."""
    gen_loss, diag = generator_objective(g, f, dx, dy, x, y, cfg)
    dx_loss, dx_real, dx_fake = discriminator_objective(dx, x, diag["fake_x"], cfg.gan_form)
    dy_loss, dy_real, dy_fake = discriminator_objective(dy, y, diag["fake_y"], cfg.gan_form)
    diag.update(dx_real_score=dx_real, dy_real_score=dy_real)
    return Objective(gen_loss, dx_loss, dy_loss, diag)

