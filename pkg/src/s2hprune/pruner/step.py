"""One optimisation step of soft-to-hard pruning.

Per batch the soft network (weights scaled by w) and the hard network
(weights restricted to the binary mask) are both evaluated.  The hard
network is distilled from the detached soft output; the soft output in turn
receives the gap gradient only on the mask logits.  The individual gradient
terms are kept apart in a :class:`GradientBundle` until the update so each
can be toggled or balanced.
"""

from dataclasses import dataclass, field, fields

import numpy as np

from .. import autodiff as ad
from ..autodiff import GradientMap
from ..nn import cross_entropy, gap_measure


class StepError(RuntimeError):
    """A step produced a non-finite loss and was aborted before any update."""


@dataclass
class GradientBundle:
    """Named gradient terms.

    In ``alt1`` the hard network's own label loss fills ``g_G_hard_theta``;
    in ``alt2`` the original network's loss fills ``g_L_theta`` and its
    distillation into the hard network fills ``g_G_hard_theta``.  Both slots
    mean "direct supervision" of the respective network.
    """
    g_L_theta: GradientMap
    g_G_hard_theta: GradientMap
    g_G_soft_theta: GradientMap
    g_L_u: GradientMap
    g_R_u: GradientMap
    g_G_u: GradientMap

    def terms(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class StepResult:
    losses: dict
    bundle: GradientBundle
    theta_grad: GradientMap = None
    u_grad: GradientMap = None
    tensors: dict = field(default_factory=dict)


def _zeros(leaves):
    return GradientMap((t, np.zeros_like(t.values)) for t in leaves)


def _restrict(gm, leaves):
    return GradientMap((t, gm[t]) for t in leaves)


def resource_penalty(g, T):
    """(soft FLOPs / full FLOPs - T)^2 as a differentiable scalar."""
    ratio = ad.scale(g.compute_flops("soft"), 1.0 / g.compute_flops("full"))
    diff = ad.sub(ratio, T)
    return ad.mul(diff, diff)


def _norm(vecs):
    return float(np.sqrt(sum(float(np.dot(v.ravel(), v.ravel())) for v in vecs)))


def _balance_block(gl, gg, gr, rho, reference):
    nl, ng, nr = _norm(gl), _norm(gg), _norm(gr)
    perf = []
    for a, b in zip(gl, gg):
        ua = a / nl if nl > 0 else np.zeros_like(a)
        ub = b / ng if ng > 0 else np.zeros_like(b)
        perf.append(ua + ub)
    np_ = _norm(perf)
    target = nr * (rho if reference == "scaled" else 1.0)
    if nr > 0 and np_ > 0:
        perf = [p * (target / np_) for p in perf]
    return [p + rho * r for p, r in zip(perf, gr)]


def balance_mask_gradients(g_L_u, g_G_u, g_R_u, rho_coef=5.0, reference="raw", scope="global"):
    """Combine mask-logit gradients with L2-norm balancing.

    The performance terms are each normalised to unit norm, summed, and the
    sum rescaled to the norm of the resource gradient (times ``rho_coef`` if
    ``reference == "scaled"``); then ``rho_coef * g_R_u`` is added.  A
    zero-norm performance term contributes nothing; a zero-norm resource
    gradient leaves the performance sum unscaled.
    """
    leaves = list(g_R_u)
    out = GradientMap()
    if scope == "global":
        blocks = [leaves]
    elif scope == "per_group":
        blocks = [[t] for t in leaves]
    else:
        raise ValueError(f"unknown balancing scope {scope!r}")
    for block in blocks:
        combined = _balance_block([g_L_u[t] for t in block], [g_G_u[t] for t in block],
                                  [g_R_u[t] for t in block], rho_coef, reference)
        for t, c in zip(block, combined):
            out[t] = c
    return out


def prune_step(g, x, y, cfg, keep_graph=False):
    """Forward both networks and collect every gradient term for one batch.

    Masks are refreshed from u before the forwards.  Nothing is updated here;
    see :func:`apply_updates`.
    """
    ad.new_tape()
    g.refresh_masks()
    theta = g.parameters()
    us = g.mask_parameters()
    tg = cfg.effective_toggles()
    eps = cfg.smoothing
    G = lambda h, s: gap_measure(h, s, cfg.gap_direction, cfg.gap_temperature)  # noqa: E731

    y_s = g.forward_soft(x)
    y_h = g.forward_hard(x)
    r = resource_penalty(g, cfg.T) if us else ad.Tensor(0.0)
    l = cross_entropy(y_s, y, eps)
    tensors = {"y_s": y_s, "y_h": y_h, "l": l, "r": r}

    if cfg.mode == "alt1":
        d1 = cross_entropy(y_h, y, eps)
        d2 = None
    elif cfg.mode == "alt2":
        y_f = g.forward(x, "full")
        tensors["y_f"] = y_f
        l_full = cross_entropy(y_f, y, eps)
        d1 = G(y_h, ad.detach(y_f))
        d2 = None
        tensors["l_full"] = l_full
    else:
        d1 = G(y_h, ad.detach(y_s))
        d2 = G(ad.detach(y_h), y_s)
    tensors["d1"] = d1
    tensors["d2"] = d2

    losses = {"l": float(l.values), "r": float(r.values), "d1": float(d1.values),
              "d2": float(d2.values) if d2 is not None else 0.0}
    if cfg.mode == "alt2":
        losses["l_full"] = float(tensors["l_full"].values)
    if not all(np.isfinite(v) for v in losses.values()):
        raise StepError(f"non-finite loss: {losses}")

    # performance loss of the soft network: weights and/or mask logits
    l_targets = (theta if (tg.g_L_theta and cfg.mode != "alt2") else []) + (us if tg.g_L_u else [])
    gl = ad.backward(l, l_targets) if l_targets else GradientMap()
    g_L_theta = _restrict(gl, theta) if (tg.g_L_theta and cfg.mode != "alt2") else _zeros(theta)
    g_L_u = _restrict(gl, us) if tg.g_L_u else _zeros(us)
    if cfg.mode == "alt2" and tg.g_L_theta:
        g_L_theta = ad.backward(tensors["l_full"], theta)

    g_R_u = ad.backward(r, us) if us else GradientMap()

    g_G_hard_theta = ad.backward(d1, theta) if tg.g_G_hard_theta else _zeros(theta)

    want_soft_theta = d2 is not None and (tg.g_G_soft_theta or cfg.record_soft_theta)
    d2_targets = (theta if want_soft_theta else []) + (us if tg.g_G_u else [])
    if d2 is not None and d2_targets:
        gd2 = ad.backward(d2, d2_targets)
    else:
        gd2 = GradientMap()
    g_G_soft_theta = _restrict(gd2, theta) if want_soft_theta else _zeros(theta)
    g_G_u = _restrict(gd2, us) if (tg.g_G_u and d2 is not None) else _zeros(us)

    bundle = GradientBundle(g_L_theta, g_G_hard_theta, g_G_soft_theta, g_L_u, g_R_u, g_G_u)
    return StepResult(losses, bundle, tensors=tensors if keep_graph else {})


def combine_gradients(bundle, cfg):
    """Total weight gradient and balanced mask gradient for one step."""
    tg = cfg.effective_toggles()
    beta, gamma = cfg.theta_coefficients()
    theta_grad = GradientMap()
    for t in bundle.g_L_theta:
        gsum = beta * bundle.g_L_theta[t] + gamma * bundle.g_G_hard_theta[t]
        if tg.g_G_soft_theta:
            gsum = gsum + gamma * bundle.g_G_soft_theta[t]
        theta_grad[t] = gsum
    u_grad = balance_mask_gradients(bundle.g_L_u, bundle.g_G_u, bundle.g_R_u, cfg.rho_coef,
                                    cfg.balance_reference, cfg.balance_norm)
    return theta_grad, u_grad


def apply_updates(g, bundle, cfg, optimizer, lr):
    """Step weights and mask logits with the shared optimizer, then refresh masks."""
    theta_grad, u_grad = combine_gradients(bundle, cfg)
    for t, grad in theta_grad.items():
        optimizer.step(t, grad, lr, cfg.weight_decay)
    for t, grad in u_grad.items():
        optimizer.step(t, grad, lr * cfg.u_lr_mult, cfg.u_weight_decay)
    with ad.no_grad():
        g.refresh_masks()
    return theta_grad, u_grad
