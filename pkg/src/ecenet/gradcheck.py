"""Finite-difference verification of tape gradients, plus the standard
operation-level suite used by the CLI and the acceptance tests."""

from __future__ import annotations

import numpy as np

from .errors import ContractError
from .tensor import GradientTape, Tensor, parameters_of


def _rel_err(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1.0, abs(numeric))


def grad_check(f, x: Tensor, eps: float = 1e-5, max_coords: int | None = None,
               seed: int = 0) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |cd|).

    ``f`` maps a Tensor to a scalar Tensor. When ``max_coords`` is given, a
    seeded random subset of coordinates is checked instead of all of them.
    """
    base = np.asarray(x.data, dtype=np.float64)
    probe = Tensor(base.copy(), trainable=True)
    with GradientTape() as tape:
        y = f(probe)
    if not isinstance(y, Tensor) or y.size != 1:
        raise ContractError("grad_check: f must return a scalar Tensor")
    analytic = tape.backward(y)[probe]

    n = base.size
    if max_coords is not None and max_coords < n:
        rng = np.random.default_rng(seed)
        coords = rng.choice(n, size=max_coords, replace=False)
    else:
        coords = range(n)

    worst = 0.0
    for i in coords:
        plus = base.copy()
        plus.flat[i] += eps
        minus = base.copy()
        minus.flat[i] -= eps
        fp = f(Tensor(plus)).item()
        fm = f(Tensor(minus)).item()
        numeric = (fp - fm) / (2.0 * eps)
        worst = max(worst, _rel_err(float(analytic.flat[i]), numeric))
    return worst


def grad_check_params(loss_fn, params, eps: float = 1e-5,
                      coords_per_param: int = 4, seed: int = 0) -> float:
    """Finite-difference check of a scalar loss against named parameters.

    ``loss_fn`` takes no arguments and rebuilds the loss from the current
    parameter storage; ``params`` is an iterable of (name, Tensor). For each
    parameter a seeded sample of coordinates is perturbed in place.
    """
    params = list(params)
    with GradientTape() as tape:
        loss = loss_fn()
    if loss.size != 1:
        raise ContractError("grad_check_params: loss must be scalar")
    grads = tape.backward(loss)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _, p in params:
        g = grads[p]
        n = p.size
        take = min(coords_per_param, n)
        coords = rng.choice(n, size=take, replace=False)
        for i in coords:
            orig = float(p.data.flat[i])
            p.data.flat[i] = orig + eps
            fp = loss_fn().item()
            p.data.flat[i] = orig - eps
            fm = loss_fn().item()
            p.data.flat[i] = orig
            numeric = (fp - fm) / (2.0 * eps)
            worst = max(worst, _rel_err(float(g.flat[i]), numeric))
    return worst


# ---------------------------------------------------------------------------
# standard suite over every differentiable op and block
# ---------------------------------------------------------------------------

def op_gradient_suite(n_seeds: int = 10, eps: float = 1e-5) -> dict[str, float]:
    """Max finite-difference error per op, over ``n_seeds`` random instances.

    Covers every differentiable tensor op and the parameterized blocks; block
    parameters are checked through in-place perturbation.
    """
    from . import ops
    from .blocks import (
        ParamFactory,
        ghost_expand,
        mlp_forward,
        scaled_attention,
        se_forward,
    )

    results: dict[str, float] = {}

    def note(name: str, err: float) -> None:
        results[name] = max(results.get(name, 0.0), err)

    def check(name: str, f, x: np.ndarray) -> None:
        note(name, grad_check(f, Tensor(x), eps=eps))

    def proj(rng, shape):
        return Tensor(rng.standard_normal(shape))

    for seed in range(n_seeds):
        rng = np.random.default_rng(1000 + seed)

        a = rng.standard_normal((3, 4))
        other = Tensor(rng.standard_normal((3, 4)))
        w34 = proj(rng, (3, 4))
        check("add", lambda x: ops.sum(ops.mul(ops.add(x, other), w34)), a)
        check("sub", lambda x: ops.sum(ops.mul(ops.sub(x, other), w34)), a)
        check("mul", lambda x: ops.sum(ops.mul(ops.mul(x, other), w34)), a)
        denom = Tensor(rng.uniform(0.5, 1.5, (3, 4)))
        check("div", lambda x: ops.sum(ops.mul(ops.div(x, denom), w34)), a)
        numer = Tensor(rng.standard_normal((3, 4)))
        check("div", lambda x: ops.sum(ops.mul(ops.div(numer, x), w34)),
              rng.uniform(0.5, 1.5, (3, 4)))
        check("neg", lambda x: ops.sum(ops.mul(ops.neg(x), w34)), a)
        check("scale", lambda x: ops.sum(ops.mul(ops.scale(x, -1.7), w34)), a)
        check("pow_const", lambda x: ops.sum(ops.mul(ops.pow_const(x, 2.0), w34)), a)
        check("exp", lambda x: ops.sum(ops.mul(ops.exp(x), w34)), a)
        check("log", lambda x: ops.sum(ops.mul(ops.log(x), w34)),
              rng.uniform(0.5, 2.0, (3, 4)))
        check("sigmoid", lambda x: ops.sum(ops.mul(ops.sigmoid(x), w34)), a)
        check("log_sigmoid", lambda x: ops.sum(ops.mul(ops.log_sigmoid(x), w34)), a)
        check("gelu", lambda x: ops.sum(ops.mul(ops.gelu(x), w34)), a)

        b = Tensor(rng.standard_normal((4, 2)))
        w32 = proj(rng, (3, 2))
        check("matmul", lambda x: ops.sum(ops.mul(ops.matmul(x, b), w32)), a)
        a_t = Tensor(rng.standard_normal((3, 4)))
        check("matmul", lambda x: ops.sum(ops.mul(ops.matmul(a_t, x), w32)),
              rng.standard_normal((4, 2)))

        x3 = rng.standard_normal((3, 4, 5))
        cw = Tensor(rng.standard_normal((2, 3)))
        cb = Tensor(rng.standard_normal(2))
        w245 = proj(rng, (2, 4, 5))
        check("conv1x1",
              lambda x: ops.sum(ops.mul(ops.conv1x1(x, cw, cb), w245)), x3)
        xin = Tensor(x3)
        check("conv1x1",
              lambda w: ops.sum(ops.mul(ops.conv1x1(xin, w, cb), w245)),
              rng.standard_normal((2, 3)))
        check("conv1x1",
              lambda bb: ops.sum(ops.mul(ops.conv1x1(xin, cw, bb), w245)),
              rng.standard_normal(2))

        dk = Tensor(rng.standard_normal((3, 3, 3)))
        w345 = proj(rng, (3, 4, 5))
        check("dwconv3x3",
              lambda x: ops.sum(ops.mul(ops.dwconv3x3(x, dk), w345)), x3)
        check("dwconv3x3",
              lambda k: ops.sum(ops.mul(ops.dwconv3x3(xin, k), w345)),
              rng.standard_normal((3, 3, 3)))

        w35 = proj(rng, (3, 5))
        x35 = rng.standard_normal((3, 5))
        check("softmax", lambda x: ops.sum(ops.mul(ops.softmax(x, 1), w35)), x35)
        check("log_softmax",
              lambda x: ops.sum(ops.mul(ops.log_softmax(x, 1), w35)), x35)

        w4 = proj(rng, (4,))
        x234 = rng.standard_normal((2, 3, 4))
        check("sum", lambda x: ops.sum(ops.mul(ops.sum(x, axis=(0, 1)), w4)), x234)
        check("mean", lambda x: ops.sum(ops.mul(ops.mean(x, axis=(0, 1)), w4)), x234)
        w3 = proj(rng, (3,))
        check("max", lambda x: ops.sum(ops.mul(ops.max(x, axis=1), w3)),
              rng.standard_normal((3, 7)))

        w64 = proj(rng, (6, 4))
        check("concat",
              lambda x: ops.sum(ops.mul(ops.concat([x, other], axis=0), w64)), a)
        w24 = proj(rng, (2, 4))
        check("narrow",
              lambda x: ops.sum(ops.mul(ops.narrow(x, 0, 1, 2), w24)), a)
        w12 = proj(rng, (12,))
        check("reshape",
              lambda x: ops.sum(ops.mul(ops.reshape(x, (12,)), w12)), a)
        w43 = proj(rng, (4, 3))
        check("transpose",
              lambda x: ops.sum(ops.mul(ops.transpose(x), w43)), a)

        w323 = proj(rng, (3, 2, 3))
        check("adaptive_avg_pool2d",
              lambda x: ops.sum(ops.mul(ops.adaptive_avg_pool2d(x, 2, 3), w323)),
              rng.standard_normal((3, 5, 7)))
        w246 = proj(rng, (2, 4, 6))
        check("pixel_shuffle",
              lambda x: ops.sum(ops.mul(ops.pixel_shuffle(x, 2), w246)),
              rng.standard_normal((8, 2, 3)))
        w823 = proj(rng, (8, 2, 3))
        check("pixel_unshuffle",
              lambda x: ops.sum(ops.mul(ops.pixel_unshuffle(x, 2), w823)),
              rng.standard_normal((2, 4, 6)))
        w273 = proj(rng, (2, 7, 3))
        check("bilinear_resize",
              lambda x: ops.sum(ops.mul(ops.bilinear_resize(x, 7, 3), w273)),
              rng.standard_normal((2, 5, 4)))

        gma = Tensor(rng.uniform(0.5, 1.5, 6))
        bta = Tensor(rng.standard_normal(6))
        w46 = proj(rng, (4, 6))
        x46 = rng.standard_normal((4, 6))
        check("layernorm",
              lambda x: ops.sum(ops.mul(ops.layernorm(x, gma, bta), w46)), x46)
        xln = Tensor(x46)
        check("layernorm",
              lambda g: ops.sum(ops.mul(ops.layernorm(xln, g, bta), w46)),
              rng.uniform(0.5, 1.5, 6))
        check("layernorm",
              lambda bb: ops.sum(ops.mul(ops.layernorm(xln, gma, bb), w46)),
              rng.standard_normal(6))
        gmc = Tensor(rng.uniform(0.5, 1.5, 3))
        btc = Tensor(rng.standard_normal(3))
        check("channel_norm",
              lambda x: ops.sum(ops.mul(ops.channel_norm(x, gmc, btc), w345)), x3)

        factory = ParamFactory(rng, np.float64)

        se = factory.se_block(4, ratio=2)
        wse = proj(rng, (4, 3, 3))
        xse = rng.standard_normal((4, 3, 3))
        check("se_forward",
              lambda x: ops.sum(ops.mul(se_forward(x, se), wse)), xse)
        xse_t = Tensor(xse)
        note("se_forward", grad_check_params(
            lambda: ops.sum(ops.mul(se_forward(xse_t, se), wse)),
            list(parameters_of(se)), eps=eps, seed=seed))

        attn = factory.attention(8, heads=2)
        q_np = rng.standard_normal((4, 8))
        kv = Tensor(rng.standard_normal((3, 8)))
        wq = proj(rng, (4, 8))
        wsim = proj(rng, (4, 3))

        def attn_scalar(q_in, kv_in):
            out, sim = scaled_attention(q_in, kv_in, attn)
            return ops.add(ops.sum(ops.mul(out, wq)), ops.sum(ops.mul(sim, wsim)))

        check("scaled_attention", lambda x: attn_scalar(x, kv), q_np)
        q_t = Tensor(q_np)
        check("scaled_attention", lambda x: attn_scalar(q_t, x),
              rng.standard_normal((3, 8)))
        note("scaled_attention", grad_check_params(
            lambda: attn_scalar(q_t, kv),
            list(parameters_of(attn)), eps=eps, seed=seed))

        mlp = factory.mlp(4)
        wmlp = proj(rng, (6, 4))
        xmlp = rng.standard_normal((6, 4))
        check("mlp_forward",
              lambda x: ops.sum(ops.mul(mlp_forward(x, mlp, 2, 3), wmlp)), xmlp)
        xmlp_t = Tensor(xmlp)
        note("mlp_forward", grad_check_params(
            lambda: ops.sum(ops.mul(mlp_forward(xmlp_t, mlp, 2, 3), wmlp)),
            list(parameters_of(mlp)), eps=eps, seed=seed))

        ghost = factory.ghost(2, factor=3)
        wgh = proj(rng, (6, 3, 3))
        xgh = rng.standard_normal((2, 3, 3))
        check("ghost_expand",
              lambda x: ops.sum(ops.mul(ghost_expand(x, ghost), wgh)), xgh)
        xgh_t = Tensor(xgh)
        note("ghost_expand", grad_check_params(
            lambda: ops.sum(ops.mul(ghost_expand(xgh_t, ghost), wgh)),
            list(parameters_of(ghost)), eps=eps, seed=seed))

    return results
