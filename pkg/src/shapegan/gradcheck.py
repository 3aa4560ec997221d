"""Finite-difference verification of gradients.

Every check compares an analytic gradient against central differences with
step 1e-5, reporting the elementwise relative error
``|a - n| / max(1, |n|)``. Primitive checks must pass at 1e-6, composite
loss checks at 1e-5, and the second-order check (gradient of a
gradient-norm penalty) at 1e-5.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward, no_grad, variable
from .errors import UsageError
from .networks import Critic, MaskNet
from .objectives import (
    FeatureBatchPair,
    dice_loss,
    gradient_penalty,
    loss_critic,
    loss_generator_adv,
    loss_reconstruction,
    loss_shape,
)

FD_STEP = 1e-5
TOL_PRIMITIVE = 1e-6
TOL_LOSS = 1e-5
TOL_SECOND_ORDER = 1e-5


@dataclass
class CheckResult:
    name: str
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance

    def __str__(self) -> str:
        status = "ok" if self.passed else "FAIL"
        return f"{status:4s} {self.name:40s} err={self.max_error:.3e} tol={self.tolerance:.0e}"


def fd_gradients(
    func: Callable[[Sequence[np.ndarray]], float],
    arrays: Sequence[np.ndarray],
    step: float = FD_STEP,
) -> list[np.ndarray]:
    """Central-difference gradient of a scalar function of several arrays."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    grads = []
    for ai in range(len(arrays)):
        flat = arrays[ai].reshape(-1)
        g = np.zeros_like(flat)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            fp = func(arrays)
            flat[i] = keep - step
            fm = func(arrays)
            flat[i] = keep
            g[i] = (fp - fm) / (2.0 * step)
        grads.append(g.reshape(arrays[ai].shape))
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(1.0, np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_scalar_function(
    name: str,
    build: Callable[[Sequence[Tensor]], Tensor],
    arrays: Sequence[np.ndarray],
    tolerance: float,
    step: float = FD_STEP,
) -> CheckResult:
    """Compare backward() of ``build(leaves)`` against finite differences."""
    leaves = [variable(np.array(a, dtype=np.float64)) for a in arrays]
    analytic = backward(build(leaves), leaves)

    def numeric_eval(arrs: Sequence[np.ndarray]) -> float:
        consts = [ad.as_tensor(np.array(a)) for a in arrs]
        return build(consts).item()

    numeric = fd_gradients(numeric_eval, arrays, step)
    err = max(relative_error(a.data if isinstance(a, Tensor) else a, n)
              for a, n in zip(analytic, numeric))
    return CheckResult(name, err, tolerance)


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _safe(rng, shape, low=0.15, high=1.0) -> np.ndarray:
    """Values bounded away from zero so kinked ops stay differentiable."""
    mag = rng.uniform(low, high, size=shape)
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return mag * sign


def _weighted(out: Tensor, weights: np.ndarray) -> Tensor:
    return ad.sum(ad.mul(out, ad.as_tensor(weights)))


# ---------------------------------------------------------------------------
# primitive checks

def primitive_checks(step: float = FD_STEP) -> list[CheckResult]:
    rng = _rng(20260819)
    results = []

    def run(name, build, arrays):
        results.append(check_scalar_function(name, build, arrays, TOL_PRIMITIVE, step))

    a = _safe(rng, (3, 4))
    b = _safe(rng, (3, 4))
    row = _safe(rng, (4,))
    w34 = rng.standard_normal((3, 4))

    run("add", lambda t: _weighted(ad.add(t[0], t[1]), w34), [a, b])
    run("add broadcast", lambda t: _weighted(ad.add(t[0], t[1]), w34), [a, row])
    run("sub", lambda t: _weighted(ad.sub(t[0], t[1]), w34), [a, b])
    run("mul", lambda t: _weighted(ad.mul(t[0], t[1]), w34), [a, b])
    run("mul broadcast", lambda t: _weighted(ad.mul(t[0], t[1]), w34), [a, row])
    run("div", lambda t: _weighted(ad.div(t[0], t[1]), w34), [a, b])
    run("scalar_mul", lambda t: _weighted(ad.scalar_mul(t[0], -1.7), w34), [a])
    run("neg", lambda t: _weighted(ad.neg(t[0]), w34), [a])
    run("square", lambda t: _weighted(ad.square(t[0]), w34), [a])
    run("sqrt", lambda t: _weighted(ad.sqrt(t[0]), w34), [np.abs(a) + 0.5])
    run("exp", lambda t: _weighted(ad.exp(t[0]), w34), [a])
    run("log", lambda t: _weighted(ad.log(t[0]), w34), [np.abs(a) + 0.5])
    run("leaky_relu", lambda t: _weighted(ad.leaky_relu(t[0]), w34), [a])
    run("sigmoid", lambda t: _weighted(ad.sigmoid(t[0]), w34), [a])

    m1 = _safe(rng, (3, 5))
    m2 = _safe(rng, (5, 2))
    w32 = rng.standard_normal((3, 2))
    run("matmul", lambda t: _weighted(ad.matmul(t[0], t[1]), w32), [m1, m2])
    w43 = rng.standard_normal((4, 3))
    run("transpose", lambda t: _weighted(ad.transpose(t[0]), w43), [a])
    w12 = rng.standard_normal((12,))
    run("reshape", lambda t: _weighted(ad.reshape(t[0], (12,)), w12), [a])
    w234 = rng.standard_normal((2, 3, 4))
    run(
        "broadcast_to",
        lambda t: _weighted(ad.broadcast_to(t[0], (2, 3, 4)), w234),
        [a],
    )
    w3 = rng.standard_normal((3,))
    run("sum axis", lambda t: _weighted(ad.sum(t[0], axis=1), w3), [a])
    run("sum all", lambda t: ad.sum(t[0]), [a])
    run("mean", lambda t: ad.mean(t[0]), [a])
    run("l2_norm_per_row", lambda t: _weighted(ad.l2_norm_per_row(t[0]), w3), [a])

    img = _safe(rng, (2, 3, 4, 4))
    w_up = rng.standard_normal((2, 3, 8, 8))
    run(
        "nearest_upsample2x",
        lambda t: _weighted(ad.nearest_upsample2x(t[0]), w_up),
        [img],
    )
    w_dn = rng.standard_normal((2, 3, 2, 2))
    run("block_sum2x", lambda t: _weighted(ad.block_sum2x(t[0]), w_dn), [img])
    imb = _safe(rng, (2, 2, 4, 4))
    w_cat = rng.standard_normal((2, 5, 4, 4))
    run(
        "concat_channels",
        lambda t: _weighted(ad.concat_channels(list(t)), w_cat),
        [img, imb],
    )
    w_sl = rng.standard_normal((2, 2, 4, 4))
    run(
        "channel_slice",
        lambda t: _weighted(ad.channel_slice(t[0], 1, 3), w_sl),
        [img],
    )
    return results


def conv_checks(step: float = FD_STEP) -> list[CheckResult]:
    rng = _rng(7051)
    results = []

    def run(name, build, arrays):
        results.append(check_scalar_function(name, build, arrays, TOL_PRIMITIVE, step))

    cases = [
        ("conv2d k3 s1 p1", (2, 2, 5, 5), (3, 2, 3, 3), 1, 1),
        ("conv2d k3 s2 p1", (1, 2, 6, 6), (2, 2, 3, 3), 2, 1),
        ("conv2d k1 s1 p0", (2, 3, 4, 4), (2, 3, 1, 1), 1, 0),
    ]
    for name, xs, ks, stride, pad in cases:
        x = _safe(rng, xs)
        k = _safe(rng, ks)
        out_hw = ad.conv2d(ad.as_tensor(x), ad.as_tensor(k), stride, pad).shape
        w = rng.standard_normal(out_hw)
        run(
            name,
            lambda t, s=stride, p=pad, w=w: _weighted(ad.conv2d(t[0], t[1], s, p), w),
            [x, k],
        )

    v = _safe(rng, (1, 2, 3, 3))
    k = _safe(rng, (2, 2, 3, 3))
    wt = rng.standard_normal((1, 2, 6, 6))
    run(
        "conv_transpose2d k3 s2 p1 out6",
        lambda t: _weighted(ad.conv_transpose2d(t[0], t[1], 2, 1, out_hw=(6, 6)), wt),
        [v, k],
    )
    x = _safe(rng, (2, 2, 5, 5))
    cot = _safe(rng, (2, 3, 5, 5))
    wk = rng.standard_normal((3, 2, 3, 3))
    run(
        "conv_kernel_grad k3 s1 p1",
        lambda t: _weighted(ad.conv_kernel_grad(t[0], t[1], 3, 3, 1, 1), wk),
        [x, cot],
    )
    return results


# ---------------------------------------------------------------------------
# composite loss checks

def loss_checks(step: float = FD_STEP) -> list[CheckResult]:
    rng = _rng(99173)
    results = []

    img = rng.uniform(0.1, 0.9, size=(2, 3, 4, 4))
    dec = rng.uniform(0.1, 0.9, size=(2, 3, 4, 4))
    results.append(
        check_scalar_function(
            "loss_reconstruction",
            lambda t: loss_reconstruction(t[0], t[1]),
            [img, dec],
            TOL_LOSS,
            step,
        )
    )

    pm = rng.uniform(0.05, 0.95, size=(3, 1, 4, 4))
    gm = (rng.random((3, 1, 4, 4)) > 0.5).astype(np.float64)
    results.append(
        check_scalar_function(
            "dice_loss", lambda t: dice_loss(t[0], gm), [pm], TOL_LOSS, step
        )
    )

    critic = Critic.build(12, hidden=(8, 5), seed=31)
    fake = rng.standard_normal((3, 12)) * 0.5
    real = rng.standard_normal((3, 12)) * 0.5
    eps = rng.random(3)
    results.append(
        check_scalar_function(
            "loss_generator_adv (features)",
            lambda t: loss_generator_adv(t[0], critic),
            [fake],
            TOL_LOSS,
            step,
        )
    )
    results.append(
        check_scalar_function(
            "gradient_penalty (critic params)",
            lambda t: _with_params(
                critic, t, lambda: gradient_penalty(critic, real, fake, eps)
            ),
            [p.data for p in critic.params.tensors()],
            TOL_LOSS,
            step,
        )
    )
    pair = FeatureBatchPair(ad.as_tensor(real), ad.as_tensor(fake))
    results.append(
        check_scalar_function(
            "loss_critic (critic params)",
            lambda t: _with_params(
                critic, t, lambda: loss_critic(pair, critic, eps, 10.0)
            ),
            [p.data for p in critic.params.tensors()],
            TOL_LOSS,
            step,
        )
    )

    unet = MaskNet.build(3, seed=77)
    src = rng.uniform(0.1, 0.9, size=(1, 3, 8, 8))
    tr = rng.uniform(0.1, 0.9, size=(1, 3, 8, 8))
    results.append(
        check_scalar_function(
            "loss_shape (translated images)",
            lambda t: loss_shape(t[0], ad.as_tensor(src), unet),
            [tr],
            TOL_LOSS,
            step,
        )
    )
    return results


def _with_params(net, leaf_tensors: Sequence[Tensor], thunk: Callable[[], Tensor]):
    """Evaluate ``thunk`` with the net's parameters swapped for ``leaf_tensors``.

    Lets one scalar function be reused both for the analytic pass (leaves are
    differentiable variables) and for finite-difference evals (leaves are
    perturbed constants). Parameters are restored afterwards.
    """
    originals = list(net.params.items())
    try:
        for (name, _), leaf in zip(originals, leaf_tensors):
            swapped = leaf if isinstance(leaf, Tensor) else ad.as_tensor(leaf)
            net.params._tensors[name] = swapped
        return thunk()
    finally:
        for name, t in originals:
            net.params._tensors[name] = t


# ---------------------------------------------------------------------------
# second order

def second_order_checks(step: float = FD_STEP) -> list[CheckResult]:
    """Verify gradients *of* a gradient-norm penalty (double backward)."""
    rng = _rng(55021)
    critic = Critic.build(8, hidden=(6,), seed=13)
    base = rng.standard_normal((3, 8)) * 0.7
    results = []

    def penalty_from(blend_data: np.ndarray) -> Tensor:
        blend = variable(np.array(blend_data))
        scores = critic(blend)
        (g,) = backward(ad.sum(scores), [blend], higher_order=True)
        norms = ad.l2_norm_per_row(g)
        return ad.mean(ad.square(ad.sub(norms, 1.0)))

    # d penalty / d blend point
    blend_leaf = variable(base.copy())
    scores = critic(blend_leaf)
    (g,) = backward(ad.sum(scores), [blend_leaf], higher_order=True)
    penalty = ad.mean(ad.square(ad.sub(ad.l2_norm_per_row(g), 1.0)))
    (analytic,) = backward(penalty, [blend_leaf])

    def numeric_eval(arrs):
        return penalty_from(arrs[0]).item()

    (numeric,) = fd_gradients(numeric_eval, [base.copy()], step)
    results.append(
        CheckResult(
            "second_order wrt blend point",
            relative_error(analytic.data, numeric),
            TOL_SECOND_ORDER,
        )
    )

    # d penalty / d critic parameters
    results.append(
        check_scalar_function(
            "second_order wrt critic params",
            lambda t: _with_params(critic, t, lambda: penalty_from(base)),
            [p.data for p in critic.params.tensors()],
            TOL_SECOND_ORDER,
            step,
        )
    )
    return results


# ---------------------------------------------------------------------------
# entry point

def run(level: str = "full") -> list[CheckResult]:
    """Run the gradient checks; ``level`` is "quick" or "full"."""
    if level not in ("quick", "full"):
        raise UsageError(f"unknown grad-check level: {level!r}")
    results = primitive_checks()
    if level == "full":
        results += conv_checks()
        results += loss_checks()
        results += second_order_checks()
    else:
        results += conv_checks()[:1]
        results += second_order_checks()[:1]
    return results
