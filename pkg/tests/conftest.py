import numpy as np
import pytest

from convcnp import autodiff as ad


def _store_with(arrays):
    store = ad.ParameterStore()
    for name, value in arrays.items():
        store.add(name, value)
    return store


PRIMITIVE_OPS = [
    "add", "sub", "mul", "div", "matmul", "conv1d", "conv2d", "relu",
    "softplus", "exp", "log", "powi", "abs", "sum", "mean", "concat",
    "broadcast", "gaussian_log_pdf",
]


def primitive_grad_error(op: str, seed: int, step: float = 1e-5) -> float:
    """Finite-difference check of one primitive embedded in a scalar loss.

    Inputs are drawn away from non-differentiable points (relu/abs kinks,
    log/div singularities) so the central-difference oracle is valid.
    """
    rng = np.random.default_rng(seed)

    def smooth(shape, low=0.5, high=1.5):
        return rng.uniform(low, high, size=shape) * rng.choice([-1.0, 1.0], size=shape)

    if op in ("add", "sub", "mul", "div"):
        a, b = smooth((3, 4)), smooth((3, 4))
        store = _store_with({"a": a, "b": b})
        fn = getattr(ad, op)
        builder = lambda lv: ad.reduce_sum(ad.mul(fn(lv["a"], lv["b"]), fn(lv["a"], lv["b"])))
    elif op == "matmul":
        store = _store_with({"a": smooth((3, 4)), "b": smooth((4, 2))})
        builder = lambda lv: ad.reduce_sum(ad.matmul(lv["a"], lv["b"]))
    elif op == "conv1d":
        store = _store_with({"x": smooth((2, 7)), "w": smooth((3, 2, 5)), "b": smooth(3)})
        builder = lambda lv: ad.reduce_sum(
            ad.powi(ad.conv1d(lv["x"], lv["w"], lv["b"]), 2)
        )
    elif op == "conv2d":
        store = _store_with({"x": smooth((2, 5, 6)), "w": smooth((2, 2, 3, 3)), "b": smooth(2)})
        builder = lambda lv: ad.reduce_sum(
            ad.powi(ad.conv2d(lv["x"], lv["w"], lv["b"]), 2)
        )
    elif op in ("relu", "softplus", "exp", "abs"):
        store = _store_with({"x": smooth((3, 4))})
        fn = {"relu": ad.relu, "softplus": ad.softplus, "exp": ad.exp, "abs": ad.absolute}[op]
        weights = smooth((3, 4))
        builder = lambda lv: ad.reduce_sum(ad.mul(fn(lv["x"]), ad.constant(weights)))
    elif op == "log":
        store = _store_with({"x": rng.uniform(0.5, 2.0, size=(3, 4))})
        builder = lambda lv: ad.reduce_sum(ad.log(lv["x"]))
    elif op == "powi":
        store = _store_with({"x": smooth((3, 4))})
        builder = lambda lv: ad.reduce_sum(ad.powi(lv["x"], 3))
    elif op == "sum":
        store = _store_with({"x": smooth((3, 4))})
        weights = smooth(3)
        builder = lambda lv: ad.reduce_sum(
            ad.mul(ad.reduce_sum(lv["x"], axis=1), ad.constant(weights))
        )
    elif op == "mean":
        store = _store_with({"x": smooth((3, 4))})
        weights = smooth(4)
        builder = lambda lv: ad.reduce_sum(
            ad.mul(ad.reduce_mean(lv["x"], axis=0), ad.constant(weights))
        )
    elif op == "concat":
        store = _store_with({"a": smooth((2, 4)), "b": smooth((3, 4))})
        weights = smooth((5, 4))
        builder = lambda lv: ad.reduce_sum(
            ad.mul(ad.concat([lv["a"], lv["b"]], axis=0), ad.constant(weights))
        )
    elif op == "broadcast":
        store = _store_with({"s": smooth(())})
        weights = smooth((3, 4))
        builder = lambda lv: ad.reduce_sum(
            ad.mul(ad.broadcast_to(lv["s"], (3, 4)), ad.constant(weights))
        )
    elif op == "gaussian_log_pdf":
        y = smooth((3, 4))
        store = _store_with({"mu": smooth((3, 4)), "logsig": smooth((3, 4))})
        builder = lambda lv: ad.reduce_sum(
            ad.gaussian_log_pdf(y, lv["mu"], ad.exp(lv["logsig"]))
        )
    else:
        raise ValueError(op)

    return ad.grad_check(builder, store, step=step)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
