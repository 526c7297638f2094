"""Numeric verification suites: finite-difference gradient checks for every
differentiable operation, conv/deconv adjointness, and softmax laws.

These back the `langground check` subcommand and the acceptance tests.
"""

from __future__ import annotations

import numpy as np

from .nn import ops
from .nn.gradcheck import grad_check
from .nn.tensor import Tensor

GRAD_TOL = 1e-6
UNROLL_TOL = 1e-4
ADJOINT_TOL = 1e-10


def _rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def op_gradcheck_cases(fast: bool = False):
    """(name, fn, inputs, tol) for every differentiable op, at three random
    shapes each unless fast."""
    cases = []
    reps = 1 if fast else 3
    for rep in range(reps):
        rng = _rng(100 + rep)

        def conv_case(rng=rng, rep=rep):
            b, cin, cout, k, s = 1 + rep, 2 + rep, 3, 3, 2
            n = k + s * (3 + rep)
            inputs = {"x": rng.standard_normal((b, cin, n, n)),
                      "w": rng.standard_normal((cout, cin, k, k)) * 0.3,
                      "b": rng.standard_normal(cout) * 0.1}

            def fn(t):
                y = ops.conv2d(t["x"], t["w"], t["b"], s)
                return ops.sum_all(ops.mul(y, y))
            return fn, inputs
        cases.append((f"conv2d#{rep}", *conv_case(), GRAD_TOL))

        def deconv_case(rng=rng, rep=rep):
            b, cout, cin, k, s = 1 + rep, 3, 2 + rep, 3, 2
            inputs = {"y": rng.standard_normal((b, cout, 3 + rep, 3 + rep)),
                      "w": rng.standard_normal((cout, cin, k, k)) * 0.3,
                      "b": rng.standard_normal(cin) * 0.1}

            def fn(t):
                x = ops.deconv2d(t["y"], t["w"], t["b"], s)
                return ops.sum_all(ops.mul(x, x))
            return fn, inputs
        cases.append((f"deconv2d#{rep}", *deconv_case(), GRAD_TOL))

        def linear_case(rng=rng, rep=rep):
            b, din, dout = 2 + rep, 4 + rep, 3 + rep
            inputs = {"x": rng.standard_normal((b, din)),
                      "W": rng.standard_normal((dout, din)) * 0.4,
                      "b": rng.standard_normal(dout) * 0.1}

            def fn(t):
                return ops.mse_loss(ops.linear(t["x"], t["W"], t["b"]),
                                    np.ones((b, dout)))
            return fn, inputs
        cases.append((f"linear#{rep}", *linear_case(), GRAD_TOL))

        def relu_case(rng=rng, rep=rep):
            x = rng.standard_normal((3, 5 + rep))
            # probe away from the kink
            x[np.abs(x) < 1e-3] = 0.5

            def fn(t):
                return ops.sum_all(ops.mul(ops.relu(t["x"]), ops.relu(t["x"])))
            return fn, {"x": x}
        cases.append((f"relu#{rep}", *relu_case(), GRAD_TOL))

        def softmax_nll_case(rng=rng, rep=rep):
            b, n = 3 + rep, 5 + rep
            targets = rng.integers(n, size=b)
            inputs = {"z": rng.standard_normal((b, n))}

            def fn(t):
                return ops.nll_loss(t["z"], targets)
            return fn, inputs
        cases.append((f"softmax_nll#{rep}", *softmax_nll_case(), GRAD_TOL))

        def softmax_entropy_case(rng=rng, rep=rep):
            inputs = {"z": rng.standard_normal((2 + rep, 4 + rep))}

            def fn(t):
                p = ops.softmax(t["z"])
                lp = ops.log_softmax(t["z"])
                return ops.sum_all(ops.mul(p, lp))
            return fn, inputs
        cases.append((f"softmax_entropy#{rep}", *softmax_entropy_case(), GRAD_TOL))

        def lstm_cell_case(rng=rng, rep=rep):
            din, hid = 4 + rep, 3 + rep
            inputs = {"x": rng.standard_normal(din),
                      "h": rng.standard_normal(hid),
                      "c": rng.standard_normal(hid),
                      "W": rng.standard_normal((din + hid, 4 * hid)) * 0.4,
                      "b": rng.standard_normal(4 * hid) * 0.1}

            def fn(t):
                h, c = ops.lstm_cell(t["x"], t["h"], t["c"], t["W"], t["b"])
                return ops.sum_all(ops.add(ops.mul(h, h), ops.mul(c, c)))
            return fn, inputs
        cases.append((f"lstm_cell#{rep}", *lstm_cell_case(), GRAD_TOL))

        def embedding_case(rng=rng, rep=rep):
            rows, dim = 6 + rep, 4
            ids = rng.integers(rows, size=5)
            inputs = {"T": rng.standard_normal((rows, dim))}

            def fn(t):
                e = ops.embedding_lookup(ids, t["T"])
                return ops.sum_all(ops.mul(e, e))
            return fn, inputs
        cases.append((f"embedding#{rep}", *embedding_case(), GRAD_TOL))

        def bow_case(rng=rng, rep=rep):
            rows, dim = 7 + rep, 4
            ids = np.array(list(rng.integers(rows - 1, size=4)) + [rows - 1])
            inputs = {"T": rng.standard_normal((rows, dim))}

            def fn(t):
                v = ops.bow_encode(ids, t["T"], pad_id=rows - 1)
                return ops.sum_all(ops.mul(v, v))
            return fn, inputs
        cases.append((f"bow#{rep}", *bow_case(), GRAD_TOL))

        def tied_case(rng=rng, rep=rep):
            rows, dim, b = 7 + rep, 4, 3
            targets = rng.integers(4, size=b)
            inputs = {"h": rng.standard_normal((b, dim)),
                      "T": rng.standard_normal((rows, dim))}

            def fn(t):
                logits = ops.tied_output(t["h"], t["T"], rows - 2)
                return ops.nll_loss(logits, targets)
            return fn, inputs
        cases.append((f"tied_output#{rep}", *tied_case(), GRAD_TOL))

    # 50-step unroll against finite differences (one case; tolerance 1e-4)
    rng = _rng(999)
    T, D, H = 50, 4, 3
    unroll_inputs = {"X": rng.standard_normal((T, D)),
                     "W": rng.standard_normal((D + H, 4 * H)) * 0.4,
                     "b": rng.standard_normal(4 * H) * 0.1}

    def unroll_fn(t):
        hs, _ = ops.lstm_sequence(t["X"], np.zeros(H), np.zeros(H),
                                  t["W"], t["b"])
        return ops.sum_all(ops.mul(hs, hs))
    cases.append(("lstm_unroll_50", unroll_fn, unroll_inputs, UNROLL_TOL))
    return cases


def adjointness_error(seed: int = 0) -> float:
    """max relative error of <deconv(y), x> == <y, conv(x)> at float64."""
    worst = 0.0
    for rep in range(3):
        rng = _rng(seed + rep)
        b, cin, cout, k, s = 2, 3, 4, 3 + rep, 1 + rep % 2
        n = k + s * 4
        x = rng.standard_normal((b, cin, n, n))
        w = rng.standard_normal((cout, cin, k, k))
        oh = (n - k) // s + 1
        y = rng.standard_normal((b, cout, oh, oh))
        cx, _ = ops.conv2d_raw(x, w, None, s)
        dy = ops.deconv2d_raw(y, w, None, s, out_hw=(n, n))
        lhs = float((dy * x).sum())
        rhs = float((y * cx).sum())
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1.0))
    return worst


def softmax_law_error(seed: int = 0) -> float:
    rng = _rng(seed)
    z = rng.standard_normal((64, 7))
    p = ops.softmax_raw(z)
    if p.min() < 0:
        return 1.0
    return float(np.abs(p.sum(axis=-1) - 1.0).max())


def run_numeric_suite(fast: bool = False, out=None) -> bool:
    """Run every gradient check plus adjointness and softmax laws; prints
    one line per check when ``out`` is given."""
    def say(msg):
        if out is not None:
            print(msg, file=out)

    ok = True
    for name, fn, inputs, tol in op_gradcheck_cases(fast=fast):
        report = grad_check(fn, inputs, tol=tol,
                            max_elements=120 if fast else 300)
        ok &= report.passed
        say(f"  gradcheck {name}: {report}")
    adj = adjointness_error()
    ok &= adj < ADJOINT_TOL
    say(f"  conv/deconv adjointness: {adj:.3e} (tol {ADJOINT_TOL:.0e})")
    sm = softmax_law_error()
    ok &= sm < 1e-6
    say(f"  softmax rows sum to 1: {sm:.3e} (tol 1e-06)")
    say("numeric suite: " + ("PASS" if ok else "FAIL"))
    return ok
