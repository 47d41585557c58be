"""Finite-difference verification of every differentiable block.

Each check builds a scalar-valued function around one probe tensor with
freshly seeded constants, then compares the taped gradient against
central differences. Losses must agree to 1e-6, everything else to 1e-5.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import blocks as B
from . import tensor as T
from . import train as TR
from .tensor import Tensor

OP_TOL = 1e-5
LOSS_TOL = 1e-6


def _away_from_zero(x: np.ndarray, margin: float = 0.2) -> np.ndarray:
    # keeps relu/abs kinks out of the finite-difference stencil
    return x + margin * np.where(x >= 0, 1.0, -1.0)


def _check_conv1d(rng):
    w = Tensor(rng.normal(size=(3, 2, 3)))
    c = Tensor(rng.normal(size=(2, 3, 5)))
    x0 = Tensor(rng.normal(size=(2, 2, 9)))
    return lambda x: T.tsum(T.conv1d(x, w, 2, "same") * c), x0


def _check_conv1d_kernel(rng):
    x = Tensor(rng.normal(size=(2, 2, 9)))
    c = Tensor(rng.normal(size=(2, 3, 7)))
    w0 = Tensor(rng.normal(size=(3, 2, 3)))
    return lambda w: T.tsum(T.conv1d(x, w, 1, "valid") * c), w0


def _check_depthwise(rng):
    w = Tensor(rng.normal(size=(3, 3)))
    c = Tensor(rng.normal(size=(2, 3, 4)))
    x0 = Tensor(rng.normal(size=(2, 3, 8)))
    return lambda x: T.tsum(T.depthwise_conv1d(x, w, 2, "same") * c), x0


def _check_matmul(rng):
    b = Tensor(rng.normal(size=(4, 3)))
    c = Tensor(rng.normal(size=(2, 3)))
    a0 = Tensor(rng.normal(size=(2, 4)))
    return lambda a: T.tsum(T.matmul(a, b) * c), a0


def _check_relu(rng):
    c = Tensor(rng.normal(size=(8,)))
    x0 = Tensor(_away_from_zero(rng.normal(size=(8,))))
    return lambda x: T.tsum(T.relu(x) * c), x0


def _check_sigmoid(rng):
    c = Tensor(rng.normal(size=(8,)))
    return lambda x: T.tsum(T.sigmoid(x) * c), Tensor(rng.normal(size=(8,)))


def _check_swish(rng):
    c = Tensor(rng.normal(size=(8,)))
    return lambda x: T.tsum(T.swish(x) * c), Tensor(rng.normal(size=(8,)))


def _check_softmax(rng):
    c = Tensor(rng.normal(size=(3, 5)))
    return lambda x: T.tsum(T.softmax(x, axis=-1) * c), Tensor(rng.normal(size=(3, 5)))


def _check_pool(rng):
    c = Tensor(rng.normal(size=(2, 3)))
    return lambda x: T.tsum(T.global_avg_pool(x) * c), Tensor(rng.normal(size=(2, 3, 6)))


def _check_concat(rng):
    other = Tensor(rng.normal(size=(2, 3)))
    c = Tensor(rng.normal(size=(4, 3)))
    return lambda x: T.tsum(T.concat([x, other], axis=0) * c), Tensor(rng.normal(size=(2, 3)))


def _check_bn_train(rng):
    bn = B.BatchNorm1d(3)
    bn.gamma.data = rng.normal(1.0, 0.2, size=3)
    bn.beta.data = rng.normal(size=3)
    c = Tensor(rng.normal(size=(4, 3, 5)))
    return lambda x: T.tsum(bn(x, "train") * c), Tensor(rng.normal(size=(4, 3, 5)))


def _check_bn_eval(rng):
    bn = B.BatchNorm1d(3)
    bn.running_mean = rng.normal(size=3)
    bn.running_var = rng.uniform(0.5, 2.0, size=3)
    c = Tensor(rng.normal(size=(2, 3, 5)))
    return lambda x: T.tsum(bn(x, "eval") * c), Tensor(rng.normal(size=(2, 3, 5)))


def _check_se(rng):
    se = B.SeBlock(4, 2, rng)
    c = Tensor(rng.normal(size=(2, 4, 5)))
    return lambda x: T.tsum(se(x) * c), Tensor(rng.normal(size=(2, 4, 5)))


def _check_mbconv(rng):
    blk = B.MbConvBlock(2, 2, 2, 3, 1, 2, rng)
    c = Tensor(rng.normal(size=(2, 2, 6)))
    return lambda x: T.tsum(blk(x, "train") * c), Tensor(rng.normal(size=(2, 2, 6)))


def _check_mbconv_weight(rng):
    blk = B.MbConvBlock(2, 3, 2, 3, 2, 2, rng)
    x = Tensor(rng.normal(size=(2, 2, 6)))
    c = Tensor(rng.normal(size=(2, 3, 3)))
    w0 = Tensor(blk.depthwise.w.data.copy())

    def f(w):
        blk.depthwise.w = w
        return T.tsum(blk(x, "train") * c)

    return f, w0


def _check_lstm_cell(rng):
    cell = B.LstmCell(2, 3, rng)
    steps = [Tensor(rng.normal(size=(2, 2))) for _ in range(2)]
    c = Tensor(rng.normal(size=(2, 3)))

    def f(x0):
        h = Tensor(np.zeros((2, 3)))
        cc = Tensor(np.zeros((2, 3)))
        h, cc = cell(x0, h, cc)
        for s in steps:
            h, cc = cell(s, h, cc)
        return T.tsum(h * c)

    return f, Tensor(rng.normal(size=(2, 2)))


def _check_lstm_ae(rng):
    ae = B.LstmAutoencoder(3, rng)
    mask = np.array([[1.0, 1.0, 0.0], [1.0, 0.0, 0.0]])
    c = Tensor(rng.normal(size=(2, 3)))
    vals = rng.normal(size=(2, 3))

    def f(w):
        ae.encoder.gates["i"] = (w, ae.encoder.gates["i"][1], ae.encoder.gates["i"][2])
        return T.tsum(ae.encode(vals, mask) * c)

    return f, Tensor(ae.encoder.gates["i"][0].data.copy())


def _check_embedding(rng):
    idx = rng.integers(0, 5, size=4)
    c = Tensor(rng.normal(size=(4, 3)))
    t0 = Tensor(rng.normal(size=(5, 3)))
    return lambda tbl: T.tsum(T.gather_rows(tbl, idx) * c), t0


def _check_cross_attention(rng):
    fus = B.CrossAttentionFusion(tokens=2, token_width=3, feat_dim=4, attn_dim=3,
                                 align_dim=5, rng=rng)
    age = Tensor(rng.normal(size=(2, 4)))
    gender = Tensor(rng.normal(size=(2, 4)))
    c = Tensor(rng.normal(size=(2, 5)))
    return lambda tok: T.tsum(fus(tok, age, gender) * c), Tensor(rng.normal(size=(2, 2, 3)))


def _check_cross_attention_proj(rng):
    fus = B.CrossAttentionFusion(tokens=2, token_width=3, feat_dim=4, attn_dim=3,
                                 align_dim=5, rng=rng)
    tok = Tensor(rng.normal(size=(2, 2, 3)))
    age = Tensor(rng.normal(size=(2, 4)))
    gender = Tensor(rng.normal(size=(2, 4)))
    c = Tensor(rng.normal(size=(2, 5)))
    w0 = Tensor(fus.w_qa.data.copy())

    def f(w):
        fus.w_qa = w
        return T.tsum(fus(tok, age, gender) * c)

    return f, w0


def _check_mse_l2_pred(rng):
    y = rng.integers(0, 2, size=6).astype(np.float64)
    w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    return (lambda p: TR.mse_l2_loss(y, T.sigmoid(p), [w], lam=0.3, m=6),
            Tensor(rng.normal(size=(6,))))


def _check_mse_l2_weight(rng):
    y = rng.integers(0, 2, size=4).astype(np.float64)
    y_hat = Tensor(rng.uniform(0.1, 0.9, size=4))
    return (lambda w: TR.mse_l2_loss(y, y_hat, [w], lam=0.7, m=4),
            Tensor(rng.normal(size=(3, 2))))


def _check_bce(rng):
    y = rng.integers(0, 2, size=(3, 4)).astype(np.float64)
    return (lambda z: TR.bce_loss(y, T.sigmoid(z), n=3),
            Tensor(rng.uniform(-4.0, 4.0, size=(3, 4))))


def _check_ce(rng):
    y = np.zeros((3, 4))
    y[np.arange(3), rng.integers(0, 4, size=3)] = 1.0
    return (lambda z: TR.ce_loss(y, T.softmax(z, axis=-1), m=3),
            Tensor(rng.normal(size=(3, 4))))


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


SUITE = [
    ("conv1d", _check_conv1d, OP_TOL),
    ("conv1d_kernel", _check_conv1d_kernel, OP_TOL),
    ("depthwise_conv1d", _check_depthwise, OP_TOL),
    ("matmul", _check_matmul, OP_TOL),
    ("relu", _check_relu, OP_TOL),
    ("sigmoid", _check_sigmoid, OP_TOL),
    ("swish", _check_swish, OP_TOL),
    ("softmax", _check_softmax, OP_TOL),
    ("global_avg_pool", _check_pool, OP_TOL),
    ("concat", _check_concat, OP_TOL),
    ("batchnorm_train", _check_bn_train, OP_TOL),
    ("batchnorm_eval", _check_bn_eval, OP_TOL),
    ("se_block", _check_se, OP_TOL),
    ("mbconv", _check_mbconv, OP_TOL),
    ("mbconv_weight", _check_mbconv_weight, OP_TOL),
    ("lstm_cell", _check_lstm_cell, OP_TOL),
    ("lstm_ae_encoder", _check_lstm_ae, OP_TOL),
    ("embedding", _check_embedding, OP_TOL),
    ("cross_attention", _check_cross_attention, OP_TOL),
    ("cross_attention_proj", _check_cross_attention_proj, OP_TOL),
    ("mse_l2_loss", _check_mse_l2_pred, LOSS_TOL),
    ("mse_l2_weight_term", _check_mse_l2_weight, LOSS_TOL),
    ("bce_loss", _check_bce, LOSS_TOL),
    ("ce_loss", _check_ce, LOSS_TOL),
]


def run_suite(seed: int = 0, trials: int = 8) -> list[CheckResult]:
    """``trials`` independently seeded repetitions of every check; reports
    the worst relative error per block."""
    results = []
    for index, (name, builder, tol) in enumerate(SUITE):
        worst = 0.0
        for trial in range(trials):
            rng = np.random.default_rng(np.random.SeedSequence([seed, index, trial]))
            f, x0 = builder(rng)
            worst = max(worst, T.grad_check(f, x0))
        results.append(CheckResult(name, worst, tol))
    return results
