import numpy as np
import pytest

from lesionseg.errors import ConfigError
from lesionseg.optim import PolySGD
from lesionseg.tensor import Tensor


def make_param(value=1.0):
    return Tensor(np.full((1, 1, 1, 1), value), requires_grad=True)


class TestSchedule:
    def test_half_schedule_golden(self):
        opt = PolySGD([make_param()], lr0=1e-4, power=0.9, total_iters=1000)
        assert abs(opt.lr_at(500) - 1e-4 * 0.5 ** 0.9) < 1e-9
        assert abs(opt.lr_at(500) - 5.358867312681466e-05) < 1e-9

    def test_endpoints(self):
        opt = PolySGD([make_param()], lr0=3e-3, power=0.9, total_iters=200)
        assert opt.lr_at(0) == 3e-3
        assert opt.lr_at(200) == 0.0
        assert opt.lr_at(9999) == 0.0  # clamped, never negative or complex

    def test_monotone_decay(self):
        opt = PolySGD([make_param()], lr0=1.0, power=0.9, total_iters=50)
        lrs = [opt.lr_at(i) for i in range(51)]
        assert all(a > b for a, b in zip(lrs, lrs[1:]))


class TestStep:
    def test_momentum_recurrence_golden(self):
        # constant gradient 2, lr0 = 0.1, momentum 0.5, linear decay over
        # 10 iters; by hand: p = 1 - 0.1*2 - 0.09*3 - 0.08*3.5 = 0.25
        p = make_param(1.0)
        opt = PolySGD([p], lr0=0.1, momentum=0.5, power=1.0, total_iters=10)
        for it in range(3):
            p.grad = np.full((1, 1, 1, 1), 2.0)
            opt.step(it)
        assert abs(float(p.data.reshape(())) - 0.25) < 1e-12

    def test_zero_momentum_is_plain_sgd(self):
        p = make_param(0.0)
        opt = PolySGD([p], lr0=0.5, momentum=0.0, power=1.0, total_iters=100)
        p.grad = np.full((1, 1, 1, 1), 1.0)
        opt.step(0)
        p.grad = np.full((1, 1, 1, 1), 1.0)
        opt.step(1)
        expect = -0.5 - 0.5 * 0.99
        assert abs(float(p.data.reshape(())) - expect) < 1e-12

    def test_step_returns_lr(self):
        p = make_param()
        opt = PolySGD([p], lr0=1e-2, total_iters=4)
        p.grad = np.zeros((1, 1, 1, 1))
        assert opt.step(0) == 1e-2

    def test_none_grad_skipped(self):
        p = make_param(1.0)
        p.grad = None
        opt = PolySGD([p], lr0=0.1, total_iters=10)
        opt.step(0)
        assert float(p.data.reshape(())) == 1.0

    def test_zero_grad_resets(self):
        p = make_param()
        p.grad = np.full((1, 1, 1, 1), 3.0)
        opt = PolySGD([p], lr0=0.1, total_iters=10)
        opt.zero_grad()
        assert p.grad is not None and float(p.grad.reshape(())) == 0.0

    def test_updates_in_place(self):
        # the training loop holds references to the same arrays the
        # network reads from; the optimizer must not rebind them
        p = make_param(1.0)
        raw = p.data
        opt = PolySGD([p], lr0=0.1, total_iters=10)
        p.grad = np.full((1, 1, 1, 1), 1.0)
        opt.step(0)
        assert p.data is raw


class TestValidation:
    def test_rejects_empty_params(self):
        with pytest.raises(ConfigError):
            PolySGD([], lr0=0.1)

    @pytest.mark.parametrize("kw", [
        {"lr0": 0.0},
        {"lr0": 0.1, "momentum": 1.0},
        {"lr0": 0.1, "total_iters": 0},
    ])
    def test_rejects_bad_hyperparameters(self, kw):
        with pytest.raises(ConfigError):
            PolySGD([make_param()], **kw)
