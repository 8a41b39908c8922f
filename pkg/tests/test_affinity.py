import numpy as np
import pytest

import lesionseg.tensor as T
from lesionseg.affinity import LocalAffinity
from lesionseg.errors import ShapeError
from lesionseg.tensor import Tensor, backward

from oracles import max_rel_err, numeric_grad

E = np.e


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def zeroed(module):
    for _, p in module.named_parameters():
        p.data[...] = 0.0
    return module


class TestFuse:
    def test_zero_context_passes_head_through(self, rng):
        mod = LocalAffinity(4, rng)
        f_head = Tensor(rng.standard_normal((2, 4, 3, 3)))
        out = mod.fuse(f_head, Tensor(np.zeros((2, 4, 3, 3))))
        assert np.array_equal(out.data, f_head.data)

    def test_gate_saturation(self, rng):
        f_head = Tensor(rng.standard_normal((1, 4, 3, 3)))
        f_ctx = Tensor(rng.standard_normal((1, 4, 3, 3)))

        closed = zeroed(LocalAffinity(4, rng))
        closed.gate.bias.data[...] = -40.0
        out = closed.fuse(f_head, f_ctx)
        assert np.allclose(out.data, f_head.data, atol=1e-12)

        open_ = zeroed(LocalAffinity(4, rng))
        open_.gate.bias.data[...] = 40.0
        out = open_.fuse(f_head, f_ctx)
        assert np.allclose(out.data, f_head.data + f_ctx.data, atol=1e-12)

    def test_shape_mismatch_rejected(self, rng):
        mod = LocalAffinity(4, rng)
        with pytest.raises(ShapeError):
            mod.fuse(Tensor(np.zeros((1, 4, 3, 3))),
                     Tensor(np.zeros((1, 4, 2, 2))))


class TestAffinity:
    def test_orthonormal_pair(self, rng):
        """Positions (1,0) and (0,1): each row is softmax([1, 0]) in some
        order, i.e. e/(e+1) on the diagonal."""
        mod = LocalAffinity(2, rng)
        f = Tensor(np.array([1.0, 0.0, 0.0, 1.0]).reshape(1, 2, 1, 2))
        s = mod.affinity(f).data[0, 0]
        hi, lo = E / (E + 1.0), 1.0 / (E + 1.0)
        assert abs(s[0, 0] - hi) <= 1e-5 and abs(s[0, 1] - lo) <= 1e-5
        assert abs(s[1, 0] - lo) <= 1e-5 and abs(s[1, 1] - hi) <= 1e-5
        assert abs(s[0, 0] - 0.73106) <= 1e-5
        assert abs(s[0, 1] - 0.26894) <= 1e-5

    def test_identical_positions_give_uniform_rows(self, rng):
        mod = LocalAffinity(3, rng)
        one = np.ones((1, 3, 2, 2)) * 1.7
        s = mod.affinity(Tensor(one)).data
        assert np.allclose(s, 0.25, atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_rows_are_stochastic(self, seed):
        rng = np.random.default_rng(seed)
        mod = LocalAffinity(4, rng)
        f = Tensor(rng.standard_normal((2, 4, 3, 3)) * 3)
        s = mod.affinity(f).data
        assert np.all(np.abs(s.sum(axis=-1) - 1.0) <= 1e-9)
        assert np.all(s > 0)

    def test_symmetric_scores_do_not_make_symmetric_weights(self, rng):
        mod = LocalAffinity(2, rng)
        # vectors (2, 0) and (1, 1): scores [[4, 2], [2, 2]] are symmetric
        # but row softmax is not
        f = Tensor(np.array([2.0, 1.0, 0.0, 1.0]).reshape(1, 2, 1, 2))
        s = mod.affinity(f).data[0, 0]
        assert abs(s[0, 1] - s[1, 0]) > 0.1

    def test_scaling_sharpens_rows(self, rng):
        mod = LocalAffinity(3, rng)
        f = rng.standard_normal((1, 3, 2, 2))
        s1 = mod.affinity(Tensor(f)).data[0, 0]
        s2 = mod.affinity(Tensor(2.0 * f)).data[0, 0]

        def entropy(rows):
            return float(-(rows * np.log(rows)).sum(axis=-1).mean())

        assert entropy(s2) < entropy(s1)

    def test_batch_items_do_not_mix(self, rng):
        mod = LocalAffinity(4, rng)
        f = rng.standard_normal((2, 4, 3, 3))
        base = mod.affinity(Tensor(f)).data
        pert = f.copy()
        pert[0] += 1.0
        after = mod.affinity(Tensor(pert)).data
        assert np.array_equal(base[1], after[1])
        assert not np.allclose(base[0], after[0])


class TestUpdate:
    def test_hand_computed_update(self, rng):
        """f_L = (2, 4), S = [[0.75, 0.25], [0.5, 0.5]], residual (1, 1)
        gives (0.75*2 + 0.25*4 + 1, 0.5*2 + 0.5*4 + 1) = (3.5, 4.0)."""
        mod = LocalAffinity(1, rng)
        fused = Tensor(np.array([2.0, 4.0]).reshape(1, 1, 1, 2))
        s = Tensor(np.array([[0.75, 0.25], [0.5, 0.5]]).reshape(1, 1, 2, 2))
        resid = Tensor(np.ones((1, 1, 1, 2)))
        out = mod.update(fused, s, resid).data.reshape(-1)
        assert abs(out[0] - 3.5) <= 1e-12
        assert abs(out[1] - 4.0) <= 1e-12

    def test_identity_weights(self, rng):
        mod = LocalAffinity(2, rng)
        fused = Tensor(rng.standard_normal((1, 2, 2, 2)))
        resid = Tensor(rng.standard_normal((1, 2, 2, 2)))
        eye = Tensor(np.eye(4).reshape(1, 1, 4, 4))
        out = mod.update(fused, eye, resid)
        assert np.allclose(out.data, fused.data + resid.data, atol=1e-12)

    def test_uniform_weights_average(self, rng):
        mod = LocalAffinity(1, rng)
        fused = Tensor(np.array([1.0, 2.0, 3.0, 6.0]).reshape(1, 1, 2, 2))
        resid = Tensor(np.zeros((1, 1, 2, 2)))
        uni = Tensor(np.full((1, 1, 4, 4), 0.25))
        out = mod.update(fused, uni, resid)
        assert np.allclose(out.data, 3.0, atol=1e-12)


class TestForward:
    def test_ablated_context_falls_back_to_head(self, rng):
        mod = LocalAffinity(3, rng)
        f_head = Tensor(rng.standard_normal((1, 3, 2, 2)))
        out, s = mod.forward(f_head)
        want = mod.update(f_head, mod.affinity(f_head), f_head)
        assert np.allclose(out.data, want.data, atol=1e-14)
        assert s.data.shape == (1, 1, 4, 4)

    def test_qk_projection_toggle(self, rng):
        plain = LocalAffinity(3, rng, qk_proj=False)
        proj = LocalAffinity(3, np.random.default_rng(1), qk_proj=True)
        names_plain = {n for n, _ in plain.named_parameters()}
        names_proj = {n for n, _ in proj.named_parameters()}
        assert not any(n.startswith(("query", "key")) for n in names_plain)
        assert any(n.startswith("query.") for n in names_proj)
        assert any(n.startswith("key.") for n in names_proj)
        f = Tensor(np.random.default_rng(2).standard_normal((1, 3, 2, 2)))
        out, s = proj.forward(f)
        assert np.all(np.abs(s.data.sum(axis=-1) - 1.0) <= 1e-9)

    @pytest.mark.parametrize("seed", range(5))
    def test_full_chain_gradients(self, seed):
        rng = np.random.default_rng(seed)
        mod = LocalAffinity(4, rng)
        f_head = rng.standard_normal((1, 4, 3, 3))
        f_ctx = rng.standard_normal((1, 4, 3, 3))
        proj = rng.standard_normal((1, 4, 3, 3))

        tensors = {"head": Tensor(f_head, requires_grad=True),
                   "ctx": Tensor(f_ctx, requires_grad=True)}

        def run(h, c):
            out, _ = mod.forward(h, c)
            return T.sum_all(T.ew_mul(out, Tensor(proj)))

        backward(run(tensors["head"], tensors["ctx"]))

        def value():
            return run(Tensor(f_head), Tensor(f_ctx)).item()

        for name, arr in (("head", f_head), ("ctx", f_ctx)):
            num = numeric_grad(value, arr)
            rel = max_rel_err(tensors[name].grad, num)
            assert rel < 1e-4, f"{name}: rel err {rel:.2e}"
