"""Template aggregation: symmetry, decomposition oracle, independence."""

import numpy as np
import pytest
from scipy.special import erf

from lightfcx import tensor as T
from lightfcx.params import ParamStore
from lightfcx.stam import Stam


@pytest.fixture
def stam():
    return Stam(ParamStore(), "stam.rgb", np.random.default_rng(0)).eval()


def eval_ln(x, ln):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + ln.eps) * ln.gamma.data + ln.beta.data


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


class TestStamForward:
    def test_output_shape(self, stam):
        rng = np.random.default_rng(1)
        z1 = T.Tensor(rng.normal(size=(1, 160, 8, 8)))
        zi = T.Tensor(rng.normal(size=(1, 160, 8, 8)))
        assert stam(z1, zi).shape == (1, 160, 8, 8)

    def test_tied_branches_symmetric_on_equal_templates(self):
        tied = Stam(ParamStore(), "stam.rgb", np.random.default_rng(2),
                    tie_branches=True).eval()
        rng = np.random.default_rng(3)
        z = T.Tensor(rng.normal(size=(1, 160, 4, 4)))
        f_tok, d_tok = tied.attn(
            T.Tensor(z.data.reshape(1, 160, 16).transpose(0, 2, 1)),
            T.Tensor(z.data.reshape(1, 160, 16).transpose(0, 2, 1)))
        assert np.abs(f_tok.data - d_tok.data).max() < 1e-12
        zf = tied.refine_fixed(z)
        zd = tied.refine_dyn(z)
        assert np.abs(zf.data - zd.data).max() == 0.0

    def test_against_layer_decomposed_oracle(self, stam):
        rng = np.random.default_rng(4)
        z1 = rng.normal(size=(1, 160, 3, 3))
        zi = rng.normal(size=(1, 160, 3, 3))
        out = stam(T.Tensor(z1), T.Tensor(zi)).data[0]

        def to_tokens(m):
            return m.reshape(160, -1).T

        t1, ti = to_tokens(z1[0]), to_tokens(zi[0])

        def attn_branch(q, other, proj, norm):
            res = np.zeros_like(q)
            for n in range(q.shape[0]):
                logits = (other @ q[n]) / np.sqrt(160.0)
                w = np.exp(logits - logits.max())
                w /= w.sum()
                crs = w @ q
                res[n] = q[n] + ((q[n] + crs) @ proj.w.data + proj.b.data)
            return eval_ln(res, norm)

        a1 = attn_branch(t1, ti, stam.attn.proj_a, stam.attn.norm_a)
        ai = attn_branch(ti, t1, stam.attn.proj_b, stam.attn.norm_b)

        def refine(tok, branch):
            m = tok.T.reshape(160, 3, 3)
            pad = np.pad(m, ((0, 0), (1, 1), (1, 1)))
            zs = np.zeros_like(m)
            for c in range(160):
                for y in range(3):
                    for x in range(3):
                        zs[c, y, x] = np.sum(pad[c, y:y + 3, x:x + 3]
                                             * branch.dw.w.data[c, 0])
            zs += branch.dw.b.data[:, None, None] + m
            up = np.einsum("chw,oc->ohw", zs, branch.up.w.data[:, :, 0, 0])
            up += branch.up.b.data[:, None, None]
            down = np.einsum("chw,oc->ohw", gelu(up), branch.down.w.data[:, :, 0, 0])
            down += branch.down.b.data[:, None, None]
            return down + zs

        s = refine(a1, stam.refine_fixed) + refine(ai, stam.refine_dyn)
        s_tok = to_tokens(s)
        joint = s_tok @ stam.linear.w.data + stam.linear.b.data + s_tok
        expected = eval_ln(joint, stam.norm).T.reshape(160, 3, 3)
        assert np.abs(out - expected).max() < 1e-10

    def test_pure_function_no_hidden_state(self, stam):
        rng = np.random.default_rng(5)
        z1 = T.Tensor(rng.normal(size=(1, 160, 4, 4)))
        zi = T.Tensor(rng.normal(size=(1, 160, 4, 4)))
        a = stam(z1, zi).data
        stam(T.Tensor(rng.normal(size=(1, 160, 4, 4))), zi)  # unrelated call
        b = stam(z1, zi).data
        assert np.array_equal(a, b)

    def test_gradient_flows_to_both_templates(self, stam):
        rng = np.random.default_rng(6)
        z1 = T.Tensor(rng.normal(size=(1, 160, 3, 3)), requires_grad=True)
        zi = T.Tensor(rng.normal(size=(1, 160, 3, 3)), requires_grad=True)
        T.tsum(stam(z1, zi)).backward()
        assert z1.grad is not None and np.abs(z1.grad).max() > 0
        assert zi.grad is not None and np.abs(zi.grad).max() > 0


class TestPerModality:
    def test_disjoint_parameter_names(self):
        store = ParamStore()
        Stam(store, "stam.rgb", np.random.default_rng(7))
        Stam(store, "stam.x", np.random.default_rng(8))
        rgb = set(store.names("stam.rgb."))
        x = set(store.names("stam.x."))
        assert rgb and x and not (rgb & x)
        assert set(store.names("stam.")) == rgb | x

    def test_modalities_computed_independently(self):
        store = ParamStore()
        rng = np.random.default_rng(9)
        stam_rgb = Stam(store, "stam.rgb", rng).eval()
        stam_x = Stam(store, "stam.x", rng).eval()
        data = np.random.default_rng(10).normal(size=(4, 1, 160, 4, 4))
        z_rt = stam_rgb(T.Tensor(data[0]), T.Tensor(data[1])).data
        stam_x(T.Tensor(data[2] * 3.0), T.Tensor(data[3] * -1.0))  # perturb x side
        z_rt_again = stam_rgb(T.Tensor(data[0]), T.Tensor(data[1])).data
        assert np.array_equal(z_rt, z_rt_again)
