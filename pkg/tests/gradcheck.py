"""Central finite-difference oracle for Winograd layer gradients."""
import numpy as np

from wino3d.layer import WinogradLayer, backward, forward_lowrank


def random_lowrank_layer(gen, co, ci, s, sparsity=0.0):
    G_W = gen.standard_normal((co * ci, 64))
    layer = WinogradLayer(co, ci, G_W, gen.standard_normal((co * ci, s)), gen.standard_normal((s, 64)),
                          np.ones(64, bool))
    if sparsity:
        mask = np.ones(64, bool)
        mask[gen.permutation(64)[:int(sparsity * 64)]] = False
        layer.set_mask(mask)
    return layer


def _fd(f, x, eps):
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = f()
        flat[i] = old - eps
        down = f()
        flat[i] = old
        gf[i] = (up - down) / (2 * eps)
    return g


def gradcheck(layer, x, weight, eps=1e-5):
    """Worst relative error of (dG_r, dG_c, dI) against central differences of sum(O * weight)."""
    def loss():
        layer.touch()
        return float(np.sum(forward_lowrank(layer, x)[0] * weight))

    _, cache = forward_lowrank(layer, x)
    dG_r, dG_c, dI = backward(layer, cache, weight)
    errs = []
    for analytic, target in ((dG_r, layer.G_r), (dG_c, layer.G_c), (dI, x)):
        numeric = _fd(loss, target, eps)
        errs.append(np.abs(analytic - numeric).max() / max(np.abs(numeric).max(), 1e-300))
    return errs
