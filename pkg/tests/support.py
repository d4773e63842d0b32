"""Shared test helpers: synthetic images, finite-difference gradient checks,
and an independent nested-loop attention oracle."""

import numpy as np
import torch
from scipy import ndimage

from thermosr.images import Image


def smooth_image(h, w, seed, sigma=3.0, lo=0.05, hi=0.95):
    """Band-limited random image: Gaussian-filtered noise rescaled to [lo, hi]."""
    rng = np.random.default_rng(seed)
    x = ndimage.gaussian_filter(rng.standard_normal((h, w)), sigma)
    x = x - x.min()
    x = x / max(x.max(), 1e-12)
    return Image(lo + (hi - lo) * x)


def textured_image(h, w, seed):
    """Two-scale random texture, rich in blob-like features for keypoints."""
    rng = np.random.default_rng(seed)
    coarse = ndimage.gaussian_filter(rng.standard_normal((h, w)), 4.0)
    fine = ndimage.gaussian_filter(rng.standard_normal((h, w)), 1.5)
    x = coarse + 0.5 * fine
    x = x - x.min()
    x = x / max(x.max(), 1e-12)
    return Image(0.05 + 0.9 * x)


def _forward_sum(module, inputs):
    out = module(*inputs)
    if isinstance(out, tuple):
        return sum(o.sum() for o in out)
    return out.sum()


def fd_param_check(module, inputs, h=1e-5, rtol=1e-4, atol=1e-8):
    """Compare autograd gradients of sum(module(*inputs)) against central
    finite differences for every parameter element, at 64-bit precision.

    Elements whose absolute error sits below `atol` (the FD cancellation
    floor; e.g. gradients through masked attention logits are ~0) are not
    held to the relative bound. Returns the worst relative error among
    the elements the bound applied to.
    """
    module = module.double()
    inputs = [x.double() for x in inputs]
    module.zero_grad()
    _forward_sum(module, inputs).backward()

    worst = 0.0
    with torch.no_grad():
        for name, p in module.named_parameters():
            grad = p.grad if p.grad is not None else torch.zeros_like(p)
            flat, gflat = p.reshape(-1), grad.reshape(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                f_plus = _forward_sum(module, inputs).item()
                flat[i] = orig - h
                f_minus = _forward_sum(module, inputs).item()
                flat[i] = orig
                fd = (f_plus - f_minus) / (2.0 * h)
                ad = gflat[i].item()
                err = abs(fd - ad)
                rel = err / max(abs(fd), abs(ad), 1e-30)
                if err > atol:
                    worst = max(worst, rel)
                    assert rel < rtol, (
                        f"{name}[{i}]: fd={fd:.8g} autograd={ad:.8g} rel={rel:.3g}")
    return worst


def fd_input_check(fn, x, h=1e-5, rtol=1e-4, atol=1e-8):
    """Finite-difference check of a scalar-valued fn w.r.t. an input tensor."""
    x = x.double().clone().requires_grad_(True)
    fn(x).backward()
    grad = x.grad.reshape(-1)
    flat = x.detach().reshape(-1)
    worst = 0.0
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            f_plus = fn(x.detach()).item()
            flat[i] = orig - h
            f_minus = fn(x.detach()).item()
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            ad = grad[i].item()
            err = abs(fd - ad)
            rel = err / max(abs(fd), abs(ad), 1e-30)
            if err > atol:
                worst = max(worst, rel)
                assert rel < rtol, f"input[{i}]: fd={fd:.8g} autograd={ad:.8g} rel={rel:.3g}"
    return worst


def window_attention_oracle(module, x, shift):
    """Nested-loop reimplementation of shifted-window attention in numpy.

    Reads the module's parameters but shares none of its tensor code:
    explicit loops over windows, heads, and token pairs.
    """
    xb = x.detach().double().numpy()
    b, c, hgt, wid = xb.shape
    w = module.window
    heads = module.heads
    hd = c // heads
    scale = hd ** -0.5

    qkv_w = module.qkv.weight.detach().double().numpy()
    qkv_b = module.qkv.bias.detach().double().numpy()
    proj_w = module.proj.weight.detach().double().numpy()
    proj_b = module.proj.bias.detach().double().numpy()
    table = module.relative_position_bias_table.detach().double().numpy()

    shifted = np.roll(xb, (-shift, -shift), axis=(2, 3))

    def region(y, x_):
        ry = 0 if y < hgt - w else (1 if y < hgt - shift else 2)
        rx = 0 if x_ < wid - w else (1 if x_ < wid - shift else 2)
        return ry * 3 + rx

    out = np.zeros_like(shifted)
    for bi in range(b):
        for wy in range(hgt // w):
            for wx in range(wid // w):
                coords = [(wy * w + i, wx * w + j) for i in range(w) for j in range(w)]
                tokens = np.array([shifted[bi, :, y, x_] for (y, x_) in coords])  # n, C
                n = len(tokens)
                q = tokens @ qkv_w[:c].T + qkv_b[:c]
                k = tokens @ qkv_w[c:2 * c].T + qkv_b[c:2 * c]
                v = tokens @ qkv_w[2 * c:].T + qkv_b[2 * c:]
                merged = np.zeros((n, c))
                for head in range(heads):
                    sl = slice(head * hd, (head + 1) * hd)
                    logits = np.zeros((n, n))
                    for i in range(n):
                        for j in range(n):
                            yi, xi = i // w, i % w
                            yj, xj = j // w, j % w
                            rel = (yi - yj + w - 1) * (2 * w - 1) + (xi - xj + w - 1)
                            logits[i, j] = np.dot(q[i, sl], k[j, sl]) * scale + table[rel, head]
                            if shift and region(*coords[i]) != region(*coords[j]):
                                logits[i, j] += -100.0
                    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
                    probs = probs / probs.sum(axis=1, keepdims=True)
                    merged[:, sl] = probs @ v[:, sl]
                res = merged @ proj_w.T + proj_b
                for t, (y, x_) in enumerate(coords):
                    out[bi, :, y, x_] = res[t]
    return np.roll(out, (shift, shift), axis=(2, 3))


class FixedDraw:
    """Duck-typed rng stub returning scripted values from `integers` calls."""

    def __init__(self, values):
        self.values = list(values)

    def integers(self, low, high):
        return self.values.pop(0)
