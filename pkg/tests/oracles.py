"""Independent reference implementations used by the unit and acceptance tests.

Everything here is written with explicit loops or scalar arithmetic so that
it shares no code path with the package under test.
"""

import itertools
import math

import numpy as np
import torch


def bilinear_at(img, y, x):
    """Scalar bilinear lookup with edge clamping."""
    h, w = img.shape[:2]
    y = min(max(y, 0.0), h - 1.0)
    x = min(max(x, 0.0), w - 1.0)
    y0, x0 = int(math.floor(y)), int(math.floor(x))
    y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
    fy, fx = y - y0, x - x0
    return ((1 - fy) * ((1 - fx) * img[y0, x0] + fx * img[y0, x1])
            + fy * ((1 - fx) * img[y1, x0] + fx * img[y1, x1]))


def gather_oracle(x, sy, sx):
    """Bilinear lookup of x (C, H, W) at float coords, zeros outside the map."""
    c, h, w = x.shape
    out = np.zeros(c)
    y0, x0 = int(np.floor(sy)), int(np.floor(sx))
    for yy, xx in itertools.product((y0, y0 + 1), (x0, x0 + 1)):
        wgt = (1 - abs(sy - yy)) * (1 - abs(sx - xx))
        if 0 <= yy < h and 0 <= xx < w and wgt > 0:
            out += wgt * x[:, yy, xx]
    return out


def mse_oracle(a, b):
    a = np.clip(a, 0, 1)
    b = np.clip(b, 0, 1)
    total, count = 0.0, 0
    for x, y in zip(a.ravel().tolist(), b.ravel().tolist()):
        total += (x - y) * (x - y)
        count += 1
    return total / count


def psnr_oracle(a, b):
    return 10.0 * math.log10(1.0 / mse_oracle(a, b))


def ssim_oracle(x, y, L=1.0):
    """Per-window luminance * contrast * structure with c3 = c2 / 2, by explicit loops."""
    c1, c2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    c3 = c2 / 2
    g = np.exp(-((np.arange(11) - 5.0) ** 2) / (2 * 1.5 ** 2))
    win = np.outer(g, g)
    win /= win.sum()
    h, w = x.shape
    vals = []
    for i in range(h - 10):
        for j in range(w - 10):
            px, py = x[i:i + 11, j:j + 11], y[i:i + 11, j:j + 11]
            mx, my = (win * px).sum(), (win * py).sum()
            vx = (win * (px - mx) ** 2).sum()
            vy = (win * (py - my) ** 2).sum()
            cov = (win * (px - mx) * (py - my)).sum()
            sx, sy = math.sqrt(vx), math.sqrt(vy)
            lum = (2 * mx * my + c1) / (mx ** 2 + my ** 2 + c1)
            con = (2 * sx * sy + c2) / (vx + vy + c2)
            struct = (cov + c3) / (sx * sy + c3)
            vals.append(lum * con * struct)
    return float(np.mean(vals))


def pixel_shuffle_oracle(x, r):
    """Explicit index permutation (C*r*r, H, W) -> (C, H*r, W*r)."""
    crr, h, w = x.shape
    c = crr // (r * r)
    out = torch.empty(c, h * r, w * r, dtype=x.dtype)
    for ch, y, xx in itertools.product(range(c), range(h * r), range(w * r)):
        out[ch, y, xx] = x[ch * r * r + (y % r) * r + (xx % r), y // r, xx // r]
    return out


def fd_gradient_error(fn, inputs, eps=1e-6, seed=0):
    """Relative error between autograd and central-difference input gradients.

    ``fn`` maps the float64 ``inputs`` to a tensor; the scalar checked is
    ``sum(fn(*inputs) * probe)`` with a fixed random probe, so every output
    element contributes. Returns ``max_k |g_k - n_k| / max(|n|_inf, 1e-12)``
    over all inputs jointly.
    """
    inputs = [t.detach().clone().double().requires_grad_(True) for t in inputs]
    out = fn(*inputs)
    probe = torch.randn(out.shape, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)
    (out * probe).sum().backward()
    analytic = [t.grad.detach().clone() for t in inputs]
    worst, scale = 0.0, 0.0
    with torch.no_grad():
        for t, g in zip(inputs, analytic):
            flat = t.view(-1)
            for k in range(flat.numel()):
                orig = flat[k].item()
                flat[k] = orig + eps
                up = (fn(*inputs) * probe).sum().item()
                flat[k] = orig - eps
                down = (fn(*inputs) * probe).sum().item()
                flat[k] = orig
                num = (up - down) / (2 * eps)
                worst = max(worst, abs(g.view(-1)[k].item() - num))
                scale = max(scale, abs(num))
    return worst / max(scale, 1e-12)
