"""Independent loop-based reference implementations used as test oracles."""

import numpy as np


def oracle_routing(u_hat, iterations):
    """u_hat[j][i] is a list of floats. Returns (c, b, v) as nested lists."""
    n_out, n_in = len(u_hat), len(u_hat[0])
    dim = len(u_hat[0][0])
    b = [[0.0] * n_out for _ in range(n_in)]
    c = v = None
    for _ in range(iterations):
        c = []
        for i in range(n_in):
            ex = [np.exp(b[i][j]) for j in range(n_out)]
            tot = sum(ex)
            c.append([e / tot for e in ex])
        v = []
        for j in range(n_out):
            s = [sum(c[i][j] * u_hat[j][i][d] for i in range(n_in)) for d in range(dim)]
            sq = sum(x * x for x in s)
            norm = np.sqrt(sq + 1e-8)
            v.append([sq / (1 + sq) * x / norm for x in s])
        for i in range(n_in):
            for j in range(n_out):
                b[i][j] += sum(v[j][d] * u_hat[j][i][d] for d in range(dim))
    return c, b, v


def oracle_collapse(u_hat, c):
    n_out, n_in, dim = len(u_hat), len(u_hat[0]), len(u_hat[0][0])
    return [[sum(c[i][j] * u_hat[j][i][d] for i in range(n_in)) for d in range(dim)]
            for j in range(n_out)]


def brute_ssim(a, b, data_range=1.0, size=11, sigma=1.5):
    """Weighted statistics recomputed for every fully-inside window position."""
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    per_channel = []
    for x, y in zip(a, b):
        vals = []
        for i in range(x.shape[0] - size + 1):
            for j in range(x.shape[1] - size + 1):
                px, py = x[i:i + size, j:j + size], y[i:i + size, j:j + size]
                mx, my = (g * px).sum(), (g * py).sum()
                vx = (g * (px - mx) ** 2).sum()
                vy = (g * (py - my) ** 2).sum()
                cxy = (g * (px - mx) * (py - my)).sum()
                vals.append((2 * mx * my + c1) * (2 * cxy + c2)
                            / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2)))
        per_channel.append(np.mean(vals))
    return float(np.mean(per_channel))


def loop_patch_ssim(a, b, data_range=1.0, patch=11):
    k1, k2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    vals = []
    c, h, w = a.shape
    for ch in range(c):
        for py in range(h // patch):
            for px in range(w // patch):
                x = a[ch, py * patch:(py + 1) * patch, px * patch:(px + 1) * patch].ravel()
                y = b[ch, py * patch:(py + 1) * patch, px * patch:(px + 1) * patch].ravel()
                mx, my = x.mean(), y.mean()
                vx = ((x - mx) ** 2).mean()
                vy = ((y - my) ** 2).mean()
                cxy = ((x - mx) * (y - my)).mean()
                vals.append((2 * mx * my + k1) * (2 * cxy + k2)
                            / ((mx ** 2 + my ** 2 + k1) * (vx + vy + k2)))
    return float(np.mean(vals))
