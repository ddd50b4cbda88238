"""Built-in verification checks for the `selftest` CLI subcommand.

Every check re-derives its expected values from first principles (naive
quadruple-sum transforms, finite differences, brute-force convolution), so a
passing selftest means the fast paths agree with independent oracles on this
machine. Runs in seconds on tiny random instances; the pytest suite covers
the same ground more thoroughly.
"""

from __future__ import annotations

import numpy as np

from . import attacks, frequency, model, tensor_ops
from .frequency import DctMode
from .harness import Dataset, load_idx, save_idx_images, save_idx_labels


def naive_dct2(x: np.ndarray, mode: DctMode) -> np.ndarray:
    """Direct quadruple-sum 2-D DCT: per-axis scale times cosine sums."""
    h, w = x.shape
    out = np.empty((h, w))
    kk = 2.0 * np.arange(h) + 1.0
    mm = 2.0 * np.arange(w) + 1.0
    for u in range(h):
        for v in range(w):
            cos_k = np.cos(np.pi * u * kk / (2.0 * h))
            cos_m = np.cos(np.pi * v * mm / (2.0 * w))
            out[u, v] = float(np.sum(x * np.outer(cos_k, cos_m)))
            if mode is DctMode.SCALED:
                out[u, v] *= (2.0 * h) ** -0.25 * (2.0 * w) ** -0.25
            else:
                su = np.sqrt((1.0 if u == 0 else 2.0) / h)
                sv = np.sqrt((1.0 if v == 0 else 2.0) / w)
                out[u, v] *= su * sv
    return out


def brute_conv2d(x: np.ndarray, kernel: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Quadruple-loop cross-correlation oracle for [C, H, W] x [K, C, kh, kw]."""
    c, h, w = x.shape
    k, _, kh, kw = kernel.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((k, oh, ow))
    for f in range(k):
        for i in range(oh):
            for j in range(ow):
                patch = xp[:, i * stride : i * stride + kh, j * stride : j * stride + kw]
                out[f, i, j] = float(np.sum(patch * kernel[f]))
    return out


def numeric_input_gradient(net, x: np.ndarray, y: int, coords, h: float = 1e-5) -> dict:
    """Central finite differences of the loss at selected pixel coordinates."""
    grads = {}
    for coord in coords:
        xp = x.copy()
        xp[coord] += h
        up = model.loss(model.forward(net, xp), y)
        xm = x.copy()
        xm[coord] -= h
        down = model.loss(model.forward(net, xm), y)
        grads[coord] = (up - down) / (2.0 * h)
    return grads


def _tiny_cnn(rng, size=12):
    return model.build_cnn((1, size, size), 10, rng)


def _tiny_data(rng, n, size=12):
    pixels = rng.uniform(0.0, 1.0, (n, 1, size, size))
    labels = rng.integers(0, 10, n)
    return pixels, labels


def _check_dct_oracle(rng):
    for _ in range(40):
        h, w = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        x = rng.normal(size=(h, w))
        for mode in DctMode:
            got = frequency.dct2(x, mode)
            want = naive_dct2(x, mode)
            if np.abs(got - want).max() > 1e-8:
                return False
    return True


def _check_round_trip(rng):
    for _ in range(30):
        x = rng.uniform(0.0, 1.0, (1, 28, 28))
        for mode in DctMode:
            back = frequency.idct2(frequency.dct2(x, mode), mode)
            if np.abs(back - x).max() > 1e-8:
                return False
    return True


def _check_pullback(rng):
    for _ in range(20):
        g = rng.normal(size=(1, 8, 8))
        if not np.array_equal(frequency.frequency_pullback(g, DctMode.ORTHO), g):
            return False
    # The scaled basis must genuinely disagree with the identity somewhere.
    found = any(
        np.any(np.sign(frequency.frequency_pullback(g, DctMode.SCALED)) != np.sign(g))
        for g in (rng.normal(size=(1, 8, 8)) for _ in range(1000))
    )
    return found


def _check_gradients(rng):
    for build in (model.build_mlp, model.build_cnn):
        net = build((1, 12, 12), 10, rng)
        x = rng.uniform(0.1, 0.9, (1, 12, 12))
        y = int(rng.integers(0, 10))
        analytic = model.input_gradient(net, x, y)
        coords = [tuple(int(v) for v in (0, rng.integers(0, 12), rng.integers(0, 12))) for _ in range(20)]
        numeric = numeric_input_gradient(net, x, y, coords)
        for coord, num in numeric.items():
            ana = analytic[coord]
            if abs(ana - num) > 1e-4 * max(abs(ana), abs(num), 1e-8):
                return False
    return True


def _check_conv_oracle(rng):
    for _ in range(10):
        x = rng.normal(size=(2, 6, 6))
        kern = rng.normal(size=(3, 2, 3, 3))
        got = tensor_ops.conv2d(x, kern, stride=1, padding=1)
        if np.abs(got - brute_conv2d(x, kern, 1, 1)).max() > 1e-10:
            return False
    return True


def _check_budget(rng):
    net = _tiny_cnn(rng)
    pixels, labels = _tiny_data(rng, 4)
    for _ in range(15):
        cfg = attacks.AttackConfig(
            method=attacks.METHODS[int(rng.integers(0, len(attacks.METHODS)))],
            eps=float(rng.choice([1 / 255, 2 / 255, 8 / 255])),
            steps=int(rng.choice([1, 5, 10])),
            fsa=bool(rng.integers(0, 2)),
            seed=int(rng.integers(0, 1000)),
        )
        out = attacks.attack_batch(net, pixels, labels, cfg)
        if out.linf.max() > cfg.eps + 1e-9:
            return False
        if out.adversarial.min() < 0.0 or out.adversarial.max() > 1.0:
            return False
    return True


def _check_degeneracy(rng):
    net = _tiny_cnn(rng)
    pixels, labels = _tiny_data(rng, 3)
    for method in attacks.METHODS:
        base = attacks.attack_batch(
            net, pixels, labels, attacks.AttackConfig(method, eps=8 / 255, steps=3, fsa=False, seed=7)
        )
        wrapped = attacks.attack_batch(
            net,
            pixels,
            labels,
            attacks.AttackConfig(method, eps=8 / 255, steps=3, fsa=True, dct_mode=DctMode.ORTHO, seed=7),
        )
        if not np.array_equal(base.adversarial, wrapped.adversarial):
            return False
        if wrapped.mask_fractions.min() != 1.0:
            return False
    return True


def _check_reductions(rng):
    net = _tiny_cnn(rng)
    pixels, labels = _tiny_data(rng, 3)

    def run(**kw):
        cfg = attacks.AttackConfig(eps=8 / 255, steps=3, seed=3, **kw)
        return attacks.attack_batch(net, pixels, labels, cfg, record_trace=True).trace

    want = run(method="IFGSM")
    variants = [
        run(method="MIFGSM", mi_decay=0.0),
        run(method="DIFGSM", di_prob=0.0),
        run(method="TIFGSM", ti_kernel_size=1),
        run(method="PGD", pgd_random_start=False),
    ]
    return all(all(np.array_equal(a, b) for a, b in zip(want, trace)) for trace in variants)


def _check_weights_io(rng, tmpdir):
    import os

    net = _tiny_cnn(rng)
    path = os.path.join(tmpdir, "selftest.fsaw")
    model.save_weights(net, path)
    loaded = model.load_weights(path)
    x = rng.uniform(0.0, 1.0, (1, 12, 12))
    return np.array_equal(model.forward(net, x), model.forward(loaded, x))


def _check_idx_io(rng, tmpdir):
    import os

    images = rng.integers(0, 256, (12, 9, 9)).astype(np.uint8)
    labels = rng.integers(0, 10, 12).astype(np.int64)
    ip, lp = os.path.join(tmpdir, "im.idx"), os.path.join(tmpdir, "lb.idx")
    save_idx_images(ip, images)
    save_idx_labels(lp, labels)
    ds = load_idx(ip, lp)
    return (
        isinstance(ds, Dataset)
        and np.array_equal(np.round(ds.pixels[:, 0] * 255.0).astype(np.uint8), images)
        and np.array_equal(ds.labels, labels)
    )


def run(stream=None) -> bool:
    """Run all checks, print one line each, and return overall success."""
    import sys
    import tempfile

    stream = stream or sys.stdout
    rng = np.random.default_rng(20240817)
    ok = True
    with tempfile.TemporaryDirectory() as tmpdir:
        checks = [
            ("dct2 matches naive quadruple-sum oracle", lambda: _check_dct_oracle(rng)),
            ("idct2(dct2(x)) round trip <= 1e-8", lambda: _check_round_trip(rng)),
            ("pullback: ortho identity, scaled non-degenerate", lambda: _check_pullback(rng)),
            ("conv2d matches brute-force oracle", lambda: _check_conv_oracle(rng)),
            ("input gradients match finite differences", lambda: _check_gradients(rng)),
            ("attack budget and [0,1] range hold", lambda: _check_budget(rng)),
            ("ortho-mode wrapper reproduces base attacks exactly", lambda: _check_degeneracy(rng)),
            ("parameter reductions collapse to IFGSM exactly", lambda: _check_reductions(rng)),
            ("weight files round-trip bit-exactly", lambda: _check_weights_io(rng, tmpdir)),
            ("idx files round-trip", lambda: _check_idx_io(rng, tmpdir)),
        ]
        for name, fn in checks:
            passed = bool(fn())
            ok = ok and passed
            print(f"[{'ok' if passed else 'FAIL'}] {name}", file=stream)
    return ok
