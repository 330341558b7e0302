import torch


def finite_difference_grads(fn, params, h=1e-6):
    """Central differences of the scalar ``fn()`` with respect to every entry of ``params``."""
    grads = []
    with torch.no_grad():
        for p in params:
            g = torch.zeros_like(p)
            flat, gflat = p.view(-1), g.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                up = float(fn())
                flat[i] = orig - h
                down = float(fn())
                flat[i] = orig
                gflat[i] = (up - down) / (2 * h)
            grads.append(g)
    return grads


def gradient_relative_error(fn, params, h=1e-6):
    analytic = torch.autograd.grad(fn(), params, allow_unused=True)
    analytic = [torch.zeros_like(p) if a is None else a for a, p in zip(analytic, params)]
    numeric = finite_difference_grads(fn, params, h)
    a = torch.cat([g.reshape(-1) for g in analytic])
    n = torch.cat([g.reshape(-1) for g in numeric])
    return float((a - n).norm() / max(float(n.norm()), 1e-12))


def assert_grad_matches_fd(fn, params, rtol=1e-4, h=1e-6):
    err = gradient_relative_error(fn, params, h)
    assert err <= rtol, f"gradient relative error {err:.3e} > {rtol:g}"


def tiny_config(**kw):
    """A float64 model small enough for finite-difference checks (< 2k parameters)."""
    from mhkt.trainer import TrainConfig

    base = dict(
        image_size=32, image_channels=(2, 2, 2, 2), gnn_hidden=4, gnn_layers=1, bottleneck_hidden=4,
        z_dim=3, common_dim=4, batch_size=6, epochs=1, steps_per_epoch=2, dtype="float64",
    )
    base.update(kw)
    return TrainConfig(**base)


def tiny_arrays(K=3, n_source=4, n_target=3, n_test=10, size=32, seed=0):
    """Random scattering-center sets and images with balanced labels."""
    import numpy as np

    from mhkt.ascsim import ScatteringCenter

    rng = np.random.default_rng(seed)
    centers = [
        [ScatteringCenter(float(rng.uniform(0.5, 2)), x=float(rng.normal()), y=float(rng.normal()), z=float(rng.normal()))
         for _ in range(int(rng.integers(3, 6)))]
        for _ in range(K * n_source)
    ]
    ys = np.repeat(np.arange(K), n_source)
    yt = np.repeat(np.arange(K), n_target)
    yv = np.repeat(np.arange(K), n_test)
    xt = rng.random((len(yt), size, size))
    xv = rng.random((len(yv), size, size))
    return centers, ys, xt, yt, xv, yv


def tiny_data(cfg, **kw):
    from mhkt.trainer import prepare_data

    centers, ys, xt, yt, xv, yv = tiny_arrays(**kw)
    if not cfg.uses_source:
        centers, ys = None, None
    return prepare_data(cfg, centers, ys, xt, yt, xv, yv, n_classes=int(yt.max()) + 1)
