"""Independent oracles shared by the unit tests and the acceptance suite."""

import numpy as np
import torch

from openset_rff import nn_core as nc

H = 1e-3


def rel_err(a, b):
    a, b = np.asarray(a, np.float64).ravel(), np.asarray(b, np.float64).ravel()
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


def fd_grad(f, x, h=H):
    """Central differences of scalar f at every entry of float64 array x."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        up = f(x)
        x[i] = old - h
        down = f(x)
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


LAYER_CASES = [
    ("dense", [nc.Dense(4)], (5,)),
    ("conv", [nc.Conv2D(3, (3, 2), (1, 1))], (2, 8, 2)),
    ("conv_stride", [nc.Conv2D(3, (5, 1), (2, 1))], (2, 9, 1)),
    ("convT", [nc.ConvT2D(2, (3, 1), (1, 1))], (3, 6, 1)),
    ("convT_stride_wide", [nc.ConvT2D(2, (5, 2), (2, 1))], (3, 5, 1)),
    ("relu", [nc.ReLU()], (6,)),
    ("sigmoid", [nc.Sigmoid()], (6,)),
    ("softmax", [nc.Softmax()], (6,)),
    ("flatten", [nc.Flatten()], (2, 3, 2)),
    ("reshape", [nc.Reshape((3, 4))], (12,)),
    ("residual", [nc.ResidualBlock(2)], (2, 7, 2)),
    ("batchnormfree", [nc.BatchNormFree()], (4,)),
]


LOSS_CASES = [
    ("mse", nc.mse),
    ("bce", nc.bce),
    ("cross_entropy", nc.cross_entropy),
    ("bce_logits", lambda p, t: nc.bce(p, t, logits=True)),
    ("ce_logits", lambda p, t: nc.cross_entropy(p, t, logits=True)),
    ("gaussian_kl_mu", lambda p, t: nc.gaussian_kl(p, t)),
    ("gaussian_kl_logvar", lambda p, t: nc.gaussian_kl(t, p)),
]


def layer_gradient_errors(layers, shape, seed=1):
    """Relative FD error of d(sum w*out)/dx and of every parameter gradient, as {name: err}."""
    net = nc.Network(layers, shape, seed=seed).double()
    rng = np.random.default_rng(seed + 1)
    x = rng.normal(size=(2, *shape))
    w = torch.as_tensor(rng.normal(size=(2, *net.output_shape)))
    loss_fn = lambda out: torch.sum(out * w)

    pgrads, gx = nc.backward(net, x, loss_fn)
    f_x = lambda xv: float(loss_fn(nc.forward(net, xv)))
    errs = {"input": rel_err(gx.numpy(), fd_grad(f_x, x))}
    for pname, p in net.named_parameters():
        base = p.detach().clone()

        def f_p(v):
            with torch.no_grad():
                p.copy_(torch.as_tensor(v))
            return f_x(x)

        numeric = fd_grad(f_p, base.numpy())
        with torch.no_grad():
            p.copy_(base)
        errs[pname] = rel_err(pgrads[pname].numpy(), numeric)
    return errs


def loss_gradient_error(name, fn, seed=3):
    rng = np.random.default_rng(seed)
    if name in ("bce", "cross_entropy"):
        pred = rng.uniform(0.1, 0.9, size=(3, 4))
    else:
        pred = rng.normal(size=(3, 4))
    target = np.eye(4)[rng.integers(0, 4, 3)] if "kl" not in name else rng.normal(size=(3, 4))
    pred_t = torch.as_tensor(pred).requires_grad_(True)
    fn(pred_t, torch.as_tensor(target)).backward()
    numeric = fd_grad(lambda v: float(fn(torch.as_tensor(v), torch.as_tensor(target))), pred)
    return rel_err(pred_t.grad.numpy(), numeric)


def composition_gradient_error(ae, judge, x, lam=1.0, seed=1):
    """d/dz of ||E(x) - z|| + lam * CE(outlier, C(D(z))) against central differences, float64."""
    import copy

    from openset_rff import latent_opt

    ae = copy.deepcopy(ae).double()
    judge = copy.deepcopy(judge).double()
    x = torch.as_tensor(np.asarray(x)[:1], dtype=torch.float64).unsqueeze(1)
    with torch.no_grad():
        ex = ae.encode_raw(x)[:, : ae.latent_dim]
    z0 = ex + 0.3 * torch.as_tensor(np.random.default_rng(seed).normal(size=ex.shape))

    def f(z):
        with torch.no_grad():
            prox, ce = latent_opt.objective_terms(z, ex, ae, judge, lam)
        return float((prox + ce).sum())

    z = z0.clone().requires_grad_(True)
    prox, ce = latent_opt.objective_terms(z, ex, ae, judge, lam)
    (g,) = torch.autograd.grad((prox + ce).sum(), z)
    # decoder + judge hold ~27k ReLUs; a 1e-3 step straddles a kink on most coordinates
    numeric = fd_grad(lambda v: f(torch.as_tensor(v)), z0.numpy(), h=1e-5)
    return rel_err(g.numpy(), numeric)


def random_cloud(rng, m, n):
    kind = rng.integers(3)
    if kind == 0:
        Z = rng.normal(size=(m, n))
    elif kind == 1:
        Z = rng.uniform(-1, 1, size=(m, n))
    else:
        Z = rng.standard_t(3, size=(m, n))
    # well-conditioned mixing: a near-flat cloud would be dominated by the 1e-9 I regularizer
    mix = rng.normal(size=(n, n)) + 2 * np.sqrt(n) * np.eye(n)
    return Z @ mix + rng.normal(scale=3, size=n)


def tightest_log_volume(A, c, Z):
    """log volume of {z : ||A (z - c)|| <= s}, s the smallest scale containing Z; vectorized over A, c."""
    norms = np.linalg.norm(np.einsum("kij,kmj->kmi", A, Z[None] - c[:, None, :]), axis=2)
    s = norms.max(axis=1)
    return -np.linalg.slogdet(A)[1] + A.shape[1] * np.log(s)


def oracle_log_volume(Z, e, rng, candidates=10_000):
    """Best log volume among random containing ellipsoids plus local perturbations of e."""
    n = Z.shape[1]
    k = candidates // 2
    # global: random orientation, scales and centre near the cloud
    G = rng.normal(size=(k, n, n))
    Q, _ = np.linalg.qr(G)
    scales = np.exp(rng.uniform(-2, 2, size=(k, n))) / Z.std(axis=0).mean()
    A_glob = np.einsum("kij,kj,klj->kil", Q, scales, Q)
    c_glob = Z.mean(axis=0) + rng.normal(scale=0.3, size=(k, n)) * Z.std(axis=0)
    # local: perturb the fitted ellipsoid
    eps = np.exp(rng.uniform(np.log(1e-4), np.log(1e-1), size=(k, 1, 1)))
    P = rng.normal(size=(k, n, n))
    A_loc = e.A[None] + eps * np.abs(e.A).max() * (P + P.transpose(0, 2, 1)) / 2
    ok = np.linalg.eigvalsh(A_loc).min(axis=1) > 1e-9
    c_loc = e.center[None] + eps[:, :, 0] * rng.normal(size=(k, n)) * Z.std(axis=0)
    vols = np.concatenate([tightest_log_volume(A_glob, c_glob, Z), tightest_log_volume(A_loc[ok], c_loc[ok], Z)])
    return vols.min()
