"""Variational Bayesian multilayer perceptron, built from scratch on numpy.

Every weight carries a diagonal Gaussian posterior parameterized as
(mu, rho) with std = softplus(rho).  Training maximizes the evidence
lower bound by stochastic gradient descent through the reparameterization
trick; gradients are computed analytically (no autodiff dependency), which
is what makes the finite-difference gradient audit possible.

A zero-variance mode collapses every posterior to its mean, giving the
deterministic point-estimate network used by the non-stochastic baseline
controller; that mode trains on plain squared loss.
"""

import json
from dataclasses import dataclass

import numpy as np


def softplus(z):
    # log1p(exp(z)) computed stably for large |z|
    return np.logaddexp(0.0, z)


def sigmoid(z):
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "identity":
        return z
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name, z, a):
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        return (z > 0.0).astype(float)
    if name == "identity":
        return np.ones_like(z)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class VariationalLayer:
    """One dense layer with Gaussian posteriors over weights and biases."""

    mu: np.ndarray        # (out, in)
    rho: np.ndarray       # (out, in); std = softplus(rho)
    bias_mu: np.ndarray   # (out,)
    bias_rho: np.ndarray  # (out,)
    activation: str = "tanh"

    @classmethod
    def init(cls, in_dim, out_dim, activation, rng, mu_std=0.1, rho_init=-3.0):
        return cls(mu=rng.normal(0.0, mu_std, size=(out_dim, in_dim)),
                   rho=np.full((out_dim, in_dim), rho_init, dtype=float),
                   bias_mu=rng.normal(0.0, mu_std, size=out_dim),
                   bias_rho=np.full(out_dim, rho_init, dtype=float),
                   activation=activation)

    @property
    def in_dim(self):
        return self.mu.shape[1]

    @property
    def out_dim(self):
        return self.mu.shape[0]

    def std(self):
        return softplus(self.rho)

    def bias_std(self):
        return softplus(self.bias_rho)

    def copy(self):
        return VariationalLayer(self.mu.copy(), self.rho.copy(),
                                self.bias_mu.copy(), self.bias_rho.copy(),
                                self.activation)


class BayesianNetwork:
    """MLP with variational Gaussian weights.

    The feature vector is the post-activation output of the penultimate
    layer; the final layer maps features to the network output and is
    excluded from feature extraction.
    """

    def __init__(self, layers, prior_std=1.0, likelihood_std=0.1,
                 zero_variance=False):
        if len(layers) < 2:
            raise ValueError("need at least one hidden and one output layer")
        for a, b in zip(layers[:-1], layers[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError("layer dimensions do not chain")
        if prior_std <= 0 or likelihood_std <= 0:
            raise ValueError("prior_std and likelihood_std must be positive")
        self.layers = layers
        self.prior_std = float(prior_std)
        self.likelihood_std = float(likelihood_std)
        self.zero_variance = bool(zero_variance)

    @classmethod
    def build(cls, in_dim, hidden, out_dim, rng, activation="tanh",
              prior_std=1.0, likelihood_std=0.1, zero_variance=False,
              mu_std=0.1, rho_init=-3.0):
        dims = [in_dim] + list(hidden) + [out_dim]
        layers = []
        for i in range(len(dims) - 1):
            act = activation if i < len(dims) - 2 else "identity"
            layers.append(VariationalLayer.init(dims[i], dims[i + 1], act, rng,
                                                mu_std=mu_std, rho_init=rho_init))
        return cls(layers, prior_std, likelihood_std, zero_variance)

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def out_dim(self):
        return self.layers[-1].out_dim

    @property
    def feature_dim(self):
        return self.layers[-2].out_dim

    def copy(self, zero_variance=None):
        zv = self.zero_variance if zero_variance is None else zero_variance
        return BayesianNetwork([l.copy() for l in self.layers],
                               self.prior_std, self.likelihood_std, zv)


def sample_weights(net, rng):
    """One posterior realization [(W, b), ...] via reparameterization."""
    theta = []
    for layer in net.layers:
        if net.zero_variance:
            theta.append((layer.mu.copy(), layer.bias_mu.copy()))
        else:
            w = layer.mu + layer.std() * rng.standard_normal(layer.mu.shape)
            b = layer.bias_mu + layer.bias_std() * rng.standard_normal(layer.bias_mu.shape)
            theta.append((w, b))
    return theta


def sample_weights_batch(net, rng, n_draws):
    """n_draws posterior realizations stacked on a leading axis."""
    theta = []
    for layer in net.layers:
        if net.zero_variance:
            w = np.broadcast_to(layer.mu, (n_draws,) + layer.mu.shape)
            b = np.broadcast_to(layer.bias_mu, (n_draws,) + layer.bias_mu.shape)
        else:
            w = layer.mu + layer.std() * rng.standard_normal((n_draws,) + layer.mu.shape)
            b = layer.bias_mu + layer.bias_std() * rng.standard_normal(
                (n_draws,) + layer.bias_mu.shape)
        theta.append((w, b))
    return theta


def forward(net, theta, x):
    """Deterministic pass under a fixed weight draw: (features, output)."""
    a = np.asarray(x, dtype=float)
    feats = None
    for i, (layer, (w, b)) in enumerate(zip(net.layers, theta)):
        z = a @ w.T + b
        a = _act(layer.activation, z)
        if i == len(net.layers) - 2:
            feats = a
    return feats, a


def forward_batch(net, theta_batch, x):
    """Pass one input through n_draws weight realizations at once.

    Returns (features (N, k), outputs (N, m)).
    """
    x = np.asarray(x, dtype=float)
    a = None
    feats = None
    for i, (layer, (w, b)) in enumerate(zip(net.layers, theta_batch)):
        if a is None:
            z = np.einsum("noi,i->no", w, x) + b
        else:
            z = np.einsum("noi,ni->no", w, a) + b
        a = _act(layer.activation, z)
        if i == len(net.layers) - 2:
            feats = a
    return feats, a


def feature_mean(net, x, n_draws, rng):
    """Empirical posterior mean of the feature vector at x."""
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    theta = sample_weights_batch(net, rng, n_draws)
    feats, _ = forward_batch(net, theta, x)
    return feats.mean(axis=0)


@dataclass
class FeatureStats:
    """Monte-Carlo feature statistics with the variance split."""

    mean: np.ndarray        # (k,)
    covariance: np.ndarray  # (k, k), empirical over draws
    epistemic: np.ndarray   # (k,) per-feature variance over weight draws
    aleatoric: np.ndarray   # (k,) likelihood noise floor, state-independent

    @property
    def total_variance(self):
        return self.epistemic + self.aleatoric


def feature_stats(net, x, n_draws, rng):
    if n_draws < 2:
        raise ValueError("need at least 2 draws for a variance estimate")
    theta = sample_weights_batch(net, rng, n_draws)
    feats, _ = forward_batch(net, theta, x)
    mean = feats.mean(axis=0)
    centered = feats - mean
    cov = centered.T @ centered / (n_draws - 1)
    cov = 0.5 * (cov + cov.T)
    epistemic = np.diag(cov).copy()
    aleatoric = np.full(net.feature_dim, net.likelihood_std ** 2)
    return FeatureStats(mean, cov, epistemic, aleatoric)


def kl_divergence(net):
    """Closed-form KL from the posterior to the N(0, prior_std^2) prior."""
    p2 = net.prior_std ** 2
    total = 0.0
    for layer in net.layers:
        for mu, std in ((layer.mu, layer.std()),
                        (layer.bias_mu, layer.bias_std())):
            v = std ** 2
            total += 0.5 * np.sum(v / p2 + mu ** 2 / p2 - 1.0
                                  - np.log(v) + np.log(p2))
    return float(total)


def _kl_grads(net):
    """d KL / d(mu, rho) per layer, matching kl_divergence."""
    p2 = net.prior_std ** 2
    grads = []
    for layer in net.layers:
        std, bstd = layer.std(), layer.bias_std()
        d_mu = layer.mu / p2
        d_std = std / p2 - 1.0 / std
        d_rho = d_std * sigmoid(layer.rho)
        d_bmu = layer.bias_mu / p2
        d_brho = (bstd / p2 - 1.0 / bstd) * sigmoid(layer.bias_rho)
        grads.append((d_mu, d_rho, d_bmu, d_brho))
    return grads


def draw_noise(net, rng):
    """One set of standard-normal reparameterization draws per layer."""
    return [(rng.standard_normal(l.mu.shape), rng.standard_normal(l.bias_mu.shape))
            for l in net.layers]


def _forward_cache(net, eps, X):
    """Forward a batch under one frozen noise draw, keeping activations."""
    acts = [np.asarray(X, dtype=float)]
    zs = []
    thetas = []
    for layer, (ew, eb) in zip(net.layers, eps):
        if net.zero_variance:
            w, b = layer.mu, layer.bias_mu
        else:
            w = layer.mu + layer.std() * ew
            b = layer.bias_mu + layer.bias_std() * eb
        z = acts[-1] @ w.T + b
        zs.append(z)
        acts.append(_act(layer.activation, z))
        thetas.append((w, b))
    return acts, zs, thetas


def gaussian_nll(pred, y, std):
    """Negative log-likelihood of y under N(pred, std^2), summed over batch."""
    resid = (pred - y) / std
    return float(0.5 * np.sum(resid ** 2)
                 + pred.size * np.log(std * np.sqrt(2.0 * np.pi)))


def elbo_loss(net, X, Y, n_samples, rng=None, kl_weight=1.0, eps_draws=None):
    """Negative ELBO: MC-averaged Gaussian NLL plus weighted KL.

    eps_draws, when given, freezes the reparameterization noise (a list of
    n_samples draw-sets); otherwise fresh noise comes from rng.
    """
    loss, _ = elbo_loss_and_grads(net, X, Y, n_samples, rng=rng,
                                  kl_weight=kl_weight, eps_draws=eps_draws,
                                  want_grads=False)
    return loss


def elbo_loss_and_grads(net, X, Y, n_samples, rng=None, kl_weight=1.0,
                        eps_draws=None, want_grads=True, squared_loss=False):
    """Loss and analytic gradients w.r.t. every (mu, rho, bias_mu, bias_rho).

    squared_loss swaps the Gaussian NLL for 0.5*sum((pred-y)^2) and drops
    the KL term: the training objective of the deterministic baseline.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    if n_samples < 1:
        raise ValueError("need at least one posterior draw")
    if eps_draws is None:
        if net.zero_variance:
            eps_draws = [[(None, None)] * len(net.layers)] * n_samples
        else:
            eps_draws = [draw_noise(net, rng) for _ in range(n_samples)]
    std_n = net.likelihood_std
    L = len(net.layers)
    grads = [[np.zeros_like(l.mu), np.zeros_like(l.rho),
              np.zeros_like(l.bias_mu), np.zeros_like(l.bias_rho)]
             for l in net.layers] if want_grads else None
    loss = 0.0
    for eps in eps_draws:
        acts, zs, thetas = _forward_cache(net, eps, X)
        pred = acts[-1]
        if squared_loss:
            loss += 0.5 * np.sum((pred - Y) ** 2)
            delta = pred - Y
        else:
            loss += gaussian_nll(pred, Y, std_n)
            delta = (pred - Y) / std_n ** 2
        if not want_grads:
            continue
        for i in range(L - 1, -1, -1):
            layer = net.layers[i]
            delta = delta * _act_grad(layer.activation, zs[i], acts[i + 1])
            dW = delta.T @ acts[i]
            db = delta.sum(axis=0)
            g = grads[i]
            g[0] += dW
            g[2] += db
            if not net.zero_variance:
                ew, eb = eps[i]
                g[1] += dW * ew * sigmoid(layer.rho)
                g[3] += db * eb * sigmoid(layer.bias_rho)
            if i > 0:
                delta = delta @ thetas[i][0]
    loss /= n_samples
    if want_grads:
        for g in grads:
            for arr in g:
                arr /= n_samples
    if not squared_loss and kl_weight != 0.0:
        loss += kl_weight * kl_divergence(net)
        if want_grads and not net.zero_variance:
            for g, (d_mu, d_rho, d_bmu, d_brho) in zip(grads, _kl_grads(net)):
                g[0] += kl_weight * d_mu
                g[1] += kl_weight * d_rho
                g[2] += kl_weight * d_bmu
                g[3] += kl_weight * d_brho
    return float(loss), grads


class NetworkVersion:
    """Immutable published snapshot of a network, tagged by switching index."""

    def __init__(self, net, sigma):
        self.net = net.copy()
        for layer in self.net.layers:
            for arr in (layer.mu, layer.rho, layer.bias_mu, layer.bias_rho):
                arr.setflags(write=False)
        self.sigma = int(sigma)

    def sample_features(self, x, rng):
        theta = sample_weights_batch(self.net, rng, 1)
        feats, _ = forward_batch(self.net, theta, x)
        return feats[0]

    def feature_draws(self, x, n_draws, rng):
        theta = sample_weights_batch(self.net, rng, n_draws)
        feats, _ = forward_batch(self.net, theta, x)
        return feats

    def feature_mean(self, x, n_draws, rng):
        return self.feature_draws(x, n_draws, rng).mean(axis=0)

    def to_dict(self):
        return {
            "sigma": self.sigma,
            "prior_std": self.net.prior_std,
            "likelihood_std": self.net.likelihood_std,
            "zero_variance": self.net.zero_variance,
            "layers": [{
                "activation": l.activation,
                "in_dim": l.in_dim,
                "out_dim": l.out_dim,
                "mu": l.mu.tolist(),
                "rho": l.rho.tolist(),
                "bias_mu": l.bias_mu.tolist(),
                "bias_rho": l.bias_rho.tolist(),
            } for l in self.net.layers],
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_dict(cls, d):
        layers = [VariationalLayer(mu=np.array(l["mu"], dtype=float),
                                   rho=np.array(l["rho"], dtype=float),
                                   bias_mu=np.array(l["bias_mu"], dtype=float),
                                   bias_rho=np.array(l["bias_rho"], dtype=float),
                                   activation=l["activation"])
                  for l in d["layers"]]
        net = BayesianNetwork(layers, d["prior_std"], d["likelihood_std"],
                              d["zero_variance"])
        return cls(net, d["sigma"])

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


class NonFiniteLoss(RuntimeError):
    """Training hit a non-finite loss; parameters were rolled back."""


def train(net, snapshot, epochs, batch_size, learning_rate, rng,
          momentum=0.9, n_samples=2, sigma=0, kl_weight=None,
          squared_loss=None, loss_history=None, grad_clip=50.0,
          final_lr_fraction=0.1):
    """Bayes-by-backprop SGD over an immutable buffer snapshot.

    Mutates `net` in place and returns a frozen NetworkVersion with the
    switching index incremented.  kl_weight defaults to 1/M for M snapshot
    points.  grad_clip bounds the global gradient norm per minibatch; the
    1/likelihood_std^2 scale of the Gaussian NLL makes raw SGD stiff.  The
    learning rate decays exponentially across epochs down to
    final_lr_fraction of its initial value (pass 1.0 for a constant rate).
    On a non-finite loss the epoch is aborted, the last finite parameters
    restored, and NonFiniteLoss raised.
    """
    X, Y = snapshot
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    M = X.shape[0]
    if M < batch_size:
        raise ValueError(f"buffer has {M} points, need at least {batch_size}")
    if squared_loss is None:
        squared_loss = net.zero_variance
    if kl_weight is None:
        kl_weight = 1.0 / M
    params = []
    for layer in net.layers:
        params += [layer.mu, layer.rho, layer.bias_mu, layer.bias_rho]
    velocity = [np.zeros_like(p) for p in params]
    backup = [p.copy() for p in params]
    n_epochs = max(0, int(epochs))
    decay = final_lr_fraction ** (1.0 / n_epochs) if n_epochs else 1.0
    lr = learning_rate
    for _ in range(n_epochs):
        order = rng.permutation(M)
        epoch_ok = True
        for start in range(0, M - batch_size + 1, batch_size):
            idx = order[start:start + batch_size]
            loss, grads = elbo_loss_and_grads(
                net, X[idx], Y[idx], n_samples, rng=rng,
                kl_weight=kl_weight, squared_loss=squared_loss)
            if not np.isfinite(loss):
                epoch_ok = False
                break
            # descend on the per-point batch average so the step size is
            # insensitive to batch_size
            flat = [g / batch_size for layer_g in grads for g in layer_g]
            if grad_clip is not None:
                gnorm = np.sqrt(sum(float(np.sum(g * g)) for g in flat))
                if gnorm > grad_clip:
                    scale = grad_clip / gnorm
                    flat = [g * scale for g in flat]
            for p, v, g in zip(params, velocity, flat):
                v *= momentum
                v -= lr * g
                p += v
            if loss_history is not None:
                loss_history.append(loss)
        if not epoch_ok or not all(np.all(np.isfinite(p)) for p in params):
            for p, b in zip(params, backup):
                p[:] = b
            raise NonFiniteLoss(
                "non-finite training loss; restored last finite parameters")
        for b, p in zip(backup, params):
            b[:] = p
        lr *= decay
    return NetworkVersion(net, sigma + 1)
